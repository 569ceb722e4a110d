"""
Ground-truth plant: single-track chassis, steering linkage and an
undisclosed-style steering servo, integrated with classical RK4 and driven in
closed loop along a reference path with PRBS added to the steering command.

State ordering for the plant vector is ``(v_x, v_y, r, delta, delta_dot,
T_servo)``.
"""
import math
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from .errors import DomainError, ExperimentFailure, InvalidArgumentError
from .signals import Dataset, prbs

SIGN_SMOOTHING = 1e-3   # rad, smoothing of sign(delta) inside the integrator
RATE_SMOOTHING = 1e-2   # rad/s, smoothing of the tire/pavement friction direction


@dataclass(frozen=True)
class ChassisParams:
    m: float = 1580.0
    I_z: float = 2130.0
    l_f: float = 1.19
    l_r: float = 1.51
    c_f: float = 65e3
    c_r: float = 72e3

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise InvalidArgumentError(f"chassis parameter {f.name} must be positive")

    @property
    def wheelbase(self):
        return self.l_f + self.l_r


@dataclass(frozen=True)
class SteeringParams:
    theta_delta: float = 2.0
    d_delta: float = 40.0
    i_l: float = 20.0
    F_Sr: float = 200.0
    trail_n0: float = 0.04
    trail_delta_crit: float = 0.25
    T_B_max: float = 30.0
    v_B: float = 2.0
    # floor of the trail law; the linear law is used unclamped when -inf
    trail_min: float = -0.008
    # rack end stop: stiff spring beyond |delta| > delta_max
    delta_max: float = 0.6
    k_stop: float = 5000.0

    def __post_init__(self):
        for name in ("theta_delta", "d_delta", "i_l", "trail_delta_crit", "v_B", "delta_max"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"steering parameter {name} must be positive")
        for name in ("F_Sr", "T_B_max", "trail_n0", "k_stop"):
            if getattr(self, name) < 0:
                raise InvalidArgumentError(f"steering parameter {name} must be non-negative")


@dataclass(frozen=True)
class ServoParams:
    dz_low: float = -0.13
    dz_high: float = 0.17
    gain: float = 150.0
    tau_servo: float = 0.05
    T_max: float = 150.0
    # centering feedback inside the assist unit [N m/rad]
    k_return: float = 250.0

    def __post_init__(self):
        if not self.dz_low <= 0.0 <= self.dz_high:
            raise InvalidArgumentError("servo dead-zone must satisfy dz_low <= 0 <= dz_high")
        for name in ("gain", "tau_servo", "T_max"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"servo parameter {name} must be positive")
        if self.k_return < 0:
            raise InvalidArgumentError("servo k_return must be non-negative")


@dataclass(frozen=True)
class VehicleParams:
    chassis: ChassisParams = field(default_factory=ChassisParams)
    steering: SteeringParams = field(default_factory=SteeringParams)
    servo: ServoParams = field(default_factory=ServoParams)

    def override(self, overrides=None):
        """Copy with nested overrides, e.g. ``{"servo": {"gain": 120}}``."""
        if not overrides:
            return self
        parts = {}
        for name in ("chassis", "steering", "servo"):
            cur = getattr(self, name)
            sub = overrides.get(name, {}) or {}
            unknown = set(sub) - {f.name for f in fields(cur)}
            if unknown:
                raise InvalidArgumentError(f"unknown {name} parameters: {sorted(unknown)}")
            parts[name] = replace(cur, **{k: float(v) for k, v in sub.items()})
        unknown = set(overrides) - set(parts)
        if unknown:
            raise InvalidArgumentError(f"unknown parameter groups: {sorted(unknown)}")
        return VehicleParams(**parts)


@dataclass(frozen=True)
class SimState:
    v_x: float
    v_y: float = 0.0
    r: float = 0.0
    delta: float = 0.0
    delta_dot: float = 0.0
    T_servo: float = 0.0

    def as_array(self):
        return np.array([self.v_x, self.v_y, self.r, self.delta, self.delta_dot, self.T_servo])

    @classmethod
    def from_array(cls, x):
        return cls(*(float(v) for v in x[:6]))


@dataclass(frozen=True)
class NoiseModel:
    """AR-colored output noise ``e_k = sum_i a_i e_{k-i} + sigma_e w_k``."""

    sigma_e: float = 0.002
    ar_coeffs: tuple = (0.9,)

    def __post_init__(self):
        if self.sigma_e < 0:
            raise InvalidArgumentError("sigma_e must be non-negative")
        if self.ar_coeffs:
            poles = np.roots(np.r_[1.0, -np.asarray(self.ar_coeffs, dtype=float)])
            if np.any(np.abs(poles) >= 1.0):
                raise InvalidArgumentError("noise coloring filter must be stable")

    def sample(self, n, rng):
        w = rng.standard_normal(n) * self.sigma_e
        if not self.ar_coeffs or self.sigma_e == 0:
            return w
        import scipy.signal
        return scipy.signal.lfilter([1.0], np.r_[1.0, -np.asarray(self.ar_coeffs)], w)


# ---------------------------------------------------------------- plant equations

def slip_angles(s, p):
    """Front and rear slip angles ``(alpha_f, alpha_r)`` in rad."""
    return _slip(s.v_x, s.v_y, s.r, s.delta, p)


def _slip(v_x, v_y, r, delta, p):
    if not v_x > 0:
        raise DomainError(f"slip angles undefined for v_x={v_x} <= 0")
    alpha_f = delta - math.atan((v_y + r * p.l_f) / v_x)
    alpha_r = -math.atan((v_y - r * p.l_r) / v_x)
    return alpha_f, alpha_r


def lateral_forces(s, p):
    alpha_f, alpha_r = slip_angles(s, p)
    return p.c_f * alpha_f, p.c_r * alpha_r


def chassis_derivatives(s, F_xr, p):
    """``(dv_x, dv_y, dr)`` of the single-track model with linear tires."""
    return _chassis(s.v_x, s.v_y, s.r, s.delta, F_xr, p)[:3]


def _chassis(v_x, v_y, r, delta, F_xr, p):
    alpha_f, alpha_r = _slip(v_x, v_y, r, delta, p)
    F_yf = p.c_f * alpha_f
    F_yr = p.c_r * alpha_r
    sd, cd = math.sin(delta), math.cos(delta)
    dv_x = (F_xr - F_yf * sd + p.m * v_y * r) / p.m
    dv_y = (F_yr + F_yf * cd - p.m * v_x * r) / p.m
    dr = (F_yf * p.l_f * cd - F_yr * p.l_r) / p.I_z
    return dv_x, dv_y, dr, F_yf


def pneumatic_trail(delta, v, p):
    """Trail ``n0 (1 - |delta|/delta_crit)``, clamped below at ``trail_min``.

    Negative beyond the critical angle.  ``v`` is accepted for interface
    symmetry; the law is speed independent.
    """
    return max(p.trail_n0 * (1.0 - abs(delta) / p.trail_delta_crit), p.trail_min)


def self_aligning_torque(delta, F_yf, v, p):
    # lateral force acts behind the steering axis: restoring while trail > 0
    return -pneumatic_trail(delta, v, p) * F_yf


def tire_friction_torque(delta_dot, v, p):
    """Low-speed tire/pavement friction opposing the steering rate."""
    return -p.T_B_max * math.exp(-v / p.v_B) * math.tanh(delta_dot / RATE_SMOOTHING)


def steering_derivatives(s, T_mot, F_yf, v, p, smooth=False):
    """``(d delta, d delta_dot)`` of the steering linkage.

    ``smooth=True`` replaces ``sign(delta)`` by ``tanh(delta/1e-3)``, the form
    used inside the integrator.
    """
    return _steering(s.delta, s.delta_dot, T_mot, F_yf, v, p, smooth)


def _steering(delta, delta_dot, T_mot, F_yf, v, p, smooth=True):
    T_l = self_aligning_torque(delta, F_yf, v, p) + tire_friction_torque(delta_dot, v, p)
    if smooth:
        sgn = math.tanh(delta / SIGN_SMOOTHING)
    else:
        sgn = (delta > 0) - (delta < 0)
    T_stop = 0.0
    excess = abs(delta) - p.delta_max
    if excess > 0.0:
        T_stop = -math.copysign(p.k_stop * excess, delta)
    dd = (-delta_dot * p.d_delta + T_mot + T_l + T_stop - sgn * p.F_Sr / p.i_l) / p.theta_delta
    return delta_dot, dd


def servo_command(u_s, p):
    """Static part of the servo: dead-zone, gain and torque saturation."""
    if u_s > p.dz_high:
        z = u_s - p.dz_high
    elif u_s < p.dz_low:
        z = u_s - p.dz_low
    else:
        z = 0.0
    return max(-p.T_max, min(p.T_max, p.gain * z))


def servo_torque_derivative(u_s, T_servo, p):
    return (servo_command(u_s, p) - T_servo) / p.tau_servo


def plant_rhs(x, u_s, F_xr, params):
    """Time derivative of the plant vector ``(v_x, v_y, r, delta, delta_dot, T_servo)``."""
    v_x, v_y, r, delta, delta_dot, T_servo = x[:6]
    ch, st, sv = params.chassis, params.steering, params.servo
    dv_x, dv_y, dr, F_yf = _chassis(v_x, v_y, r, delta, F_xr, ch)
    v = math.sqrt(v_x * v_x + v_y * v_y)
    T_mot = T_servo - sv.k_return * delta
    d_delta, dd_delta = _steering(delta, delta_dot, T_mot, F_yf, v, st, True)
    dT = servo_torque_derivative(u_s, T_servo, sv)
    return (dv_x, dv_y, dr, d_delta, dd_delta, dT)


# ---------------------------------------------------------------- integration

def rk4_step(fun, x, dt):
    """Classical RK4 step for ``dx/dt = fun(x)`` on numpy vectors."""
    k1 = fun(x)
    k2 = fun(x + 0.5 * dt * k1)
    k3 = fun(x + 0.5 * dt * k2)
    k4 = fun(x + dt * k3)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _rk4_tuple(fun, x, dt):
    # tuple version of rk4_step; avoids numpy overhead on 6-9 element states
    n = len(x)
    h2 = 0.5 * dt
    k1 = fun(x)
    k2 = fun(tuple(x[i] + h2 * k1[i] for i in range(n)))
    k3 = fun(tuple(x[i] + h2 * k2[i] for i in range(n)))
    k4 = fun(tuple(x[i] + dt * k3[i] for i in range(n)))
    d6 = dt / 6.0
    return tuple(x[i] + d6 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) for i in range(n))


def step_rk4(s, inputs, dt, params):
    """Advance the plant by ``dt`` holding ``inputs = (u_s, F_xr)`` constant."""
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    u_s, F_xr = inputs
    x = tuple(s.as_array())
    try:
        x = _rk4_tuple(lambda z: plant_rhs(z, u_s, F_xr, params), x, dt)
    except DomainError as exc:
        raise DomainError(f"v_x left the forward-driving region during an RK4 stage "
                          f"(start v_x={s.v_x}, dt={dt}): {exc}") from exc
    return SimState(*x)


def linearized_plant(params, v_x):
    """Small-angle linearization about straight driving at speed ``v_x``.

    State ``(v_y, r, delta, delta_dot, T_servo)``, input: servo torque command.
    Dry friction and the tire/pavement friction, being non-smooth at rest,
    are left out.
    """
    ch, st, sv = params.chassis, params.steering, params.servo
    m, I, lf, lr, cf, cr, V = ch.m, ch.I_z, ch.l_f, ch.l_r, ch.c_f, ch.c_r, v_x
    # alpha_f = delta - (v_y + lf r)/V ; alpha_r = -(v_y - lr r)/V
    af = np.array([-1.0 / V, -lf / V, 1.0, 0.0, 0.0])
    ar = np.array([-1.0 / V, lr / V, 0.0, 0.0, 0.0])
    A = np.zeros((5, 5))
    A[0] = (cf * af + cr * ar) / m
    A[0, 1] -= V
    A[1] = (lf * cf * af - lr * cr * ar) / I
    A[2, 3] = 1.0
    A[3] = -st.trail_n0 * cf * af / st.theta_delta
    A[3, 2] -= sv.k_return / st.theta_delta
    A[3, 3] -= st.d_delta / st.theta_delta
    A[3, 4] += 1.0 / st.theta_delta
    A[4, 4] = -1.0 / sv.tau_servo
    B = np.zeros((5, 1))
    B[4, 0] = 1.0 / sv.tau_servo
    return A, B


def linear_bicycle(params, v_x):
    """Two-state ``(v_y, r)`` linear single-track model driven by ``delta``."""
    A5, _ = linearized_plant(params, v_x)
    return A5[:2, :2].copy(), A5[:2, 2:3].copy()


# ---------------------------------------------------------------- experiments

@dataclass
class PathSpec:
    """Reference path as curvature against arc length.

    kind ``straight``; ``sine`` (``amplitude`` [1/m], ``wavelength`` [m]);
    or ``knots`` (periodic piecewise-linear through ``s`` / ``kappa``).
    """

    kind: str = "sine"
    amplitude: float = 0.0
    wavelength: float = 100.0
    s: tuple = ()
    kappa: tuple = ()

    def __post_init__(self):
        if self.kind not in ("straight", "sine", "knots"):
            raise InvalidArgumentError(f"unknown path kind {self.kind!r}")
        if self.kind == "knots" and (len(self.s) < 2 or len(self.s) != len(self.kappa)):
            raise InvalidArgumentError("knot path needs matching s and kappa lists (>= 2 points)")

    def curvature(self, s):
        if self.kind == "straight":
            return 0.0
        if self.kind == "sine":
            return self.amplitude * math.sin(2.0 * math.pi * s / self.wavelength)
        period = self.s[-1] - self.s[0]
        return float(np.interp(self.s[0] + (s - self.s[0]) % period, self.s, self.kappa))


@dataclass
class ControllerGains:
    lookahead_min: float = 3.0
    lookahead_gain: float = 0.6
    kp: float = 3.0
    ki: float = 4.0
    kd: float = 0.15
    kp_speed: float = 0.8
    ki_speed: float = 0.2
    u_max: float = 1.5
    max_lateral_error: float = 5.0


@dataclass
class ExperimentSpec:
    id: str
    speed: float
    duration: float
    path: PathSpec = field(default_factory=PathSpec)
    prbs_amplitude: float = 0.3
    prbs_band_rad_s: float = 10.0
    T_s: float = 0.02
    dt: float = 1e-3
    controller: ControllerGains = field(default_factory=ControllerGains)

    def __post_init__(self):
        if not self.speed > 0 or not self.duration > 0:
            raise InvalidArgumentError(f"experiment {self.id}: speed and duration must be positive")
        ratio = self.T_s / self.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise InvalidArgumentError("sample time must be an integer multiple of dt")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "path" in d and not isinstance(d["path"], PathSpec):
            p = dict(d["path"])
            for key in ("s", "kappa"):
                if key in p:
                    p[key] = tuple(p[key])
            d["path"] = PathSpec(**p)
        if "controller" in d and not isinstance(d["controller"], ControllerGains):
            d["controller"] = ControllerGains(**d["controller"])
        return cls(**d)


def run_experiment(spec, params=None, noise=None, seed=0, return_truth=False):
    """Closed-loop path-tracking run with PRBS on the steering command.

    A pure-pursuit law (linearized, in path coordinates) yields a steering
    angle reference, a PI loop with rate damping turns it into the torque
    command and a PI speed loop sets the rear driving force.  The plant is
    integrated at ``spec.dt`` with controllers and PRBS held over each
    output sample.  Returns a :class:`Dataset` with channels ``u_s``, ``v``
    and noisy ``r``; with ``return_truth`` also a dict of hidden states.
    """
    params = params or VehicleParams()
    noise = noise if noise is not None else NoiseModel()
    ch = params.chassis
    g = spec.controller
    rng = np.random.default_rng(seed)
    n_samples = int(round(spec.duration / spec.T_s))
    sub = int(round(spec.T_s / spec.dt))
    band_hz = spec.prbs_band_rad_s / (2.0 * math.pi)
    excitation = (prbs(n_samples, band_hz, spec.prbs_amplitude, spec.T_s, seed=seed)
                  if spec.prbs_amplitude > 0 else np.zeros(n_samples))
    meas_noise = noise.sample(n_samples, rng)
    L = ch.wheelbase
    kappa = spec.path.curvature

    def rhs(z, u_s, F_xr):
        d = plant_rhs(z, u_s, F_xr, params)
        v_x, v_y, r = z[0], z[1], z[2]
        s, e_y, e_psi = z[6], z[7], z[8]
        k = kappa(s)
        ce, se = math.cos(e_psi), math.sin(e_psi)
        ds = (v_x * ce - v_y * se) / (1.0 - k * e_y)
        return d + (ds, v_x * se + v_y * ce, r - k * ds)

    z = (spec.speed, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    int_delta = 0.0
    int_speed = 0.0
    t = np.arange(n_samples) * spec.T_s
    out_u = np.empty(n_samples)
    out_v = np.empty(n_samples)
    out_r = np.empty(n_samples)
    truth = np.empty((n_samples, 4))
    for k in range(n_samples):
        v_x, v_y, r, delta, delta_dot = z[0], z[1], z[2], z[3], z[4]
        s, e_y, e_psi = z[6], z[7], z[8]
        if abs(e_y) > g.max_lateral_error or not math.isfinite(e_y):
            raise ExperimentFailure(
                f"experiment {spec.id}: controller lost the path at t={t[k]:.2f} s "
                f"(lateral error {e_y:.2f} m)", t=float(t[k]))
        l_d = g.lookahead_min + g.lookahead_gain * v_x
        kappa_cmd = kappa(s + 0.5 * l_d) + 2.0 * (-e_y - l_d * e_psi) / (l_d * l_d)
        delta_ref = math.atan(L * kappa_cmd)
        err = delta_ref - delta
        u_nom = g.kp * err + g.ki * int_delta - g.kd * delta_dot
        u_raw = u_nom + float(excitation[k])
        u_s = max(-g.u_max, min(g.u_max, u_raw))
        # anti-windup: integrate only while the command is not clipped
        if abs(u_raw) < g.u_max:
            int_delta += err * spec.T_s
        e_v = spec.speed - v_x
        int_speed += e_v * spec.T_s
        F_xr = ch.m * (g.kp_speed * e_v + g.ki_speed * int_speed)

        out_u[k] = u_s
        out_v[k] = math.hypot(v_x, v_y)
        out_r[k] = r
        truth[k] = (v_x, v_y, delta, delta_dot)
        fun = lambda zz: rhs(zz, u_s, F_xr)
        try:
            for _ in range(sub):
                z = _rk4_tuple(fun, z, spec.dt)
        except DomainError as exc:
            raise ExperimentFailure(f"experiment {spec.id}: {exc} at t={t[k]:.2f} s", t=float(t[k])) from exc

    meta = {"speed": spec.speed, "duration": spec.duration}
    d = Dataset(t=t, u_s=out_u, v=out_v, r=out_r + meas_noise, T_s=spec.T_s, id=spec.id, meta=meta)
    if return_truth:
        return d, {"t": t, "v_x": truth[:, 0], "v_y": truth[:, 1],
                   "delta": truth[:, 2], "delta_dot": truth[:, 3]}
    return d


def write_truth_csv(truth, path):
    data = np.column_stack([truth[k] for k in ("t", "v_x", "v_y", "delta", "delta_dot")])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header="t,v_x,v_y,delta,delta_dot", comments="")
