import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings, strategies as st

from steerid import vehicle_sim as vs
from steerid.errors import DomainError, ExperimentFailure, InvalidArgumentError

CH = vs.ChassisParams()
ST = vs.SteeringParams()
SV = vs.ServoParams()
P = vs.VehicleParams()


# ---------------------------------------------------------------- parameters

def test_param_validation():
    with pytest.raises(InvalidArgumentError):
        vs.ChassisParams(m=-1.0)
    with pytest.raises(InvalidArgumentError):
        vs.NoiseModel(sigma_e=0.1, ar_coeffs=(1.2,))
    with pytest.raises(InvalidArgumentError):
        P.override({"servo": {"nope": 1.0}})
    assert P.override({"servo": {"gain": 120}}).servo.gain == 120.0


# ---------------------------------------------------------------- slip angles and chassis

def test_slip_angles_examples():
    assert vs.slip_angles(vs.SimState(5.0), CH) == (0.0, 0.0)
    af, ar = vs.slip_angles(vs.SimState(5.0, delta=0.1), CH)
    assert af == pytest.approx(0.1) and ar == 0.0
    p = vs.ChassisParams(l_f=1.2)
    af, _ = vs.slip_angles(vs.SimState(5.0, v_y=0.2, r=0.1), p)
    assert af == pytest.approx(-math.atan(0.064), abs=1e-15)


def test_slip_angles_reject_reverse():
    with pytest.raises(DomainError):
        vs.slip_angles(vs.SimState(0.0), CH)
    with pytest.raises(DomainError):
        vs.slip_angles(vs.SimState(-1.0), CH)


def test_chassis_straight_and_accel():
    assert vs.chassis_derivatives(vs.SimState(10.0), 0.0, CH) == (0.0, 0.0, 0.0)
    dv_x, dv_y, dr = vs.chassis_derivatives(vs.SimState(10.0), CH.m * 1.0, CH)
    assert dv_x == pytest.approx(1.0) and dv_y == 0.0 and dr == 0.0


def test_chassis_cornering_against_independent_formula():
    s = vs.SimState(v_x=7.0, v_y=0.3, r=0.25, delta=0.08)
    F_xr = 400.0
    # direct transcription of the single-track equations
    af = s.delta - np.arctan2(s.v_y + CH.l_f * s.r, s.v_x)
    ar = -np.arctan2(s.v_y - CH.l_r * s.r, s.v_x)
    Fyf, Fyr = CH.c_f * af, CH.c_r * ar
    exp = ((F_xr - Fyf * np.sin(s.delta)) / CH.m + s.v_y * s.r,
           (Fyr + Fyf * np.cos(s.delta)) / CH.m - s.v_x * s.r,
           (CH.l_f * Fyf * np.cos(s.delta) - CH.l_r * Fyr) / CH.I_z)
    np.testing.assert_allclose(vs.chassis_derivatives(s, F_xr, CH), exp, rtol=1e-13)


# ---------------------------------------------------------------- steering

UNCLAMPED = vs.SteeringParams(trail_min=-np.inf)


def test_pneumatic_trail_law():
    n0, dc = UNCLAMPED.trail_n0, UNCLAMPED.trail_delta_crit
    assert vs.pneumatic_trail(0.0, 5.0, UNCLAMPED) == n0
    assert vs.pneumatic_trail(dc, 5.0, UNCLAMPED) == pytest.approx(0.0, abs=1e-18)
    assert vs.pneumatic_trail(-2 * dc, 5.0, UNCLAMPED) == pytest.approx(-n0)


@given(st.floats(0, 1.5), st.floats(1e-4, 0.5))
def test_pneumatic_trail_strictly_decreasing(d, step):
    assert vs.pneumatic_trail(d + step, 3.0, UNCLAMPED) < vs.pneumatic_trail(d, 3.0, UNCLAMPED)
    assert vs.pneumatic_trail(-d, 3.0, UNCLAMPED) == vs.pneumatic_trail(d, 3.0, UNCLAMPED)


def test_default_trail_floor():
    assert vs.pneumatic_trail(1.0, 3.0, ST) == ST.trail_min
    assert ST.trail_min < 0


def test_steering_zero_state():
    assert vs.steering_derivatives(vs.SimState(5.0), 0.0, 0.0, 5.0, ST) == (0.0, 0.0)


def test_steering_static_balance():
    s = vs.SimState(3.0, delta=0.1)
    F_yf = 800.0
    T_l = vs.self_aligning_torque(0.1, F_yf, 3.0, ST)
    T_mot = -T_l + ST.F_Sr / ST.i_l
    _, dd = vs.steering_derivatives(s, T_mot, F_yf, 3.0, ST)
    assert dd == pytest.approx(0.0, abs=1e-12)


def test_steering_generic_state_formula():
    delta, ddot, T_mot, F_yf, v = -0.3, 0.4, 12.0, -1500.0, 2.5
    n_sa = max(ST.trail_n0 * (1 - abs(delta) / ST.trail_delta_crit), ST.trail_min)
    T_B = -ST.T_B_max * np.exp(-v / ST.v_B) * np.tanh(ddot / 0.01)
    T_l = -n_sa * F_yf + T_B
    exp = (-ddot * ST.d_delta + T_mot + T_l - np.sign(delta) * ST.F_Sr / ST.i_l) / ST.theta_delta
    got = vs.steering_derivatives(vs.SimState(v, delta=delta, delta_dot=ddot), T_mot, F_yf, v, ST)
    assert got[0] == ddot
    assert got[1] == pytest.approx(exp, rel=1e-13)


def test_trail_sign_property():
    # steady cornering beyond the critical angle: the aligning torque pushes delta further out
    for delta in (0.3, -0.35, 0.5):
        s = vs.SimState(2.0, delta=delta)
        F_yf = vs.lateral_forces(s, CH)[0]
        T = vs.self_aligning_torque(delta, F_yf, 2.0, ST)
        assert np.sign(T) == np.sign(delta)
    # below the critical angle it restores
    s = vs.SimState(2.0, delta=0.1)
    assert np.sign(vs.self_aligning_torque(0.1, vs.lateral_forces(s, CH)[0], 2.0, ST)) == -1


# ---------------------------------------------------------------- servo

def test_servo_inside_dead_zone():
    for u in (-0.13, 0.0, 0.1, 0.17):
        assert vs.servo_torque_derivative(u, 0.0, SV) == 0.0


def test_servo_steady_state_and_lag():
    u = 0.9
    T_ss = vs.servo_command(u, SV)
    assert vs.servo_torque_derivative(u, T_ss, SV) == 0.0
    p = vs.ServoParams(gain=10.0, tau_servo=0.05)
    assert vs.servo_torque_derivative(p.dz_high + 0.1, 0.0, p) == pytest.approx(20.0)
    assert vs.servo_command(100.0, SV) == SV.T_max


# ---------------------------------------------------------------- integration

def test_rk4_equilibrium_unchanged():
    s = vs.SimState(5.0)
    assert vs.step_rk4(s, (0.0, 0.0), 1e-3, P) == s


def test_rk4_domain_error_on_reverse():
    s = vs.SimState(1e-4)
    with pytest.raises(DomainError, match="v_x"):
        vs.step_rk4(s, (0.0, -1e6), 1e-2, P)


def _linear_rhs(A, B, u):
    return lambda x: A @ x + (B * u).ravel()


def test_rk4_matches_matrix_exponential():
    A, B = vs.linearized_plant(P, 6.0)
    x0 = np.array([0.05, 0.02, 0.005, 0.0, 1.0])
    u = 2.0
    M = np.zeros((6, 6))
    M[:5, :5], M[:5, 5:] = A, B
    x_exact = (scipy.linalg.expm(M * 1.0) @ np.r_[x0, u])[:5]
    x = x0.copy()
    for _ in range(1000):
        x = vs.rk4_step(_linear_rhs(A, B, u), x, 1e-3)
    assert np.max(np.abs(x - x_exact)) <= 1e-6


def test_rk4_fourth_order():
    A, B = vs.linearized_plant(P, 6.0)
    x0 = np.array([0.05, 0.02, 0.005, 0.0, 1.0])
    f = _linear_rhs(A, B, 1.0)

    def run(dt):
        x = x0.copy()
        # horizon is a whole number of steps for every dt used
        for _ in range(int(round(1.024 / dt))):
            x = vs.rk4_step(f, x, dt)
        return x

    ref = run(0.001)
    e1 = np.max(np.abs(run(0.016) - ref))
    e2 = np.max(np.abs(run(0.008) - ref))
    assert math.log2(e1 / e2) >= 3.8


def test_small_signal_matches_linear_bicycle():
    # no dry or tire friction so the plant is smooth around straight driving
    p = P.override({"steering": {"F_Sr": 0.0, "T_B_max": 0.0}})
    v_x, dt = 8.0, 1e-3
    A, B = vs.linearized_plant(p, v_x)
    u_cmd = p.servo.dz_high + 0.02
    T_cmd = vs.servo_command(u_cmd, p.servo)
    x_lin = np.zeros(5)
    z = (v_x, 0.0, 0.0, 0.0, 0.0, 0.0)
    r_lin, r_nl = [], []
    for _ in range(5000):
        # hold v_x by cancelling the longitudinal derivative
        ch = p.chassis
        a_f, _ = vs._slip(z[0], z[1], z[2], z[3], ch)
        F_xr = ch.c_f * a_f * math.sin(z[3]) - ch.m * z[1] * z[2]
        z = vs._rk4_tuple(lambda q: vs.plant_rhs(q, u_cmd, F_xr, p), z, dt)
        x_lin = vs.rk4_step(_linear_rhs(A, B, T_cmd), x_lin, dt)
        r_nl.append(z[2])
        r_lin.append(x_lin[1])
    r_nl, r_lin = np.array(r_nl), np.array(r_lin)
    assert abs(z[3]) < 0.01
    assert np.linalg.norm(r_nl - r_lin) / np.linalg.norm(r_lin) < 0.01


def test_energy_decay_without_inputs():
    dt = 1e-3
    z = (5.0, 0.0, 0.0, 0.05, 0.5, 0.0)
    ch = P.chassis
    env_r, env_dd = [], []
    win_r = win_dd = 0.0
    for k in range(60_000):
        a_f, _ = vs._slip(z[0], z[1], z[2], z[3], ch)
        F_xr = ch.c_f * a_f * math.sin(z[3]) - ch.m * z[1] * z[2]
        z = vs._rk4_tuple(lambda q: vs.plant_rhs(q, 0.0, F_xr, P), z, dt)
        win_r = max(win_r, abs(z[2]))
        win_dd = max(win_dd, abs(z[4]))
        if (k + 1) % 5000 == 0:
            env_r.append(win_r)
            env_dd.append(win_dd)
            win_r = win_dd = 0.0
    assert all(np.isfinite(z))
    assert np.all(np.diff(env_r) <= 1e-12)
    assert np.all(np.diff(env_dd) <= 1e-12)


# ---------------------------------------------------------------- experiments

def test_noise_model_sampling():
    rng = np.random.default_rng(0)
    e = vs.NoiseModel(0.01, (0.9,)).sample(50_000, rng)
    assert np.std(e) == pytest.approx(0.01 / math.sqrt(1 - 0.81), rel=0.05)
    assert np.all(vs.NoiseModel(0.0).sample(10, rng) == 0)


def test_experiment_straight_quiet():
    spec = vs.ExperimentSpec("S", speed=4.0, duration=5.0, path=vs.PathSpec("straight"), prbs_amplitude=0.0)
    d = vs.run_experiment(spec, noise=vs.NoiseModel(0.0), seed=0)
    assert np.max(np.abs(d.r)) < 1e-9


def test_experiment_deterministic_and_sampled_at_50hz():
    spec = vs.ExperimentSpec("D", speed=3.0, duration=8.0, path=vs.PathSpec("sine", 0.05, 60.0))
    a = vs.run_experiment(spec, seed=3)
    b = vs.run_experiment(spec, seed=3)
    for c in ("t", "u_s", "v", "r"):
        np.testing.assert_array_equal(getattr(a, c), getattr(b, c))
    assert abs(len(a) - 8.0 * 50) <= 1
    assert a.T_s == 0.02
    np.testing.assert_allclose(np.diff(a.t), 0.02, atol=1e-12)


def test_experiment_truth_and_speed_channel(tmp_path):
    spec = vs.ExperimentSpec("T", speed=2.0, duration=4.0, path=vs.PathSpec("sine", 0.1, 40.0))
    d, truth = vs.run_experiment(spec, seed=1, return_truth=True)
    np.testing.assert_allclose(d.v, np.hypot(truth["v_x"], truth["v_y"]))
    vs.write_truth_csv(truth, tmp_path / "T.truth.csv")
    assert (tmp_path / "T.truth.csv").read_text().startswith("t,v_x,v_y,delta,delta_dot")


def test_experiment_failure_names_time():
    spec = vs.ExperimentSpec("F", speed=3.0, duration=20.0, path=vs.PathSpec("sine", 0.05, 60.0),
                             controller=vs.ControllerGains(max_lateral_error=1e-4))
    with pytest.raises(ExperimentFailure) as info:
        vs.run_experiment(spec, seed=0)
    assert info.value.t is not None and "F" in str(info.value)


def test_experiment_spec_roundtrip():
    spec = vs.ExperimentSpec("K", 2.0, 10.0, path=vs.PathSpec("knots", s=(0.0, 10.0, 20.0), kappa=(0.0, 0.1, 0.0)))
    back = vs.ExperimentSpec.from_dict(spec.to_dict())
    assert back == spec
    assert back.path.curvature(25.0) == pytest.approx(0.05)
