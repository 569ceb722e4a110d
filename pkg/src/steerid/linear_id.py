"""
LTI baselines.

ARX least squares supplies the impulse response, a Ho-Kalman realization
turns it into a state-space model and output-error refinement minimizes the
free-run simulation error with Adam.  ``fit_lti`` chains the three on
standardized data plus a constant input channel (so the model is affine)
and optionally passes ``u_s`` through the dead-zone first (the starred LTI
variant).
"""
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import nn_core
from .errors import IllConditionedError, InvalidArgumentError, OptimizationFailure
from .signals import Dataset, dead_zone, nrmse


def _io(d):
    """``(u (N, n_u), y (N,))`` from a Dataset or a ``(u, y)`` pair."""
    if isinstance(d, Dataset):
        return d.u, d.y
    u, y = d
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    return u, np.asarray(y, dtype=float).ravel()


# ---------------------------------------------------------------- models

@dataclass
class ArxModel:
    """``y_k + a_1 y_{k-1} + ... = sum_j sum_l b_j[l] u_j(k - n_k[j] - l)``."""

    a: np.ndarray
    b: list
    n_k: tuple

    @property
    def n_a(self):
        return len(self.a)

    @property
    def n_b(self):
        return tuple(len(bj) for bj in self.b)

    def impulse_response(self, n):
        """Markov parameters ``g_0 .. g_n`` as an array ``(n+1, 1, n_u)``."""
        n_u = len(self.b)
        g = np.zeros((n + 1, 1, n_u))
        for j in range(n_u):
            y = np.zeros(n + 1)
            for k in range(n + 1):
                acc = 0.0
                lag = k - self.n_k[j]
                if 0 <= lag < len(self.b[j]):
                    acc += self.b[j][lag]
                for i, ai in enumerate(self.a, start=1):
                    if k - i >= 0:
                        acc -= ai * y[k - i]
                y[k] = acc
            g[:, 0, j] = y
        return g


@dataclass
class LinearSSModel:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    K: np.ndarray = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        n = self.A.shape[0]
        self.B = np.asarray(self.B, dtype=float).reshape(n, -1)
        self.C = np.asarray(self.C, dtype=float).reshape(-1, n)
        self.K = np.zeros((n, self.C.shape[0])) if self.K is None else np.asarray(self.K, dtype=float).reshape(n, -1)
        if self.A.shape != (n, n):
            raise InvalidArgumentError(f"A must be square, got {self.A.shape}")

    @property
    def n_x(self):
        return self.A.shape[0]

    @property
    def spectral_radius(self):
        return float(np.max(np.abs(np.linalg.eigvals(self.A)))) if self.n_x else 0.0

    def markov(self, n):
        """``C A^{k-1} B`` for ``k = 1..n`` as ``(n, n_y, n_u)``."""
        out = np.empty((n, self.C.shape[0], self.B.shape[1]))
        AkB = self.B.copy()
        for k in range(n):
            out[k] = self.C @ AkB
            AkB = self.A @ AkB
        return out

    def transformed(self, T):
        Ti = np.linalg.inv(T)
        return LinearSSModel(T @ self.A @ Ti, T @ self.B, self.C @ Ti, T @ self.K)

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("A", "B", "C", "K")}

    @classmethod
    def from_dict(cls, d):
        return cls(np.array(d["A"]).reshape(len(d["A"]), -1), np.array(d["B"]),
                   np.array(d["C"]), np.array(d["K"]))


# ---------------------------------------------------------------- ARX

def _arx_rows(u, y, n_a, n_b, n_k):
    start = max([n_a] + [nk + nb - 1 for nb, nk in zip(n_b, n_k) if nb > 0] + [0])
    N = len(y)
    if N <= start:
        return np.empty((0, n_a + sum(n_b))), np.empty(0)
    cols = [-y[start - i:N - i] for i in range(1, n_a + 1)]
    for j, (nb, nk) in enumerate(zip(n_b, n_k)):
        for l in range(nb):
            lag = nk + l
            cols.append(u[start - lag:N - lag, j])
    return np.column_stack(cols) if cols else np.empty((N - start, 0)), y[start:]


def arx_fit(data, n_a, n_b, n_k, max_condition=1e10):
    """Least-squares ARX fit over one or more records.

    Regressors are built per record so no row mixes samples of different
    records.  Raises :class:`IllConditionedError` when the column-normalized
    regressor matrix has condition number above ``max_condition``.
    """
    records = [data] if isinstance(data, (Dataset, tuple)) else list(data)
    n_b, n_k = tuple(int(v) for v in n_b), tuple(int(v) for v in n_k)
    if n_a < 0 or any(v < 0 for v in n_b + n_k) or len(n_b) != len(n_k):
        raise InvalidArgumentError("ARX orders must be non-negative with one n_b/n_k per input")
    phis, ys = [], []
    for rec in records:
        u, y = _io(rec)
        if u.shape[1] != len(n_b):
            raise InvalidArgumentError(f"record has {u.shape[1]} inputs, orders given for {len(n_b)}")
        p, t = _arx_rows(u, y, n_a, n_b, n_k)
        phis.append(p)
        ys.append(t)
    Phi = np.vstack(phis)
    target = np.concatenate(ys)
    n_par = Phi.shape[1]
    if Phi.shape[0] <= n_par:
        raise InvalidArgumentError(f"{Phi.shape[0]} regression rows for {n_par} parameters")
    scale = np.linalg.norm(Phi, axis=0)
    if np.any(scale == 0):
        raise IllConditionedError("regressor matrix has an all-zero column", float("inf"))
    cond = np.linalg.cond(Phi / scale)
    if not cond < max_condition:
        raise IllConditionedError(f"ARX regressor matrix is ill-conditioned (cond={cond:.3g})", cond)
    theta, *_ = np.linalg.lstsq(Phi / scale, target, rcond=None)
    theta = theta / scale
    a = theta[:n_a]
    b, pos = [], n_a
    for nb in n_b:
        b.append(theta[pos:pos + nb])
        pos += nb
    return ArxModel(a=a, b=b, n_k=n_k)


# ---------------------------------------------------------------- realization

def realize_ss(markov_params, n_x, rank_tol=1e-10):
    """Ho-Kalman realization from Markov parameters ``markov_params[i] = C A^i B``.

    The block Hankel matrix is factored by truncated SVD.  If ``n_x`` exceeds
    the numerical rank a warning is issued and the order reduced.
    """
    g = np.asarray(markov_params, dtype=float)
    if g.ndim == 2:
        g = g[:, None, :]
    M, ny, nu = g.shape
    if M < 2 * n_x + 2:
        raise InvalidArgumentError(f"need at least {2 * n_x + 2} Markov parameters, got {M}")
    p = M // 2
    q = M - p
    H = np.empty((p * ny, q * nu))
    for i in range(p):
        for j in range(q):
            H[i * ny:(i + 1) * ny, j * nu:(j + 1) * nu] = g[i + j]
    U, s, Vt = np.linalg.svd(H, full_matrices=False)
    if s[0] == 0.0:
        warnings.warn("all Markov parameters are zero; returning the zero model")
        return LinearSSModel(np.zeros((n_x, n_x)), np.zeros((n_x, nu)), np.zeros((ny, n_x)))
    rank = int(np.sum(s > rank_tol * s[0]))
    if n_x > rank:
        warnings.warn(f"requested order {n_x} exceeds numerical Hankel rank {rank}; order reduced")
        n_x = rank
    sq = np.sqrt(s[:n_x])
    Obs = U[:, :n_x] * sq
    Ctr = (Vt[:n_x].T * sq).T
    C = Obs[:ny]
    B = Ctr[:, :nu]
    A = np.linalg.lstsq(Obs[:-ny], Obs[ny:], rcond=None)[0]
    return LinearSSModel(A, B, C)


def stabilize(m, max_radius=0.995):
    """Pull eigenvalues with modulus above ``max_radius`` back inside the disc."""
    lam, V = np.linalg.eig(m.A)
    mag = np.abs(lam)
    if np.all(mag <= max_radius):
        return m
    lam = np.where(mag > max_radius, lam / mag * max_radius, lam)
    A = np.real(V @ np.diag(lam) @ np.linalg.inv(V))
    return LinearSSModel(A, m.B.copy(), m.C.copy(), m.K.copy())


# ---------------------------------------------------------------- simulation

def simulate_lti(m, u, x0=None, return_states=False):
    """Free-run ``x_{k+1} = A x_k + B u_k``, ``y_k = C x_k``."""
    u = np.asarray(u, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.shape[1] != m.B.shape[1]:
        raise InvalidArgumentError(f"input has {u.shape[1]} channels, model expects {m.B.shape[1]}")
    if m.n_x and m.spectral_radius >= 1.0:
        warnings.warn(f"simulating an unstable model (spectral radius {m.spectral_radius:.4f})")
    N = len(u)
    X = np.empty((N, m.n_x))
    x = np.zeros(m.n_x) if x0 is None else np.asarray(x0, dtype=float).copy()
    Bu = u @ m.B.T
    A = m.A
    for k in range(N):
        X[k] = x
        x = A @ x + Bu[k]
    Y = X @ m.C.T
    y = Y[:, 0] if Y.shape[1] == 1 else Y
    return (y, X) if return_states else y


def estimate_x0(m, u, y, n=None):
    """Least-squares initial state from the first ``n`` samples."""
    n = min(len(y), n or max(4 * m.n_x, 20))
    y0 = simulate_lti(m, u[:n])
    obs = np.empty((n, m.n_x))
    CAk = m.C[0].copy()
    for k in range(n):
        obs[k] = CAk
        CAk = CAk @ m.A
    return np.linalg.lstsq(obs, np.asarray(y[:n], dtype=float) - y0, rcond=None)[0]


# ---------------------------------------------------------------- output-error refinement

def _oe_loss_grad(A, B, C, x0s, records):
    """Simulation loss ``sum e^2 / (2 N_total)`` and its exact gradient."""
    n_tot = sum(len(y) for _, y in records)
    gA, gB, gC = np.zeros_like(A), np.zeros_like(B), np.zeros_like(C)
    gx0 = []
    loss = 0.0
    c = C[0]
    AT = A.T
    for (u, y), x0 in zip(records, x0s):
        N = len(y)
        Bu = u @ B.T
        X = np.empty((N, A.shape[0]))
        x = x0
        for k in range(N):
            X[k] = x
            x = A @ x + Bu[k]
        e = X @ c - y
        loss += 0.5 * float(e @ e)
        ce = np.outer(e / n_tot, c)
        G = np.empty_like(X)
        lam = ce[-1]
        G[-1] = lam
        for k in range(N - 2, -1, -1):
            lam = ce[k] + AT @ lam
            G[k] = lam
        # dL/dA = sum_k lam_{k+1} x_k^T
        gA += G[1:].T @ X[:-1]
        gB += G[1:].T @ u[:-1]
        gC += (e / n_tot) @ X
        gx0.append(G[0].copy())
    return loss / n_tot, gA, gB, gC, gx0


def oe_refine(init, data, epochs=500, lr=1e-3, val=None, x0_window=None):
    """Minimize free-run simulation error over ``(A, B, C)`` and per-record x0.

    Adam steps on the full-batch gradient.  The returned model is the iterate
    with the lowest mean validation NRMSE (training loss when no validation
    data is given), so it is never worse than ``init`` on that measure.
    """
    if init.spectral_radius >= 1.0:
        raise InvalidArgumentError("output-error refinement needs a stable initial model")
    records = [_io(d) for d in ([data] if isinstance(data, (Dataset, tuple)) else data)]
    val_records = [_io(d) for d in (val or [])]
    A, B, C = init.A.copy(), init.B.copy(), init.C.copy()
    x0s = [estimate_x0(init, u, y, x0_window) for u, y in records]

    def score(A, B, C, x0s):
        if val_records:
            m = LinearSSModel(A, B, C)
            vals = []
            for u, y in val_records:
                yh = simulate_lti(m, u, estimate_x0(m, u, y, x0_window))
                vals.append(nrmse(y, yh))
            return float(np.mean(vals))
        return _oe_loss_grad(A, B, C, x0s, records)[0]

    best = (score(A, B, C, x0s), A.copy(), B.copy(), C.copy())
    params = [A, B, C] + x0s
    state = nn_core.adam_init(params)
    last_finite = best[0]
    history = []
    for _ in range(int(epochs)):
        with np.errstate(over="ignore", invalid="ignore"):
            loss, gA, gB, gC, gx0 = _oe_loss_grad(params[0], params[1], params[2], params[3:], records)
        if not np.isfinite(loss):
            raise OptimizationFailure(f"output-error refinement diverged (last finite loss {last_finite:.6g})",
                                      last_finite)
        last_finite = loss
        history.append(loss)
        params, state = nn_core.adam_step(params, [gA, gB, gC] + gx0, state, lr)
        if np.max(np.abs(np.linalg.eigvals(params[0]))) >= 1.0:
            continue
        sc = score(params[0], params[1], params[2], params[3:])
        if sc < best[0]:
            best = (sc, params[0].copy(), params[1].copy(), params[2].copy())
    model = LinearSSModel(best[1], best[2], best[3])
    model.history = history
    return model


# ---------------------------------------------------------------- pipeline

@dataclass
class LtiConfig:
    n_x: int = 10
    n_a: int = 10
    n_b: tuple = (10, 10)
    n_k: tuple = (1, 1)
    n_markov: int = 60
    epochs: int = 300
    lr: float = 1e-3
    dead_zone: bool = False
    dz_low: float = -0.13
    dz_high: float = 0.17
    x0_window: int = 40


@dataclass
class LtiIdentified:
    """A realized model plus the standardization it was fitted in."""

    model: LinearSSModel
    u_mean: np.ndarray
    u_std: np.ndarray
    y_mean: float
    y_std: float
    config: LtiConfig = field(default_factory=LtiConfig)

    def _scaled(self, u):
        u = np.array(u, dtype=float)
        if self.config.dead_zone:
            u[:, 0] = dead_zone(u[:, 0], self.config.dz_low, self.config.dz_high)
        return u

    def _inputs(self, u):
        # standardized inputs plus a unit channel; centering leaves a constant offset
        # between input and output means that the unit channel absorbs
        un = (self._scaled(u) - self.u_mean) / self.u_std
        return np.hstack([un, np.ones((len(un), 1))])

    def simulate(self, d, x0_window=None):
        """Free-run response to the measured inputs of ``d`` (x0 from its first samples)."""
        u, y = _io(d)
        un = self._inputs(u)
        yn = (y - self.y_mean) / self.y_std
        w = x0_window or self.config.x0_window
        x0 = estimate_x0(self.model, un, yn, w)
        return simulate_lti(self.model, un, x0) * self.y_std + self.y_mean

    @property
    def warmup(self):
        return self.config.x0_window

    def to_dict(self):
        cfg = dict(self.config.__dict__)
        cfg["n_b"], cfg["n_k"] = list(cfg["n_b"]), list(cfg["n_k"])
        return {"kind": "lti", "model": self.model.to_dict(), "u_mean": self.u_mean.tolist(),
                "u_std": self.u_std.tolist(), "y_mean": self.y_mean, "y_std": self.y_std,
                "config": cfg}

    @classmethod
    def from_dict(cls, d):
        cfg = dict(d["config"])
        cfg["n_b"], cfg["n_k"] = tuple(cfg["n_b"]), tuple(cfg["n_k"])
        return cls(LinearSSModel.from_dict(d["model"]), np.array(d["u_mean"]), np.array(d["u_std"]),
                   float(d["y_mean"]), float(d["y_std"]), LtiConfig(**cfg))


def fit_lti(train, val=None, config=None):
    """ARX -> Ho-Kalman -> output-error pipeline on standardized records."""
    cfg = config or LtiConfig()
    train = list(train)
    raw = [_io(d) for d in train]
    proto = LtiIdentified(None, np.zeros(raw[0][0].shape[1]), np.ones(raw[0][0].shape[1]), 0.0, 1.0, cfg)
    U = np.vstack([proto._scaled(u) for u, _ in raw])
    Y = np.concatenate([y for _, y in raw])
    u_mean, u_std = U.mean(axis=0), U.std(axis=0)
    u_std = np.where(u_std > 1e-12, u_std, 1.0)
    y_mean, y_std = float(Y.mean()), float(Y.std()) or 1.0
    ident = LtiIdentified(None, u_mean, u_std, y_mean, y_std, cfg)

    def norm(d):
        u, y = _io(d)
        return ident._inputs(u), (y - y_mean) / y_std

    recs = [norm(d) for d in train]
    vrecs = [norm(d) for d in (val or [])]
    arx = arx_fit(recs, cfg.n_a, tuple(cfg.n_b) + (1,), tuple(cfg.n_k) + (1,))
    g = arx.impulse_response(max(cfg.n_markov, 2 * cfg.n_x + 2))
    ss = stabilize(realize_ss(g[1:], cfg.n_x))
    ident.model = oe_refine(ss, recs, epochs=cfg.epochs, lr=cfg.lr, val=vrecs or None,
                            x0_window=cfg.x0_window)
    return ident


def save_lti(ident, path):
    with open(path, "w") as fh:
        json.dump(ident.to_dict(), fh)


def load_lti(path):
    with open(path) as fh:
        return LtiIdentified.from_dict(json.load(fh))
