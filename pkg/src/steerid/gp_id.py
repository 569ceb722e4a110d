"""
GP-NARX estimator with a squared-exponential ARD kernel.

The posterior mean of a zero-mean GP over NARX regressors is used as the
one-step map; models are evaluated in free run (fed back on their own
output) and hyper-parameters are chosen by minimizing the n-step-ahead
prediction error on validation records.
"""
import itertools
import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import InvalidArgumentError, SimulationFailure, TuningFailure
from .signals import Dataset


@dataclass(frozen=True)
class NarxOrders:
    n_a: int
    n_b: int

    def __post_init__(self):
        if self.n_a < 1 or self.n_b < 1:
            raise InvalidArgumentError("NARX orders must be >= 1")

    @property
    def max_lag(self):
        return max(self.n_a, self.n_b)

    def dim(self, n_u=2):
        return self.n_a + n_u * self.n_b


@dataclass
class SEKernel:
    signal_var: float
    lengthscales: np.ndarray
    noise_var: float

    def __post_init__(self):
        self.lengthscales = np.atleast_1d(np.asarray(self.lengthscales, dtype=float))
        if not self.signal_var > 0 or not self.noise_var > 0 or np.any(self.lengthscales <= 0):
            raise InvalidArgumentError("kernel hyper-parameters must be positive")

    def __call__(self, Z1, Z2):
        A = np.atleast_2d(Z1) / self.lengthscales
        B = np.atleast_2d(Z2) / self.lengthscales
        sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
        return self.signal_var * np.exp(-0.5 * np.maximum(sq, 0.0))


@dataclass
class GPModel:
    Z: np.ndarray
    y: np.ndarray
    kernel: SEKernel
    chol: np.ndarray
    alpha: np.ndarray
    y_offset: float = 0.0

    @property
    def dim(self):
        return self.Z.shape[1]


def _io(d):
    if isinstance(d, Dataset):
        return d.u, d.y
    u, y = d
    u = np.asarray(u, dtype=float)
    return (u[:, None] if u.ndim == 1 else u), np.asarray(y, dtype=float).ravel()


def _regressor(ys, us, k, orders):
    # ys: (..., N), us: (..., N, n_u); row for time k
    ylags = ys[..., k - orders.n_a:k][..., ::-1]
    ulags = us[..., k - orders.n_b:k, :][..., ::-1, :]
    return np.concatenate([ylags, ulags.reshape(ulags.shape[:-2] + (-1,))], axis=-1)


def build_regressors(d, orders):
    """NARX regressor matrix and targets for one record.

    Row for time k is ``[y_{k-1}..y_{k-n_a}, u_{k-1}, .., u_{k-n_b}]`` with
    each input vector ``u = (u_s, v)`` kept together per lag.
    """
    u, y = _io(d)
    L = orders.max_lag
    N = len(y)
    if N <= L:
        raise InvalidArgumentError(f"record of length {N} too short for lag {L}")
    ks = np.arange(L, N)
    Y = np.stack([y[ks - i] for i in range(1, orders.n_a + 1)], axis=1)
    U = np.concatenate([u[ks - i] for i in range(1, orders.n_b + 1)], axis=1)
    return np.hstack([Y, U]), y[L:].copy()


def gp_fit(Z, y, kernel, y_offset=0.0, max_jitter_steps=3):
    """Condition the GP on ``(Z, y - y_offset)``.

    If the Cholesky factorization fails the noise variance is multiplied by
    10, at most ``max_jitter_steps`` times.
    """
    Z = np.asarray(Z, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if Z.shape[0] != len(y):
        raise InvalidArgumentError(f"{Z.shape[0]} regressors but {len(y)} targets")
    if kernel.lengthscales.size not in (1, Z.shape[1]):
        raise InvalidArgumentError("one lengthscale per regressor dimension expected")
    K = kernel(Z, Z)
    noise = kernel.noise_var
    for attempt in range(max_jitter_steps + 1):
        try:
            L = np.linalg.cholesky(K + noise * np.eye(len(y)))
            break
        except np.linalg.LinAlgError:
            if attempt == max_jitter_steps:
                raise
            noise *= 10.0
    if noise != kernel.noise_var:
        kernel = SEKernel(kernel.signal_var, kernel.lengthscales, noise)
    alpha = scipy.linalg.cho_solve((L, True), y - y_offset)
    return GPModel(Z, y, kernel, L, alpha, y_offset)


def gp_predict(m, z):
    """Posterior mean ``k(z, Z) alpha`` (plus the target offset)."""
    z = np.asarray(z, dtype=float)
    single = z.ndim == 1
    zb = z[None] if single else z
    if zb.shape[-1] != m.dim:
        raise InvalidArgumentError(f"regressor dimension {zb.shape[-1]} != {m.dim}")
    mean = m.kernel(zb, m.Z) @ m.alpha + m.y_offset
    return float(mean[0]) if single else mean


def gp_simulate(m, d, orders):
    """Free-run simulation: measured outputs seed the first ``max_lag`` samples."""
    u, y = _io(d)
    L = orders.max_lag
    if len(y) <= L:
        raise InvalidArgumentError("record shorter than the NARX lag window")
    y_hat = np.empty(len(y))
    y_hat[:L] = y[:L]
    for k in range(L, len(y)):
        val = gp_predict(m, _regressor(y_hat, u, k, orders))
        if not np.isfinite(val):
            raise SimulationFailure(f"GP simulation produced a non-finite value at sample {k}", k)
        y_hat[k] = val
    return y_hat


def nstep_error(m, records, orders, n, stride=None):
    """Mean squared n-step-ahead prediction error.

    Simulations of length ``n`` start at every ``stride``-th index and are
    initialized from measured outputs; all starts advance in parallel.
    """
    stride = stride or max(1, n // 4)
    sq, count = 0.0, 0
    for rec in records:
        u, y = _io(rec)
        L = orders.max_lag
        starts = np.arange(L, len(y) - n + 1, stride)
        if len(starts) == 0:
            continue
        idx = starts[:, None] + np.arange(-L, n)[None, :]
        Yw = y[idx].copy()
        Uw = u[idx]
        Yh = Yw.copy()
        for i in range(L, L + n):
            Yh[:, i] = gp_predict(m, _regressor(Yh, Uw, i, orders))
        err = Yh[:, L:] - Yw[:, L:]
        if not np.all(np.isfinite(err)):
            return np.inf
        sq += float(np.sum(err ** 2))
        count += err.size
    if count == 0:
        raise InvalidArgumentError(f"no record long enough for a {n}-step horizon")
    return sq / count


# ---------------------------------------------------------------- NARX wrapper

@dataclass
class GpNarx:
    model: GPModel
    orders: NarxOrders

    def simulate(self, d):
        return gp_simulate(self.model, d, self.orders)

    @property
    def warmup(self):
        return self.orders.max_lag

    def to_dict(self):
        k = self.model.kernel
        return {"kind": "gp", "orders": [self.orders.n_a, self.orders.n_b],
                "kernel": {"signal_var": k.signal_var, "lengthscales": k.lengthscales.tolist(),
                           "noise_var": k.noise_var},
                "Z": self.model.Z.tolist(), "y": self.model.y.tolist(),
                "alpha": self.model.alpha.tolist(), "y_offset": self.model.y_offset}

    @classmethod
    def from_dict(cls, d):
        k = SEKernel(**d["kernel"])
        Z = np.array(d["Z"], dtype=float)
        y = np.array(d["y"], dtype=float)
        L = np.linalg.cholesky(k(Z, Z) + k.noise_var * np.eye(len(y)))
        return cls(GPModel(Z, y, k, L, np.array(d["alpha"], dtype=float), float(d["y_offset"])),
                   NarxOrders(*d["orders"]))


def stack_regressors(records, orders, max_rows=2000):
    """Regressors of all records, uniformly strided down to at most ``max_rows``."""
    parts = [build_regressors(r, orders) for r in records]
    Z = np.vstack([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    if max_rows and len(y) > max_rows:
        keep = np.linspace(0, len(y) - 1, max_rows).round().astype(int)
        Z, y = Z[keep], y[keep]
    return Z, y


def fit_gp_narx(train, orders, signal_var=1.0, lengthscale=1.0, noise_var=1e-2, max_rows=2000):
    """Fit a GP-NARX model.

    ``signal_var`` and ``noise_var`` are relative to the variance of the
    centered targets; ``lengthscale`` multiplies the per-column standard
    deviation of the regressors (ARD).
    """
    Z, y = stack_regressors(train, orders, max_rows)
    offset = float(y.mean())
    var = float(np.var(y)) or 1.0
    std = Z.std(axis=0)
    std = np.where(std > 1e-12, std, 1.0)
    kern = SEKernel(signal_var * var, lengthscale * std, noise_var * var)
    return GpNarx(gp_fit(Z, y, kern, y_offset=offset), orders)


def _blocked_folds(records, folds):
    """Split every record into ``folds`` contiguous blocks; yield (train, val) lists."""
    pieces = []
    for rec in records:
        u, y = _io(rec)
        edges = np.linspace(0, len(y), folds + 1).round().astype(int)
        pieces.append([(u[a:b], y[a:b]) for a, b in zip(edges[:-1], edges[1:])])
    for i in range(folds):
        yield ([p for rec in pieces for j, p in enumerate(rec) if j != i],
               [rec[i] for rec in pieces])


def tune_hyperparameters(train, val, order_grid, kernel_grid, horizon=100, max_rows=2000,
                         stride=None, folds=2):
    """Grid search minimizing the ``horizon``-step prediction error.

    With validation records the error is measured on ``val``; with
    ``val`` empty, blocked ``folds``-fold cross validation over the training
    records is used instead.  ``kernel_grid`` holds dicts with relative
    ``signal_var``, ``lengthscale`` and ``noise_var`` (see
    :func:`fit_gp_narx`).  Ties go to smaller orders, then larger
    lengthscales.  Returns ``(kernel, orders, model, score)`` with the model
    refitted on all training records.
    """
    order_grid, kernel_grid = list(order_grid), list(kernel_grid)
    if not order_grid or not kernel_grid:
        raise InvalidArgumentError("hyper-parameter grids must be non-empty")
    train, val = list(train), list(val or [])
    splits = [(train, val)] if val else list(_blocked_folds(train, folds))
    best, errors = None, []
    for orders, kp in itertools.product(order_grid, kernel_grid):
        try:
            score = 0.0
            for tr, va in splits:
                cand = fit_gp_narx(tr, orders, max_rows=max_rows, **kp)
                score += nstep_error(cand.model, va, orders, horizon, stride) / len(splits)
        except (np.linalg.LinAlgError, SimulationFailure, InvalidArgumentError) as exc:
            errors.append(f"{orders}, {kp}: {exc}")
            continue
        if not np.isfinite(score):
            errors.append(f"{orders}, {kp}: non-finite validation error")
            continue
        key = (score, orders.n_a + orders.n_b, -float(kp.get("lengthscale", 1.0)))
        if best is None or key < best[0]:
            best = (key, orders, kp)
    if best is None:
        raise TuningFailure("no GP candidate could be fitted: " + "; ".join(errors))
    _, orders, kp = best
    model = fit_gp_narx(train, orders, max_rows=max_rows, **kp)
    return model.model.kernel, orders, model, best[0][0]


def save_gp(model, path):
    with open(path, "w") as fh:
        json.dump(model.to_dict(), fh)


def load_gp(path):
    with open(path) as fh:
        return GpNarx.from_dict(json.load(fh))
