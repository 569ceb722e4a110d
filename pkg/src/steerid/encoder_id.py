"""
Subspace-encoder state-space identification.

Three networks make up the model:

* ``psi`` maps a window of ``n_past`` past outputs and inputs to a state,
* ``f`` advances the state given the current input,
* ``h`` maps the state to the output.

Training minimizes the truncated-rollout loss ``V_enc`` over many short
subsections sampled from the training records, with gradients obtained by
backpropagation through the rollout and the encoder.

Networks work in standardized units; :class:`EncoderModel` stores the
per-channel offsets and scales and applies them at its boundary.
"""
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn_core
from .errors import InvalidArgumentError, RolloutFailure
from .signals import Dataset, nrmse

N_U = 2


@dataclass
class EncoderModel:
    psi: nn_core.MLP
    f: nn_core.MLP
    h: nn_core.MLP
    n_x: int
    n_past: int
    u_mean: np.ndarray = field(default_factory=lambda: np.zeros(N_U))
    u_std: np.ndarray = field(default_factory=lambda: np.ones(N_U))
    y_mean: float = 0.0
    y_std: float = 1.0

    def __post_init__(self):
        n_u = self.f.n_in - self.n_x
        if self.psi.n_in != self.n_past * (1 + n_u) or self.psi.n_out != self.n_x:
            raise InvalidArgumentError(f"psi must map {self.n_past * (1 + n_u)} -> {self.n_x}")
        if self.f.n_out != self.n_x or n_u < 1:
            raise InvalidArgumentError(f"f must map n_x + n_u -> {self.n_x}")
        if self.h.n_in != self.n_x or self.h.n_out != 1:
            raise InvalidArgumentError(f"h must map {self.n_x} -> 1")
        self.u_mean = np.asarray(self.u_mean, dtype=float)
        self.u_std = np.asarray(self.u_std, dtype=float)

    @property
    def n_u(self):
        return self.f.n_in - self.n_x

    @property
    def warmup(self):
        return self.n_past

    def params(self):
        return self.psi.params() + self.f.params() + self.h.params()

    def with_params(self, params):
        params = list(params)
        a = len(self.psi.params())
        b = a + len(self.f.params())
        return EncoderModel(nn_core.MLP.from_params(params[:a]), nn_core.MLP.from_params(params[a:b]),
                            nn_core.MLP.from_params(params[b:]), self.n_x, self.n_past,
                            self.u_mean, self.u_std, self.y_mean, self.y_std)

    def copy(self):
        return self.with_params([p.copy() for p in self.params()])

    def simulate(self, d):
        return simulate_free_run(self, d)


def encoder_init(n_x, n_past=None, hidden=(64, 64), seed=0, n_u=N_U):
    """Randomly initialized model; ``n_past`` defaults to ``n_x``."""
    n_past = n_x if n_past is None else n_past
    rng = np.random.default_rng(seed)
    s = rng.integers(0, 2 ** 31, size=3)
    psi = nn_core.mlp_init(n_past * (1 + n_u), n_x, hidden, seed=int(s[0]))
    f = nn_core.mlp_init(n_x + n_u, n_x, hidden, seed=int(s[1]))
    h = nn_core.mlp_init(n_x, 1, hidden, seed=int(s[2]))
    return EncoderModel(psi, f, h, n_x, n_past, np.zeros(n_u), np.ones(n_u))


def encoder_linear(A, B, C, n_past, psi_matrix=None):
    """Bypass-only model equivalent to ``x+ = A x + B u``, ``y = C x``."""
    A, B, C = (np.atleast_2d(np.asarray(m, dtype=float)) for m in (A, B, C))
    n_x, n_u = B.shape
    n_in = n_past * (1 + n_u)
    psi = nn_core.mlp_linear(n_in, n_x, matrix=np.zeros((n_x, n_in)) if psi_matrix is None else psi_matrix)
    f = nn_core.mlp_linear(n_x + n_u, n_x, matrix=np.hstack([A, B]))
    h = nn_core.mlp_linear(n_x, 1, matrix=C)
    return EncoderModel(psi, f, h, n_x, n_past, np.zeros(n_u), np.ones(n_u))


# ---------------------------------------------------------------- forward maps

def _past_features(past_y, past_u):
    # (..., n_past) and (..., n_past, n_u) -> (..., n_past * (1 + n_u)), chronological per lag
    return np.concatenate([past_y[..., None], past_u], axis=-1).reshape(past_y.shape[:-1] + (-1,))


def _norm_u(m, u):
    return (np.asarray(u, dtype=float) - m.u_mean) / m.u_std


def _norm_y(m, y):
    return (np.asarray(y, dtype=float) - m.y_mean) / m.y_std


def encode(m, past_y, past_u):
    """State estimate from the ``n_past`` samples preceding the current time."""
    past_y = np.asarray(past_y, dtype=float)
    past_u = np.asarray(past_u, dtype=float)
    if past_u.ndim == past_y.ndim:
        past_u = past_u[..., None]
    if past_y.shape[-1] != m.n_past or past_u.shape[-2:] != (m.n_past, m.n_u):
        raise InvalidArgumentError(
            f"past window must hold {m.n_past} samples of y and {m.n_u} inputs, "
            f"got {past_y.shape} and {past_u.shape}")
    return nn_core.mlp_forward(m.psi, _past_features(_norm_y(m, past_y), _norm_u(m, past_u)))


def rollout(m, x0, u_future):
    """Outputs ``h(x_i)`` for ``i = 0..len(u_future)-1`` with ``x_{i+1} = f(x_i, u_i)``."""
    x = np.asarray(x0, dtype=float)
    if x.shape != (m.n_x,):
        raise InvalidArgumentError(f"state must have shape ({m.n_x},), got {x.shape}")
    u = np.asarray(u_future, dtype=float)
    if u.ndim == 1:
        u = u[:, None]
    if u.ndim != 2 or u.shape[1] != m.n_u:
        raise InvalidArgumentError(f"inputs must have {m.n_u} columns, got shape {u.shape}")
    un = _norm_u(m, u)
    T = len(un)
    out = np.empty(T)
    for i in range(T):
        if not np.all(np.isfinite(x)):
            raise RolloutFailure(f"non-finite state at rollout step {i}", i)
        out[i] = nn_core.mlp_forward(m.h, x)[0]
        if i < T - 1:
            x = nn_core.mlp_forward(m.f, np.concatenate([x, un[i]]))
    return out * m.y_std + m.y_mean


def simulate_free_run(m, d):
    """Encode from the first ``n_past`` samples, then roll out over the rest.

    The returned signal has the record's length; its first ``n_past``
    entries repeat the measured output and carry no information.
    """
    u, y = (d.u, d.y) if isinstance(d, Dataset) else (np.asarray(d[0], dtype=float), np.asarray(d[1], dtype=float))
    if u.ndim == 1:
        u = u[:, None]
    p = m.n_past
    if len(y) <= p:
        raise InvalidArgumentError(f"record of length {len(y)} not longer than the encoder window {p}")
    x0 = encode(m, y[:p], u[:p])
    y_hat = np.empty(len(y))
    y_hat[:p] = y[:p]
    y_hat[p:] = rollout(m, x0, u[p:])
    return y_hat


# ---------------------------------------------------------------- subsections and loss

@dataclass
class TrainConfig:
    n: int = 100
    tau0: int = 0
    batch_size: int = 512
    lr: float = 1e-3
    epochs: int = 50
    seed: int = 0
    val_patience: int = None
    max_batches_per_epoch: int = None

    def __post_init__(self):
        if self.n < 0 or self.tau0 < 0 or self.batch_size < 1 or self.epochs < 0:
            raise InvalidArgumentError("n, tau0 and epochs must be >= 0 and batch_size >= 1")

    @property
    def span(self):
        return self.n + self.tau0 + 1


@dataclass
class Subsections:
    """A batch of windows: rows share the layout of :func:`sample_subsections`."""

    ids: list
    starts: np.ndarray
    past_y: np.ndarray    # (B, n_past)
    past_u: np.ndarray    # (B, n_past, n_u)
    u: np.ndarray         # (B, span, n_u)
    y: np.ndarray         # (B, span)

    def __len__(self):
        return len(self.starts)


def _records(datasets):
    out = []
    for d in datasets:
        if isinstance(d, Dataset):
            out.append((d.id, d.u, d.y))
        else:
            u, y = np.asarray(d[0], dtype=float), np.asarray(d[1], dtype=float)
            out.append(("", u[:, None] if u.ndim == 1 else u, y))
    return out


def valid_starts(datasets, n_past, cfg):
    """All ``(record index, k)`` with ``k - n_past >= 0`` and ``k + n + tau0 < N``."""
    pool = []
    for j, (_, _, y) in enumerate(_records(datasets)):
        ks = np.arange(n_past, len(y) - cfg.span + 1)
        pool.append(np.column_stack([np.full(len(ks), j), ks]))
    pool = np.vstack(pool) if pool else np.empty((0, 2), dtype=int)
    if len(pool) == 0:
        raise InvalidArgumentError(
            f"no record is long enough for a window of {n_past} + {cfg.span} samples")
    return pool.astype(int)


def gather(datasets, n_past, cfg, picks):
    """Build a :class:`Subsections` batch from ``(record index, k)`` pairs."""
    recs = _records(datasets)
    B = len(picks)
    n_u = recs[0][1].shape[1]
    S = cfg.span
    py = np.empty((B, n_past))
    pu = np.empty((B, n_past, n_u))
    fu = np.empty((B, S, n_u))
    fy = np.empty((B, S))
    for b, (j, k) in enumerate(picks):
        _, u, y = recs[j]
        py[b] = y[k - n_past:k]
        pu[b] = u[k - n_past:k]
        fu[b] = u[k:k + S]
        fy[b] = y[k:k + S]
    return Subsections([recs[j][0] for j, _ in picks], np.asarray(picks)[:, 1].copy(), py, pu, fu, fy)


def sample_subsections(datasets, n_past, cfg, rng, batch_size=None):
    """Uniformly sample ``batch_size`` valid windows across all records."""
    pool = valid_starts(datasets, n_past, cfg)
    B = cfg.batch_size if batch_size is None else batch_size
    idx = rng.integers(0, len(pool), size=B)
    return gather(datasets, n_past, cfg, pool[idx])


def v_enc_loss(m, batch, cfg, gradient=True):
    """Truncated-rollout loss and its gradient.

    ``V = 1/(2 B (n+1)) * sum_b sum_{i=tau0}^{n+tau0} (y_{k+i} - yhat_{k->k+i})^2``
    in standardized output units.  Returns ``(loss, grads)`` with ``grads``
    aligned with ``m.params()`` (``None`` when ``gradient`` is false).
    """
    B = len(batch)
    if B == 0:
        raise InvalidArgumentError("empty batch")
    S = cfg.span
    if batch.u.shape[1] != S:
        raise InvalidArgumentError(f"batch windows hold {batch.u.shape[1]} samples, config needs {S}")
    nx = m.n_x
    un = _norm_u(m, batch.u)
    yn = _norm_y(m, batch.y)
    feats = _past_features(_norm_y(m, batch.past_y), _norm_u(m, batch.past_u))
    x, psi_cache = nn_core.mlp_forward_cached(m.psi, feats)
    h_caches, f_caches = [], []
    y_hat = np.empty((B, S))
    for i in range(S):
        if not np.all(np.isfinite(x)):
            raise RolloutFailure(f"non-finite state at rollout step {i}", i)
        out, hc = nn_core.mlp_forward_cached(m.h, x)
        y_hat[:, i] = out[:, 0]
        h_caches.append(hc)
        if i < S - 1:
            x, fc = nn_core.mlp_forward_cached(m.f, np.hstack([x, un[:, i]]))
            f_caches.append(fc)
    err = y_hat - yn
    err[:, :cfg.tau0] = 0.0
    scale = 1.0 / (B * (cfg.n + 1))
    loss = 0.5 * scale * float(np.sum(err * err))
    if not gradient:
        return loss, None
    adj_y = err * scale
    g_h = m.h.zeros_like()
    g_f = m.f.zeros_like()
    gx = np.zeros((B, nx))
    for i in range(S - 1, -1, -1):
        gh, dx = nn_core.mlp_backward(m.h, h_caches[i], adj_y[:, i:i + 1])
        nn_core.add_grads(g_h, gh)
        gx = gx + dx
        if i > 0:
            gf, dz = nn_core.mlp_backward(m.f, f_caches[i - 1], gx)
            nn_core.add_grads(g_f, gf)
            gx = dz[:, :nx]
    g_psi, _ = nn_core.mlp_backward(m.psi, psi_cache, gx)
    return loss, g_psi.params() + g_f.params() + g_h.params()


# ---------------------------------------------------------------- training

@dataclass
class TrainResult:
    model: EncoderModel
    history: list
    best_epoch: int
    failed: bool = False
    message: str = ""


def standardization(datasets):
    """Per-channel mean and standard deviation over all records."""
    recs = _records(datasets)
    U = np.vstack([r[1] for r in recs])
    Y = np.concatenate([r[2] for r in recs])
    u_std = U.std(axis=0)
    y_std = Y.std()
    return (U.mean(axis=0), np.where(u_std > 1e-12, u_std, 1.0),
            float(Y.mean()), float(y_std if y_std > 1e-12 else 1.0))


def validation_nrmse(m, datasets):
    """Mean free-run NRMSE over records, measured after the encoder window."""
    vals = []
    for d in datasets:
        y = d.y if isinstance(d, Dataset) else np.asarray(d[1], dtype=float)
        try:
            y_hat = simulate_free_run(m, d)
        except RolloutFailure:
            return math.inf
        p = m.n_past
        v = nrmse(y[p:], y_hat[p:])
        if not np.isfinite(v):
            return math.inf
        vals.append(v)
    return float(np.mean(vals))


def train(m, train_sets, val_sets, cfg, standardize=True, log=None):
    """Adam training on ``V_enc`` with best-validation-epoch selection.

    Each epoch visits a fresh permutation of the valid start indices in
    batches of ``cfg.batch_size`` (optionally capped).  After every epoch the
    free-run NRMSE on ``val_sets`` (or the training records when empty) is
    measured; the parameters of the best epoch are returned.
    """
    train_sets = list(train_sets)
    val_sets = list(val_sets) or train_sets
    if not train_sets:
        raise InvalidArgumentError("no training records")
    if standardize:
        um, us, ym, ys = standardization(train_sets)
        m = EncoderModel(m.psi, m.f, m.h, m.n_x, m.n_past, um, us, ym, ys)
    rng = np.random.default_rng(cfg.seed)
    pool = valid_starts(train_sets, m.n_past, cfg)
    params = [p.copy() for p in m.params()]
    state = nn_core.adam_init(params)
    best = (validation_nrmse(m, val_sets), 0, m.copy())
    history = []
    stale = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(pool))
        n_batches = max(1, len(order) // cfg.batch_size)
        if cfg.max_batches_per_epoch:
            n_batches = min(n_batches, cfg.max_batches_per_epoch)
        losses = []
        for b in range(n_batches):
            picks = pool[order[b * cfg.batch_size:(b + 1) * cfg.batch_size]]
            batch = gather(train_sets, m.n_past, cfg, picks)
            try:
                loss, grads = v_enc_loss(m.with_params(params), batch, cfg)
            except RolloutFailure as exc:
                return TrainResult(best[2], history, best[1], True, f"epoch {epoch}: {exc}")
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads):
                return TrainResult(best[2], history, best[1], True,
                                   f"non-finite loss at epoch {epoch}, batch {b}")
            losses.append(loss)
            params, state = nn_core.adam_step(params, grads, state, cfg.lr)
        cur = m.with_params(params)
        val = validation_nrmse(cur, val_sets)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_nrmse": val})
        if log:
            log(f"epoch {epoch}: train_loss={np.mean(losses):.6g} val_nrmse={val:.6g}")
        if val < best[0]:
            best = (val, epoch, cur.copy())
            stale = 0
        else:
            stale += 1
            if cfg.val_patience and stale >= cfg.val_patience:
                break
    return TrainResult(best[2], history, best[1])


# ---------------------------------------------------------------- checkpoint

def encoder_to_dict(m, config=None):
    return {"kind": "encoder", "n_x": m.n_x, "n_past": m.n_past,
            "psi": nn_core.mlp_to_dict(m.psi), "f": nn_core.mlp_to_dict(m.f), "h": nn_core.mlp_to_dict(m.h),
            "normalization": {"u_mean": m.u_mean.tolist(), "u_std": m.u_std.tolist(),
                              "y_mean": m.y_mean, "y_std": m.y_std},
            "config": asdict(config) if config is not None else None}


def encoder_from_dict(d):
    nrm = d["normalization"]
    return EncoderModel(nn_core.mlp_from_dict(d["psi"]), nn_core.mlp_from_dict(d["f"]),
                        nn_core.mlp_from_dict(d["h"]), int(d["n_x"]), int(d["n_past"]),
                        np.array(nrm["u_mean"]), np.array(nrm["u_std"]),
                        float(nrm["y_mean"]), float(nrm["y_std"]))


def save_encoder(m, path, config=None):
    with open(path, "w") as fh:
        json.dump(encoder_to_dict(m, config), fh)


def load_encoder(path):
    with open(path) as fh:
        return encoder_from_dict(json.load(fh))


def write_history(history, path):
    with open(path, "w") as fh:
        fh.write("epoch,train_loss,val_nrmse\n")
        for row in history:
            fh.write(f"{row['epoch']},{row['train_loss']!r},{row['val_nrmse']!r}\n")
