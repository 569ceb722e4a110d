"""
Signal and dataset utilities: PRBS excitation, anti-alias decimation, the
dead-zone map, train/validation/test splitting, NRMSE and the dataset CSV
format.
"""
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.signal

from .errors import DataError, InvalidArgumentError, UndefinedMetricError

CSV_HEADER = "t,u_s,v,r"


@dataclass(frozen=True)
class Dataset:
    """One uniformly sampled experiment record.

    ``u_s`` is the requested steering torque command, ``v`` the absolute
    speed and ``r`` the measured yaw rate.
    """

    t: np.ndarray
    u_s: np.ndarray
    v: np.ndarray
    r: np.ndarray
    T_s: float
    id: str = ""
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        for name in ("t", "u_s", "v", "r"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        n = len(self.t)
        if n < 2 or any(len(getattr(self, c)) != n for c in ("u_s", "v", "r")):
            raise InvalidArgumentError(f"dataset {self.id!r}: channels must share a length >= 2")
        if self.T_s <= 0:
            raise InvalidArgumentError("sample time must be positive")
        if np.max(np.abs(np.diff(self.t) - self.T_s)) > 1e-9 * max(1.0, abs(self.t[-1])):
            raise InvalidArgumentError(f"dataset {self.id!r}: time vector is not uniform with spacing {self.T_s}")

    def __len__(self):
        return len(self.t)

    @property
    def u(self):
        """Input matrix ``(N, 2)`` with columns ``(u_s, v)``."""
        return np.column_stack((self.u_s, self.v))

    @property
    def y(self):
        return self.r

    def with_channels(self, **kw):
        return replace(self, **kw)


# ---------------------------------------------------------------- PRBS

# maximal-length Fibonacci LFSR feedback taps (1-indexed)
_LFSR_TAPS = {
    5: (5, 3), 6: (6, 5), 7: (7, 6), 9: (9, 5), 10: (10, 7), 11: (11, 9),
    15: (15, 14), 17: (17, 14), 18: (18, 11), 20: (20, 17), 23: (23, 18),
}


def lfsr_bits(order, n_bits, seed=1):
    """``n_bits`` output bits of a maximal-length LFSR of the given order."""
    if order not in _LFSR_TAPS:
        raise InvalidArgumentError(f"unsupported LFSR order {order}")
    taps = _LFSR_TAPS[order]
    mask = (1 << order) - 1
    state = seed & mask or 1
    bits = np.empty(n_bits, dtype=np.int8)
    for i in range(n_bits):
        bits[i] = (state >> (order - 1)) & 1
        fb = 0
        for tp in taps:
            fb ^= (state >> (tp - 1)) & 1
        state = ((state << 1) & mask) | fb
    return bits


def prbs_hold(band_hz, T_s):
    """Samples per PRBS clock period for a given excitation bandwidth."""
    return max(1, int(round(1.0 / (2.0 * band_hz * T_s))))


def prbs(n_samples, band_hz, amplitude, T_s, seed=1):
    """Two-level pseudo random binary signal in ``{-amplitude, +amplitude}``.

    The level may switch every ``round(1/(2 band_hz T_s))`` samples; the
    switching pattern comes from a maximal-length LFSR whose initial register
    is derived from ``seed``.
    """
    if band_hz <= 0 or band_hz > 1.0 / (2.0 * T_s):
        raise InvalidArgumentError(f"PRBS band {band_hz} Hz outside (0, Nyquist={0.5 / T_s}] Hz")
    hold = prbs_hold(band_hz, T_s)
    n_bits = -(-n_samples // hold)
    order = next((o for o in sorted(_LFSR_TAPS) if (1 << o) - 1 >= n_bits), max(_LFSR_TAPS))
    # spread seeds across the register so nearby seeds give unrelated phases
    rs = np.random.default_rng(seed).integers(1, 1 << order)
    bits = lfsr_bits(order, n_bits, int(rs))
    levels = np.where(bits == 1, 1.0, -1.0) * float(amplitude)
    out = np.repeat(levels, hold)[:n_samples]
    return out + 0.0


# ---------------------------------------------------------------- decimation

def fir_taps(factor):
    """Hamming-windowed sinc low-pass of order ``8*factor``, cutoff ``0.8*pi/factor``."""
    return scipy.signal.firwin(8 * factor + 1, 0.8 / factor, window="hamming")


def fir_decimate(x, factor):
    """Low-pass filter with zero group delay, then keep every ``factor``-th sample.

    Edges are padded with the end values so a constant signal passes through
    unchanged.
    """
    if int(factor) != factor or factor < 1:
        raise InvalidArgumentError(f"decimation factor must be a positive integer, got {factor}")
    x = np.asarray(x, dtype=float)
    if factor == 1:
        return x.copy()
    taps = fir_taps(factor)
    if len(x) < len(taps):
        raise InvalidArgumentError(f"signal of length {len(x)} shorter than filter ({len(taps)} taps)")
    half = len(taps) // 2
    padded = np.pad(x, half, mode="edge")
    y = np.convolve(padded, taps, mode="valid")
    return y[::factor]


def decimate_dataset(d, factor):
    if factor == 1:
        return d
    t = d.t[0] + np.arange(-(-len(d) // factor)) * d.T_s * factor
    return Dataset(t=t, u_s=fir_decimate(d.u_s, factor), v=fir_decimate(d.v, factor),
                   r=fir_decimate(d.r, factor), T_s=d.T_s * factor, id=d.id, meta=dict(d.meta))


def decimation_factor(T_from, T_to):
    f = T_to / T_from
    if abs(f - round(f)) > 1e-9 or round(f) < 1:
        raise InvalidArgumentError(f"target sample time {T_to} is not an integer multiple of {T_from}")
    return int(round(f))


# ---------------------------------------------------------------- static maps and metrics

def dead_zone(u, lo=-0.13, hi=0.17):
    """Zero inside ``[lo, hi]``, ``u - hi`` above and ``u - lo`` below."""
    if lo > hi:
        raise InvalidArgumentError(f"dead-zone edges out of order: lo={lo} > hi={hi}")
    u = np.asarray(u, dtype=float)
    out = np.where(u > hi, u - hi, np.where(u < lo, u - lo, 0.0))
    return out if out.ndim else float(out)


def nrmse_evolution(y, y_hat):
    """Cumulative NRMSE(k) for k = 1..N (denominator uses the full-record mean)."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise InvalidArgumentError(f"length mismatch {y.shape} vs {y_hat.shape}")
    err = y - y_hat
    dev = y - y.mean(axis=0)
    if err.ndim > 1:
        err = np.sum(err ** 2, axis=1)
        dev = np.sum(dev ** 2, axis=1)
    else:
        err, dev = err ** 2, dev ** 2
    num = np.cumsum(err)
    den = np.cumsum(dev)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt(num) / np.sqrt(den)


def nrmse(y, y_hat, k=None):
    """Cumulative normalized RMS error up to sample ``k`` (1-based, default N)."""
    y = np.asarray(y, dtype=float)
    n = len(y)
    if k is None:
        k = n
    if not 1 <= k <= n:
        raise InvalidArgumentError(f"k={k} outside 1..{n}")
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape:
        raise InvalidArgumentError(f"length mismatch {y.shape} vs {y_hat.shape}")
    dev = (y[:k] - y.mean(axis=0)) ** 2
    den = np.sum(dev)
    if den == 0.0:
        raise UndefinedMetricError("NRMSE undefined: output equals its mean on the window")
    return float(np.sqrt(np.sum((y[:k] - y_hat[:k]) ** 2)) / np.sqrt(den))


# ---------------------------------------------------------------- splitting

@dataclass(frozen=True)
class SplitPlan:
    train_ids: tuple
    val_ids: tuple = ()
    test_ids: tuple = ()

    def __post_init__(self):
        for name in ("train_ids", "val_ids", "test_ids"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        seen = {}
        for name in ("train_ids", "val_ids", "test_ids"):
            for i in getattr(self, name):
                if i in seen:
                    raise InvalidArgumentError(f"dataset {i!r} appears in both {seen[i]} and {name}")
                seen[i] = name

    @property
    def all_ids(self):
        return self.train_ids + self.val_ids + self.test_ids


def default_split():
    """Default 13/3/4 plan over labels D1..D21."""
    lab = lambda ids: tuple(f"D{i}" for i in ids)
    return SplitPlan(train_ids=lab([1, 3, 4, 7, 8, 9, 10, 11, 12, 15, 16, 18, 20]),
                     val_ids=lab([2, 6, 19]), test_ids=lab([5, 13, 14, 17]))


def split(datasets, plan):
    """Partition ``datasets`` (mapping or iterable of Dataset) into train/val/test lists."""
    by_id = datasets if isinstance(datasets, dict) else {d.id: d for d in datasets}
    missing = [i for i in plan.all_ids if i not in by_id]
    if missing:
        raise InvalidArgumentError(f"split plan references unknown datasets: {missing}")
    return ([by_id[i] for i in plan.train_ids], [by_id[i] for i in plan.val_ids],
            [by_id[i] for i in plan.test_ids])


# ---------------------------------------------------------------- CSV

def write_csv(d, path):
    path = Path(path)
    data = np.column_stack((d.t, d.u_s, d.v, d.r))
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=CSV_HEADER, comments="")


def read_csv(path, id=None):
    path = Path(path)
    if not path.exists():
        raise DataError(f"dataset file not found: {path}")
    with open(path) as fh:
        header = fh.readline().strip()
    if header != CSV_HEADER:
        raise DataError(f"{path}: expected header {CSV_HEADER!r}, got {header!r}")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    T_s = float(np.round(np.median(np.diff(data[:, 0])), 12))
    return Dataset(t=data[:, 0], u_s=data[:, 1], v=data[:, 2], r=data[:, 3], T_s=T_s,
                   id=id if id is not None else path.stem)
