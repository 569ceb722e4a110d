"""
Experiment orchestration: campaign generation, per-method fitting and
free-run evaluation with NRMSE reports and plots.

The configuration is a YAML document; see ``docs/config.md`` for the
schema.  Every random number derives from the top-level ``seed`` plus
per-item offsets, so runs are reproducible.
"""
import copy
import json
import logging
import math
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import encoder_id, gp_id, linear_id, signals, vehicle_sim
from .errors import ConfigError, DataError, InvalidArgumentError, OptimizationFailure

log = logging.getLogger("steerid")

METHODS = ("lti", "lti_dz", "gp", "encoder")
METHOD_LABELS = {"lti": "LTI-SS", "lti_dz": "LTI-SS*", "gp": "NL-GP", "encoder": "NL-ANN-SS"}

DEFAULT_T_S = {"lti": 0.1, "lti_dz": 0.1, "gp": 0.1, "encoder": 0.2}


# ---------------------------------------------------------------- configuration

@dataclass
class MethodGroup:
    """One model of a method: trained on ``train``/``val``, evaluated on ``test``."""

    name: str
    train: tuple
    val: tuple
    test: tuple


@dataclass
class ExperimentConfig:
    seed: int
    campaign: list            # list of (ExperimentSpec, seed offset, NoiseModel)
    params: vehicle_sim.VehicleParams
    plan: signals.SplitPlan
    methods: dict             # method -> hyper-parameter dict (with "groups")
    output_dir: Path
    write_truth: bool = False
    warmup_s: float = 0.0
    raw: dict = field(default_factory=dict, repr=False)

    def method_groups(self, method):
        return [MethodGroup(**g) for g in self.methods[method]["groups"]]


def _noise(d, base):
    if d is None:
        return base
    d = dict(d)
    try:
        return vehicle_sim.NoiseModel(float(d.get("sigma_e", base.sigma_e)),
                                      tuple(float(a) for a in d.get("ar_coeffs", base.ar_coeffs)))
    except (TypeError, InvalidArgumentError) as exc:
        raise ConfigError(f"invalid noise settings {d}: {exc}") from exc


def _ids(x, what):
    if x is None:
        return ()
    if isinstance(x, str) or not all(isinstance(i, str) for i in x):
        raise ConfigError(f"{what} must be a list of dataset labels")
    return tuple(x)


def load_config(source, seed=None, out=None):
    """Parse and validate a config given as a YAML file path or an already-parsed dict."""
    if isinstance(source, dict):
        raw = copy.deepcopy(source)
        base_dir = Path.cwd()
    else:
        path = Path(source)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = yaml.safe_load(path.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: malformed YAML: {exc}") from exc
        base_dir = path.parent
    if not isinstance(raw, dict):
        raise ConfigError("config document must be a mapping")
    known = {"seed", "campaign", "campaign_defaults", "simulator", "noise", "split", "methods",
             "output_dir", "write_truth", "evaluation"}
    unknown = set(raw) - known
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")

    top_seed = int(raw.get("seed", 0) if seed is None else seed)
    try:
        params = vehicle_sim.VehicleParams().override(raw.get("simulator") or {})
    except (InvalidArgumentError, TypeError, ValueError) as exc:
        raise ConfigError(f"simulator overrides: {exc}") from exc
    base_noise = _noise(raw.get("noise"), vehicle_sim.NoiseModel())

    entries = raw.get("campaign")
    if not entries:
        raise ConfigError("campaign must list at least one experiment")
    defaults = dict(raw.get("campaign_defaults") or {})
    campaign, labels = [], set()
    for i, e in enumerate(entries):
        e = {**defaults, **dict(e)}
        label = e.get("id")
        if not label:
            raise ConfigError(f"campaign entry {i} has no id")
        if label in labels:
            raise ConfigError(f"duplicate dataset label {label!r}")
        labels.add(label)
        offset = int(e.pop("seed", i))
        noise = _noise(e.pop("noise", None), base_noise)
        try:
            spec = vehicle_sim.ExperimentSpec.from_dict(e)
        except (TypeError, InvalidArgumentError) as exc:
            raise ConfigError(f"campaign entry {label!r}: {exc}") from exc
        campaign.append((spec, offset, noise))

    sp = raw.get("split") or {}
    try:
        plan = signals.SplitPlan(_ids(sp.get("train"), "split.train"), _ids(sp.get("val"), "split.val"),
                                 _ids(sp.get("test"), "split.test"))
    except InvalidArgumentError as exc:
        raise ConfigError(f"split: {exc}") from exc
    missing = [i for i in plan.all_ids if i not in labels]
    if missing:
        raise ConfigError(f"split references unknown datasets: {missing}")
    if not plan.train_ids or not plan.test_ids:
        raise ConfigError("split needs training and test datasets")

    methods = {}
    for name, hp in (raw.get("methods") or {}).items():
        if name not in METHODS:
            raise ConfigError(f"unknown method {name!r}; expected one of {list(METHODS)}")
        hp = dict(hp or {})
        hp.setdefault("T_s", DEFAULT_T_S[name])
        groups = hp.pop("groups", None) or [{"name": "all", "train": list(plan.train_ids),
                                             "val": list(plan.val_ids), "test": list(plan.test_ids)}]
        fit_ok = set(plan.train_ids) | set(plan.val_ids)
        parsed = []
        for g in groups:
            g = {"name": str(g.get("name", "all")), "train": _ids(g.get("train"), "group train"),
                 "val": _ids(g.get("val"), "group val"), "test": _ids(g.get("test"), "group test")}
            if not g["train"]:
                raise ConfigError(f"{name}/{g['name']}: no training datasets")
            leak = [i for i in g["train"] + g["val"] if i not in fit_ok]
            if leak:
                raise ConfigError(f"{name}/{g['name']}: fitting may only use train/val datasets, got {leak}")
            bad = [i for i in g["test"] if i not in plan.test_ids]
            if bad:
                raise ConfigError(f"{name}/{g['name']}: {bad} are not test datasets")
            parsed.append(g)
        hp["groups"] = parsed
        methods[name] = hp
    if not methods:
        raise ConfigError("no methods configured")

    out_dir = Path(out) if out is not None else base_dir / raw.get("output_dir", "out")
    ev = raw.get("evaluation") or {}
    if not isinstance(ev, dict):
        raise ConfigError("evaluation must be a mapping")
    return ExperimentConfig(top_seed, campaign, params, plan, methods, out_dir,
                            bool(raw.get("write_truth", False)), float(ev.get("warmup_s", 0.0)), raw)


# ---------------------------------------------------------------- dataset store

class DatasetStore:
    """Reads campaign CSVs and records every access.

    ``forbidden`` labels raise :class:`DataError` on access so that fitting
    can never touch test data.
    """

    def __init__(self, root, forbidden=()):
        self.root = Path(root)
        self.forbidden = set(forbidden)
        self.accessed = []

    def path(self, label):
        return self.root / "data" / f"{label}.csv"

    def load(self, label):
        if label in self.forbidden:
            raise DataError(f"access to held-out dataset {label!r} is not allowed here")
        self.accessed.append(label)
        return signals.read_csv(self.path(label), id=label)


# ---------------------------------------------------------------- generate

def generate(cfg):
    """Simulate every campaign entry; write CSVs and ``manifest.json``."""
    data_dir = cfg.output_dir / "data"
    data_dir.mkdir(parents=True, exist_ok=True)
    manifest = []
    for spec, offset, noise in cfg.campaign:
        seed = cfg.seed * 1000 + offset
        log.info("simulating %s (%.2f m/s, %.0f s)", spec.id, spec.speed, spec.duration)
        res = vehicle_sim.run_experiment(spec, cfg.params, noise, seed=seed, return_truth=cfg.write_truth)
        d, truth = res if cfg.write_truth else (res, None)
        signals.write_csv(d, data_dir / f"{spec.id}.csv")
        if truth is not None:
            vehicle_sim.write_truth_csv(truth, data_dir / f"{spec.id}.truth.csv")
        manifest.append({"id": spec.id, "speed": spec.speed, "duration": spec.duration,
                         "samples": len(d), "T_s": spec.T_s, "seed": seed})
    with open(cfg.output_dir / "manifest.json", "w") as fh:
        json.dump({"datasets": manifest}, fh, indent=1)
    return manifest


# ---------------------------------------------------------------- fit

def _resample(d, T_s):
    return signals.decimate_dataset(d, signals.decimation_factor(d.T_s, T_s))


def model_path(cfg, method, group):
    return cfg.output_dir / "models" / f"{method}__{group}.json"


def _fit_lti(hp, train, val, dead_zone):
    keys = {f.name for f in fields(linear_id.LtiConfig)}
    kw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in hp.items() if k in keys}
    kw["dead_zone"] = dead_zone
    ident = linear_id.fit_lti(train, val or None, linear_id.LtiConfig(**kw))
    hist = getattr(ident.model, "history", [])
    return ident.to_dict(), [f"{i},{h!r}" for i, h in enumerate(hist)]


def _fit_gp(hp, train, val):
    orders = [gp_id.NarxOrders(*o) for o in hp.get("orders", [[9, 9]])]
    grid = hp.get("kernel_grid") or [{"lengthscale": 1.0, "noise_var": 1e-2}]
    kernel, orders, model, score = gp_id.tune_hyperparameters(
        train, val, orders, grid, horizon=int(hp.get("horizon", 100)),
        max_rows=int(hp.get("max_rows", 2000)), folds=int(hp.get("folds", 2)))
    lines = [f"orders={orders.n_a},{orders.n_b}", f"signal_var={kernel.signal_var!r}",
             f"noise_var={kernel.noise_var!r}", f"cv_error={score!r}"]
    return model.to_dict(), lines


def _fit_encoder(hp, train, val, seed):
    keys = {f.name for f in fields(encoder_id.TrainConfig)}
    tc = encoder_id.TrainConfig(**{k: v for k, v in hp.items() if k in keys and k != "seed"},
                                seed=seed)
    m = encoder_id.encoder_init(int(hp.get("n_x", 40)), hp.get("n_past"),
                                tuple(hp.get("hidden", (64, 64))), seed=seed)
    res = encoder_id.train(m, train, val, tc, standardize=bool(hp.get("standardize", True)),
                           log=log.debug)
    return res, tc


def fit(cfg, method, store=None):
    """Fit every group of ``method``; returns the list of written model paths."""
    if method not in cfg.methods:
        raise ConfigError(f"method {method!r} is not configured")
    store = store or DatasetStore(cfg.output_dir, forbidden=cfg.plan.test_ids)
    hp = cfg.methods[method]
    T_s = float(hp["T_s"])
    (cfg.output_dir / "models").mkdir(parents=True, exist_ok=True)
    written = []
    failures = []
    for gi, g in enumerate(cfg.method_groups(method)):
        train = [_resample(store.load(i), T_s) for i in g.train]
        val = [_resample(store.load(i), T_s) for i in g.val]
        log.info("fitting %s/%s on %s", method, g.name, ",".join(g.train))
        path = model_path(cfg, method, g.name)
        if method in ("lti", "lti_dz"):
            doc, lines = _fit_lti(hp, train, val, method == "lti_dz")
            header = "epoch,train_loss"
        elif method == "gp":
            doc, lines = _fit_gp(hp, train, val)
            header = "setting"
        else:
            seed = cfg.seed * 1000 + int(hp.get("seed", 0)) + gi
            res, tc = _fit_encoder(hp, train, val, seed)
            doc = encoder_id.encoder_to_dict(res.model, tc)
            doc["best_epoch"] = res.best_epoch
            encoder_id.write_history(res.history, path.with_suffix(".history.csv"))
            lines = [f"best_epoch={res.best_epoch}", f"failed={res.failed}"]
            header = "summary"
            if res.failed:
                failures.append(f"{method}/{g.name}: {res.message}")
        doc.update({"method": method, "group": g.name, "T_s": T_s, "train": list(g.train),
                    "val": list(g.val), "test": list(g.test)})
        with open(path, "w") as fh:
            json.dump(doc, fh)
        path.with_suffix(".log.csv").write_text("\n".join([header] + lines) + "\n")
        written.append(path)
    if failures:
        raise OptimizationFailure("; ".join(failures), math.nan)
    return written


# ---------------------------------------------------------------- evaluate

def load_model(path):
    """Rebuild a fitted model from its JSON artifact."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"model file not found: {path}")
    with open(path) as fh:
        doc = json.load(fh)
    kind = doc.get("kind")
    if kind == "lti":
        model = linear_id.LtiIdentified.from_dict(doc)
    elif kind == "gp":
        model = gp_id.GpNarx.from_dict(doc)
    elif kind == "encoder":
        model = encoder_id.encoder_from_dict(doc)
    else:
        raise DataError(f"{path}: unknown model kind {kind!r}")
    return model, doc


def _fmt(x):
    return repr(float(x))


def evaluate(cfg, methods=None):
    """Free-run every fitted model on its test sets and write the report files.

    NRMSE is computed after a common warm-up (in seconds) equal to the longest
    initialization window among the evaluated models, so every method is
    scored on the same time span.
    """
    methods = [m for m in (methods or METHODS) if m in cfg.methods]
    store = DatasetStore(cfg.output_dir)
    rep_dir = cfg.output_dir / "report"
    rep_dir.mkdir(parents=True, exist_ok=True)
    jobs = []
    for method in methods:
        for g in cfg.method_groups(method):
            model, doc = load_model(model_path(cfg, method, g.name))
            for test_id in g.test:
                jobs.append((method, test_id, model, float(doc["T_s"])))
    if not jobs:
        raise ConfigError("no (method, test set) pairs to evaluate")
    warm_s = max(max(m.warmup * T for _, _, m, T in jobs), cfg.warmup_s)
    results = {}
    traces = {}
    cache = {}
    for method, test_id, model, T_s in jobs:
        if test_id not in cache:
            cache[test_id] = store.load(test_id)
        d = _resample(cache[test_id], T_s)
        y_hat = model.simulate(d)
        w = int(math.ceil(warm_s / T_s - 1e-9))
        y, yh = d.y[w:], y_hat[w:]
        evo = signals.nrmse_evolution(y, yh)
        results[(method, test_id)] = 100.0 * evo[-1]
        traces[(method, test_id)] = (d.t[w:], y, yh, evo)
        with open(rep_dir / f"nrmse_evolution_{method}_{test_id}.csv", "w") as fh:
            fh.write("k,nrmse\n")
            for k, v in enumerate(evo, start=1):
                fh.write(f"{k},{_fmt(100.0 * v)}\n")
        with open(rep_dir / f"error_{method}_{test_id}.csv", "w") as fh:
            fh.write("t,y,y_hat,error\n")
            for row in zip(d.t[w:], y, yh, y - yh):
                fh.write(",".join(_fmt(v) for v in row) + "\n")
    test_ids = [t for t in cfg.plan.test_ids if any(t == k[1] for k in results)]
    with open(rep_dir / "report.csv", "w") as fh:
        fh.write("metric," + ",".join(METHOD_LABELS[m] for m in methods) + "\n")
        for t in test_ids:
            vals = [_fmt(results[(m, t)]) if (m, t) in results else "" for m in methods]
            fh.write(f"NRMSE(N) {t}," + ",".join(vals) + "\n")
    for t in test_ids:
        plot_test_set(rep_dir / f"plot_{t}.svg", t,
                      {METHOD_LABELS[m]: traces[(m, t)] for m in methods if (m, t) in traces})
    return results


def plot_test_set(path, test_id, traces):
    """Measured output, simulation errors and NRMSE(k) for one test set."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    matplotlib.rcParams["svg.hashsalt"] = "steerid"
    fig, axes = plt.subplots(3, 1, figsize=(8, 8), sharex=True)
    first = next(iter(traces.values()))
    axes[0].plot(first[0], first[1], color="k", lw=0.8, label="measured")
    for label, (t, y, yh, evo) in traces.items():
        axes[0].plot(t, yh, lw=0.7, label=label)
        axes[1].plot(t, y - yh, lw=0.7, label=label)
        axes[2].plot(t, 100.0 * evo, lw=0.9, label=label)
    axes[0].set_ylabel("r [rad/s]")
    axes[1].set_ylabel("error [rad/s]")
    axes[2].set_ylabel("NRMSE(k) [%]")
    axes[2].set_xlabel("t [s]")
    axes[0].set_title(test_id)
    axes[0].legend(fontsize=7, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def read_report(path):
    """``(methods, rows)`` with rows ``(label, [values or None])``."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"report not found: {path}")
    lines = path.read_text().strip().splitlines()
    methods = lines[0].split(",")[1:]
    rows = []
    for line in lines[1:]:
        label, *vals = line.split(",")
        rows.append((label, [float(v) if v else None for v in vals]))
    return methods, rows


def format_report(path):
    methods, rows = read_report(path)
    width = max(12, *(len(m) + 2 for m in methods))
    label_w = max(len(r[0]) for r in rows) + 2
    out = ["".ljust(label_w) + "".join(m.rjust(width) for m in methods)]
    for label, vals in rows:
        cells = [(f"{v:.1f}%" if v is not None else "-").rjust(width) for v in vals]
        out.append(label.ljust(label_w) + "".join(cells))
    return "\n".join(out)
