"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import math
import time
from importlib import resources

import numpy as np
import pytest
import scipy.linalg

from steerid import cli, encoder_id as enc, gp_id, linear_id as li, pipeline, signals, vehicle_sim as vs

CONFIGS = resources.files("steerid") / "configs"


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail, t0):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {title} ({detail}; {time.time() - t0:.1f} s)"
        with capsys.disabled():
            print("\n" + line)
        assert ok, line
    return emit


# ---------------------------------------------------------------- 1

def test_criterion_1_gradient_exactness(verdict):
    t0 = time.time()
    worst = 0.0
    h = 1e-5
    for seed in range(10):
        rng = np.random.default_rng(seed)
        n_x = int(rng.integers(1, 5))
        cfg = enc.TrainConfig(n=int(rng.integers(0, 6)), tau0=int(rng.integers(0, 2)))
        m = enc.encoder_init(n_x, int(rng.integers(1, 4)), hidden=(int(rng.integers(2, 5)),), seed=seed)
        data = [(rng.normal(size=(40, 2)), rng.normal(size=40))]
        batch = enc.sample_subsections(data, m.n_past, cfg, rng, batch_size=4)
        _, grads = enc.v_enc_loss(m, batch, cfg)
        params = m.params()
        for i, p in enumerate(params):
            for idx in np.ndindex(p.shape):
                plus = [q.copy() for q in params]
                minus = [q.copy() for q in params]
                plus[i][idx] += h
                minus[i][idx] -= h
                num = (enc.v_enc_loss(m.with_params(plus), batch, cfg, False)[0]
                       - enc.v_enc_loss(m.with_params(minus), batch, cfg, False)[0]) / (2 * h)
                g = grads[i][idx]
                worst = max(worst, abs(num - g) / max(abs(num), abs(g), 1e-8))
    elapsed = time.time() - t0
    verdict(1, "V_enc gradients vs finite differences", worst <= 1e-5 and elapsed < 30,
            f"10 models, max rel err {worst:.2e}", t0)


# ---------------------------------------------------------------- 2

def test_criterion_2_simulator_fidelity(verdict):
    t0 = time.time()
    params = vs.VehicleParams()
    A, B = vs.linearized_plant(params, 6.0)
    u = 1.5
    x0 = np.array([0.05, 0.02, 0.005, 0.0, 0.5])
    f = lambda x: A @ x + (B * u).ravel()
    M = np.zeros((6, 6))
    M[:5, :5], M[:5, 5:] = A, B
    exact = (scipy.linalg.expm(M) @ np.r_[x0, u])[:5]

    def run(dt, T):
        x = x0.copy()
        for _ in range(int(round(T / dt))):
            x = vs.rk4_step(f, x, dt)
        return x

    err = np.max(np.abs(run(1e-3, 1.0) - exact))
    ref = run(0.001, 1.024)
    order = math.log2(np.max(np.abs(run(0.016, 1.024) - ref)) / np.max(np.abs(run(0.008, 1.024) - ref)))
    elapsed = time.time() - t0
    verdict(2, "RK4 vs matrix exponential", err <= 1e-6 and order >= 3.8 and elapsed < 10,
            f"max state error {err:.2e}, order {order:.2f}", t0)


# ---------------------------------------------------------------- 3

def test_criterion_3_linear_consistency_chain(verdict):
    t0 = time.time()
    A = np.array([[0.85, 0.2, 0.0], [-0.2, 0.85, 0.1], [0.0, 0.0, 0.7]])
    B = np.array([[0.0], [0.5], [1.0]])
    C = np.array([[1.0, 0.0, 0.5]])
    true = li.LinearSSModel(A, B, C)

    def record(seed, n=2000):
        rng = np.random.default_rng(seed)
        u = np.repeat(rng.choice([-1.0, 1.0], n // 3 + 1), 3)[:n, None]
        return u, li.simulate_lti(true, u)

    train, val, test = record(0), record(1), record(2)
    ident = li.fit_lti([train], [val], li.LtiConfig(n_x=3, n_a=3, n_b=(3,), n_k=(1,), n_markov=40, epochs=100))
    e_lti = signals.nrmse(test[1], ident.simulate(test))

    m = enc.encoder_init(3, 6, hidden=(), seed=0, n_u=1)
    cfg = enc.TrainConfig(n=20, batch_size=64, epochs=80, lr=3e-3, seed=0, max_batches_per_epoch=30)
    res = enc.train(m, [train], [val], cfg)
    p = res.model.n_past
    e_enc = signals.nrmse(test[1][p:], res.model.simulate(test)[p:])
    elapsed = time.time() - t0
    verdict(3, "3-state LTI recovery", e_lti <= 1e-3 and e_enc <= 0.05 and elapsed < 300,
            f"LTI chain {100 * e_lti:.2e} %, linear encoder {100 * e_enc:.2f} %", t0)


# ---------------------------------------------------------------- 4

def test_criterion_4_teacher_student(verdict):
    t0 = time.time()
    teacher = enc.encoder_init(4, 8, hidden=(16,), seed=3)

    def record(seed, n=3000):
        rng = np.random.default_rng(seed)
        u = np.column_stack([np.repeat(rng.uniform(-1, 1, n // 5 + 1), 5)[:n],
                             np.repeat(rng.uniform(-1, 1, n // 20 + 1), 20)[:n]])
        return u, enc.rollout(teacher, np.zeros(4), u)

    train, val, test = [record(0), record(1)], [record(2, 1000)], record(3, 1500)
    student = enc.encoder_init(8, hidden=(64, 64), seed=0)
    cfg = enc.TrainConfig(n=30, batch_size=64, epochs=30, lr=1e-3, seed=0, max_batches_per_epoch=50)
    res = enc.train(student, train, val, cfg)
    p = res.model.n_past
    e = signals.nrmse(test[1][p:], res.model.simulate(test)[p:])
    elapsed = time.time() - t0
    verdict(4, "teacher-student encoder", e < 0.05 and elapsed < 600,
            f"held-out NRMSE {100 * e:.2f} %, best epoch {res.best_epoch}", t0)


# ---------------------------------------------------------------- 5

def test_criterion_5_gp(verdict):
    t0 = time.time()
    rng = np.random.default_rng(0)
    Z = rng.normal(size=(50, 3))
    y = np.sin(Z).sum(axis=1)
    g = gp_id.gp_fit(Z, y, gp_id.SEKernel(1.0, [1.0, 1.0, 1.0], 1e-12))
    interp = float(np.max(np.abs(gp_id.gp_predict(g, Z) - y)))

    def record(seed, n=1500):
        r = np.random.default_rng(seed)
        us = np.repeat(r.uniform(-1.5, 1.5, n // 4 + 1), 4)[:n]
        v = 1 + 0.3 * np.sin(np.arange(n) / 50 + seed)
        out = np.zeros(n)
        for k in range(2, n):
            out[k] = 1.2 * out[k - 1] - 0.5 * out[k - 2] + 0.4 * np.tanh(us[k - 1]) * v[k - 1] \
                - 0.05 * out[k - 1] ** 3
        return np.column_stack([us, v]), out

    grid = [{"lengthscale": ls, "noise_var": nv} for ls in (1.0, 2.0, 4.0) for nv in (1e-4, 1e-3)]
    _, orders, model, _ = gp_id.tune_hyperparameters(
        [record(0)], [record(1)], [gp_id.NarxOrders(2, 2), gp_id.NarxOrders(3, 3)], grid,
        horizon=50, max_rows=1500)
    test = record(2)
    e = signals.nrmse(test[1], model.simulate(test))
    elapsed = time.time() - t0
    verdict(5, "GP interpolation and NARX recovery", interp <= 1e-6 and e <= 0.10 and elapsed < 300,
            f"interpolation error {interp:.1e}, free-run NRMSE {100 * e:.2f} % with orders "
            f"({orders.n_a},{orders.n_b})", t0)


# ---------------------------------------------------------------- 6

def test_criterion_6_method_ranking(verdict, tmp_path):
    t0 = time.time()
    cfg_path = str(CONFIGS / "campaign6.yaml")
    args = ["--config", cfg_path, "--out", str(tmp_path)]
    assert cli.main(["generate"] + args) == 0
    for m in pipeline.METHODS:
        assert cli.main(["fit", m] + args) == 0
    assert cli.main(["evaluate"] + args) == 0
    labels, rows = pipeline.read_report(tmp_path / "report" / "report.csv")
    table = {row[0].split()[-1]: dict(zip(labels, row[1])) for row in rows}
    low, mod = table["L2"], table["M2"]
    ann, gp, lti = "NL-ANN-SS", "NL-GP", "LTI-SS"
    ok_low = low[ann] < min(low[gp], low[lti]) and low[ann] <= 30.0
    ok_mod = all(mod[k] <= 30.0 for k in (ann, gp, lti))
    elapsed = time.time() - t0
    detail = ("low speed " + ", ".join(f"{k} {low[k]:.1f} %" for k in (ann, gp, lti))
              + " | moderate " + ", ".join(f"{k} {mod[k]:.1f} %" for k in (ann, gp, lti)))
    verdict(6, "method ranking on the synthetic campaign", ok_low and ok_mod and elapsed < 1800, detail, t0)


# ---------------------------------------------------------------- 7

def test_criterion_7_dead_zone(verdict):
    t0 = time.time()
    plant = li.LinearSSModel([[1.6, -0.68], [1.0, 0.0]], [[0.1, 0.02], [0.0, 0.0]], [[1.0, 0.5]])

    def record(seed, n=2000):
        rng = np.random.default_rng(seed)
        u_s = np.repeat(rng.uniform(-1, 1, n // 10 + 1), 10)[:n]
        v = 3 + 0.5 * np.sin(np.arange(n) / 40 + seed) + np.repeat(0.1 * rng.normal(size=n // 25 + 1), 25)[:n]
        y = li.simulate_lti(plant, np.column_stack([signals.dead_zone(u_s, -0.13, 0.17), v]))
        y = y + 0.005 * np.std(y) * rng.normal(size=n)
        return signals.Dataset(t=np.arange(n) * 0.1, u_s=u_s, v=v, r=y, T_s=0.1, id=f"z{seed}")

    train, val, test = [record(0), record(1)], [record(2)], record(3)
    cfg = dict(n_x=4, n_a=4, n_b=(4, 4), n_k=(1, 1), n_markov=40, epochs=100)
    plain = li.fit_lti(train, val, li.LtiConfig(**cfg))
    star = li.fit_lti(train, val, li.LtiConfig(**cfg, dead_zone=True))
    e_plain = signals.nrmse(test.y, plain.simulate(test))
    e_star = signals.nrmse(test.y, star.simulate(test))
    elapsed = time.time() - t0
    verdict(7, "dead-zone LTI variant", e_star < e_plain and elapsed < 300,
            f"LTI-SS {100 * e_plain:.2f} %, LTI-SS* {100 * e_star:.2f} %", t0)


# ---------------------------------------------------------------- 8

def test_criterion_8_metric_identities(verdict):
    t0 = time.time()
    y = np.sin(np.linspace(0, 6, 101)) + 0.3
    zero = signals.nrmse(y, y)
    one = signals.nrmse(y, np.full_like(y, y.mean()))
    # y = (1, 2, 3), y_hat = (1, 2, 5): sqrt(4 / 2) = sqrt(2)
    ex = signals.nrmse([1.0, 2.0, 3.0], [1.0, 2.0, 5.0], 3)
    ok = zero == 0.0 and abs(one - 1.0) <= 1e-12 and abs(ex - math.sqrt(2)) <= 1e-12
    verdict(8, "NRMSE identities", ok and time.time() - t0 < 1,
            f"nrmse(y,y)={zero}, mean predictor {one:.15f}, example {ex:.15f}", t0)


# ---------------------------------------------------------------- 9

def test_criterion_9_determinism(verdict, tmp_path):
    t0 = time.time()
    reports = []
    for run in ("a", "b"):
        args = ["--config", str(CONFIGS / "smoke.yaml"), "--out", str(tmp_path / run)]
        assert cli.main(["generate"] + args) == 0
        for m in pipeline.METHODS:
            assert cli.main(["fit", m] + args) == 0
        assert cli.main(["evaluate"] + args) == 0
        reports.append((tmp_path / run / "report" / "report.csv").read_bytes())
    verdict(9, "bitwise identical reports", reports[0] == reports[1] and len(reports[0]) > 0,
            f"{len(reports[0])} bytes each", t0)
