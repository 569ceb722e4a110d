"""
Nonlinear models on the same low-speed data.

A GP-NARX model picks its lags and kernel scales by blocked cross
validation of the 100-step prediction error.  The subspace encoder learns an
initial-state map together with the state transition, trained on many short
rollouts.  Both are scored in free run on a record neither has seen.

The encoder budget here is small (about a minute on one core) and the GP
usually comes out ahead.  With the 250-epoch budget of ``campaign6.yaml``
the order reverses; see ``04_cli_campaign.sh``.

Run:  python demos/03_gp_and_encoder.py
"""
import time

from steerid import encoder_id, gp_id, signals, vehicle_sim as vs

spec = dict(speed=1.4, duration=150.0, prbs_amplitude=0.3, path=vs.PathSpec("sine", 0.15, 40.0))
records = [vs.run_experiment(vs.ExperimentSpec(f"r{i}", **spec), seed=i) for i in (1, 2, 3)]
factor = signals.decimation_factor(records[0].T_s, 0.1)
train, val, test = (signals.decimate_dataset(d, factor) for d in records)

t0 = time.time()
orders = [gp_id.NarxOrders(k, k) for k in (2, 3, 5)]
grid = [{"lengthscale": ls, "noise_var": nv} for ls in (0.5, 1.0, 2.0) for nv in (1e-3, 1e-2)]
kernel, best, gp, cv = gp_id.tune_hyperparameters([train], [], orders, grid, horizon=100, max_rows=1000)
y_hat = gp.simulate(test)
print(f"GP-NARX  orders ({best.n_a},{best.n_b})  NRMSE {100 * signals.nrmse(test.y[50:], y_hat[50:]):5.1f} %  "
      f"[{time.time() - t0:.0f} s]")

t0 = time.time()
model = encoder_id.encoder_init(n_x=16, hidden=(64, 64), seed=0)
cfg = encoder_id.TrainConfig(n=50, batch_size=64, epochs=60, max_batches_per_epoch=40, seed=0)
res = encoder_id.train(model, [train], [val], cfg,
                       log=lambda msg: print("   ", msg) if msg.startswith("epoch 1:") else None)
y_hat = res.model.simulate(test)
print(f"encoder  best epoch {res.best_epoch}  NRMSE {100 * signals.nrmse(test.y[50:], y_hat[50:]):5.1f} %  "
      f"[{time.time() - t0:.0f} s]")
