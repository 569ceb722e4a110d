"""
Linear baselines on one low-speed record.

A linear state-space model is fitted by ARX, Ho-Kalman realization and
output-error refinement.  Passing the steering command through the
servo's dead-zone before the linear model (LTI-SS*) removes most of the
input nonlinearity it cannot otherwise represent.

Run:  python demos/02_linear_baselines.py
"""
from steerid import linear_id, signals, vehicle_sim as vs

spec = dict(speed=1.4, duration=120.0, prbs_amplitude=0.3, path=vs.PathSpec("sine", 0.15, 40.0))
train = vs.run_experiment(vs.ExperimentSpec("train", **spec), seed=1)
test = vs.run_experiment(vs.ExperimentSpec("test", **spec), seed=2)

# identify at 10 Hz
factor = signals.decimation_factor(train.T_s, 0.1)
train, test = signals.decimate_dataset(train, factor), signals.decimate_dataset(test, factor)

for dz in (False, True):
    cfg = linear_id.LtiConfig(n_x=10, epochs=200, dead_zone=dz)
    ident = linear_id.fit_lti([train], config=cfg)
    y_hat = ident.simulate(test)
    w = ident.warmup
    e = signals.nrmse(test.y[w:], y_hat[w:])
    print(f"{'LTI-SS*' if dz else 'LTI-SS':8s} free-run NRMSE on the test record: {100 * e:5.1f} %  "
          f"(spectral radius {ident.model.spectral_radius:.3f})")
