"""
Two driving regimes of the steering simulator.

At walking pace on a tight path the front wheels turn far enough that the
pneumatic trail changes sign: the aligning torque stops pulling the wheels
back to centre and starts pushing them further out.  At moderate speed the
same car stays in the small-angle regime where a linear model is adequate.

Run:  python demos/01_steering_regimes.py  (writes demo_out/regimes.svg)
"""
from pathlib import Path

import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

from steerid import vehicle_sim as vs

out = Path("demo_out")
out.mkdir(exist_ok=True)
params = vs.VehicleParams()
crit = params.steering.trail_delta_crit

runs = {
    "low speed (1.4 m/s)": vs.ExperimentSpec("low", speed=1.4, duration=60.0, prbs_amplitude=0.3,
                                             path=vs.PathSpec("sine", 0.15, 40.0)),
    "moderate speed (6.4 m/s)": vs.ExperimentSpec("mod", speed=6.4, duration=60.0, prbs_amplitude=0.15,
                                                  path=vs.PathSpec("sine", 0.03, 150.0)),
}

fig, axes = plt.subplots(2, 2, figsize=(10, 6), sharex="col")
for col, (title, spec) in enumerate(runs.items()):
    d, truth = vs.run_experiment(spec, params, seed=1, return_truth=True)
    delta = truth["delta"]
    beyond = np.mean(np.abs(delta) > crit)
    print(f"{title:>26}: max |delta| = {np.max(np.abs(delta)):.3f} rad, "
          f"{100 * beyond:.0f} % of the time past the trail zero-crossing")
    axes[0, col].plot(truth["t"], delta, lw=0.7)
    axes[0, col].axhline(crit, color="r", ls="--", lw=0.6)
    axes[0, col].axhline(-crit, color="r", ls="--", lw=0.6)
    axes[0, col].set_title(title)
    axes[1, col].plot(d.t, d.r, lw=0.7)
axes[0, 0].set_ylabel("delta [rad]")
axes[1, 0].set_ylabel("r [rad/s]")
for ax in axes[1]:
    ax.set_xlabel("t [s]")
fig.tight_layout()
fig.savefig(out / "regimes.svg")
print("wrote", out / "regimes.svg")
