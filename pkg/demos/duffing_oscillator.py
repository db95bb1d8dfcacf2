"""Neural-ODE transfer from a frictionless to a damped Duffing oscillator.

The source vector field is learned from conservative trajectories; PAC-Net
then calibrates the pruned weights on a handful of damped transition pairs.
Zeroing the calibrated weights gives back the conservative model.

    python3 demos/duffing_oscillator.py [linear|nonlinear]
"""

import sys

from pacnet.experiments import make_experiment
from pacnet.optim import TrainConfig
from pacnet.rng import stream
from pacnet.transfer import TransferStrategy, run_strategy, source_view

system = sys.argv[1] if len(sys.argv) > 1 else "linear"
seed = 0

budgets = {"pretrain": TrainConfig(30, 512, lr=1e-3), "allocate": TrainConfig(30, 512, lr=1e-3),
           "calibrate": TrainConfig(300, 512, lr=1e-3)}
exp = make_experiment("duffing", system, {"width": 64, "depth": 3, "activation": "tanh"},
                      budgets, {"substeps": 2, "n_source_traj": 50})

# %% source model and its pruned / allocated version
ctx = exp.source_context(seed, prune_ratio=0.8)
print("source model on the damped target: RMSE %.3f" % exp.evaluate(seed, ctx.model, ctx.w_s)["rmse"])

# %% calibrate on 30 observed transition pairs
target = exp.target_objective(seed, 30)
for kind in ("target_only", "fine_tuning", "pacnet"):
    w, _ = run_strategy(TransferStrategy(kind, 0.001, 0.8, budgets["calibrate"]), ctx, target,
                        stream(seed, "demo", kind))
    print("%-12s rollout RMSE over 1-10 s: %.3f" % (kind, exp.evaluate(seed, ctx.model, w)["rmse"]))
    if kind == "pacnet":
        w_src = source_view(w, ctx.mask())
        drift = exp.energy_drift(seed, ctx.model, w_src)
        print("  with w_P zeroed, max energy drift over 10 s: %.2e" % drift)
