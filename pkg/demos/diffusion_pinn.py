"""PINN transfer on the 2-D heat equation, source v = 0.01 to target v = 0.1.

The source network is trained on the PDE residual plus initial and boundary
conditions.  The target only observes the field at t = 0 and t = 1, and the
intermediate times are scored against the finite-difference oracle.

    python3 demos/diffusion_pinn.py
"""

from pacnet.experiments import make_experiment
from pacnet.optim import TrainConfig
from pacnet.props import fd_bounds
from pacnet.rng import stream
from pacnet.tasks.diffusion import TARGET_V
from pacnet.transfer import TransferStrategy, run_strategy

seed = 0
steps = TrainConfig(10**9, 32, lr=1e-3, max_steps=3000)
budgets = {"pretrain": steps, "allocate": steps,
           "calibrate": TrainConfig(10**9, 32, lr=1e-3, max_steps=2000)}
exp = make_experiment("diffusion", "0.01->0.1", {"width": 64, "depth": 4, "activation": "swish"},
                      budgets, {"grid_n": 51})

# %% the oracle stays inside the initial/boundary range
lo, hi = fd_bounds(TARGET_V, n=51)
print("oracle range over t in [0, 1]: [%.6f, %.6f]" % (lo, hi))

# %% source PINN, then transfer from 200 observed points
ctx = exp.source_context(seed, prune_ratio=0.8)
print("source PINN vs target oracle, mean RMSE: %.4f"
      % exp.evaluate(seed, ctx.model, ctx.w_s)["rmse_avg"])
target = exp.target_objective(seed, 200)
for kind in ("fine_tuning", "pacnet"):
    w, _ = run_strategy(TransferStrategy(kind, 0.01, 0.8, budgets["calibrate"]), ctx, target,
                        stream(seed, "demo", kind))
    scores = exp.evaluate(seed, ctx.model, w)
    print("%-12s" % kind, "  ".join("%s %.4f" % kv for kv in scores.items()))
