"""Prune, allocate and calibrate on the modified Friedman #1 problem.

A small walk-through of the three stages on one seed, with budgets small
enough to finish in a couple of minutes.  Run from the repo root:

    python3 demos/friedman_transfer.py
"""

import numpy as np

from pacnet import (NetworkSpec, RegressionObjective, SourceContext, TrainConfig,
                    TransferStrategy, build, run_strategy, stream)
from pacnet.autodiff import forward
from pacnet.transfer import pretrain, source_view
from pacnet.tasks.friedman import FriedmanParams, friedman_splits

seed = 0

# %% data: a noiseless source and a noisy target at distance d = 1
src_train, src_test = friedman_splits(FriedmanParams.source(), stream(seed, "demo", "source"))
tgt_train, tgt_test = friedman_splits(FriedmanParams.target(1.0), stream(seed, "demo", "target"))
print("source labels: mean %.2f, std %.2f" % (src_train.y.mean(), src_train.y.std()))
print("target labels: mean %.2f, std %.2f" % (tgt_train.y.mean(), tgt_train.y.std()))


def rmse(model, params, data):
    return float(np.sqrt(np.mean((forward(model, data.x, params) - data.y_clean) ** 2)))


# %% pre-train the 2x200 ReLU network on the source task
budget = TrainConfig(100, 128, lr=1e-4)
model = build(NetworkSpec.mlp(10, 200, 2, "relu", seed=seed))
source_obj = RegressionObjective(src_train.x, src_train.y)
model, hist = pretrain(model, source_obj, budget, stream(seed, "demo", "pretrain"))
print("pre-trained source RMSE: %.3f" % rmse(model, model.params, src_test))

# %% prune 80% of the weights and allocate the source task to the rest
ctx = SourceContext(model, source_obj, seed, budget, prune_ratio=0.8, task="demo")
mask = ctx.mask()
print("kept %d of %d weights (biases always kept)" % (mask.keep_count, model.size))
print("allocated source RMSE:  %.3f" % rmse(model, ctx.allocated(), src_test))

# %% adapt to 50 target samples with each strategy
sub = tgt_train.subset(np.arange(50))
target_obj = RegressionObjective(sub.x, sub.y)
calib = TrainConfig(3000, 128, lr=1e-4)
results = {}
for kind in ("target_only", "fine_tuning", "pacnet"):
    w, _ = run_strategy(TransferStrategy(kind, 0.01, 0.8, calib), ctx, target_obj,
                        stream(seed, "demo", kind))
    results[kind] = w
    print("%-12s target RMSE %.3f" % (kind, rmse(model, w, tgt_test)))

# %% the source model is still inside the PAC-Net weights: zero w_P and compare
w_src = source_view(results["pacnet"], mask)
same = np.array_equal(forward(model, src_test.x, w_src), forward(model, src_test.x, ctx.allocated()))
print("source outputs recovered bit-exactly:", same)
print("fine-tuned model on the source task: RMSE %.3f" % rmse(model, results["fine_tuning"], src_test))
