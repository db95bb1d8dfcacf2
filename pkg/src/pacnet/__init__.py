"""Prune, allocate and calibrate networks for inductive transfer learning.

The package is pure numpy: a small MLP with hand-written reverse mode and
second-order input jets, Adam, magnitude pruning plus the transfer
strategies, ODE integrators, three benchmark task families and a seeded
experiment harness.
"""

__version__ = "0.1.0"

from .nn import NetworkModel, NetworkSpec, build, load_checkpoint, save_checkpoint
from .optim import AdamState, Penalty, TrainConfig, adam_step, train
from .rng import stream
from .transfer import (STRATEGIES, PruneMask, RegressionObjective, SourceContext,
                       TransferStrategy, allocate, calibrate, prune, prune_model, run_strategy)

__all__ = [
    "__version__", "NetworkModel", "NetworkSpec", "build", "load_checkpoint", "save_checkpoint",
    "AdamState", "Penalty", "TrainConfig", "adam_step", "train", "stream", "STRATEGIES",
    "PruneMask", "RegressionObjective", "SourceContext", "TransferStrategy", "allocate",
    "calibrate", "prune", "prune_model", "run_strategy",
]
