"""Per-task experiment definitions used by the harness.

Each experiment knows how to build and pre-train its source model for a seed,
produce the target objective for a given target-set size, and score adapted
weights.  All randomness is drawn from streams keyed on ``(seed, task, ...)``.
"""

import numpy as np

from .autodiff import forward
from .nn import NetworkSpec, build, save_checkpoint
from .ode import NetworkField, TransitionObjective
from .optim import TrainConfig
from .rng import stream
from .tasks import diffusion, duffing, friedman
from .transfer import RegressionObjective, SourceContext, pretrain

DEFAULT_BUDGETS = {
    "friedman": {"pretrain": TrainConfig(2000, 128), "allocate": TrainConfig(2000, 128),
                 "calibrate": TrainConfig(2000, 128)},
    "duffing": {"pretrain": TrainConfig(3000, 512), "allocate": TrainConfig(3000, 512),
                "calibrate": TrainConfig(3000, 512)},
    "diffusion": {"pretrain": TrainConfig(10**9, 32, max_steps=20_000),
                  "allocate": TrainConfig(10**9, 32, max_steps=20_000),
                  "calibrate": TrainConfig(10**9, 32, max_steps=5_000)},
}

DEFAULT_NETWORKS = {
    "friedman": {"width": 200, "depth": 2, "activation": "relu"},
    "duffing": {"width": 256, "depth": 6, "activation": "tanh"},
    "diffusion": {"width": 256, "depth": 6, "activation": "swish"},
}

DEFAULT_LAMBDA = {"friedman": 0.01, "duffing": 0.001, "diffusion": 0.01}

DEFAULT_PARAM = {"friedman": "1", "duffing": "linear", "diffusion": "0.01->0.1"}


class Experiment:
    task = None
    input_width = output_width = 1
    fisher_samples = 2000
    metrics = ("rmse",)

    def __init__(self, param, network, budgets, options):
        self.param = str(param)
        self.network = network
        self.budgets = budgets
        self.options = options

    def spec(self, seed):
        n = self.network
        return NetworkSpec.mlp(self.input_width, n["width"], n["depth"], n["activation"],
                               self.output_width, seed)

    def source_context(self, seed, prune_ratio, checkpoint_dir=None):
        obj = self.source_objective(seed)
        model = build(self.spec(seed))
        model, _ = pretrain(model, obj, self.budgets["pretrain"],
                            stream(seed, self.task, self.param, "pretrain"))
        ctx = SourceContext(model, obj, seed, self.budgets["allocate"], prune_ratio,
                            self.fisher_samples, task=f"{self.task}:{self.param}")
        if checkpoint_dir is not None:
            save_checkpoint(checkpoint_dir / f"{self.task}_{self._slug()}_seed{seed}_source.pacnet",
                            model)
        return ctx

    def save_allocated(self, ctx, checkpoint_dir):
        key = ("allocated", ctx.prune_ratio)
        if key in ctx._cache:
            save_checkpoint(
                checkpoint_dir / f"{self.task}_{self._slug()}_seed{ctx.seed}_allocated.pacnet",
                ctx.model.with_params(ctx._cache[key]), ctx.mask().bits)

    def _slug(self):
        return "".join(c if c.isalnum() or c in ".-" else "_" for c in self.param)

    def source_objective(self, seed):
        raise NotImplementedError

    def target_objective(self, seed, n_target):
        raise NotImplementedError

    def evaluate(self, seed, model, params):
        raise NotImplementedError

    def save_artifacts(self, seed, out_dir):
        pass


class FriedmanExperiment(Experiment):
    task = "friedman"
    input_width = friedman.N_FEATURES

    def __init__(self, *args):
        super().__init__(*args)
        self.distance = float(self.param)
        self.noise = float(self.options.get("noise_std", 1.0))
        self._data = {}

    def _splits(self, seed):
        if seed not in self._data:
            src = friedman.friedman_splits(friedman.FriedmanParams.source(),
                                           stream(seed, "friedman", "source-data"))
            tgt = friedman.friedman_splits(
                friedman.FriedmanParams.target(self.distance, self.noise),
                stream(seed, "friedman", "target-data", self.param))
            perm = stream(seed, "friedman", "target-order", self.param).permutation(len(tgt[0]))
            self._data[seed] = (src, tgt, perm)
        return self._data[seed]

    def source_objective(self, seed):
        (train, _), _, _ = self._splits(seed)
        return RegressionObjective(train.x, train.y)

    def target_objective(self, seed, n_target):
        _, (train, _), perm = self._splits(seed)
        if not 1 <= n_target <= len(train):
            raise ValueError(f"n_target must be in [1, {len(train)}]")
        sub = train.subset(perm[:n_target])
        return RegressionObjective(sub.x, sub.y)

    def source_rmse(self, seed, model, params):
        (_, test), _, _ = self._splits(seed)
        return float(np.sqrt(np.mean((forward(model, test.x, params) - test.y_clean) ** 2)))

    def evaluate(self, seed, model, params):
        _, (_, test), _ = self._splits(seed)
        pred = forward(model, test.x, params)
        return {"rmse": float(np.sqrt(np.mean((pred - test.y_clean) ** 2)))}


class DuffingExperiment(Experiment):
    task = "duffing"
    input_width = output_width = 2
    fisher_samples = 500

    def __init__(self, *args):
        super().__init__(*args)
        if self.param not in ("linear", "nonlinear"):
            raise ValueError("duffing system must be 'linear' or 'nonlinear'")
        self.substeps = int(self.options.get("substeps", 10))
        self.n_source = int(self.options.get("n_source_traj", 100))
        self.n_target = int(self.options.get("n_target_traj", 10))
        self.noise = float(self.options.get("noise_amp", 0.01))
        self._data = {}

    def data(self, seed):
        if seed not in self._data:
            src = duffing.duffing_generate(duffing.duffing_system(self.param, "source"),
                                           self.n_source, stream(seed, "duffing", self.param, "source-data"))
            tgt = duffing.duffing_generate(duffing.duffing_system(self.param, "target"),
                                           self.n_target, stream(seed, "duffing", self.param, "target-data"),
                                           noise_amp=self.noise)
            self._data[seed] = (src, tgt)
        return self._data[seed]

    def source_objective(self, seed):
        src, _ = self.data(seed)
        return TransitionObjective(*src.transition_pairs(), substeps=self.substeps)

    def target_objective(self, seed, n_target):
        _, tgt = self.data(seed)
        return TransitionObjective(*tgt.transition_pairs(n_target), substeps=self.substeps)

    def evaluate(self, seed, model, params):
        _, tgt = self.data(seed)
        return {"rmse": duffing.duffing_rmse(NetworkField(model, params), tgt)}

    def energy_drift(self, seed, model, params, horizon=10.0):
        """Max energy drift of the learned field from the target initial states,
        measured with the conservative source system's energy."""
        _, tgt = self.data(seed)
        src_sys = duffing.duffing_system(self.param, "source")
        return duffing.energy_drift(NetworkField(model, params), src_sys.energy,
                                    tgt.clean[:, 0], horizon)


class DiffusionExperiment(Experiment):
    task = "diffusion"
    input_width = 3
    fisher_samples = 128
    metrics = ("rmse_t0.25", "rmse_t0.5", "rmse_t0.75", "rmse_t1", "rmse_avg")

    def __init__(self, *args):
        super().__init__(*args)
        v_src, _, v_tgt = self.param.partition("->")
        self.v_source = float(v_src)
        self.v_target = float(v_tgt)
        self.grid_n = int(self.options.get("grid_n", 101))
        self.weights = tuple(self.options.get("loss_weights", (1.0, 1.0, 1.0)))
        self.pools = tuple(self.options.get("pools", (10_000, 2_500, 2_500)))
        self._oracle = None

    def oracle(self):
        if self._oracle is None:
            prob = diffusion.DiffusionProblem(self.v_target)
            self._oracle = diffusion.fd_diffusion_solve(prob, (0.0,) + diffusion.EVAL_TIMES,
                                                        n=self.grid_n)
        return self._oracle

    def source_objective(self, seed):
        return diffusion.PinnSourceObjective(self.v_source, *self.pools, weights=self.weights)

    def target_objective(self, seed, n_target):
        grids = self.oracle()
        observed = [grids[0], grids[-1]]
        total = sum(g.nx * g.ny for g in observed)
        n = None if n_target is None or n_target >= total else n_target
        x, u = diffusion.target_observations(observed, n,
                                             stream(seed, "diffusion", "target-points"))
        return RegressionObjective(x, u)

    def evaluate(self, seed, model, params):
        rm = diffusion.pinn_rmse_at(model, self.oracle()[1:], params)
        out = dict(zip(self.metrics[:-1], rm))
        out["rmse_avg"] = float(np.mean(rm))
        return out

    def save_artifacts(self, seed, out_dir):
        path = out_dir / "diffusion_oracle.fields"
        if not path.exists():
            diffusion.save_fieldgrids(path, self.oracle())


EXPERIMENTS = {"friedman": FriedmanExperiment, "duffing": DuffingExperiment,
               "diffusion": DiffusionExperiment}


def make_experiment(task, param, network, budgets, options):
    return EXPERIMENTS[task](param, network, budgets, options)


__all__ = ["DEFAULT_BUDGETS", "DEFAULT_NETWORKS", "DEFAULT_LAMBDA", "DEFAULT_PARAM",
           "EXPERIMENTS", "make_experiment"]
