"""Prune / Allocate / Calibrate and the baseline transfer strategies.

All strategies share one interface, :func:`run_strategy`, operating on a
:class:`SourceContext` (the pre-trained source model plus lazily computed,
cached derivatives of it: prune mask, allocated weights, Fisher diagonals)
and a target objective.
"""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError, activation, forward, forward_cached, param_grad
from .nn import NetworkModel, he_normal
from .optim import Penalty, TrainConfig, train
from .rng import stream

STRATEGIES = ("target_only", "fine_tuning", "l2sp", "l2sp_fisher", "pacnet", "pcnet",
              "pacnet_no_l2", "pacnet_ri", "panet_l2sp", "panet_l2sp_fisher")

PRUNING_STRATEGIES = ("pacnet", "pcnet", "pacnet_no_l2", "pacnet_ri",
                      "panet_l2sp", "panet_l2sp_fisher")

# strategies that leave source weights untouched during target training
HARD_STRATEGIES = ("pacnet", "pcnet", "pacnet_no_l2", "pacnet_ri")


class RegressionObjective:
    """Mean squared error of a network on a fixed labelled sample set."""

    def __init__(self, x, y):
        self.x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        self.y = y.reshape(-1, 1) if y.ndim == 1 else y
        if len(self.y) != len(self.x):
            raise ValueError("inputs and labels have different lengths")
        self.n = self.x.shape[0]

    def loss_grad(self, model, idx):
        return param_grad(model, self.x[idx], self.y[idx])

    def loss(self, model, params=None):
        pred = forward(model, self.x, params)
        return float(np.mean((pred - self.y) ** 2))

    def nll_fisher(self, model, idx):
        """Diagonal empirical Fisher of the unit-variance Gaussian NLL.

        Per-sample weight gradients are outer products ``a_i (x) delta_i``, so
        their squares average to ``(A**2).T @ (Delta**2) / n`` without ever
        materialising per-sample gradients.
        """
        x, y = self.x[idx], self.y[idx]
        pred, cache = forward_cached(model, x)
        resid = pred - y
        if not np.all(np.isfinite(resid)):
            bad = np.flatnonzero(~np.all(np.isfinite(resid), axis=1))
            raise NonFiniteError("non-finite per-sample gradient", index=int(bad[0]))
        fisher = np.zeros(model.size)
        layers = model.layers()
        g = resid
        for i in range(len(layers) - 1, -1, -1):
            W, _, act = layers[i]
            a_prev, z = cache[i]
            if act != "linear":
                g = g * activation(act, z, 1)[1]
            we, be = model.layout[2 * i], model.layout[2 * i + 1]
            fisher[we.offset:we.offset + we.size] = ((a_prev ** 2).T @ (g ** 2)).ravel()
            fisher[be.offset:be.offset + be.size] = np.sum(g ** 2, axis=0)
            if i > 0:
                g = g @ W.T
        return fisher / len(idx)


@dataclass
class PruneMask:
    bits: np.ndarray
    keep_count: int

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=bool)

    @property
    def pruned(self):
        return ~self.bits

    def apply(self, w):
        return np.where(self.bits, w, 0.0)


def keep_count(n_prunable, prune_ratio):
    return int(np.floor((1.0 - prune_ratio) * n_prunable + 0.5))


def prune(w, prune_ratio, prunable=None):
    """Keep the ``K`` largest-magnitude prunable entries of ``w``.

    The threshold is global over all prunable entries; ties go to the lower
    flat index.  Non-prunable entries (biases, by default) are always kept.
    """
    if not 0.0 <= prune_ratio < 1.0:
        raise ValueError(f"prune ratio must be in [0, 1), got {prune_ratio}")
    w = np.asarray(w, dtype=np.float64)
    if prunable is None:
        prunable = np.ones(w.shape, dtype=bool)
    cand = np.flatnonzero(prunable)
    k = keep_count(cand.size, prune_ratio)
    order = np.argsort(-np.abs(w[cand]), kind="stable")
    bits = ~np.asarray(prunable, dtype=bool)
    bits[cand[order[:k]]] = True
    return PruneMask(bits, k)


def prune_model(model, prune_ratio, include_biases=False):
    prunable = np.ones(model.size, dtype=bool) if include_biases else model.weight_mask()
    return prune(model.params, prune_ratio, prunable)


def allocate(model, mask, source_objective, config, rng):
    """Retrain the masked network on the source task; pruned entries end at 0."""
    if source_objective.n == 0:
        raise ValueError("allocation needs source data")
    m = model.copy()
    keep = mask.bits
    frozen = None if keep.all() else ~keep

    def apply_mask(p):
        # assign +0.0 rather than multiply, so negative weights do not leave -0.0
        np.copyto(p, 0.0, where=frozen)

    if frozen is not None:
        apply_mask(m.params)
    history = train(m, source_objective, config, rng, frozen=frozen,
                    before_step=apply_mask if frozen is not None else None)
    if frozen is not None:
        apply_mask(m.params)
    return m.params, history


def calibrate(model, mask, w_u, target_objective, lam, config, rng,
              init_mode="zero", penalty="l2_zero", fisher=None):
    """Train only the pruned coordinates on the target task.

    ``w_u`` (zero on pruned entries) is held fixed bit-for-bit.  With
    ``penalty="l2_zero"`` the pruned weights are pulled towards zero; ``l2sp``
    and ``l2sp_fisher`` anchor at their initial values instead.
    """
    keep = mask.bits
    w_u = np.asarray(w_u, dtype=np.float64)
    if np.any(w_u[~keep] != 0.0):
        raise ValueError("w_U must be zero on pruned coordinates")
    if target_objective.n == 0:
        raise ValueError("calibration needs at least one target sample")
    free = ~keep
    m = model.with_params(w_u)
    if init_mode == "random":
        m.params += he_normal(m, rng, where=free)
    elif init_mode != "zero":
        raise ValueError(f"unknown init mode {init_mode!r}")
    w_p0 = np.where(free, m.params, 0.0)

    if penalty == "none":
        pen = None
    elif penalty == "l2_zero":
        pen = Penalty("l2_zero", lam, scope=free)
    elif penalty == "l2sp":
        pen = Penalty("l2sp", lam, reference=w_p0, scope=free)
    elif penalty == "l2sp_fisher":
        pen = Penalty("l2sp_fisher", lam, reference=w_p0, fisher=fisher, scope=free)
    else:
        raise ValueError(f"unknown penalty {penalty!r}")

    def restore(p):
        np.copyto(p, w_u, where=keep)

    history = train(m, target_objective, config, rng, frozen=keep, penalty=pen,
                    before_step=restore)
    w_p = np.where(free, m.params, 0.0)
    return w_u + w_p, history


def fisher_diag(model, objective, max_samples=None, rng=None):
    """Empirical diagonal Fisher ``mean_i (d nll_i / dw)^2`` over source samples."""
    n = objective.n
    idx = np.arange(n)
    if max_samples is not None and n > max_samples:
        rng = rng if rng is not None else np.random.default_rng(0)
        idx = np.sort(rng.choice(n, size=max_samples, replace=False))
    if hasattr(objective, "nll_fisher"):
        f = objective.nll_fisher(model, idx)
    else:
        f = np.zeros(model.size)
        for i in idx:
            g = objective.sample_nll_grad(model, int(i))
            if not np.all(np.isfinite(g)):
                raise NonFiniteError("non-finite per-sample gradient", index=int(i))
            f += g * g
        f /= len(idx)
    return f


@dataclass
class TransferStrategy:
    kind: str
    lam: float = 0.01
    prune_ratio: float = 0.8
    train: TrainConfig = field(default_factory=TrainConfig)
    penalize_output: bool = True

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.kind!r}")
        if not 0.0 <= self.prune_ratio < 1.0:
            raise ValueError("prune ratio must be in [0, 1)")
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")


class SourceContext:
    """Pre-trained source model with cached pruning/allocation products.

    Everything here is a deterministic function of the source weights, the
    source objective and ``seed``, so sharing one context across strategies
    and target sizes cannot couple their results.
    """

    def __init__(self, model, source_objective, seed, allocate_config, prune_ratio=0.8,
                 fisher_samples=2000, task="task"):
        self.model = model
        self.source_objective = source_objective
        self.seed = seed
        self.allocate_config = allocate_config
        self.prune_ratio = prune_ratio
        self.fisher_samples = fisher_samples
        self.task = task
        self._cache = {}

    @property
    def w_s(self):
        return self.model.params

    def mask(self, prune_ratio=None):
        r = self.prune_ratio if prune_ratio is None else prune_ratio
        key = ("mask", r)
        if key not in self._cache:
            self._cache[key] = prune_model(self.model, r)
        return self._cache[key]

    def allocated(self, prune_ratio=None):
        r = self.prune_ratio if prune_ratio is None else prune_ratio
        key = ("allocated", r)
        if key not in self._cache:
            rng = stream(self.seed, self.task, "allocate", repr(r))
            w, _ = allocate(self.model, self.mask(r), self.source_objective,
                            self.allocate_config, rng)
            self._cache[key] = w
        return self._cache[key]

    def fisher(self, which="source", prune_ratio=None):
        r = self.prune_ratio if prune_ratio is None else prune_ratio
        key = ("fisher", which, r if which == "allocated" else None)
        if key not in self._cache:
            params = self.w_s if which == "source" else self.allocated(r)
            rng = stream(self.seed, self.task, "fisher")
            self._cache[key] = fisher_diag(self.model.with_params(params),
                                           self.source_objective, self.fisher_samples, rng)
        return self._cache[key]


def _penalty_scope(model, strategy):
    if strategy.penalize_output:
        return None
    last = model.layout[-2:]
    scope = np.ones(model.size, dtype=bool)
    for e in last:
        scope[e.offset:e.offset + e.size] = False
    return scope


def run_strategy(strategy, ctx, target_objective, rng):
    """Adapt the source model in ``ctx`` to ``target_objective``.

    Returns ``(target_params, log)`` where ``log`` maps stage names to
    per-epoch loss histories.
    """
    if target_objective.n == 0:
        raise ValueError("target data is empty")
    kind = strategy.kind
    cfg = strategy.train
    spec_model = ctx.model
    log = {}

    if kind == "target_only":
        m = NetworkModel(spec_model.spec, he_normal(spec_model, rng))
        log["target"] = train(m, target_objective, cfg, rng)
        return m.params, log

    if kind in ("fine_tuning", "l2sp", "l2sp_fisher"):
        m = spec_model.copy()
        pen = None
        if kind == "l2sp":
            pen = Penalty("l2sp", strategy.lam, reference=ctx.w_s.copy(),
                          scope=_penalty_scope(m, strategy))
        elif kind == "l2sp_fisher":
            pen = Penalty("l2sp_fisher", strategy.lam, reference=ctx.w_s.copy(),
                          fisher=ctx.fisher("source"), scope=_penalty_scope(m, strategy))
        log["target"] = train(m, target_objective, cfg, rng, penalty=pen)
        return m.params, log

    mask = ctx.mask(strategy.prune_ratio)
    if kind in ("panet_l2sp", "panet_l2sp_fisher"):
        w_a = ctx.allocated(strategy.prune_ratio)
        m = spec_model.with_params(w_a)
        if kind == "panet_l2sp":
            pen = Penalty("l2sp", strategy.lam, reference=w_a.copy(),
                          scope=_penalty_scope(m, strategy))
        else:
            pen = Penalty("l2sp_fisher", strategy.lam, reference=w_a.copy(),
                          fisher=ctx.fisher("allocated", strategy.prune_ratio),
                          scope=_penalty_scope(m, strategy))
        log["target"] = train(m, target_objective, cfg, rng, penalty=pen)
        return m.params, log

    if kind == "pcnet":
        w_u = mask.apply(ctx.w_s)
    else:
        w_u = ctx.allocated(strategy.prune_ratio)
    init_mode = "random" if kind == "pacnet_ri" else "zero"
    penalty = "none" if kind == "pacnet_no_l2" else "l2_zero"
    w_t, hist = calibrate(spec_model, mask, w_u, target_objective, strategy.lam, cfg, rng,
                          init_mode=init_mode, penalty=penalty)
    log["calibrate"] = hist
    return w_t, log


def source_view(w_t, mask):
    """Target weights with the calibrated part removed (``w_P`` set to zero)."""
    return mask.apply(w_t)


def pretrain(spec_model, objective, config, rng):
    m = spec_model.copy()
    history = train(m, objective, config, rng)
    return m, history

