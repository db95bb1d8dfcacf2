"""Adam with frozen coordinates, quadratic penalties, and the training loop."""

from dataclasses import dataclass, field

import numpy as np

from .autodiff import NonFiniteError


@dataclass
class AdamState:
    size: int
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: np.ndarray = field(default=None, repr=False)
    v: np.ndarray = field(default=None, repr=False)
    _gate: tuple = field(default=None, repr=False, compare=False)
    _buf: tuple = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.m is None:
            self.m = np.zeros(self.size)
        if self.v is None:
            self.v = np.zeros(self.size)


def _all_finite(v):
    # one reduction first; the exact elementwise test only runs if the sum overflows
    return np.isfinite(v.sum()) or bool(np.all(np.isfinite(v)))


def adam_step(state, params, grad, frozen=None):
    """One bias-corrected Adam update of ``params`` in place.

    Coordinates where ``frozen`` is True are skipped entirely: the parameter
    and both moment estimates keep their previous values.
    """
    if grad.shape != params.shape or params.shape != state.m.shape:
        raise ValueError("parameter, gradient and state lengths disagree")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    if state._buf is None:
        state._buf = (np.empty_like(params), np.empty_like(params))
    g, tmp = state._buf
    if frozen is None:
        gate = None
        np.copyto(g, grad)
    else:
        # multiply by a 0/1 gate instead of fancy indexing: adding exact zeros
        # leaves frozen entries bit-identical and is much cheaper
        if state._gate is None or state._gate[0] is not frozen:
            state._gate = (frozen, (~np.asarray(frozen, dtype=bool)).astype(np.float64))
        gate = state._gate[1]
        np.multiply(grad, gate, out=g)
    if not _all_finite(g):
        raise NonFiniteError("non-finite gradient passed to adam_step")
    m, v = state.m, state.v
    np.subtract(g, m, out=tmp)
    tmp *= 1.0 - b1
    if gate is not None:
        tmp *= gate
    m += tmp
    np.multiply(g, g, out=tmp)
    tmp -= v
    tmp *= 1.0 - b2
    if gate is not None:
        tmp *= gate
    v += tmp
    np.divide(v, c2, out=tmp)
    np.sqrt(tmp, out=tmp)
    tmp += state.eps
    np.divide(m, c1, out=g)
    g *= state.lr
    g /= tmp
    if gate is not None:
        g *= gate
    params -= g


@dataclass
class Penalty:
    """Quadratic pull ``lam * sum_i F_i (w_i - ref_i)^2`` over ``scope``.

    kind is one of ``none``, ``l2sp``, ``l2_zero`` or ``l2sp_fisher``;
    ``l2_zero`` ignores ``reference`` and anchors at zero.
    """
    kind: str = "none"
    lam: float = 0.0
    reference: np.ndarray = None
    fisher: np.ndarray = None
    scope: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("none", "l2sp", "l2_zero", "l2sp_fisher"):
            raise ValueError(f"unknown penalty {self.kind!r}")
        if self.kind in ("l2sp", "l2sp_fisher") and self.reference is None:
            raise ValueError(f"{self.kind} needs a reference vector")
        if self.kind == "l2sp_fisher" and self.fisher is None:
            raise ValueError("l2sp_fisher needs a Fisher diagonal")

    def _diff(self, params):
        if self.kind == "l2_zero":
            return params
        if self.reference.shape != params.shape:
            raise ValueError("reference length does not match parameters")
        return params - self.reference

    def _weights(self, params):
        cached = self.__dict__.get("_w")
        if cached is not None and cached.shape == params.shape:
            return cached
        w = np.ones_like(params) if self.fisher is None or self.kind != "l2sp_fisher" \
            else np.asarray(self.fisher, dtype=np.float64)
        if w.shape != params.shape:
            raise ValueError("Fisher vector length does not match parameters")
        if self.scope is not None:
            w = np.where(self.scope, w, 0.0)
        self.__dict__["_w"] = w
        return w

    def value(self, params):
        if self.kind == "none" or self.lam == 0.0:
            return 0.0
        d = self._diff(params)
        return float(self.lam * np.sum(self._weights(params) * d * d))

    def grad(self, params):
        if self.kind == "none":
            return np.zeros_like(params)
        return 2.0 * self.lam * self._weights(params) * self._diff(params)


def add_penalty_grad(grad, penalty, params):
    """``grad += dOmega/dw`` in place (no-op for an absent or zero penalty)."""
    if penalty is None or penalty.kind == "none" or penalty.lam == 0.0:
        return grad
    grad += penalty.grad(params)
    return grad


def minibatches(n, batch_size, rng):
    """Shuffled index batches covering ``range(n)`` once; last short batch kept."""
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 128
    lr: float = 1e-4
    max_steps: int = None

    def to_dict(self):
        return {"epochs": self.epochs, "batch_size": self.batch_size,
                "lr": self.lr, "max_steps": self.max_steps}


def train(model, objective, config, rng, frozen=None, penalty=None, before_step=None):
    """Mini-batch Adam on ``objective``; updates ``model.params`` in place.

    ``objective`` needs ``n`` (sample count) and ``loss_grad(model, idx)``;
    an optional ``begin_epoch(rng)`` lets sampled objectives redraw points.
    ``before_step(params)`` runs in place before every gradient evaluation.
    Returns the list of per-epoch mean data losses.
    """
    state = AdamState(model.size, lr=config.lr)
    history = []
    steps = 0
    for epoch in range(config.epochs):
        if hasattr(objective, "begin_epoch"):
            objective.begin_epoch(rng)
        total, count = 0.0, 0
        for idx in minibatches(objective.n, config.batch_size, rng):
            if before_step is not None:
                before_step(model.params)
            try:
                loss, grad = objective.loss_grad(model, idx)
            except NonFiniteError as exc:
                raise NonFiniteError(f"diverged at epoch {epoch}, step {steps}: {exc}",
                                     index=exc.index) from exc
            add_penalty_grad(grad, penalty, model.params)
            adam_step(state, model.params, grad, frozen)
            total += loss * len(idx)
            count += len(idx)
            steps += 1
            if config.max_steps is not None and steps >= config.max_steps:
                history.append(total / count)
                return history
        history.append(total / count)
    return history
