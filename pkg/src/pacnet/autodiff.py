"""Exact derivatives for dense networks.

Two mechanisms, composable:

* layer-level reverse mode for gradients with respect to parameters (and
  inputs, which the ODE unroll needs);
* truncated second-order Taylor jets pushed forward through the network for
  ``u, du/dxi, d2u/dxi2`` along chosen input axes.  The jet propagation is
  itself reverse-differentiated so PDE residual losses get exact parameter
  gradients.
"""

from dataclasses import dataclass

import numpy as np


class NonFiniteError(FloatingPointError):
    """A loss or gradient became NaN/Inf; ``index`` is the first bad sample."""

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def activation(name, z, order):
    """Return ``[f, f', ..., f^(order)]`` evaluated at ``z``."""
    if name == "linear":
        out = [z]
        if order >= 1:
            out += [np.ones_like(z), np.zeros_like(z), np.zeros_like(z)]
    elif name == "relu":
        pos = (z > 0).astype(z.dtype)
        # subgradient 0 at z == 0; second and third derivatives taken as 0
        out = [z * pos, pos]
        if order >= 2:
            out += [np.zeros_like(z), np.zeros_like(z)]
    elif name == "tanh":
        t = np.tanh(z)
        out = [t]
        if order >= 1:
            s = 1.0 - t * t
            out += [s, -2.0 * t * s, -2.0 * s * (1.0 - 3.0 * t * t)] if order >= 2 else [s]
    elif name == "swish":
        s = _sigmoid(z)
        out = [z * s]
        if order >= 1:
            g = s * (1.0 - s)
            out.append(s + z * g)
            if order >= 2:
                c = 1.0 - 2.0 * s
                out += [g * (2.0 + z * c), g * (c * (3.0 + z * c) - 2.0 * z * g)]
    elif name == "square":
        out = [z * z, 2.0 * z, np.full_like(z, 2.0), np.zeros_like(z)]
    elif name == "exp":
        e = np.exp(z)
        out = [e, e, e, e]
    else:
        raise ValueError(f"unknown activation {name!r}")
    return out[:order + 1]


def _check_input(model, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.spec.input_width:
        raise ValueError(f"input width {x.shape[-1]} does not match model input "
                         f"width {model.spec.input_width}")
    return x, single


# -- plain forward / reverse ------------------------------------------------

def forward_cached(model, x, params=None):
    """Forward pass over a batch ``x`` of shape ``(n, in)``; keeps activations."""
    cache = []
    a = x
    for W, b, act in model.layers(params):
        z = a @ W + b
        cache.append((a, z))
        a = activation(act, z, 0)[0]
    return a, cache


def forward(model, x, params=None):
    x, single = _check_input(model, x)
    y, _ = forward_cached(model, x, params)
    return y[0] if single else y


def backward(model, cache, dout, params=None, need_input=False):
    """Reverse pass; returns ``(grad_params, grad_input_or_None)``."""
    grad = np.zeros(model.size)
    layers = model.layers(params)
    layout = model.layout
    g = dout
    for i in range(len(layers) - 1, -1, -1):
        W, _, act = layers[i]
        a_prev, z = cache[i]
        if act != "linear":
            g = g * activation(act, z, 1)[1]
        we, be = layout[2 * i], layout[2 * i + 1]
        grad[we.offset:we.offset + we.size] = (a_prev.T @ g).ravel()
        grad[be.offset:be.offset + be.size] = g.sum(axis=0)
        if i > 0 or need_input:
            g = g @ W.T
    return grad, (g if need_input else None)


def mse(pred, target):
    """Per-sample squared error (mean over outputs) and d(mean loss)/d(pred)."""
    diff = pred - target
    per_sample = np.mean(diff * diff, axis=1)
    return per_sample, 2.0 * diff / diff.size


def _raise_nonfinite(per_sample, what="loss"):
    bad = np.flatnonzero(~np.isfinite(per_sample))
    idx = int(bad[0]) if bad.size else None
    raise NonFiniteError(f"non-finite {what} at sample {idx}", index=idx)


def param_grad(model, x, y, loss=mse, params=None):
    """Mean batch loss and its exact gradient with respect to all parameters."""
    x, _ = _check_input(model, x)
    y = np.asarray(y, dtype=np.float64).reshape(x.shape[0], -1)
    if x.shape[0] == 0:
        raise ValueError("empty batch")
    pred, cache = forward_cached(model, x, params)
    per_sample, dpred = loss(pred, y)
    value = float(np.mean(per_sample))
    if not np.isfinite(value):
        _raise_nonfinite(per_sample)
    grad, _ = backward(model, cache, dpred, params)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite gradient")
    return value, grad


def input_grad(model, x, params=None):
    """Gradient of the (scalar) output with respect to the inputs, per sample."""
    x, single = _check_input(model, x)
    if model.spec.output_width != 1:
        raise ValueError("input_grad needs a single-output model")
    pred, cache = forward_cached(model, x, params)
    _, gx = backward(model, cache, np.ones_like(pred), params, need_input=True)
    return gx[0] if single else gx


# -- second-order jets --------------------------------------------------------

@dataclass(frozen=True)
class Jet2:
    value: float
    d1: float
    d2: float


def jets_cached(model, x, axes, params=None):
    """Propagate jets along each axis in ``axes`` for a batch ``x``.

    Returns ``(stack, cache)`` where ``stack`` has shape ``(1 + 2k, n, out)``:
    row 0 holds values, rows ``1..k`` first and ``k+1..2k`` second derivatives.
    """
    k = len(axes)
    n, width = x.shape
    s = np.zeros((1 + 2 * k, n, width))
    s[0] = x
    for j, ax in enumerate(axes):
        s[1 + j, :, ax] = 1.0
    cache = []
    for W, b, act in model.layers(params):
        z = s @ W
        z[0] += b
        if act == "linear":
            cache.append((s, z, None))
            s = z
            continue
        f0, f1, f2, f3 = activation(act, z[0], 3)
        z1, z2 = z[1:1 + k], z[1 + k:]
        a = np.empty_like(z)
        a[0] = f0
        a[1:1 + k] = f1 * z1
        a[1 + k:] = f2 * z1 * z1 + f1 * z2
        cache.append((s, z, (f1, f2, f3)))
        s = a
    return s, cache


def jets_backward(model, cache, gout, k, params=None):
    """Reverse pass through :func:`jets_cached`; ``gout`` matches its output."""
    grad = np.zeros(model.size)
    layers = model.layers(params)
    layout = model.layout
    g = gout
    for i in range(len(layers) - 1, -1, -1):
        W, _, _ = layers[i]
        s, z, derivs = cache[i]
        if derivs is not None:
            f1, f2, f3 = derivs
            z1, z2 = z[1:1 + k], z[1 + k:]
            ga1, ga2 = g[1:1 + k], g[1 + k:]
            gz = np.empty_like(g)
            gz[0] = g[0] * f1 + np.sum(ga1 * z1 * f2 + ga2 * (f3 * z1 * z1 + f2 * z2), axis=0)
            gz[1:1 + k] = ga1 * f1 + 2.0 * ga2 * f2 * z1
            gz[1 + k:] = ga2 * f1
            g = gz
        we, be = layout[2 * i], layout[2 * i + 1]
        grad[we.offset:we.offset + we.size] = (
            s.reshape(-1, s.shape[-1]).T @ g.reshape(-1, g.shape[-1])).ravel()
        grad[be.offset:be.offset + be.size] = g[0].sum(axis=0)
        if i > 0:
            g = g @ W.T
    return grad


def input_jets(model, x, axes, params=None):
    """Batched jets: ``(u, d1, d2)`` with shapes ``(n,)``, ``(k, n)``, ``(k, n)``."""
    if model.spec.output_width != 1:
        raise NotImplementedError("input jets are only supported for single-output models")
    x, _ = _check_input(model, x)
    k = len(axes)
    s, _ = jets_cached(model, x, tuple(axes), params)
    return s[0, :, 0], s[1:1 + k, :, 0], s[1 + k:, :, 0]


def input_jet(model, x, direction):
    """``Jet2(u, du/dxi, d2u/dxi2)`` at a single input point along one axis."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError("input_jet takes a single input vector")
    if not 0 <= direction < model.spec.input_width:
        raise ValueError(f"axis {direction} out of range")
    u, d1, d2 = input_jets(model, x[None, :], (direction,))
    return Jet2(float(u[0]), float(d1[0, 0]), float(d2[0, 0]))


# -- residual losses ----------------------------------------------------------

class LinearResidual:
    """Residual ``c0*u + sum_a c1[a]*du/dx_a + sum_a c2[a]*d2u/dx_a^2 - rhs``."""

    def __init__(self, value=0.0, first=None, second=None):
        self.value = float(value)
        self.first = dict(first or {})
        self.second = dict(second or {})
        self.axes = tuple(sorted(set(self.first) | set(self.second)))

    def __call__(self, u, d1, d2, rhs=None):
        r = self.value * u
        for j, ax in enumerate(self.axes):
            r = r + self.first.get(ax, 0.0) * d1[j] + self.second.get(ax, 0.0) * d2[j]
        if rhs is not None:
            r = r - rhs
        return r

    def vjp(self, gr):
        """Adjoints of ``(u, d1, d2)`` given the residual adjoint ``gr``."""
        k = len(self.axes)
        gu = self.value * gr
        gd1 = np.stack([self.first.get(ax, 0.0) * gr for ax in self.axes]) if k else None
        gd2 = np.stack([self.second.get(ax, 0.0) * gr for ax in self.axes]) if k else None
        return gu, gd1, gd2


def heat_residual(diffusivity, space_axes=(0, 1), time_axis=2):
    """``u_t - v * (u_xx + u_yy)`` for inputs ordered ``(x, y, t)``."""
    return LinearResidual(first={time_axis: 1.0},
                          second={ax: -float(diffusivity) for ax in space_axes})


def residual_param_grad(model, residual, x, params=None, rhs=None):
    """Mean squared residual over collocation points ``x`` and its gradient."""
    if model.spec.output_width != 1:
        raise NotImplementedError("residual losses need a single-output model")
    x, _ = _check_input(model, x)
    if x.shape[0] == 0:
        raise ValueError("empty collocation batch")
    k = len(residual.axes)
    s, cache = jets_cached(model, x, residual.axes, params)
    u, d1, d2 = s[0, :, 0], s[1:1 + k, :, 0], s[1 + k:, :, 0]
    r = residual(u, d1, d2, rhs)
    sq = r * r
    value = float(np.mean(sq))
    if not np.isfinite(value):
        _raise_nonfinite(sq, "residual")
    gr = 2.0 * r / r.size
    gu, gd1, gd2 = residual.vjp(gr)
    gout = np.zeros_like(s)
    gout[0, :, 0] = gu
    if k:
        gout[1:1 + k, :, 0] = gd1
        gout[1 + k:, :, 0] = gd2
    grad = jets_backward(model, cache, gout, k, params)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite residual gradient")
    return value, grad
