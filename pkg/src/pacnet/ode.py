"""ODE integrators and Neural-ODE fitting through unrolled RK4 steps.

Vector fields are callables ``f(t, y) -> dy/dt`` acting on the last axis of
``y``; a leading batch axis integrates many trajectories at once.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import NonFiniteError, backward, forward_cached


class StepSizeUnderflow(RuntimeError):
    def __init__(self, message, t):
        super().__init__(message)
        self.t = t


@dataclass
class StateTrajectory:
    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.shape[0] != self.times.shape[0]:
            raise ValueError("states and times have different lengths")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")


@dataclass(frozen=True)
class DuffingField:
    """``dq/dt = p``, ``dp/dt = -alpha q - beta q^3 - gamma p``."""
    alpha: float
    beta: float
    gamma: float

    def __call__(self, t, y):
        q, p = y[..., 0], y[..., 1]
        return np.stack([p, -self.alpha * q - self.beta * q ** 3 - self.gamma * p], axis=-1)

    def energy(self, y):
        q, p = y[..., 0], y[..., 1]
        return 0.5 * p ** 2 + 0.5 * self.alpha * q ** 2 + 0.25 * self.beta * q ** 4


class NetworkField:
    """Autonomous vector field given by a network mapping state to derivative."""

    def __init__(self, model, params=None):
        if model.spec.input_width != model.spec.output_width:
            raise ValueError("vector-field network must map state to state")
        self.model = model
        self.params = params

    def __call__(self, t, y):
        shape = y.shape
        out, _ = forward_cached(self.model, y.reshape(-1, shape[-1]), self.params)
        return out.reshape(shape)


def _check_finite(y, t):
    if not np.all(np.isfinite(y)):
        raise NonFiniteError(f"non-finite state at t={t}")


def rk4_step(f, t, y, h):
    k1 = f(t, y)
    k2 = f(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = f(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = f(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4(f, y0, t_grid, substeps=1):
    """Classical RK4 through ``t_grid`` with ``substeps`` equal steps per interval."""
    t_grid = np.asarray(t_grid, dtype=np.float64)
    if np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    y = np.array(y0, dtype=np.float64)
    out = [y.copy()]
    for t0, t1 in zip(t_grid[:-1], t_grid[1:]):
        h = (t1 - t0) / substeps
        for s in range(substeps):
            y = rk4_step(f, t0 + s * h, y, h)
        _check_finite(y, t1)
        out.append(y.copy())
    return StateTrajectory(t_grid, np.stack(out))


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200,
                    187 / 2100, 1 / 40])
# Hairer's dense-output coefficients (contd5)
_D = np.array([-12715105075 / 11282082432, 0.0, 87487479700 / 32700410799,
               -10690763975 / 1880347072, 701980252875 / 199316789632,
               -1453857185 / 822651844, 69997945 / 29380423])


def _initial_step(f, t0, y0, f0, rtol, atol):
    scale = atol + rtol * np.abs(y0)
    d0 = np.sqrt(np.mean((y0 / scale) ** 2))
    d1 = np.sqrt(np.mean((f0 / scale) ** 2))
    h0 = 1e-6 if d0 < 1e-5 or d1 < 1e-5 else 0.01 * d0 / d1
    f1 = f(t0 + h0, y0 + h0 * f0)
    d2 = np.sqrt(np.mean(((f1 - f0) / scale) ** 2)) / h0
    h1 = max(1e-6, h0 * 1e-3) if max(d1, d2) <= 1e-15 else (0.01 / max(d1, d2)) ** 0.2
    return min(100 * h0, h1)


def dopri5(f, y0, t_span, t_eval=None, rtol=1e-6, atol=1e-8, max_steps=1_000_000):
    """Adaptive Dormand-Prince 5(4) with dense output at ``t_eval``.

    Error control uses the RMS norm over all state components, so a batch of
    trajectories shares one step-size sequence.
    """
    if rtol <= 0 or atol <= 0:
        raise ValueError("rtol and atol must be positive")
    t0, tf = map(float, t_span)
    if t_eval is None:
        t_eval = np.array([t0, tf])
    t_eval = np.asarray(t_eval, dtype=np.float64)
    if np.any(np.diff(t_eval) <= 0) or t_eval[0] < t0 or t_eval[-1] > tf:
        raise ValueError("t_eval must be increasing and inside t_span")

    y = np.array(y0, dtype=np.float64)
    out = np.empty((len(t_eval),) + y.shape)
    n_out = 0
    while n_out < len(t_eval) and t_eval[n_out] == t0:
        out[n_out] = y
        n_out += 1

    t = t0
    k = [None] * 7
    k[0] = f(t, y)
    h = _initial_step(f, t, y, k[0], rtol, atol)
    steps = 0
    while n_out < len(t_eval):
        if steps >= max_steps:
            raise StepSizeUnderflow(f"too many steps (last accepted t={t})", t)
        h = min(h, tf - t)
        if h < 16 * np.finfo(float).eps * max(abs(t), 1.0):
            raise StepSizeUnderflow(f"step size underflow at t={t}", t)
        for i in range(1, 7):
            yi = y + h * sum(a * k[j] for j, a in enumerate(_A[i]) if a != 0.0)
            k[i] = f(t + _C[i] * h, yi)
        y_new = yi  # stage 7 is evaluated at the 5th-order solution (FSAL)
        err = h * sum(e * kk for e, kk in zip(_E, k) if e != 0.0)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err_norm = np.sqrt(np.mean((err / scale) ** 2))
        steps += 1
        if not np.isfinite(err_norm):
            h *= 0.2
            continue
        if err_norm <= 1.0:
            t_new = t + h
            while n_out < len(t_eval) and t_eval[n_out] <= t_new:
                theta = (t_eval[n_out] - t) / h
                dy = y_new - y
                bspl = h * k[0] - dy
                r4 = dy - h * k[6] - bspl
                r5 = h * sum(d * kk for d, kk in zip(_D, k) if d != 0.0)
                out[n_out] = y + theta * (dy + (1 - theta) * (bspl + theta * (r4 + (1 - theta) * r5)))
                n_out += 1
            t, y = t_new, y_new
            _check_finite(y, t)
            k[0] = k[6]
            fac = 5.0 if err_norm == 0 else min(5.0, 0.9 * err_norm ** -0.2)
        else:
            fac = max(0.2, 0.9 * err_norm ** -0.2)
        h *= fac
    return StateTrajectory(t_eval, out)


# -- Neural ODE training ------------------------------------------------------

def rk4_unroll(model, y, h, substeps, params=None):
    """Integrate ``y`` (batch, 2) by ``substeps`` RK4 steps of size ``h`` (batch, 1).

    Returns the end state and the network caches needed by :func:`rk4_unroll_grad`.
    """
    tape = []
    for _ in range(substeps):
        stage = []
        yi = y
        ks = []
        for coef in (None, 0.5, 0.5, 1.0):
            inp = yi if coef is None else y + coef * h * ks[-1]
            k, cache = forward_cached(model, inp, params)
            ks.append(k)
            stage.append(cache)
        tape.append(stage)
        y = y + (h / 6.0) * (ks[0] + 2.0 * ks[1] + 2.0 * ks[2] + ks[3])
    return y, tape


def rk4_unroll_grad(model, tape, h, g_end, params=None):
    """Reverse pass through :func:`rk4_unroll` given ``dLoss/dy_end``."""
    grad = np.zeros(model.size)
    gy = g_end
    for stage in reversed(tape):
        gk = [h / 6.0 * gy, h / 3.0 * gy, h / 3.0 * gy, h / 6.0 * gy]
        gy_acc = gy.copy()
        coefs = (None, 0.5, 0.5, 1.0)
        for j in (3, 2, 1, 0):
            gp, gin = backward(model, stage[j], gk[j], params, need_input=True)
            grad += gp
            gy_acc += gin
            if coefs[j] is not None:
                gk[j - 1] = gk[j - 1] + coefs[j] * h * gin
        gy = gy_acc
    return grad


def node_fit_grad(model, y0, y1, dt, substeps=10, params=None):
    """MSE between RK4 predictions ``y0 -> y0 + dt`` and ``y1``, with gradient."""
    y0 = np.asarray(y0, dtype=np.float64)
    y1 = np.asarray(y1, dtype=np.float64)
    if y0.ndim != 2 or y0.shape[0] == 0 or y0.shape != y1.shape:
        raise ValueError("need a non-empty batch of matching state pairs")
    h = np.broadcast_to(np.asarray(dt, dtype=np.float64), (y0.shape[0],)).reshape(-1, 1)
    if np.any(h <= 0):
        raise ValueError("transition time steps must be positive")
    h = h / substeps
    pred, tape = rk4_unroll(model, y0, h, substeps, params)
    diff = pred - y1
    per = np.mean(diff * diff, axis=1)
    loss = float(np.mean(per))
    if not np.isfinite(loss):
        bad = np.flatnonzero(~np.isfinite(per))
        idx = int(bad[0]) if bad.size else None
        raise NonFiniteError(f"non-finite transition loss at pair {idx}", index=idx)
    grad = rk4_unroll_grad(model, tape, h, 2.0 * diff / diff.size, params)
    if not np.all(np.isfinite(grad)):
        raise NonFiniteError("non-finite Neural-ODE gradient")
    return loss, grad


class TransitionObjective:
    """One-step (teacher-forced) transition pairs for Neural-ODE training."""

    def __init__(self, y0, y1, dt, substeps=10):
        self.y0 = np.asarray(y0, dtype=np.float64)
        self.y1 = np.asarray(y1, dtype=np.float64)
        self.dt = np.broadcast_to(np.asarray(dt, dtype=np.float64), (len(self.y0),)).copy()
        self.substeps = substeps
        self.n = len(self.y0)

    def loss_grad(self, model, idx):
        return node_fit_grad(model, self.y0[idx], self.y1[idx], self.dt[idx], self.substeps)

    def sample_nll_grad(self, model, i):
        # gradient of 0.5*||pred - y||^2; node_fit_grad returns that of the mean over 2 components
        _, g = node_fit_grad(model, self.y0[i:i + 1], self.y1[i:i + 1], self.dt[i:i + 1],
                             self.substeps)
        return g * (self.y0.shape[1] / 2.0)

    def loss(self, model, params=None):
        h = (self.dt / self.substeps).reshape(-1, 1)
        pred, _ = rk4_unroll(model, self.y0, h, self.substeps, params)
        return float(np.mean((pred - self.y1) ** 2))
