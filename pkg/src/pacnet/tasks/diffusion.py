"""2-D diffusion on (0, 2)^2 with a hot square: FD oracle and PINN losses.

Inputs to PINN models are ordered ``(x, y, t)``.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from ..autodiff import forward, heat_residual, param_grad, residual_param_grad

SOURCE_V = 0.01
TARGET_V = 0.1
EVAL_TIMES = (0.25, 0.5, 0.75, 1.0)


@dataclass(frozen=True)
class DiffusionProblem:
    v: float
    length: float = 2.0
    t_end: float = 1.0
    square: tuple = (0.5, 1.0)


def initial_condition(x, y, square=(0.5, 1.0)):
    lo, hi = square
    inside = (x > lo) & (x < hi) & (y > lo) & (y < hi)
    return np.where(inside, 2.0, 1.0)


def _overlap_fraction(centers, h, lo, hi):
    left = np.maximum(centers - 0.5 * h, lo)
    right = np.minimum(centers + 0.5 * h, hi)
    return np.clip(right - left, 0.0, None) / h


@dataclass
class FieldGrid:
    """Nodal values ``values[i, j] = u(x_i, y_j)`` on a uniform grid at ``time``."""
    values: np.ndarray
    time: float
    v: float
    length: float = 2.0

    @property
    def nx(self):
        return self.values.shape[0]

    @property
    def ny(self):
        return self.values.shape[1]

    def coords(self):
        return np.linspace(0.0, self.length, self.nx), np.linspace(0.0, self.length, self.ny)

    def points(self, interior=False):
        """``(n, 3)`` array of ``(x, y, t)`` nodes and the matching values."""
        xs, ys = self.coords()
        X, Y = np.meshgrid(xs, ys, indexing="ij")
        vals = self.values
        if interior:
            X, Y, vals = X[1:-1, 1:-1], Y[1:-1, 1:-1], vals[1:-1, 1:-1]
        pts = np.stack([X.ravel(), Y.ravel(), np.full(X.size, self.time)], axis=1)
        return pts, vals.ravel()


def grid_initial_condition(problem, n):
    """Cell-averaged initial field: nodes straddling the square's edge get the
    area fraction, which keeps the discontinuity second-order consistent."""
    h = problem.length / (n - 1)
    xs = np.linspace(0.0, problem.length, n)
    lo, hi = problem.square
    fx = _overlap_fraction(xs, h, lo, hi)
    u = 1.0 + np.outer(fx, fx)
    u[0, :] = u[-1, :] = u[:, 0] = u[:, -1] = 1.0
    return u


def stable_dt(problem, n, safety=0.2):
    h = problem.length / (n - 1)
    return safety * h * h / (4.0 * problem.v)


def fd_diffusion_solve(problem, times, n=101, dt=None, safety=0.2):
    """Explicit FTCS solution sampled at ``times`` (ascending, ``>= 0``)."""
    times = np.asarray(times, dtype=np.float64)
    if np.any(np.diff(times) <= 0) or times[0] < 0:
        raise ValueError("times must be ascending and non-negative")
    h = problem.length / (n - 1)
    limit = h * h / (4.0 * problem.v)
    dt_max = stable_dt(problem, n, safety) if dt is None else float(dt)
    if dt_max > limit:
        raise ValueError(f"dt={dt_max} violates the stability bound {limit}")
    u = grid_initial_condition(problem, n)
    out = []
    t = 0.0
    for target in times:
        span = target - t
        if span > 0:
            steps = int(np.ceil(span / dt_max - 1e-9))
            step = span / steps
            r = problem.v * step / (h * h)
            for _ in range(steps):
                c = u[1:-1, 1:-1]
                lap = u[2:, 1:-1] + u[:-2, 1:-1] + u[1:-1, 2:] + u[1:-1, :-2] - 4.0 * c
                u[1:-1, 1:-1] = c + r * lap
            t = target
        out.append(FieldGrid(u.copy(), float(target), problem.v, problem.length))
    return out


def series_solution(problem, x, y, t, n_terms=4000):
    """Exact solution from the sine series; ``u - 1`` separates as ``X(x) X(y)``.

    Evaluated on the tensor grid ``x`` by ``y`` at one time ``t > 0``.
    """
    if t <= 0:
        raise ValueError("the truncated series is only usable for t > 0")
    L = problem.length
    lo, hi = problem.square
    k = np.arange(1, n_terms + 1)[:, None]
    coef = 2.0 / (k * np.pi) * (np.cos(k * np.pi * lo / L) - np.cos(k * np.pi * hi / L))
    decay = np.exp(-problem.v * (k * np.pi / L) ** 2 * t)

    def factor(s):
        return np.sum(coef * decay * np.sin(k * np.pi * np.asarray(s)[None, :] / L), axis=0)

    return 1.0 + np.outer(factor(x), factor(y))


# -- PINN losses --------------------------------------------------------------

def sample_interior(n, rng, length=2.0, t_end=1.0):
    return np.column_stack([rng.uniform(0, length, n), rng.uniform(0, length, n),
                            rng.uniform(0, t_end, n)])


def sample_initial(n, rng, length=2.0):
    x, y = rng.uniform(0, length, n), rng.uniform(0, length, n)
    return np.column_stack([x, y, np.zeros(n)]), initial_condition(x, y)


def sample_boundary(n, rng, length=2.0, t_end=1.0):
    side = rng.integers(0, 4, n)
    s = rng.uniform(0, length, n)
    edge = np.where(side % 2 == 0, 0.0, length)
    x = np.where(side < 2, edge, s)
    y = np.where(side < 2, s, edge)
    return np.column_stack([x, y, rng.uniform(0, t_end, n)]), np.ones(n)


def pinn_source_loss(model, v, colloc, ic, bc, weights=(1.0, 1.0, 1.0), params=None):
    """Weighted PDE-residual + initial + boundary MSE, with its gradient.

    ``ic`` and ``bc`` are ``(points, target_values)`` pairs.  Returns
    ``(total, grad, parts)`` with ``parts`` the unweighted components.
    """
    w_r, w_ic, w_bc = weights
    res, g_res = residual_param_grad(model, heat_residual(v), colloc, params)
    l_ic, g_ic = param_grad(model, ic[0], ic[1], params=params)
    l_bc, g_bc = param_grad(model, bc[0], bc[1], params=params)
    total = w_r * res + w_ic * l_ic + w_bc * l_bc
    grad = w_r * g_res + w_ic * g_ic + w_bc * g_bc
    return total, grad, {"residual": res, "initial": l_ic, "boundary": l_bc}


class PinnSourceObjective:
    """Source PINN objective with point pools redrawn every epoch.

    A batch of collocation indices also selects the same number of initial
    and boundary points (pools are indexed modulo their size).
    """

    def __init__(self, v, n_colloc=10_000, n_ic=2_500, n_bc=2_500, weights=(1.0, 1.0, 1.0)):
        self.v = v
        self.n = n_colloc
        self.n_ic, self.n_bc = n_ic, n_bc
        self.weights = weights
        self.colloc = self.ic = self.bc = None

    def begin_epoch(self, rng):
        self.colloc = sample_interior(self.n, rng)
        self.ic = sample_initial(self.n_ic, rng)
        self.bc = sample_boundary(self.n_bc, rng)

    def _ensure(self):
        if self.colloc is None:
            self.begin_epoch(np.random.default_rng(0))

    def loss_grad(self, model, idx):
        self._ensure()
        i_ic, i_bc = idx % self.n_ic, idx % self.n_bc
        total, grad, _ = pinn_source_loss(
            model, self.v, self.colloc[idx], (self.ic[0][i_ic], self.ic[1][i_ic]),
            (self.bc[0][i_bc], self.bc[1][i_bc]), self.weights)
        return total, grad

    def sample_nll_grad(self, model, i):
        self._ensure()
        _, grad = self.loss_grad(model, np.array([i]))
        return 0.5 * grad


def target_observations(oracle_grids, n_points=None, rng=None):
    """Stack observed target fields into ``(x, y, t)`` points and values."""
    pts, vals = zip(*(g.points() for g in oracle_grids))
    x, u = np.concatenate(pts), np.concatenate(vals)
    if n_points is not None and n_points < len(x):
        idx = np.sort(rng.choice(len(x), size=n_points, replace=False))
        x, u = x[idx], u[idx]
    return x, u.reshape(-1, 1)


def pinn_target_loss(model, x, u, params=None):
    pred = forward(model, x, params)
    return float(np.mean((pred - np.asarray(u).reshape(pred.shape)) ** 2))


def pinn_rmse_at(model, oracle_grids, params=None):
    """RMSE over interior nodes, one value per oracle grid."""
    out = []
    for g in oracle_grids:
        pts, vals = g.points(interior=True)
        pred = forward(model, pts, params)[:, 0]
        out.append(float(np.sqrt(np.mean((pred - vals) ** 2))))
    return out


# -- persistence --------------------------------------------------------------

FIELD_MAGIC = b"PACFIELD"


def save_fieldgrids(path, grids):
    """Each grid: uint64 LE header length, JSON header, float64 LE row-major values."""
    with open(path, "wb") as f:
        f.write(FIELD_MAGIC)
        f.write(struct.pack("<Q", len(grids)))
        for g in grids:
            header = json.dumps({"nx": g.nx, "ny": g.ny, "time": g.time, "v": g.v,
                                 "length": g.length}, sort_keys=True).encode("utf-8")
            f.write(struct.pack("<Q", len(header)))
            f.write(header)
            f.write(np.ascontiguousarray(g.values, dtype="<f8").tobytes())


def load_fieldgrids(path):
    with open(path, "rb") as f:
        data = f.read()
    if data[:8] != FIELD_MAGIC:
        raise ValueError(f"{path}: not a field-grid bundle")
    (count,) = struct.unpack("<Q", data[8:16])
    pos = 16
    grids = []
    for _ in range(count):
        (hlen,) = struct.unpack("<Q", data[pos:pos + 8])
        pos += 8
        h = json.loads(data[pos:pos + hlen].decode("utf-8"))
        pos += hlen
        n = h["nx"] * h["ny"]
        vals = np.frombuffer(data, dtype="<f8", count=n, offset=pos).reshape(h["nx"], h["ny"])
        pos += 8 * n
        grids.append(FieldGrid(vals.astype(np.float64), h["time"], h["v"], h["length"]))
    return grids
