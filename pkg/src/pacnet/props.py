"""Fast invariant checks: pruning, hard constraints, derivatives, solvers, oracle.

Each ``check_*`` returns a :class:`CheckResult`; :func:`run_all` runs them in
order.  They are small enough to finish in well under a minute on one core
and back both the ``props`` CLI command and the acceptance tests.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import forward, heat_residual, input_jet, param_grad, residual_param_grad
from .nn import NetworkSpec, build
from .ode import DuffingField, dopri5, node_fit_grad, rk4
from .optim import Penalty, TrainConfig, train
from .rng import stream
from .tasks.diffusion import DiffusionProblem, fd_diffusion_solve, series_solution
from .transfer import RegressionObjective, allocate, calibrate, keep_count, prune, prune_model


@dataclass
class CheckResult:
    name: str
    ok: bool
    detail: str

    def line(self):
        return f"{'PASS' if self.ok else 'FAIL'}  {self.name}: {self.detail}"


def rel_err(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / scale)


def central_diff(fn, x, h):
    """Central differences of scalar ``fn`` with respect to every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    g = np.empty_like(x)
    for i in range(x.size):
        old = x[i]
        x[i] = old + h
        fp = fn(x)
        x[i] = old - h
        fm = fn(x)
        x[i] = old
        g[i] = (fp - fm) / (2.0 * h)
    return g


def _net(input_width, width, depth, act, output_width=1, seed=0):
    return build(NetworkSpec.mlp(input_width, width, depth, act, output_width, seed))


# -- 1: pruning mask ----------------------------------------------------------

def check_mask_exactness(n_cases=100, seed=0):
    rng = stream(seed, "props", "mask")
    for _ in range(n_cases):
        d = int(rng.integers(1, 5000))
        r = float(rng.uniform(0.0, 0.999))
        w = rng.normal(size=d)
        m = prune(w, r)
        k = keep_count(d, r)
        if int(m.bits.sum()) != k or m.keep_count != k:
            return CheckResult("mask exactness", False, f"D={d} r={r}: popcount "
                               f"{int(m.bits.sum())} != K={k}")
        if k and k < d and np.min(np.abs(w[m.bits])) < np.max(np.abs(w[~m.bits])):
            return CheckResult("mask exactness", False, f"D={d} r={r}: not top-K")
    # ties: equal magnitudes (either sign) must be kept lowest index first
    tie_cases = [
        (np.ones(10), 0.5, np.arange(5)),
        (np.array([1.0, -1.0, 1.0, -1.0, 2.0, 0.5]), 0.5, np.array([0, 1, 4])),
        (np.array([0.0, 3.0, -3.0, 3.0, 0.0]), 0.6, np.array([1, 2])),
        (np.zeros(7), 0.7, np.array([0, 1])),
    ]
    for w, r, expect in tie_cases:
        got = np.flatnonzero(prune(w, r).bits)
        if not np.array_equal(got, expect):
            return CheckResult("mask exactness", False, f"ties {w.tolist()}: kept {got.tolist()}")
    return CheckResult("mask exactness", True,
                       f"{n_cases} random (D, r) pairs and {len(tie_cases)} tie cases")


# -- 2: hard constraint -------------------------------------------------------

def _toy_transfer(seed):
    rng = stream(seed, "props", "toy")
    x = rng.uniform(-1, 1, (64, 3))
    y_s = np.sin(2 * x[:, :1]) + x[:, 1:2] * x[:, 2:3]
    y_t = y_s + 0.5 * np.cos(3 * x[:, 1:2])
    model = _net(3, 16, 2, "tanh", seed=seed)
    src, tgt = RegressionObjective(x, y_s), RegressionObjective(x, y_t)
    return model, src, tgt


def check_hard_constraint(seed=0, lam=0.01, ratio=0.8):
    model, src, tgt = _toy_transfer(seed)
    cfg = TrainConfig(20, 16, lr=1e-2)
    train(model, src, cfg, stream(seed, "props", "pretrain"))
    mask = prune_model(model, ratio)
    w_u, _ = allocate(model, mask, src, cfg, stream(seed, "props", "allocate"))
    worst = []
    for init, pen in (("zero", "l2_zero"), ("zero", "none"), ("random", "l2_zero")):
        w_t, _ = calibrate(model, mask, w_u, tgt, lam, cfg, stream(seed, "props", init, pen),
                           init_mode=init, penalty=pen)
        if not np.array_equal(w_t[mask.bits], w_u[mask.bits]):
            return CheckResult("hard constraint", False, f"{init}/{pen}: w_U changed")
        if np.all(w_t[mask.pruned] == 0):
            return CheckResult("hard constraint", False, f"{init}/{pen}: w_P never moved")
        zeroed = mask.apply(w_t)
        if not np.array_equal(forward(model, src.x, zeroed), forward(model, src.x, w_u)):
            return CheckResult("hard constraint", False,
                               f"{init}/{pen}: w_P=0 does not reproduce the allocated model")
        worst.append(float(np.max(np.abs(w_t[mask.pruned]))))
    return CheckResult("hard constraint", True,
                       f"w_U bit-identical over 3 calibrations (max |w_P| {max(worst):.3g})")


# -- 3/4: derivatives -----------------------------------------------------------

def check_param_grad(seed=0, tol=1e-6):
    worst = 0.0
    rng = stream(seed, "props", "param-grad")
    for act in ("tanh", "swish", "relu", "exp"):
        model = _net(4, 16, 2, act, output_width=2, seed=seed)
        model.params *= 0.5
        x, y = rng.normal(size=(8, 4)), rng.normal(size=(8, 2))
        _, g = param_grad(model, x, y)
        fd = central_diff(lambda p: param_grad(model, x, y, params=p)[0], model.params, 1e-6)
        worst = max(worst, rel_err(g, fd))
    return CheckResult("param_grad vs finite differences", worst <= tol,
                       f"max relative error {worst:.2e} (tol {tol:g})")


def check_residual_grad(seed=0, tol=1e-5):
    rng = stream(seed, "props", "residual-grad")
    worst = 0.0
    for act in ("tanh", "swish"):
        model = _net(3, 12, 2, act, seed=seed)
        x = rng.uniform(0, 1, (10, 3))
        res = heat_residual(0.1)
        _, g = residual_param_grad(model, res, x)
        fd = central_diff(lambda p: residual_param_grad(model, res, x, params=p)[0],
                          model.params, 1e-6)
        worst = max(worst, rel_err(g, fd))
    return CheckResult("residual_param_grad vs finite differences", worst <= tol,
                       f"max relative error {worst:.2e} (tol {tol:g})")


def check_node_grad(seed=0, tol=1e-5):
    rng = stream(seed, "props", "node-grad")
    model = _net(2, 16, 2, "tanh", output_width=2, seed=seed)
    y0 = rng.uniform(-1, 1, (6, 2))
    y1 = y0 + 0.1 * rng.normal(size=(6, 2))
    _, g = node_fit_grad(model, y0, y1, 0.1, substeps=5)
    fd = central_diff(lambda p: node_fit_grad(model, y0, y1, 0.1, 5, params=p)[0],
                      model.params, 1e-6)
    err = rel_err(g, fd)
    return CheckResult("node_fit_grad vs finite differences", err <= tol,
                       f"relative error {err:.2e} (tol {tol:g})")


def check_jets(seed=0, tol=1e-5):
    rng = stream(seed, "props", "jets")
    worst = 0.0
    for act in ("tanh", "swish", "exp"):
        model = _net(3, 16, 2, act, seed=seed)
        model.params *= 0.7
        for _ in range(5):
            x = rng.uniform(-1, 1, 3)
            for ax in range(3):
                jet = input_jet(model, x, ax)
                e = np.zeros(3)

                def f(s):
                    return float(forward(model, x + s * e)[0])

                e[ax] = 1.0
                h1, h2 = 1e-5, 1e-4
                d1 = (f(h1) - f(-h1)) / (2 * h1)
                d2 = (f(h2) - 2 * f(0.0) + f(-h2)) / (h2 * h2)
                worst = max(worst, abs(jet.d1 - d1) / max(abs(d1), 1e-3),
                            abs(jet.d2 - d2) / max(abs(d2), 1e-3))
    return CheckResult("input_jet vs finite differences", worst <= tol,
                       f"max relative error {worst:.2e} (tol {tol:g})")


# -- 5: solvers -----------------------------------------------------------------

def harmonic_errors():
    """Max-abs errors of RK4 (h=0.01) and dopri5 against cos/sin over 10 s."""
    f = DuffingField(1.0, 0.0, 0.0)
    t = np.linspace(0.0, 10.0, 101)
    exact = np.stack([np.cos(t), -np.sin(t)], axis=1)
    y0 = np.array([1.0, 0.0])
    e_rk4 = np.max(np.abs(rk4(f, y0, t, substeps=10).states - exact))
    e_dp = np.max(np.abs(dopri5(f, y0, (0, 10), t, rtol=1e-10, atol=1e-12).states - exact))
    return float(e_rk4), float(e_dp)


def rk4_order():
    f = DuffingField(1.0, 0.0, 0.0)
    y0 = np.array([1.0, 0.0])
    exact = np.array([np.cos(10.0), -np.sin(10.0)])
    errs = []
    for n in (50, 100, 200):
        y = rk4(f, y0, np.linspace(0.0, 10.0, n + 1)).states[-1]
        errs.append(np.linalg.norm(y - exact))
    return float(np.mean(np.log2(np.array(errs[:-1]) / np.array(errs[1:]))))


def duffing_energy_checks(seed=0):
    rng = stream(seed, "props", "energy")
    y0 = rng.uniform(-1, 1, (8, 2))
    t = np.linspace(0.0, 10.0, 201)
    drift = 0.0
    for f in (DuffingField(1.0, 0.0, 0.0), DuffingField(-1.0, 1.0, 0.0)):
        states = dopri5(f, y0, (0, 10), t, rtol=1e-10, atol=1e-12).states
        h = f.energy(states)
        drift = max(drift, float(np.max(np.abs(h - h[0]))))
    rise = 0.0
    for f in (DuffingField(1.0, 0.0, 0.3), DuffingField(-1.0, 1.0, 0.3)):
        h = f.energy(dopri5(f, y0, (0, 10), t, rtol=1e-10, atol=1e-12).states)
        rise = max(rise, float(np.max(np.diff(h, axis=0))))
    return drift, rise


def check_solvers(tol=1e-6):
    e_rk4, e_dp = harmonic_errors()
    order = rk4_order()
    drift, rise = duffing_energy_checks()
    ok = e_rk4 <= tol and e_dp <= tol and 3.8 <= order <= 4.2 and drift <= 1e-6 and rise <= 1e-9
    return CheckResult("ODE solvers", ok,
                       f"rk4 err {e_rk4:.1e}, dopri5 err {e_dp:.1e}, rk4 order {order:.3f}, "
                       f"undamped drift {drift:.1e}, damped max rise {rise:.1e}")


# -- 6: FD oracle -------------------------------------------------------------------

def fd_convergence(v=0.1, t=0.5, grids=(51, 101, 201)):
    """Observed order of the FD oracle against the exact series solution.

    Returns ``(fitted order, pairwise orders, self-difference order)``.  The
    fitted order is the slope of log RMS error against log h over all grids.
    Plain self-differences are reported too but are not used for the verdict:
    the square's edge sits on a cell face at 51 nodes and on a node at 101 and
    201, which perturbs the coarsest difference.
    """
    prob = DiffusionProblem(v)
    coarse = grids[0] - 1
    errs, sampled = [], []
    for n in grids:
        g = fd_diffusion_solve(prob, (t,), n=n)[0]
        xs, ys = g.coords()
        errs.append(np.sqrt(np.mean((g.values - series_solution(prob, xs, ys, t)) ** 2)))
        step = (n - 1) // coarse
        sampled.append(g.values[::step, ::step])
    hs = np.array([prob.length / (n - 1) for n in grids])
    fitted = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    pairwise = [float(np.log2(a / b)) for a, b in zip(errs[:-1], errs[1:])]
    d = [np.sqrt(np.mean((a - b) ** 2)) for a, b in zip(sampled[:-1], sampled[1:])]
    return fitted, pairwise, float(np.log2(d[0] / d[1]))


BOUND_SLACK = 1e-12


def fd_bounds(v=0.1, n=101, times=(0.0, 0.25, 0.5, 0.75, 1.0)):
    grids = fd_diffusion_solve(DiffusionProblem(v), times, n=n)
    return min(float(g.values.min()) for g in grids), max(float(g.values.max()) for g in grids)


def check_fd_oracle():
    lo = hi = None
    for v in (0.01, 0.1):
        a, b = fd_bounds(v)
        lo = a if lo is None else min(lo, a)
        hi = b if hi is None else max(hi, b)
    order, pairwise, self_order = fd_convergence()
    # the update is a convex combination, so only rounding can leave [1, 2]
    ok = lo >= 1.0 - BOUND_SLACK and hi <= 2.0 + BOUND_SLACK and 1.8 <= order <= 2.2
    return CheckResult("FD oracle", ok, f"range [{lo!r}, {hi!r}], order vs series "
                       f"{order:.3f} (pairs {pairwise[0]:.2f}, {pairwise[1]:.2f}; "
                       f"self-difference {self_order:.2f})")


# -- 7: degeneracies --------------------------------------------------------------

def check_degeneracies(seed=0):
    model, src, tgt = _toy_transfer(seed)
    cfg = TrainConfig(10, 16, lr=1e-2)
    train(model, src, cfg, stream(seed, "props", "pretrain"))
    mask = prune_model(model, 0.8)
    w_u, _ = allocate(model, mask, src, cfg, stream(seed, "props", "allocate"))
    fails = []

    a, _ = calibrate(model, mask, w_u, tgt, 0.0, cfg, stream(seed, "d"), penalty="l2_zero")
    b, _ = calibrate(model, mask, w_u, tgt, 0.0, cfg, stream(seed, "d"), penalty="none")
    if not np.array_equal(a, b):
        fails.append("lambda=0")

    ones = type(mask)(np.ones(model.size, dtype=bool), model.size)
    a, _ = allocate(model, ones, src, cfg, stream(seed, "e"))
    plain = model.copy()
    train(plain, src, cfg, stream(seed, "e"))
    if not np.array_equal(a, plain.params):
        fails.append("all-ones allocation")

    rng = stream(seed, "props", "fisher")
    p, ref = rng.normal(size=50), rng.normal(size=50)
    sp = Penalty("l2sp", 0.3, reference=ref)
    spf = Penalty("l2sp_fisher", 0.3, reference=ref, fisher=np.ones(50))
    if sp.value(p) != spf.value(p) or not np.array_equal(sp.grad(p), spf.grad(p)):
        fails.append("unit Fisher")

    a, _ = calibrate(model, mask, w_u, tgt, 0.01, cfg, stream(seed, "f"), penalty="l2_zero")
    b, _ = calibrate(model, mask, w_u, tgt, 0.01, cfg, stream(seed, "f"), penalty="l2sp")
    free = mask.pruned
    z = Penalty("l2_zero", 0.01, scope=free)
    s = Penalty("l2sp", 0.01, reference=np.zeros(model.size), scope=free)
    if not np.array_equal(a, b) or z.value(a) != s.value(a) \
            or not np.array_equal(z.grad(a), s.grad(a)):
        fails.append("zero-start SP penalty")

    return CheckResult("degeneracies", not fails,
                       "all four reductions exact" if not fails else "failed: " + ", ".join(fails))


CHECKS = (check_mask_exactness, check_hard_constraint, check_param_grad, check_residual_grad,
          check_node_grad, check_jets, check_solvers, check_fd_oracle, check_degeneracies)


def run_all(echo=None):
    results = []
    for check in CHECKS:
        try:
            res = check()
        except Exception as exc:  # a crashing check is a failing check
            res = CheckResult(check.__name__, False, f"{type(exc).__name__}: {exc}")
        if echo is not None:
            echo(res.line())
        results.append(res)
    return results
