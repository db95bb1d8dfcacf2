import numpy as np
import pytest

from pacnet.autodiff import (Jet2, NonFiniteError, activation, forward, heat_residual,
                             input_grad, input_jet, input_jets, mse, param_grad,
                             residual_param_grad)
from pacnet.nn import NetworkModel, NetworkSpec, build
from pacnet.props import central_diff, rel_err


def net(inp, width, depth, act, out=1, seed=0, scale=1.0):
    m = build(NetworkSpec.mlp(inp, width, depth, act, out, seed))
    m.params *= scale
    return m


def ridge_net(waves, v):
    """Sum of ``exp(k x + l y + v (k^2 + l^2) t)`` units: an exact heat solution."""
    spec = NetworkSpec(3, ((len(waves), "exp"),), 1)
    W0 = np.array([[k, l, v * (k * k + l * l)] for k, l, _ in waves]).T
    W1 = np.array([[c] for _, _, c in waves])
    params = np.concatenate([W0.ravel(), np.zeros(len(waves)), W1.ravel(), [0.0]])
    return NetworkModel(spec, params)


def test_scalar_linear_model_example():
    # y = w x with w = 2, one sample (1, 0): loss 4, dL/dw = 4
    m = NetworkModel(NetworkSpec(1, ((1, "linear"),)), np.array([1.0, 0.0, 2.0, 0.0]))
    loss, g = param_grad(m, np.array([[1.0]]), np.array([[0.0]]))
    assert loss == 4.0
    assert g[2] == 4.0


def test_gradient_zero_at_interpolation():
    m = net(3, 8, 2, "tanh", seed=2)
    x = np.random.default_rng(0).normal(size=(6, 3))
    loss, g = param_grad(m, x, forward(m, x))
    assert loss == 0.0
    assert np.all(g == 0.0)


@pytest.mark.parametrize("act", ["relu", "tanh", "swish", "linear"])
def test_param_grad_matches_finite_differences(act):
    m = net(2, 16, 2, act, seed=5, scale=0.8)
    rng = np.random.default_rng(1)
    x, y = rng.normal(size=(8, 2)), rng.normal(size=(8, 1))
    _, g = param_grad(m, x, y)
    fd = central_diff(lambda p: param_grad(m, x, y, params=p)[0], m.params, 1e-5)
    assert rel_err(g, fd) <= 1e-6


def test_param_grad_linearity():
    m = net(3, 10, 2, "swish", seed=4)
    rng = np.random.default_rng(3)
    x, y1, y2 = rng.normal(size=(5, 3)), rng.normal(size=(5, 1)), rng.normal(size=(5, 1))
    a, b = 0.7, -1.3

    def combo(pred, _):
        p1, d1 = mse(pred, y1)
        p2, d2 = mse(pred, y2)
        return a * p1 + b * p2, a * d1 + b * d2

    _, g = param_grad(m, x, y1, loss=combo)
    _, g1 = param_grad(m, x, y1)
    _, g2 = param_grad(m, x, y2)
    assert rel_err(g, a * g1 + b * g2) <= 1e-12


def test_param_grad_deterministic():
    m = net(3, 10, 2, "tanh", seed=4)
    x = np.random.default_rng(3).normal(size=(5, 3))
    y = np.ones((5, 1))
    l1, g1 = param_grad(m, x, y)
    l2, g2 = param_grad(m, x, y)
    assert l1 == l2 and np.array_equal(g1, g2)


def test_nonfinite_loss_reports_sample():
    m = net(2, 4, 1, "tanh")
    x = np.zeros((4, 2))
    y = np.zeros((4, 1))
    y[2, 0] = np.inf
    with pytest.raises(NonFiniteError) as info:
        param_grad(m, x, y)
    assert info.value.index == 2


def test_empty_batch_rejected():
    m = net(2, 4, 1, "tanh")
    with pytest.raises(ValueError):
        param_grad(m, np.zeros((0, 2)), np.zeros((0, 1)))


@pytest.mark.parametrize("name", ["tanh", "swish", "exp", "square"])
def test_activation_derivative_tower(name):
    z = np.linspace(-2.5, 2.5, 11)
    h = 1e-5
    for k in range(3):
        hi = activation(name, z + h, 3)[k]
        lo = activation(name, z - h, 3)[k]
        assert np.allclose(activation(name, z, 3)[k + 1], (hi - lo) / (2 * h),
                           rtol=1e-7, atol=1e-8)


def test_relu_conventions_at_zero():
    f = activation("relu", np.array([0.0]), 3)
    assert [v[0] for v in f] == [0.0, 0.0, 0.0, 0.0]


def test_jet_of_square_map():
    m = NetworkModel(NetworkSpec(1, ((1, "square"),)), np.array([1.0, 0.0, 1.0, 0.0]))
    assert input_jet(m, np.array([3.0]), 0) == Jet2(9.0, 6.0, 2.0)


def test_jet_of_tanh_unit_at_origin():
    m = NetworkModel(NetworkSpec(1, ((1, "tanh"),)), np.array([1.0, 0.0, 1.0, 0.0]))
    assert input_jet(m, np.array([0.0]), 0) == Jet2(0.0, 1.0, 0.0)


def test_jet_identity_seed():
    m = NetworkModel(NetworkSpec(2, ((2, "linear"),)), np.array([1, 0, 0, 1, 0, 0, 1, 0, 0.0]))
    assert input_jet(m, np.array([0.4, -1.0]), 0) == Jet2(0.4, 1.0, 0.0)


def test_swish_jets_match_finite_differences():
    m = net(3, 32, 6, "swish", seed=9)
    rng = np.random.default_rng(4)
    got, want = [], []
    for _ in range(4):
        x = rng.uniform(-1, 1, 3)
        for ax in range(3):
            e = np.eye(3)[ax]
            f = lambda s: float(forward(m, x + s * e)[0])  # noqa: E731
            jet = input_jet(m, x, ax)
            h = 1e-4
            got += [jet.d1, jet.d2]
            want += [(f(h) - f(-h)) / (2 * h), (f(h) - 2 * f(0.0) + f(-h)) / h ** 2]
    got, want = np.array(got), np.array(want)
    assert rel_err(got[0::2], want[0::2]) <= 1e-5
    assert rel_err(got[1::2], want[1::2]) <= 1e-5


def test_jet_d1_equals_reverse_mode():
    m = net(3, 12, 3, "tanh", seed=1)
    x = np.random.default_rng(5).normal(size=(7, 3))
    _, d1, _ = input_jets(m, x, (0, 1, 2))
    assert np.max(np.abs(d1.T - input_grad(m, x))) <= 1e-10


def test_jets_reject_multi_output():
    m = net(3, 4, 1, "tanh", out=2)
    with pytest.raises(NotImplementedError):
        input_jet(m, np.zeros(3), 0)
    with pytest.raises(ValueError):
        input_jet(net(3, 4, 1, "tanh"), np.zeros(3), 3)


def test_constant_network_solves_heat_equation():
    m = NetworkModel(NetworkSpec.mlp(3, 6, 2, "swish"))
    m.params[-1] = 1.0  # output bias
    x = np.random.default_rng(0).uniform(0, 1, (10, 3))
    loss, g = residual_param_grad(m, heat_residual(0.1), x)
    assert loss == 0.0
    assert np.all(g == 0.0)


def test_exact_exponential_solution_has_zero_residual():
    v = 0.1
    m = ridge_net([(1.0, 0.5, 0.3), (-0.7, 1.2, 0.2)], v)
    x = np.random.default_rng(1).uniform(0, 2, (50, 3))
    loss, _ = residual_param_grad(m, heat_residual(v), x)
    assert loss <= 1e-10
    wrong, _ = residual_param_grad(m, heat_residual(2 * v), x)
    assert wrong > 1e-3


@pytest.mark.parametrize("act", ["tanh", "swish"])
def test_residual_grad_matches_finite_differences(act):
    m = net(3, 10, 2, act, seed=3)
    x = np.random.default_rng(2).uniform(0, 1, (4, 3))
    res = heat_residual(0.05)
    _, g = residual_param_grad(m, res, x)
    fd = central_diff(lambda p: residual_param_grad(m, res, x, params=p)[0], m.params, 1e-6)
    assert rel_err(g, fd) <= 1e-5
