import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pacnet.autodiff import forward
from pacnet.nn import (NetworkModel, NetworkSpec, build, flatten, layout_for, load,
                       load_checkpoint, save_checkpoint)


def naive_forward(spec, params, x):
    """Loop-by-loop MLP evaluation, independent of the vectorised path."""
    widths, acts = spec.widths, spec.activations
    a = list(map(float, x))
    off = 0
    for i in range(len(widths) - 1):
        fan_in, fan_out = widths[i], widths[i + 1]
        W = params[off:off + fan_in * fan_out]
        off += fan_in * fan_out
        b = params[off:off + fan_out]
        off += fan_out
        z = []
        for j in range(fan_out):
            s = b[j]
            for k in range(fan_in):
                s += a[k] * W[k * fan_out + j]
            z.append(s)
        if acts[i] == "relu":
            z = [max(v, 0.0) for v in z]
        a = z
    return np.array(a)


def test_parameter_count_friedman_net():
    model = build(NetworkSpec.mlp(10, 200, 2, "relu"))
    assert model.size == 10 * 200 + 200 + 200 * 200 + 200 + 200 * 1 + 1 == 42_601


def test_build_is_deterministic_and_seeded():
    spec = NetworkSpec.mlp(3, 8, 2, "tanh", seed=7)
    assert np.array_equal(build(spec).params, build(spec).params)
    other = NetworkSpec.mlp(3, 8, 2, "tanh", seed=8)
    assert not np.array_equal(build(spec).params, build(other).params)


def test_he_normal_scale():
    model = build(NetworkSpec.mlp(10, 200, 2, "relu", seed=0))
    W1, b1, _ = model.layers()[1]
    assert W1.size == 40_000
    assert abs(W1.std() - np.sqrt(2.0 / 200)) < 0.1 * np.sqrt(2.0 / 200)
    assert abs(W1.mean()) < 0.005
    assert np.all(b1 == 0)


def test_layout_contiguous_and_value_independent():
    spec = NetworkSpec(4, ((5, "tanh"), (3, "relu")), 2)
    lay = layout_for(spec)
    off = 0
    for e in lay:
        assert e.offset == off
        off += e.size
    assert off == NetworkModel(spec).size
    assert build(spec).layout == NetworkModel(spec, np.ones(off)).layout
    assert [e.kind for e in lay] == ["weight", "bias"] * 3


def test_single_affine_example():
    spec = NetworkSpec(1, ((1, "linear"),), 1)
    model = NetworkModel(spec, np.array([1.0, 0.0, 2.0, 0.0]))
    assert forward(model, np.array([3.0])).tolist() == [6.0]


def test_zero_network_gives_zero():
    model = NetworkModel(NetworkSpec.mlp(5, 7, 3, "relu", output_width=2))
    out = forward(model, np.random.default_rng(1).normal(size=(4, 5)))
    assert np.all(out == 0)


def test_forward_matches_naive_oracle():
    spec = NetworkSpec.mlp(10, 200, 2, "relu", seed=0)
    model = build(spec)
    x = np.linspace(0.05, 0.95, 10)
    assert np.max(np.abs(forward(model, x) - naive_forward(spec, model.params, x))) <= 1e-12


def test_forward_rejects_wrong_width():
    model = build(NetworkSpec.mlp(3, 4, 1, "tanh"))
    with pytest.raises(ValueError):
        forward(model, np.zeros(4))


def test_forward_is_bit_reproducible():
    model = build(NetworkSpec.mlp(3, 16, 2, "swish", seed=3))
    x = np.random.default_rng(0).normal(size=(9, 3))
    assert np.array_equal(forward(model, x), forward(model, x))


def test_flatten_load_round_trip():
    model = build(NetworkSpec.mlp(3, 6, 2, "tanh", seed=1))
    x = np.random.default_rng(2).normal(size=(5, 3))
    before = forward(model, x)
    v = flatten(model)
    load(model, v)
    assert np.array_equal(forward(model, x), before)
    assert np.array_equal(flatten(model), v)


def test_load_zero_vector_and_permutation_sensitivity():
    model = build(NetworkSpec.mlp(3, 6, 2, "relu", seed=1))
    x = np.array([0.3, -0.2, 0.9])
    v = flatten(model)
    w = v.copy()
    i, j = 0, 5
    w[i], w[j] = v[j], v[i]
    load(model, w)
    permuted = forward(model, x)
    load(model, v)
    assert not np.array_equal(permuted, forward(model, x))
    load(model, np.zeros_like(v))
    assert np.all(forward(model, x) == 0)


def test_load_length_mismatch():
    model = build(NetworkSpec.mlp(3, 6, 2, "relu"))
    with pytest.raises(ValueError):
        load(model, np.zeros(model.size + 1))


@pytest.mark.parametrize("bad", [
    dict(input_width=0, hidden=((3, "relu"),)),
    dict(input_width=2, hidden=()),
    dict(input_width=2, hidden=((0, "relu"),)),
    dict(input_width=2, hidden=((3, "gelu"),)),
    dict(input_width=2, hidden=((3, "relu"),), output_width=0),
])
def test_spec_validation(bad):
    with pytest.raises(ValueError):
        NetworkSpec(**bad)


@pytest.mark.parametrize("with_mask", [False, True])
def test_checkpoint_round_trip(tmp_path, with_mask):
    model = build(NetworkSpec(3, ((5, "tanh"), (4, "swish")), 2, seed=11))
    mask = np.random.default_rng(0).random(model.size) < 0.3 if with_mask else None
    path = tmp_path / "m.pacnet"
    save_checkpoint(path, model, mask)
    loaded, m = load_checkpoint(path)
    assert loaded.spec == model.spec
    assert loaded.params.tobytes() == model.params.tobytes()
    if with_mask:
        assert np.array_equal(m, mask)
    else:
        assert m is None
    raw = path.read_bytes()
    assert raw[:8] == b"PACNET01"
    assert len(raw) >= model.size * 8 + (model.size if with_mask else 0)


def test_checkpoint_bad_magic(tmp_path):
    path = tmp_path / "junk"
    path.write_bytes(b"NOTACKPT" + bytes(16))
    with pytest.raises(ValueError):
        load_checkpoint(path)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.lists(st.integers(1, 9), min_size=1, max_size=4),
       st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_layout_extents_sum_to_size(inp, hidden, out, seed):
    spec = NetworkSpec(inp, tuple((h, "tanh") for h in hidden), out, seed)
    model = build(spec)
    assert sum(e.size for e in model.layout) == model.size
    assert np.array_equal(flatten(model), model.params)
