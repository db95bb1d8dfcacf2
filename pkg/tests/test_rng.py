import numpy as np
from hypothesis import given, strategies as st

from pacnet.rng import stream


def test_same_key_same_stream():
    a = stream(7, "friedman", "init").normal(size=5)
    b = stream(7, "friedman", "init").normal(size=5)
    assert a.tobytes() == b.tobytes()


def test_purposes_are_independent():
    draws = {p: stream(0, *p).integers(0, 2**62, size=4).tobytes()
             for p in [(), ("a",), ("b",), ("a", "b"), ("b", "a"), ("a", 1), ("a", 2)]}
    assert len(set(draws.values())) == len(draws)


@given(st.integers(0, 2**40), st.integers(0, 2**40))
def test_seeds_are_independent(s1, s2):
    a = stream(s1, "x").integers(0, 2**62, size=2)
    b = stream(s2, "x").integers(0, 2**62, size=2)
    assert (s1 == s2) == np.array_equal(a, b)


def test_known_first_draw_is_stable():
    # frozen so that accidental changes to stream keying are caught
    assert stream(0, "friedman", "source-data").random() == 0.8882759454045744
