import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from signvr.core import (
    BitSignVector,
    DomainError,
    InvalidInputError,
    RngStream,
    norm_l1,
    norm_l2,
    norm_linf,
    project_l2,
    sign,
    sign_bit,
    stochastic_sign,
)


def test_sign_basic():
    assert np.array_equal(sign([2.5, -0.1, 0.0]), [1, -1, 0])
    assert np.array_equal(sign([0.3, 1.0, 7.5]), [1, 1, 1])
    assert np.array_equal(sign([-3.0]), [-1])


def test_sign_rejects_nonfinite():
    with pytest.raises(InvalidInputError):
        sign([1.0, np.nan])
    with pytest.raises(InvalidInputError):
        sign([np.inf])


def test_sign_bit_tie_rule():
    assert np.array_equal(sign_bit([0.0, -0.5]).to_signs(), [1, -1])
    assert np.array_equal(sign_bit([1e-300]).to_signs(), [1])


@given(st.lists(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False), min_size=1, max_size=64))
def test_sign_agrees_with_sign_bit_off_zero(values):
    v = np.array(values)
    s = sign(v)
    b = sign_bit(v).to_signs()
    nz = v != 0
    assert np.array_equal(s[nz], b[nz])


def test_codec_golden_bytes():
    # 9 signs -> little-endian bit packing, one pad-heavy trailing byte
    vec = BitSignVector.from_signs([1, -1, 1, 1, -1, -1, 1, -1, 1])
    assert vec.payload == bytes([0x4D, 0x01])
    assert vec.dim == 9


def test_codec_identity_all_dims():
    rng = np.random.default_rng(0)
    for d in list(range(1, 65)) + [255, 256, 257]:
        signs = np.where(rng.random(d) < 0.5, -1, 1).astype(np.int8)
        vec = BitSignVector.from_signs(signs)
        assert len(vec.payload) == (d + 7) // 8
        assert np.array_equal(vec.to_signs(), signs)


@given(st.lists(st.sampled_from([-1, 1]), min_size=1, max_size=257))
def test_codec_identity_property(signs):
    assert np.array_equal(BitSignVector.from_signs(signs).to_signs(), signs)


def test_codec_rejects_bad_payloads():
    with pytest.raises(InvalidInputError):
        BitSignVector(dim=9, payload=bytes([0x4D]))           # too short
    with pytest.raises(InvalidInputError):
        BitSignVector(dim=9, payload=bytes([0x4D, 0x02]))     # nonzero pad bit
    with pytest.raises(InvalidInputError):
        BitSignVector.from_signs([1, 0, -1])                  # zero is not encodable


def test_stochastic_sign_zero_vector_symmetry():
    rng = RngStream(7).fork("sym")
    draws = np.array([
        stochastic_sign(np.zeros(3), 1.0, rng).to_signs() for _ in range(200_000)
    ], dtype=np.float64)
    assert np.all(np.abs(draws.mean(axis=0)) < 0.01)


def test_stochastic_sign_boundary_is_deterministic():
    rng = RngStream(3).fork("edge")
    for _ in range(200):
        out = stochastic_sign(np.array([2.0, -2.0]), 2.0, rng).to_signs()
        assert out[0] == 1 and out[1] == -1


def test_stochastic_sign_monte_carlo_mean():
    # 4-sigma binomial band around the analytic expectation v/R
    v = np.array([0.5, -0.25])
    N = 200_000
    rng = RngStream(11).fork("mc")
    draws = np.array([stochastic_sign(v, 1.0, rng).to_signs() for _ in range(N)], dtype=np.float64)
    mean = draws.mean(axis=0)
    tol = 4.0 * np.sqrt((1.0 - v**2) / N)
    assert np.all(np.abs(mean - v) <= tol)


def test_stochastic_sign_rejects_out_of_range():
    rng = RngStream(0)
    with pytest.raises(DomainError):
        stochastic_sign(np.array([1.5]), 1.0, rng)
    with pytest.raises(DomainError):
        stochastic_sign(np.array([1.0]), 0.0, rng)


def test_project_l2_interior_point_unchanged():
    v = np.array([0.3, 0.4])  # norm 0.5
    assert np.array_equal(project_l2(v, 1.0), v)


def test_project_l2_scales_to_ball():
    out = project_l2(np.array([3.0, 4.0]), 1.0)
    assert np.allclose(out, [0.6, 0.8])
    assert np.linalg.norm(out) <= 1.0 + 1e-15


def test_project_l2_is_nearest_feasible_point():
    rng = np.random.default_rng(5)
    v = rng.normal(size=8) * 3.0
    G = 1.5
    p = project_l2(v, G)
    base = np.linalg.norm(p - v)
    for _ in range(1000):
        w = rng.normal(size=8)
        w *= rng.random() * G / np.linalg.norm(w)
        assert base <= np.linalg.norm(w - v) + 1e-12


def test_norms_basic():
    assert norm_l1([3.0, -4.0]) == 7.0
    assert norm_l2([3.0, -4.0]) == 5.0
    assert norm_linf([3.0, -4.0]) == 4.0
    assert norm_l1(np.zeros(4)) == norm_l2(np.zeros(4)) == norm_linf(np.zeros(4)) == 0.0


# magnitudes kept above the sqrt-underflow range so the squared sum stays representable
_norm_entry = st.floats(min_value=-1e8, max_value=1e8, allow_nan=False).filter(
    lambda x: x == 0.0 or abs(x) > 1e-100
)


@given(st.lists(_norm_entry, min_size=1, max_size=100))
@settings(max_examples=200)
def test_norm_inequalities(values):
    v = np.array(values)
    l1, l2 = norm_l1(v), norm_l2(v)
    d = v.size
    assert l2 <= l1 * (1 + 1e-12) + 1e-300
    assert l1 <= np.sqrt(d) * l2 * (1 + 1e-12) + 1e-300


def test_rng_same_path_replays_identically():
    a = RngStream(42).fork("node", 3)
    b = RngStream(42).fork("node", 3)
    assert np.array_equal(a.normal(100), b.normal(100))


def test_rng_distinct_paths_differ():
    a = RngStream(42).fork("node", 0)
    b = RngStream(42).fork("node", 1)
    assert not np.array_equal(a.normal(16), b.normal(16))


def test_rng_fork_is_stateless():
    # Forking never consumes parent state, so fork order cannot matter.
    root = RngStream(9)
    child_first = root.fork("a")
    _ = root.fork("b").normal(10)
    child_second = RngStream(9).fork("a")
    assert np.array_equal(child_first.normal(8), child_second.normal(8))


def test_rng_thread_schedule_independence():
    streams = [RngStream(1).fork("worker", j) for j in range(8)]
    expected = [RngStream(1).fork("worker", j).normal(64) for j in range(8)]
    results = [None] * 8

    def consume(j):
        results[j] = streams[j].normal(64)

    threads = [threading.Thread(target=consume, args=(j,)) for j in range(8)]
    for t in reversed(threads):
        t.start()
    for t in threads:
        t.join()
    for got, want in zip(results, expected):
        assert np.array_equal(got, want)
