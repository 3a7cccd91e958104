"""Dense math kernel: shape-checked linear algebra, log-domain reductions,
seeded random streams."""

import math

import numpy as np
import numpy.testing as npt
import pytest

from prnn.exceptions import InputError
from prnn.numkit import (
    RngState,
    as_matrix,
    as_vector,
    log_softmax,
    log_sum_exp,
    matvec,
    sample_gauss,
)


def test_as_vector_validates():
    npt.assert_array_equal(as_vector([1, 2, 3]), np.array([1.0, 2.0, 3.0]))
    with pytest.raises(InputError):
        as_vector([[1.0, 2.0]])
    with pytest.raises(InputError):
        as_vector([1.0, float("nan")])
    with pytest.raises(InputError):
        as_vector([1.0, float("inf")])


def test_as_matrix_validates():
    npt.assert_array_equal(as_matrix([[1, 2]]), np.array([[1.0, 2.0]]))
    with pytest.raises(InputError):
        as_matrix([1.0, 2.0])
    with pytest.raises(InputError):
        as_matrix([[1.0], [float("nan")]])


def test_matvec_hand_case():
    # Manually calculated: [[1,2],[0,1]] @ (1,1) = (1+2, 0+1)
    out = matvec(np.array([[1.0, 2.0], [0.0, 1.0]]), np.array([1.0, 1.0]))
    npt.assert_array_equal(out, np.array([3.0, 1.0]))


def test_matvec_identity_and_zero():
    v = np.array([0.3, -0.7, 2.5])
    npt.assert_array_equal(matvec(np.eye(3), v), v)
    npt.assert_array_equal(matvec(np.zeros((2, 3)), v), np.zeros(2))


def test_matvec_dimension_mismatch():
    with pytest.raises(InputError):
        matvec(np.eye(2), np.ones(3))


def test_log_sum_exp_hand_cases():
    # Manually calculated: log(e^0 + e^0) = log 2
    npt.assert_allclose(log_sum_exp([0.0, 0.0]), math.log(2.0), rtol=0, atol=1e-15)
    # max-shift keeps huge inputs exact: 1000 + log 2
    npt.assert_allclose(
        log_sum_exp([1000.0, 1000.0]), 1000.0 + math.log(2.0), rtol=0, atol=1e-12
    )
    # the -1e308 term underflows to nothing
    npt.assert_allclose(log_sum_exp([0.0, -1e308]), 0.0, rtol=0, atol=1e-12)


def test_log_sum_exp_singleton():
    assert log_sum_exp([-3.25]) == -3.25


def test_log_sum_exp_rejects_bad_shape():
    with pytest.raises(InputError):
        log_sum_exp([])
    with pytest.raises(InputError):
        log_sum_exp([[0.0, 1.0]])


def test_log_sum_exp_bounds_property():
    rng = np.random.default_rng(7)
    for _ in range(50):
        n = int(rng.integers(1, 12))
        v = rng.normal(size=n) * 10.0
        lse = log_sum_exp(v)
        assert lse >= v.max() - 1e-12
        assert lse <= v.max() + math.log(n) + 1e-12


def test_log_sum_exp_shift_identity():
    rng = np.random.default_rng(8)
    for _ in range(50):
        v = rng.normal(size=6) * 5.0
        c = float(rng.uniform(-100.0, 100.0))
        npt.assert_allclose(
            log_sum_exp(v + c), log_sum_exp(v) + c, rtol=0, atol=1e-12
        )


def test_log_softmax_hand_case():
    # Manually calculated: softmax(1, 0) = (e/(e+1), 1/(e+1))
    out = log_softmax([1.0, 0.0])
    npt.assert_allclose(
        out, [-0.31326168751822286, -1.3132616875182228], rtol=0, atol=1e-12
    )


def test_log_softmax_uniform_and_shift():
    npt.assert_allclose(log_softmax([0.0, 0.0, 0.0]), np.full(3, -math.log(3.0)))
    npt.assert_allclose(log_softmax([5.0, 5.0, 5.0, 5.0]), np.full(4, -math.log(4.0)))
    rng = np.random.default_rng(9)
    for _ in range(30):
        logits = rng.normal(size=5) * 3.0
        c = float(rng.uniform(-50.0, 50.0))
        npt.assert_allclose(
            log_softmax(logits + c), log_softmax(logits), rtol=0, atol=1e-12
        )


def test_log_softmax_normalizes():
    rng = np.random.default_rng(10)
    for _ in range(30):
        logits = rng.normal(size=7) * 4.0
        npt.assert_allclose(np.exp(log_softmax(logits)).sum(), 1.0, atol=1e-12)


def test_rng_same_seed_same_stream():
    a = RngState(42).normal(100)
    b = RngState(42).normal(100)
    npt.assert_array_equal(a, b)
    assert not np.array_equal(RngState(43).normal(100), a)


def test_rng_spawn_reproducible_and_distinct():
    root = RngState(5)
    npt.assert_array_equal(root.spawn(2).normal(50), RngState(5).spawn(2).normal(50))
    assert not np.array_equal(root.spawn(2).normal(50), root.spawn(3).normal(50))
    # spawning does not consume draws from the parent stream
    npt.assert_array_equal(root.normal(10), RngState(5).normal(10))


def test_rng_permutation_is_permutation():
    perm = RngState(0).permutation(20)
    npt.assert_array_equal(np.sort(perm), np.arange(20))


def test_rng_state_round_trip():
    rng = RngState(11)
    rng.normal(17)
    state = rng.get_state()
    ahead = rng.normal(23)
    rng2 = RngState(11)
    rng2.set_state(state)
    npt.assert_array_equal(rng2.normal(23), ahead)


def test_sample_gauss_moments():
    draws = sample_gauss(RngState(0), 100_000)
    assert abs(float(draws.mean())) <= 0.02
    assert abs(float(draws.std()) - 1.0) <= 0.02


def test_sample_gauss_rejects_nonpositive():
    with pytest.raises(InputError):
        sample_gauss(RngState(0), 0)
