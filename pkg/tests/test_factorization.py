import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dwf import SeededRng
from dwf.factorization import (
    FactorizedParam,
    balanced_factorize,
    collapse,
    factor_gradients,
    l2_factor_penalty,
    misalignment,
    quasi_norm,
)
from dwf.ndcore import grad_check


def test_needs_at_least_two_factors():
    with pytest.raises(ValueError):
        FactorizedParam([np.ones(3)])


def test_factor_shapes_must_match():
    with pytest.raises(ValueError):
        FactorizedParam([np.ones(3), np.ones(4)])


def test_collapse_elementwise_product():
    p = FactorizedParam([np.array([1.0, 2.0, -3.0]), np.array([4.0, 0.5, 2.0])])
    np.testing.assert_array_equal(collapse(p), [4.0, 1.0, -6.0])


def test_quasi_norm_frozen_value():
    # sum of |w|^(2/3): 4^(2/3) + 1^(2/3), computed once by hand
    assert quasi_norm(np.array([4.0, 1.0]), 3) == pytest.approx(3.5198420997897463, abs=1e-14)
    assert quasi_norm(np.array([0.0]), 4) == 0.0


def test_quasi_norm_depth_two_is_l1():
    w = SeededRng(0).standard_normal(50)
    np.testing.assert_allclose(quasi_norm(w, 2), np.abs(w).sum(), rtol=1e-13)


def test_balanced_factorize_roundtrip_and_zero_misalignment():
    w = np.array([-8.0, 0.25, 0.0, 1.0, -1e-6])
    for depth in (2, 3, 4, 8):
        p = balanced_factorize(w, depth)
        np.testing.assert_allclose(collapse(p), w, rtol=1e-12, atol=1e-300)
        assert misalignment(p) <= 1e-10
        # sign lives on the first factor only
        for f in p.factors[1:]:
            assert np.all(f >= 0.0)


def test_penalty_equals_quasi_norm_when_balanced():
    r = SeededRng(1)
    for depth in (2, 3, 4, 8):
        w = r.standard_normal(200)
        p = balanced_factorize(w, depth)
        np.testing.assert_allclose(l2_factor_penalty(p), quasi_norm(w, depth), rtol=1e-10)


def test_misalignment_nonnegative_bulk():
    # AM-GM: mean factor energy dominates the collapsed quasi-norm
    r = SeededRng(2)
    for depth in (2, 3, 4, 6):
        factors = [r.standard_normal((10_000,)) for _ in range(depth)]
        m = misalignment(FactorizedParam(factors))
        assert m >= -1e-12


@settings(max_examples=60, deadline=None)
@given(
    depth=st.integers(min_value=2, max_value=6),
    seed=st.integers(min_value=0, max_value=2**31),
    scale=st.floats(min_value=1e-3, max_value=1e3),
)
def test_misalignment_nonnegative_property(depth, seed, scale):
    r = SeededRng(seed)
    factors = [scale * r.standard_normal(17) for _ in range(depth)]
    assert misalignment(FactorizedParam(factors)) >= -1e-12


def test_misalignment_zero_iff_balanced():
    p = FactorizedParam([np.array([2.0]), np.array([2.0])])
    assert misalignment(p) == pytest.approx(0.0, abs=1e-15)
    q = FactorizedParam([np.array([4.0]), np.array([1.0])])
    # (16 + 1)/2 - 4 = 4.5
    assert misalignment(q) == pytest.approx(4.5, abs=1e-12)


def test_factor_gradients_hand_case():
    p = FactorizedParam([np.array([1.0]), np.array([2.0]), np.array([4.0])])
    g = factor_gradients(np.array([2.0]), p)
    assert [arr.item() for arr in g] == [16.0, 8.0, 4.0]


def test_factor_gradients_match_finite_differences():
    r = SeededRng(3)
    for depth in (2, 3, 5):
        shape = (4, 3)
        factors = [0.5 + r.uniform(0.0, 1.0, shape) for _ in range(depth)]
        c = r.standard_normal(shape)

        def f(flat):
            fs = [flat[i * 12 : (i + 1) * 12].reshape(shape) for i in range(depth)]
            return float(np.sum(c * collapse(FactorizedParam(fs))))

        def g(flat):
            fs = [flat[i * 12 : (i + 1) * 12].reshape(shape) for i in range(depth)]
            grads = factor_gradients(c, FactorizedParam(fs))
            return np.concatenate([gr.ravel() for gr in grads])

        x0 = np.concatenate([f0.ravel() for f0 in factors])
        assert grad_check(f, g, x0) < 1e-8


def test_factor_gradients_handle_zeros_without_division():
    # one zero factor still lets gradient reach the others; the zero slot
    # itself keeps the product of its partners
    p = FactorizedParam([np.array([0.0, 1.0]), np.array([2.0, 0.0]), np.array([3.0, 4.0])])
    g = factor_gradients(np.array([1.0, 1.0]), p)
    np.testing.assert_array_equal(g[0], [6.0, 0.0])
    np.testing.assert_array_equal(g[1], [0.0, 4.0])
    np.testing.assert_array_equal(g[2], [0.0, 0.0])
    assert all(np.isfinite(arr).all() for arr in g)


def test_factor_gradients_vanish_at_balanced_zero():
    # all factors zero at an entry: every partner product is zero too
    p = FactorizedParam([np.zeros(3), np.zeros(3), np.zeros(3)])
    g = factor_gradients(np.array([5.0, -1.0, 0.3]), p)
    for arr in g:
        np.testing.assert_array_equal(arr, np.zeros(3))


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(min_value=0, max_value=2**31), c=st.floats(min_value=0.05, max_value=20.0))
def test_rescaling_leaves_collapse_invariant(seed, c):
    r = SeededRng(seed)
    factors = [r.standard_normal(9) for _ in range(3)]
    p = FactorizedParam(factors)
    q = FactorizedParam([factors[0] * c, factors[1] / c, factors[2].copy()])
    np.testing.assert_allclose(collapse(q), collapse(p), rtol=1e-10, atol=1e-12)


def test_rescaling_changes_penalty_not_quasi_norm():
    factors = [np.array([1.0, 2.0]), np.array([3.0, 0.5])]
    p = FactorizedParam(factors)
    q = FactorizedParam([factors[0] * 10.0, factors[1] / 10.0])
    assert l2_factor_penalty(q) > l2_factor_penalty(p)
    np.testing.assert_allclose(quasi_norm(collapse(q), 2), quasi_norm(collapse(p), 2), rtol=1e-12)
