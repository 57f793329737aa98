import numpy as np
import pytest
from scipy import stats

from dwf import SeededRng
from dwf.ndcore import as_matrix, grad_check, matmul, sample_normal


def matmul_loops(a, b):
    # independent reference: explicit triple loop
    m, k = a.shape
    k2, n = b.shape
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def test_matmul_matches_triple_loop():
    r = SeededRng(1)
    a = r.standard_normal((7, 5))
    b = r.standard_normal((5, 4))
    np.testing.assert_allclose(matmul(a, b), matmul_loops(a, b), atol=1e-12)


def test_matmul_associative():
    r = SeededRng(2)
    a, b, c = (r.standard_normal(s) for s in [(4, 6), (6, 3), (3, 5)])
    np.testing.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), atol=1e-10)


def test_matmul_shape_mismatch():
    with pytest.raises(ValueError):
        matmul(np.zeros((2, 3)), np.zeros((4, 2)))


def test_as_matrix_rejects_rank3():
    with pytest.raises(ValueError):
        as_matrix(np.zeros((2, 2, 2)))


def test_seeded_rng_reproducible():
    a = SeededRng(123).standard_normal(16)
    b = SeededRng(123).standard_normal(16)
    assert np.array_equal(a, b)
    c = SeededRng(124).standard_normal(16)
    assert not np.array_equal(a, c)


def test_child_streams_independent_of_draw_order():
    # drawing from one child must not perturb a sibling
    root1 = SeededRng(7)
    a_first = root1.child("a").standard_normal(8)
    b_first = root1.child("b").standard_normal(8)

    root2 = SeededRng(7)
    b_second = root2.child("b").standard_normal(8)
    a_second = root2.child("a").standard_normal(8)

    assert np.array_equal(a_first, a_second)
    assert np.array_equal(b_first, b_second)
    assert not np.array_equal(a_first, b_first)


def test_nested_children_distinct():
    r = SeededRng(5)
    x = r.child("w0").child("rej").standard_normal(4)
    y = r.child("w1").child("rej").standard_normal(4)
    assert not np.array_equal(x, y)


def test_standard_normal_is_normal():
    x = SeededRng(11).standard_normal(10_000)
    assert stats.kstest(x, "norm").pvalue > 0.01
    assert abs(x.mean()) < 0.05
    assert abs(x.std() - 1.0) < 0.05


def test_sample_normal_moments():
    r = SeededRng(3)
    x = sample_normal(r, 20_000, mu=1.5, sigma=0.3)
    # 5-sigma CLT bounds on the mean, generous bound on the std
    assert abs(x.mean() - 1.5) < 5 * 0.3 / np.sqrt(20_000)
    assert abs(x.std() - 0.3) < 0.01


def test_sample_normal_sigma_zero_exact():
    x = sample_normal(SeededRng(0), 5, mu=-2.0, sigma=0.0)
    assert np.array_equal(x, np.full(5, -2.0))


def test_sample_normal_negative_sigma():
    with pytest.raises(ValueError):
        sample_normal(SeededRng(0), 3, sigma=-1.0)


def test_rademacher_values():
    x = SeededRng(9).rademacher(4000)
    assert set(np.unique(x)) == {-1.0, 1.0}
    assert abs(x.mean()) < 0.1


def test_grad_check_accepts_correct_gradient():
    f = lambda x: float(np.sum(x**2) + np.sum(x))
    g = lambda x: 2 * x + 1
    x = SeededRng(4).standard_normal(6)
    assert grad_check(f, g, x) < 1e-6


def test_grad_check_flags_wrong_gradient():
    f = lambda x: float(np.sum(x**2))
    g = lambda x: 3 * x  # off by 1.5x
    x = SeededRng(4).standard_normal(6) + 2.0
    assert grad_check(f, g, x) > 1e-2


def test_grad_check_nonfinite_objective():
    f = lambda x: float("nan")
    with pytest.raises(FloatingPointError):
        grad_check(f, lambda x: x, np.ones(3))
