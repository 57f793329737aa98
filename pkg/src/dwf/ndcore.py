"""Deterministic numeric kernel: float64 matrices, keyed random streams, gradient checking.

Everything downstream computes in 64-bit floats. Matrices are plain numpy
arrays in C (row-major) order; this module only pins down the conventions
and the reproducibility contract:

  * one RNG algorithm repo-wide (counter-based Philox, normal draws via
    numpy's ziggurat transform), so identical seeds give bit-identical
    streams on any platform with the same numpy build;
  * a single BLAS-backed matmul used everywhere, deterministic for a fixed
    build and thread count (verified against a triple-loop reference in the
    test suite).
"""

import zlib

import numpy as np


def as_matrix(a):
    """Coerce to a 2-D float64 C-order array without copying when possible."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise ValueError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def matmul(a, b):
    """Matrix product with explicit shape validation."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"shape mismatch: {a.shape} @ {b.shape}")
    return a @ b


class SeededRng:
    """Seeded random stream with label-derived child streams.

    Backed by the counter-based Philox generator. Child streams are keyed by
    (seed, label path), not by draw order, so consuming extra draws from one
    stream never perturbs another. This is what makes per-layer init and
    per-epoch shuffling independently reproducible.
    """

    def __init__(self, seed, _path=()):
        self.seed = int(seed)
        self._path = tuple(int(p) for p in _path)
        ss = np.random.SeedSequence(entropy=self.seed, spawn_key=self._path)
        self._gen = np.random.Generator(np.random.Philox(ss))

    def child(self, label):
        """Derive an independent stream keyed by a string or integer label."""
        code = label if isinstance(label, int) else zlib.crc32(str(label).encode())
        return SeededRng(self.seed, self._path + (code,))

    # thin passthroughs to the underlying generator
    def normal(self, mu=0.0, sigma=1.0, n=None):
        return self._gen.normal(mu, sigma, n)

    def standard_normal(self, n=None):
        return self._gen.standard_normal(n)

    def uniform(self, lo=0.0, hi=1.0, n=None):
        return self._gen.uniform(lo, hi, n)

    def integers(self, lo, hi, n=None):
        return self._gen.integers(lo, hi, n)

    def permutation(self, n):
        return self._gen.permutation(n)

    def choice(self, n, size, replace=False):
        return self._gen.choice(n, size=size, replace=replace)

    def gamma(self, shape, n=None):
        return self._gen.gamma(shape, 1.0, n)

    def rademacher(self, n=None):
        return self._gen.integers(0, 2, n) * 2.0 - 1.0


def sample_normal(rng, n, mu=0.0, sigma=1.0):
    """n i.i.d. draws from N(mu, sigma^2)."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    return rng.normal(mu, sigma, int(n))


def grad_check(f, grad, x, eps=1e-5):
    """Max relative error between an analytic gradient and central differences.

    f maps a flat parameter array to a scalar, grad returns its analytic
    gradient. Per component the error is |g_a - g_n| / max(1, |g_a|, |g_n|);
    the max over components is returned.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=np.float64).copy()
    fx = float(f(x))
    if not np.isfinite(fx):
        raise FloatingPointError(f"f(x) is not finite: {fx}")
    g_a = np.asarray(grad(x), dtype=np.float64).ravel()
    flat = x.ravel()
    g_n = np.empty_like(flat)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = float(f(x))
        flat[i] = orig - eps
        down = float(f(x))
        flat[i] = orig
        g_n[i] = (up - down) / (2.0 * eps)
    denom = np.maximum(1.0, np.maximum(np.abs(g_a), np.abs(g_n)))
    return float(np.max(np.abs(g_a - g_n) / denom))
