"""Elementwise weight factorization: collapse, penalties, balance, factor gradients.

A weight tensor w is stored as D same-shape factor arrays whose elementwise
product (the collapsed parameter) is the effective weight. Training a
factorized net with an L2 penalty on the factors is equivalent to training
the collapsed weight with the non-convex L_{2/D} quasi-norm penalty; the
functions here provide both sides of that equivalence plus the misalignment
diagnostic measuring how far a factorization is from the minimum-norm
(balanced) one.
"""

import numpy as np


class FactorizedParam:
    """One logical weight tensor held as D same-shape factor arrays."""

    __slots__ = ("factors",)

    def __init__(self, factors):
        factors = [np.asarray(f, dtype=np.float64) for f in factors]
        if len(factors) < 2:
            raise ValueError(f"depth must be >= 2, got {len(factors)}")
        shape = factors[0].shape
        for f in factors[1:]:
            if f.shape != shape:
                raise ValueError(f"factor shape mismatch: {f.shape} vs {shape}")
        self.factors = factors

    @property
    def depth(self):
        return len(self.factors)

    @property
    def shape(self):
        return self.factors[0].shape

    def copy(self):
        return FactorizedParam([f.copy() for f in self.factors])

    @classmethod
    def zeros(cls, shape, depth):
        return cls([np.zeros(shape) for _ in range(depth)])


def collapse(p):
    """Elementwise product of the factors: the effective weight array."""
    out = p.factors[0].copy()
    for f in p.factors[1:]:
        out *= f
    return out


def l2_factor_penalty(p):
    """Mean over factors of the squared L2 norm: D^-1 sum_d ||w_d||^2."""
    return float(sum(np.sum(f * f) for f in p.factors)) / p.depth


def quasi_norm(w, depth):
    """sum_j |w_j|^(2/D), the sparsity penalty the factorization collapses to.

    Evaluated as exp((2/D) ln|w|) with an explicit zero branch; the power is
    non-differentiable at 0 but only evaluation is needed here.
    """
    if depth < 2:
        raise ValueError(f"depth must be >= 2, got {depth}")
    a = np.abs(np.asarray(w, dtype=np.float64))
    nz = a > 0.0
    out = np.zeros_like(a)
    out[nz] = np.exp((2.0 / depth) * np.log(a[nz]))
    return float(np.sum(out))


def misalignment(p):
    """Gap between the mean factor L2 penalty and the collapsed quasi-norm.

    Non-negative by AM-GM; exactly zero iff all factors share the same
    absolute value elementwise (the balanced, minimum-norm factorization).
    """
    return l2_factor_penalty(p) - quasi_norm(collapse(p), p.depth)


def balanced_factorize(w, depth, rng=None):
    """Minimum-norm factorization: every factor gets |w|^(1/D) in magnitude.

    Sign placement is deterministic (the sign of w goes on the first factor);
    any sign pattern with the right product parity would do, and the rng
    argument is accepted for interface symmetry but unused.
    """
    if depth < 2:
        raise ValueError(f"depth must be >= 2, got {depth}")
    w = np.asarray(w, dtype=np.float64)
    root = np.abs(w) ** (1.0 / depth)
    first = np.sign(w) * root
    return FactorizedParam([first] + [root.copy() for _ in range(depth - 1)])


def factor_gradients(grad_w, p):
    """Chain rule through the product: dL/dw_d = grad_w * prod_{k != d} w_k.

    Uses prefix/suffix product accumulation, never division by a factor, so
    zeros propagate correctly.
    """
    grad_w = np.asarray(grad_w, dtype=np.float64)
    if grad_w.shape != p.shape:
        raise ValueError(f"gradient shape {grad_w.shape} != param shape {p.shape}")
    depth = p.depth
    suffix = [None] * depth
    acc = np.ones(p.shape)
    for d in range(depth - 1, -1, -1):
        suffix[d] = acc
        acc = acc * p.factors[d]
    grads = [None] * depth
    acc = grad_w
    for d in range(depth):
        grads[d] = acc * suffix[d]
        acc = acc * p.factors[d]
    return grads
