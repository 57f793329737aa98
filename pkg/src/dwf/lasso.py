"""Lasso solvers used to verify the factorization-penalty equivalence.

Two independent routes to the same optimum:

  * lasso_cd: cyclic coordinate descent with soft-thresholding on the
    objective sum((y - Xw)^2) + lambda * ||w||_1. Convex, certifiable, the
    reference oracle.
  * factorized_lasso_train: full-batch heavy-ball gradient descent on the
    smooth reformulation sum((y - X(w1*...*wD))^2) + (lambda/D) sum_d ||wd||^2,
    collapsing the factors at the end. Non-convex, but its local minima
    coincide with the L_{2/(D)}-penalized problem's; at D=2 that is the lasso.

The two must never be merged: their agreement is the point.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DivergedError
from .factorization import FactorizedParam, collapse, misalignment

# keep the two objective conventions in one place
def lasso_objective(X, y, w, lam):
    r = y - X @ w
    return float(r @ r + lam * np.abs(w).sum())


def _soft_threshold(rho, thresh):
    return np.sign(rho) * max(abs(rho) - thresh, 0.0)


def lasso_cd(X, y, lam, tol=1e-10, max_iter=10_000):
    """Cyclic coordinate descent for min_w sum((y - Xw)^2) + lam ||w||_1.

    Converged when no coefficient moved more than tol in a sweep. All-zero
    columns get coefficient 0. Raises on non-convergence with the sweep
    residual attached.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    n, p = X.shape
    col_sq = np.einsum("ij,ij->j", X, X)
    w = np.zeros(p)
    r = y.copy()  # residual y - Xw, maintained incrementally
    for _ in range(max_iter):
        max_delta = 0.0
        for j in range(p):
            if col_sq[j] == 0.0:
                continue
            xj = X[:, j]
            rho = xj @ r + col_sq[j] * w[j]
            new = _soft_threshold(rho, lam / 2.0) / col_sq[j]
            delta = new - w[j]
            if delta != 0.0:
                r -= delta * xj
                w[j] = new
                max_delta = max(max_delta, abs(delta))
        if max_delta < tol:
            return w
    raise DivergedError(
        f"coordinate descent did not converge in {max_iter} sweeps "
        f"(last max coefficient change {max_delta:.3e})"
    )


@dataclass(frozen=True)
class FactorizedLassoConfig:
    steps: int = 60_000
    lr: float = None  # None: 0.25 / (2 ||X^T X||_2), estimated by power iteration
    momentum: float = 0.9
    init_scale: float = 1e-3
    grad_tol: float = 1e-10

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if self.lr is not None and self.lr <= 0:
            raise ValueError("lr must be > 0")
        if self.init_scale <= 0 or self.grad_tol <= 0:
            raise ValueError("init_scale and grad_tol must be > 0")


def _spectral_norm(A, iters=100):
    v = np.ones(A.shape[1]) / np.sqrt(A.shape[1])
    for _ in range(iters):
        v = A.T @ (A @ v)
        nv = np.linalg.norm(v)
        if nv == 0:
            return 0.0
        v /= nv
    return float(np.linalg.norm(A @ v))


def factorized_lasso_train(X, y, lam, depth=2, cfg=FactorizedLassoConfig(), return_info=False):
    """Gradient descent on the factorized objective; returns the collapsed w.

    Factors start at (init_scale, ..., init_scale, 0) elementwise: one zero
    factor keeps the initial collapsed weight at zero while leaving a nonzero
    gradient path, and either sign remains reachable. With lam > 0,
    stationarity forces the factors into balance, so the misalignment of a
    converged run certifies it reached a genuine local minimum. With
    return_info=True also returns a dict with convergence diagnostics.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    if depth < 2:
        raise ValueError("depth must be >= 2")
    n, p = X.shape
    lr = cfg.lr
    if lr is None:
        lr = 0.25 / (2.0 * _spectral_norm(X) ** 2)
    factors = [np.full(p, cfg.init_scale) for _ in range(depth - 1)]
    factors.append(np.zeros(p))
    vel = [np.zeros(p) for _ in range(depth)]
    coef = 2.0 * lam / depth
    converged = False
    for step in range(cfg.steps):
        w = factors[0].copy()
        for f in factors[1:]:
            w *= f
        grad_w = 2.0 * (X.T @ (X @ w - y))
        # prefix/suffix products give each factor's chain-rule gradient
        suffix = [None] * depth
        acc = np.ones(p)
        for d in range(depth - 1, -1, -1):
            suffix[d] = acc
            acc = acc * factors[d]
        gmax = 0.0
        acc = grad_w
        grads = [None] * depth
        for d in range(depth):
            grads[d] = acc * suffix[d] + coef * factors[d]
            gmax = max(gmax, float(np.max(np.abs(grads[d]))))
            acc = acc * factors[d]
        if gmax < cfg.grad_tol:
            converged = True
            break
        for d in range(depth):
            vel[d] = cfg.momentum * vel[d] + grads[d]
            factors[d] = factors[d] - lr * vel[d]
        if not np.isfinite(factors[0].sum()):
            raise DivergedError("factorized lasso diverged", step=step)
    param = FactorizedParam(factors)
    w = collapse(param)
    if not return_info:
        return w
    info = {
        "converged": converged,
        "grad_inf_norm": gmax,
        "misalignment": misalignment(param),
        "objective": lasso_objective(X, y, w, lam),
    }
    return w, info
