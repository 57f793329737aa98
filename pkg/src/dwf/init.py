"""Factor initialization schemes and per-layer scale rules.

Naively giving every factor the scale a standard (unfactorized) scheme
prescribes makes the collapsed weight variance sigma_w^(2D) instead of
sigma_w^2, so activations die layer by layer for D > 2. The schemes here
correct this in different ways:

  * Standard: the failing baseline, each factor ~ N(0, sigma_w^2).
  * VarMatch: factor variance sigma_w^(2/D) so the product variance matches.
  * DwfTruncated: VarMatch plus per-factor rejection into the absolute-value
    interval (eps^(1/D), min{1, (2 sigma_w)^(1/D)}), removing dead and
    outlier products (the product kurtosis grows as 3^D otherwise).
  * Root: factorize one standard draw exactly, |w|^(1/D) per factor.
  * GpfTruncated: samples factors from a Rademacher/Gamma series whose
    D-fold product is exactly Gaussian, truncated at k_max terms.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, InitializationError

# defaults shared by training configs
DEFAULT_TRUNC_EPS = 3e-3
BIAS_SIGMA = 0.05
REJECTION_CAP = 10_000


@dataclass(frozen=True)
class Standard:
    pass


@dataclass(frozen=True)
class VarMatch:
    pass


@dataclass(frozen=True)
class DwfTruncated:
    eps: float = DEFAULT_TRUNC_EPS

    def __post_init__(self):
        if self.eps <= 0:
            raise ConfigError(f"eps must be > 0, got {self.eps}")


@dataclass(frozen=True)
class Root:
    pass


@dataclass(frozen=True)
class GpfTruncated:
    k_max: int = 5

    def __post_init__(self):
        if self.k_max < 1:
            raise ConfigError(f"k_max must be >= 1, got {self.k_max}")


@dataclass(frozen=True)
class LayerInitContext:
    n_in: int
    n_out: int
    base_variance_rule: str = "lecun"  # lecun | kaiming | glorot

    def __post_init__(self):
        if self.n_in < 1 or self.n_out < 1:
            raise ConfigError("n_in and n_out must be >= 1")


def base_sigma(ctx):
    """Standard-deviation a dense layer would use: the scale the factors must recover."""
    rule = ctx.base_variance_rule.lower()
    if rule == "lecun":
        var = 1.0 / ctx.n_in
    elif rule == "kaiming":
        var = 2.0 / ctx.n_in
    elif rule == "glorot":
        var = 2.0 / (ctx.n_in + ctx.n_out)
    else:
        raise ConfigError(f"unknown variance rule {ctx.base_variance_rule!r}")
    return float(np.sqrt(var))


def _truncated_normal(sigma, lo, hi, n, rng):
    """Rejection-sample N(0, sigma^2) conditioned on lo < |x| < hi."""
    if not lo < hi:
        raise InitializationError(
            f"empty truncation interval: lower bound {lo:.6g} >= upper bound {hi:.6g}"
        )
    out = rng.normal(0.0, sigma, n)
    bad = ~((np.abs(out) > lo) & (np.abs(out) < hi))
    rounds = 0
    while bad.any():
        rounds += 1
        if rounds > REJECTION_CAP:
            raise InitializationError(
                f"rejection cap {REJECTION_CAP} exceeded; truncation interval "
                f"({lo:.6g}, {hi:.6g}) is too improbable at sigma={sigma:.6g}"
            )
        k = int(bad.sum())
        out[bad] = rng.normal(0.0, sigma, k)
        bad = ~((np.abs(out) > lo) & (np.abs(out) < hi))
    return out


def gpf_sample(depth, sigma_w, k_max, rng, n=None):
    """Draw factor values whose D-fold product is ~ N(0, sigma_w^2).

    omega = R * exp{ ln(2 sigma_w^2)/(2D) - G_0 - sum_{k=1..k_max}
    [G_k/(2k+1) - ln(1+1/k)/(2D)] } with G_k ~ Gamma(1/D, 1) and R a random
    sign. The exact law needs the infinite series; truncation at small k_max
    is already statistically indistinguishable from it at moderate sample
    sizes. Returns a scalar when n is None, else an array of n draws.
    """
    if depth < 1:
        raise ConfigError(f"depth must be >= 1, got {depth}")
    if sigma_w <= 0:
        raise ConfigError(f"sigma_w must be > 0, got {sigma_w}")
    if k_max < 1:
        raise ConfigError(f"k_max must be >= 1, got {k_max}")
    size = 1 if n is None else int(n)
    log_mag = np.full(size, np.log(2.0 * sigma_w**2) / (2.0 * depth))
    log_mag -= rng.gamma(1.0 / depth, size)
    for k in range(1, k_max + 1):
        log_mag -= rng.gamma(1.0 / depth, size) / (2 * k + 1)
        log_mag += np.log1p(1.0 / k) / (2.0 * depth)
    vals = rng.rademacher(size) * np.exp(log_mag)
    return float(vals[0]) if n is None else vals


def sample_factor_weights(ctx, scheme, depth, n, rng):
    """Draw D factor arrays of n values each for one layer."""
    if depth < 2:
        raise ConfigError(f"depth must be >= 2, got {depth}")
    sigma_w = base_sigma(ctx)
    return sample_factors_at_sigma(scheme, depth, n, sigma_w, rng)


def sample_factors_at_sigma(scheme, depth, n, sigma_w, rng):
    """Draw D factor arrays whose product should recover scale sigma_w."""
    n = int(n)
    if isinstance(scheme, Standard):
        return [rng.normal(0.0, sigma_w, n) for _ in range(depth)]
    if isinstance(scheme, VarMatch):
        sigma_f = sigma_w ** (1.0 / depth)
        return [rng.normal(0.0, sigma_f, n) for _ in range(depth)]
    if isinstance(scheme, DwfTruncated):
        sigma_f = sigma_w ** (1.0 / depth)
        lo = scheme.eps ** (1.0 / depth)
        hi = min(1.0, (2.0 * sigma_w) ** (1.0 / depth))
        return [_truncated_normal(sigma_f, lo, hi, n, rng) for _ in range(depth)]
    if isinstance(scheme, Root):
        w = rng.normal(0.0, sigma_w, n)
        root = np.abs(w) ** (1.0 / depth)
        return [np.sign(w) * root] + [root.copy() for _ in range(depth - 1)]
    if isinstance(scheme, GpfTruncated):
        return [gpf_sample(depth, sigma_w, scheme.k_max, rng, n) for _ in range(depth)]
    raise ConfigError(f"unknown init scheme {scheme!r}")


def init_biases(scheme, depth, n, rng, sigma_b=BIAS_SIGMA):
    """Factorized bias init with a fixed small sigma.

    All-zero biases are a saddle point the factorized dynamics cannot leave,
    so biases are drawn from the same scheme as weights at scale sigma_b.
    """
    if depth < 2:
        raise ConfigError(f"depth must be >= 2, got {depth}")
    return sample_factors_at_sigma(scheme, depth, n, sigma_b, rng)
