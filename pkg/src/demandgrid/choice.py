"""User distance-threshold choice model.

Each arriving user has a random maximum distance they will travel to a
vehicle. The shipped model discretizes a half-normal distribution over the
grid's distance classes, truncated at dist_max; anything downstream only
consumes the resulting per-class bin probabilities and survival values, so
alternative threshold models can be swapped in by producing the same
ThresholdDistribution arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .grid import DistanceClassTable

BISECTION_SIGMA_LO = 1e-2
BISECTION_SIGMA_HI = 1e7
BISECTION_MAX_ITERS = 200
DEFAULT_P0_TOL = 1e-4


class InfeasibleP0Error(ValueError):
    """Requested own-cell probability cannot be reached by any sigma."""

    def __init__(self, p0: float, achievable: tuple[float, float]):
        self.p0 = p0
        self.achievable = achievable
        super().__init__(
            f"p0={p0} is not achievable; the half-normal family on these "
            f"distance classes covers ({achievable[0]:.6f}, {achievable[1]})"
        )


@dataclass(frozen=True)
class ThresholdDistribution:
    """Discretized threshold distribution over distance-class bins.

    boundaries has L+1 entries (the L class distances plus dist_max).
    class_probs[l] is Pr(threshold in [boundaries[l], boundaries[l+1])).
    survival[l] is Pr(threshold >= boundaries[l]), i.e. the probability a
    user considers vehicles at class-l distance. sigma == 0 marks the
    degenerate own-cell-only model used when p0 = 1.
    """

    sigma: float
    p0: float
    dist_max: float
    boundaries: np.ndarray
    class_probs: np.ndarray
    survival: np.ndarray

    @property
    def num_classes(self) -> int:
        return len(self.class_probs)

    def matches_table(self, table: DistanceClassTable) -> bool:
        return len(self.boundaries) == table.num_classes + 1 and np.allclose(
            self.boundaries, table.boundaries, atol=1e-9
        )

    def sample_classes(self, rng: np.random.Generator, size: int) -> np.ndarray:
        """Sample threshold class indices; deterministic under a fixed rng."""
        cum = np.cumsum(self.class_probs)
        u = rng.random(size)
        return np.minimum(np.searchsorted(cum, u, side="right"), self.num_classes - 1)

    def to_dict(self) -> dict:
        return {
            "sigma": self.sigma,
            "p0": self.p0,
            "dist_max": self.dist_max,
            "boundaries": self.boundaries.tolist(),
            "class_probs": self.class_probs.tolist(),
            "survival": self.survival.tolist(),
        }


def _half_normal_cdf(x, sigma: float):
    # CDF of |N(0, sigma^2)|, accurate to ~1e-15 via erf
    return erf(np.asarray(x, dtype=float) / (sigma * math.sqrt(2.0)))


def threshold_probs(sigma: float, table: DistanceClassTable) -> ThresholdDistribution:
    """Discretize the half-normal with the given sigma onto the class bins.

    Bin masses are normalized by the CDF at dist_max so they sum to one over
    the truncated support. survival differences reproduce class_probs
    exactly because the probs are stored as those differences.
    """
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    bounds = table.boundaries
    if len(bounds) < 2:
        raise ValueError("distance class table is empty")
    survival = _survival_from_sigma(sigma, bounds)
    probs = np.diff(-np.append(survival, 0.0))
    return ThresholdDistribution(
        sigma=float(sigma),
        p0=float(probs[0]),
        dist_max=float(table.dist_max),
        boundaries=bounds,
        class_probs=probs,
        survival=survival,
    )


def _survival_from_sigma(sigma: float, bounds: np.ndarray) -> np.ndarray:
    total = _half_normal_cdf(bounds[-1], sigma)
    if bounds[-1] <= 0 or total <= 0:
        # dist_max of zero (or sigma so large the CDF underflows): the only
        # bin is the own cell
        surv = np.zeros(len(bounds) - 1)
        surv[0] = 1.0
        return surv
    surv = (total - _half_normal_cdf(bounds[:-1], sigma)) / total
    surv[0] = 1.0
    return np.clip(surv, 0.0, 1.0)


def degenerate_distribution(table: DistanceClassTable) -> ThresholdDistribution:
    """Own-cell-only model (p0 = 1): users never leave their cell."""
    L = table.num_classes
    probs = np.zeros(L)
    probs[0] = 1.0
    surv = np.zeros(L)
    surv[0] = 1.0
    return ThresholdDistribution(
        sigma=0.0,
        p0=1.0,
        dist_max=float(table.dist_max),
        boundaries=table.boundaries,
        class_probs=probs,
        survival=surv,
    )


def achievable_p0_range(table: DistanceClassTable) -> tuple[float, float]:
    """Open interval of bin-0 masses reachable by varying sigma.

    As sigma shrinks the mass concentrates in bin 0 (limit 1); as sigma
    grows the density flattens and bin masses approach proportionality to
    bin width, so the lower limit is boundaries[1] / dist_max.
    """
    bounds = table.boundaries
    if len(bounds) <= 2 or bounds[-1] <= 0:
        return (1.0, 1.0)
    return (float(bounds[1] / bounds[-1]), 1.0)


def solve_sigma(
    p0: float,
    table: DistanceClassTable,
    tol: float = DEFAULT_P0_TOL,
) -> float:
    """Bisection for the sigma whose bin-0 mass equals p0 within tol.

    Bin-0 mass is monotone decreasing in sigma, so plain bisection on
    [BISECTION_SIGMA_LO, BISECTION_SIGMA_HI] converges; infeasible targets
    raise InfeasibleP0Error carrying the achievable range.
    """
    if not (0 < p0 < 1):
        raise ValueError(f"p0 must lie strictly between 0 and 1, got {p0}")
    lo_mass, hi_mass = achievable_p0_range(table)
    if hi_mass == lo_mass:
        raise InfeasibleP0Error(p0, (lo_mass, hi_mass))

    bounds = table.boundaries

    def bin0_mass(sigma: float) -> float:
        surv = _survival_from_sigma(sigma, bounds)
        return 1.0 - (surv[1] if len(surv) > 1 else 0.0)

    lo, hi = BISECTION_SIGMA_LO, BISECTION_SIGMA_HI
    mass_lo, mass_hi = bin0_mass(lo), bin0_mass(hi)
    # mass is decreasing in sigma: mass_lo ~ 1, mass_hi ~ flat limit
    if not (mass_hi - tol <= p0 <= mass_lo + tol):
        raise InfeasibleP0Error(p0, (max(lo_mass, mass_hi), min(1.0, mass_lo)))

    sigma = lo
    for _ in range(BISECTION_MAX_ITERS):
        sigma = 0.5 * (lo + hi)
        mass = bin0_mass(sigma)
        if abs(mass - p0) <= tol:
            return sigma
        if mass > p0:
            lo = sigma
        else:
            hi = sigma
    raise RuntimeError(
        f"bisection did not reach |mass - p0| <= {tol} in {BISECTION_MAX_ITERS} iterations"
    )


def fit_threshold_distribution(
    p0: float,
    table: DistanceClassTable,
    tol: float = DEFAULT_P0_TOL,
) -> ThresholdDistribution:
    """Build the distribution for a target p0; p0 = 1 yields the degenerate
    own-cell-only model."""
    if p0 == 1.0:
        return degenerate_distribution(table)
    if table.num_classes == 1:
        # single bin: every user stays in their cell regardless of sigma
        if abs(1.0 - p0) > tol:
            raise InfeasibleP0Error(p0, (1.0, 1.0))
        return degenerate_distribution(table)
    sigma = solve_sigma(p0, table, tol)
    dist = threshold_probs(sigma, table)
    return dist
