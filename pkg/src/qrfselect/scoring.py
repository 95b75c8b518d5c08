"""CRPS and pinball-loss computations.

The score of a predictive distribution against an observation is available in
two equivalent forms: twice the integral of pinball losses over quantile
levels (approximated on a finite grid) and the integral of the squared
difference between the predictive CDF and the step function at the
observation (exact for step CDFs). A closed form covers Gaussian predictive
distributions.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

_SQRT_PI = math.sqrt(math.pi)
_SQRT_TWO_PI = math.sqrt(2.0 * math.pi)


@dataclass(frozen=True)
class QuantileGrid:
    """Evenly spaced interior quantile levels t/(k+1), t = 1..k."""

    k: int

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("grid size k must be >= 1")

    @property
    def levels(self) -> np.ndarray:
        return np.arange(1, self.k + 1, dtype=np.float64) / (self.k + 1)


@dataclass(frozen=True)
class StepCDF:
    """Right-continuous step CDF on sorted support points.

    ``probs`` are cumulative, nondecreasing, and end at 1.
    """

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.support, dtype=np.float64)
        p = np.asarray(self.probs, dtype=np.float64)
        if z.ndim != 1 or p.shape != z.shape or z.size == 0:
            raise ValueError("support and probs must be equal-length 1-d arrays")
        if np.any(np.diff(z) < 0):
            raise ValueError("support must be sorted")
        if np.any(np.diff(p) < -1e-12):
            raise ValueError("probs must be nondecreasing")
        if abs(p[-1] - 1.0) > 1e-9:
            raise ValueError("probs must end at 1")
        object.__setattr__(self, "support", z)
        object.__setattr__(self, "probs", p)

    @classmethod
    def from_sample(cls, values, weights=None) -> "StepCDF":
        values = np.asarray(values, dtype=np.float64)
        if weights is None:
            weights = np.ones_like(values)
        weights = np.asarray(weights, dtype=np.float64)
        if np.any(weights < 0) or weights.sum() <= 0:
            raise ValueError("weights must be nonnegative with positive sum")
        order = np.argsort(values, kind="stable")
        w = weights[order]
        cum = np.cumsum(w)
        cum = cum / cum[-1]
        cum[-1] = 1.0
        return cls(support=values[order], probs=cum)

    @classmethod
    def point_mass(cls, value: float) -> "StepCDF":
        return cls(support=np.array([value]), probs=np.array([1.0]))

    def quantile(self, tau: float) -> float:
        """Smallest support value with cumulative probability >= tau."""
        if not (0.0 < tau < 1.0):
            raise ValueError("tau must be in (0, 1)")
        pos = int(np.searchsorted(self.probs, tau, side="left"))
        return float(self.support[min(pos, self.support.size - 1)])

    def left_limit_at(self, y: float) -> float:
        """P(Z < y)."""
        pos = int(np.searchsorted(self.support, y, side="left"))
        return 0.0 if pos == 0 else float(self.probs[pos - 1])

    def cdf_at(self, y: float) -> float:
        """P(Z <= y)."""
        pos = int(np.searchsorted(self.support, y, side="right"))
        return 0.0 if pos == 0 else float(self.probs[pos - 1])


def pinball(u, tau: float):
    """Check loss: u * (tau - 1{u < 0}); nonnegative, zero only at u = 0."""
    if not (0.0 < tau < 1.0):
        raise ValueError("tau must be in (0, 1)")
    u = np.asarray(u, dtype=np.float64)
    out = np.where(u >= 0.0, u * tau, u * (tau - 1.0))
    return float(out) if out.ndim == 0 else out


def crps_from_quantiles(y: float, quantiles, grid: QuantileGrid) -> float:
    """Quadrature form of the score: (2/k) sum_t pinball(y - q_t, tau_t)."""
    q = np.asarray(quantiles, dtype=np.float64)
    if q.shape != (grid.k,):
        raise ValueError(f"expected {grid.k} quantile values, got shape {q.shape}")
    taus = grid.levels
    u = y - q
    vals = np.where(u >= 0.0, u * taus, u * (taus - 1.0))
    return float(2.0 * np.sum(vals) / grid.k)


def crps_cdf_form(y: float, cdf: StepCDF) -> float:
    """Exact integral of (1{y <= z} - F(z))^2 dz for a step CDF."""
    z = cdf.support
    p = cdf.probs
    total = 0.0
    if y < z[0]:
        total += z[0] - y
    if y > z[-1]:
        total += y - z[-1]
    if z.size > 1:
        a = z[:-1]
        b = z[1:]
        f = p[:-1]
        below = np.minimum(np.maximum(y, a), b) - a  # length where z < y within [a,b)
        above = (b - a) - below
        total += float(np.sum(f * f * below + (1.0 - f) ** 2 * above))
    return total


def crps_gaussian(y, mu, sigma):
    """Closed-form score for a Gaussian predictive distribution.

    sigma * (z (2 Phi(z) - 1) + 2 phi(z) - 1/sqrt(pi)) with z = (y - mu)/sigma.
    Accepts scalars or arrays (broadcast).
    """
    sigma_arr = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma_arr <= 0):
        raise ValueError("sigma must be positive")
    y = np.asarray(y, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    z = (y - mu) / sigma_arr
    phi = np.exp(-0.5 * z * z) / _SQRT_TWO_PI
    out = sigma_arr * (z * (2.0 * ndtr(z) - 1.0) + 2.0 * phi - 1.0 / _SQRT_PI)
    return float(out) if out.ndim == 0 else out
