"""Forecast-calibration diagnostics as binned-data emitters.

Three diagram kinds: PIT histograms (equal-width bins over [0,1]),
reliability diagrams for threshold exceedance probabilities (equal-count
bins) and quantile reliability diagrams (equal-count bins, per-bin empirical
quantile of the outcomes). Diagrams serialize to CSV, one row per bin;
plotting is left to external tools.
"""

import csv
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .scoring import StepCDF


class VerificationError(ValueError):
    pass


@dataclass(frozen=True)
class BinnedDiagram:
    kind: str
    edges: Optional[np.ndarray]
    counts: np.ndarray
    mean_forecast: Optional[np.ndarray]
    mean_outcome: Optional[np.ndarray]
    metadata: dict

    def write_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            header = ["bin", "count"]
            if self.edges is not None:
                header = ["bin", "lo", "hi", "count"]
            if self.mean_forecast is not None:
                header.append("mean_forecast")
            if self.mean_outcome is not None:
                header.append("mean_outcome")
            writer.writerow(header)
            for b in range(self.counts.shape[0]):
                row = [b]
                if self.edges is not None:
                    row += [repr(float(self.edges[b])), repr(float(self.edges[b + 1]))]
                row.append(int(self.counts[b]))
                if self.mean_forecast is not None:
                    row.append(repr(float(self.mean_forecast[b])))
                if self.mean_outcome is not None:
                    row.append(repr(float(self.mean_outcome[b])))
                writer.writerow(row)


def pit_histogram(pit_values, bins: int = 10) -> BinnedDiagram:
    """Histogram of probability integral transforms over [0, 1].

    Bins are equal-width and right-closed ((lo, hi], the first including 0),
    so a value exactly on an edge belongs to the lower bin.
    """
    v = np.asarray(pit_values, dtype=np.float64)
    if v.size and (v.min() < 0.0 or v.max() > 1.0):
        raise VerificationError("PIT values must lie in [0, 1]")
    if bins < 1:
        raise VerificationError("bins must be >= 1")
    idx = np.ceil(v * bins).astype(np.int64) - 1
    np.clip(idx, 0, bins - 1, out=idx)
    counts = np.bincount(idx, minlength=bins)
    return BinnedDiagram(
        kind="pit",
        edges=np.linspace(0.0, 1.0, bins + 1),
        counts=counts,
        mean_forecast=None,
        mean_outcome=None,
        metadata={"bins": bins},
    )


def _equal_count_bins(values: np.ndarray, bins: int):
    order = np.argsort(values, kind="stable")
    return np.array_split(order, bins)


def reliability_diagram(probs, outcomes, bins: int = 10) -> BinnedDiagram:
    """Mean forecast probability vs. mean binary outcome per equal-count bin.

    For a calibrated forecast the pairs lie near the identity line.
    """
    p = np.asarray(probs, dtype=np.float64)
    o = np.asarray(outcomes, dtype=np.float64)
    if p.shape != o.shape:
        raise VerificationError("probs and outcomes must have equal length")
    if p.size and (p.min() < 0.0 or p.max() > 1.0):
        raise VerificationError("probabilities must lie in [0, 1]")
    if bins < 1:
        raise VerificationError("bins must be >= 1")
    groups = _equal_count_bins(p, bins)
    counts = np.array([g.size for g in groups])
    mean_p = np.array([p[g].mean() if g.size else math.nan for g in groups])
    mean_o = np.array([o[g].mean() if g.size else math.nan for g in groups])
    return BinnedDiagram(
        kind="reliability",
        edges=None,
        counts=counts,
        mean_forecast=mean_p,
        mean_outcome=mean_o,
        metadata={"bins": bins},
    )


def quantile_reliability(q_forecasts, outcomes, tau: float, bins: int = 10) -> BinnedDiagram:
    """Mean forecast quantile vs. empirical tau-quantile per equal-count bin."""
    if not (0.0 < tau < 1.0):
        raise VerificationError("tau must be in (0, 1)")
    q = np.asarray(q_forecasts, dtype=np.float64)
    o = np.asarray(outcomes, dtype=np.float64)
    if q.shape != o.shape:
        raise VerificationError("forecasts and outcomes must have equal length")
    if bins < 1:
        raise VerificationError("bins must be >= 1")
    groups = _equal_count_bins(q, bins)
    counts = np.array([g.size for g in groups])
    mean_q = np.array([q[g].mean() if g.size else math.nan for g in groups])
    emp_q = np.array(
        [_left_quantile(o[g], tau) if g.size else math.nan for g in groups]
    )
    return BinnedDiagram(
        kind="quantile_reliability",
        edges=None,
        counts=counts,
        mean_forecast=mean_q,
        mean_outcome=emp_q,
        metadata={"bins": bins, "tau": tau},
    )


def _left_quantile(values: np.ndarray, tau: float) -> float:
    ys = np.sort(values)
    pos = int(math.ceil(tau * ys.size)) - 1
    return float(ys[min(max(pos, 0), ys.size - 1)])


def randomized_pit(cdf: StepCDF, y: float, u: float) -> float:
    """PIT for a discrete predictive CDF, randomized across the jump at y.

    Returns F(y-) + u * (F(y) - F(y-)) with u ~ U(0,1) supplied by the
    caller's seeded generator, so uniformity is exact under calibration.
    """
    if not (0.0 <= u <= 1.0):
        raise VerificationError("u must lie in [0, 1]")
    lo = cdf.left_limit_at(y)
    hi = cdf.cdf_at(y)
    return lo + u * (hi - lo)
