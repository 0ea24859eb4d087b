"""Pointwise Gaussian intervals and simultaneous sup-t credible bands.

Both bands are centered at P_n with per-query scale s_j = sqrt(Sigma_jj / n).
The pointwise band uses the normal quantile; the sup-t band calibrates one
critical value c from the Monte Carlo distribution of the studentized
sup-norm T = max_j |W_j| / sqrt(Sigma_jj), W ~ N_m(0, Sigma), so the same c
covers all m queries simultaneously. Bounds are clipped to [0, 1], the
natural range of probabilities.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from ._rng import stream
from .data import QuerySpec
from .errors import DataError
from .estimators import CovarianceEstimate, _cholesky_with_jitter
from .special import std_normal_quantile

DIAG_TOL = -1e-10


@dataclass(frozen=True)
class Band:
    """A credible band: center, bounds, and the calibration that built it."""

    center: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    alpha: float
    kind: str  # "pointwise" or "sup-t"
    critical: float
    sigma: CovarianceEstimate
    L: int | None = None
    seed: int | None = None

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64)
        lo = np.asarray(self.lower, dtype=np.float64)
        hi = np.asarray(self.upper, dtype=np.float64)
        if not (c.shape == lo.shape == hi.shape):
            raise DataError("band arrays must share one shape")
        if np.any(lo > c + 1e-12) or np.any(hi < c - 1e-12):
            raise DataError("band must contain its center")
        if lo.min() < -1e-12 or hi.max() > 1.0 + 1e-12:
            raise DataError("band bounds must lie in [0, 1]")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def width(self) -> np.ndarray:
        return self.upper - self.lower

    def contains(self, values) -> np.ndarray:
        v = np.asarray(values, dtype=np.float64)
        return (self.lower <= v) & (v <= self.upper)


def _scales(sigma: CovarianceEstimate) -> np.ndarray:
    diag = np.diag(sigma.matrix).copy()
    if diag.min() < DIAG_TOL:
        raise DataError(f"negative covariance diagonal {diag.min()!r} beyond tolerance")
    diag[diag < 0.0] = 0.0
    return diag


def pointwise_band(center, sigma: CovarianceEstimate, alpha: float) -> Band:
    """Per-query interval P_nj +/- z_{1-alpha/2} sqrt(Sigma_jj/n), clipped."""
    center = np.asarray(center, dtype=np.float64)
    if center.shape[0] != sigma.m:
        raise DataError("center length does not match covariance dimension")
    if not 0.0 < alpha < 1.0:
        raise DataError(f"alpha {alpha!r} outside (0, 1)")
    z = std_normal_quantile(1.0 - alpha / 2.0)
    s = np.sqrt(_scales(sigma) / sigma.n)
    lower = np.clip(center - z * s, 0.0, 1.0)
    upper = np.clip(center + z * s, 0.0, 1.0)
    return Band(center, lower, upper, alpha, "pointwise", z, sigma)


def sample_mvn(sigma: CovarianceEstimate, count: int, seed: int) -> np.ndarray:
    """``count`` draws from N_m(0, Sigma), deterministic in seed.

    Zero-variance components are exact zeros; the positive-variance block is
    Cholesky-factored with the smallest jitter that succeeds.
    """
    diag = _scales(sigma)
    m = sigma.m
    active = np.where(diag > 0.0)[0]
    out = np.zeros((count, m))
    if active.size == 0:
        return out
    sub = sigma.matrix[np.ix_(active, active)]
    chol, _ = _cholesky_with_jitter(sub)
    z = stream(seed, "mvn-draws").standard_normal((count, active.size))
    out[:, active] = z @ chol.T
    return out


def supt_band(
    center,
    sigma: CovarianceEstimate,
    alpha: float,
    L: int = 10_000,
    seed: int = 0,
) -> Band:
    """Simultaneous band P_nj +/- c * sqrt(Sigma_jj/n) with MC-calibrated c.

    c is the empirical (1-alpha)-quantile (order statistic at index
    ceil((1-alpha) L), 1-based) of T = max_j |W_j|/sqrt(Sigma_jj) over L
    Gaussian draws. Queries with zero variance are excluded from the max and
    collapse to the center.
    """
    center = np.asarray(center, dtype=np.float64)
    if center.shape[0] != sigma.m:
        raise DataError("center length does not match covariance dimension")
    if not 0.0 < alpha < 1.0:
        raise DataError(f"alpha {alpha!r} outside (0, 1)")
    if L < 1000:
        raise DataError("sup-t calibration needs L >= 1000 draws")
    diag = _scales(sigma)
    active = diag > 0.0
    if not np.any(active):
        return Band(center, center.copy(), center.copy(), alpha, "sup-t", 0.0, sigma, L, int(seed))
    draws = sample_mvn(sigma, L, seed)
    t_stat = np.max(np.abs(draws[:, active]) / np.sqrt(diag[active]), axis=1)
    order = math.ceil((1.0 - alpha) * L)
    c = float(np.sort(t_stat)[order - 1])
    # T dominates each marginal |N(0,1)|, so the exact c is >= the pointwise
    # z; flooring removes Monte Carlo undershoot and keeps the bands nested
    c = max(c, std_normal_quantile(1.0 - alpha / 2.0))
    s = np.sqrt(diag / sigma.n)
    lower = np.where(active, np.clip(center - c * s, 0.0, 1.0), center)
    upper = np.where(active, np.clip(center + c * s, 0.0, 1.0), center)
    return Band(center, lower, upper, alpha, "sup-t", c, sigma, L, int(seed))


BAND_CSV_COLUMNS = ("query_index", "x", "t_or_class", "center", "lower", "upper", "kind", "alpha")


def band_csv_rows(band: Band, queries: QuerySpec) -> list[tuple]:
    """One row per query: index, covariate (;-joined if d > 1), event, bounds."""
    rows = []
    for j in range(queries.m):
        x = queries.xs[j]
        xtxt = ";".join(repr(float(v)) for v in x)
        rows.append(
            (
                j,
                xtxt,
                queries.events[j],
                repr(float(band.center[j])),
                repr(float(band.lower[j])),
                repr(float(band.upper[j])),
                band.kind,
                band.alpha,
            )
        )
    return rows


def write_band_csv(path, bands, queries: QuerySpec) -> None:
    """Write one or more bands over the same queries to a plottable CSV."""
    if not isinstance(bands, (list, tuple)):
        bands = [bands]
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(BAND_CSV_COLUMNS)
        for band in bands:
            w.writerows(band_csv_rows(band, queries))
