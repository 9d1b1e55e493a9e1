"""Quantile-regression dating: fit a kernel-smoothed lower-quantile curve
to the (training date, distance-to-target) scatter and date the document
at the curve's minimum.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .core import DateEstimate, KernelSpec, UndatableDocumentError
from .corpus import Document
from .metrics import DistanceSpec, pairwise_distances

__all__ = [
    "QrConfig",
    "weighted_quantile",
    "quantile_curve",
    "qr_curve",
    "qr_date",
    "qr_tune",
]


@dataclass(frozen=True)
class QrConfig:
    """Quantile and smoothing settings.

    ``q`` is the lower quantile tracked, ``h`` the time bandwidth in years.
    Years whose effective sample size (sum w)^2 / sum w^2 falls below
    ``min_mass`` are excluded from the curve.  With ``variable_bandwidth``
    the bandwidth widens in sparse date regions to h * max(1, m0/ess).
    """

    q: float = 0.1
    h: float = 30.0
    distance: DistanceSpec = DistanceSpec()
    eval_years: Optional[tuple[int, ...]] = None
    min_mass: float = 20.0
    variable_bandwidth: bool = False
    m0: float = 50.0
    kernel: KernelSpec = KernelSpec(shape="gaussian", h=1.0)

    def __post_init__(self):
        if not 0.0 < self.q < 1.0:
            raise ValueError("q must lie strictly between 0 and 1")
        if not self.h > 0:
            raise ValueError("h must be positive")


def weighted_quantile(values, weights, q: float) -> float:
    """Smallest value whose cumulative weight reaches q of the total.

    This left-continuous weighted quantile is the minimizer of the weighted
    check (pinball) loss, taking the smallest minimizer on discrete data.
    """
    values = np.asarray(values, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if values.shape != weights.shape or values.size == 0:
        raise ValueError("values and weights must be equal-length and nonempty")
    if (weights < 0).any():
        raise ValueError("weights must be nonnegative")
    total = weights.sum()
    if total <= 0:
        raise ValueError("total weight must be positive")
    order = np.argsort(values, kind="stable")
    cum = np.cumsum(weights[order])
    idx = int(np.searchsorted(cum, q * total, side="left"))
    idx = min(idx, len(cum) - 1)
    return float(values[order][idx])


def _time_weights(dates: np.ndarray, years: np.ndarray, config: QrConfig):
    """(n_years, n_train) kernel weights, with optional variable bandwidth.

    Returns (weights, ess) where ess is the per-year effective sample size
    under the final bandwidths.
    """
    base = replace(config.kernel, h=config.h)
    u = dates[None, :] - years[:, None].astype(float)
    w = base.weights(u)
    if config.variable_bandwidth:
        sums = w.sum(axis=1)
        sq = (w * w).sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            ess0 = np.where(sq > 0, sums * sums / sq, 0.0)
        factor = np.maximum(1.0, config.m0 / np.maximum(ess0, 1e-300))
        for i in np.flatnonzero(factor > 1.0):
            w[i] = replace(config.kernel, h=config.h * factor[i]).weights(u[i])
    sums = w.sum(axis=1)
    sq = (w * w).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ess = np.where(sq > 0, sums * sums / sq, 0.0)
    return w, ess


def quantile_curve(dates, dists, config: QrConfig):
    """Fitted weighted-quantile curve over the evaluation years.

    ``dates`` are training document dates, ``dists`` their distances to the
    target.  Years failing the mass threshold are dropped.  Returns
    (years, fitted) arrays.
    """
    dates = np.asarray(dates, dtype=float)
    dists = np.asarray(dists, dtype=float)
    if config.eval_years is not None:
        years = np.asarray(config.eval_years, dtype=int)
    else:
        years = np.arange(int(dates.min()), int(dates.max()) + 1)
    w, ess = _time_weights(dates, years, config)
    keep = ess >= config.min_mass
    if not keep.any():
        raise UndatableDocumentError("no evaluation year passes the mass threshold")
    years = years[keep]
    w = w[keep]
    order = np.argsort(dists, kind="stable")
    d_sorted = dists[order]
    cum = np.cumsum(w[:, order], axis=1)
    total = cum[:, -1]
    target = config.q * total
    idx = (cum >= target[:, None]).argmax(axis=1)
    return years, d_sorted[idx]


def qr_curve(target: Document, train: Sequence[Document], config: QrConfig):
    """Quantile curve of one target against a dated training set."""
    dates = np.array([d.year for d in train], dtype=float)
    dists = pairwise_distances([target], train, config.distance)[0]
    return quantile_curve(dates, dists, config)


def _min_year(years: np.ndarray, values: np.ndarray, anchor: float):
    bottom = values.min()
    tied = years[values == bottom]
    year = min(tied, key=lambda y: (abs(y - anchor), y))
    return int(year), len(tied) > 1


def qr_date(target: Document, train: Sequence[Document], config: QrConfig) -> DateEstimate:
    """Date at the minimum of the quantile curve.

    Ties resolve toward the median training date.  Requires the curve to be
    defined on at least 3 years.
    """
    years, values = qr_curve(target, train, config)
    if len(years) < 3:
        raise UndatableDocumentError("quantile curve defined on fewer than 3 years")
    anchor = float(np.median([d.year for d in train]))
    year, tie = _min_year(years, values, anchor)
    diag = {"curve": (years, values)}
    if tie:
        diag["tie"] = True
    return DateEstimate(year_hat=float(year), method="qr", diagnostics=diag)


def qr_tune(validation: Sequence[Document], train: Sequence[Document],
            q_grid: Sequence[float], h_grid: Sequence[float],
            config: QrConfig = QrConfig()) -> QrConfig:
    """Pick (q, h) minimizing mean absolute validation error.

    Ties resolve toward larger h, then larger q.  A configuration that
    fails to date any validation document is disqualified.
    """
    if not len(q_grid) or not len(h_grid):
        raise ValueError("q and h grids must be nonempty")
    dates = np.array([d.year for d in train], dtype=float)
    anchor = float(np.median(dates))
    dist_rows = pairwise_distances(list(validation), train, config.distance)
    truths = np.array([d.year for d in validation], dtype=float)
    best = None
    for h in sorted(h_grid):
        for q in sorted(q_grid):
            cand = replace(config, q=float(q), h=float(h))
            errors = []
            try:
                for row, truth in zip(dist_rows, truths):
                    years, values = quantile_curve(dates, row, cand)
                    if len(years) < 3:
                        raise UndatableDocumentError("curve too short")
                    year, _ = _min_year(years, values, anchor)
                    errors.append(abs(year - truth))
            except UndatableDocumentError:
                continue
            mae = float(np.mean(errors))
            if best is None or mae <= best[0]:  # <= so larger h then q win ties
                best = (mae, cand)
    if best is None:
        raise UndatableDocumentError("no (q, h) configuration could date the validation set")
    return best[1]
