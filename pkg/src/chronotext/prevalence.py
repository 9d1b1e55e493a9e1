"""Maximum-prevalence dating.

Each shingle gets a time-indexed occurrence-probability curve estimated by
kernel-localized binomial likelihood (locally constant or locally linear in
the log-odds).  A document's log-prevalence at year t is the sum of its
shingles' log probabilities; the dating estimate is the argmax year.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from .core import (DateEstimate, KernelSpec, NumericalError,
                   UndatableDocumentError, write_curve_csv)
from .corpus import Document, ShingleIndex, extract_shingles

__all__ = [
    "DEFAULT_KERNEL",
    "PrevalenceModel",
    "PrevalenceCurve",
    "LocalLogisticFit",
    "fit_local_logistic",
    "pi_hat_nw",
    "pi_hat_ll",
    "prevalence_curve",
    "mp_date",
    "complement_diagnostic",
]

#: Heavy-tailed kernel defaults that work well at shingle size 2.
DEFAULT_KERNEL = KernelSpec(shape="student_t", h=12.0, nu=3.0)

#: Below this many in-index shingle occurrences an estimate is flagged
#: low-confidence.
LOW_CONFIDENCE_SLOTS = 10


class PrevalenceModel:
    """Shingle probability curves over a training index.

    degree 0 is the kernel-weighted proportion (closed form; also the
    local-constant solution under a Poisson occurrence model); degree 1
    fits a locally linear log-odds by damped Newton iteration.

    ``floor`` is the probability floor applied inside log-prevalence sums,
    defaulting to half a count over the total training slots; pass 0.0 to
    disable.  With ``count_repeats`` False a document's repeated shingles
    enter the prevalence product once instead of once per occurrence.
    """

    def __init__(self, index: ShingleIndex, kernel: KernelSpec = DEFAULT_KERNEL,
                 degree: int = 0, eval_years: Optional[Sequence[int]] = None,
                 floor: Optional[float] = None, count_repeats: bool = True):
        if degree not in (0, 1):
            raise ValueError("degree must be 0 or 1")
        self.index = index
        self.kernel = kernel
        self.degree = degree
        if eval_years is None:
            lo, hi = index.year_range
            eval_years = np.arange(lo, hi + 1)
        self.eval_years = np.asarray(eval_years, dtype=int)
        self.floor = 1.0 / (2.0 * index.total_slots) if floor is None else float(floor)
        self.count_repeats = count_repeats
        self.train_years = np.array(sorted(index.slots_per_year), dtype=float)
        self.slots = np.array([index.slots_per_year[int(y)] for y in self.train_years],
                              dtype=float)
        self.median_year = index.median_year()
        # kernel weights, evaluation years by training years
        self._W = kernel.weights(self.train_years[None, :] - self.eval_years[:, None].astype(float))
        self._den = self._W @ self.slots
        self._curve_cache: dict = {}
        self._counts_mat = None
        self._shingle_order = None

    def year_counts(self, shingle) -> np.ndarray:
        """Occurrence counts of one shingle aligned with ``train_years``."""
        per_year = self.index.counts.get(tuple(shingle), {})
        return np.array([per_year.get(int(y), 0) for y in self.train_years], dtype=float)

    # -- locally constant --------------------------------------------------

    def nw_at(self, shingle, t: float) -> float:
        w = self.kernel.weights(self.train_years - float(t))
        den = float(w @ self.slots)
        if den <= 0.0 or not np.isfinite(den):
            raise NumericalError(f"no training mass near year {t}")
        return float(w @ self.year_counts(shingle)) / den

    def nw_curve(self, shingle) -> np.ndarray:
        """Kernel-weighted occurrence proportion over the evaluation grid."""
        if (self._den <= 0.0).any():
            bad = self.eval_years[self._den <= 0.0]
            raise NumericalError(f"no training mass near years {bad[:3].tolist()}")
        return (self._W @ self.year_counts(shingle)) / self._den

    # -- locally linear ----------------------------------------------------

    def ll_at(self, shingle, t: float) -> "LocalLogisticFit":
        w = self.kernel.weights(self.train_years - float(t))
        den = float(w @ self.slots)
        if den <= 0.0 or not np.isfinite(den):
            raise NumericalError(f"no training mass near year {t}")
        return fit_local_logistic(self.train_years - float(t), self.year_counts(shingle),
                                  self.slots, w)

    def curve(self, shingle) -> np.ndarray:
        """Probability curve over the evaluation grid at the model's degree."""
        key = tuple(shingle)
        cached = self._curve_cache.get(key)
        if cached is not None:
            return cached
        if self.degree == 0:
            vals = self.nw_curve(shingle)
        else:
            vals = np.array([self.ll_at(shingle, t).prob for t in self.eval_years])
        self._curve_cache[key] = vals
        return vals

    # -- whole-vocabulary counts (complement diagnostic) --------------------

    def _counts_matrix(self):
        if self._counts_mat is None:
            order = list(self.index.counts)
            year_col = {int(y): j for j, y in enumerate(self.train_years)}
            rows, cols, data = [], [], []
            for i, s in enumerate(order):
                for y, c in self.index.counts[s].items():
                    rows.append(i)
                    cols.append(year_col[y])
                    data.append(float(c))
            self._shingle_order = order
            self._counts_mat = sparse.csr_matrix(
                (data, (rows, cols)), shape=(len(order), len(self.train_years)))
        return self._counts_mat, self._shingle_order


@dataclass(frozen=True)
class LocalLogisticFit:
    """Result of one locally linear log-odds fit at a single year."""

    beta0: float
    beta1: float
    converged: bool
    separated: bool = False
    used_nw_fallback: bool = False

    @property
    def prob(self) -> float:
        return 1.0 / (1.0 + math.exp(-self.beta0))


_LOGIT_CLIP = 15.0


def fit_local_logistic(u, n, N, w, max_iter: int = 50, tol: float = 1e-9) -> LocalLogisticFit:
    """Maximize the kernel-weighted binomial log-likelihood with a linear
    log-odds beta0 + beta1*u.

    ``u`` holds year offsets from the evaluation point, ``n`` occurrence
    counts, ``N`` slot totals, ``w`` kernel weights.  Counts may be
    fractional.  Newton iteration with step halving; converged means both
    score components are below ``tol`` in absolute value.  Complete
    separation returns a clipped log-odds; other failures fall back to the
    locally constant estimate.
    """
    u = np.asarray(u, dtype=float)
    n = np.asarray(n, dtype=float)
    N = np.asarray(N, dtype=float)
    w = np.asarray(w, dtype=float)
    live = (w > 0) & (N > 0)
    u, n, N, w = u[live], n[live], N[live], w[live]
    sum_n = float(w @ n)
    sum_N = float(w @ N)
    if sum_N <= 0.0:
        raise NumericalError("no kernel mass for local fit")
    if sum_n <= 0.0:
        return LocalLogisticFit(-_LOGIT_CLIP, 0.0, converged=False, separated=True)
    if sum_n >= sum_N:
        return LocalLogisticFit(_LOGIT_CLIP, 0.0, converged=False, separated=True)
    nw = sum_n / sum_N
    if len(np.unique(u)) < 2:
        return LocalLogisticFit(_logit(nw), 0.0, converged=False, used_nw_fallback=True)

    def loglik(b0, b1):
        eta = np.clip(b0 + b1 * u, -_LOGIT_CLIP, _LOGIT_CLIP)
        return float(w @ (n * eta - N * np.logaddexp(0.0, eta)))

    b0, b1 = _logit(nw), 0.0
    ll = loglik(b0, b1)
    converged = False
    for _ in range(max_iter):
        eta = np.clip(b0 + b1 * u, -_LOGIT_CLIP, _LOGIT_CLIP)
        p = 1.0 / (1.0 + np.exp(-eta))
        resid = w * (n - N * p)
        g0 = float(resid.sum())
        g1 = float(resid @ u)
        if abs(g0) < tol and abs(g1) < tol:
            converged = True
            break
        var = w * N * p * (1.0 - p)
        h00 = float(var.sum())
        h01 = float(var @ u)
        h11 = float(var @ (u * u))
        det = h00 * h11 - h01 * h01
        if det <= 0.0 or not np.isfinite(det):
            break
        step0 = (h11 * g0 - h01 * g1) / det
        step1 = (h00 * g1 - h01 * g0) / det
        scale = 1.0
        improved = False
        for _ in range(30):
            cand = loglik(b0 + scale * step0, b1 + scale * step1)
            if cand >= ll - 1e-15:
                b0, b1 = b0 + scale * step0, b1 + scale * step1
                ll = cand
                improved = True
                break
            scale *= 0.5
        if not improved:
            break
    if not converged:
        return LocalLogisticFit(_logit(nw), 0.0, converged=False, used_nw_fallback=True)
    return LocalLogisticFit(b0, b1, converged=True)


def _logit(p: float) -> float:
    p = min(max(p, 1e-12), 1.0 - 1e-12)
    return math.log(p / (1.0 - p))


# -- public operations ------------------------------------------------------


def pi_hat_nw(shingle, t: int, model: PrevalenceModel) -> float:
    """Kernel-weighted occurrence proportion of one shingle at year t."""
    return model.nw_at(shingle, t)


def pi_hat_ll(shingle, t: int, model: PrevalenceModel) -> float:
    """Locally linear log-odds estimate of one shingle's probability at t."""
    fit = model.ll_at(shingle, t)
    if fit.used_nw_fallback:
        return model.nw_at(shingle, t)
    return fit.prob


@dataclass
class PrevalenceCurve:
    """Log-prevalence of one document over the evaluation years."""

    years: np.ndarray
    log_values: np.ndarray
    argmax_year: int
    diagnostics: dict

    def to_csv(self, path):
        write_curve_csv(path, self.years, self.log_values,
                        labels=("year", "log_prevalence"))


def _argmax_year(years: np.ndarray, values: np.ndarray, anchor: float):
    """Argmax with ties resolved toward the anchor year, then smaller year."""
    top = values.max()
    tied = years[values == top]
    year = min(tied, key=lambda y: (abs(y - anchor), y))
    return int(year), len(tied) > 1


def prevalence_curve(doc: Document, model: PrevalenceModel) -> PrevalenceCurve:
    """Sum of log shingle-probability curves over the document's shingles.

    Repeated shingles count once per occurrence (the multiset convention)
    unless the model says otherwise.  Shingles never seen in training are
    skipped: they would shift every year equally.  Probabilities are floored
    before the log so a single absence cannot veto a year.
    """
    shingles = Counter(extract_shingles(doc, model.index.k))
    known = {s: c for s, c in shingles.items() if s in model.index}
    n_unknown = sum(c for s, c in shingles.items() if s not in known)
    if not known:
        raise UndatableDocumentError(
            f"document {doc.id!r}: no shingles shared with the training index")
    total = np.zeros(len(model.eval_years))
    floor = model.floor
    for s, mult in known.items():
        vals = np.maximum(model.curve(s), floor)
        total += (mult if model.count_repeats else 1) * np.log(vals)
    year, tie = _argmax_year(model.eval_years, total, model.median_year)
    n_known = sum(known.values())
    diag = {"skipped_shingles": n_unknown, "known_shingles": n_known}
    if tie:
        diag["tie"] = True
    if n_known < LOW_CONFIDENCE_SLOTS:
        diag["low_confidence"] = True
    return PrevalenceCurve(years=model.eval_years.copy(), log_values=total,
                           argmax_year=year, diagnostics=diag)


def mp_date(doc: Document, model: PrevalenceModel) -> DateEstimate:
    """Date a document at the maximum of its estimated prevalence curve."""
    curve = prevalence_curve(doc, model)
    diag = dict(curve.diagnostics)
    diag["curve"] = (curve.years, curve.log_values)
    return DateEstimate(year_hat=float(curve.argmax_year), method="mp",
                        diagnostics=diag)


def complement_diagnostic(doc: Document, model: PrevalenceModel,
                          full_shingle_set=None):
    """Sum of log(1 - pi_hat) over training shingles absent from the document.

    Measures how much the shingles a document does NOT contain could move
    its dating; on corpora where every single-shingle probability is small
    this stays near -1 across all years and carries no date signal.
    Returns (years, values).
    """
    counts_mat, order = model._counts_matrix()
    if full_shingle_set is not None:
        keep = set(map(tuple, full_shingle_set))
        rows = [i for i, s in enumerate(order) if s in keep]
        counts_mat = counts_mat[rows]
        order = [order[i] for i in rows]
    doc_shingles = set(extract_shingles(doc, model.index.k))
    in_doc = np.array([s in doc_shingles for s in order], dtype=bool)
    values = np.empty(len(model.eval_years))
    for i, _t in enumerate(model.eval_years):
        w = model._W[i]
        den = model._den[i]
        if den <= 0.0:
            raise NumericalError(f"no training mass near year {_t}")
        pis = counts_mat @ w / den
        with np.errstate(divide="ignore"):
            logs = np.log1p(-pis)
        values[i] = float(logs[~in_doc].sum())
    return model.eval_years.copy(), values
