"""Similarity and distance measures between documents over a fixed shingle
size: an exponent-weighted cosine family, a metric-valued variant whose
complement satisfies the triangle inequality, and set-based resemblance
over distinct shingles.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np
from scipy import sparse

from .corpus import Document, extract_shingles

__all__ = [
    "CountVector",
    "DistanceSpec",
    "sim_gamma",
    "sim_alpha",
    "dist_alpha",
    "broder_resemblance",
    "broder_distance",
    "distance",
    "pairwise_distances",
]

# Above this magnitude, powered counts are accumulated in log space to
# avoid overflow for large exponents.
_LOG_SPACE_CUTOFF = 1e3


@dataclass(frozen=True)
class CountVector:
    """Shingle occurrence vector of one document.

    mode "raw" holds nonnegative integer counts, "normalized" frequencies
    summing to 1, "incidence" 0/1 presence indicators.
    """

    entries: Mapping[tuple, float]
    mode: str = "raw"

    def __post_init__(self):
        if self.mode not in ("raw", "normalized", "incidence"):
            raise ValueError(f"unknown vector mode {self.mode!r}")
        vals = self.entries.values()
        if any(v < 0 for v in vals):
            raise ValueError("counts must be nonnegative")
        if self.mode == "incidence" and any(v not in (0, 1) for v in vals):
            raise ValueError("incidence entries must be 0 or 1")
        if self.mode == "normalized" and vals and abs(sum(vals) - 1.0) > 1e-9:
            raise ValueError("normalized entries must sum to 1")

    @classmethod
    def from_document(cls, doc: Document, k: int, mode: str = "raw") -> "CountVector":
        counts: dict = {}
        for s in extract_shingles(doc, k):
            counts[s] = counts.get(s, 0) + 1
        if mode == "normalized":
            total = sum(counts.values())
            counts = {s: c / total for s, c in counts.items()}
        elif mode == "incidence":
            counts = {s: 1 for s in counts}
        return cls(entries=counts, mode=mode)


@dataclass(frozen=True)
class DistanceSpec:
    """Which distance to use between two documents.

    family "sim_gamma" is 1 - sim_gamma (not a metric in general),
    "sim_alpha" is 1 - sim_alpha (a proper metric), "broder" is one minus
    the distinct-shingle resemblance.  ``exponent`` is the gamma or alpha
    power (ignored for broder).
    """

    family: str = "sim_alpha"
    exponent: float = 1.0
    k: int = 1
    vector_mode: str = "raw"

    def __post_init__(self):
        if self.family not in ("sim_gamma", "sim_alpha", "broder"):
            raise ValueError(f"unknown distance family {self.family!r}")
        if not self.exponent > 0:
            raise ValueError("exponent must be positive")
        if self.k < 1:
            raise ValueError("k must be >= 1")


def _as_entries(vec) -> Mapping:
    return vec.entries if isinstance(vec, CountVector) else vec


def sim_gamma(p, q, gamma: float = 1.0) -> float:
    """Exponent-weighted cosine similarity in [0, 1].

    sum p_i^g q_i^g / (sqrt(sum p_i^2g) sqrt(sum q_i^2g)) over the union
    vocabulary of the two vectors.  gamma=1 on raw counts is plain cosine
    similarity.  Raises ValueError when either vector is all zero.
    """
    p, q = _as_entries(p), _as_entries(q)
    big = max(max(p.values(), default=0.0), max(q.values(), default=0.0))
    if big > _LOG_SPACE_CUTOFF:
        return _sim_gamma_log(p, q, gamma)
    num = 0.0
    pp = 0.0
    qq = 0.0
    for key, pv in p.items():
        if pv:
            pg = pv**gamma
            pp += pg * pg
            qv = q.get(key, 0.0)
            if qv:
                num += pg * qv**gamma
    for qv in q.values():
        if qv:
            qg = qv**gamma
            qq += qg * qg
    if pp == 0.0 or qq == 0.0:
        raise ValueError("similarity undefined for an all-zero vector")
    return num / (math.sqrt(pp) * math.sqrt(qq))


def _sim_gamma_log(p, q, gamma):
    from scipy.special import logsumexp

    lp = {k: math.log(v) for k, v in p.items() if v}
    lq = {k: math.log(v) for k, v in q.items() if v}
    if not lp or not lq:
        raise ValueError("similarity undefined for an all-zero vector")
    common = [gamma * (lp[k] + lq[k]) for k in lp.keys() & lq.keys()]
    log_num = logsumexp(common) if common else -math.inf
    log_pp = logsumexp([2 * gamma * v for v in lp.values()])
    log_qq = logsumexp([2 * gamma * v for v in lq.values()])
    return math.exp(log_num - 0.5 * log_pp - 0.5 * log_qq)


def sim_alpha(p, q, alpha: float = 1.0) -> float:
    """Similarity in [0, 1] whose complement is a proper metric.

    sum p_i^a q_i^a / sum (p_i^2a + q_i^2a - p_i^a q_i^a) over the union
    vocabulary.  Raises ValueError when the denominator is zero (both
    vectors all zero).
    """
    p, q = _as_entries(p), _as_entries(q)
    big = max(max(p.values(), default=0.0), max(q.values(), default=0.0))
    if big > _LOG_SPACE_CUTOFF:
        return _sim_alpha_log(p, q, alpha)
    num = 0.0
    den = 0.0
    for key in p.keys() | q.keys():
        pa = p.get(key, 0.0) ** alpha
        qa = q.get(key, 0.0) ** alpha
        num += pa * qa
        den += pa * pa + qa * qa - pa * qa
    if den == 0.0:
        raise ValueError("similarity undefined: zero denominator")
    return num / den


def _sim_alpha_log(p, q, alpha):
    from scipy.special import logsumexp

    keys = [k for k in p.keys() | q.keys() if p.get(k, 0.0) or q.get(k, 0.0)]
    if not keys:
        raise ValueError("similarity undefined: zero denominator")
    la = np.array([alpha * math.log(p[k]) if p.get(k, 0.0) else -math.inf for k in keys])
    lb = np.array([alpha * math.log(q[k]) if q.get(k, 0.0) else -math.inf for k in keys])
    # per-key term p^2a + q^2a - p^a q^a is always positive
    stacked = np.concatenate([2 * la, 2 * lb, la + lb])
    signs = np.concatenate([np.ones(len(keys)), np.ones(len(keys)), -np.ones(len(keys))])
    log_den, _ = logsumexp(stacked, b=signs, return_sign=True)
    common = la + lb
    finite = common[np.isfinite(common)]
    if finite.size == 0:
        return 0.0
    return math.exp(logsumexp(finite) - log_den)


def dist_alpha(p, q, alpha: float = 1.0) -> float:
    """1 - sim_alpha: a proper metric on count vectors."""
    return 1.0 - sim_alpha(p, q, alpha)


def broder_resemblance(d1: Document, d2: Document, k: int) -> float:
    """Jaccard resemblance of the two documents' distinct k-shingle sets."""
    s1 = set(extract_shingles(d1, k))
    s2 = set(extract_shingles(d2, k))
    if not s1 or not s2:
        raise ValueError("resemblance undefined for a document with no shingles")
    return len(s1 & s2) / len(s1 | s2)


def broder_distance(d1: Document, d2: Document, k: int) -> float:
    """1 - resemblance: a set-based distance satisfying the triangle inequality."""
    return 1.0 - broder_resemblance(d1, d2, k)


def distance(d1: Document, d2: Document, spec: DistanceSpec) -> float:
    """Distance between two documents under the given spec."""
    if spec.family == "broder":
        return broder_distance(d1, d2, spec.k)
    p = CountVector.from_document(d1, spec.k, spec.vector_mode)
    q = CountVector.from_document(d2, spec.k, spec.vector_mode)
    if spec.family == "sim_alpha":
        return 1.0 - sim_alpha(p, q, spec.exponent)
    return 1.0 - sim_gamma(p, q, spec.exponent)


# ---------------------------------------------------------------------------
# Vectorized batch path.  Same results as the scalar functions, computed via
# sparse count matrices; used by the daters where per-pair calls would be
# too slow.


class ShingleMatrix:
    """Sparse documents-by-shingles count matrix for one (k, mode) setting."""

    def __init__(self, docs: Sequence[Document], k: int, mode: str = "raw", vocab=None):
        self.k = k
        self.mode = mode
        self.docs = list(docs)
        self.vocab = {} if vocab is None else dict(vocab)
        indptr = [0]
        indices = []
        data = []
        grow = vocab is None
        for doc in self.docs:
            counts: dict = {}
            for s in extract_shingles(doc, k):
                counts[s] = counts.get(s, 0) + 1
            if mode == "normalized" and counts:
                total = sum(counts.values())
                counts = {s: c / total for s, c in counts.items()}
            elif mode == "incidence":
                counts = {s: 1 for s in counts}
            for s, c in counts.items():
                col = self.vocab.get(s)
                if col is None:
                    if not grow:
                        continue  # unseen shingle: zero column in a fixed vocab
                    col = self.vocab[s] = len(self.vocab)
                indices.append(col)
                data.append(c)
            indptr.append(len(indices))
        self.matrix = sparse.csr_matrix(
            (np.asarray(data, dtype=float), indices, indptr),
            shape=(len(self.docs), max(len(self.vocab), 1)),
        )

    def aligned(self, docs: Sequence[Document]) -> "ShingleMatrix":
        """Matrix for other documents over this matrix's vocabulary."""
        return ShingleMatrix(docs, self.k, self.mode, vocab=self.vocab)


def _pairwise_from_matrices(a: sparse.csr_matrix, b: sparse.csr_matrix, spec: DistanceSpec):
    nz_a = np.diff(a.indptr)
    nz_b = np.diff(b.indptr)
    if (nz_a == 0).any() or (nz_b == 0).any():
        raise ValueError(f"document with no k={spec.k} shingles; distance undefined")
    if spec.family == "broder":
        a = a.copy()
        b = b.copy()
        a.data[:] = 1.0
        b.data[:] = 1.0
        inter = np.asarray((a @ b.T).todense())
        union = nz_a[:, None] + nz_b[None, :] - inter
        return 1.0 - inter / union
    e = spec.exponent
    ap = a.power(e) if e != 1.0 else a
    bp = b.power(e) if e != 1.0 else b
    dots = np.asarray((ap @ bp.T).todense())
    sq_a = np.asarray(ap.multiply(ap).sum(axis=1)).ravel()
    sq_b = np.asarray(bp.multiply(bp).sum(axis=1)).ravel()
    if spec.family == "sim_alpha":
        return 1.0 - dots / (sq_a[:, None] + sq_b[None, :] - dots)
    return 1.0 - dots / np.sqrt(np.outer(sq_a, sq_b))


def pairwise_distances(targets: Sequence[Document], train: Sequence[Document],
                       spec: DistanceSpec) -> np.ndarray:
    """Distance matrix (len(targets) x len(train)) under ``spec``.

    Equivalent to calling distance() per pair, but computed with sparse
    linear algebra.  Note the vector-count families evaluate over each
    pair's union vocabulary, which zero columns do not disturb.
    """
    base = ShingleMatrix(train, spec.k, spec.vector_mode)
    # union vocabulary so target-only shingles still count in the norms
    tm = ShingleMatrix(targets, spec.k, spec.vector_mode,
                       vocab=_extend_vocab(base.vocab, targets, spec.k))
    train_m = sparse.csr_matrix((base.matrix.data, base.matrix.indices, base.matrix.indptr),
                                shape=(len(train), tm.matrix.shape[1]))
    return _pairwise_from_matrices(tm.matrix, train_m, spec)


def _extend_vocab(vocab: dict, docs: Sequence[Document], k: int) -> dict:
    ext = dict(vocab)
    for doc in docs:
        for s in extract_shingles(doc, k):
            if s not in ext:
                ext[s] = len(ext)
    return ext
