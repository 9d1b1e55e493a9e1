"""Matching-pattern dating (total-multiplier scoring).

Every substring of the target that also occurs in the training corpus is a
matching pattern.  Each pattern is scored by the product of three factors
of its corpus statistics (length, lifetime, currency); per-year score sums
normalized by training-document counts give a year curve whose peak region
is refined iteratively to a point estimate.

Pattern lookup runs against a generalized suffix automaton over the
training token streams, so scanning a target of m tokens costs O(m^2 +
matches) rather than O(m^2 * corpus).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .core import DateEstimate, UndatableDocumentError
from .corpus import Document

__all__ = [
    "MatchingPattern",
    "MtConfig",
    "MtIndex",
    "find_matching_patterns",
    "mt_value",
    "gmt_curve",
    "mt_date",
]


@dataclass(frozen=True)
class MatchingPattern:
    """A target substring found in training, with its corpus statistics.

    lifetime is last_year - first_year; currency is lifetime divided by the
    number of distinct years of occurrence (0 for single-year patterns, and
    higher for patterns occurring sparsely across a long span).
    year_doc_counts maps year -> number of distinct training documents of
    that year containing the pattern.
    """

    words: tuple[str, ...]
    length: int
    first_year: int
    last_year: int
    distinct_years: int
    lifetime: int
    currency: float
    year_doc_counts: dict = field(compare=False)

    @classmethod
    def from_year_counts(cls, words, year_doc_counts: dict) -> "MatchingPattern":
        years = sorted(year_doc_counts)
        first, last = years[0], years[-1]
        lifetime = last - first
        distinct = len(years)
        return cls(words=tuple(words), length=len(words), first_year=first,
                   last_year=last, distinct_years=distinct, lifetime=lifetime,
                   currency=lifetime / distinct, year_doc_counts=dict(year_doc_counts))


def _m1_length(length: float) -> float:
    return float(length)


def _m2_lifetime(lifetime: float) -> float:
    return 1.0 / (1.0 + lifetime / 10.0)


def _m3_currency(currency: float) -> float:
    return 1.0 / (1.0 + currency)


@dataclass(frozen=True)
class MtConfig:
    """Scoring and refinement settings.

    m1 must be nondecreasing (longer patterns carry more evidence), m2 and
    m3 nonincreasing (long-lived and sparse patterns carry less).  The
    defaults are the simplest members of those families; all three are
    pluggable.  Patterns scoring below ``threshold`` are dropped before the
    per-year summation.
    """

    m1: Callable[[float], float] = _m1_length
    m2: Callable[[float], float] = _m2_lifetime
    m3: Callable[[float], float] = _m3_currency
    threshold: float = 0.0
    initial_window: int = 40
    shrink_factor: float = 0.5
    expand_margin: int = 10
    max_rounds: int = 6

    def __post_init__(self):
        if self.initial_window < 1:
            raise ValueError("initial_window must be >= 1")
        if not 0.0 < self.shrink_factor < 1.0:
            raise ValueError("shrink_factor must lie in (0, 1)")
        if self.expand_margin < 0 or self.max_rounds < 1:
            raise ValueError("bad refinement settings")


def mt_value(pattern: MatchingPattern, config: MtConfig = MtConfig()) -> float:
    """Product of the three factor functions for one pattern."""
    return (config.m1(pattern.length) * config.m2(pattern.lifetime)
            * config.m3(pattern.currency))


# ---------------------------------------------------------------------------
# Generalized suffix automaton over token sequences.


class _Sam:
    """States stored in parallel lists; transitions are per-state dicts."""

    __slots__ = ("nxt", "link", "length")

    def __init__(self):
        self.nxt = [{}]
        self.link = [-1]
        self.length = [0]

    def _new_state(self, length, link, nxt):
        self.nxt.append(nxt)
        self.link.append(link)
        self.length.append(length)
        return len(self.nxt) - 1

    def extend(self, last: int, token) -> int:
        nxt, link, length = self.nxt, self.link, self.length
        if token in nxt[last]:
            q = nxt[last][token]
            if length[q] == length[last] + 1:
                return q
            clone = self._new_state(length[last] + 1, link[q], dict(nxt[q]))
            p = last
            while p != -1 and nxt[p].get(token) == q:
                nxt[p][token] = clone
                p = link[p]
            link[q] = clone
            return clone
        cur = self._new_state(length[last] + 1, 0, {})
        p = last
        while p != -1 and token not in nxt[p]:
            nxt[p][token] = cur
            p = link[p]
        if p == -1:
            link[cur] = 0
            return cur
        q = nxt[p][token]
        if length[p] + 1 == length[q]:
            link[cur] = q
            return cur
        clone = self._new_state(length[p] + 1, link[q], dict(nxt[q]))
        while p != -1 and nxt[p].get(token) == q:
            nxt[p][token] = clone
            p = link[p]
        link[q] = clone
        link[cur] = clone
        return cur


class MtIndex:
    """Substring index over a dated training corpus.

    Immutable after construction; per-state year/document occurrence counts
    are aggregated once at build time.
    """

    def __init__(self, train: Sequence[Document]):
        if not train:
            raise ValueError("empty training set")
        if any(d.year is None for d in train):
            raise ValueError("all training documents must be dated")
        self.n_docs_per_year: dict[int, int] = {}
        for doc in train:
            self.n_docs_per_year[doc.year] = self.n_docs_per_year.get(doc.year, 0) + 1
        self.years = sorted(self.n_docs_per_year)
        sam = self._sam = _Sam()
        for doc in train:
            last = 0
            for tok in doc.tokens:
                last = sam.extend(last, tok)
        # year -> doc counts per state, deduplicated with per-document stamps
        n_states = len(sam.nxt)
        stamp = [-1] * n_states
        self._year_docs: list[Optional[dict]] = [None] * n_states
        for doc_i, doc in enumerate(train):
            year = doc.year
            state = 0
            for tok in doc.tokens:
                state = sam.nxt[state][tok]
                v = state
                while v > 0 and stamp[v] != doc_i:
                    stamp[v] = doc_i
                    yd = self._year_docs[v]
                    if yd is None:
                        yd = self._year_docs[v] = {}
                    yd[year] = yd.get(year, 0) + 1
                    v = sam.link[v]

    def scan(self, target: Document):
        """Yield (state, length, start) for every distinct matching
        substring of the target, longest matches walked from each start."""
        nxt = self._sam.nxt
        tokens = target.tokens
        seen = set()
        for start in range(len(tokens)):
            state = 0
            for end in range(start, len(tokens)):
                state = nxt[state].get(tokens[end])
                if state is None:
                    break
                key = (state, end - start + 1)
                if key not in seen:
                    seen.add(key)
                    yield state, end - start + 1, start

    def year_docs(self, state: int) -> dict:
        return self._year_docs[state]


def find_matching_patterns(target: Document, index: MtIndex) -> list[MatchingPattern]:
    """Every substring of the target occurring in at least one training
    document, with corpus statistics.  Sorted by (length, words)."""
    patterns = [
        MatchingPattern.from_year_counts(
            target.tokens[start : start + length], index.year_docs(state))
        for state, length, start in index.scan(target)
    ]
    patterns.sort(key=lambda p: (p.length, p.words))
    return patterns


def gmt_curve(target: Document, index: MtIndex, config: MtConfig = MtConfig(),
              patterns: Optional[Sequence[MatchingPattern]] = None):
    """Per-year pattern score sums, normalized by training-document counts.

    Each pattern at or above the score threshold contributes its value once
    per training document (of that year) containing it; the year total is
    divided by the number of training documents in that year.  Years with
    no training documents are undefined and absent from the result.
    Returns (years, values).
    """
    if patterns is None:
        patterns = find_matching_patterns(target, index)
    sums = {y: 0.0 for y in index.years}
    any_kept = False
    for p in patterns:
        value = mt_value(p, config)
        if value < config.threshold:
            continue
        any_kept = True
        for y, ndocs in p.year_doc_counts.items():
            sums[y] += value * ndocs
    if not any_kept:
        raise UndatableDocumentError(
            f"document {target.id!r}: no matching pattern at or above the threshold")
    years = np.array(index.years, dtype=int)
    values = np.array([sums[y] / index.n_docs_per_year[y] for y in index.years])
    return years, values


def _best_window(years, values, lo, hi, width):
    """Highest-average window of the given width over [lo, hi].

    Only years carrying a defined value count toward the average; windows
    with none are skipped.  Ties go to the earliest window.
    """
    width = min(width, hi - lo + 1)
    best = None
    for a in range(lo, hi - width + 2):
        b = a + width - 1
        mask = (years >= a) & (years <= b)
        if not mask.any():
            continue
        avg = float(values[mask].mean())
        if best is None or avg > best[0]:
            best = (avg, a, b)
    return best


def mt_date(target: Document, index: MtIndex, config: MtConfig = MtConfig()) -> DateEstimate:
    """Iteratively refine the peak region of the year curve to a point.

    Each round averages the curve over sliding windows of the current
    width, keeps the best window, expands it by the margin, and shrinks the
    width; the final window's midpoint is the estimate.
    """
    years, values = gmt_curve(target, index, config)
    lo, hi = int(years.min()), int(years.max())
    width = config.initial_window
    window = (lo, hi)
    for _ in range(config.max_rounds):
        found = _best_window(years, values, lo, hi, width)
        if found is None:
            break
        _, a, b = found
        window = (a, b)
        if width <= 1:
            break
        lo = max(int(years.min()), a - config.expand_margin)
        hi = min(int(years.max()), b + config.expand_margin)
        width = max(1, int(width * config.shrink_factor + 0.5))
    year_hat = (window[0] + window[1]) / 2.0
    return DateEstimate(year_hat=year_hat, method="mt",
                        diagnostics={"curve": (years, values), "window": window})
