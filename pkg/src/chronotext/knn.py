"""Nearest-neighbor dating: estimate a document's date as a kernel-weighted
average of training dates, with per-document bandwidths chosen by local
leave-one-out cross-validation over the target's neighborhood.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
from scipy import sparse

from .core import DateEstimate, KernelSpec, UndatableDocumentError
from .corpus import Document
from .metrics import DistanceSpec, ShingleMatrix, _pairwise_from_matrices

__all__ = [
    "KnnConfig",
    "KnnDater",
    "kernel_weight",
    "neighborhood",
    "knn_estimate",
    "select_bandwidths",
    "knn_stderr",
    "default_bandwidth_grid",
]


def default_bandwidth_grid(n: int = 12, lo: float = 0.05, hi: float = 1.0) -> tuple:
    """Log-spaced bandwidth grid; distances live in [0, 1]."""
    return tuple(np.geomspace(lo, hi, n))


#: Neighborhood sizes swept when none is pinned, capped at the training size.
DEFAULT_M_VALUES = (5, 10, 20, 100, 500, 1000)


@dataclass(frozen=True)
class KnnConfig:
    """Configuration for the nearest-neighbor dater.

    One kernel per distance measure; kernel bandwidths are placeholders
    overridden by the selected values.  With ``m`` unset, the neighborhood
    size is swept over ``m_values`` and chosen by the same cross-validation
    criterion as the bandwidths.
    """

    distances: tuple[DistanceSpec, ...] = (DistanceSpec(),)
    kernels: Optional[tuple[KernelSpec, ...]] = None
    m: Optional[int] = None
    m_values: tuple[int, ...] = DEFAULT_M_VALUES
    bandwidth_grids: Optional[tuple[tuple[float, ...], ...]] = None

    def __post_init__(self):
        kernels = self.kernels
        if kernels is None:
            kernels = tuple(KernelSpec() for _ in self.distances)
            object.__setattr__(self, "kernels", kernels)
        if len(kernels) != len(self.distances) or not self.distances:
            raise ValueError("need one kernel per distance, at least one of each")
        if self.m is not None and self.m < 2:
            raise ValueError("m must be >= 2")
        grids = self.bandwidth_grids
        if grids is None:
            grids = tuple(default_bandwidth_grid() for _ in self.distances)
            object.__setattr__(self, "bandwidth_grids", grids)
        if len(grids) != len(self.distances):
            raise ValueError("need one bandwidth grid per distance")
        if any(len(g) == 0 for g in grids):
            raise ValueError("bandwidth grid must be nonempty")

    @property
    def r(self) -> int:
        return len(self.distances)


def kernel_weight(dists: Sequence[float], kernels: Sequence[KernelSpec]) -> float:
    """Product kernel weight over r distances; constants omitted."""
    dists = np.asarray(dists, dtype=float)
    if (dists < 0).any():
        raise ValueError("distances must be nonnegative")
    log_w = sum(k.log_weights(d) for k, d in zip(kernels, dists))
    return float(np.exp(log_w))


def neighborhood(dist_rows: np.ndarray, m: int, id_rank: np.ndarray) -> np.ndarray:
    """Union over distances of the m nearest training indices.

    dist_rows has shape (r, n_train).  Distance ties break in ascending
    document id order via ``id_rank``.  Returns sorted unique indices; size
    is between m and r*m.
    """
    r, n = dist_rows.shape
    m = min(m, n)
    picked = set()
    for k in range(r):
        order = np.lexsort((id_rank, dist_rows[k]))
        picked.update(order[:m].tolist())
    return np.array(sorted(picked), dtype=int)


def _log_weight_rows(dist_rows: np.ndarray, kernels: Sequence[KernelSpec],
                     bandwidths: Sequence[float]) -> np.ndarray:
    """Sum over distances of log K_h(d); dist_rows (r, ...) -> (...)."""
    out = None
    for k, (spec, h) in enumerate(zip(kernels, bandwidths)):
        lw = replace(spec, h=float(h)).log_weights(dist_rows[k])
        out = lw if out is None else out + lw
    return out


def _weighted_mean_years(log_w: np.ndarray, years: np.ndarray, nearest: np.ndarray):
    """Weighted mean with an underflow guard.

    Weights are exponentiated after subtracting the row max; if every log
    weight is -inf the estimate falls back to a uniform average over the
    ``nearest`` indices and the fallback is reported.
    """
    top = log_w.max()
    if not np.isfinite(top):
        return float(years[nearest].mean()), True
    w = np.exp(log_w - top)
    return float(np.dot(w, years) / w.sum()), False


class KnnDater:
    """Dates documents against a fixed training corpus.

    Builds one sparse shingle-count matrix per distance measure and caches
    training-to-training distance rows, which leave-one-out cross-validation
    reuses across targets.
    """

    def __init__(self, train: Sequence[Document], config: KnnConfig = KnnConfig()):
        self.config = config
        max_k = max(s.k for s in config.distances)
        self.train = [d for d in train if len(d.tokens) >= max_k]
        self.dropped_ids = [d.id for d in train if len(d.tokens) < max_k]
        if not self.train:
            raise ValueError("empty training set")
        if any(d.year is None for d in self.train):
            raise ValueError("all training documents must be dated")
        self.years = np.array([d.year for d in self.train], dtype=float)
        ids = [d.id for d in self.train]
        self.id_rank = np.argsort(np.argsort(np.array(ids, dtype=object)))
        self._matrices = [ShingleMatrix(self.train, s.k, s.vector_mode)
                          for s in config.distances]
        # row cache: per distance, training index -> distances to all of train
        self._row_cache: list[dict[int, np.ndarray]] = [{} for _ in config.distances]

    # -- distances ---------------------------------------------------------

    def distances_to_train(self, doc: Document) -> np.ndarray:
        """(r, n_train) distances from one target document."""
        rows = []
        for spec, mat in zip(self.config.distances, self._matrices):
            target = ShingleMatrix([doc], spec.k, spec.vector_mode,
                                   vocab=_extended(mat.vocab, doc, spec.k))
            wide = sparse.csr_matrix(
                (mat.matrix.data, mat.matrix.indices, mat.matrix.indptr),
                shape=(len(self.train), target.matrix.shape[1]))
            try:
                rows.append(_pairwise_from_matrices(target.matrix, wide, spec)[0])
            except ValueError as exc:
                raise UndatableDocumentError(str(exc)) from exc
        return np.array(rows)

    def _train_rows(self, spec_idx: int, js: np.ndarray) -> np.ndarray:
        """(len(js), n_train) training-to-training distance rows, cached."""
        cache = self._row_cache[spec_idx]
        missing = [j for j in js.tolist() if j not in cache]
        if missing:
            mat = self._matrices[spec_idx]
            block = _pairwise_from_matrices(mat.matrix[missing], mat.matrix,
                                            self.config.distances[spec_idx])
            for row, j in zip(block, missing):
                cache[j] = row
        return np.array([cache[j] for j in js.tolist()])

    def _neighbor_rows(self, neighbors: np.ndarray) -> np.ndarray:
        """(r, |K|, n_train) distances from each neighbor to all of train."""
        return np.array([self._train_rows(k, neighbors) for k in range(self.config.r)])

    # -- cross-validation --------------------------------------------------

    def _loo_estimates(self, neighbor_rows, neighbors, bandwidths):
        """Leave-one-out estimates for each neighbor at given bandwidths."""
        log_w = _log_weight_rows(neighbor_rows, self.config.kernels, bandwidths)
        log_w[np.arange(len(neighbors)), neighbors] = -np.inf  # exclude self
        top = log_w.max(axis=1, keepdims=True)
        finite = np.isfinite(top[:, 0])
        est = np.empty(len(neighbors))
        if finite.any():
            w = np.exp(log_w[finite] - top[finite])
            est[finite] = (w @ self.years) / w.sum(axis=1)
        for i in np.flatnonzero(~finite):  # total underflow: uniform fallback
            est[i] = self.years[_drop(neighbors, i)].mean()
        return est

    def select_bandwidths(self, neighbors: np.ndarray, neighbor_rows: np.ndarray):
        """Grid-search bandwidths minimizing the local CV criterion.

        CV(h) averages squared leave-one-out errors over the neighborhood;
        ties resolve toward larger bandwidths.
        """
        if len(neighbors) < 2:
            raise ValueError("need at least 2 neighbors for cross-validation")
        t_true = self.years[neighbors]
        best = None
        for combo in itertools.product(*self.config.bandwidth_grids):
            loo = self._loo_estimates(neighbor_rows, neighbors, combo)
            cv = float(np.mean((t_true - loo) ** 2))
            if best is None or cv <= best[0]:  # <= so larger later grid points win ties
                best = (cv, combo, loo)
        cv, combo, loo = best
        return np.array(combo), cv, loo

    # -- dating ------------------------------------------------------------

    def date(self, doc: Document) -> DateEstimate:
        dists = self.distances_to_train(doc)
        n = len(self.train)
        if self.config.m is not None:
            m_values = [min(self.config.m, n)]
        else:
            m_values = sorted({min(m, n) for m in self.config.m_values})
        best = None
        for m in m_values:
            neighbors = neighborhood(dists, m, self.id_rank)
            if len(neighbors) < 2:
                continue
            rows = self._neighbor_rows(neighbors)
            hs, cv, loo = self.select_bandwidths(neighbors, rows)
            if best is None or cv < best[0]:  # strict: smallest m wins ties
                best = (cv, m, neighbors, hs, loo)
        if best is None:
            raise UndatableDocumentError(f"no usable neighborhood for {doc.id!r}")
        cv, m, neighbors, hs, loo = best
        log_w = _log_weight_rows(dists, self.config.kernels, hs)
        nearest = neighborhood(dists, min(m, n), self.id_rank)
        year_hat, fallback = _weighted_mean_years(log_w, self.years, nearest)
        stderr = self._stderr(log_w, neighbors, loo)
        diag = {"m": m, "bandwidths": hs.tolist(), "cv": cv,
                "neighborhood_size": int(len(neighbors))}
        if fallback:
            diag["fallback_uniform"] = True
        return DateEstimate(year_hat=year_hat, method="knn", stderr=stderr,
                            diagnostics=diag)

    def _stderr(self, log_w_full, neighbors, loo):
        """Weighted mean squared leave-one-out error over the neighborhood."""
        log_w = log_w_full[neighbors]
        top = log_w.max()
        if not np.isfinite(top):
            return None
        w = np.exp(log_w - top)
        s2 = float(np.dot((self.years[neighbors] - loo) ** 2, w) / w.sum())
        return float(np.sqrt(s2))


def _drop(arr: np.ndarray, i: int) -> np.ndarray:
    return np.concatenate([arr[:i], arr[i + 1 :]])


def _extended(vocab: dict, doc: Document, k: int) -> dict:
    from .corpus import extract_shingles

    ext = dict(vocab)
    for s in extract_shingles(doc, k):
        if s not in ext:
            ext[s] = len(ext)
    return ext


# Convenience wrappers with the one-shot signatures; build a KnnDater for
# anything beyond a handful of calls.

def knn_estimate(target: Document, train: Sequence[Document], config: KnnConfig,
                 bandwidths: Sequence[float]) -> DateEstimate:
    """Date with fixed bandwidths (no cross-validation)."""
    dater = KnnDater(train, config)
    dists = dater.distances_to_train(target)
    log_w = _log_weight_rows(dists, config.kernels, bandwidths)
    m = min(config.m or DEFAULT_M_VALUES[0], len(dater.train))
    nearest = neighborhood(dists, m, dater.id_rank)
    year_hat, fallback = _weighted_mean_years(log_w, dater.years, nearest)
    diag = {"bandwidths": list(map(float, bandwidths))}
    if fallback:
        diag["fallback_uniform"] = True
    return DateEstimate(year_hat=year_hat, method="knn", diagnostics=diag)


def select_bandwidths(target: Document, train: Sequence[Document], config: KnnConfig):
    """One-shot bandwidth selection for a target; returns (bandwidths, cv)."""
    dater = KnnDater(train, config)
    dists = dater.distances_to_train(target)
    m = min(config.m or DEFAULT_M_VALUES[0], len(dater.train))
    neighbors = neighborhood(dists, m, dater.id_rank)
    rows = dater._neighbor_rows(neighbors)
    hs, cv, _ = dater.select_bandwidths(neighbors, rows)
    return hs, cv


def knn_stderr(target: Document, train: Sequence[Document], config: KnnConfig,
               bandwidths: Sequence[float]) -> float:
    """Root weighted mean squared leave-one-out error at given bandwidths."""
    dater = KnnDater(train, config)
    dists = dater.distances_to_train(target)
    m = min(config.m or DEFAULT_M_VALUES[0], len(dater.train))
    neighbors = neighborhood(dists, m, dater.id_rank)
    rows = dater._neighbor_rows(neighbors)
    loo = dater._loo_estimates(rows, neighbors, bandwidths)
    log_w = _log_weight_rows(dists, config.kernels, bandwidths)
    return dater._stderr(log_w, neighbors, loo)
