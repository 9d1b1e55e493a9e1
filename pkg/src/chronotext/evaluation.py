"""Evaluation harness: error metrics, the synthetic corpus generator used
as the toolkit's ground truth, method adapters with validation-set tuning,
and the train/validation/test protocol with tabular reports.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .core import KernelSpec, UndatableDocumentError
from .corpus import Document, build_index, split_corpus
from .ensemble import BlendWeights, blend_predict, fit_blend
from .knn import KnnConfig, KnnDater
from .metrics import DistanceSpec
from .mt import MtConfig, MtIndex, mt_date
from .prevalence import PrevalenceModel, mp_date
from .quantile import QrConfig, qr_date, qr_tune

logger = logging.getLogger(__name__)

__all__ = [
    "metrics",
    "EvalReport",
    "SyntheticModel",
    "constant",
    "ramp_in",
    "ramp_out",
    "window",
    "two_regime_model",
    "smooth_model",
    "deeds_shaped_model",
    "model_from_config",
    "generate_corpus",
    "KnnMethod",
    "MpMethod",
    "QrMethod",
    "MtMethod",
    "BlendMethod",
    "ConstantMethod",
    "run_protocol",
    "format_report_table",
    "write_reports_tsv",
]


def metrics(truths, estimates):
    """(rmse, mae, medae) of estimates against truths."""
    truths = np.asarray(truths, dtype=float)
    estimates = np.asarray(estimates, dtype=float)
    if truths.shape != estimates.shape or truths.size == 0:
        raise ValueError("need equal-length nonempty vectors")
    err = estimates - truths
    abs_err = np.abs(err)
    return (float(np.sqrt(np.mean(err * err))),
            float(np.mean(abs_err)),
            float(np.median(abs_err)))


@dataclass
class EvalReport:
    """Per-split performance of one method."""

    method: str
    split: str
    params: str
    per_doc: list  # (id, truth, estimate, abs_error), sorted by id
    rmse: float
    mae: float
    medae: float
    n_failed: int = 0

    @classmethod
    def from_results(cls, method, split, params, results, n_failed=0):
        results = sorted(results, key=lambda r: r[0])
        truths = [r[1] for r in results]
        ests = [r[2] for r in results]
        rmse, mae, medae = metrics(truths, ests)
        per_doc = [(i, t, e, abs(e - t)) for i, t, e in results]
        return cls(method=method, split=split, params=params, per_doc=per_doc,
                   rmse=rmse, mae=mae, medae=medae, n_failed=n_failed)


# ---------------------------------------------------------------------------
# Synthetic generative model: dated documents whose tokens are i.i.d. draws
# from a year-indexed distribution over a fixed vocabulary.


def constant(level: float = 1.0) -> Callable:
    return lambda years: np.full(len(years), float(level))


def ramp_in(center: float, width: float = 10.0, level: float = 1.0) -> Callable:
    """Logistic increase from ~0 to ``level`` around ``center``."""
    return lambda years: level / (1.0 + np.exp(-(np.asarray(years, float) - center) / width))


def ramp_out(center: float, width: float = 10.0, level: float = 1.0) -> Callable:
    """Logistic decrease from ``level`` to ~0 around ``center``."""
    return lambda years: level / (1.0 + np.exp((np.asarray(years, float) - center) / width))


def window(start: float, end: float, level: float = 1.0, edge: float = 5.0) -> Callable:
    """In-currency interval: ~``level`` between start and end, ~0 outside."""

    def traj(years):
        y = np.asarray(years, float)
        return level / ((1.0 + np.exp(-(y - start) / edge)) * (1.0 + np.exp((y - end) / edge)))

    return traj


class SyntheticModel:
    """Vocabulary with per-year occurrence probabilities.

    ``probs`` has one row per token and one column per year; columns are
    normalized to sum to 1.  Two years must never share an identical
    probability column, otherwise dates are not identifiable and
    construction fails.
    """

    def __init__(self, tokens: Sequence[str], probs: np.ndarray, years: Sequence[int],
                 doc_length=200, date_weights: Optional[np.ndarray] = None):
        self.tokens = list(tokens)
        self.years = np.asarray(years, dtype=int)
        probs = np.asarray(probs, dtype=float)
        if probs.shape != (len(self.tokens), len(self.years)):
            raise ValueError("probs must be tokens-by-years")
        if (probs < 0).any():
            raise ValueError("probabilities must be nonnegative")
        sums = probs.sum(axis=0)
        if (sums <= 0).any():
            raise ValueError("every year needs positive probability mass")
        self.probs = probs / sums
        seen = {}
        for j in range(self.probs.shape[1]):
            key = self.probs[:, j].tobytes()
            if key in seen:
                raise ValueError(
                    f"years {self.years[seen[key]]} and {self.years[j]} have identical "
                    "token distributions; dates are not identifiable")
            seen[key] = j
        self.doc_length = doc_length
        if date_weights is not None:
            date_weights = np.asarray(date_weights, dtype=float)
            if date_weights.shape != self.years.shape or (date_weights < 0).any():
                raise ValueError("bad date weights")
            date_weights = date_weights / date_weights.sum()
        self.date_weights = date_weights

    @classmethod
    def from_trajectories(cls, trajectories: dict, year_range, **kwargs) -> "SyntheticModel":
        """Build from {token: trajectory(years) -> levels} over an inclusive
        year range."""
        lo, hi = year_range
        years = np.arange(lo, hi + 1)
        tokens = list(trajectories)
        probs = np.vstack([np.asarray(trajectories[t](years), dtype=float) for t in tokens])
        return cls(tokens, probs, years, **kwargs)

    def sample_length(self, rng) -> int:
        if callable(self.doc_length):
            return int(self.doc_length(rng))
        return int(self.doc_length)


def two_regime_model(year_range=(1100, 1299), switch_year=1200,
                     n_tokens=(30, 30), tilt=0.8, doc_length=200) -> SyntheticModel:
    """Vocabulary switches entirely at ``switch_year``.

    Documents before the switch draw only from the first token block,
    documents from the switch on only from the second.  Within each regime
    the token probabilities tilt linearly over time (different slope per
    token) so that every year remains identifiable.
    """
    lo, hi = year_range
    if not lo < switch_year <= hi:
        raise ValueError("switch_year must fall inside the year range")
    years = np.arange(lo, hi + 1)
    n_a, n_b = n_tokens
    tokens = [f"a{i:03d}" for i in range(n_a)] + [f"b{i:03d}" for i in range(n_b)]
    probs = np.zeros((n_a + n_b, len(years)))
    in_a = years < switch_year
    z_a = _unit_position(years[in_a])
    slopes_a = np.linspace(-tilt, tilt, n_a)
    probs[:n_a, in_a] = 1.0 + slopes_a[:, None] * z_a[None, :]
    in_b = ~in_a
    z_b = _unit_position(years[in_b])
    slopes_b = np.linspace(-tilt, tilt, n_b)
    probs[n_a:, in_b] = 1.0 + slopes_b[:, None] * z_b[None, :]
    return SyntheticModel(tokens, probs, years, doc_length=doc_length)


def _unit_position(years: np.ndarray) -> np.ndarray:
    """Map years to [-1, 1]; a single year maps to 0."""
    if len(years) == 1:
        return np.zeros(1)
    mid = (years[0] + years[-1]) / 2.0
    half = (years[-1] - years[0]) / 2.0
    return (years - mid) / half


def smooth_model(year_range=(1100, 1299), n_tokens=40, width=15.0,
                 doc_length=200) -> SyntheticModel:
    """Smoothly drifting vocabulary: staggered logistic ramps in and out
    plus a flat background."""
    lo, hi = year_range
    trajectories = {}
    centers = np.linspace(lo, hi, n_tokens // 2)
    for i, c in enumerate(centers):
        trajectories[f"in{i:03d}"] = ramp_in(c, width)
        trajectories[f"out{i:03d}"] = ramp_out(c, width)
    for i in range(max(2, n_tokens // 10)):
        trajectories[f"bg{i:03d}"] = constant(0.5)
    return SyntheticModel.from_trajectories(trajectories, year_range,
                                            doc_length=doc_length)


def deeds_shaped_model(year_range=(1089, 1438), vocab_size=1500, seed=0,
                       date_mean=1237.0, date_sd=46.0,
                       length_median=202.0, length_mean=237.0) -> SyntheticModel:
    """A corpus shaped like a large dated-charter collection: bell-shaped
    date distribution over a long span, lognormal document lengths, and a
    big vocabulary mixing flat, ramping and windowed token histories."""
    rng = np.random.default_rng(seed)
    lo, hi = year_range
    trajectories = {}
    kinds = rng.choice(["constant", "ramp_in", "ramp_out", "window"],
                       size=vocab_size, p=[0.4, 0.2, 0.2, 0.2])
    for i, kind in enumerate(kinds):
        level = float(rng.uniform(0.5, 2.0))
        name = f"w{i:05d}"
        if kind == "constant":
            trajectories[name] = constant(level)
        elif kind == "ramp_in":
            trajectories[name] = ramp_in(rng.uniform(lo, hi), rng.uniform(8, 40), level)
        elif kind == "ramp_out":
            trajectories[name] = ramp_out(rng.uniform(lo, hi), rng.uniform(8, 40), level)
        else:
            start = rng.uniform(lo, hi - 30)
            trajectories[name] = window(start, start + rng.uniform(30, 120),
                                        level, rng.uniform(4, 12))
    years = np.arange(lo, hi + 1)
    date_weights = np.exp(-0.5 * ((years - date_mean) / date_sd) ** 2)
    sigma = math.sqrt(2.0 * math.log(length_mean / length_median))
    mu = math.log(length_median)

    def length_sampler(rng):
        return max(15, int(round(rng.lognormal(mu, sigma))))

    return SyntheticModel.from_trajectories(trajectories, year_range,
                                            doc_length=length_sampler,
                                            date_weights=date_weights)


def model_from_config(cfg: dict) -> SyntheticModel:
    """Build a synthetic model from a flat key=value mapping (CLI surface).

    ``kind`` selects the family:
      two_regime: year_start, year_end, switch_year, tokens_a, tokens_b,
                  tilt, doc_length
      smooth:     year_start, year_end, n_tokens, width, doc_length
      deeds:      year_start, year_end, vocab_size, seed
    """
    kind = cfg.get("kind", "two_regime")
    lo = int(cfg.get("year_start", 1100))
    hi = int(cfg.get("year_end", 1299))
    if kind == "two_regime":
        return two_regime_model(
            (lo, hi), switch_year=int(cfg.get("switch_year", (lo + hi + 1) // 2)),
            n_tokens=(int(cfg.get("tokens_a", 30)), int(cfg.get("tokens_b", 30))),
            tilt=float(cfg.get("tilt", 0.8)),
            doc_length=int(cfg.get("doc_length", 200)))
    if kind == "smooth":
        return smooth_model((lo, hi), n_tokens=int(cfg.get("n_tokens", 40)),
                            width=float(cfg.get("width", 15.0)),
                            doc_length=int(cfg.get("doc_length", 200)))
    if kind == "deeds":
        return deeds_shaped_model((int(cfg.get("year_start", 1089)),
                                   int(cfg.get("year_end", 1438))),
                                  vocab_size=int(cfg.get("vocab_size", 1500)),
                                  seed=int(cfg.get("seed", 0)))
    raise ValueError(f"unknown synthetic model kind {kind!r}")


def generate_corpus(model: SyntheticModel, n_docs: int, seed: int,
                    id_prefix: str = "syn") -> list[Document]:
    """Sample dated documents from the model, deterministically per seed.

    Each document's date is drawn from the model's date distribution
    (uniform by default), its length from the length distribution, and its
    tokens i.i.d. from the token distribution of its year.
    """
    rng = np.random.default_rng(seed)
    docs = []
    n_years = len(model.years)
    for i in range(n_docs):
        if model.date_weights is None:
            y_idx = int(rng.integers(n_years))
        else:
            y_idx = int(rng.choice(n_years, p=model.date_weights))
        length = model.sample_length(rng)
        toks = rng.choice(len(model.tokens), size=length, p=model.probs[:, y_idx])
        docs.append(Document(id=f"{id_prefix}-{i:05d}",
                             year=int(model.years[y_idx]),
                             tokens=tuple(model.tokens[t] for t in toks)))
    return docs


# ---------------------------------------------------------------------------
# Method adapters: a uniform fit/date surface over the four daters plus a
# linear blend and a constant baseline.


class KnnMethod:
    """Nearest-neighbor dating; needs no validation set (bandwidths come
    from each target's own neighborhood)."""

    def __init__(self, config: KnnConfig = KnnConfig(m=20), name: str = "knn"):
        self.name = name
        self.config = config
        self.dater = None

    @property
    def params(self) -> str:
        ks = ",".join(str(s.k) for s in self.config.distances)
        return f"k={ks},m={self.config.m if self.config.m else 'cv'}"

    def fit(self, train, validation):
        self.dater = KnnDater(train, self.config)

    def date(self, doc):
        return self.dater.date(doc)


class MpMethod:
    """Maximum-prevalence dating with (h, nu) tuned on the validation set
    by mean absolute error; ties prefer larger h, then larger nu."""

    def __init__(self, k: int = 1, h_grid=(8.0, 12.0, 16.0), nu_grid=(3.0, 5.0),
                 degree: int = 0, name: str = "mp"):
        self.name = name
        self.k = k
        self.h_grid = h_grid
        self.nu_grid = nu_grid
        self.degree = degree
        self.model = None

    @property
    def params(self) -> str:
        if self.model is None:
            return f"k={self.k}"
        return f"k={self.k},h={self.model.kernel.h:g},nu={self.model.kernel.nu:g}"

    def fit(self, train, validation):
        index = build_index(train, self.k)
        best = None
        for h in sorted(self.h_grid):
            for nu in sorted(self.nu_grid):
                model = PrevalenceModel(index, KernelSpec("student_t", h=h, nu=nu),
                                        degree=self.degree)
                if validation:
                    errors = []
                    for doc in validation:
                        try:
                            est = mp_date(doc, model)
                        except UndatableDocumentError:
                            continue
                        errors.append(abs(est.year_hat - doc.year))
                    if not errors:
                        continue
                    mae = float(np.mean(errors))
                else:
                    mae = 0.0
                if best is None or mae <= best[0]:  # later (larger) grid wins ties
                    best = (mae, model)
        if best is None:
            raise UndatableDocumentError("could not tune the prevalence model")
        self.model = best[1]

    def date(self, doc):
        return mp_date(doc, self.model)


class QrMethod:
    """Quantile-regression dating with (q, h) tuned on the validation set."""

    def __init__(self, q_grid=(0.05, 0.1, 0.2), h_grid=(10.0, 30.0),
                 config: QrConfig = QrConfig(), name: str = "qr"):
        self.name = name
        self.q_grid = q_grid
        self.h_grid = h_grid
        self.config = config
        self.train = None

    @property
    def params(self) -> str:
        return f"q={self.config.q:g},h={self.config.h:g}"

    def fit(self, train, validation):
        self.train = list(train)
        if validation:
            self.config = qr_tune(validation, self.train, self.q_grid,
                                  self.h_grid, self.config)

    def date(self, doc):
        return qr_date(doc, self.train, self.config)


class MtMethod:
    """Matching-pattern dating; no tuning beyond its configuration."""

    def __init__(self, config: MtConfig = MtConfig(), name: str = "mt"):
        self.name = name
        self.config = config
        self.index = None

    @property
    def params(self) -> str:
        return f"win={self.config.initial_window},thr={self.config.threshold:g}"

    def fit(self, train, validation):
        self.index = MtIndex(train)

    def date(self, doc):
        return mt_date(doc, self.index, self.config)


class ConstantMethod:
    """Predicts one fixed year (the training mean by default); the baseline
    any real method has to beat."""

    def __init__(self, year: Optional[float] = None, name: str = "constant"):
        self.name = name
        self.year = year
        self._fitted = None

    @property
    def params(self) -> str:
        value = self._fitted if self.year is None else self.year
        return f"year={value:g}" if value is not None else "year=mean"

    def fit(self, train, validation):
        self._fitted = self.year if self.year is not None else float(
            np.mean([d.year for d in train]))

    def date(self, doc):
        from .core import DateEstimate

        return DateEstimate(year_hat=self._fitted, method=self.name)


class BlendMethod:
    """Linear blend of base methods, weights fitted on the validation set."""

    def __init__(self, bases: Sequence, name: str = "blend", nonnegative: bool = False):
        if len(bases) < 2:
            raise ValueError("need at least two base methods to blend")
        self.name = name
        self.bases = list(bases)
        self.nonnegative = nonnegative
        self.weights: Optional[BlendWeights] = None

    @property
    def params(self) -> str:
        if self.weights is None:
            return "+".join(b.name for b in self.bases)
        ws = ",".join(f"{w:.2f}" for w in self.weights.weights)
        return f"w=({ws})"

    def fit(self, train, validation):
        for base in self.bases:
            base.fit(train, validation)
        if not validation:
            raise ValueError("blend fitting requires a validation set")
        rows, truths = [], []
        for doc in validation:
            try:
                rows.append([b.date(doc).year_hat for b in self.bases])
            except UndatableDocumentError:
                continue
            truths.append(float(doc.year))
        self.weights = fit_blend(np.array(rows), np.array(truths),
                                 nonnegative=self.nonnegative)

    def date(self, doc):
        from .core import DateEstimate

        row = [b.date(doc).year_hat for b in self.bases]
        return DateEstimate(year_hat=blend_predict(self.weights, row),
                            method=self.name)


# ---------------------------------------------------------------------------
# Protocol: split, fit/tune, report on validation and test.


def _evaluate_split(method, docs, split) -> EvalReport:
    results = []
    n_failed = 0
    for doc in docs:
        try:
            est = method.date(doc)
        except UndatableDocumentError:
            n_failed += 1
            continue
        results.append((doc.id, float(doc.year), float(est.year_hat)))
    if not results:
        raise UndatableDocumentError(f"method {method.name} dated no {split} documents")
    return EvalReport.from_results(method.name, split, method.params, results,
                                   n_failed=n_failed)


def run_protocol(corpus: Sequence[Document], methods: Sequence, seed: int,
                 fractions=(0.8, 0.1, 0.1),
                 combine_validation_into_test: bool = False) -> list[EvalReport]:
    """Split the corpus, fit/tune each method, and report both splits.

    Methods are isolated: one that fails to fit or dates nothing is logged
    and skipped without aborting the rest.  With
    ``combine_validation_into_test`` the validation documents are folded
    into the test set (methods then tune on nothing and use defaults) and
    only test reports are produced.  Deterministic for a given seed.
    """
    train, validation, test = split_corpus(corpus, fractions, seed)
    if combine_validation_into_test:
        fit_validation: list = []
        eval_splits = [("test", list(validation) + list(test))]
    else:
        fit_validation = list(validation)
        eval_splits = [("validation", list(validation)), ("test", list(test))]
    reports = []
    for method in methods:
        try:
            method.fit(list(train), fit_validation)
            for split, docs in eval_splits:
                reports.append(_evaluate_split(method, docs, split))
        except Exception:
            logger.warning("method %s failed; skipping", method.name, exc_info=True)
    return reports


def format_report_table(reports: Sequence[EvalReport]) -> str:
    """Human-readable aligned table, one row per (method, split)."""
    headers = ["method", "split", "params", "rmse", "mae", "medae", "n", "failed"]
    rows = [[r.method, r.split, r.params, f"{r.rmse:.6g}", f"{r.mae:.6g}",
             f"{r.medae:.6g}", str(len(r.per_doc)), str(r.n_failed)]
            for r in reports]
    widths = [max(len(h), *(len(row[i]) for row in rows)) if rows else len(h)
              for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip()]
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


def write_reports_tsv(path, reports: Sequence[EvalReport]):
    """Machine-readable summary, one row per (method, split)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("method\tsplit\tparams\trmse\tmae\tmedae\tn\tn_failed\n")
        for r in reports:
            fh.write(f"{r.method}\t{r.split}\t{r.params}\t{r.rmse:.6g}\t"
                     f"{r.mae:.6g}\t{r.medae:.6g}\t{len(r.per_doc)}\t{r.n_failed}\n")


def write_per_doc_tsv(path, reports: Sequence[EvalReport]):
    """Per-document estimates for every report."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("method\tsplit\tid\ttruth\testimate\tabs_error\n")
        for r in reports:
            for doc_id, truth, est, abs_err in r.per_doc:
                fh.write(f"{r.method}\t{r.split}\t{doc_id}\t{truth:.6g}\t"
                         f"{est:.6g}\t{abs_err:.6g}\n")
