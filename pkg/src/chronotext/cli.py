"""Command-line surface: preprocess corpora, date documents, run the
evaluation protocol, and generate synthetic corpora.

Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.
A flat key=value config file can preset any long option; explicit flags
win.  CHRONOTEXT_WORKERS (or --workers) fans dating out over a process
pool; output rows keep input order either way.
"""

from __future__ import annotations

import argparse
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .core import (DataError, KernelSpec, NumericalError,
                   UndatableDocumentError, write_curve_csv)
from . import corpus as corpus_mod
from .corpus import (Document, build_index, load_corpus, load_index,
                     load_substitutions, preprocess, save_corpus, save_index)
from .ensemble import BlendWeights, blend_predict
from .evaluation import (BlendMethod, ConstantMethod, KnnMethod, MpMethod,
                         MtMethod, QrMethod, format_report_table,
                         generate_corpus, model_from_config, run_protocol,
                         write_per_doc_tsv, write_reports_tsv)
from .knn import KnnConfig, KnnDater
from .metrics import DistanceSpec
from .mt import MtConfig, MtIndex, gmt_curve, mt_date
from .prevalence import PrevalenceModel, mp_date, prevalence_curve
from .quantile import QrConfig, qr_curve, qr_date

logger = logging.getLogger("chronotext")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(x) for x in text.split(",") if x != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _float_list(text: str) -> tuple[float, ...]:
    try:
        return tuple(float(x) for x in text.split(",") if x != "")
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _fractions(text: str) -> tuple[float, float, float]:
    parts = _float_list(text)
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated fractions")
    return parts  # validated by split_corpus


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chronotext",
        description="Estimate the dates of text documents from a dated corpus.")
    parser.add_argument("--config", help="flat key=value file presetting long options")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="tokenize a raw JSONL corpus")
    p.add_argument("input", help="raw corpus (JSON Lines: id, year, text)")
    p.add_argument("output", help="tokenized corpus (JSON Lines)")
    p.add_argument("--substitutions", help="two-column TSV of token replacements")
    p.add_argument("--strict", action="store_true",
                   help="abort on the first malformed line or empty document")

    p = sub.add_parser("date", help="date target documents against a training corpus")
    p.add_argument("--train", required=True, help="dated training corpus (JSONL)")
    p.add_argument("--targets", required=True, help="documents to date (JSONL)")
    p.add_argument("--method", required=True,
                   choices=["knn", "mp", "qr", "mt", "blend"])
    p.add_argument("--out", required=True, help="output TSV path")
    p.add_argument("--emit-curves", metavar="DIR",
                   help="write one (year, value) CSV per target where the method has a curve")
    p.add_argument("--index-cache", help="single-file shingle index cache (mp)")
    p.add_argument("--strict", action="store_true",
                   help="exit nonzero if any target is undatable")
    p.add_argument("--workers", type=int,
                   default=int(os.environ.get("CHRONOTEXT_WORKERS", "1")))
    p.add_argument("--k", type=_int_list, default=(1,),
                   help="shingle size(s); knn accepts a comma list")
    p.add_argument("--alpha", type=float, default=1.0, help="distance exponent")
    p.add_argument("--m", type=int, help="knn neighborhood size (default: sweep)")
    p.add_argument("--h", type=float, help="bandwidth in years (mp/qr)")
    p.add_argument("--nu", type=float, default=3.0, help="kernel tail weight (mp)")
    p.add_argument("--kernel-shape", choices=["student_t", "gaussian"],
                   default="student_t", help="time kernel for mp")
    p.add_argument("--degree", type=int, choices=[0, 1], default=0,
                   help="local polynomial degree for mp")
    p.add_argument("--q", type=float, default=0.1, help="lower quantile (qr)")
    p.add_argument("--mt-window", type=int, default=40)
    p.add_argument("--mt-threshold", type=float, default=0.0)
    p.add_argument("--blend-methods", help="comma list of base methods, e.g. mp,knn")
    p.add_argument("--blend-weights", type=_float_list,
                   help="comma list of weights summing to 1")

    p = sub.add_parser("evaluate", help="run the split/tune/report protocol")
    p.add_argument("--corpus", required=True, help="dated corpus (JSONL)")
    p.add_argument("--methods", default="knn,mp",
                   help="comma list from knn,mp,qr,mt,blend,constant")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--fractions", type=_fractions, default=(0.8, 0.1, 0.1),
                   help="train,validation,test fractions")
    p.add_argument("--combine-validation", action="store_true",
                   help="fold validation into the test set (no tuning)")
    p.add_argument("--k", type=_int_list, default=(1,))
    p.add_argument("--knn-m", type=int, default=20)
    p.add_argument("--mp-h-grid", type=_float_list, default=(8.0, 12.0, 16.0))
    p.add_argument("--mp-nu-grid", type=_float_list, default=(3.0, 5.0))
    p.add_argument("--qr-q-grid", type=_float_list, default=(0.05, 0.1, 0.2))
    p.add_argument("--qr-h-grid", type=_float_list, default=(10.0, 30.0))

    p = sub.add_parser("synth", help="generate a synthetic dated corpus")
    p.add_argument("--model", help="flat key=value model spec file")
    p.add_argument("--kind", choices=["two_regime", "smooth", "deeds"],
                   help="model family when no spec file is given")
    p.add_argument("--n", type=int, required=True, help="number of documents")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="output corpus (JSONL)")

    return parser


def _read_kv_file(path) -> dict:
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key = value")
            key, _, value = line.partition("=")
            values[key.strip()] = value.strip()
    return values


def _argv_with_config(argv: list[str]) -> list[str]:
    """Expand --config FILE into option tokens placed before the user's
    flags, so explicit flags override the file."""
    if "--config" not in argv:
        return argv
    i = argv.index("--config")
    if i + 1 >= len(argv):
        return argv  # let argparse report the missing value
    values = _read_kv_file(argv[i + 1])
    rest = argv[:i] + argv[i + 2 :]
    if not rest:
        return rest
    injected = []
    for key, value in values.items():
        flag = "--" + key.replace("_", "-").lstrip("-")
        if value.lower() in ("true", "1", "yes") and key in ("strict", "combine-validation",
                                                             "combine_validation"):
            injected.append(flag)
        else:
            injected.extend([flag, value])
    return rest[:1] + injected + rest[1:]


# ---------------------------------------------------------------------------
# preprocess


def cmd_preprocess(args) -> int:
    subs = load_substitutions(args.substitutions) if args.substitutions else None
    raws, errors = load_corpus(args.input, strict=args.strict)
    for lineno, msg in errors:
        logger.warning("skipping line %d: %s", lineno, msg)
    docs = []
    for raw in raws:
        try:
            doc = preprocess(raw, subs)
        except DataError as exc:
            if args.strict:
                raise
            logger.warning("skipping document %s: %s", raw.id, exc)
            continue
        logger.info("document %s: %d tokens", doc.id, len(doc.tokens))
        docs.append(doc)
    n = save_corpus(args.output, docs)
    if n == 0:
        logger.warning("wrote an empty corpus to %s", args.output)
    print(f"wrote {n} documents to {args.output}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# date


def _load_documents(path, require_year: bool) -> list[Document]:
    raws, _ = load_corpus(path, strict=True)
    docs = []
    for raw in raws:
        if require_year and raw.year is None:
            raise DataError(f"document {raw.id!r} has no year")
        docs.append(preprocess(raw))
    if not docs:
        raise DataError(f"no documents in {path}")
    return docs


class _MpRunner:
    def __init__(self, train, args):
        k = args.k[0]
        if args.index_cache and Path(args.index_cache).exists():
            index = load_index(args.index_cache)
            if index.k != k:
                raise DataError(f"index cache has k={index.k}, requested k={k}")
        else:
            index = build_index(train, k)
            if args.index_cache:
                save_index(args.index_cache, index)
        kernel = KernelSpec(args.kernel_shape, h=args.h if args.h else 12.0,
                            nu=args.nu if args.kernel_shape == "student_t" else None)
        self.model = PrevalenceModel(index, kernel, degree=args.degree)

    def date(self, doc):
        return mp_date(doc, self.model)

    def curve(self, doc):
        c = prevalence_curve(doc, self.model)
        return c.years, c.log_values, ("year", "log_prevalence")


class _KnnRunner:
    def __init__(self, train, args):
        distances = tuple(DistanceSpec(k=k, exponent=args.alpha) for k in args.k)
        self.dater = KnnDater(train, KnnConfig(distances=distances, m=args.m))

    def date(self, doc):
        return self.dater.date(doc)

    curve = None


class _QrRunner:
    def __init__(self, train, args):
        self.train = train
        self.config = QrConfig(q=args.q, h=args.h if args.h else 30.0,
                               distance=DistanceSpec(k=args.k[0], exponent=args.alpha))

    def date(self, doc):
        return qr_date(doc, self.train, self.config)

    def curve(self, doc):
        years, values = qr_curve(doc, self.train, self.config)
        return years, values, ("year", "fitted_quantile")


class _MtRunner:
    def __init__(self, train, args):
        self.index = MtIndex(train)
        self.config = MtConfig(threshold=args.mt_threshold,
                               initial_window=args.mt_window)

    def date(self, doc):
        return mt_date(doc, self.index, self.config)

    def curve(self, doc):
        years, values = gmt_curve(doc, self.index, self.config)
        return years, values, ("year", "gmt")


class _BlendRunner:
    def __init__(self, train, args):
        if not args.blend_methods or not args.blend_weights:
            raise DataError("blend requires --blend-methods and --blend-weights")
        names = args.blend_methods.split(",")
        if len(names) != len(args.blend_weights):
            raise DataError("--blend-methods and --blend-weights lengths differ")
        self.bases = [_build_runner(name.strip(), train, args) for name in names]
        self.weights = BlendWeights(weights=tuple(args.blend_weights))

    def date(self, doc):
        from .core import DateEstimate

        row = [b.date(doc).year_hat for b in self.bases]
        return DateEstimate(year_hat=blend_predict(self.weights, row), method="blend")

    curve = None


_RUNNERS = {"mp": _MpRunner, "knn": _KnnRunner, "qr": _QrRunner,
            "mt": _MtRunner, "blend": _BlendRunner}


def _build_runner(method, train, args):
    if method not in _RUNNERS:
        raise DataError(f"unknown method {method!r}")
    return _RUNNERS[method](train, args)


_WORKER_RUNNER = None


def _worker_init(train, method, args):
    global _WORKER_RUNNER
    _WORKER_RUNNER = _build_runner(method, train, args)


def _date_one(runner, doc, want_curve):
    flags = []
    try:
        est = runner.date(doc)
    except UndatableDocumentError as exc:
        logger.warning("document %s: %s", doc.id, exc)
        return doc.id, None, None, ["undatable"], None
    for key in ("tie", "low_confidence", "fallback_uniform"):
        if est.diagnostics.get(key):
            flags.append(key)
    curve = None
    if want_curve and runner.curve is not None:
        years, values, labels = runner.curve(doc)
        curve = (np.asarray(years), np.asarray(values), labels)
    return doc.id, est.year_hat, est.stderr, flags, curve


def _worker_date(payload):
    doc, want_curve = payload
    return _date_one(_WORKER_RUNNER, doc, want_curve)


def cmd_date(args) -> int:
    train = _load_documents(args.train, require_year=True)
    targets = _load_documents(args.targets, require_year=False)
    want_curve = bool(args.emit_curves)
    if want_curve:
        Path(args.emit_curves).mkdir(parents=True, exist_ok=True)
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers, initializer=_worker_init,
                                 initargs=(train, args.method, args)) as pool:
            rows = list(pool.map(_worker_date, [(d, want_curve) for d in targets]))
    else:
        runner = _build_runner(args.method, train, args)
        rows = [_date_one(runner, doc, want_curve) for doc in targets]
    n_failed = 0
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("id\tyear_hat\tstderr\tflags\n")
        for doc_id, year_hat, stderr, flags, curve in rows:
            if year_hat is None:
                n_failed += 1
                fh.write(f"{doc_id}\t\t\tundatable\n")
                continue
            stderr_s = f"{stderr:.6g}" if stderr is not None else ""
            fh.write(f"{doc_id}\t{year_hat:.6g}\t{stderr_s}\t{';'.join(flags)}\n")
            if curve is not None:
                years, values, labels = curve
                safe_id = re.sub(r"[^A-Za-z0-9._-]", "_", doc_id)
                write_curve_csv(Path(args.emit_curves) / f"{safe_id}_{args.method}.csv",
                                years, values, labels)
    print(f"dated {len(rows) - n_failed}/{len(rows)} documents -> {args.out}")
    if n_failed and args.strict:
        raise DataError(f"{n_failed} documents could not be dated")
    return EXIT_OK


# ---------------------------------------------------------------------------
# evaluate


def _make_methods(args) -> list:
    methods = []
    ks = args.k
    for name in args.methods.split(","):
        name = name.strip()
        if name == "knn":
            distances = tuple(DistanceSpec(k=k) for k in ks)
            methods.append(KnnMethod(KnnConfig(distances=distances, m=args.knn_m)))
        elif name == "mp":
            methods.append(MpMethod(k=ks[0], h_grid=args.mp_h_grid,
                                    nu_grid=args.mp_nu_grid))
        elif name == "qr":
            methods.append(QrMethod(q_grid=args.qr_q_grid, h_grid=args.qr_h_grid,
                                    config=QrConfig(distance=DistanceSpec(k=ks[0]))))
        elif name == "mt":
            methods.append(MtMethod())
        elif name == "constant":
            methods.append(ConstantMethod())
        elif name == "blend":
            bases = [MpMethod(k=ks[0], h_grid=args.mp_h_grid, nu_grid=args.mp_nu_grid,
                              name="mp-base"),
                     KnnMethod(KnnConfig(distances=tuple(DistanceSpec(k=k) for k in ks),
                                         m=args.knn_m), name="knn-base")]
            methods.append(BlendMethod(bases))
        else:
            raise DataError(f"unknown method {name!r} in --methods")
    return methods


def cmd_evaluate(args) -> int:
    docs = _load_documents(args.corpus, require_year=True)
    methods = _make_methods(args)
    reports = run_protocol(docs, methods, seed=args.seed, fractions=args.fractions,
                           combine_validation_into_test=args.combine_validation)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_reports_tsv(out / "summary.tsv", reports)
    write_per_doc_tsv(out / "per_doc.tsv", reports)
    table = format_report_table(reports)
    (out / "report.txt").write_text(table, encoding="utf-8")
    print(table, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    cfg = _read_kv_file(args.model) if args.model else {}
    if args.kind:
        cfg["kind"] = args.kind
    try:
        model = model_from_config(cfg)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    if args.n < 0:
        raise DataError("--n must be >= 0")
    docs = generate_corpus(model, args.n, seed=args.seed)
    n = save_corpus(args.out, docs)
    print(f"wrote {n} synthetic documents to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(message)s")
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        argv = _argv_with_config(argv)
        args = parser.parse_args(argv)
        handler = {"preprocess": cmd_preprocess, "date": cmd_date,
                   "evaluate": cmd_evaluate, "synth": cmd_synth}[args.command]
        return handler(args)
    except DataError as exc:
        logger.error("%s", exc)
        return EXIT_DATA
    except NumericalError as exc:
        logger.error("%s", exc)
        return EXIT_NUMERICAL
    except OSError as exc:
        logger.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
