"""Corpus ingestion: preprocessing, tokenization, shingle extraction,
the per-year shingle index, and train/validation/test splitting.

Preprocessing follows the conventions of the dated-charter corpora this
toolkit targets: punctuation is stripped, words stay case sensitive, and
number-like tokens (Roman numerals or digit strings) collapse to a single
placeholder token so that every number counts as the same word type.
"""

from __future__ import annotations

import json
import random
import re
from collections import Counter, defaultdict
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

from .core import DataError, DegenerateDocumentError

__all__ = [
    "NUMBER_TOKEN",
    "RawDocument",
    "Document",
    "preprocess",
    "extract_shingles",
    "ShingleIndex",
    "build_index",
    "split_corpus",
    "parse_year",
    "load_corpus",
    "save_corpus",
    "load_substitutions",
    "save_index",
    "load_index",
]

#: Placeholder standing in for every number-like token.
NUMBER_TOKEN = "!NUM!"

# Strict Roman numeral over {i,v,x,l,c,d,m}; a short stoplist keeps common
# (Latin) words that happen to match the pattern from being numberized.
_ROMAN_RE = re.compile(r"(?i)^m{0,3}(cm|cd|d?c{0,3})(xc|xl|l?x{0,3})(ix|iv|v?i{0,3})$")
_ROMAN_STOPLIST = frozenset({"i", "mi", "di", "vi"})
_DIGITS_RE = re.compile(r"^[0-9]+$")

# Default plausibility bounds for calendar years.
DEFAULT_YEAR_BOUNDS = (1000, 1500)


@dataclass(frozen=True)
class RawDocument:
    """An unprocessed document: id, known year (or None), raw text."""

    id: str
    year: Optional[int]
    text: str


@dataclass(frozen=True)
class Document:
    """A preprocessed document: an ordered token sequence plus metadata."""

    id: str
    year: Optional[int]
    tokens: tuple[str, ...]

    def __len__(self):
        return len(self.tokens)


def _is_number_token(token: str) -> bool:
    if _DIGITS_RE.match(token):
        return True
    if token.lower() in _ROMAN_STOPLIST:
        return False
    return bool(_ROMAN_RE.match(token))


def preprocess(raw: RawDocument, substitutions: Optional[Mapping[str, str]] = None) -> Document:
    """Tokenize a raw document.

    Splits on whitespace, strips every non-alphanumeric character from each
    token, applies whole-token substitutions, then replaces number-like
    tokens (digit strings, strict Roman numerals) with ``NUMBER_TOKEN``.
    Case is preserved.  Idempotent: the placeholder survives a second pass.

    Raises DegenerateDocumentError when nothing survives.
    """
    if not raw.text:
        raise DegenerateDocumentError(f"document {raw.id!r} has empty text")
    tokens = []
    for tok in raw.text.split():
        if tok == NUMBER_TOKEN:
            tokens.append(tok)
            continue
        tok = "".join(ch for ch in tok if ch.isalnum())
        if not tok:
            continue
        if substitutions:
            tok = substitutions.get(tok, tok)
        tokens.append(NUMBER_TOKEN if _is_number_token(tok) else tok)
    if not tokens:
        raise DegenerateDocumentError(f"document {raw.id!r} is empty after preprocessing")
    return Document(id=raw.id, year=raw.year, tokens=tuple(tokens))


def extract_shingles(doc: Document, k: int) -> list[tuple[str, ...]]:
    """All k-shingles of the document in order; duplicates retained.

    A document of m tokens yields max(0, m - k + 1) shingles.
    """
    if k < 1:
        raise ValueError("shingle size k must be >= 1")
    toks = doc.tokens
    return [tuple(toks[i : i + k]) for i in range(len(toks) - k + 1)]


class ShingleIndex:
    """Per-shingle occurrence counts of a dated training corpus.

    counts[s][year] is the number of occurrences of shingle ``s`` among the
    training documents of that year; doc_counts[s][doc_id] the per-document
    breakdown; slots_per_year[y] the total number of shingle slots
    (sum of len(doc) - k + 1) contributed by documents of year y.
    Immutable after build; safe to share across workers.
    """

    def __init__(self, k, counts, doc_counts, slots_per_year, doc_ids_per_year, year_range):
        self.k = k
        self.counts = counts
        self.doc_counts = doc_counts
        self.slots_per_year = slots_per_year
        self.doc_ids_per_year = doc_ids_per_year
        self.year_range = year_range

    @property
    def years(self) -> list[int]:
        return sorted(self.slots_per_year)

    @property
    def total_slots(self) -> int:
        return sum(self.slots_per_year.values())

    def n_docs(self, year: int) -> int:
        return len(self.doc_ids_per_year.get(year, ()))

    def median_year(self) -> float:
        """Median document date, used as a tie-break anchor by daters."""
        ys = sorted(y for y, ids in self.doc_ids_per_year.items() for _ in ids)
        n = len(ys)
        mid = n // 2
        return float(ys[mid]) if n % 2 else (ys[mid - 1] + ys[mid]) / 2.0

    def __contains__(self, shingle) -> bool:
        return shingle in self.counts


def build_index(docs: Iterable[Document], k: int) -> ShingleIndex:
    """Build a ShingleIndex from dated documents.

    Documents shorter than k contribute no shingles and are left out of the
    index entirely.  Every indexed document must carry a year.
    """
    counts: dict = defaultdict(lambda: defaultdict(int))
    doc_counts: dict = defaultdict(lambda: defaultdict(int))
    slots_per_year: dict = defaultdict(int)
    doc_ids_per_year: dict = defaultdict(set)
    n_used = 0
    for doc in docs:
        if doc.year is None:
            raise DataError(f"document {doc.id!r} has no year; cannot index")
        shingles = extract_shingles(doc, k)
        if not shingles:
            continue
        n_used += 1
        y = doc.year
        slots_per_year[y] += len(shingles)
        doc_ids_per_year[y].add(doc.id)
        for s in shingles:
            counts[s][y] += 1
            doc_counts[s][doc.id] += 1
    if n_used == 0:
        raise DataError("no documents with at least k tokens; cannot build index")
    years = sorted(slots_per_year)
    return ShingleIndex(
        k=k,
        counts={s: dict(m) for s, m in counts.items()},
        doc_counts={s: dict(m) for s, m in doc_counts.items()},
        slots_per_year=dict(slots_per_year),
        doc_ids_per_year={y: frozenset(ids) for y, ids in doc_ids_per_year.items()},
        year_range=(years[0], years[-1]),
    )


def split_corpus(docs: Sequence[Document], fractions, seed: int):
    """Deterministically partition documents into (train, validation, test).

    Fractions must be positive and sum to 1.  Validation and test sizes are
    rounded to the nearest integer; train takes the remainder.  Documents
    are ordered by id before the seeded shuffle, so the partition does not
    depend on input order.
    """
    f_train, f_val, f_test = fractions
    if min(f_train, f_val, f_test) <= 0:
        raise ValueError("all split fractions must be positive")
    if abs(f_train + f_val + f_test - 1.0) > 1e-9:
        raise ValueError("split fractions must sum to 1")
    docs = sorted(docs, key=lambda d: d.id)
    n = len(docs)
    if n < 3:
        raise ValueError("need at least 3 documents to split")
    random.Random(seed).shuffle(docs)
    n_val = int(n * f_val + 0.5)
    n_test = int(n * f_test + 0.5)
    n_train = n - n_val - n_test
    if n_train <= 0:
        raise ValueError("train fraction leaves no training documents")
    train = docs[:n_train]
    validation = docs[n_train : n_train + n_val]
    test = docs[n_train + n_val :]
    return train, validation, test


# ---------------------------------------------------------------------------
# File formats: JSON Lines corpus, TSV substitution table, index cache.

_RANGE_RE = re.compile(r"^\s*(\d{3,4})\s*[-–—/]\s*(\d{3,4})\s*$")


def parse_year(value) -> Optional[int]:
    """Normalize a year field: int, None, or a 'YYYY-YYYY' range string.

    Ranges resolve to the lower year (documents are dated to within a year;
    a single integer year is the model's time unit).
    """
    if value is None:
        return None
    if isinstance(value, bool):
        raise DataError(f"invalid year {value!r}")
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str):
        s = value.strip()
        if not s:
            return None
        if s.isdigit():
            return int(s)
        m = _RANGE_RE.match(s)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            return min(lo, hi)
    raise DataError(f"invalid year {value!r}")


def load_corpus(path, year_bounds=DEFAULT_YEAR_BOUNDS, strict: bool = True):
    """Read a JSON Lines corpus: one object per line with id, year, text.

    Returns (documents, errors) where errors is a list of (line_number,
    message) for lines that failed to parse.  With strict=True the first
    bad line raises DataError instead.  Duplicate ids always raise.
    """
    raws = []
    errors = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                doc_id = obj["id"]
                if not isinstance(doc_id, str) or not doc_id:
                    raise DataError("id must be a nonempty string")
                year = parse_year(obj.get("year"))
                if year is not None and year_bounds is not None:
                    lo, hi = year_bounds
                    if not lo <= year <= hi:
                        raise DataError(f"year {year} outside bounds {lo}..{hi}")
                text = obj["text"]
                if not isinstance(text, str):
                    raise DataError("text must be a string")
            except (KeyError, ValueError, TypeError) as exc:
                msg = f"line {lineno}: {exc}"
                if strict:
                    raise DataError(msg) from exc
                errors.append((lineno, str(exc)))
                continue
            if doc_id in seen:
                raise DataError(f"line {lineno}: duplicate document id {doc_id!r}")
            seen.add(doc_id)
            raws.append(RawDocument(id=doc_id, year=year, text=text))
    return raws, errors


def save_corpus(path, docs: Iterable) -> int:
    """Write documents (raw or tokenized) as JSON Lines; returns the count.

    Tokenized documents are stored with their tokens joined by single
    spaces, which round-trips through preprocess() unchanged.
    """
    n = 0
    with open(path, "w", encoding="utf-8") as fh:
        for doc in docs:
            text = " ".join(doc.tokens) if isinstance(doc, Document) else doc.text
            fh.write(json.dumps({"id": doc.id, "year": doc.year, "text": text}) + "\n")
            n += 1
    return n


def load_substitutions(path) -> dict[str, str]:
    """Read a two-column TSV substitution table (from-token, to-token)."""
    subs = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise DataError(f"substitutions line {lineno}: expected two tab-separated tokens")
            subs[parts[0]] = parts[1]
    return subs


_INDEX_FORMAT_VERSION = 1


def save_index(path, index: ShingleIndex):
    """Persist a ShingleIndex as a single versioned JSON file.

    Shingles are stored as space-joined words; tokens never contain
    whitespace, so the join is reversible.
    """
    payload = {
        "format_version": _INDEX_FORMAT_VERSION,
        "k": index.k,
        "counts": {" ".join(s): {str(y): c for y, c in m.items()} for s, m in index.counts.items()},
        "doc_counts": {" ".join(s): dict(m) for s, m in index.doc_counts.items()},
        "slots_per_year": {str(y): n for y, n in index.slots_per_year.items()},
        "doc_ids_per_year": {str(y): sorted(ids) for y, ids in index.doc_ids_per_year.items()},
        "year_range": list(index.year_range),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh)


def load_index(path) -> ShingleIndex:
    with open(path, encoding="utf-8") as fh:
        payload = json.load(fh)
    version = payload.get("format_version")
    if version != _INDEX_FORMAT_VERSION:
        raise DataError(f"unsupported index format version {version!r}")
    return ShingleIndex(
        k=payload["k"],
        counts={tuple(s.split(" ")): {int(y): c for y, c in m.items()}
                for s, m in payload["counts"].items()},
        doc_counts={tuple(s.split(" ")): dict(m) for s, m in payload["doc_counts"].items()},
        slots_per_year={int(y): n for y, n in payload["slots_per_year"].items()},
        doc_ids_per_year={int(y): frozenset(ids) for y, ids in payload["doc_ids_per_year"].items()},
        year_range=tuple(payload["year_range"]),
    )


def doc_from_tokens(doc_id: str, year: Optional[int], tokens: Sequence[str]) -> Document:
    """Build a Document directly from tokens, validating the invariants."""
    for t in tokens:
        if not t or any(ch.isspace() for ch in t):
            raise DataError(f"document {doc_id!r}: bad token {t!r}")
        if t.startswith("!") and t != NUMBER_TOKEN:
            raise DataError(f"document {doc_id!r}: bad token {t!r}")
    return Document(id=doc_id, year=year, tokens=tuple(tokens))


def token_frequencies(docs: Iterable[Document]) -> Counter:
    """Corpus-wide token frequency table."""
    freq = Counter()
    for doc in docs:
        freq.update(doc.tokens)
    return freq
