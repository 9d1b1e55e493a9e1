"""Shared building blocks: time/distance kernels, the estimate record
returned by every dating method, and the package exceptions."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

__all__ = [
    "KernelSpec",
    "DateEstimate",
    "ChronotextError",
    "DataError",
    "DegenerateDocumentError",
    "UndatableDocumentError",
    "NumericalError",
    "write_curve_csv",
]


class ChronotextError(Exception):
    """Base class for package errors."""


class DataError(ChronotextError, ValueError):
    """Malformed or inconsistent input data (bad corpus file, duplicate ids...)."""


class DegenerateDocumentError(DataError):
    """A document that is empty after preprocessing."""


class UndatableDocumentError(ChronotextError, ValueError):
    """No usable overlap between the target document and the training corpus."""


class NumericalError(ChronotextError, RuntimeError):
    """A numerical procedure failed to produce a usable result."""


@dataclass(frozen=True)
class KernelSpec:
    """A nonincreasing weight function K_h(u) on |u|, without normalization.

    shape "gaussian" uses exp(-(u/h)^2); shape "student_t" uses
    (1 + u^2/(nu*h^2))^(-(nu+1)/2), a heavier-tailed alternative with a
    tail-weight parameter nu.  Only weight ratios matter downstream, so no
    proportionality constant is applied; ``scale`` multiplies the weights
    and exists to make scale-invariance checks expressible.
    """

    shape: str = "gaussian"
    h: float = 1.0
    nu: Optional[float] = None
    scale: float = 1.0

    def __post_init__(self):
        if self.shape not in ("gaussian", "student_t"):
            raise ValueError(f"unknown kernel shape {self.shape!r}")
        if not self.h > 0:
            raise ValueError("bandwidth h must be positive")
        if self.shape == "student_t":
            if self.nu is None or not self.nu > 0:
                raise ValueError("student_t kernel requires nu > 0")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    def log_weights(self, u) -> np.ndarray:
        """log K_h(u), vectorized over u."""
        u = np.asarray(u, dtype=float)
        z = u / self.h
        if self.shape == "gaussian":
            lw = -z * z
        else:
            lw = -0.5 * (self.nu + 1.0) * np.log1p(z * z / self.nu)
        return lw + np.log(self.scale)

    def weights(self, u) -> np.ndarray:
        return np.exp(self.log_weights(u))


@dataclass
class DateEstimate:
    """A point date estimate with optional uncertainty and diagnostics.

    ``diagnostics`` is a free-form dict; common keys are "curve" (a
    (years, values) pair), "tie", "fallback_uniform", "low_confidence",
    and "skipped_shingles".
    """

    year_hat: float
    method: str
    stderr: Optional[float] = None
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.stderr is not None and self.stderr < 0:
            raise ValueError("stderr must be nonnegative")


def write_curve_csv(path, years, values, labels=("year", "value")):
    """Write a (year, value) curve as CSV, floats with 6 significant digits."""
    years = np.asarray(years)
    values = np.asarray(values)
    if years.shape != values.shape:
        raise ValueError("years and values must have equal length")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(labels)
        for y, v in zip(years, values):
            w.writerow([int(y), f"{float(v):.6g}"])
