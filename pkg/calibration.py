"""PIT samples and calibration scores (absolute quantile difference, KS, CvM)."""
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from errors import DomainError
from stats_core import empirical_quantiles

DEFAULT_LEVELS = (0.01, 0.05, 0.10, 0.25, 0.50, 0.75, 0.90, 0.95, 0.99)


class PitSample:
    """Mergeable multiset of PIT values in [0, 1]."""

    def __init__(self, values: Iterable[float] = ()):
        self._chunks = []
        self._sorted = None
        self.add(values)

    def add(self, values) -> "PitSample":
        values = np.atleast_1d(np.asarray(values, dtype=float)).ravel()
        if values.size == 0:
            return self
        if np.isnan(values).any() or (values < 0.0).any() or (values > 1.0).any():
            raise DomainError("PIT values must lie in [0, 1]")
        self._chunks.append(values)
        self._sorted = None
        return self

    @property
    def values(self) -> np.ndarray:
        """Sorted PIT values; the order of additions never shows."""
        if self._sorted is None:
            merged = np.concatenate(self._chunks) if self._chunks else np.empty(0)
            self._sorted = np.sort(merged, kind="stable")
            self._chunks = [self._sorted] if merged.size else []
        return self._sorted

    @property
    def m(self) -> int:
        return int(self.values.size)

    def __len__(self):
        return self.m

    def merge(self, other: "PitSample") -> "PitSample":
        return merge(self, other)

    def histogram(self, bins: int = 10) -> np.ndarray:
        """Counts per equal-width bin of [0, 1]; the last bin is closed."""
        if bins < 1:
            raise DomainError(f"bins must be >= 1, got {bins}")
        counts, _ = np.histogram(self.values, bins=bins, range=(0.0, 1.0))
        return counts


def merge(a: PitSample, b: PitSample) -> PitSample:
    out = PitSample()
    out.add(a.values)
    out.add(b.values)
    return out


def _require(sample: PitSample) -> np.ndarray:
    values = sample.values
    if values.size == 0:
        raise DomainError("PIT sample is empty")
    return values


def delta_q(sample: PitSample, levels: Sequence[float] = DEFAULT_LEVELS) -> float:
    values = _require(sample)
    levels = np.asarray(levels, dtype=float)
    if levels.size == 0 or (np.diff(levels) <= 0).any() or levels[0] <= 0.0 or levels[-1] >= 1.0:
        raise DomainError("quantile levels must be strictly increasing inside (0, 1)")
    return float(np.abs(empirical_quantiles(values, levels) - levels).sum())


def ks_stat(sample: PitSample) -> float:
    p = _require(sample)
    m = p.size
    i = np.arange(1, m + 1)
    gap = np.maximum(i / m - p, p - (i - 1) / m)
    return math.sqrt(m) * float(gap.max())


def cvm_stat(sample: PitSample) -> float:
    p = _require(sample)
    m = p.size
    i = np.arange(1, m + 1)
    return 1.0 / (12.0 * m) + float(np.sum((p - (2 * i - 1) / (2.0 * m)) ** 2))


def max_delta_q(levels: Sequence[float] = DEFAULT_LEVELS) -> float:
    return float(sum(max(a, 1.0 - a) for a in levels))


@dataclass(frozen=True)
class CalibrationReport:
    m: int
    delta_q: float
    ks: float
    cvm: float
    levels: tuple = DEFAULT_LEVELS

    @property
    def usable(self) -> bool:
        return self.m > 0

    def as_dict(self) -> dict:
        return {"dq": self.delta_q, "ks": self.ks, "cvm": self.cvm, "m": self.m}


def report(sample: PitSample, levels: Sequence[float] = DEFAULT_LEVELS) -> CalibrationReport:
    if sample.m == 0:
        return CalibrationReport(0, math.nan, math.nan, math.nan, tuple(levels))
    return CalibrationReport(sample.m, delta_q(sample, levels), ks_stat(sample), cvm_stat(sample), tuple(levels))
