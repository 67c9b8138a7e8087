"""Rank, ECDF and empirical quantile kernels.

Ties are midranked and quantiles are the left-continuous inverse of the ECDF
(order statistic at index ceil(alpha * n)). NaN never enters a kernel: it is
rejected up front because its sort position is not meaningful.
"""
import math
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.stats import rankdata

from errors import DomainError

ArrayLike = Union[Sequence[float], np.ndarray]

# alpha * n values closer than this to an integer are treated as that integer
_INDEX_EPS = 1e-9


def _as_clean_array(sample: ArrayLike, what: str = "sample") -> np.ndarray:
    values = np.asarray(sample, dtype=float).ravel()
    if values.size == 0:
        raise DomainError(f"{what} is empty")
    if np.isnan(values).any():
        raise DomainError(f"{what} contains NaN")
    return values


@dataclass(frozen=True)
class RankVector:
    values: np.ndarray
    n: int


@dataclass(frozen=True)
class Ecdf:
    sorted_sample: np.ndarray
    n: int

    @classmethod
    def from_sample(cls, sample: ArrayLike) -> "Ecdf":
        values = np.sort(_as_clean_array(sample), kind="stable")
        values.setflags(write=False)
        return cls(sorted_sample=values, n=int(values.size))

    def __call__(self, y: float) -> float:
        return ecdf_eval(self, y)

    def left_limit(self, y: float) -> float:
        """F(y-), the mass strictly below y."""
        return float(np.searchsorted(self.sorted_sample, y, side="left")) / self.n

    def quantile(self, alpha: float) -> float:
        return empirical_quantile(self, alpha)


def ranks(sample: ArrayLike) -> RankVector:
    values = _as_clean_array(sample)
    return RankVector(values=rankdata(values, method="average"), n=int(values.size))


def column_ranks(matrix: np.ndarray) -> np.ndarray:
    """Midranks of every column of a 2-d array."""
    matrix = np.asarray(matrix, dtype=float)
    if matrix.size and np.isnan(matrix).any():
        raise DomainError("matrix contains NaN")
    return rankdata(matrix, method="average", axis=0)


def insertion_rank(sample: ArrayLike, x: float) -> float:
    values = np.sort(_as_clean_array(sample))
    return float(insertion_ranks_sorted(values, np.array([x]))[0])


def insertion_ranks_sorted(sorted_values: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Vectorised insertion rank of each x against an already sorted sample."""
    below = np.searchsorted(sorted_values, xs, side="left")
    ties = np.searchsorted(sorted_values, xs, side="right") - below
    return 1.0 + below + 0.5 * ties


def ecdf_eval(ecdf: Ecdf, y: float) -> float:
    return float(np.searchsorted(ecdf.sorted_sample, y, side="right")) / ecdf.n


def order_index(alpha: float, n: int) -> int:
    """1-based index of the order statistic returned for level alpha."""
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"quantile level {alpha} outside (0, 1]")
    return min(n, max(1, math.ceil(alpha * n - _INDEX_EPS)))


def empirical_quantile(ecdf: Ecdf, alpha: float) -> float:
    return float(ecdf.sorted_sample[order_index(alpha, ecdf.n) - 1])


def empirical_quantiles(sorted_values: np.ndarray, levels: Sequence[float]) -> np.ndarray:
    n = sorted_values.size
    if n == 0:
        raise DomainError("sample is empty")
    idx = [order_index(a, n) - 1 for a in levels]
    return sorted_values[idx]
