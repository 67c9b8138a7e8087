"""Correlation-matrix PCA for candidate sets.

The eigendecomposition is a cyclic Jacobi iteration on the correlation matrix,
run until the off-diagonal Frobenius norm drops to 1e-12. Eigenvectors carry a
fixed sign (largest absolute entry positive) so two fits on the same data give
the same weights.
"""
import logging
import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from errors import DegenerateError, DomainError, InsufficientCandidatesError
from stats_core import column_ranks, insertion_ranks_sorted

logger = logging.getLogger(__name__)

MIN_ROWS = 20
TRIM_FRACTION = 0.025
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100


class Transform(str, Enum):
    identity = "identity"
    signed_fifth_root = "signed_fifth_root"
    ranks = "ranks"
    trim = "trim"


class TrimStats(str, Enum):
    trimmed = "trimmed"
    full = "full"


@dataclass(frozen=True)
class PcCountRule:
    kind: str  # fixed | explain | above_mean
    value: float = 0.0

    def __post_init__(self):
        if self.kind == "explain" and not 0.0 < self.value < 1.0:
            raise DomainError(f"explained-variance threshold must be in (0, 1), got {self.value}")
        if self.kind == "fixed" and (self.value < 1 or self.value != int(self.value)):
            raise DomainError(f"fixed component count must be a positive integer, got {self.value}")
        if self.kind not in ("fixed", "explain", "above_mean"):
            raise DomainError(f"unknown PC rule '{self.kind}'")

    @classmethod
    def parse(cls, text) -> "PcCountRule":
        """'2', '3', '75%', '0.9', 'mean'."""
        if isinstance(text, PcCountRule):
            return text
        text = str(text).strip().lower()
        if text in ("mean", "above_mean", "var_mu"):
            return cls("above_mean")
        if text.endswith("%"):
            return cls("explain", float(text[:-1]) / 100.0)
        number = float(text)
        if number < 1.0:
            return cls("explain", number)
        return cls("fixed", number)

    @property
    def label(self) -> str:
        if self.kind == "fixed":
            return str(int(self.value))
        if self.kind == "explain":
            return f"{self.value * 100:g}%"
        return "mean"


PC_RULES = ("2", "3", "75%", "90%", "mean")


@dataclass(frozen=True)
class PreTransformed:
    matrix: np.ndarray
    x0: np.ndarray
    retained: np.ndarray


@dataclass(frozen=True)
class PcaModel:
    means: np.ndarray
    stds: np.ndarray
    weights: np.ndarray
    eigenvalues: np.ndarray
    n_components: int
    columns: np.ndarray  # retained input columns
    n_inputs: int
    transform: Transform = Transform.identity

    @property
    def explained(self) -> np.ndarray:
        return self.eigenvalues / self.eigenvalues.sum()


def signed_fifth_root(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.sign(x) * np.abs(x) ** 0.2


def trim_mask(data: np.ndarray, fraction: float = TRIM_FRACTION) -> np.ndarray:
    """True for rows that sit in the outer `fraction` of no column."""
    n = data.shape[0]
    k = math.floor(fraction * n + 1e-9)
    keep = np.ones(n, dtype=bool)
    if k == 0:
        return keep
    for j in range(data.shape[1]):
        order = np.argsort(data[:, j], kind="stable")
        keep[order[:k]] = False
        keep[order[n - k:]] = False
    return keep


def transform_target(x0: np.ndarray, transform: Transform, sorted_columns: Optional[np.ndarray] = None) -> np.ndarray:
    x0 = np.asarray(x0, dtype=float)
    if transform is Transform.signed_fifth_root:
        return signed_fifth_root(x0)
    if transform is Transform.ranks:
        return np.array([insertion_ranks_sorted(sorted_columns[:, j], x0[j:j + 1])[0] for j in range(x0.size)])
    return x0.copy()


def pre_transform(data: np.ndarray, x0: np.ndarray, transform: Transform) -> PreTransformed:
    data = np.asarray(data, dtype=float)
    transform = Transform(transform)
    if data.ndim != 2:
        raise DomainError("candidate data must be a 2-d matrix")
    n, kappa = data.shape
    if n < MIN_ROWS:
        raise InsufficientCandidatesError(f"PCA needs at least {MIN_ROWS} candidates, got {n}")
    if kappa < 2:
        raise DomainError(f"PCA needs at least 2 reference variables, got {kappa}")
    if np.isnan(data).any() or np.isnan(x0).any():
        raise DomainError("PCA input contains missing values")
    everyone = np.arange(n)
    if transform is Transform.identity:
        return PreTransformed(data.copy(), np.asarray(x0, dtype=float).copy(), everyone)
    if transform is Transform.signed_fifth_root:
        return PreTransformed(signed_fifth_root(data), signed_fifth_root(x0), everyone)
    if transform is Transform.ranks:
        sorted_columns = np.sort(data, axis=0)
        return PreTransformed(column_ranks(data), transform_target(x0, transform, sorted_columns), everyone)
    keep = trim_mask(data)
    retained = np.flatnonzero(keep)
    if retained.size < MIN_ROWS:
        raise DegenerateError(f"trimming left {retained.size} candidates, need {MIN_ROWS}")
    return PreTransformed(data[retained], np.asarray(x0, dtype=float).copy(), retained)


def jacobi_eigh(matrix: np.ndarray, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS) -> Tuple[np.ndarray, np.ndarray]:
    """Eigenvalues and eigenvectors (columns) of a symmetric matrix by cyclic Jacobi rotations."""
    a = np.array(matrix, dtype=float)
    n = a.shape[0]
    v = np.eye(n)
    for _ in range(max_sweeps):
        off = math.sqrt(max(0.0, float(np.sum(a * a) - np.sum(np.diag(a) ** 2))))
        if off <= tol:
            break
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if apq == 0.0:
                    continue
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if theta >= 0:
                    t = 1.0 / (theta + math.hypot(1.0, theta))
                else:
                    t = -1.0 / (-theta + math.hypot(1.0, theta))
                c = 1.0 / math.sqrt(1.0 + t * t)
                s = t * c
                col_p, col_q = a[:, p].copy(), a[:, q].copy()
                a[:, p] = c * col_p - s * col_q
                a[:, q] = s * col_p + c * col_q
                row_p, row_q = a[p, :].copy(), a[q, :].copy()
                a[p, :] = c * row_p - s * row_q
                a[q, :] = s * row_p + c * row_q
                a[p, q] = a[q, p] = 0.0
                vec_p, vec_q = v[:, p].copy(), v[:, q].copy()
                v[:, p] = c * vec_p - s * vec_q
                v[:, q] = s * vec_p + c * vec_q
    else:
        logger.warning("Jacobi iteration stopped after %d sweeps without reaching tolerance %g", max_sweeps, tol)
    return np.diag(a).copy(), v


def _orient(weights: np.ndarray) -> np.ndarray:
    weights = weights.copy()
    for j in range(weights.shape[1]):
        i = int(np.argmax(np.abs(weights[:, j])))
        if weights[i, j] < 0:
            weights[:, j] = -weights[:, j]
    return weights


def fit(transformed: np.ndarray, transform: Transform = Transform.identity, rule: Optional[PcCountRule] = None) -> PcaModel:
    x = np.asarray(transformed, dtype=float)
    means = x.mean(axis=0)
    stds = x.std(axis=0)
    scale = np.maximum(1.0, np.abs(means))
    varying = stds > 1e-12 * scale
    if not varying.any():
        raise DegenerateError("every reference variable is constant on the candidate set")
    if not varying.all():
        logger.warning("dropping constant PCA columns %s", np.flatnonzero(~varying).tolist())
    columns = np.flatnonzero(varying)
    means, stds = means[columns], stds[columns]
    z = (x[:, columns] - means) / stds
    corr = z.T @ z / z.shape[0]
    corr = (corr + corr.T) / 2.0
    eigenvalues, vectors = jacobi_eigh(corr)
    order = np.argsort(-eigenvalues, kind="stable")
    eigenvalues = np.clip(eigenvalues[order], 0.0, None)
    weights = _orient(vectors[:, order])
    model = PcaModel(
        means=means,
        stds=stds,
        weights=weights,
        eigenvalues=eigenvalues,
        n_components=int(columns.size),
        columns=columns,
        n_inputs=x.shape[1],
        transform=Transform(transform),
    )
    if rule is not None:
        model = replace(model, n_components=select_count(eigenvalues, rule))
    return model


def select_count(eigenvalues: np.ndarray, rule: PcCountRule) -> int:
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    rule = PcCountRule.parse(rule)
    total = eigenvalues.sum()
    if total <= 0:
        raise DegenerateError("eigenvalues sum to zero")
    if rule.kind == "fixed":
        return int(min(int(rule.value), eigenvalues.size))
    if rule.kind == "explain":
        share = np.cumsum(eigenvalues) / total
        return int(np.argmax(share >= rule.value - 1e-12)) + 1
    return max(1, int(np.sum(eigenvalues > eigenvalues.mean())))


def project(model: PcaModel, rows: np.ndarray, x0: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    rows = np.asarray(rows, dtype=float)
    x0 = np.asarray(x0, dtype=float)
    if rows.ndim != 2 or rows.shape[1] != model.n_inputs or x0.shape != (model.n_inputs,):
        raise DomainError(f"projection expects {model.n_inputs} columns, got {rows.shape} and {x0.shape}")
    w = model.weights[:, :model.n_components]
    scores = ((rows[:, model.columns] - model.means) / model.stds) @ w
    target = ((x0[model.columns] - model.means) / model.stds) @ w
    return scores, target


@dataclass(frozen=True)
class CandidateRotation:
    """A PCA fitted once on a candidate set; any number of targets can be projected against it."""

    model: PcaModel
    scores: np.ndarray
    sorted_columns: Optional[np.ndarray]

    def target_scores(self, x0: np.ndarray) -> np.ndarray:
        x0 = transform_target(x0, self.model.transform, self.sorted_columns)
        w = self.model.weights[:, :self.model.n_components]
        return ((x0[self.model.columns] - self.model.means) / self.model.stds) @ w


def rotate_candidates(
    data: np.ndarray,
    transform: Transform,
    rule: PcCountRule,
    trim_stats: TrimStats = TrimStats.trimmed,
) -> CandidateRotation:
    data = np.asarray(data, dtype=float)
    transform = Transform(transform)
    dummy = np.zeros(data.shape[1]) if data.ndim == 2 else np.zeros(0)
    prepared = pre_transform(data, dummy, transform)
    model = fit(prepared.matrix, transform, rule)
    if transform is Transform.trim:
        if TrimStats(trim_stats) is TrimStats.full:
            model = replace(model, means=data[:, model.columns].mean(axis=0), stds=data[:, model.columns].std(axis=0))
        rows = data
    else:
        rows = prepared.matrix
    scores, _ = project(model, rows, dummy)
    sorted_columns = np.sort(data, axis=0) if transform is Transform.ranks else None
    return CandidateRotation(model=model, scores=scores, sorted_columns=sorted_columns)
