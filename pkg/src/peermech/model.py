"""Shared domain types and the two grader error models.

Continuous scores follow a Gaussian prior with a per-grader additive bias
and a reliability (noise precision).  Discrete scores live on ``{0, ..., m}``
and each grader has a single accuracy ``q`` controlling an
exponential-distance error kernel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np

# Caps the closed-form reliability when a grader's probe residuals vanish.
TAU_CAP = 1e8


class DomainError(ValueError):
    """Raised when an input lies outside the score or parameter domain."""


class EstimationError(ValueError):
    """Raised when an accuracy cannot be estimated from the supplied probes."""


class InputError(ValueError):
    """Raised when collections passed to a mechanism are inconsistent."""


def _require_finite(*values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise DomainError(f"non-finite value {v!r}")


@dataclass(frozen=True)
class ContinuousModelParams:
    """Gaussian prior on true scores plus the grader-parameter priors.

    ``gamma`` and ``eta`` are precisions; reliabilities follow
    ``Gamma(alpha, rate=beta)``.
    """

    mu: float = 1.0
    gamma: float = 16.0
    eta: float = 400.0
    alpha: float = 25.0
    beta: float = 0.01

    def __post_init__(self) -> None:
        _require_finite(self.mu, self.gamma, self.eta, self.alpha, self.beta)
        for name in ("gamma", "eta", "alpha", "beta"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be positive, got {getattr(self, name)}")

    @classmethod
    def with_mean_reliability(cls, mean_reliability: float, shape: float = 25.0, **kw) -> "ContinuousModelParams":
        return cls(alpha=shape, beta=shape / mean_reliability, **kw)

    @property
    def mean_reliability(self) -> float:
        return self.alpha / self.beta


def default_q_grid(points: int = 100, upper: float = 16.0) -> tuple[float, ...]:
    return tuple(float(v) for v in np.linspace(0.0, upper, points))


@dataclass(frozen=True)
class DiscreteModelParams:
    """Discrete score model on ``S = {0, ..., m}``.

    ``normalized`` selects whether score aggregation and Gibbs sampling use the
    normalized error PMF or the bare kernel ``exp(-q|d|/m)``.  Accuracy
    estimation always uses the normalized PMF.
    """

    m: int = 4
    q_grid: tuple[float, ...] = field(default_factory=default_q_grid)
    score_prior: tuple[float, ...] | None = None
    normalized: bool = False

    def __post_init__(self) -> None:
        if int(self.m) != self.m or self.m < 1:
            raise DomainError(f"m must be an integer >= 1, got {self.m}")
        grid = tuple(float(v) for v in self.q_grid)
        if not grid or any(v < 0 for v in grid) or any(b <= a for a, b in zip(grid, grid[1:])):
            raise DomainError("q_grid must be non-empty, non-negative and strictly increasing")
        object.__setattr__(self, "q_grid", grid)
        prior = self.score_prior
        if prior is None:
            prior = tuple([1.0 / (self.m + 1)] * (self.m + 1))
        prior = tuple(float(p) for p in prior)
        if len(prior) != self.m + 1 or any(p < 0 for p in prior):
            raise DomainError("score_prior must have m+1 non-negative entries")
        if abs(math.fsum(prior) - 1.0) > 1e-12:
            raise DomainError(f"score_prior sums to {math.fsum(prior)!r}, expected 1")
        object.__setattr__(self, "score_prior", prior)

    @property
    def scores(self) -> np.ndarray:
        return np.arange(self.m + 1)

    @property
    def log_prior(self) -> np.ndarray:
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(self.score_prior))


@dataclass(frozen=True)
class ContinuousAccuracy:
    bias: float
    tau: float

    def __post_init__(self) -> None:
        _require_finite(self.bias, self.tau)
        if self.tau <= 0:
            raise DomainError(f"reliability must be positive, got {self.tau}")


@dataclass(frozen=True)
class DiscreteAccuracy:
    q: float


AccuracyEstimate = ContinuousAccuracy | DiscreteAccuracy


def continuous_error_density(y_tilde: float, y: float, acc: ContinuousAccuracy) -> float:
    """Normal density of an observed score around ``y + bias``."""
    _require_finite(y_tilde, y)
    r = y_tilde - y - acc.bias
    return math.sqrt(acc.tau / (2.0 * math.pi)) * math.exp(-0.5 * acc.tau * r * r)


def _check_score(v, m: int) -> None:
    if int(v) != v or not 0 <= v <= m:
        raise DomainError(f"score {v!r} outside {{0..{m}}}")


def discrete_kernel(distance, q, m: int):
    """Unnormalized error weight ``exp(-q * |distance| / m)`` (broadcasts)."""
    return np.exp(-np.multiply(q, np.abs(distance)) / m)


def discrete_normalizer(y, q, m: int):
    """Sum of the error kernel over all observable scores for true score ``y``."""
    z = np.arange(m + 1)
    y = np.asarray(y)[..., None]
    q = np.asarray(q)[..., None]
    return discrete_kernel(z - y, q, m).sum(axis=-1)


def discrete_error_pmf(y_tilde: int, y: int, q: float, m: int) -> float:
    _check_score(y_tilde, m)
    _check_score(y, m)
    if q < 0 or not math.isfinite(q):
        raise DomainError(f"accuracy must be finite and >= 0, got {q!r}")
    num = math.exp(-q * abs(y_tilde - y) / m)
    den = math.fsum(math.exp(-q * abs(z - y) / m) for z in range(m + 1))
    return num / den


@dataclass(frozen=True)
class GradeMatrix:
    """Sparse reported scores keyed by ``(grader_id, paper_id)``.

    ``probe_edges`` marks which entries belong to the grader's probe block.
    """

    entries: Mapping[tuple[Hashable, Hashable], float]
    probe_edges: frozenset = frozenset()

    def __len__(self) -> int:
        return len(self.entries)

    def __getitem__(self, edge):
        return self.entries[edge]

    def is_probe(self, grader, paper) -> bool:
        return (grader, paper) in self.probe_edges

    def block(self, probe: bool) -> dict:
        return {e: s for e, s in self.entries.items() if (e in self.probe_edges) == probe}

    def replace(self, updates: Mapping[tuple[Hashable, Hashable], float]) -> "GradeMatrix":
        merged = dict(self.entries)
        merged.update(updates)
        return GradeMatrix(merged, self.probe_edges)


TrueScores = Mapping[Hashable, float]


def posterior_weights_discrete(
    reports: Sequence[int], qs: Sequence[float], params: DiscreteModelParams
) -> np.ndarray:
    """Normalized posterior over ``S`` for one paper given reports and accuracies.

    Uses the bare kernel unless ``params.normalized`` is set.
    """
    s = params.scores
    logw = params.log_prior
    for rep, q in zip(reports, qs):
        logw = logw - q * np.abs(s - rep) / params.m
        if params.normalized:
            logw = logw - np.log(discrete_normalizer(s, q, params.m))
    logw = logw - logw[np.isfinite(logw)].max()
    w = np.exp(logw)
    return w / w.sum()
