"""Per-grader accuracy estimation from probe papers (maximum likelihood)."""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from .model import (
    TAU_CAP,
    ContinuousAccuracy,
    DiscreteAccuracy,
    DiscreteModelParams,
    DomainError,
    EstimationError,
    discrete_normalizer,
)

TIE_TOLERANCE = 1e-12


def estimate_continuous(reports: Iterable[tuple[float, float]], tau_cap: float = TAU_CAP) -> ContinuousAccuracy:
    """Closed-form MLE of (bias, reliability) from ``(reported, true)`` probe pairs.

    bias = mean(reported - true); reliability = count / sum of squared
    de-biased residuals, capped at ``tau_cap``.
    """
    pairs = list(reports)
    if len(pairs) < 2:
        raise EstimationError(f"need at least 2 probe pairs, got {len(pairs)}")
    diffs = []
    for y_tilde, y in pairs:
        if not (math.isfinite(y_tilde) and math.isfinite(y)):
            raise DomainError(f"non-finite probe pair {(y_tilde, y)!r}")
        diffs.append(y_tilde - y)
    bias = math.fsum(diffs) / len(diffs)
    sse = math.fsum((d - bias) ** 2 for d in diffs)
    tau = tau_cap if sse <= len(diffs) / tau_cap else len(diffs) / sse
    return ContinuousAccuracy(bias=bias, tau=tau)


def discrete_log_likelihood(pairs, params: DiscreteModelParams) -> np.ndarray:
    """Log-likelihood of the probe pairs at every grid accuracy."""
    q = np.asarray(params.q_grid)
    ll = np.zeros_like(q)
    for y_tilde, y in pairs:
        ll -= q * abs(y_tilde - y) / params.m
        ll -= np.log(discrete_normalizer(y, q, params.m))
    return ll


def estimate_discrete(reports: Iterable[tuple[int, int]], params: DiscreteModelParams) -> DiscreteAccuracy:
    """Grid accuracy maximizing the probe likelihood; ties go to the smallest q."""
    pairs = list(reports)
    if not pairs:
        raise EstimationError("no probe pairs")
    for y_tilde, y in pairs:
        for v in (y_tilde, y):
            if int(v) != v or not 0 <= v <= params.m:
                raise DomainError(f"score {v!r} outside {{0..{params.m}}}")
    # Sorting makes the floating-point accumulation order-independent.
    pairs.sort()
    ll = discrete_log_likelihood(pairs, params)
    # Mathematically tied grid points can differ by rounding; treat them as tied.
    best = ll.max()
    tied = ll >= best - TIE_TOLERANCE * max(1.0, abs(best))
    return DiscreteAccuracy(q=params.q_grid[int(np.argmax(tied))])
