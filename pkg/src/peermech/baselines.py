"""Comparison aggregators: mean, median, and Gibbs sampling on the bias/reliability model.

All baselines look only at non-probe reports; they have no estimation step.
"""

from __future__ import annotations

import statistics
from dataclasses import dataclass

import numpy as np

from .assignment import AssignmentPlan
from .model import (
    ContinuousModelParams,
    DiscreteModelParams,
    DomainError,
    GradeMatrix,
    discrete_normalizer,
)


@dataclass(frozen=True)
class GibbsConfig:
    total_iterations: int = 1000
    burn_in: int = 200
    seed: int | np.random.SeedSequence | None = 0

    def __post_init__(self) -> None:
        if self.total_iterations < 1:
            raise ValueError("total_iterations must be >= 1")
        if not 0 <= self.burn_in < self.total_iterations:
            raise ValueError("burn_in must satisfy 0 <= burn_in < total_iterations")


def _reports_by_paper(plan: AssignmentPlan, grades: GradeMatrix) -> dict:
    out = {}
    for j, graders in plan.scoring_graders.items():
        vals = [grades[(i, j)] for i in graders]
        if not vals:
            raise DomainError(f"paper {j} has no reports")
        out[j] = vals
    return out


def mean_scores(plan: AssignmentPlan, grades: GradeMatrix) -> dict:
    return {j: statistics.fmean(v) for j, v in _reports_by_paper(plan, grades).items()}


def median_scores(plan: AssignmentPlan, grades: GradeMatrix) -> dict:
    """Per-paper median; an even count averages the two middle reports."""
    return {j: float(statistics.median(v)) for j, v in _reports_by_paper(plan, grades).items()}


class _EdgeArrays:
    """Non-probe reports flattened to index arrays for vectorized sampling."""

    def __init__(self, plan: AssignmentPlan, grades: GradeMatrix):
        self.papers = plan.scored_papers
        pidx = {j: k for k, j in enumerate(self.papers)}
        graders = sorted({i for g in plan.scoring_graders.values() for i in g})
        self.graders = graders
        gidx = {i: k for k, i in enumerate(graders)}
        gi, pj, v = [], [], []
        for j, gs in plan.scoring_graders.items():
            for i in gs:
                gi.append(gidx[i])
                pj.append(pidx[j])
                v.append(grades[(i, j)])
        self.gi = np.asarray(gi, dtype=np.intp)
        self.pj = np.asarray(pj, dtype=np.intp)
        self.v = np.asarray(v, dtype=float)
        self.n_papers = len(self.papers)
        self.n_graders = len(graders)
        self.grader_counts = np.bincount(self.gi, minlength=self.n_graders).astype(float)


def gibbs_continuous_samples(
    plan: AssignmentPlan, grades: GradeMatrix, params: ContinuousModelParams, cfg: GibbsConfig
) -> tuple[list, np.ndarray]:
    """Retained true-score draws, shape ``(T - B, n_papers)``.

    Full conditionals are the conjugate Normal/Normal/Gamma updates.
    """
    e = _EdgeArrays(plan, grades)
    rng = np.random.default_rng(cfg.seed)
    mu, gamma, eta = params.mu, params.gamma, params.eta
    y = np.bincount(e.pj, e.v, e.n_papers) / np.bincount(e.pj, minlength=e.n_papers)
    b = np.zeros(e.n_graders)
    tau = np.full(e.n_graders, params.alpha / params.beta)
    shape = params.alpha + e.grader_counts / 2.0
    kept = np.empty((cfg.total_iterations - cfg.burn_in, e.n_papers))
    for t in range(1, cfg.total_iterations + 1):
        te = tau[e.gi]
        prec = gamma + np.bincount(e.pj, te, e.n_papers)
        mean = (gamma * mu + np.bincount(e.pj, te * (e.v - b[e.gi]), e.n_papers)) / prec
        y = mean + rng.standard_normal(e.n_papers) / np.sqrt(prec)

        prec_b = eta + e.grader_counts * tau
        mean_b = tau * np.bincount(e.gi, e.v - y[e.pj], e.n_graders) / prec_b
        b = mean_b + rng.standard_normal(e.n_graders) / np.sqrt(prec_b)

        resid = e.v - y[e.pj] - b[e.gi]
        rate = params.beta + 0.5 * np.bincount(e.gi, resid * resid, e.n_graders)
        tau = rng.gamma(shape, 1.0 / rate)
        if t > cfg.burn_in:
            kept[t - cfg.burn_in - 1] = y
    return e.papers, kept


def gibbs_continuous(
    plan: AssignmentPlan, grades: GradeMatrix, params: ContinuousModelParams, cfg: GibbsConfig
) -> dict:
    papers, kept = gibbs_continuous_samples(plan, grades, params, cfg)
    est = kept.mean(axis=0)
    return {j: float(x) for j, x in zip(papers, est)}


def _sample_rows(logw: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    return _sample_pmf(np.exp(logw - logw.max(axis=1, keepdims=True)), rng)


def _sample_pmf(w: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of (possibly unnormalized) weights."""
    cdf = np.cumsum(w, axis=1)
    u = rng.random(len(w)) * cdf[:, -1]
    idx = (cdf < u[:, None]).sum(axis=1)
    return np.minimum(idx, w.shape[1] - 1)


def score_conditional_discrete(e_q, e_v, e_pj, n_papers, params: DiscreteModelParams) -> np.ndarray:
    """Normalized conditional PMF of every paper's true score given grader accuracies."""
    s = params.scores
    log_prior = params.log_prior
    logw = np.tile(log_prior, (n_papers, 1))
    for k in s:
        contrib = -e_q * np.abs(k - e_v) / params.m
        if params.normalized:
            contrib = contrib - np.log(discrete_normalizer(k, e_q, params.m))
        logw[:, k] += np.bincount(e_pj, contrib, n_papers)
    w = np.exp(logw - logw.max(axis=1, keepdims=True))
    return w / w.sum(axis=1, keepdims=True)


def gibbs_discrete_samples(
    plan: AssignmentPlan, grades: GradeMatrix, params: DiscreteModelParams, cfg: GibbsConfig
) -> tuple[list, np.ndarray]:
    """Per-paper histogram of retained true-score draws, shape ``(n_papers, m + 1)``.

    Alternates the score conditional and the accuracy conditional (uniform
    prior over the grid).  Accuracies start uniformly over the grid.
    """
    e = _EdgeArrays(plan, grades)
    rng = np.random.default_rng(cfg.seed)
    m = params.m
    grid = np.asarray(params.q_grid)
    s = params.scores
    log_prior = params.log_prior
    # log normalizer table indexed [true score, grid point]
    log_z = np.log(discrete_normalizer(s[:, None], grid[None, :], m))

    qi = rng.integers(len(grid), size=e.n_graders)
    y = _sample_rows(np.tile(log_prior, (e.n_papers, 1)), rng)
    counts = np.zeros((e.n_papers, m + 1), dtype=np.int64)
    for t in range(1, cfg.total_iterations + 1):
        pmf = score_conditional_discrete(grid[qi][e.gi], e.v, e.pj, e.n_papers, params)
        y = _sample_pmf(pmf, rng)

        dist = np.bincount(e.gi, np.abs(y[e.pj] - e.v), e.n_graders) / m
        logq = -dist[:, None] * grid[None, :]
        if params.normalized:
            score_counts = np.zeros((e.n_graders, m + 1))
            np.add.at(score_counts, (e.gi, y[e.pj]), 1.0)
            logq = logq - score_counts @ log_z
        qi = _sample_rows(logq, rng)
        if t > cfg.burn_in:
            counts[np.arange(e.n_papers), y] += 1
    return e.papers, counts


def gibbs_discrete(
    plan: AssignmentPlan, grades: GradeMatrix, params: DiscreteModelParams, cfg: GibbsConfig
) -> dict:
    """Mode of the retained draws per paper (ties to the smaller score)."""
    papers, counts = gibbs_discrete_samples(plan, grades, params, cfg)
    return {j: int(np.argmax(c)) for j, c in zip(papers, counts)}
