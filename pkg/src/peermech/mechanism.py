"""Score selection by expected-reward maximization and marginal-contribution transfers.

The reward for giving score ``x`` to a paper whose true score is ``y`` is
``-(x - y)**2``.  A grader's transfer on a paper is the reward at the score
chosen with her report minus the reward at the score chosen without it.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Hashable, Mapping

import numpy as np

from .assignment import AssignmentPlan
from .estimation import estimate_continuous, estimate_discrete
from .model import (
    ContinuousAccuracy,
    ContinuousModelParams,
    DiscreteAccuracy,
    DiscreteModelParams,
    DomainError,
    GradeMatrix,
    InputError,
    TrueScores,
    posterior_weights_discrete,
)

Prior = ContinuousModelParams | tuple[float, float]


def reward(x: float, y: float) -> float:
    return -((x - y) ** 2)


def _prior_mu_gamma(prior: Prior) -> tuple[float, float]:
    if isinstance(prior, ContinuousModelParams):
        return prior.mu, prior.gamma
    mu, gamma = prior
    return float(mu), float(gamma)


def erm_score_continuous(
    reports: Mapping[Hashable, float], accs: Mapping[Hashable, ContinuousAccuracy], prior: Prior
) -> float:
    """Posterior mean of the true score: the maximizer of expected quadratic reward."""
    if not reports:
        raise DomainError("paper has no reports")
    mu, gamma = _prior_mu_gamma(prior)
    num = [gamma * mu]
    den = [gamma]
    for i, y_tilde in reports.items():
        a = accs[i]
        num.append(a.tau * (y_tilde - a.bias))
        den.append(a.tau)
    return math.fsum(num) / math.fsum(den)


def _prior_only_continuous(prior: Prior) -> float:
    return _prior_mu_gamma(prior)[0]


def expected_losses_discrete(weights: np.ndarray, m: int) -> np.ndarray:
    """Posterior expected squared loss for every candidate score in ``S``."""
    s = np.arange(m + 1)
    return ((s[:, None] - s[None, :]) ** 2 * weights[None, :]).sum(axis=1)


def _discrete_argmin(reports: list[int], qs: list[float], params: DiscreteModelParams) -> int:
    w = posterior_weights_discrete(reports, qs, params)
    return int(np.argmin(expected_losses_discrete(w, params.m)))


def erm_score_discrete(
    reports: Mapping[Hashable, int], accs: Mapping[Hashable, DiscreteAccuracy], params: DiscreteModelParams
) -> int:
    """Integer score minimizing posterior expected squared loss (ties to the smaller score)."""
    if not reports:
        raise DomainError("paper has no reports")
    for v in reports.values():
        if int(v) != v or not 0 <= v <= params.m:
            raise DomainError(f"score {v!r} outside {{0..{params.m}}}")
    keys = sorted(reports)
    return _discrete_argmin([int(reports[i]) for i in keys], [accs[i].q for i in keys], params)


def erm_score(reports, accs, params):
    if isinstance(params, DiscreteModelParams):
        if not reports:
            return _discrete_argmin([], [], params)
        return erm_score_discrete(reports, accs, params)
    if not reports:
        return _prior_only_continuous(params)
    return erm_score_continuous(reports, accs, params)


def transfer_for_paper(
    reports: Mapping[Hashable, float],
    accs: Mapping,
    params,
    true_score: float,
    grader: Hashable,
) -> float:
    """Marginal contribution ``W* - W^(-i)*`` of ``grader`` on one paper.

    Without co-graders the leave-one-out score falls back to the prior-only
    decision.
    """
    if grader not in reports:
        raise DomainError(f"grader {grader!r} did not grade this paper")
    full = erm_score(reports, accs, params)
    rest = {k: v for k, v in reports.items() if k != grader}
    without = erm_score(rest, accs, params)
    return reward(full, true_score) - reward(without, true_score)


@dataclass
class MechanismOutcome:
    scores: dict
    transfers: dict
    per_paper_transfers: dict
    accuracies: dict = field(default_factory=dict)

    def scores_csv(self, truths: TrueScores) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["paper_id", "score_given", "true_score"])
        for j in sorted(self.scores):
            w.writerow([j, repr(self.scores[j]), repr(truths[j]) if j in truths else ""])
        return buf.getvalue()

    def transfers_csv(self, scale: float = 1.0) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["grader_id", "transfer"])
        for i in sorted(self.transfers):
            w.writerow([i, repr(scale * self.transfers[i])])
        return buf.getvalue()


def estimate_accuracies(plan: AssignmentPlan, grades: GradeMatrix, truths: TrueScores, params) -> dict:
    accs = {}
    for i in plan.graders:
        pairs = [(grades[(i, j)], truths[j]) for j in plan.probes_of(i)]
        if isinstance(params, DiscreteModelParams):
            accs[i] = estimate_discrete(pairs, params)
        else:
            accs[i] = estimate_continuous(pairs)
    return accs


def _check_inputs(plan: AssignmentPlan, grades: GradeMatrix, truths: TrueScores) -> None:
    missing = [(i, j) for i, j, _ in plan.edges() if (i, j) not in grades.entries]
    if missing:
        shown = ", ".join(map(str, missing[:20]))
        more = f" (+{len(missing) - 20} more)" if len(missing) > 20 else ""
        raise InputError(f"missing grades for {len(missing)} edges: {shown}{more}")
    absent = [j for j in plan.papers if plan.per_paper.get(j) and j not in truths]
    if absent:
        raise InputError(f"missing true scores for papers {absent[:20]}")


def _paper_continuous(ids, ys, accs, mu, gamma, y_true):
    taus = [accs[i].tau for i in ids]
    terms = [accs[i].tau * (v - accs[i].bias) for i, v in zip(ids, ys)]
    x = math.fsum([gamma * mu, *terms]) / math.fsum([gamma, *taus])
    w_full = reward(x, y_true)
    out = {}
    for k, i in enumerate(ids):
        num = math.fsum([gamma * mu, *terms[:k], *terms[k + 1:]])
        den = math.fsum([gamma, *taus[:k], *taus[k + 1:]])
        out[i] = w_full - reward(num / den, y_true)
    return x, out


def run_trupeqa(plan: AssignmentPlan, grades: GradeMatrix, truths: TrueScores, params) -> MechanismOutcome:
    """Estimate accuracies on probes, score non-probe papers, pay marginal contributions."""
    _check_inputs(plan, grades, truths)
    accs = estimate_accuracies(plan, grades, truths, params)
    scores: dict = {}
    per_paper: dict = {}
    discrete = isinstance(params, DiscreteModelParams)
    if not discrete:
        mu, gamma = _prior_mu_gamma(params)
    for j, graders in plan.scoring_graders.items():
        ids = list(graders)
        ys = [grades[(i, j)] for i in ids]
        if discrete:
            reports = dict(zip(ids, ys))
            x = erm_score_discrete(reports, accs, params)
            for i in ids:
                per_paper[(i, j)] = transfer_for_paper(reports, accs, params, truths[j], i)
        else:
            x, contrib = _paper_continuous(ids, ys, accs, mu, gamma, truths[j])
            for i, t in contrib.items():
                per_paper[(i, j)] = t
        scores[j] = x
    transfers = {}
    for i in plan.graders:
        transfers[i] = math.fsum(per_paper[(i, j)] for j in sorted(plan.nonprobes_of(i)))
    return MechanismOutcome(scores, transfers, per_paper, accs)
