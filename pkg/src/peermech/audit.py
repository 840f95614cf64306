"""Monte-Carlo checks of voluntary participation and truthful reporting.

Each replication draws a fresh world, runs the mechanism on truthful
reports and then replays one designated grader's non-probe reports under a
deviation strategy.  Probe reports stay truthful, so the grader's estimated
accuracy is the same in both arms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .mechanism import _paper_continuous, run_trupeqa
from .simulation import (
    _DEVIATION,
    _NOISE,
    _WORLD,
    ExperimentConfig,
    generate_world,
    map_replications,
    replication_seed,
)

STRATEGIES = ("constant", "own_score", "uniform_noise")


def deviate(strategy: str, observed: float, own_score: float, cfg: ExperimentConfig, rng: np.random.Generator) -> float:
    if strategy == "truthful":
        return observed
    if strategy == "constant":
        return cfg.mu
    if strategy == "own_score":
        return min(observed, own_score)
    if strategy == "uniform_noise":
        half = 2.0 / math.sqrt(cfg.gamma)
        return float(rng.uniform(cfg.mu - half, cfg.mu + half))
    raise ValueError(f"unknown strategy {strategy!r}")


def audit_replication(cfg: ExperimentConfig, index: int, extra) -> tuple[np.ndarray, dict]:
    """Per-grader truthful transfers and the designated grader's transfer per strategy."""
    strategies, designated = extra
    world = generate_world(
        cfg,
        replication_seed(cfg.master_seed, _WORLD, index),
        replication_seed(cfg.master_seed, _NOISE, index),
    )
    params = cfg.mechanism_params
    outcome = run_trupeqa(world.plan, world.observations, world.truths, params)
    transfers = np.array([outcome.transfers[i] for i in world.plan.graders])
    accs = outcome.accuracies
    deviated = {}
    for s_idx, strategy in enumerate(strategies):
        rng = np.random.default_rng(replication_seed(cfg.master_seed, _DEVIATION, index, s_idx))
        total = []
        for j in sorted(world.plan.nonprobes_of(designated)):
            ids = list(world.plan.scoring_graders[j])
            ys = []
            for i in ids:
                v = world.observations[(i, j)]
                if i == designated:
                    v = deviate(strategy, v, world.truths[designated], cfg, rng)
                ys.append(v)
            _, contrib = _paper_continuous(ids, ys, accs, params.mu, params.gamma, world.truths[j])
            total.append(contrib[designated])
        deviated[strategy] = math.fsum(total)
    return transfers, deviated


@dataclass
class AuditRow:
    check: str
    strategy: str
    truthful_mean: float
    deviation_mean: float
    difference: float
    se: float
    passed: bool


def run_audit(
    cfg: ExperimentConfig,
    replications: int = 2000,
    strategies: Sequence[str] = STRATEGIES,
    designated: int = 0,
    jobs: int = 1,
) -> tuple[list[AuditRow], dict]:
    """EPIR and EIIC verdicts at three standard errors.

    EPIR passes when every grader's mean transfer is at least ``-3 SE`` and
    the population mean is positive.  A deviation passes when the truthful
    mean is at least the deviation mean minus ``3 * sqrt(se_t**2 + se_d**2)``.
    """
    results = map_replications(audit_replication, cfg, list(range(replications)), (tuple(strategies), designated), jobs)
    transfers = np.stack([r[0] for r in results])
    per_grader_mean = transfers.mean(axis=0)
    per_grader_se = transfers.std(axis=0, ddof=1) / math.sqrt(replications)
    pop_mean = float(transfers.mean())
    worst = int(np.argmin(per_grader_mean / per_grader_se))
    epir_ok = bool(np.all(per_grader_mean >= -3 * per_grader_se)) and pop_mean > 0
    rows = [
        AuditRow("epir", "truthful", pop_mean, 0.0, pop_mean, float(transfers.mean(axis=1).std(ddof=1) / math.sqrt(replications)), epir_ok),
    ]
    truthful = transfers[:, designated]
    t_mean = float(truthful.mean())
    t_se = float(truthful.std(ddof=1) / math.sqrt(replications))
    for strategy in strategies:
        dev = np.array([r[1][strategy] for r in results])
        d_mean = float(dev.mean())
        d_se = float(dev.std(ddof=1) / math.sqrt(replications)) if replications > 1 else 0.0
        se = math.sqrt(t_se**2 + d_se**2)
        rows.append(AuditRow("eiic", strategy, t_mean, d_mean, t_mean - d_mean, se, t_mean >= d_mean - 3 * se))
    detail = {
        "per_grader_mean": per_grader_mean,
        "per_grader_se": per_grader_se,
        "worst_grader": worst,
        "population_mean": pop_mean,
        "paired_differences": {
            s: truthful - np.array([r[1][s] for r in results]) for s in strategies
        },
    }
    return rows, detail
