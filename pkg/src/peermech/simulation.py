"""Synthetic peer-grading worlds, grader behaviors, metrics and seeded replications.

Every replication draws its randomness from a ``SeedSequence`` keyed by
``(master_seed, outer, inner)``, so results do not depend on how many
workers run them or in which order.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .assignment import AssignmentPlan, build_assignment
from .baselines import GibbsConfig, gibbs_continuous, mean_scores, median_scores
from .mechanism import run_trupeqa
from .model import ContinuousModelParams, GradeMatrix, InputError

MECHANISMS = ("trupeqa", "mean", "median", "gibbs")
RELIABILITY_GRID = (625.0, 10000.0 / 9.0, 2500.0, 10000.0)
Z95 = 1.959963984540054

# Stream tags mixed into replication seeds.
_WORLD, _NOISE, _GIBBS, _DEVIATION = 0, 1, 2, 3


class GraderBehavior(str, enum.Enum):
    TRUTHFUL = "truthful"
    STRATEGIC = "strategic"


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 50
    probes: int = 10
    k: int = 10
    mu: float = 1.0
    gamma: float = 16.0
    eta: float = 400.0
    mean_reliability: float = 2500.0
    gamma_shape: float = 25.0
    prior_mu: float | None = None
    prior_gamma: float | None = None
    behavior: GraderBehavior = GraderBehavior.TRUTHFUL
    trupeqa_sees_manipulation: bool = False
    regrade_threshold: float = 0.005
    trials_outer: int = 10
    trials_inner: int = 10
    master_seed: int = 0
    gibbs_iterations: int = 1000
    gibbs_burn_in: int = 200
    inject_tau: float | None = None
    inject_bias: float | None = None

    def __post_init__(self) -> None:
        if self.regrade_threshold <= 0:
            raise ValueError("regrade_threshold must be positive")
        if self.trials_outer < 1 or self.trials_inner < 1:
            raise ValueError("trial counts must be >= 1")
        object.__setattr__(self, "behavior", GraderBehavior(self.behavior))

    @property
    def generation_params(self) -> ContinuousModelParams:
        return ContinuousModelParams.with_mean_reliability(
            self.mean_reliability, shape=self.gamma_shape, mu=self.mu, gamma=self.gamma, eta=self.eta
        )

    @property
    def mechanism_params(self) -> ContinuousModelParams:
        """Generation parameters with the score prior possibly swapped out."""
        gen = self.generation_params
        return replace(
            gen,
            mu=gen.mu if self.prior_mu is None else self.prior_mu,
            gamma=gen.gamma if self.prior_gamma is None else self.prior_gamma,
        )

    @property
    def replications(self) -> int:
        return self.trials_outer * self.trials_inner

    def echo(self) -> dict:
        d = asdict(self)
        d["behavior"] = self.behavior.value
        return d


@dataclass
class World:
    plan: AssignmentPlan
    truths: dict
    bias: np.ndarray
    tau: np.ndarray
    observations: GradeMatrix


@dataclass
class MetricsReport:
    rmse: float
    regrade_fraction: float
    ci_halfwidth_rmse: float = 0.0
    ci_halfwidth_frac: float = 0.0
    metadata: dict = field(default_factory=dict)


def replication_seed(master_seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(master_seed), *map(int, key)])


def generate_world(
    cfg: ExperimentConfig,
    world_seed: np.random.SeedSequence | int,
    noise_seed: np.random.SeedSequence | int | None = None,
) -> World:
    """Draw plan, true scores, grader bias/reliability, then noisy observations.

    The plan and grader parameters depend only on ``world_seed``; the
    observation noise only on ``noise_seed`` (defaults to a child of the
    world seed).
    """
    ws = world_seed if isinstance(world_seed, np.random.SeedSequence) else np.random.SeedSequence(world_seed)
    plan_ss, param_ss, default_noise = ws.spawn(3)
    plan = build_assignment(cfg.n, cfg.probes, cfg.k, plan_ss)
    gen = cfg.generation_params
    rng = np.random.default_rng(param_ss)
    y = rng.normal(gen.mu, 1.0 / math.sqrt(gen.gamma), cfg.n)
    bias = rng.normal(0.0, 1.0 / math.sqrt(gen.eta), cfg.n)
    tau = rng.gamma(gen.alpha, 1.0 / gen.beta, cfg.n)
    if cfg.inject_bias is not None:
        bias[:] = cfg.inject_bias
    if cfg.inject_tau is not None:
        tau[:] = cfg.inject_tau
    nrng = np.random.default_rng(default_noise if noise_seed is None else noise_seed)
    truths = {j: float(y[j]) for j in range(cfg.n)}
    edges = plan.edges()
    noise = nrng.standard_normal(len(edges))
    entries = {}
    probe_edges = set()
    for (i, j, is_probe), z in zip(edges, noise):
        sd = 0.0 if math.isinf(tau[i]) else 1.0 / math.sqrt(tau[i])
        entries[(i, j)] = float(y[j] + bias[i] + sd * z)
        if is_probe:
            probe_edges.add((i, j))
    return World(plan, truths, bias, tau, GradeMatrix(entries, frozenset(probe_edges)))


def apply_behavior(
    observations: GradeMatrix, truths: Mapping[Hashable, float], behavior: GraderBehavior | str
) -> GradeMatrix:
    """Turn observations into reports.

    A strategic grader never reports more than her own true score.
    """
    behavior = GraderBehavior(behavior)
    if behavior is GraderBehavior.TRUTHFUL:
        return observations
    reported = {}
    for (i, j), v in observations.entries.items():
        if i not in truths:
            raise InputError(f"strategic grader {i!r} has no own true score")
        reported[(i, j)] = min(v, truths[i])
    return GradeMatrix(reported, observations.probe_edges)


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def compute_metrics(
    scores: Mapping[Hashable, float],
    truths: Mapping[Hashable, float],
    regrade_threshold: float = 0.005,
    discrete: bool = False,
) -> MetricsReport:
    """RMSE and fraction of papers that would be sent back for regrading.

    In discrete mode a paper is regraded when its rounded score differs from
    the true score.
    """
    papers = sorted(scores)
    missing = [j for j in papers if j not in truths]
    if missing or not papers:
        raise InputError(f"scores and truths cover different papers: missing {missing[:10]}")
    diffs = [scores[j] - truths[j] for j in papers]
    rmse = math.sqrt(math.fsum(d * d for d in diffs) / len(diffs))
    if discrete:
        flagged = sum(round_half_up(scores[j]) != truths[j] for j in papers)
    else:
        flagged = sum(abs(d) >= regrade_threshold for d in diffs)
    return MetricsReport(rmse=rmse, regrade_fraction=flagged / len(papers))


def mean_ci(values: Sequence[float]) -> tuple[float, float]:
    """Mean and 95% normal-approximation half-width."""
    arr = np.asarray(values, dtype=float)
    mean = math.fsum(arr) / len(arr)
    if len(arr) < 2:
        return mean, 0.0
    sd = math.sqrt(math.fsum((arr - mean) ** 2) / (len(arr) - 1))
    return mean, Z95 * sd / math.sqrt(len(arr))


def _score(mechanism: str, world: World, reports: GradeMatrix, cfg: ExperimentConfig, gibbs_seed):
    if mechanism == "trupeqa":
        outcome = run_trupeqa(world.plan, reports, world.truths, cfg.mechanism_params)
        return outcome.scores, outcome
    if mechanism == "mean":
        return mean_scores(world.plan, reports), None
    if mechanism == "median":
        return median_scores(world.plan, reports), None
    if mechanism == "gibbs":
        gcfg = GibbsConfig(cfg.gibbs_iterations, cfg.gibbs_burn_in, gibbs_seed)
        return gibbs_continuous(world.plan, reports, cfg.mechanism_params, gcfg), None
    raise ValueError(f"unknown mechanism {mechanism!r}")


def run_replication(cfg: ExperimentConfig, index: int, mechanisms: Sequence[str] = MECHANISMS) -> list[dict]:
    """One paired replication: every mechanism sees the same world."""
    outer, inner = divmod(index, cfg.trials_inner)
    world = generate_world(
        cfg,
        replication_seed(cfg.master_seed, _WORLD, outer),
        replication_seed(cfg.master_seed, _NOISE, outer, inner),
    )
    manipulated = apply_behavior(world.observations, world.truths, cfg.behavior)
    rows = []
    for name in mechanisms:
        reports = manipulated
        if name == "trupeqa" and not cfg.trupeqa_sees_manipulation:
            reports = world.observations
        scores, outcome = _score(name, world, reports, cfg, replication_seed(cfg.master_seed, _GIBBS, outer, inner))
        truths = {j: world.truths[j] for j in scores}
        metrics = compute_metrics(scores, truths, cfg.regrade_threshold)
        row = {
            "mechanism": name,
            "replication": index,
            "rmse": metrics.rmse,
            "regrade_fraction": metrics.regrade_fraction,
            "total_transfer_min": None,
            "total_transfer_mean": None,
            "total_cost": math.fsum((scores[j] - truths[j]) ** 2 for j in scores),
        }
        if outcome is not None:
            t = list(outcome.transfers.values())
            row["total_transfer_min"] = min(t)
            row["total_transfer_mean"] = math.fsum(t) / len(t)
        rows.append(row)
    return rows


def map_replications(fn, cfg, indices: Sequence[int], extra, jobs: int = 1) -> list:
    """Apply ``fn(cfg, index, extra)`` over replications, preserving index order."""
    if jobs <= 1 or len(indices) <= 1:
        return [fn(cfg, i, extra) for i in indices]
    chunks = [list(indices[k::jobs]) for k in range(jobs)]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = list(pool.map(_apply_chunk, [(fn, cfg, c, extra) for c in chunks]))
    by_index = {}
    for chunk, results in zip(chunks, parts):
        by_index.update(zip(chunk, results))
    return [by_index[i] for i in indices]


def _apply_chunk(args):
    fn, cfg, chunk, extra = args
    return [fn(cfg, i, extra) for i in chunk]


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    reports: dict[str, MetricsReport]
    replication_rows: list[dict]


def run_experiment(
    cfg: ExperimentConfig, mechanisms: Iterable[str] = MECHANISMS, jobs: int = 1
) -> ExperimentResult:
    """Run ``trials_outer * trials_inner`` paired replications and aggregate per mechanism."""
    mechanisms = tuple(mechanisms)
    per_rep = map_replications(run_replication, cfg, list(range(cfg.replications)), mechanisms, jobs)
    rows = [r for rep in per_rep for r in rep]
    reports = {}
    for name in mechanisms:
        mine = [r for r in rows if r["mechanism"] == name]
        rmse, rmse_ci = mean_ci([r["rmse"] for r in mine])
        frac, frac_ci = mean_ci([r["regrade_fraction"] for r in mine])
        cost, cost_ci = mean_ci([r["total_cost"] for r in mine])
        meta = {
            "mechanism": name,
            "master_seed": cfg.master_seed,
            "replications": len(mine),
            "mean_total_cost": cost,
            "total_cost_ci": cost_ci,
            "gamma_shape": cfg.gamma_shape,
        }
        if name == "gibbs":
            meta.update(gibbs_iterations=cfg.gibbs_iterations, gibbs_burn_in=cfg.gibbs_burn_in)
        reports[name] = MetricsReport(rmse, frac, rmse_ci, frac_ci, meta)
    return ExperimentResult(cfg, reports, rows)
