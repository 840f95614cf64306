"""Loader for discrete peer-grading records and a synthetic stand-in generator.

Input CSV header: ``paper_id,grader_id,peer_grade,true_grade,order``.  Raw
grades are 1..5 and are shifted to 0..4 on load.  The first
``probe_per_grader`` papers each grader checked (by ``order``, then
``paper_id``) become that grader's probes.
"""

from __future__ import annotations

import csv
import io
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assignment import AssignmentPlan
from .baselines import GibbsConfig, gibbs_discrete, mean_scores, median_scores
from .mechanism import MechanismOutcome, run_trupeqa
from .model import DiscreteModelParams, GradeMatrix, default_q_grid, discrete_error_pmf
from .simulation import compute_metrics, mean_ci

log = logging.getLogger(__name__)

COLUMNS = ("paper_id", "grader_id", "peer_grade", "true_grade", "order")
RAW_MIN, RAW_MAX = 1, 5


class DatasetParseError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetRecord:
    paper_id: object
    grader_id: object
    peer_grade: int
    true_grade: int
    order: int


@dataclass
class LoadedDataset:
    plan: AssignmentPlan
    grades: GradeMatrix
    truths: dict
    records: list[DatasetRecord]
    m: int = RAW_MAX - RAW_MIN


def _coerce_ids(values: list[str]) -> list:
    try:
        return [int(v) for v in values]
    except ValueError:
        return values


def parse_records(text: str) -> list[DatasetRecord]:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise DatasetParseError("empty file") from None
    header = [h.strip() for h in header]
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise DatasetParseError(f"header lacks required columns {missing}")
    col = {c: header.index(c) for c in COLUMNS}
    raw, errors = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        try:
            vals = {c: row[col[c]].strip() for c in COLUMNS}
            peer, true, order = int(vals["peer_grade"]), int(vals["true_grade"]), int(vals["order"])
        except (IndexError, ValueError) as exc:
            errors.append(f"line {lineno}: {exc}")
            continue
        bad = [v for v in (peer, true) if not RAW_MIN <= v <= RAW_MAX]
        if bad or not vals["paper_id"] or not vals["grader_id"]:
            errors.append(f"line {lineno}: grade outside {RAW_MIN}..{RAW_MAX} or empty id")
            continue
        raw.append((vals["paper_id"], vals["grader_id"], peer, true, order, lineno))
    if errors:
        raise DatasetParseError("malformed rows:\n" + "\n".join(errors))
    papers = _coerce_ids([r[0] for r in raw])
    graders = _coerce_ids([r[1] for r in raw])
    return [
        DatasetRecord(p, g, r[2] - RAW_MIN, r[3] - RAW_MIN, r[4])
        for p, g, r in zip(papers, graders, raw)
    ]


def build_structures(records: list[DatasetRecord], probe_per_grader: int = 5) -> LoadedDataset:
    truths: dict = {}
    by_grader: dict = {}
    seen = set()
    for rec in records:
        if truths.setdefault(rec.paper_id, rec.true_grade) != rec.true_grade:
            raise DatasetParseError(f"paper {rec.paper_id!r} has conflicting true grades")
        if (rec.grader_id, rec.paper_id) in seen:
            raise DatasetParseError(f"duplicate grade by {rec.grader_id!r} on {rec.paper_id!r}")
        seen.add((rec.grader_id, rec.paper_id))
        by_grader.setdefault(rec.grader_id, []).append(rec)
    per_grader = {}
    entries = {}
    probe_edges = set()
    for g in sorted(by_grader):
        recs = sorted(by_grader[g], key=lambda r: (r.order, r.paper_id))
        if not recs:
            log.warning("grader %r has no papers; skipped", g)
            continue
        probes = recs[:probe_per_grader]
        rest = recs[probe_per_grader:]
        per_grader[g] = (tuple(r.paper_id for r in probes), tuple(r.paper_id for r in rest))
        for r in recs:
            entries[(g, r.paper_id)] = r.peer_grade
        probe_edges.update((g, r.paper_id) for r in probes)
    probe_ids = frozenset(p for probes, _ in per_grader.values() for p in probes)
    plan = AssignmentPlan(per_grader, probe_ids)
    return LoadedDataset(plan, GradeMatrix(entries, frozenset(probe_edges)), truths, list(records))


def load_dataset(path: str | Path, probe_per_grader: int = 5) -> LoadedDataset:
    text = Path(path).read_text(encoding="utf-8")
    return build_structures(parse_records(text), probe_per_grader)


def records_to_csv(records: list[DatasetRecord]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in records:
        w.writerow([r.paper_id, r.grader_id, r.peer_grade + RAW_MIN, r.true_grade + RAW_MIN, r.order])
    return buf.getvalue()


def empirical_prior(truths, m: int) -> tuple[float, ...]:
    """Relative frequency of each score in ``0..m`` among the true scores."""
    values = list(truths.values()) if hasattr(truths, "values") else list(truths)
    if not values:
        raise ValueError("no true scores")
    counts = Counter(int(v) for v in values)
    return tuple(counts.get(k, 0) / len(values) for k in range(m + 1))


def synthesize_dataset(
    seed: int = 0,
    n_papers: int = 60,
    n_grades: int = 1347,
    n_graders: int = 110,
    min_load: int = 3,
    true_pmf: tuple[float, ...] = (0.05, 0.1, 0.25, 0.35, 0.25),
    q_range: tuple[float, float] = (0.0, 6.0),
) -> list[DatasetRecord]:
    """Synthetic records shaped like the course data: variable per-grader loads."""
    rng = np.random.default_rng(seed)
    m = len(true_pmf) - 1
    truth = rng.choice(m + 1, size=n_papers, p=true_pmf)
    extra = n_grades - min_load * n_graders
    if extra < 0 or n_grades > n_graders * n_papers:
        raise ValueError("cannot spread the requested grade count over these graders")
    loads = np.full(n_graders, min_load)
    # Skewed extra load, capped at one grade per paper.
    weights = rng.gamma(0.8, size=n_graders)
    while extra > 0:
        g = rng.choice(n_graders, p=weights / weights.sum())
        if loads[g] < n_papers:
            loads[g] += 1
            extra -= 1
    q = rng.uniform(*q_range, size=n_graders)
    pmfs = {}
    records = []
    for g in range(n_graders):
        papers = rng.choice(n_papers, size=loads[g], replace=False)
        for order, p in enumerate(papers):
            y = int(truth[p])
            key = (y, float(q[g]))
            if key not in pmfs:
                pmfs[key] = [discrete_error_pmf(z, y, q[g], m) for z in range(m + 1)]
            peer = int(rng.choice(m + 1, p=pmfs[key]))
            records.append(DatasetRecord(int(p), g, peer, y, order))
    return records


def run_dataset_experiment(
    data: LoadedDataset,
    prior: str = "uniform",
    reruns: int = 10,
    seed: int = 0,
    gibbs_iterations: int = 1000,
    gibbs_burn_in: int = 200,
    normalized: bool = False,
    q_grid: tuple[float, ...] | None = None,
) -> tuple[list[dict], MechanismOutcome]:
    """Score the non-probe papers with all four mechanisms.

    Mean and median are deterministic and carry no interval; TRUPEQA and
    Gibbs are re-run ``reruns`` times with per-run seeds.  Returns metric
    rows and the TRUPEQA outcome of the first run.
    """
    if prior not in ("uniform", "empirical"):
        raise ValueError(f"prior must be 'uniform' or 'empirical', got {prior!r}")
    score_prior = empirical_prior(data.truths, data.m) if prior == "empirical" else None
    params = DiscreteModelParams(
        m=data.m, q_grid=q_grid or default_q_grid(), score_prior=score_prior, normalized=normalized
    )

    def metrics(scores):
        rep = compute_metrics(scores, {j: data.truths[j] for j in scores}, discrete=True)
        return rep.rmse, rep.regrade_fraction

    rows = []
    for name, fn in (("mean", mean_scores), ("median", median_scores)):
        rmse, frac = metrics(fn(data.plan, data.grades))
        rows.append(dict(mechanism=name, prior=prior, rmse=rmse, rmse_ci=None, regrade_fraction=frac, frac_ci=None))

    trupeqa_runs, gibbs_runs = [], []
    first = None
    for r in range(reruns):
        outcome = run_trupeqa(data.plan, data.grades, data.truths, params)
        first = first or outcome
        trupeqa_runs.append(metrics(outcome.scores))
        cfg = GibbsConfig(gibbs_iterations, gibbs_burn_in, np.random.SeedSequence([seed, r]))
        gibbs_runs.append(metrics(gibbs_discrete(data.plan, data.grades, params, cfg)))
    for name, runs in (("trupeqa", trupeqa_runs), ("gibbs", gibbs_runs)):
        rmse, rmse_ci = mean_ci([a for a, _ in runs])
        frac, frac_ci = mean_ci([b for _, b in runs])
        rows.append(dict(mechanism=name, prior=prior, rmse=rmse, rmse_ci=rmse_ci, regrade_fraction=frac, frac_ci=frac_ci))
    order = {"trupeqa": 0, "mean": 1, "median": 2, "gibbs": 3}
    rows.sort(key=lambda row: order[row["mechanism"]])
    return rows, first
