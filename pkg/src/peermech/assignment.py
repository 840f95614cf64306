"""Grader-to-paper assignment with a probe block and a non-probe block."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Hashable, Mapping

import numpy as np


class ConfigurationError(ValueError):
    """An (n, probes, K) combination for which no valid plan exists."""


@dataclass(frozen=True)
class AssignmentPlan:
    """Bipartite grader/paper structure.

    ``per_grader[i]`` is ``(probe_papers, nonprobe_papers)``.  ``k`` is the
    per-grader load for plans built by :func:`build_assignment` and ``None``
    for plans adapted from external data, where balance checks do not apply.
    """

    per_grader: Mapping[Hashable, tuple[tuple, tuple]]
    probe_ids: frozenset
    k: int | None = None
    n: int | None = None

    @cached_property
    def graders(self) -> list:
        return sorted(self.per_grader)

    @cached_property
    def papers(self) -> list:
        out = set(self.probe_ids)
        for probes, nonprobes in self.per_grader.values():
            out.update(probes)
            out.update(nonprobes)
        if self.n is not None:
            out.update(range(self.n))
        return sorted(out)

    @cached_property
    def per_paper(self) -> dict:
        """All graders of each paper, probe or not (``G(j)``)."""
        out: dict = {j: [] for j in self.papers}
        for i in self.graders:
            probes, nonprobes = self.per_grader[i]
            for j in (*probes, *nonprobes):
                out[j].append(i)
        return {j: tuple(g) for j, g in out.items()}

    @cached_property
    def scoring_graders(self) -> dict:
        """Graders whose report on ``j`` sits in their non-probe block."""
        out: dict = {}
        for i in self.graders:
            for j in self.per_grader[i][1]:
                out.setdefault(j, []).append(i)
        return {j: tuple(out[j]) for j in sorted(out)}

    @property
    def scored_papers(self) -> list:
        return list(self.scoring_graders)

    @cached_property
    def cograders(self) -> dict:
        sg = self.scoring_graders
        out = {}
        for i in self.graders:
            cg = set()
            for j in self.per_grader[i][1]:
                cg.update(sg[j])
            out[i] = frozenset(cg)
        return out

    def probes_of(self, i) -> tuple:
        return self.per_grader[i][0]

    def nonprobes_of(self, i) -> tuple:
        return self.per_grader[i][1]

    def edges(self) -> list[tuple]:
        """``(grader, paper, is_probe)`` triples sorted by grader then paper."""
        rows = []
        for i in self.graders:
            probes, nonprobes = self.per_grader[i]
            rows.extend((i, j, True) for j in probes)
            rows.extend((i, j, False) for j in nonprobes)
        rows.sort(key=lambda r: (r[0], r[1]))
        return rows

    def restrict_to_paper(self, j) -> "AssignmentPlan":
        """Plan containing only the non-probe edges of paper ``j``; probe blocks kept."""
        per = {}
        for i in self.scoring_graders.get(j, ()):
            per[i] = (self.per_grader[i][0], (j,))
        return AssignmentPlan(per, self.probe_ids)


def _check_feasible(n: int, probes: int, k: int) -> None:
    if k <= 0 or k % 2:
        raise ConfigurationError(f"K must be a positive even number, got {k}")
    if n < 2:
        raise ConfigurationError(f"need at least 2 students, got n={n}")
    if not 1 <= probes < n:
        raise ConfigurationError(f"probe count must satisfy 1 <= l < n, got l={probes}, n={n}")
    half = k // 2
    # A probe author cannot grade their own probe, likewise for non-probe authors.
    if half > probes - 1:
        raise ConfigurationError(
            f"K/2={half} probes per grader exceeds l-1={probes - 1} (probe authors cannot self-grade)"
        )
    if half > n - probes - 1:
        raise ConfigurationError(
            f"K/2={half} non-probe papers per grader exceeds n-l-1={n - probes - 1} "
            "(non-probe authors cannot self-grade)"
        )


def _cyclic_block(graders: list[int], pool: list[int], half: int) -> dict[int, list[int]]:
    # Consecutive windows of a cyclic sequence over the pool: distinct papers per
    # grader and loads that differ by at most one.
    out = {}
    size = len(pool)
    for slot, g in enumerate(graders):
        start = slot * half
        out[g] = [pool[(start + t) % size] for t in range(half)]
    return out


def _repair_self_grading(block: dict[int, list[int]]) -> bool:
    """Swap away self-assignments in place; False if some grader cannot be fixed."""
    order = sorted(block)
    for g in order:
        while g in block[g]:
            pos = block[g].index(g)
            swapped = False
            for h in order:
                if h == g:
                    continue
                for hpos, p in enumerate(block[h]):
                    if p == g or p in block[g] or g in block[h]:
                        continue
                    block[g][pos], block[h][hpos] = p, g
                    swapped = True
                    break
                if swapped:
                    break
            if not swapped:
                return False
    return True


def build_assignment(
    n: int, probe_count: int, k: int, seed: int | np.random.SeedSequence | None = 0,
    *, strict_k_over_2: bool = False, max_attempts: int = 100,
) -> AssignmentPlan:
    """Random balanced plan: every grader gets K/2 probe and K/2 non-probe papers.

    Non-probe papers receive ``floor(c)`` or ``ceil(c)`` graders with
    ``c = n*(K/2)/(n-l)``.  With ``strict_k_over_2`` a plan is only returned
    when every non-probe paper gets exactly K/2 graders.
    """
    _check_feasible(n, probe_count, k)
    half = k // 2
    if strict_k_over_2 and n * half != (n - probe_count) * half:
        raise ConfigurationError(
            f"exactly K/2={half} graders per non-probe paper needs {(n - probe_count) * half} "
            f"non-probe slots but {n} graders supply {n * half}"
        )
    rng = np.random.default_rng(seed)
    for _ in range(max_attempts):
        perm = [int(v) for v in rng.permutation(n)]
        probe_ids = sorted(perm[:probe_count])
        nonprobe_pool = [int(v) for v in rng.permutation(perm[probe_count:])]
        probe_pool = [int(v) for v in rng.permutation(probe_ids)]
        grader_order = [int(v) for v in rng.permutation(n)]
        probe_block = _cyclic_block(grader_order, probe_pool, half)
        grader_order = [int(v) for v in rng.permutation(n)]
        nonprobe_block = _cyclic_block(grader_order, nonprobe_pool, half)
        if _repair_self_grading(probe_block) and _repair_self_grading(nonprobe_block):
            per_grader = {
                i: (tuple(sorted(probe_block[i])), tuple(sorted(nonprobe_block[i])))
                for i in range(n)
            }
            return AssignmentPlan(per_grader, frozenset(probe_ids), k=k, n=n)
    raise ConfigurationError(f"could not repair self-grading after {max_attempts} attempts")


def validate(plan: AssignmentPlan) -> list[str]:
    """Every violated plan invariant as a message; an empty list means valid."""
    problems: list[str] = []
    probe_ids = plan.probe_ids
    for i in plan.graders:
        probes, nonprobes = plan.per_grader[i]
        if not probes:
            problems.append(f"grader {i}: empty probe list")
        if not nonprobes:
            problems.append(f"grader {i}: empty non-probe list")
        for j in (*probes, *nonprobes):
            if j == i:
                problems.append(f"self-grading at ({i},{j})")
        if len(set(probes) | set(nonprobes)) != len(probes) + len(nonprobes):
            problems.append(f"grader {i}: duplicate paper assignment")
        if plan.k is not None:
            half = plan.k // 2
            if len(probes) != half:
                problems.append(f"grader {i}: {len(probes)} probe papers, expected {half}")
            if len(nonprobes) != half:
                problems.append(f"grader {i}: {len(nonprobes)} non-probe papers, expected {half}")
            for j in probes:
                if j not in probe_ids:
                    problems.append(f"grader {i}: probe entry {j} is not a probe paper")
            for j in nonprobes:
                if j in probe_ids:
                    problems.append(f"grader {i}: non-probe entry {j} is a probe paper")
    for j, graders in plan.per_paper.items():
        if not graders:
            problems.append(f"paper {j}: empty grader set")
    if plan.k is not None and plan.n is not None:
        half = plan.k // 2
        free = plan.n - len(probe_ids)
        c = plan.n * half / free
        lo, hi = math.floor(c), math.ceil(c)
        sg = plan.scoring_graders
        for j in plan.papers:
            if j in probe_ids:
                continue
            load = len(sg.get(j, ()))
            if not lo <= load <= hi:
                problems.append(f"paper {j}: {load} non-probe graders, expected {lo}..{hi}")
    return problems


def plan_to_csv(plan: AssignmentPlan) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["grader_id", "paper_id", "is_probe"])
    for i, j, probe in plan.edges():
        w.writerow([i, j, int(probe)])
    return buf.getvalue()


def plan_from_csv(text: str, k: int | None = None, n: int | None = None) -> AssignmentPlan:
    rows = csv.DictReader(io.StringIO(text))
    per: dict = {}
    probe_ids = set()
    for row in rows:
        i, j = int(row["grader_id"]), int(row["paper_id"])
        probes, nonprobes = per.setdefault(i, ([], []))
        if row["is_probe"] in ("1", "True", "true"):
            probes.append(j)
            probe_ids.add(j)
        else:
            nonprobes.append(j)
    per_grader = {i: (tuple(p), tuple(q)) for i, (p, q) in per.items()}
    return AssignmentPlan(per_grader, frozenset(probe_ids), k=k, n=n)
