import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import discrete_pmf_loop, enumerate_discrete_erm, grid_search_erm, posterior_expected_reward
from peermech.assignment import AssignmentPlan, build_assignment
from peermech.mechanism import (
    erm_score_continuous,
    erm_score_discrete,
    run_trupeqa,
    transfer_for_paper,
)
from peermech.model import (
    TAU_CAP,
    ContinuousAccuracy,
    DiscreteAccuracy,
    DiscreteModelParams,
    DomainError,
    GradeMatrix,
    InputError,
    posterior_weights_discrete,
)
from peermech.simulation import ExperimentConfig, generate_world

PRIOR = (1.0, 16.0)
TWO_GRADERS = (
    {1: 1.2, 2: 1.0},
    {1: ContinuousAccuracy(0.0, 100.0), 2: ContinuousAccuracy(0.1, 300.0)},
)


def reports_strategy(max_graders=6):
    grader = st.tuples(st.floats(0.0, 2.0), st.floats(-0.2, 0.2), st.floats(1.0, 1e4))
    return st.lists(grader, min_size=1, max_size=max_graders)


def as_maps(triples):
    reports = {k: v for k, (v, _, _) in enumerate(triples)}
    accs = {k: ContinuousAccuracy(b, t) for k, (_, b, t) in enumerate(triples)}
    return reports, accs


class TestContinuousScore:
    def test_single_grader(self):
        x = erm_score_continuous({0: 1.5}, {0: ContinuousAccuracy(0.0, 16.0)}, PRIOR)
        assert x == pytest.approx(1.25, abs=1e-9)
        assert grid_search_erm([(1.5, 0.0, 16.0)], *PRIOR)[0] == pytest.approx(1.25, abs=1e-4)

    def test_two_graders(self):
        x = erm_score_continuous(*TWO_GRADERS, PRIOR)
        assert x == pytest.approx(406 / 416, abs=1e-9)
        assert x == pytest.approx(0.97596, abs=1e-5)
        oracle = grid_search_erm([(1.2, 0.0, 100.0), (1.0, 0.1, 300.0)], *PRIOR)[0]
        assert oracle == pytest.approx(x, abs=1e-4)

    def test_reports_at_prior_mean(self):
        accs = {0: ContinuousAccuracy(0.05, 200.0), 1: ContinuousAccuracy(-0.03, 900.0)}
        assert erm_score_continuous({0: 1.05, 1: 0.97}, accs, PRIOR) == pytest.approx(1.0, abs=1e-12)

    def test_empty_reports(self):
        with pytest.raises(DomainError):
            erm_score_continuous({}, {}, PRIOR)

    @settings(max_examples=40, deadline=None)
    @given(triples=reports_strategy())
    def test_no_grid_point_beats_closed_form(self, triples):
        reports, accs = as_maps(triples)
        x = erm_score_continuous(reports, accs, PRIOR)
        best_x, best_val = grid_search_erm(triples, *PRIOR)
        assert abs(best_x - x) <= 1e-4
        assert posterior_expected_reward(x, triples, *PRIOR) >= best_val - 1e-9

    @given(triples=reports_strategy())
    def test_within_hull(self, triples):
        reports, accs = as_maps(triples)
        x = erm_score_continuous(reports, accs, PRIOR)
        centers = [PRIOR[0]] + [v - b for v, b, _ in triples]
        assert min(centers) - 1e-12 <= x <= max(centers) + 1e-12

    @given(triples=reports_strategy(), factor=st.floats(1.5, 100.0), which=st.integers(0, 5))
    def test_monotone_influence(self, triples, factor, which):
        which %= len(triples)
        reports, accs = as_maps(triples)
        target = reports[which] - accs[which].bias
        before = erm_score_continuous(reports, accs, PRIOR)
        a = accs[which]
        accs[which] = ContinuousAccuracy(a.bias, a.tau * factor)
        after = erm_score_continuous(reports, accs, PRIOR)
        if abs(before - target) > 1e-9:
            assert abs(after - target) < abs(before - target)


class TestDiscreteScore:
    params = DiscreteModelParams()

    def test_zero_accuracy_picks_middle(self):
        accs = {0: DiscreteAccuracy(0.0), 1: DiscreteAccuracy(0.0)}
        assert erm_score_discrete({0: 0, 1: 4}, accs, self.params) == 2

    def test_single_accurate_grader(self):
        assert erm_score_discrete({0: 3}, {0: DiscreteAccuracy(16.0)}, self.params) == 3
        w = posterior_weights_discrete([3], [16.0], self.params)
        mean = float(np.dot(w, np.arange(5)))
        e = math.exp
        by_hand = (e(-8) + 2 * e(-4) + 3 + 4 * e(-4)) / (e(-12) + e(-8) + 2 * e(-4) + 1)
        assert mean == pytest.approx(by_hand, abs=1e-12)
        assert mean == pytest.approx(2.99938, abs=1e-4)

    def test_symmetric_reports(self):
        accs = {0: DiscreteAccuracy(4.0), 1: DiscreteAccuracy(4.0)}
        assert erm_score_discrete({0: 1, 1: 3}, accs, self.params) == 2

    def test_rejects_out_of_domain(self):
        with pytest.raises(DomainError):
            erm_score_discrete({0: 7}, {0: DiscreteAccuracy(1.0)}, self.params)

    @settings(max_examples=100, deadline=None)
    @given(
        obs=st.lists(st.tuples(st.integers(0, 4), st.sampled_from(DiscreteModelParams().q_grid)), min_size=1, max_size=6),
        prior=st.lists(st.integers(0, 5), min_size=5, max_size=5).filter(lambda p: sum(p) > 0),
    )
    def test_matches_enumeration(self, obs, prior):
        pmf = tuple(v / sum(prior) for v in prior)
        params = DiscreteModelParams(score_prior=pmf)
        reports = {k: v for k, (v, _) in enumerate(obs)}
        accs = {k: DiscreteAccuracy(q) for k, (_, q) in enumerate(obs)}
        expected = enumerate_discrete_erm([v for v, _ in obs], [q for _, q in obs], pmf, 4)
        assert erm_score_discrete(reports, accs, params) == expected


class TestTransfer:
    def test_single_grader_worked_value(self):
        t = transfer_for_paper({0: 1.5}, {0: ContinuousAccuracy(0.0, 16.0)}, PRIOR, 1.3, 0)
        assert t == pytest.approx(-(1.25 - 1.3) ** 2 + (1.0 - 1.3) ** 2, abs=1e-12)
        assert t == pytest.approx(0.0875, abs=1e-9)

    def test_two_grader_worked_value(self):
        t = transfer_for_paper(*TWO_GRADERS, PRIOR, 1.0, 1)
        expected = -((406 / 416 - 1.0) ** 2) + (286 / 316 - 1.0) ** 2
        assert t == pytest.approx(expected, abs=1e-12)
        assert t == pytest.approx(0.008435131056176506, abs=1e-9)
        rest = erm_score_continuous({2: 1.0}, {2: TWO_GRADERS[1][2]}, PRIOR)
        assert rest == pytest.approx(286 / 316, abs=1e-12)

    def test_negligible_reliability_pays_nothing(self):
        reports = {0: 1.02, 1: 0.99}
        accs = {0: ContinuousAccuracy(0.0, 1e-9), 1: ContinuousAccuracy(0.0, 400.0)}
        assert abs(transfer_for_paper(reports, accs, PRIOR, 1.0, 0)) < 1e-12

    def test_not_a_grader(self):
        with pytest.raises(DomainError):
            transfer_for_paper({0: 1.0}, {0: ContinuousAccuracy(0.0, 1.0)}, PRIOR, 1.0, 5)

    def test_discrete_fallback_without_cograders(self):
        params = DiscreteModelParams()
        t = transfer_for_paper({0: 4}, {0: DiscreteAccuracy(16.0)}, params, 4, 0)
        # Prior-only decision under a uniform prior is 2.
        assert t == 4.0

    @given(triples=reports_strategy(), y=st.floats(0.0, 2.0), which=st.integers(0, 5))
    def test_bounded_below(self, triples, y, which):
        which %= len(triples)
        reports, accs = as_maps(triples)
        t = transfer_for_paper(reports, accs, PRIOR, y, which)
        points = [y, PRIOR[0]] + [v - b for v, b, _ in triples]
        spread = max(points) - min(points)
        assert t >= -(spread**2) - 1e-12


def _world(seed=0, **kw):
    cfg = ExperimentConfig(n=20, probes=6, k=6, **kw)
    return cfg, generate_world(cfg, seed)


class TestRunTrupeqa:
    def test_perfect_reports(self):
        cfg, world = _world(inject_tau=math.inf, inject_bias=0.0)
        out = run_trupeqa(world.plan, world.observations, world.truths, cfg.mechanism_params)
        assert all(a.tau == TAU_CAP for a in out.accuracies.values())
        for j, x in out.scores.items():
            assert x == pytest.approx(world.truths[j], abs=1e-6)
        assert all(t >= 0 for t in out.transfers.values())

    def test_transfers_sum_per_paper_parts(self):
        cfg, world = _world(seed=4)
        out = run_trupeqa(world.plan, world.observations, world.truths, cfg.mechanism_params)
        assert set(out.scores) == {j for j in range(20) if j not in world.plan.probe_ids}
        for i in world.plan.graders:
            parts = [out.per_paper_transfers[(i, j)] for j in sorted(world.plan.nonprobes_of(i))]
            assert out.transfers[i] == math.fsum(parts)

    def test_per_paper_transfers_match_direct_evaluation(self):
        cfg, world = _world(seed=9)
        params = cfg.mechanism_params
        out = run_trupeqa(world.plan, world.observations, world.truths, params)
        for (i, j), t in out.per_paper_transfers.items():
            ids = world.plan.scoring_graders[j]
            reports = {g: world.observations[(g, j)] for g in ids}
            direct = transfer_for_paper(reports, out.accuracies, params, world.truths[j], i)
            assert t == pytest.approx(direct, abs=1e-12)

    def test_decomposable(self):
        cfg, world = _world(seed=2)
        params = cfg.mechanism_params
        full = run_trupeqa(world.plan, world.observations, world.truths, params)
        for j in world.plan.scored_papers:
            sub = world.plan.restrict_to_paper(j)
            part = run_trupeqa(sub, world.observations, world.truths, params)
            assert part.scores[j] == full.scores[j]
            for i in sub.graders:
                assert part.per_paper_transfers[(i, j)] == full.per_paper_transfers[(i, j)]

    def test_relabeling_equivariance(self):
        cfg, world = _world(seed=6)
        params = cfg.mechanism_params
        perm = np.random.default_rng(1).permutation(20)
        relabel = {int(k): int(v) for k, v in enumerate(perm)}
        plan = world.plan
        per = {
            relabel[i]: (tuple(relabel[j] for j in p), tuple(relabel[j] for j in q))
            for i, (p, q) in plan.per_grader.items()
        }
        plan2 = AssignmentPlan(per, frozenset(relabel[j] for j in plan.probe_ids), k=plan.k, n=plan.n)
        grades2 = GradeMatrix(
            {(relabel[i], relabel[j]): v for (i, j), v in world.observations.entries.items()},
            frozenset((relabel[i], relabel[j]) for i, j in world.observations.probe_edges),
        )
        truths2 = {relabel[j]: y for j, y in world.truths.items()}
        a = run_trupeqa(plan, world.observations, world.truths, params)
        b = run_trupeqa(plan2, grades2, truths2, params)
        for j, x in a.scores.items():
            assert b.scores[relabel[j]] == pytest.approx(x, abs=1e-12)
        for i, t in a.transfers.items():
            assert b.transfers[relabel[i]] == pytest.approx(t, abs=1e-12)

    def test_missing_grades_listed(self):
        cfg, world = _world()
        i, j, _ = world.plan.edges()[0]
        entries = dict(world.observations.entries)
        del entries[(i, j)]
        with pytest.raises(InputError, match=rf"\({i}, {j}\)"):
            run_trupeqa(world.plan, GradeMatrix(entries, world.observations.probe_edges),
                        world.truths, cfg.mechanism_params)

    def test_discrete_micro_instance(self):
        plan = build_assignment(6, 2, 2, seed=3)
        rng = np.random.default_rng(8)
        truths = {j: int(v) for j, v in enumerate(rng.integers(0, 5, 6))}
        entries, probe_edges = {}, set()
        for i, j, is_probe in plan.edges():
            entries[(i, j)] = int(np.clip(truths[j] + rng.integers(-1, 2), 0, 4))
            if is_probe:
                probe_edges.add((i, j))
        params = DiscreteModelParams()
        out = run_trupeqa(plan, GradeMatrix(entries, frozenset(probe_edges)), truths, params)
        grid = params.q_grid
        uniform = [0.2] * 5

        def q_hat(i):
            def lik(q):
                return math.prod(discrete_pmf_loop(entries[(i, j)], truths[j], q, 4) for j in plan.probes_of(i))
            return max(grid, key=lambda q: (lik(q), -q))

        qs = {i: q_hat(i) for i in plan.graders}
        for j, graders in plan.scoring_graders.items():
            rep = [entries[(g, j)] for g in graders]
            x = enumerate_discrete_erm(rep, [qs[g] for g in graders], uniform, 4)
            assert out.scores[j] == x
            for k, i in enumerate(graders):
                rest = [g for g in graders if g != i]
                x_wo = enumerate_discrete_erm([entries[(g, j)] for g in rest], [qs[g] for g in rest], uniform, 4)
                expected = -((x - truths[j]) ** 2) + (x_wo - truths[j]) ** 2
                assert out.per_paper_transfers[(i, j)] == expected

    def test_outcome_csv(self):
        cfg, world = _world()
        out = run_trupeqa(world.plan, world.observations, world.truths, cfg.mechanism_params)
        scores = out.scores_csv(world.truths).splitlines()
        assert scores[0] == "paper_id,score_given,true_score"
        assert len(scores) == 1 + len(out.scores)
        transfers = out.transfers_csv(scale=2.0).splitlines()
        assert transfers[0] == "grader_id,transfer"
        first = transfers[1].split(",")
        assert float(first[1]) == 2.0 * out.transfers[int(first[0])]
