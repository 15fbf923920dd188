import numpy as np
import pytest

from conftest import instance_from_rel, random_instance

from diverserank import greedy, metrics, model, trainer
from diverserank.model import joint_feature_map
from diverserank.types import DegenerateQueryError, MeasureParams, WeightVector


def make_ws(q, params, with_constraints=None, rng=None):
    ws = trainer.make_working_set(q, params)
    for ranking in with_constraints or ():
        delta = metrics.dcem_loss(ws.ideal_raw, ranking, q, params)
        psi = joint_feature_map(q, ranking).flat()
        ws.constraints.append(
            trainer.Constraint(ranking=tuple(ranking), psi=psi, delta=delta, dpsi=ws.target_psi - psi)
        )
    return ws


def random_working_sets(rng, num_examples=3, dim=4, max_constraints=4):
    """Synthetic working sets with arbitrary difference vectors and losses."""
    sets = []
    for _ in range(num_examples):
        ws = trainer.WorkingSet(
            q=None,
            target=[],
            target_psi=np.zeros(dim),
            ideal_raw=1.0,
            params=MeasureParams(),
        )
        for _ in range(int(rng.integers(0, max_constraints + 1))):
            dpsi = rng.standard_normal(dim)
            delta = float(rng.uniform(0.0, 1.0))
            ws.constraints.append(
                trainer.Constraint(ranking=(int(rng.integers(1000)),), psi=-dpsi, delta=delta, dpsi=dpsi)
            )
        sets.append(ws)
    return sets


def qp_certificates(working_sets, w, xi, C):
    """Primal feasibility margin and duality gap recomputed from scratch."""
    n = len(working_sets)
    worst = 0.0
    dual_linear = 0.0
    for i, ws in enumerate(working_sets):
        for c in ws.constraints:
            margin = float(w @ c.dpsi) - c.delta + xi[i]
            worst = min(worst, margin)
            dual_linear += c.alpha * c.delta
    wsq = float(w @ w)
    primal = 0.5 * wsq + (C / n) * float(xi.sum())
    dual = dual_linear - 0.5 * wsq
    return worst, primal, dual


class TestHinge:
    def test_target_itself_is_zero(self, rng):
        q = random_instance(rng, n=6)
        params = MeasureParams("err-ia", cutoff=4)
        ws = make_ws(q, params)
        w = WeightVector(
            w_rel=rng.standard_normal(q.num_relevance_features),
            w_div=rng.standard_normal(q.num_diversity_channels),
        )
        assert trainer.hinge(w, ws, ws.target) == pytest.approx(0.0, abs=1e-12)

    def test_zero_weights_equal_loss(self, rng):
        q = random_instance(rng, n=6)
        params = MeasureParams("err-ia", cutoff=3)
        ws = make_ws(q, params)
        w = WeightVector.zeros(q.num_relevance_features, q.num_diversity_channels)
        ranking = list(rng.permutation(6)[:3])
        assert trainer.hinge(w, ws, ranking) == pytest.approx(
            metrics.dcem_loss(ws.ideal_raw, ranking, q, params), abs=1e-12
        )

    def test_matches_recomputation_from_parts(self, rng):
        for _ in range(20):
            q = random_instance(rng, n=6)
            params = MeasureParams("err-ia", cutoff=3)
            ws = make_ws(q, params)
            ranking = list(rng.permutation(6)[:3])
            w = WeightVector(
                w_rel=rng.standard_normal(q.num_relevance_features),
                w_div=rng.standard_normal(q.num_diversity_channels),
            )
            delta = metrics.dcem_loss(ws.ideal_raw, ranking, q, params)
            psi = joint_feature_map(q, ranking).flat()
            expected = delta + float(w.flat() @ psi) - float(w.flat() @ ws.target_psi)
            assert trainer.hinge(w, ws, ranking) == pytest.approx(expected, abs=1e-10)


class TestSolveRestrictedQP:
    def test_empty_working_sets_give_zero(self, rng):
        sets = random_working_sets(rng, num_examples=3, max_constraints=0)
        w, xi, info = trainer.solve_restricted_qp(sets, C=1.0)
        assert not w.any()
        assert not xi.any()
        assert info["duality_gap"] == pytest.approx(0.0, abs=1e-12)

    def test_single_constraint_analytic_solution(self, rng):
        # one example, one constraint: w = min(delta / |dpsi|^2, C) * dpsi
        for _ in range(20):
            dim = 3
            dpsi = rng.standard_normal(dim)
            delta = float(rng.uniform(0.05, 1.0))
            C = float(rng.uniform(0.05, 2.0))
            ws = trainer.WorkingSet(q=None, target=[], target_psi=np.zeros(dim),
                                    ideal_raw=1.0, params=MeasureParams())
            ws.constraints.append(trainer.Constraint(ranking=(0,), psi=-dpsi, delta=delta, dpsi=dpsi))
            w, xi, _ = trainer.solve_restricted_qp([ws], C=C, tol=1e-10)
            coef = min(delta / float(dpsi @ dpsi), C)
            np.testing.assert_allclose(w, coef * dpsi, atol=1e-9)

    def test_feasibility_and_duality_gap(self, rng):
        for _ in range(40):
            sets = random_working_sets(rng, num_examples=int(rng.integers(1, 5)))
            C = float(rng.uniform(0.1, 10.0))
            w, xi, info = trainer.solve_restricted_qp(sets, C=C, tol=1e-8)
            worst, primal, dual = qp_certificates(sets, w, xi, C)
            assert worst >= -1e-6
            assert np.all(xi >= 0.0)
            assert primal >= dual - 1e-9
            assert primal - dual < 1e-6 * (1.0 + abs(primal))

    def test_warm_start_reuses_multipliers(self, rng):
        sets = random_working_sets(rng, num_examples=2, max_constraints=3)
        w1, _, _ = trainer.solve_restricted_qp(sets, C=1.0)
        w2, _, info = trainer.solve_restricted_qp(sets, C=1.0)
        np.testing.assert_allclose(w1, w2, atol=1e-10)
        assert info["kkt_violation"] <= 1e-8

    def test_cached_values_match_recomputation(self, rng):
        q = random_instance(rng, n=6)
        params = MeasureParams("err-ia", cutoff=3)
        rankings = [list(p) for p in ([0, 1, 2], [3, 4, 5], [5, 1, 0])]
        ws = make_ws(q, params, with_constraints=rankings)
        for c in ws.constraints:
            fresh_psi = joint_feature_map(q, list(c.ranking)).flat()
            np.testing.assert_allclose(c.psi, fresh_psi, atol=1e-10)
            assert c.delta == pytest.approx(
                metrics.dcem_loss(ws.ideal_raw, list(c.ranking), q, params), abs=1e-10
            )

    def test_nonconvergence_error_carries_violation(self, rng):
        sets = random_working_sets(rng, num_examples=2, max_constraints=3)
        with pytest.raises(trainer.QPConvergenceError) as err:
            trainer.solve_restricted_qp(sets, C=5.0, tol=1e-14, max_sweeps=1)
        assert err.value.violation >= 0.0


class TestCuttingPlaneTrain:
    def test_no_violation_terminates_immediately(self):
        # one subtopic, every doc relevant: every ranking has zero loss
        q = instance_from_rel([[1, 1, 1]], feats=np.full((3, 1), 0.5))
        cfg = trainer.TrainConfig(C=10.0, params=MeasureParams("err-ia", cutoff=3))
        w, stats = trainer.cutting_plane_train([q], cfg)
        assert stats.converged
        assert stats.outer_iterations == 1
        assert stats.constraints_added == 0
        assert not w.flat().any()

    def test_termination_guarantee(self, rng):
        # at convergence every example's inferred constraint violates its
        # recovered slack by at most epsilon
        queries = [random_instance(rng, n=8, num_rel=2, num_div=2, query_id=f"q{i}") for i in range(4)]
        params = MeasureParams("err-ia", cutoff=5)
        cfg = trainer.TrainConfig(C=5.0, epsilon=1e-3, params=params)

        w, stats = trainer.cutting_plane_train(queries, cfg)
        assert stats.converged
        assert stats.constraints_added >= 1
        w_flat = w.flat()
        for ws in stats.working_sets:
            xi_i = 0.0
            if ws.constraints:
                xi_i = max(0.0, max(c.delta - float(w_flat @ c.dpsi) for c in ws.constraints))
            yhat = model.loss_augmented_infer(w, ws.q, ws.target, params, params.cutoff)
            assert trainer.hinge(w, ws, yhat) <= xi_i + cfg.epsilon + 1e-9

    def test_skips_degenerate_queries(self, rng):
        good = random_instance(rng, n=5, query_id="good")
        bad = instance_from_rel([[0, 0, 0]], query_id="bad")
        cfg = trainer.TrainConfig(C=1.0, params=MeasureParams("err-ia", cutoff=3))
        _, stats = trainer.cutting_plane_train([good, bad], cfg)
        assert stats.skipped_query_ids == ["bad"]

    def test_thread_count_does_not_change_result(self, rng):
        queries = [random_instance(rng, n=8, query_id=f"q{i}") for i in range(4)]
        cfg = trainer.TrainConfig(C=5.0, params=MeasureParams("err-ia", cutoff=4))
        w1, s1 = trainer.cutting_plane_train(queries, cfg, n_jobs=1)
        w4, s4 = trainer.cutting_plane_train(queries, cfg, n_jobs=4)
        np.testing.assert_array_equal(w1.flat(), w4.flat())
        assert s1.loss_trace == s4.loss_trace

    def test_logs_one_record_per_iteration(self, rng):
        queries = [random_instance(rng, n=6, query_id=f"q{i}") for i in range(3)]
        cfg = trainer.TrainConfig(C=2.0, params=MeasureParams("err-ia", cutoff=3))
        records = []
        _, stats = trainer.cutting_plane_train(queries, cfg, log_fn=records.append)
        assert len(records) == stats.outer_iterations
        assert all({"iteration", "objective", "constraints", "mean_loss"} <= set(r) for r in records)

    def test_every_added_constraint_violated_at_add_time(self, rng, monkeypatch):
        # instrument the add path through the QP solver call: each solve
        # happens right after an addition that passed the epsilon test
        queries = [random_instance(rng, n=7, query_id=f"q{i}") for i in range(3)]
        params = MeasureParams("err-ia", cutoff=4)
        cfg = trainer.TrainConfig(C=5.0, epsilon=1e-3, params=params)
        seen = []
        real_solve = trainer.solve_restricted_qp

        def spy(working_sets, C, tol=1e-8, max_sweeps=20000):
            seen.append(sum(len(ws.constraints) for ws in working_sets))
            return real_solve(working_sets, C, tol, max_sweeps)

        monkeypatch.setattr(trainer, "solve_restricted_qp", spy)
        _, stats = trainer.cutting_plane_train(queries, cfg)
        assert len(seen) == stats.constraints_added
        assert seen == sorted(seen)  # the working set only grows while adding


class TestCSweep:
    def test_single_value_grid(self, rng):
        queries = [random_instance(rng, n=6, query_id=f"q{i}") for i in range(3)]
        cfg = trainer.TrainConfig(C=1.0, params=MeasureParams("err-ia", cutoff=3))
        result = trainer.c_sweep(queries, queries, [0.5], cfg)
        assert len(result.rows) == 1
        assert result.best_c == 0.5

    def test_default_grid_has_eight_points(self):
        assert len(trainer.DEFAULT_C_GRID) == 8
        assert trainer.DEFAULT_C_GRID[0] == pytest.approx(1e-4)
        assert trainer.DEFAULT_C_GRID[-1] == pytest.approx(1e3)

    def test_empty_grid_rejected(self, rng):
        queries = [random_instance(rng, n=5)]
        cfg = trainer.TrainConfig(C=1.0, params=MeasureParams("err-ia", cutoff=3))
        with pytest.raises(ValueError):
            trainer.c_sweep(queries, queries, [], cfg)


def test_train_config_validation():
    with pytest.raises(ValueError):
        trainer.TrainConfig(C=0.0)
    with pytest.raises(ValueError):
        trainer.TrainConfig(C=1.0, epsilon=0.0)
