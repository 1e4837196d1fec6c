"""Consensus loop: updates, zero-sum duals, bounds, determinism."""

import numpy as np
import pytest

from stratgen.admm import (AdmmConfig, admm_solve, compute_gub, compute_ub,
                           consensus_update, dual_update, gap_report,
                           max_residual, zero_sum_residual, subproblem_step,
                           _x_keys)
from stratgen.branch_bound import solve_mpcc
from stratgen.cli import generate_random_instance, generate_smoke_instance
from stratgen.reformulate import build_extensive_form, investment_values

from test_model import tiny_instance


def make_state(instance, values):
    """x dict for all scenario pairs from {pair: value} (single candidate)."""
    keys = _x_keys(instance)
    return {pair: {key: float(values[pair]) for key in keys}
            for pair in instance.scenario_pairs()}


def zero_mu(instance):
    return {pair: {key: 0.0 for key in _x_keys(instance)}
            for pair in instance.scenario_pairs()}


class TestConfig:
    def test_validation_errors(self):
        for bad in (dict(rho=-1.0), dict(epsilon_mw=0.0), dict(max_iters=-1),
                    dict(pwl_segments=0), dict(anchor_mode="middle"),
                    dict(workers=0)):
            with pytest.raises(ValueError):
                AdmmConfig(**bad).validate()

    def test_cadence_default(self):
        assert AdmmConfig().cadence(9) == 1
        assert AdmmConfig().cadence(25) == 5
        assert AdmmConfig(bound_cadence=7).cadence(2) == 7


class TestUpdates:
    def test_consensus_weighted_average(self):
        # weights 0.4 / 0.6 on X = 10 / 20 -> 16
        inst = tiny_instance(lt_probs=(0.4, 0.6))
        xbar = consensus_update(inst, make_state(inst, {(1, 1): 10, (2, 1): 20}))
        assert xbar[(1, 1)][(1, "cand1")] == pytest.approx(16.0)
        assert xbar[(2, 1)][(1, "cand1")] == pytest.approx(16.0)

    def test_consensus_leaf_mean(self):
        # stage-2 leaf class {gamma2} x 3 equiprobable k: mean of (0, 30, 60)
        inst = tiny_instance(lt_probs=(0.5, 0.5), ms_probs=(1 / 3,) * 3,
                             partitions={1: ((1, 2),), 2: ((1,), (2,))},
                             n_stages=2)
        x = {pair: {key: 0.0 for key in _x_keys(inst)}
             for pair in inst.scenario_pairs()}
        for k, v in ((1, 0.0), (2, 30.0), (3, 60.0)):
            x[(2, k)][(2, "cand1")] = v
        xbar = consensus_update(inst, x)
        for k in (1, 2, 3):
            assert xbar[(2, k)][(2, "cand1")] == pytest.approx(30.0)
        # the other leaf is untouched by gamma2's values
        assert xbar[(1, 1)][(2, "cand1")] == pytest.approx(0.0)

    def test_consensus_idempotent(self):
        inst = tiny_instance(lt_probs=(0.3, 0.7), ms_probs=(0.5, 0.5))
        x = make_state(inst, {p: 7.0 * i for i, p in
                              enumerate(inst.scenario_pairs())})
        once = consensus_update(inst, x)
        twice = consensus_update(inst, once)
        for pair in once:
            for key in once[pair]:
                assert twice[pair][key] == pytest.approx(once[pair][key],
                                                         abs=1e-9)

    def test_dual_update_arithmetic(self):
        # equal weights, X = Xbar +/- 2 MW, rho = 100 -> mu = +/- 200
        inst = tiny_instance(lt_probs=(0.5, 0.5))
        x = make_state(inst, {(1, 1): 12.0, (2, 1): 8.0})
        xbar = consensus_update(inst, x)
        mu = dual_update(inst, zero_mu(inst), x, xbar, 100.0)
        assert mu[(1, 1)][(1, "cand1")] == pytest.approx(200.0)
        assert mu[(2, 1)][(1, "cand1")] == pytest.approx(-200.0)

    def test_dual_update_noop_at_consensus(self):
        inst = tiny_instance(lt_probs=(0.5, 0.5))
        x = make_state(inst, {(1, 1): 5.0, (2, 1): 5.0})
        xbar = consensus_update(inst, x)
        mu0 = dual_update(inst, zero_mu(inst), x, xbar, 100.0)
        mu1 = dual_update(inst, mu0, x, xbar, 100.0)
        for pair in mu0:
            for key in mu0[pair]:
                assert mu1[pair][key] == pytest.approx(mu0[pair][key],
                                                       abs=1e-9)

    def test_zero_sum_preserved_over_many_updates(self):
        inst = tiny_instance(lt_probs=(0.2, 0.3, 0.5), ms_probs=(0.6, 0.4),
                             partitions={1: ((1, 2, 3),), 2: ((1, 2), (3,))},
                             n_stages=2)
        rng = np.random.default_rng(1)
        mu = zero_mu(inst)
        for _ in range(50):
            x = {pair: {key: float(rng.uniform(0, 50))
                        for key in _x_keys(inst)}
                 for pair in inst.scenario_pairs()}
            xbar = consensus_update(inst, x)
            mu = dual_update(inst, mu, x, xbar, 100.0)
            assert zero_sum_residual(inst, mu) <= 1e-12

    def test_residual_is_componentwise_max(self):
        inst = tiny_instance(lt_probs=(0.5, 0.5))
        x = make_state(inst, {(1, 1): 10.0, (2, 1): 4.0})
        xbar = consensus_update(inst, x)
        assert max_residual(x, xbar) == pytest.approx(3.0)


class TestBounds:
    def test_gub_at_zero_mu_dominates_extensive(self):
        inst = generate_random_instance(0, n_stages=2, n_lt=2, n_ms=2,
                                        n_conditions=2, n_existing=1,
                                        n_rivals=2, n_candidates=2)
        gub = compute_gub(inst, zero_mu(inst), AdmmConfig())
        ext = solve_mpcc(build_extensive_form(inst))
        assert gub >= ext.objective - 1e-6 * (1 + abs(ext.objective))

    def test_gub_rejects_unbalanced_duals(self):
        inst = tiny_instance(lt_probs=(0.5, 0.5))
        mu = zero_mu(inst)
        mu[(1, 1)][(1, "cand1")] = 10.0  # one-sided: class sum nonzero
        with pytest.raises(AssertionError):
            compute_gub(inst, mu, AdmmConfig())

    def test_ub_at_extensive_solution_matches(self):
        inst = generate_random_instance(4, n_stages=2, n_lt=2, n_ms=2,
                                        n_conditions=2, n_existing=1,
                                        n_rivals=2, n_candidates=2)
        model = build_extensive_form(inst)
        res = solve_mpcc(model)
        inv = investment_values(model, res.x)
        x = {(g, k): {(t, c): inv[(t, g, c)] for t in inst.stage_indices()
                      for c in [u.id for u in inst.candidate_units]}
             for g, k in inst.scenario_pairs()}
        ub = compute_ub(inst, x, AdmmConfig())
        assert ub == pytest.approx(res.objective, rel=1e-8)

    def test_subproblem_step_wait_and_see(self):
        inst = tiny_instance()
        x_vals, obj = subproblem_step(inst, 1, 1, {}, {},
                                      AdmmConfig(rho=0.0))
        from stratgen.reformulate import build_scenario_mpcc
        ref = solve_mpcc(build_scenario_mpcc(inst, 1, 1))
        assert obj == pytest.approx(ref.objective, rel=1e-9)


class TestLoop:
    def test_single_scenario_collapses_at_iteration_zero(self):
        inst = generate_smoke_instance()
        res = admm_solve(inst, AdmmConfig())
        ext = solve_mpcc(build_extensive_form(inst))
        assert res.status == "Converged"
        assert res.iterations[0].index == 0
        assert res.iterations[0].max_residual == 0.0
        scale = 1 + abs(ext.objective)
        assert abs(res.gub - ext.objective) <= 1e-6 * scale
        assert abs(res.ub - ext.objective) <= 1e-6 * scale

    def test_iter_limit_status(self):
        inst = generate_random_instance(0, n_stages=2, n_lt=2, n_ms=2,
                                        n_conditions=2, n_existing=1,
                                        n_rivals=2, n_candidates=2)
        res = admm_solve(inst, AdmmConfig(max_iters=0))
        assert res.status == "IterLimit"
        assert res.num_iterations == 1
        assert res.iterations[0].gub is not None  # bounds still recorded

    def test_convergence_recovers_extensive_optimum(self):
        inst = generate_random_instance(4, n_stages=2, n_lt=2, n_ms=2,
                                        n_conditions=2, n_existing=1,
                                        n_rivals=2, n_candidates=2)
        cfg = AdmmConfig(anchor_mode="consensus", max_iters=200)
        res = admm_solve(inst, cfg)
        ext = solve_mpcc(build_extensive_form(inst))
        assert res.status == "Converged"
        assert res.ub == pytest.approx(ext.objective,
                                       rel=0.005, abs=1e-6)
        for it in res.iterations:
            assert it.zero_sum_residual <= 1e-8
            if it.gub is not None:
                assert it.gub >= ext.objective - 1e-6 * (1 + abs(ext.objective))

    def test_deterministic_histories(self):
        inst = generate_random_instance(5, n_stages=2, n_lt=2, n_ms=2,
                                        n_conditions=2, n_existing=1,
                                        n_rivals=2, n_candidates=2)
        cfg = AdmmConfig(anchor_mode="consensus", max_iters=30,
                         bound_cadence=10)
        a = admm_solve(inst, cfg)
        b = admm_solve(inst, cfg)
        assert a.status == b.status
        assert a.num_iterations == b.num_iterations
        for ia, ib in zip(a.iterations, b.iterations):
            assert ia.x == ib.x
            assert ia.mu == ib.mu
            assert ia.gub == ib.gub and ia.ub == ib.ub

    def test_worker_pool_matches_serial(self):
        inst = generate_random_instance(4, n_stages=2, n_lt=2, n_ms=2,
                                        n_conditions=2, n_existing=1,
                                        n_rivals=2, n_candidates=2)
        cfg = dict(anchor_mode="consensus", max_iters=5, bound_cadence=10)
        serial = admm_solve(inst, AdmmConfig(workers=1, **cfg))
        pooled = admm_solve(inst, AdmmConfig(workers=2, **cfg))
        assert serial.status == pooled.status
        for ia, ib in zip(serial.iterations, pooled.iterations):
            assert ia.x == ib.x
            assert ia.gub == ib.gub and ia.ub == ib.ub

    def test_gap_report_certificate(self):
        inst = generate_smoke_instance()
        cfg = AdmmConfig()
        res = admm_solve(inst, cfg)
        rows = gap_report(res, cfg.epsilon_mw)
        assert rows[-1]["certificate"] is True
        assert rows[-1]["abs_gap"] <= 1e-6 * (1 + abs(res.ub))
