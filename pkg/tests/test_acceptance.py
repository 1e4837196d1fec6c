"""Acceptance gate: ten end-to-end criteria, one PASS/FAIL line each.

Expensive artifacts (decomposition runs, extensive-form oracles) are computed
once and shared across criteria.  Instance selection rules are pre-registered
and deterministic: scenario decomposition on nonconvex subproblems carries no
global convergence guarantee, so criterion 1 takes the first 20 seeds (from 0
upward) whose runs converge within budget, and asserts the convergence rate
itself stays above 50% so regressions cannot hide in the selection.
"""

import functools
import time

import numpy as np
import pytest

from stratgen.admm import AdmmConfig, admm_solve, gap_report
from stratgen.branch_bound import enumerate_mpcc, solve_mpcc
from stratgen.cli import (generate_random_instance, generate_study_instance,
                          generate_smoke_instance, write_iterations_csv)
from stratgen.market import (Block, ClearingInput, build_clearing_lp,
                             clear_market_lp, clear_market_merit_order)
from stratgen.reformulate import (build_extensive_form, build_scenario_mpcc,
                                  investment_values, model_statistics,
                                  revenue_identity_max_error)

from test_branch_bound import small_models

# -- shared configuration ----------------------------------------------------

C1_SEED_CAP = 40            # stop scanning after this many seeds
C1_WANTED = 20              # converged instances required
C1_CFG = dict(rho=100.0, epsilon_mw=0.01, max_iters=520,
              anchor_mode="consensus", workers=1, verify_revenue=True)

C4_RHOS = (1e2, 1e3, 1e5)
C4_CFG = dict(epsilon_mw=0.5, max_iters=60, anchor_mode="consensus",
              pwl_segments=30, bound_cadence=10**9, workers=1,
              verify_revenue=True)

REVENUE_ERRORS = []         # explicit identity checks collected by suites 1-5


def announce(capsys, line):
    with capsys.disabled():
        print(f"\n{line}", flush=True)


def c1_instance(seed):
    return generate_random_instance(seed, n_stages=2, n_lt=2, n_ms=2,
                                    n_conditions=2, n_existing=1, n_rivals=2,
                                    n_candidates=2)


@functools.lru_cache(maxsize=None)
def criterion1_runs():
    """Converged decomposition runs plus extensive-form oracles.

    Returns (records, admm_seconds, attempts): records are dicts with the
    instance seed, the full run result (bounds at every iteration), and the
    oracle optimum/investments.
    """
    screen_cfg = AdmmConfig(bound_cadence=10**9, **C1_CFG)
    full_cfg = AdmmConfig(bound_cadence=1, **C1_CFG)
    records, attempts = [], 0
    admm_seconds = 0.0
    for seed in range(C1_SEED_CAP):
        if len(records) == C1_WANTED:
            break
        attempts += 1
        inst = c1_instance(seed)
        t0 = time.monotonic()
        screened = admm_solve(inst, screen_cfg)
        if screened.status != "Converged":
            admm_seconds += time.monotonic() - t0
            continue
        res = admm_solve(inst, full_cfg)
        admm_seconds += time.monotonic() - t0
        model = build_extensive_form(inst)
        ext = solve_mpcc(model)
        assert ext.status == "Optimal"
        REVENUE_ERRORS.append(revenue_identity_max_error(model, ext.x))
        records.append({
            "seed": seed, "instance": inst, "result": res,
            "ext_objective": ext.objective,
            "ext_investments": investment_values(model, ext.x),
        })
    return records, admm_seconds, attempts


@functools.lru_cache(maxsize=None)
def criterion4_runs():
    """Fixture decomposition runs, one per penalty weight."""
    inst = generate_study_instance()
    out = {}
    for rho in C4_RHOS:
        out[rho] = admm_solve(inst, AdmmConfig(rho=rho, **C4_CFG))
    return out


def admm_csv_bytes(result, epsilon_mw, path):
    write_iterations_csv(gap_report(result, epsilon_mw), str(path))
    return path.read_bytes()


# -- criteria ----------------------------------------------------------------


def test_criterion_01_decomposition_matches_extensive(capsys):
    records, admm_seconds, attempts = criterion1_runs()
    ok = len(records) == C1_WANTED and attempts <= C1_SEED_CAP
    assert len(records) == C1_WANTED, \
        f"only {len(records)} of {attempts} seeds converged"
    assert len(records) / attempts >= 0.5, \
        f"convergence rate collapsed: {len(records)}/{attempts}"
    worst_profit, worst_inv = 0.0, 0.0
    for rec in records:
        res, opt = rec["result"], rec["ext_objective"]
        assert res.status == "Converged"
        rel = abs(res.ub - opt) / (1 + abs(opt))
        worst_profit = max(worst_profit, rel)
        inst = rec["instance"]
        for c in inst.candidate_units:
            got = rec["result"].consensus[(1, 1, c.id)]
            want = rec["ext_investments"][(1, 1, c.id)]
            worst_inv = max(worst_inv, abs(got - want))
    ok = (worst_profit <= 0.005 and worst_inv <= 2 * C1_CFG["epsilon_mw"]
          and admm_seconds <= 600.0)
    announce(capsys, f"[criterion 1] {'PASS' if ok else 'FAIL'} — "
             f"{len(records)}/{attempts} seeds converged; worst profit error "
             f"{worst_profit:.2%}, worst first-stage deviation "
             f"{worst_inv:.4f} MW, decomposition time {admm_seconds:.0f}s")
    assert worst_profit <= 0.005
    assert worst_inv <= 2 * C1_CFG["epsilon_mw"]
    assert admm_seconds <= 600.0


def test_criterion_02_global_upper_bound_validity(capsys):
    records, _, _ = criterion1_runs()
    checked, slack = 0, np.inf
    for rec in records:
        opt = rec["ext_objective"]
        floor = opt - 1e-6 * (1 + abs(opt))
        for it in rec["result"].iterations:
            assert it.gub is not None, "bound cadence must fire every iteration"
            assert it.gub >= floor, \
                f"seed {rec['seed']} iteration {it.index}: GUB {it.gub} < {floor}"
            slack = min(slack, it.gub - floor)
            checked += 1
    announce(capsys, f"[criterion 2] PASS — GUB valid at all {checked} "
             f"iterations across {len(records)} runs (min slack {slack:.3g})")


def test_criterion_03_dual_zero_sum(capsys):
    records, _, _ = criterion1_runs()
    worst, checked = 0.0, 0
    for rec in records:
        for it in rec["result"].iterations:
            worst = max(worst, it.zero_sum_residual)
            checked += 1
    for res in criterion4_runs().values():
        for it in res.iterations:
            worst = max(worst, it.zero_sum_residual)
            checked += 1
    ok = worst <= 1e-8
    announce(capsys, f"[criterion 3] {'PASS' if ok else 'FAIL'} — "
             f"class-weighted dual sums ≤ {worst:.3g} relative over "
             f"{checked} iterations (limit 1e-8)")
    assert worst <= 1e-8


def test_criterion_04_penalty_weight_trend(capsys):
    runs = criterion4_runs()
    iters, gaps = [], []
    for rho in sorted(C4_RHOS):
        res = runs[rho]
        assert res.status == "Converged", f"fixture run rho={rho:g} stalled"
        iters.append(res.num_iterations)
        gaps.append(abs(res.gub - res.ub))
    strictly_fewer = iters[0] > iters[1] > iters[2]
    widening = gaps[0] <= gaps[1] + 1e-9 and gaps[1] <= gaps[2] + 1e-9
    ok = strictly_fewer and widening
    announce(capsys, f"[criterion 4] {'PASS' if ok else 'FAIL'} — iterations "
             f"{iters} strictly decreasing in rho; terminal |GUB-UB| "
             f"{[round(g) for g in gaps]} weakly increasing")
    assert strictly_fewer, f"iteration counts not strictly ordered: {iters}"
    assert widening, f"terminal gaps not weakly increasing: {gaps}"


def test_criterion_05_branch_and_bound_vs_enumeration(capsys):
    models = small_models(50, max_pairs=12)
    bnb_seconds, worst = 0.0, 0.0
    for model in models:
        t0 = time.monotonic()
        bnb = solve_mpcc(model)
        bnb_seconds += time.monotonic() - t0
        ref = enumerate_mpcc(model, backend="highs")
        assert bnb.status == ref.status == "Optimal"
        rel = abs(bnb.objective - ref.objective) / (1 + abs(ref.objective))
        worst = max(worst, rel)
        REVENUE_ERRORS.append(revenue_identity_max_error(model, bnb.x))
    ok = worst <= 1e-6 and bnb_seconds <= 120.0
    announce(capsys, f"[criterion 5] {'PASS' if ok else 'FAIL'} — "
             f"{len(models)} MPCCs match enumeration (worst {worst:.3g} "
             f"relative) in {bnb_seconds:.1f}s")
    assert worst <= 1e-6
    assert bnb_seconds <= 120.0


def test_criterion_06_market_clearing_duality(capsys):
    rng = np.random.default_rng(20240824)

    def blocks(prefix, count, qmax, pmax):
        return [Block(f"{prefix}{i}", float(rng.uniform(0, qmax)),
                      float(rng.uniform(0, pmax)))
                for i in range(count)]

    worst_welfare, worst_duality = 0.0, 0.0
    for _ in range(1000):
        inp = ClearingInput(
            demands=blocks("d", int(rng.integers(1, 4)), 150, 60),
            rivals=blocks("r", int(rng.integers(0, 5)), 100, 50),
            existing=blocks("e", int(rng.integers(0, 3)), 100, 50),
            candidates=blocks("c", int(rng.integers(0, 3)), 80, 50),
        )
        lp_out = clear_market_lp(inp)
        mo_out = clear_market_merit_order(inp)
        scale = 1 + abs(mo_out.objective)
        worst_welfare = max(worst_welfare,
                            abs(lp_out.objective - mo_out.objective) / scale)
        dual = lp_out.lp_solution.dual_objective(build_clearing_lp(inp))
        worst_duality = max(worst_duality,
                            abs(lp_out.objective - dual) / scale)
    ok = worst_welfare <= 1e-9 and worst_duality <= 1e-8
    announce(capsys, f"[criterion 6] {'PASS' if ok else 'FAIL'} — 1000 "
             f"clearings: LP vs merit-order ≤ {worst_welfare:.3g}, duality "
             f"gap ≤ {worst_duality:.3g}")
    assert worst_welfare <= 1e-9
    assert worst_duality <= 1e-8


def test_criterion_07_revenue_linearization_identity(capsys):
    # Decomposition runs in suites 1 and 4 check the identity inline at every
    # scenario solve (verify_revenue raises on violation); this aggregates the
    # explicit checks at extensive-form and branch-and-bound optima.
    criterion1_runs()
    criterion4_runs()
    assert REVENUE_ERRORS, "suites 1 and 5 must run before this aggregation"
    worst = max(REVENUE_ERRORS)
    ok = worst <= 1e-6
    announce(capsys, f"[criterion 7] {'PASS' if ok else 'FAIL'} — revenue "
             f"identity ≤ {worst:.3g} relative at {len(REVENUE_ERRORS)} "
             f"optima, plus inline checks at every decomposition solve")
    assert worst <= 1e-6


def test_criterion_08_single_scenario_collapse(capsys):
    inst = generate_smoke_instance()
    res = admm_solve(inst, AdmmConfig(verify_revenue=True))
    model = build_extensive_form(inst)
    ext = solve_mpcc(model)
    scale = 1 + abs(ext.objective)
    ok = (res.status == "Converged" and res.iterations[0].index == 0
          and len(res.iterations) == 1
          and abs(res.gub - ext.objective) <= 1e-6 * scale
          and abs(res.ub - ext.objective) <= 1e-6 * scale)
    announce(capsys, f"[criterion 8] {'PASS' if ok else 'FAIL'} — single "
             f"scenario converges at iteration 0 with GUB = UB = optimum "
             f"(gaps {abs(res.gub - ext.objective):.3g} / "
             f"{abs(res.ub - ext.objective):.3g})")
    assert ok


def test_criterion_09_subproblem_size_reduction(capsys):
    inst = generate_study_instance()
    sub = model_statistics(build_scenario_mpcc(inst, 1, 1))
    ext = model_statistics(build_extensive_form(inst))
    ratio = sub["num_comp_pairs"] / ext["num_comp_pairs"]
    target = 1 / len(inst.scenario_pairs())
    ok = abs(ratio - target) <= 0.15 * target
    announce(capsys, f"[criterion 9] {'PASS' if ok else 'FAIL'} — "
             f"{sub['num_comp_pairs']} of {ext['num_comp_pairs']} "
             f"complementarity pairs per subproblem (ratio {ratio:.4f}, "
             f"target {target:.4f} ± 15%)")
    assert ok


def test_criterion_10_byte_identical_reruns(capsys, tmp_path):
    records, _, _ = criterion1_runs()
    picks = sorted(records, key=lambda r: (r["result"].num_iterations,
                                           r["seed"]))[:3]
    full_cfg = AdmmConfig(bound_cadence=1, **C1_CFG)
    mismatches = []
    for rec in picks:
        first = admm_csv_bytes(rec["result"], C1_CFG["epsilon_mw"],
                               tmp_path / f"c1_{rec['seed']}_a.csv")
        for workers in (1, 2):
            cfg = AdmmConfig(**{**dict(bound_cadence=1, **C1_CFG),
                                "workers": workers})
            rerun = admm_solve(rec["instance"], cfg)
            again = admm_csv_bytes(rerun, C1_CFG["epsilon_mw"],
                                   tmp_path / f"c1_{rec['seed']}_w{workers}.csv")
            if again != first:
                mismatches.append(("criterion-1", rec["seed"], workers))
    inst = generate_study_instance()
    for rho, res in criterion4_runs().items():
        first = admm_csv_bytes(res, C4_CFG["epsilon_mw"],
                               tmp_path / f"c4_{rho:g}_a.csv")
        rerun = admm_solve(inst, AdmmConfig(rho=rho,
                                            **{**C4_CFG, "workers": 3}))
        again = admm_csv_bytes(rerun, C4_CFG["epsilon_mw"],
                               tmp_path / f"c4_{rho:g}_b.csv")
        if again != first:
            mismatches.append(("criterion-4", rho, 3))
    ok = not mismatches
    announce(capsys, f"[criterion 10] {'PASS' if ok else 'FAIL'} — "
             f"{3 * 2} criterion-1 and {len(C4_RHOS)} criterion-4 reruns "
             f"across worker counts byte-identical"
             + ("" if ok else f"; mismatches: {mismatches}"))
    assert ok, f"non-deterministic outputs: {mismatches}"
