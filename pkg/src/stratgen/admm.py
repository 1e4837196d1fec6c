"""Consensus-ADMM scenario decomposition with Lagrangian bound tracking.

Non-anticipativity across the combined (long-term x market) scenario tree is
relaxed; each (gamma, k) subproblem is a scenario MPCC with a dual price on
its investment variables and a piecewise-linearized proximal penalty.  The
loop alternates subproblem solves, probability-weighted consensus averaging,
and dual updates, and tracks two bounds:

* GUB: sum of globally solved Lagrangian subproblems (no proximal term);
  a valid upper bound on the extensive optimum whenever the class-weighted
  duals sum to zero, which the dual update preserves exactly.
* UB: expected profit with investments fixed to the current iterates; built
  from feasible points, so the two bounds meeting certifies optimality.
"""

from __future__ import annotations

import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .branch_bound import solve_mpcc
from .constants import DEFAULT_COMP_TOL, DEFAULT_REL_GAP
from .model import Instance, combined_class
from .reformulate import (DEFAULT_PWL_SEGMENTS, build_admm_subproblem,
                          build_fixed_investment_problem, investment_values,
                          revenue_identity_max_error)

ZERO_SUM_TOL = 1e-8


@dataclass
class AdmmConfig:
    rho: float = 100.0              # consensus penalty, $/MW^2
    epsilon_mw: float = 0.01        # residual tolerance, MW
    max_iters: int = 500            # iterations after iteration 0
    anchor_mode: str = "local"      # proximal center: own previous X | consensus
    pwl_segments: int = DEFAULT_PWL_SEGMENTS
    refine_cuts: bool = True
    bound_cadence: int | None = None  # None -> 1 if <= 16 subproblems else 5
    price_cap: float | None = None
    rel_gap: float = DEFAULT_REL_GAP
    comp_tol: float = DEFAULT_COMP_TOL
    backend: str = "highs"
    workers: int = 1
    verify_revenue: bool = False

    def validate(self):
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        if self.epsilon_mw <= 0:
            raise ValueError("epsilon_mw must be > 0")
        if self.max_iters < 0:
            raise ValueError("max_iters must be >= 0")
        if self.pwl_segments < 1:
            raise ValueError("pwl_segments must be >= 1")
        if self.anchor_mode not in ("local", "consensus"):
            raise ValueError(f"unknown anchor_mode {self.anchor_mode!r}")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def cadence(self, n_subproblems: int) -> int:
        if self.bound_cadence is not None:
            return max(int(self.bound_cadence), 1)
        return 1 if n_subproblems <= 16 else 5


@dataclass
class AdmmIteration:
    index: int
    x: dict                         # (gamma, k) -> {(t, c): MW}
    consensus: dict                 # (gamma, k) -> {(t, c): MW}
    mu: dict                        # (gamma, k) -> {(t, c): $/MW}, post-update
    max_residual: float             # max |X - Xbar| (MW)
    zero_sum_residual: float           # worst relative class-weighted dual sum
    gub: float | None = None
    ub: float | None = None
    wall_seconds: float = 0.0

    @property
    def gap(self):
        if self.gub is None or self.ub is None:
            return None
        return abs(self.gub - self.ub)


@dataclass
class AdmmRunResult:
    status: str                     # Converged | IterLimit
    iterations: list = field(default_factory=list)
    consensus: dict = field(default_factory=dict)   # (t, gamma, c) -> MW
    profit_estimate: float = np.nan                 # terminal UB
    gub: float = np.nan
    ub: float = np.nan

    @property
    def num_iterations(self):
        return len(self.iterations)


class SubproblemError(RuntimeError):
    """A scenario solve did not reach optimality; identifies the scenario."""


def _x_keys(instance: Instance):
    return [(t, c.id) for t in instance.stage_indices()
            for c in instance.candidate_units]


def _consensus_classes(instance: Instance):
    """(t, frozen member list with weights) per stage and combined class."""
    out = []
    for t in instance.stage_indices():
        seen = set()
        for gamma, k in instance.scenario_pairs():
            members = combined_class(instance, t, gamma, k)
            key = tuple(pair for pair, _ in members)
            if key in seen:
                continue
            seen.add(key)
            out.append((t, members))
    return out


def consensus_update(instance: Instance, x: dict) -> dict:
    """Probability-weighted class averages; identical for all class members."""
    xbar = {pair: {} for pair in instance.scenario_pairs()}
    for t, members in _consensus_classes(instance):
        for c in instance.candidate_units:
            avg = sum(w * x[pair][(t, c.id)] for pair, w in members)
            for pair, _ in members:
                xbar[pair][(t, c.id)] = avg
    return xbar


def dual_update(instance: Instance, mu: dict, x: dict, xbar: dict,
                rho: float) -> dict:
    """mu += rho (X - Xbar), then exact re-projection onto zero class sums.

    The class-weighted dual sums are zero in exact arithmetic because Xbar is
    the class average; floating point leaves ~1e-12 drift that would
    accumulate over iterations, so the (mathematically no-op) weighted mean
    is subtracted per class after every update.
    """
    out = {
        pair: {key: mu[pair][key] + rho * (x[pair][key] - xbar[pair][key])
               for key in mu[pair]}
        for pair in mu
    }
    for t, members in _consensus_classes(instance):
        for c in instance.candidate_units:
            key = (t, c.id)
            mean = sum(w * out[pair][key] for pair, w in members)
            for pair, _ in members:
                out[pair][key] -= mean
    return out


def max_residual(x: dict, xbar: dict) -> float:
    worst = 0.0
    for pair in x:
        for key in x[pair]:
            worst = max(worst, abs(x[pair][key] - xbar[pair][key]))
    return worst


def zero_sum_residual(instance: Instance, mu: dict) -> float:
    """Worst relative class-weighted dual sum (exactly 0 in exact arithmetic).

    Classes whose entire dual mass sits at floating-point noise relative to
    the largest dual in the run are numerically zero and are skipped: a
    relative measure is meaningless there.
    """
    top = max((abs(v) for vals in mu.values() for v in vals.values()),
              default=0.0)
    floor = 1e-9 * (1.0 + top)
    worst = 0.0
    for t, members in _consensus_classes(instance):
        for c in instance.candidate_units:
            total = sum(w * mu[pair][(t, c.id)] for pair, w in members)
            scale = sum(w * abs(mu[pair][(t, c.id)]) for pair, w in members)
            if scale > floor:
                worst = max(worst, abs(total) / scale)
    return worst


def _solve_task(task):
    """One scenario solve; picklable unit of work for the process pool.

    mode 'subproblem': ADMM subproblem (dual term + proximal penalty);
    mode 'gub': Lagrangian subproblem (dual term only, solved for its bound);
    mode 'ub': investments fixed, profit evaluation.
    """
    (mode, instance, gamma, k, mu_gk, anchor_gk, x_gk, cfg_fields, hint) = task
    (rho, pwl_segments, refine_cuts, price_cap, rel_gap, comp_tol,
     backend, verify_revenue) = cfg_fields
    if mode == "subproblem":
        model = build_admm_subproblem(instance, gamma, k, mu_gk, anchor_gk,
                                      rho, pwl_segments, price_cap,
                                      refine_cuts)
    elif mode == "gub":
        model = build_admm_subproblem(instance, gamma, k, mu_gk, {}, 0.0,
                                      pwl_segments, price_cap)
    else:
        model = build_fixed_investment_problem(instance, gamma, k, x_gk,
                                               price_cap)
    res = solve_mpcc(model, rel_gap=rel_gap, comp_tol=comp_tol,
                     backend=backend, hint_decisions=hint)
    if res.status != "Optimal":
        raise SubproblemError(
            f"{mode} solve for scenario (gamma={gamma}, k={k}) "
            f"ended with status {res.status}")
    if verify_revenue:
        err = revenue_identity_max_error(model, res.x)
        if err > 1e-6:
            raise AssertionError(
                f"revenue linearization identity violated at scenario "
                f"(gamma={gamma}, k={k}): relative error {err:.3e}")
    x_vals = {(t, c): v for (t, g, c), v in
              investment_values(model, res.x).items()}
    return gamma, k, x_vals, res.objective, res.best_bound, res.decisions


def _run_sweep(pool, tasks):
    """Deterministic reduction: results keyed by (gamma, k), order fixed."""
    if pool is None:
        results = [_solve_task(t) for t in tasks]
    else:
        results = list(pool.map(_solve_task, tasks))
    return {(g, k): (x, obj, bound, dec) for g, k, x, obj, bound, dec
            in results}


def subproblem_step(instance: Instance, gamma: int, k: int, mu: dict,
                    anchor: dict, config: AdmmConfig, hint=()):
    """Single scenario subproblem; returns (X values, objective)."""
    cfg = (config.rho, config.pwl_segments, config.refine_cuts,
           config.price_cap, config.rel_gap, config.comp_tol, config.backend,
           config.verify_revenue)
    _, _, x_vals, obj, _, _ = _solve_task(
        ("subproblem", instance, gamma, k, mu, anchor, None, cfg, hint))
    return x_vals, obj


def compute_gub(instance: Instance, mu: dict, config: AdmmConfig,
                pool=None, hints=None) -> float:
    """Probability-weighted sum of Lagrangian subproblem bounds.

    Valid upper bound on the extensive optimum only under the zero-sum dual
    condition, so that is asserted first.  Early-terminated scenario solves
    still contribute a valid (looser) bound via their best remaining bound.
    """
    res = zero_sum_residual(instance, mu)
    if res > ZERO_SUM_TOL:
        raise AssertionError(
            f"class-weighted dual sums violate the zero-sum condition "
            f"({res:.3e} relative); the bound would be invalid")
    cfg = (config.rho, config.pwl_segments, config.refine_cuts,
           config.price_cap, config.rel_gap, config.comp_tol, config.backend,
           config.verify_revenue)
    hints = hints or {}
    tasks = [("gub", instance, g, k, mu[(g, k)], None, None, cfg,
              hints.get((g, k), ()))
             for g, k in instance.scenario_pairs()]
    out = _run_sweep(pool, tasks)
    gub = 0.0
    for g, k in instance.scenario_pairs():
        _, _, bound, dec = out[(g, k)]
        gub += instance.pair_probability(g, k) * bound
        hints[(g, k)] = dec
    return gub


def compute_ub(instance: Instance, x: dict, config: AdmmConfig,
               pool=None, hints=None) -> float:
    """Expected profit with investments fixed to the current iterates."""
    cfg = (config.rho, config.pwl_segments, config.refine_cuts,
           config.price_cap, config.rel_gap, config.comp_tol, config.backend,
           config.verify_revenue)
    hints = hints or {}
    tasks = [("ub", instance, g, k, None, None, x[(g, k)], cfg,
              hints.get((g, k), ()))
             for g, k in instance.scenario_pairs()]
    out = _run_sweep(pool, tasks)
    ub = 0.0
    for g, k in instance.scenario_pairs():
        _, obj, _, dec = out[(g, k)]
        ub += instance.pair_probability(g, k) * obj
        hints[(g, k)] = dec
    return ub


def admm_solve(instance: Instance, config: AdmmConfig) -> AdmmRunResult:
    """Run the consensus loop until residuals drop below epsilon.

    Iteration 0 solves the subproblems with zero duals and no proximal term,
    then applies the consensus and dual updates; later iterations carry the
    duals and anchor the penalty per ``anchor_mode``.  Bounds are computed
    every ``cadence`` iterations and always at the terminal iteration.
    """
    config.validate()
    pairs = instance.scenario_pairs()
    keys = _x_keys(instance)
    cadence = config.cadence(len(pairs))
    cfg = (config.rho, config.pwl_segments, config.refine_cuts,
           config.price_cap, config.rel_gap, config.comp_tol, config.backend,
           config.verify_revenue)

    pool = None
    if config.workers > 1 and len(pairs) > 1:
        pool = ProcessPoolExecutor(max_workers=min(config.workers, len(pairs)))
    sub_hints, gub_hints, ub_hints = {}, {}, {}
    mu = {pair: {key: 0.0 for key in keys} for pair in pairs}
    x = None
    result = AdmmRunResult(status="IterLimit")

    try:
        for nu in range(config.max_iters + 1):
            start = time.monotonic()
            tasks = []
            for g, k in pairs:
                if nu == 0:
                    mu_gk, anchor, rho = {}, {}, 0.0
                else:
                    mu_gk = mu[(g, k)]
                    anchor = (x[(g, k)] if config.anchor_mode == "local"
                              else xbar[(g, k)])
                    rho = config.rho
                tasks.append(("subproblem", instance, g, k, mu_gk, anchor,
                              None, (rho,) + cfg[1:],
                              sub_hints.get((g, k), ())))
            out = _run_sweep(pool, tasks)
            x = {}
            for g, k in pairs:
                x_vals, _, _, dec = out[(g, k)]
                x[(g, k)] = x_vals
                sub_hints[(g, k)] = dec

            xbar = consensus_update(instance, x)
            mu = dual_update(instance, mu, x, xbar, config.rho)
            residual = max_residual(x, xbar)
            converged = residual <= config.epsilon_mw
            last = converged or nu == config.max_iters

            gub = ub = None
            if nu % cadence == 0 or last:
                gub = compute_gub(instance, mu, config, pool, gub_hints)
                ub = compute_ub(instance, x, config, pool, ub_hints)
            result.iterations.append(AdmmIteration(
                index=nu,
                x={pair: dict(x[pair]) for pair in pairs},
                consensus={pair: dict(xbar[pair]) for pair in pairs},
                mu={pair: dict(mu[pair]) for pair in pairs},
                max_residual=residual,
                zero_sum_residual=zero_sum_residual(instance, mu),
                gub=gub, ub=ub,
                wall_seconds=time.monotonic() - start,
            ))
            if converged:
                result.status = "Converged"
                break
    finally:
        if pool is not None:
            pool.shutdown()

    final = result.iterations[-1]
    result.gub = final.gub if final.gub is not None else np.nan
    result.ub = final.ub if final.ub is not None else np.nan
    result.profit_estimate = result.ub
    for (g, k), vals in final.consensus.items():
        for (t, c), v in vals.items():
            result.consensus[(t, g, c)] = v
    return result


def gap_report(result: AdmmRunResult, epsilon_mw: float) -> list:
    """Per-iteration bound/gap rows plus the optimality-certificate flag."""
    rows = []
    for it in result.iterations:
        gap = it.gap
        rel = None
        cert = False
        if gap is not None:
            rel = gap / (1 + abs(it.ub))
            cert = gap <= 1e-6 * (1 + abs(it.ub)) and \
                it.max_residual <= epsilon_mw
        rows.append({
            "iter": it.index,
            "gub": it.gub,
            "ub": it.ub,
            "abs_gap": gap,
            "rel_gap": rel,
            "max_residual_mw": it.max_residual,
            "certificate": cert,
        })
    return rows
