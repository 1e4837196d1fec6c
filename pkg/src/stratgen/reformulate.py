"""Single-level reformulation of the bilevel investment problem.

Each market clearing is replaced by its KKT system (stationarity, primal
feasibility, complementarity pairs) and the bilinear revenue term
lambda * dispatch is substituted by its exact linear equivalent derived from
lower-level strong duality plus complementarity:

    sum_strategic lambda P  =  sum_d b P_d - sum_r cR P_r
                               - sum_d muU_d cap_d - sum_r muU_r cap_r

(the products of offer-quantity variables with their own bound duals cancel
against the strategic terms of the dual objective).  The result is a linear
program plus a list of complementarity pairs -- an MPCC solved by branching.

Three flavors are built from one core: the per-(gamma, k) scenario model,
the extensive form (investment variables shared per long-term tree node),
and evaluation variants with dual/proximal terms or fixed investments.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .model import Instance, WIND
from .simplex import EQUAL, GREATER, LESS, LinearProgram

DEFAULT_PWL_SEGMENTS = 200


@dataclass
class ClearingRef:
    """Column bookkeeping for one (t, h) clearing inside a model."""

    t: int
    h: int
    gamma: int
    k: int
    weight: float                  # DF_t * N_h
    lam: int                       # lambda column
    demand_cols: dict              # d -> (P, muL, muU, slack)
    rival_cols: dict               # r -> (P, muL, muU, slack)
    existing_cols: dict            # e -> (P, muL, muU, slack, Pbar, beta)
    candidate_cols: dict           # c -> (P, muL, muU, slack, Pbar, beta)
    demand_caps: dict              # d -> max load * demand factor
    rival_caps: dict               # r -> offer qty (CF-scaled for wind)
    existing_caps: dict            # e -> installed capacity (CF-scaled)
    demand_utils: dict             # d -> b
    rival_prices: dict             # r -> cR
    existing_costs: dict           # e -> marginal cost
    candidate_costs: dict          # c -> marginal cost


@dataclass
class MpccModel:
    """Linear model plus complementarity pairs and investment bookkeeping."""

    var_names: list = field(default_factory=list)
    var_roles: list = field(default_factory=list)
    lower: list = field(default_factory=list)
    upper: list = field(default_factory=list)
    obj: list = field(default_factory=list)
    rows: list = field(default_factory=list)       # (coeff dict, sense, rhs)
    comp_pairs: list = field(default_factory=list)  # (col_i, col_j)
    investment_cols: dict = field(default_factory=dict)  # (t, scope, c) -> col
    clearings: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add_var(self, name, role, lower=0.0, upper=np.inf, obj=0.0) -> int:
        self.var_names.append(name)
        self.var_roles.append(role)
        self.lower.append(lower)
        self.upper.append(upper)
        self.obj.append(obj)
        return len(self.var_names) - 1

    def add_row(self, coeffs: dict, sense: str, rhs: float):
        self.rows.append((coeffs, sense, rhs))

    def add_obj(self, col: int, coeff: float):
        self.obj[col] += coeff

    @property
    def num_vars(self) -> int:
        return len(self.var_names)

    def to_lp(self) -> LinearProgram:
        n = self.num_vars
        m = len(self.rows)
        data, ri, ci = [], [], []
        senses, rhs = [], np.zeros(m)
        for i, (coeffs, sense, b) in enumerate(self.rows):
            senses.append(sense)
            rhs[i] = b
            for j, v in coeffs.items():
                if v != 0.0:
                    ri.append(i)
                    ci.append(j)
                    data.append(v)
        a = sp.csr_matrix((data, (ri, ci)), shape=(m, n))
        return LinearProgram(
            c=np.array(self.obj, dtype=float),
            lower=np.array(self.lower, dtype=float),
            upper=np.array(self.upper, dtype=float),
            a=a,
            senses=senses,
            rhs=rhs,
        )


def default_price_cap(instance: Instance) -> float:
    """Offer-price cap keeping the relaxation bounded: 2 x max utility."""
    top = max(
        (b for s in instance.short_term_scenarios for b in s.demand_utility.values()),
        default=0.0,
    )
    return 2.0 * top if top > 0 else 1.0


def _cumulative_x(x_cols, t, c_id, stages):
    """Investment columns active at stage t (capacity is cumulative)."""
    return [x_cols[(tau, c_id)] for tau in stages if tau <= t]


def _add_scenario(model: MpccModel, instance: Instance, gamma: int, k: int,
                  weight: float, x_cols: dict, price_cap: float,
                  add_investment_rows: bool, invest_weight: float):
    """Append one scenario's constraints/objective, reusing given X columns.

    ``weight`` scales the operating objective terms, ``invest_weight`` the
    investment-cost terms (they differ in the extensive form where the cost
    must count once per long-term scenario, not once per market scenario).
    """
    lt = instance.lt_by_index(gamma)
    st = instance.ms_by_index(k)
    stages = instance.stage_indices()
    dual_cap = 2.0 * price_cap
    tag = f"g{gamma}k{k}"

    for stage in instance.stages:
        t = stage.index
        # investment cost: a_t * c_inv applied to cumulative capacity
        for c in instance.candidate_units:
            coef = stage.discount_factor * stage.amortization_rate \
                * lt.investment_cost[(t, c.id)]
            for tau in stages:
                if tau <= t:
                    model.add_obj(x_cols[(tau, c.id)], -invest_weight * coef)
        if add_investment_rows:
            budget = {x_cols[(t, c.id)]: lt.investment_cost[(t, c.id)]
                      for c in instance.candidate_units}
            if budget:
                model.add_row(budget, LESS, stage.budget)

        for oc in instance.operating_conditions:
            h = oc.index
            w = weight * stage.discount_factor * oc.weight_hours
            ref = ClearingRef(
                t=t, h=h, gamma=gamma, k=k,
                weight=stage.discount_factor * oc.weight_hours,
                lam=-1, demand_cols={}, rival_cols={}, existing_cols={},
                candidate_cols={}, demand_caps={}, rival_caps={},
                existing_caps={}, demand_utils={}, rival_prices={},
                existing_costs={}, candidate_costs={},
            )
            name = f"[{tag},t{t},h{h}"
            lam = model.add_var(f"lam{name}]", "price", 0.0, price_cap)
            ref.lam = lam
            balance = {}

            for d in instance.demands:
                cap = lt.peak_load[(t, d.id)] * oc.demand_factor[d.id]
                b = st.demand_utility[(t, d.id)]
                p = model.add_var(f"P_D{name},{d.id}]", "dispatch", 0.0, cap, w * b)
                s = model.add_var(f"s_D{name},{d.id}]", "slack")
                ml = model.add_var(f"muL_D{name},{d.id}]", "dual", 0.0, dual_cap)
                mu = model.add_var(f"muU_D{name},{d.id}]", "dual", 0.0, dual_cap,
                                   -w * cap)
                model.add_row({p: 1.0, s: 1.0}, EQUAL, cap)
                # stationarity: lam = b - muU + muL
                model.add_row({lam: 1.0, mu: 1.0, ml: -1.0}, EQUAL, b)
                model.comp_pairs.append((ml, p))
                model.comp_pairs.append((mu, s))
                balance[p] = -1.0
                ref.demand_cols[d.id] = (p, ml, mu, s)
                ref.demand_caps[d.id] = cap
                ref.demand_utils[d.id] = b

            for r in instance.rival_units:
                cap = lt.rival_offer_quantity[(t, h, k, r.id)]
                if r.technology == WIND:
                    cap *= oc.wind_capacity_factor[r.id]
                price = st.rival_offer_price[(t, gamma, r.id)]
                p = model.add_var(f"P_R{name},{r.id}]", "dispatch", 0.0, cap,
                                  -w * price)
                s = model.add_var(f"s_R{name},{r.id}]", "slack")
                ml = model.add_var(f"muL_R{name},{r.id}]", "dual", 0.0, dual_cap)
                mu = model.add_var(f"muU_R{name},{r.id}]", "dual", 0.0, dual_cap,
                                   -w * cap)
                model.add_row({p: 1.0, s: 1.0}, EQUAL, cap)
                # stationarity: lam = price + muU - muL
                model.add_row({lam: 1.0, mu: -1.0, ml: 1.0}, EQUAL, price)
                model.comp_pairs.append((ml, p))
                model.comp_pairs.append((mu, s))
                balance[p] = 1.0
                ref.rival_cols[r.id] = (p, ml, mu, s)
                ref.rival_caps[r.id] = cap
                ref.rival_prices[r.id] = price

            sos_lhs = {}
            for e in instance.existing_units:
                cap = e.installed_capacity
                if e.technology == WIND:
                    cap *= oc.wind_capacity_factor[e.id]
                cost = lt.marginal_cost[(t, e.id)]
                pbar = model.add_var(f"Pbar_E{name},{e.id}]", "offer_qty", 0.0, cap)
                beta = model.add_var(f"beta_E{name},{e.id}]", "offer_price",
                                     0.0, price_cap)
                p = model.add_var(f"P_E{name},{e.id}]", "dispatch", 0.0, cap,
                                  -w * cost)
                s = model.add_var(f"s_E{name},{e.id}]", "slack")
                ml = model.add_var(f"muL_E{name},{e.id}]", "dual", 0.0, dual_cap)
                mu = model.add_var(f"muU_E{name},{e.id}]", "dual", 0.0, dual_cap)
                model.add_row({p: 1.0, s: 1.0, pbar: -1.0}, EQUAL, 0.0)
                # stationarity: lam = beta + muU - muL
                model.add_row({lam: 1.0, beta: -1.0, mu: -1.0, ml: 1.0}, EQUAL, 0.0)
                model.comp_pairs.append((ml, p))
                model.comp_pairs.append((mu, s))
                balance[p] = 1.0
                sos_lhs[pbar] = 1.0
                ref.existing_cols[e.id] = (p, ml, mu, s, pbar, beta)
                ref.existing_caps[e.id] = cap
                ref.existing_costs[e.id] = cost

            for c in instance.candidate_units:
                cost = lt.marginal_cost[(t, c.id)]
                pbar = model.add_var(f"Pbar_C{name},{c.id}]", "offer_qty")
                beta = model.add_var(f"beta_C{name},{c.id}]", "offer_price",
                                     0.0, price_cap)
                p = model.add_var(f"P_C{name},{c.id}]", "dispatch", 0.0, np.inf,
                                  -w * cost)
                s = model.add_var(f"s_C{name},{c.id}]", "slack")
                ml = model.add_var(f"muL_C{name},{c.id}]", "dual", 0.0, dual_cap)
                mu = model.add_var(f"muU_C{name},{c.id}]", "dual", 0.0, dual_cap)
                # offer limited by installed (cumulative) capacity
                cf = oc.wind_capacity_factor[c.id] if c.technology == WIND else 1.0
                lim = {x_cols[(tau, c.id)]: -cf for tau in stages if tau <= t}
                lim[pbar] = 1.0
                model.add_row(lim, LESS, 0.0)
                model.add_row({p: 1.0, s: 1.0, pbar: -1.0}, EQUAL, 0.0)
                model.add_row({lam: 1.0, beta: -1.0, mu: -1.0, ml: 1.0}, EQUAL, 0.0)
                model.comp_pairs.append((ml, p))
                model.comp_pairs.append((mu, s))
                balance[p] = 1.0
                sos_lhs[pbar] = 1.0
                ref.candidate_cols[c.id] = (p, ml, mu, s, pbar, beta)
                ref.candidate_costs[c.id] = cost

            model.add_row(balance, EQUAL, 0.0)
            if instance.sos_factor > 0 and sos_lhs:
                # offered strategic + rival capacity covers the SoS share of load
                rival_total = sum(
                    lt.rival_offer_quantity[(t, h, k, r.id)]
                    for r in instance.rival_units
                )
                load = sum(lt.peak_load[(t, d.id)] * oc.demand_factor[d.id]
                           for d in instance.demands)
                model.add_row(dict(sos_lhs), GREATER,
                              instance.sos_factor * load - rival_total)
            model.clearings.append(ref)


def revenue_linearization_terms(model: MpccModel, ref: ClearingRef) -> dict:
    """Linear substitute for lambda * strategic dispatch of one clearing.

    Returns column -> coefficient; equals sum_strategic lambda*P at every
    point satisfying the clearing's KKT system.
    """
    expr = {}
    for d, (p, _, mu, _) in ref.demand_cols.items():
        expr[p] = expr.get(p, 0.0) + ref.demand_utils[d]
        expr[mu] = expr.get(mu, 0.0) - ref.demand_caps[d]
    for r, (p, _, mu, _) in ref.rival_cols.items():
        expr[p] = expr.get(p, 0.0) - ref.rival_prices[r]
        expr[mu] = expr.get(mu, 0.0) - ref.rival_caps[r]
    return expr


def build_scenario_mpcc(instance: Instance, gamma: int, k: int,
                        price_cap: float | None = None) -> MpccModel:
    """Single-scenario MPCC: all constraints of one (gamma, k), KKT-collapsed.

    Probability weights are NOT applied; the caller owns them.
    """
    if price_cap is None:
        price_cap = default_price_cap(instance)
    model = MpccModel(meta={"gamma": gamma, "k": k, "price_cap": price_cap})
    x_cols = {}
    for t in instance.stage_indices():
        for c in instance.candidate_units:
            col = model.add_var(f"X[t{t},{c.id}]", "investment",
                                0.0, c.max_capacity)
            x_cols[(t, c.id)] = col
            model.investment_cols[(t, gamma, c.id)] = col
    _add_scenario(model, instance, gamma, k, weight=1.0, x_cols=x_cols,
                  price_cap=price_cap, add_investment_rows=True,
                  invest_weight=1.0)
    return model


def build_extensive_form(instance: Instance,
                         price_cap: float | None = None) -> MpccModel:
    """All scenarios at once, investment variables shared per tree node.

    Non-anticipativity is enforced by variable identification: one X column
    per (stage, long-term class, candidate).  Because those columns are
    shared and market-scenario probabilities sum to one, weighting every
    scenario objective by pi_LT*pi_MS leaves the investment cost counted
    once per long-term scenario, as required.
    """
    if price_cap is None:
        price_cap = default_price_cap(instance)
    model = MpccModel(meta={"extensive": True, "price_cap": price_cap})
    class_cols = {}
    for t in instance.stage_indices():
        for ci, cls in enumerate(instance.tree.classes(t)):
            for c in instance.candidate_units:
                col = model.add_var(f"X[t{t},n{ci},{c.id}]", "investment",
                                    0.0, c.max_capacity)
                class_cols[(t, ci, c.id)] = col

    first_k = min(s.index for s in instance.short_term_scenarios)
    for gamma, k in instance.scenario_pairs():
        x_cols = {}
        for t in instance.stage_indices():
            classes = instance.tree.classes(t)
            ci = next(i for i, cls in enumerate(classes) if gamma in cls)
            for c in instance.candidate_units:
                col = class_cols[(t, ci, c.id)]
                x_cols[(t, c.id)] = col
                model.investment_cols[(t, gamma, c.id)] = col
        w = instance.pair_probability(gamma, k)
        _add_scenario(model, instance, gamma, k, weight=w, x_cols=x_cols,
                      price_cap=price_cap,
                      add_investment_rows=(k == first_k), invest_weight=w)
    return model


def proximal_cuts(rho: float, anchor: float, x_max: float, segments: int,
                  refine: bool = True) -> list:
    """Tangent cuts of (rho/2)(x - anchor)^2 over [0, x_max].

    Returns (x_i, value, slope) triples: the epigraph variable must satisfy
    z >= value + slope * (x - x_i) for each.  Breakpoints are uniform over
    [0, x_max]; with ``refine``, extra tangents at geometrically shrinking
    offsets around the anchor (plus one at the anchor itself) pin the upper
    envelope's minimum to the anchor at sub-breakpoint resolution, which is
    what lets consensus residuals fall well below the breakpoint spacing.
    Extra tangents of the same convex function only tighten the envelope.
    """
    if rho < 0:
        raise ValueError("rho must be >= 0")
    if segments < 1:
        raise ValueError("pwl_segments must be >= 1")
    points = list(np.linspace(0.0, x_max, segments + 1))
    if refine and x_max > 0:
        offset = x_max / segments / 2
        min_offset = x_max * 1e-6
        while True:
            points.append(min(max(anchor - offset, 0.0), x_max))
            points.append(min(max(anchor + offset, 0.0), x_max))
            if offset <= min_offset:
                break
            offset = max(offset / 2, min_offset)
        points.append(min(max(anchor, 0.0), x_max))
    cuts = []
    for x_i in points:
        val = 0.5 * rho * (x_i - anchor) ** 2
        slope = rho * (x_i - anchor)
        cuts.append((float(x_i), float(val), float(slope)))
    return cuts


def attach_admm_terms(model: MpccModel, instance: Instance, mu: dict,
                      anchor: dict, rho: float,
                      pwl_segments: int = DEFAULT_PWL_SEGMENTS,
                      refine_cuts: bool = True):
    """Add -mu'X and the piecewise-linear proximal penalty to a model.

    ``mu`` and ``anchor`` map (t, candidate id) -> value.  The quadratic
    penalty is encoded per investment variable by an epigraph auxiliary with
    tangent cuts (see proximal_cuts); -z enters the maximized objective.
    """
    if rho < 0:
        raise ValueError("rho must be >= 0")
    if pwl_segments < 1:
        raise ValueError("pwl_segments must be >= 1")
    gamma = model.meta["gamma"]
    for t in instance.stage_indices():
        for c in instance.candidate_units:
            col = model.investment_cols[(t, gamma, c.id)]
            model.add_obj(col, -float(mu.get((t, c.id), 0.0)))
            if rho == 0:
                continue
            a = float(anchor.get((t, c.id), 0.0))
            z = model.add_var(f"zprox[t{t},{c.id}]", "epigraph", 0.0, np.inf,
                              -1.0)
            for x_i, val, slope in proximal_cuts(rho, a, c.max_capacity,
                                                 pwl_segments, refine_cuts):
                # z >= val + slope (x - x_i)
                model.add_row({z: 1.0, col: -slope}, GREATER, val - slope * x_i)


def build_admm_subproblem(instance: Instance, gamma: int, k: int, mu: dict,
                          anchor: dict, rho: float,
                          pwl_segments: int = DEFAULT_PWL_SEGMENTS,
                          price_cap: float | None = None,
                          refine_cuts: bool = True) -> MpccModel:
    """Scenario MPCC with the consensus dual term and proximal penalty."""
    model = build_scenario_mpcc(instance, gamma, k, price_cap)
    attach_admm_terms(model, instance, mu, anchor, rho, pwl_segments,
                      refine_cuts)
    return model


def build_fixed_investment_problem(instance: Instance, gamma: int, k: int,
                                   x_fixed: dict,
                                   price_cap: float | None = None) -> MpccModel:
    """Scenario MPCC with investments pinned to ``x_fixed`` (t, c id) -> MW."""
    lt = instance.lt_by_index(gamma)
    for t in instance.stage_indices():
        spend = 0.0
        for c in instance.candidate_units:
            v = float(x_fixed.get((t, c.id), 0.0))
            if v < -1e-9 or v > c.max_capacity + 1e-9:
                raise ValueError(
                    f"fixed investment X[{t},{c.id}] = {v} outside "
                    f"[0, {c.max_capacity}]")
            spend += lt.investment_cost[(t, c.id)] * v
        budget = next(s.budget for s in instance.stages if s.index == t)
        if spend > budget * (1 + 1e-9) + 1e-9:
            raise ValueError(f"fixed investments exceed stage-{t} budget")
    model = build_scenario_mpcc(instance, gamma, k, price_cap)
    for t in instance.stage_indices():
        for c in instance.candidate_units:
            col = model.investment_cols[(t, gamma, c.id)]
            v = min(max(float(x_fixed.get((t, c.id), 0.0)), 0.0), c.max_capacity)
            model.lower[col] = v
            model.upper[col] = v
    return model


def model_statistics(model: MpccModel) -> dict:
    """Size report: the complementarity-pair count is the branching load."""
    return {
        "num_vars": model.num_vars,
        "num_continuous": model.num_vars,
        "num_comp_pairs": len(model.comp_pairs),
        "num_rows": len(model.rows),
        "num_clearings": len(model.clearings),
    }


def strategic_revenue(model: MpccModel, x: np.ndarray, ref: ClearingRef) -> float:
    """lambda * (strategic dispatch) computed directly from solution values."""
    lam = x[ref.lam]
    disp = sum(x[cols[0]] for cols in ref.existing_cols.values())
    disp += sum(x[cols[0]] for cols in ref.candidate_cols.values())
    return float(lam * disp)


def revenue_identity_max_error(model: MpccModel, x: np.ndarray) -> float:
    """Largest relative mismatch of lambda * strategic dispatch vs its
    linear substitute over all clearings; cheap enough to run at every solve."""
    worst = 0.0
    for ref in model.clearings:
        direct = strategic_revenue(model, x, ref)
        expr = revenue_linearization_terms(model, ref)
        linear = sum(coef * x[col] for col, coef in expr.items())
        scale = 1 + abs(direct) + abs(linear)
        worst = max(worst, abs(direct - linear) / scale)
    return worst


def verify_solution(model: MpccModel, x: np.ndarray,
                    rev_tol: float = 1e-6, kkt_tol: float = 1e-7) -> list:
    """Revenue-identity and KKT-soundness checks; returns violation strings.

    For every clearing: the direct product lambda * strategic dispatch must
    match the linear substitute expression, and re-clearing the market at
    the embedded offers must reproduce the embedded welfare with a clearing
    price inside the merit-order interval.
    """
    from .market import (Block, ClearingInput, clear_market_lp,
                         lambda_interval)

    problems = []
    for ref in model.clearings:
        direct = strategic_revenue(model, x, ref)
        expr = revenue_linearization_terms(model, ref)
        linear = sum(coef * x[col] for col, coef in expr.items())
        scale = 1 + abs(direct) + abs(linear)
        if abs(direct - linear) > rev_tol * scale:
            problems.append(
                f"revenue identity off at (t{ref.t},h{ref.h}): "
                f"direct {direct:.6g} vs linear {linear:.6g}")

        inp = ClearingInput(
            demands=[Block(d, ref.demand_caps[d], ref.demand_utils[d])
                     for d in ref.demand_cols],
            rivals=[Block(r, ref.rival_caps[r], ref.rival_prices[r])
                    for r in ref.rival_cols],
            existing=[Block(e, float(x[cols[4]]), float(x[cols[5]]))
                      for e, cols in ref.existing_cols.items()],
            candidates=[Block(c, float(x[cols[4]]), float(x[cols[5]]))
                        for c, cols in ref.candidate_cols.items()],
        )
        out = clear_market_lp(inp)
        embedded = sum(ref.demand_utils[d] * x[cols[0]]
                       for d, cols in ref.demand_cols.items())
        embedded -= sum(ref.rival_prices[r] * x[cols[0]]
                        for r, cols in ref.rival_cols.items())
        embedded -= sum(x[cols[5]] * x[cols[0]]
                        for cols in ref.existing_cols.values())
        embedded -= sum(x[cols[5]] * x[cols[0]]
                        for cols in ref.candidate_cols.values())
        wscale = 1 + abs(out.objective)
        if abs(out.objective - embedded) > kkt_tol * wscale:
            problems.append(
                f"re-cleared welfare off at (t{ref.t},h{ref.h}): "
                f"{out.objective:.8g} vs embedded {embedded:.8g}")
        lo, hi = lambda_interval(inp, out)
        volume = sum(out.dispatch[b.id] for b in inp.supply_blocks)
        lam = float(x[ref.lam])
        if volume > kkt_tol * (1 + sum(b.quantity for b in inp.supply_blocks)):
            if not (lo - 1e-6 <= lam <= hi + 1e-6):
                problems.append(
                    f"lambda {lam:.6g} outside merit interval "
                    f"[{lo:.6g}, {hi:.6g}] at (t{ref.t},h{ref.h})")
    return problems


def investment_values(model: MpccModel, x: np.ndarray) -> dict:
    """(t, gamma, candidate id) -> MW at a solution vector."""
    return {key: float(x[col]) for key, col in model.investment_cols.items()}
