"""Single market clearing: welfare-maximizing LP and a merit-order oracle.

One clearing dispatches demand blocks against rival and strategic supply
blocks subject to a single power balance.  The LP route goes through the
simplex kernel; the merit-order route stacks blocks by price and is used as
an independent cross-check of welfare, clearing price and duals.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .constants import WELFARE_TOL
from .simplex import EQUAL, LinearProgram, LpSolution, solve_lp


@dataclass(frozen=True)
class Block:
    """One supply or demand block: a capacity at a single price/utility."""

    id: str
    quantity: float     # MWh (upper bound of the dispatch box)
    price: float        # $/MWh: offer price for supply, utility for demand


@dataclass
class ClearingInput:
    """All blocks of one (t, gamma, h, k) clearing.

    Rival wind quantities must be pre-scaled by their capacity factor before
    construction; the clearing sees uniform boxes.
    """

    demands: list        # of Block (price = utility)
    rivals: list         # of Block
    existing: list       # of Block
    candidates: list     # of Block

    def __post_init__(self):
        self.demands = sorted(self.demands, key=lambda b: b.id)
        self.rivals = sorted(self.rivals, key=lambda b: b.id)
        self.existing = sorted(self.existing, key=lambda b: b.id)
        self.candidates = sorted(self.candidates, key=lambda b: b.id)
        for b in self.demands + self.rivals + self.existing + self.candidates:
            if b.quantity < 0 or b.price < 0:
                raise ValueError(f"negative quantity/price on block {b.id}")

    @property
    def supply_blocks(self):
        return self.rivals + self.existing + self.candidates

    def variable_ids(self):
        """Deterministic column order: demands, rivals, existing, candidates."""
        return [b.id for b in self.demands + self.supply_blocks]


@dataclass
class MarketOutcome:
    dispatch: dict                   # block id -> MWh
    lam: float                       # clearing price ($/MWh)
    upper_duals: dict                # block id -> dual of dispatch <= quantity
    lower_duals: dict                # block id -> dual of dispatch >= 0
    objective: float                 # social welfare ($)
    lp_solution: LpSolution | None = field(default=None, repr=False)


def build_clearing_lp(inp: ClearingInput) -> LinearProgram:
    """Welfare-max LP: utilities minus offer prices, one balance equality."""
    nd = len(inp.demands)
    supply = inp.supply_blocks
    c = np.array([b.price for b in inp.demands] + [-b.price for b in supply])
    upper = np.array([b.quantity for b in inp.demands + supply])
    n = nd + len(supply)
    # balance: sum(supply) - sum(demand) = 0
    row = np.concatenate([-np.ones(nd), np.ones(len(supply))])
    return LinearProgram(
        c=c,
        lower=np.zeros(n),
        upper=upper,
        a=sp.csr_matrix(row.reshape(1, -1)),
        senses=[EQUAL],
        rhs=np.zeros(1),
    )


def clear_market_lp(inp: ClearingInput, lp_solver=solve_lp) -> MarketOutcome:
    lp = build_clearing_lp(inp)
    sol = lp_solver(lp)
    if not sol.optimal:
        # zero lower bounds make the origin feasible; anything else is a bug
        raise RuntimeError(f"clearing LP ended with status {sol.status}")
    ids = inp.variable_ids()
    dispatch = {i: float(x) for i, x in zip(ids, sol.x)}
    # Balance row is supply - demand = 0; the marginal supply unit g has
    # reduced cost -beta_g - y = 0, so lambda = -y.
    lam = -float(sol.duals[0])
    volume = sum(dispatch[b.id] for b in inp.supply_blocks)
    if volume <= WELFARE_TOL * (1 + sum(b.quantity for b in inp.supply_blocks)):
        lam = 0.0
    upper_duals, lower_duals = {}, {}
    for i, z in zip(ids, sol.reduced_costs):
        upper_duals[i] = float(max(z, 0.0))
        lower_duals[i] = float(max(-z, 0.0))
    return MarketOutcome(
        dispatch=dispatch,
        lam=lam,
        upper_duals=upper_duals,
        lower_duals=lower_duals,
        objective=float(sol.objective),
        lp_solution=sol,
    )


def clear_market_merit_order(inp: ClearingInput) -> MarketOutcome:
    """Stack supply ascending / demand descending and intersect the curves.

    Ties at the marginal price (either side) are split proportionally to
    block capacity; lambda is the price of the last dispatched supply block,
    and 0 when nothing trades.
    """
    supply = sorted(inp.supply_blocks, key=lambda b: (b.price, b.id))
    demand = sorted(inp.demands, key=lambda b: (-b.price, b.id))

    # traded volume by greedy pairing of cheapest supply vs highest utility
    volume = 0.0
    si = di = 0
    s_rem = supply[0].quantity if supply else 0.0
    d_rem = demand[0].quantity if demand else 0.0
    marginal_price = 0.0
    while si < len(supply) and di < len(demand):
        if supply[si].price > demand[di].price:
            break
        q = min(s_rem, d_rem)
        if q > 0:
            volume += q
            marginal_price = supply[si].price
        s_rem -= q
        d_rem -= q
        if s_rem <= 0:
            si += 1
            s_rem = supply[si].quantity if si < len(supply) else 0.0
        if d_rem <= 0:
            di += 1
            d_rem = demand[di].quantity if di < len(demand) else 0.0

    dispatch = {}
    _allocate(supply, volume, dispatch, marginal=lambda b: b.price == marginal_price,
              strictly_in=lambda b: b.price < marginal_price)
    # marginal utility = utility of the last dispatched demand block
    d_volume = 0.0
    marginal_utility = 0.0
    for b in demand:
        if d_volume >= volume:
            break
        marginal_utility = b.price
        d_volume += b.quantity
    _allocate(demand, volume, dispatch, marginal=lambda b: b.price == marginal_utility,
              strictly_in=lambda b: b.price > marginal_utility)

    welfare = sum(b.price * dispatch[b.id] for b in demand)
    welfare -= sum(b.price * dispatch[b.id] for b in supply)

    # Clearing price: the marginal supply price when a supply block is on the
    # margin; when the intersection falls on the demand side that price is not
    # an equilibrium price (rejected demand may still be in the money at it),
    # so take the lowest valid equilibrium price instead.  The two coincide
    # whenever a supply block is partially dispatched.
    if volume > 0:
        partial = MarketOutcome(dispatch=dispatch, lam=0.0, upper_duals={},
                                lower_duals={}, objective=welfare)
        lo, hi = lambda_interval(inp, partial)
        lam = min(max(marginal_price, lo), hi)
    else:
        lam = 0.0

    upper_duals = {b.id: 0.0 for b in supply + demand}
    lower_duals = {b.id: 0.0 for b in supply + demand}
    if volume > 0:
        for b in supply:
            upper_duals[b.id] = max(0.0, lam - b.price)
            lower_duals[b.id] = max(0.0, b.price - lam)
        for b in demand:
            upper_duals[b.id] = max(0.0, b.price - lam)
            lower_duals[b.id] = max(0.0, lam - b.price)
    return MarketOutcome(
        dispatch=dispatch,
        lam=lam,
        upper_duals=upper_duals,
        lower_duals=lower_duals,
        objective=welfare,
    )


def _allocate(blocks, volume, dispatch, marginal, strictly_in):
    """Fill blocks inside the money fully; split the rest over marginal ties."""
    if volume <= 0:
        for b in blocks:
            dispatch[b.id] = 0.0
        return
    used = 0.0
    for b in blocks:
        if strictly_in(b):
            dispatch[b.id] = b.quantity
            used += b.quantity
        else:
            dispatch[b.id] = 0.0
    residual = max(volume - used, 0.0)
    tied = [b for b in blocks if marginal(b) and not strictly_in(b)]
    tied_cap = sum(b.quantity for b in tied)
    if tied_cap > 0 and residual > 0:
        share = min(residual / tied_cap, 1.0)
        for b in tied:
            dispatch[b.id] = b.quantity * share


def lambda_interval(inp: ClearingInput, outcome: MarketOutcome,
                    tol: float = 1e-9):
    """Valid clearing-price interval implied by a dispatch.

    Any equilibrium price must price fully-dispatched supply in the money,
    rejected supply out of the money, and symmetrically for demand.
    """
    scale = 1 + sum(b.quantity for b in inp.demands + inp.supply_blocks)
    lo, hi = 0.0, np.inf
    for b in inp.supply_blocks:
        p = outcome.dispatch[b.id]
        if p > tol * scale:
            lo = max(lo, b.price)
        if p < b.quantity - tol * scale:
            hi = min(hi, b.price)
    for b in inp.demands:
        p = outcome.dispatch[b.id]
        if p > tol * scale:
            hi = min(hi, b.price)
        if p < b.quantity - tol * scale:
            lo = max(lo, b.price)
    return lo, hi


def check_outcome(inp: ClearingInput, outcome: MarketOutcome,
                  tol: float = 1e-9) -> list:
    """Balance, box and complementary-slackness checks; returns violations."""
    problems = []
    total = sum(b.quantity for b in inp.demands + inp.supply_blocks)
    scale = 1 + total
    supply = sum(outcome.dispatch[b.id] for b in inp.supply_blocks)
    load = sum(outcome.dispatch[b.id] for b in inp.demands)
    if abs(supply - load) > tol * scale:
        problems.append(f"balance violated: supply {supply} vs load {load}")
    for b in inp.demands + inp.supply_blocks:
        p = outcome.dispatch[b.id]
        if p < -tol * scale or p > b.quantity + tol * scale:
            problems.append(f"dispatch of {b.id} outside [0, {b.quantity}]: {p}")
        mu_up = outcome.upper_duals[b.id]
        mu_lo = outcome.lower_duals[b.id]
        if mu_up * (b.quantity - p) > tol * scale * (1 + mu_up):
            problems.append(f"upper-bound slackness violated on {b.id}")
        if mu_lo * p > tol * scale * (1 + mu_lo):
            problems.append(f"lower-bound slackness violated on {b.id}")
    return problems
