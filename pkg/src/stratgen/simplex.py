"""Bounded-variable primal simplex.

The one numerical kernel the rest of the package certifies against.  The
implementation is a dense two-phase primal simplex that handles variable
bounds explicitly (no bound-splitting into slack rows): the market-clearing
LPs solved here are almost entirely box constraints, so bounds are treated
as first-class citizens of the ratio test.

Phase 1 minimises the total bound violation of the basic variables with a
+/-1 composite cost vector; phase 2 maximises the user objective.  Dantzig
pricing is used until the objective stalls for ``STALL_LIMIT`` pivots, after
which Bland's rule guarantees termination.  The basis inverse is kept
explicitly and refactorised every ``REFACTOR_EVERY`` pivots.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .constants import (
    DEFAULT_LP_MAX_ITERS,
    FEAS_TOL,
    OPT_TOL,
    PIVOT_TOL,
    REFACTOR_EVERY,
    STALL_LIMIT,
)

INF = np.inf

LESS = "<"
GREATER = ">"
EQUAL = "="

_AT_LB = 0
_AT_UB = 1
_BASIC = 2
_FREE = 3


@dataclass
class LinearProgram:
    """A maximisation LP:  max c'x  s.t. rows (=, <=, >=) and l <= x <= u."""

    c: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    a: sp.csr_matrix
    senses: list
    rhs: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float)
        self.lower = np.asarray(self.lower, dtype=float)
        self.upper = np.asarray(self.upper, dtype=float)
        self.rhs = np.asarray(self.rhs, dtype=float)
        if not sp.issparse(self.a):
            self.a = sp.csr_matrix(np.atleast_2d(np.asarray(self.a, dtype=float)))
        else:
            self.a = self.a.tocsr()
        m, n = self.a.shape
        if self.c.shape != (n,) or self.lower.shape != (n,) or self.upper.shape != (n,):
            raise ValueError("inconsistent column dimensions")
        if len(self.senses) != m or self.rhs.shape != (m,):
            raise ValueError("inconsistent row dimensions")
        if np.any(self.lower > self.upper):
            raise ValueError("lower bound exceeds upper bound")

    @property
    def num_rows(self) -> int:
        return self.a.shape[0]

    @property
    def num_cols(self) -> int:
        return self.a.shape[1]


@dataclass
class LpSolution:
    status: str                 # Optimal | Infeasible | Unbounded | IterLimit
    x: np.ndarray | None = None
    duals: np.ndarray | None = None
    reduced_costs: np.ndarray | None = None
    objective: float = np.nan
    iterations: int = 0
    ray: np.ndarray | None = None  # dual Farkas certificate when Infeasible

    @property
    def optimal(self) -> bool:
        return self.status == "Optimal"

    def dual_objective(self, lp: LinearProgram) -> float:
        """y'b plus the bound support terms; equals the primal value at an optimum."""
        z = self.reduced_costs
        val = float(self.duals @ lp.rhs)
        up = np.where(z > 0, z, 0.0)
        lo = np.where(z < 0, z, 0.0)
        # Finite-bound support; at an optimum nonzero reduced costs only occur
        # at finite bounds, so the masked terms are all well defined.
        val += float(np.sum(np.where(np.isfinite(lp.upper), lp.upper, 0.0) * up))
        val += float(np.sum(np.where(np.isfinite(lp.lower), lp.lower, 0.0) * lo))
        return val


def solve_lp(lp: LinearProgram, tol: float = FEAS_TOL,
             max_iters: int = DEFAULT_LP_MAX_ITERS) -> LpSolution:
    """Solve ``lp`` with the bounded-variable primal simplex."""
    return _Simplex(lp, tol, max_iters).solve()


class _Simplex:
    def __init__(self, lp: LinearProgram, tol: float, max_iters: int):
        self.lp = lp
        self.tol = tol
        self.max_iters = max_iters
        m, n = lp.a.shape
        self.m, self.n = m, n
        nt = n + m
        self.A = np.hstack([lp.a.toarray(), np.eye(m)])
        self.lb = np.concatenate([lp.lower, np.zeros(m)])
        self.ub = np.concatenate([lp.upper, np.zeros(m)])
        for i, s in enumerate(lp.senses):
            if s == LESS:
                self.ub[n + i] = INF
            elif s == GREATER:
                self.lb[n + i] = -INF
            elif s != EQUAL:
                raise ValueError(f"unknown row sense {s!r}")
        self.c = np.concatenate([lp.c, np.zeros(m)])
        self.b = lp.rhs.astype(float)

        # Slack basis; structurals start at their bound nearest zero.
        self.basis = np.arange(n, n + m)
        self.in_basis = np.zeros(nt, dtype=bool)
        self.in_basis[self.basis] = True
        self.status = np.empty(nt, dtype=np.int8)
        self.x = np.zeros(nt)
        for j in range(nt):
            lo, hi = self.lb[j], self.ub[j]
            if lo == -INF and hi == INF:
                self.status[j] = _FREE
                self.x[j] = 0.0
            elif lo == -INF:
                self.status[j] = _AT_UB
                self.x[j] = hi
            elif hi == INF:
                self.status[j] = _AT_LB
                self.x[j] = lo
            else:
                self.status[j] = _AT_LB if abs(lo) <= abs(hi) else _AT_UB
                self.x[j] = lo if self.status[j] == _AT_LB else hi
        self.status[self.basis] = _BASIC
        self.Binv = np.eye(m)
        self._set_basic_values()
        self.iters = 0
        self.pivots_since_refactor = 0

    # -- linear algebra helpers -------------------------------------------

    def _set_basic_values(self):
        rhs = self.b - self.A[:, ~self.in_basis] @ self.x[~self.in_basis]
        self.x[self.basis] = self.Binv @ rhs

    def _refactor(self):
        B = self.A[:, self.basis]
        self.Binv = np.linalg.inv(B)
        self._set_basic_values()
        self.pivots_since_refactor = 0

    # -- phases ------------------------------------------------------------

    def solve(self) -> LpSolution:
        status = self._phase(phase1=True)
        if status is not None:
            return status
        status = self._phase(phase1=False)
        if status is not None:
            return status
        return self._optimal_solution()

    def _infeasibility(self):
        xb = self.x[self.basis]
        lo = self.lb[self.basis]
        hi = self.ub[self.basis]
        below = np.maximum(lo - xb, 0.0)
        above = np.maximum(xb - hi, 0.0)
        below[~np.isfinite(below)] = 0.0
        above[~np.isfinite(above)] = 0.0
        return below, above

    def _phase(self, phase1: bool):
        tol = self.tol
        stall = 0
        last_merit = None
        while True:
            if self.iters >= self.max_iters:
                return LpSolution(status="IterLimit", iterations=self.iters)
            below, above = self._infeasibility()
            infeas = float(below.sum() + above.sum())
            if phase1:
                if infeas <= tol * (1.0 + float(np.abs(self.b).sum())):
                    return None  # feasible: hand over to phase 2
                cB = np.where(below > tol, -1.0, np.where(above > tol, 1.0, 0.0))
                # minimising infeasibility == maximising -f
                cB = -cB
            else:
                cB = self.c[self.basis]
            y = self.Binv.T @ cB
            z = self.c * 0.0
            nonbasic = np.where(~self.in_basis)[0]
            if not phase1:
                z[nonbasic] = self.c[nonbasic] - y @ self.A[:, nonbasic]
            else:
                z[nonbasic] = -(y @ self.A[:, nonbasic])

            st = self.status[nonbasic]
            improving_up = (st == _AT_LB) & (z[nonbasic] > tol)
            improving_dn = (st == _AT_UB) & (z[nonbasic] < -tol)
            improving_fr = (st == _FREE) & (np.abs(z[nonbasic]) > tol)
            eligible = nonbasic[improving_up | improving_dn | improving_fr]
            if eligible.size == 0:
                if phase1:
                    return self._infeasible_certificate(y)
                return None  # phase-2 optimal
            merit = infeas if phase1 else float(self.c @ self.x)
            if last_merit is not None:
                improved = (merit < last_merit - 1e-12 * (1 + abs(last_merit))) if phase1 \
                    else (merit > last_merit + 1e-12 * (1 + abs(last_merit)))
                stall = 0 if improved else stall + 1
            last_merit = merit
            bland = stall >= STALL_LIMIT

            if bland:
                entering = int(eligible.min())
            else:
                entering = int(eligible[np.argmax(np.abs(z[eligible]))])
            direction = 1.0 if (z[entering] > 0) else -1.0

            res = self._ratio_test(entering, direction, phase1, bland)
            if res == "unbounded":
                if phase1:
                    # cannot happen: bounded infeasibility decrease; treat as numeric trouble
                    self._refactor()
                    continue
                return LpSolution(status="Unbounded", iterations=self.iters)
            self.iters += 1

    def _ratio_test(self, entering: int, direction: float, phase1: bool, bland: bool):
        m = self.m
        w = self.Binv @ self.A[:, entering]
        delta = -w * direction  # movement of basics per unit step
        best_theta = INF
        best_row = -1
        best_bound = 0.0
        xB = self.x[self.basis]
        for i in range(m):
            d = delta[i]
            if abs(d) <= PIVOT_TOL:
                continue
            bi = self.basis[i]
            lo, hi = self.lb[bi], self.ub[bi]
            xi = xB[i]
            theta = INF
            bound = 0.0
            if phase1 and xi < lo - self.tol:
                if d > 0:
                    theta = (lo - xi) / d
                    bound = lo
            elif phase1 and xi > hi + self.tol:
                if d < 0:
                    theta = (hi - xi) / d
                    bound = hi
            else:
                if d > 0 and hi < INF:
                    theta = (hi - xi) / d
                    bound = hi
                elif d < 0 and lo > -INF:
                    theta = (lo - xi) / d
                    bound = lo
            theta = max(theta, 0.0)
            if theta < best_theta - 1e-12 or (
                theta < best_theta + 1e-12 and best_row >= 0 and bland
                and self.basis[i] < self.basis[best_row]
            ):
                best_theta, best_row, best_bound = theta, i, bound

        # Entering variable's own opposite bound (bound flip).
        span = self.ub[entering] - self.lb[entering]
        flip_theta = span if np.isfinite(span) else INF

        if best_theta == INF and flip_theta == INF:
            return "unbounded"

        if flip_theta <= best_theta:
            theta = flip_theta
            self.x[self.basis] += delta * theta
            self.x[entering] += direction * theta
            self.status[entering] = _AT_UB if self.status[entering] == _AT_LB else _AT_LB
            return None

        theta = best_theta
        self.x[self.basis] += delta * theta
        self.x[entering] += direction * theta
        leaving = self.basis[best_row]
        self.x[leaving] = best_bound
        if self.lb[leaving] == self.ub[leaving]:
            self.status[leaving] = _AT_LB
        else:
            self.status[leaving] = _AT_LB if best_bound == self.lb[leaving] else _AT_UB
        self.in_basis[leaving] = False
        self.in_basis[entering] = True
        self.status[entering] = _BASIC
        self.basis[best_row] = entering
        self._update_basis_inverse(best_row, w)
        return None

    def _update_basis_inverse(self, row: int, w: np.ndarray):
        piv = w[row]
        if abs(piv) < PIVOT_TOL:
            self._refactor()
            return
        Brow = self.Binv[row] / piv
        corr = np.outer(w, Brow)
        corr[row] = self.Binv[row] - Brow
        self.Binv -= corr
        self.pivots_since_refactor += 1
        if self.pivots_since_refactor >= REFACTOR_EVERY:
            self._refactor()

    def _infeasible_certificate(self, y: np.ndarray) -> LpSolution:
        ray = y.copy()
        if farkas_gap(self.lp, -ray) > farkas_gap(self.lp, ray):
            ray = -ray
        return LpSolution(status="Infeasible", iterations=self.iters, ray=ray)

    def _optimal_solution(self) -> LpSolution:
        self._refactor()  # crisp values for the certificate
        n = self.n
        cB = self.c[self.basis]
        y = self.Binv.T @ cB
        z = self.c - y @ self.A
        x = self.x[:n].copy()
        obj = float(self.lp.c @ x)
        return LpSolution(
            status="Optimal",
            x=x,
            duals=y.copy(),
            reduced_costs=z[:n].copy(),
            objective=obj,
            iterations=self.iters,
        )


def farkas_gap(lp: LinearProgram, ray: np.ndarray) -> float:
    """Positive value certifies infeasibility.

    Computes  y'b - sup { y'(Ax + s) : l <= x <= u, s in slack boxes };
    returns -inf when the support is unbounded (inconclusive ray).
    """
    yA = ray @ lp.a.toarray()
    support = 0.0
    for j in range(lp.num_cols):
        coef = yA[j]
        if coef > PIVOT_TOL:
            hi = lp.upper[j]
            if not np.isfinite(hi):
                return -INF
            support += coef * hi
        elif coef < -PIVOT_TOL:
            lo = lp.lower[j]
            if not np.isfinite(lo):
                return -INF
            support += coef * lo
    # Slack boxes: '<' rows have s in [0, inf), '>' rows s in (-inf, 0],
    # '=' rows s fixed at 0.  An unbounded side must carry the right ray sign.
    for i, s in enumerate(lp.senses):
        if s == LESS and ray[i] > PIVOT_TOL:
            return -INF
        if s == GREATER and ray[i] < -PIVOT_TOL:
            return -INF
    return float(ray @ lp.rhs) - support


def write_mps(lp: LinearProgram, path: str, name: str = "STRATGEN"):
    """Fixed-format MPS dump for cross-checking with external solvers."""
    lines = [f"NAME          {name}", "ROWS", " N  COST"]
    sense_code = {LESS: "L", GREATER: "G", EQUAL: "E"}
    for i, s in enumerate(lp.senses):
        lines.append(f" {sense_code[s]}  R{i}")
    lines.append("COLUMNS")
    acsc = lp.a.tocsc()
    for j in range(lp.num_cols):
        entries = []
        if lp.c[j] != 0.0:
            # MPS convention minimises; negate the maximisation objective
            entries.append(("COST", -lp.c[j]))
        col = acsc.getcol(j).tocoo()
        entries.extend((f"R{i}", v) for i, v in zip(col.row, col.data))
        for row, v in entries:
            lines.append(f"    X{j}  {row}  {v:.17g}")
    lines.append("RHS")
    for i, v in enumerate(lp.rhs):
        if v != 0.0:
            lines.append(f"    RHS  R{i}  {v:.17g}")
    lines.append("BOUNDS")
    for j in range(lp.num_cols):
        lo, hi = lp.lower[j], lp.upper[j]
        if lo == hi:
            lines.append(f" FX BND  X{j}  {lo:.17g}")
            continue
        if lo != 0.0:
            if np.isfinite(lo):
                lines.append(f" LO BND  X{j}  {lo:.17g}")
            else:
                lines.append(f" MI BND  X{j}")
        if np.isfinite(hi):
            lines.append(f" UP BND  X{j}  {hi:.17g}")
    lines.append("ENDATA")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
