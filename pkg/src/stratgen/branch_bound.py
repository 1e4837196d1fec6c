"""Branch-and-bound over complementarity pairs.

Solves an MpccModel to global optimality by LP relaxations plus branching
on violated pairs: branching pair (u, v) spawns one child with u fixed to 0
and one with v fixed to 0, which covers the pair exhaustively.  Node
selection is best-bound; the branching pair is the one with the largest
product of its two sides, ties broken by lowest pair index.

Two LP backends are available: the certified in-house simplex and a
persistent HiGHS instance (scipy's vendored copy) whose column bounds are
flipped per node, which makes node re-solves effectively warm-started.
Both are deterministic; results agree to LP tolerance.
"""

from __future__ import annotations

import heapq
import time
from dataclasses import dataclass, field

import numpy as np

from .constants import DEFAULT_COMP_TOL, DEFAULT_REL_GAP
from .reformulate import MpccModel
from .simplex import EQUAL, GREATER, LESS, solve_lp

try:
    from scipy.optimize._highspy import _core as _hs
except ImportError:  # pragma: no cover - scipy always ships it here
    _hs = None


@dataclass(order=True)
class BnbNode:
    sort_key: tuple = field(compare=True)
    decisions: tuple = field(compare=False, default=())  # ((pair, side), ...)
    bound: float = field(compare=False, default=np.inf)
    depth: int = field(compare=False, default=0)


@dataclass
class BnbResult:
    status: str                    # Optimal | Infeasible | NodeLimit | TimeLimit
    x: np.ndarray | None = None
    objective: float = -np.inf
    best_bound: float = np.inf
    nodes: int = 0
    decisions: tuple = ()          # fixings active at the incumbent
    bound_history: list = field(default_factory=list)

    @property
    def gap(self) -> float:
        return self.best_bound - self.objective


class _SimplexBackend:
    def __init__(self, model: MpccModel):
        self.lp = model.to_lp()
        self.base_upper = self.lp.upper.copy()

    def solve(self, zero_cols):
        upper = self.base_upper.copy()
        for j in zero_cols:
            upper[j] = 0.0
        self.lp.upper = upper
        sol = solve_lp(self.lp)
        if sol.status == "Optimal":
            return "Optimal", sol.x, sol.objective
        if sol.status == "Infeasible":
            return "Infeasible", None, -np.inf
        raise RuntimeError(f"relaxation LP ended with status {sol.status}")


class _HighsBackend:
    """Persistent HiGHS model; per-node solves only flip column bounds."""

    def __init__(self, model: MpccModel):
        lp = model.to_lp()
        self.base_upper = lp.upper.copy()
        self.lower = lp.lower.copy()
        hlp = _hs.HighsLp()
        hlp.num_col_ = lp.num_cols
        hlp.num_row_ = lp.num_rows
        # HiGHS minimizes; negate the maximization objective
        hlp.col_cost_ = -lp.c
        hlp.col_lower_ = lp.lower
        hlp.col_upper_ = np.minimum(lp.upper, _hs.kHighsInf)
        row_lower = np.empty(lp.num_rows)
        row_upper = np.empty(lp.num_rows)
        for i, s in enumerate(lp.senses):
            if s == LESS:
                row_lower[i], row_upper[i] = -_hs.kHighsInf, lp.rhs[i]
            elif s == GREATER:
                row_lower[i], row_upper[i] = lp.rhs[i], _hs.kHighsInf
            else:
                row_lower[i] = row_upper[i] = lp.rhs[i]
        hlp.row_lower_ = row_lower
        hlp.row_upper_ = row_upper
        a = lp.a.tocsr()
        mat = _hs.HighsSparseMatrix()
        mat.format_ = _hs.MatrixFormat.kRowwise
        mat.num_col_ = lp.num_cols
        mat.num_row_ = lp.num_rows
        mat.start_ = a.indptr.astype(np.int32)
        mat.index_ = a.indices.astype(np.int32)
        mat.value_ = a.data.astype(float)
        hlp.a_matrix_ = mat
        self.h = _hs._Highs()
        self.h.setOptionValue("output_flag", False)
        self.h.setOptionValue("threads", 1)
        self.h.setOptionValue("presolve", "off")  # keeps basis warm starts
        status = self.h.passModel(hlp)
        if status not in (_hs.HighsStatus.kOk, _hs.HighsStatus.kWarning):
            raise RuntimeError("failed to load LP into backend")
        self.current_zero = set()

    def solve(self, zero_cols):
        zero_cols = set(zero_cols)
        for j in self.current_zero - zero_cols:
            self.h.changeColBounds(j, float(self.lower[j]),
                                   float(min(self.base_upper[j], _hs.kHighsInf)))
        for j in zero_cols - self.current_zero:
            self.h.changeColBounds(j, 0.0, 0.0)
        self.current_zero = zero_cols
        self.h.run()
        status = self.h.getModelStatus()
        if status == _hs.HighsModelStatus.kOptimal:
            x = np.array(self.h.getSolution().col_value)
            return "Optimal", x, -float(self.h.getInfo().objective_function_value)
        if status == _hs.HighsModelStatus.kInfeasible:
            return "Infeasible", None, -np.inf
        raise RuntimeError(f"relaxation backend status {status}")


def _make_backend(model: MpccModel, backend: str):
    if backend == "highs" and _hs is not None:
        return _HighsBackend(model)
    return _SimplexBackend(model)


def _zero_cols(model, decisions):
    return {model.comp_pairs[pair][side] for pair, side in decisions}


def _max_violation(model, x, scale):
    """(pair index, product) of the most violated pair; ties -> lowest index."""
    worst, worst_pair = 0.0, -1
    for idx, (i, j) in enumerate(model.comp_pairs):
        v = float(x[i]) * float(x[j])
        if v > worst + 1e-15 * scale:
            worst, worst_pair = v, idx
    return worst_pair, worst


def _dive(model, backend, decisions, x, comp_tol):
    """Greedy dive: zero the cheaper side of the worst pair until clean."""
    decisions = tuple(decisions)
    fixed_pairs = {p for p, _ in decisions}
    for _ in range(len(model.comp_pairs)):
        scale = 1 + float(np.abs(x).max(initial=0.0))
        pair, viol = _max_violation(model, x, scale)
        if pair < 0 or viol <= comp_tol:
            return decisions, x
        i, j = model.comp_pairs[pair]
        if pair in fixed_pairs:
            return None, None  # numeric trouble; give up the dive
        side = 0 if abs(x[i]) <= abs(x[j]) else 1
        decisions = decisions + ((pair, side),)
        fixed_pairs.add(pair)
        status, x, _ = backend.solve(_zero_cols(model, decisions))
        if status != "Optimal":
            return None, None
    return decisions, x


def solve_mpcc(model: MpccModel, rel_gap: float = DEFAULT_REL_GAP,
               node_limit: int | None = None, time_limit: float | None = None,
               comp_tol: float = DEFAULT_COMP_TOL, backend: str = "highs",
               hint_decisions: tuple = (), dive: bool = True,
               node_log: list | None = None) -> BnbResult:
    """Globally optimize an MpccModel by complementarity branching."""
    eng = _make_backend(model, backend)
    start = time.monotonic()

    incumbent = None
    incumbent_obj = -np.inf
    incumbent_dec = ()
    nodes = 0
    bound_history = []

    def comp_ok(x, obj):
        scale = 1 + abs(obj)
        pair, viol = _max_violation(model, x, scale)
        return pair < 0 or viol <= comp_tol * scale

    def try_incumbent(x, obj, decisions):
        nonlocal incumbent, incumbent_obj, incumbent_dec
        if obj <= incumbent_obj or not comp_ok(x, obj):
            return False
        # polish to an exactly complementary vertex: fix the smaller side of
        # every remaining pair and re-solve, so incumbents never carry
        # comp_tol-sized products (those break downstream dual identities)
        fixed = {p for p, _ in decisions}
        full = tuple(decisions) + tuple(
            (idx, 0 if abs(x[i]) <= abs(x[j]) else 1)
            for idx, (i, j) in enumerate(model.comp_pairs) if idx not in fixed)
        if len(full) > len(decisions):
            p_status, p_x, p_obj = eng.solve(_zero_cols(model, full))
            if p_status != "Optimal" or p_obj <= incumbent_obj:
                return False
            x, obj, decisions = p_x, p_obj, full
        incumbent, incumbent_obj, incumbent_dec = x.copy(), obj, decisions
        return True

    # warm start from caller-provided fixings (e.g. the previous iterate)
    if hint_decisions:
        status, x, obj = eng.solve(_zero_cols(model, hint_decisions))
        if status == "Optimal":
            try_incumbent(x, obj, tuple(hint_decisions))

    counter = 0
    heap = []
    root = BnbNode(sort_key=(-np.inf, 0), decisions=(), bound=np.inf)
    heap.append(root)

    best_bound = np.inf
    status_out = "Optimal"
    while heap:
        # valid global bound: best open node vs incumbent (non-increasing)
        current = max(max(n.bound for n in heap), incumbent_obj)
        best_bound = min(best_bound, current)
        bound_history.append(best_bound)
        if node_limit is not None and nodes >= node_limit:
            status_out = "NodeLimit"
            break
        if time_limit is not None and time.monotonic() - start > time_limit:
            status_out = "TimeLimit"
            break
        node = heapq.heappop(heap)
        gap_scale = 1 + abs(incumbent_obj)
        if incumbent is not None and node.bound <= incumbent_obj + rel_gap * gap_scale:
            break  # best-bound order: everything left is fathomed too
        lp_status, x, obj = eng.solve(_zero_cols(model, node.decisions))
        nodes += 1
        if node_log is not None:
            node_log.append((nodes, node.bound if np.isfinite(node.bound) else obj,
                             incumbent_obj, len(heap)))
        if lp_status != "Optimal":
            continue
        if obj <= incumbent_obj + rel_gap * gap_scale:
            continue
        scale = 1 + abs(obj)
        pair, viol = _max_violation(model, x, scale)
        if pair < 0 or viol <= comp_tol * scale:
            try_incumbent(x, obj, node.decisions)
            continue
        if dive and incumbent is None:
            d_dec, _ = _dive(model, eng, node.decisions, x, comp_tol)
            if d_dec is not None:
                d_status, d_x, d_obj = eng.solve(_zero_cols(model, d_dec))
                if d_status == "Optimal":
                    try_incumbent(d_x, d_obj, d_dec)
        for side in (0, 1):
            counter += 1
            child = BnbNode(sort_key=(-obj, counter),
                            decisions=node.decisions + ((pair, side),),
                            bound=obj, depth=node.depth + 1)
            heapq.heappush(heap, child)

    if not heap and status_out == "Optimal" and incumbent is not None:
        best_bound = min(best_bound, incumbent_obj)

    if incumbent is None:
        status = "Infeasible" if status_out == "Optimal" else status_out
        return BnbResult(status=status, nodes=nodes, best_bound=best_bound,
                         bound_history=bound_history)
    return BnbResult(
        status=status_out,
        x=incumbent,
        objective=incumbent_obj,
        best_bound=best_bound,
        nodes=nodes,
        decisions=incumbent_dec,
        bound_history=bound_history,
    )


def enumerate_mpcc(model: MpccModel, backend: str = "simplex") -> BnbResult:
    """Exhaustive side-fixing enumeration oracle (2^pairs LP solves)."""
    eng = _make_backend(model, backend)
    npairs = len(model.comp_pairs)
    best_obj, best_x, best_dec = -np.inf, None, ()
    for mask in range(1 << npairs):
        decisions = tuple((p, (mask >> p) & 1) for p in range(npairs))
        status, x, obj = eng.solve(_zero_cols(model, decisions))
        if status == "Optimal" and obj > best_obj:
            best_obj, best_x, best_dec = obj, x.copy(), decisions
    if best_x is None:
        return BnbResult(status="Infeasible", nodes=1 << npairs)
    return BnbResult(status="Optimal", x=best_x, objective=best_obj,
                     best_bound=best_obj, nodes=1 << npairs, decisions=best_dec)
