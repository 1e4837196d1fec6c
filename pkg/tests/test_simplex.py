"""Tests for the bounded-variable primal simplex kernel."""

import itertools
from fractions import Fraction

import numpy as np
import pytest
import scipy.sparse as sp

from stratgen.simplex import LinearProgram, LpSolution, farkas_gap, solve_lp


def make_lp(c, lower, upper, a, senses, rhs):
    return LinearProgram(
        c=np.array(c, dtype=float),
        lower=np.array(lower, dtype=float),
        upper=np.array(upper, dtype=float),
        a=sp.csr_matrix(np.atleast_2d(np.array(a, dtype=float))),
        senses=list(senses),
        rhs=np.array(rhs, dtype=float),
    )


# -- exact-arithmetic vertex enumeration oracle ------------------------------


def _solve_square_exact(rows, rhs):
    """Gaussian elimination over Fractions; returns None if singular."""
    n = len(rhs)
    m = [list(rows[i]) + [rhs[i]] for i in range(n)]
    for col in range(n):
        piv = next((r for r in range(col, n) if m[r][col] != 0), None)
        if piv is None:
            return None
        m[col], m[piv] = m[piv], m[col]
        inv = Fraction(1, 1) / m[col][col]
        m[col] = [v * inv for v in m[col]]
        for r in range(n):
            if r != col and m[r][col] != 0:
                f = m[r][col]
                m[r] = [a - f * b for a, b in zip(m[r], m[col])]
    return [m[r][n] for r in range(n)]


def vertex_enumeration_optimum(c, lower, upper, a, senses, rhs):
    """Brute-force exact LP optimum for a bounded polytope.

    Enumerates every choice of n tight constraints among {rows, bounds},
    solves the square system in rational arithmetic, keeps feasible points.
    Requires finite bounds on every variable so the feasible set is a polytope
    (vertex enumeration is then exhaustive).
    """
    n = len(c)
    cf = [Fraction(x).limit_denominator(10**9) for x in c]
    constraints = []  # (coeffs, rhs, sense) with sense '<' meaning a.x <= b
    for i, row in enumerate(a):
        rf = [Fraction(v).limit_denominator(10**9) for v in row]
        bf = Fraction(rhs[i]).limit_denominator(10**9)
        constraints.append((rf, bf, senses[i]))
    for j in range(n):
        e = [Fraction(0)] * n
        e[j] = Fraction(1)
        constraints.append((list(e), Fraction(upper[j]).limit_denominator(10**9), "<"))
        constraints.append((list(e), Fraction(lower[j]).limit_denominator(10**9), ">"))

    best = None
    for combo in itertools.combinations(range(len(constraints)), n):
        if any(constraints[i][2] == "=" for i in range(len(constraints))
               if constraints[i][2] == "=" and i not in combo):
            continue  # equality rows must always be tight
        rows_ = [constraints[i][0] for i in combo]
        rhs_ = [constraints[i][1] for i in combo]
        x = _solve_square_exact(rows_, rhs_)
        if x is None:
            continue
        feasible = True
        for coeffs, b, s in constraints:
            v = sum(cc * xx for cc, xx in zip(coeffs, x))
            if s == "<" and v > b:
                feasible = False
            elif s == ">" and v < b:
                feasible = False
            elif s == "=" and v != b:
                feasible = False
            if not feasible:
                break
        if not feasible:
            continue
        obj = sum(cc * xx for cc, xx in zip(cf, x))
        if best is None or obj > best:
            best = obj
    return best


# -- worked examples -------------------------------------------------------------


def test_single_variable_upper_bound():
    lp = make_lp([1.0], [0.0], [np.inf], [[1.0]], "<", [3.0])
    sol = solve_lp(lp)
    assert sol.optimal
    assert sol.x[0] == pytest.approx(3.0, abs=1e-10)
    assert sol.duals[0] == pytest.approx(1.0, abs=1e-10)


def test_two_generator_market_lp():
    # demand 120 @ utility 30; generators 50 MW @ $10 and 100 MW @ $20.
    # Variables: d, g1, g2; balance g1 + g2 - d = 0.
    lp = make_lp(
        c=[30.0, -10.0, -20.0],
        lower=[0.0, 0.0, 0.0],
        upper=[120.0, 50.0, 100.0],
        a=[[-1.0, 1.0, 1.0]],
        senses="=",
        rhs=[0.0],
    )
    sol = solve_lp(lp)
    assert sol.optimal
    assert sol.objective == pytest.approx(1700.0, abs=1e-8)
    assert sol.x[1] == pytest.approx(50.0, abs=1e-8)
    assert sol.x[2] == pytest.approx(70.0, abs=1e-8)
    # clearing price = dual of the balance row (sign such that demand pays it)
    assert abs(sol.duals[0]) == pytest.approx(20.0, abs=1e-8)


def test_infeasible_with_certificate():
    lp = make_lp([0.0], [-np.inf], [np.inf],
                 [[1.0], [1.0]], "><", [2.0, 1.0])
    sol = solve_lp(lp)
    assert sol.status == "Infeasible"
    assert sol.ray is not None
    assert farkas_gap(lp, sol.ray) > 1e-10


def test_unbounded():
    lp = make_lp([1.0], [0.0], [np.inf], [[0.0]], "<", [1.0])
    sol = solve_lp(lp)
    assert sol.status == "Unbounded"


def test_iteration_limit():
    rng = np.random.default_rng(7)
    n, m = 20, 10
    lp = make_lp(rng.normal(size=n), np.zeros(n), np.full(n, 10.0),
                 rng.normal(size=(m, n)), "<" * m, rng.uniform(1, 5, size=m))
    sol = solve_lp(lp, max_iters=1)
    assert sol.status == "IterLimit"


def test_fixed_variable_rows():
    # equality-constrained with a fixed variable
    lp = make_lp([1.0, 1.0], [2.0, 0.0], [2.0, 5.0],
                 [[1.0, 1.0]], "<", [4.0])
    sol = solve_lp(lp)
    assert sol.optimal
    assert sol.objective == pytest.approx(4.0, abs=1e-10)


# -- properties --------------------------------------------------------------


def _random_lp(rng, n_max=5, m_max=4):
    n = int(rng.integers(1, n_max + 1))
    m = int(rng.integers(1, m_max + 1))
    c = rng.normal(size=n)
    lower = rng.uniform(-5, 0, size=n)
    upper = lower + rng.uniform(0.5, 10, size=n)
    a = rng.normal(size=(m, n))
    senses = [rng.choice(["<", ">", "="]) for _ in range(m)]
    # anchor the rhs on an interior point so most instances are feasible
    x0 = lower + (upper - lower) * rng.uniform(0.2, 0.8, size=n)
    slack = rng.uniform(0, 2, size=m)
    rhs = a @ x0
    for i, s in enumerate(senses):
        if s == "<":
            rhs[i] += slack[i]
        elif s == ">":
            rhs[i] -= slack[i]
    return c, lower, upper, a, senses, rhs


def test_matches_exact_vertex_enumeration():
    rng = np.random.default_rng(1234)
    checked = 0
    while checked < 60:
        c, lower, upper, a, senses, rhs = _random_lp(rng)
        # snap data to short decimals so the Fraction conversion is exact
        c, lower, upper, a, rhs = (np.round(v, 3) for v in (c, lower, upper, a, rhs))
        if np.any(lower > upper):
            continue
        lp = make_lp(c, lower, upper, a, senses, rhs)
        sol = solve_lp(lp)
        exact = vertex_enumeration_optimum(c, lower, upper, a.tolist(), senses, rhs)
        if exact is None:
            assert sol.status == "Infeasible"
        else:
            assert sol.optimal, f"simplex said {sol.status}, oracle found {float(exact)}"
            assert sol.objective == pytest.approx(float(exact), abs=1e-7, rel=1e-7)
        checked += 1


def test_strong_duality_on_random_lps():
    rng = np.random.default_rng(987)
    checked = 0
    while checked < 100:
        c, lower, upper, a, senses, rhs = _random_lp(rng, n_max=8, m_max=6)
        lp = make_lp(c, lower, upper, a, senses, rhs)
        sol = solve_lp(lp)
        if not sol.optimal:
            continue
        gap = abs(sol.objective - sol.dual_objective(lp))
        assert gap <= 1e-8 * (1 + abs(sol.objective))
        # primal feasibility
        ax = lp.a @ sol.x
        for i, s in enumerate(senses):
            if s == "<":
                assert ax[i] <= rhs[i] + 1e-8 * (1 + abs(rhs[i]))
            elif s == ">":
                assert ax[i] >= rhs[i] - 1e-8 * (1 + abs(rhs[i]))
            else:
                assert ax[i] == pytest.approx(rhs[i], abs=1e-7)
        assert np.all(sol.x >= lower - 1e-8)
        assert np.all(sol.x <= upper + 1e-8)
        checked += 1


def test_infeasibility_certificates_are_valid():
    rng = np.random.default_rng(55)
    seen = 0
    for _ in range(400):
        c, lower, upper, a, senses, rhs = _random_lp(rng)
        # push rhs to often make the instance infeasible
        rhs = rhs + rng.choice([-30.0, 30.0], size=len(rhs))
        lp = make_lp(c, lower, upper, a, senses, rhs)
        sol = solve_lp(lp)
        if sol.status == "Infeasible":
            assert farkas_gap(lp, sol.ray) > 0
            seen += 1
    assert seen >= 20


def test_determinism_bit_identical():
    rng = np.random.default_rng(2024)
    c, lower, upper, a, senses, rhs = _random_lp(rng, n_max=10, m_max=8)
    lp1 = make_lp(c, lower, upper, a, senses, rhs)
    lp2 = make_lp(c, lower, upper, a, senses, rhs)
    s1, s2 = solve_lp(lp1), solve_lp(lp2)
    assert s1.status == s2.status
    assert s1.iterations == s2.iterations
    if s1.optimal:
        assert np.array_equal(s1.x, s2.x)
        assert np.array_equal(s1.duals, s2.duals)
        assert s1.objective == s2.objective


def test_degenerate_lp_terminates():
    # many redundant rows through one vertex — exercises the Bland fallback path
    n = 6
    a = np.vstack([np.eye(n), np.ones((4, n))])
    senses = "<" * (n + 4)
    rhs = np.concatenate([np.zeros(n), np.zeros(4)])
    lp = make_lp(np.ones(n), np.zeros(n), np.full(n, 1.0), a, senses, rhs)
    sol = solve_lp(lp)
    assert sol.optimal
    assert sol.objective == pytest.approx(0.0, abs=1e-10)
