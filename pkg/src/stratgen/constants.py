"""Numerical tolerances used across the solver stack.

All tolerances live here so that there is a single place to audit them.
"""

# LP kernel
FEAS_TOL = 1e-8          # primal feasibility of an LP solution
OPT_TOL = 1e-8           # dual feasibility / reduced-cost optimality
PIVOT_TOL = 1e-10        # smallest pivot element accepted
REFACTOR_EVERY = 100     # basis refactorisation cadence (pivots)
STALL_LIMIT = 60         # degenerate pivots before Bland's rule engages
DEFAULT_LP_MAX_ITERS = 50_000

# Branch and bound over complementarity pairs
DEFAULT_REL_GAP = 1e-6
DEFAULT_COMP_TOL = 1e-7  # relative: product <= COMP_TOL * objective scale

# Probability / partition validation
PROB_TOL = 1e-12

# Market clearing cross-checks
WELFARE_TOL = 1e-9
