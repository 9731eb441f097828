"""
The conic toolkit on its own
============================

The SDP solver, the independent verifier, the budgeted-violation
regression and the file exports work without any power-system data.
"""

# %%
import numpy as np

from rdlpf.conic import (CardinalityProblem, ProblemBuilder, count_violations, export_lp, export_sdpa, parse_sdpa,
                         solve_cardinality, solve_sdp, verify)

# %%
# min t  s.t.  [[1, 0.5], [0.5, t]] is PSD  ->  t = 1/4
b = ProblemBuilder("schur")
t = b.add_vars("t", 1)
b.set_objective(t, [1.0])
b.add_lmi(2, [[1.0, 0.5], [0.5, 0.0]], t, [1], [1], [1.0])
p = b.build()
sol = solve_sdp(p)
print(sol.status, sol.objective, "gap %.1e" % (sol.objective - sol.dual_objective))
print("certificate:", {k: sol.certificates[k] for k in ("passed", "min_lmi_eig")})

# %%
# The verifier does not trust the solver: nudge t below 1/4 and it objects
print(verify(p, sol.x - 1e-3)["failures"])

# %%
# Sparse SDPA text, and back
text = export_sdpa(p, comment="schur toy")
print(text)
q = parse_sdpa(text)
print("re-export identical:", export_sdpa(q, comment="schur toy") == text)

# %%
# Regression through 12 points, two of which are outliers; allow one
# violator per side of a +-0.15 band and fit the first point exactly if possible
rng = np.random.default_rng(3)
X = np.c_[rng.uniform(0.5, 1.5, 12), np.ones(12)]
y = X @ [2.0, -0.5] + rng.normal(0, 0.05, 12)
y[4] += 0.8
y[9] -= 0.7
P = np.outer(X[0], X[0])
cp = CardinalityProblem(P, -2 * y[0] * X[0], y[0] ** 2, X, y, 0.15, 1, 50.0, [-10, -10], [10, 10])
for mode in ("heuristic", "exact"):
    s = solve_cardinality(cp, mode=mode)
    print(mode, s.status, np.round(s.x, 4), "violators (up, down):", count_violations(cp, s.x))

# %%
# The same problem as a mixed-integer LP file for an external solver
print("\n".join(export_lp(cp).splitlines()[:8]))
