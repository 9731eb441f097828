"""
Robust training: moment SDP (M1) and KL budget (M2)
===================================================

Both routes keep each branch-flow row within a per-row error bound delta
with probability 1 - eps under every distribution in an ambiguity set,
and among such rows pick the one that best fits a chosen sample.  M1 uses
a moment ambiguity set and solves one SDP per row; M2 uses a KL ball and
reduces to a regression that may ignore a fixed number of samples per side.

Takes about half a minute on one core.
"""

# %%
import numpy as np

from rdlpf import TrainingConfig, gen_history, kl_adjusted_eps, load_case, residuals, train_ls, train_rdlpf
from rdlpf.drcc import violation_budget

net = load_case("case14")
hist = gen_history(net, 300, 0.2, seed=0)
ls = train_ls(hist)

# %%
# M2 first: the KL radius shrinks the nominal risk level
eps, d = 0.05, 0.05
eps_p = kl_adjusted_eps(eps, d)
m = violation_budget(eps_p, hist.K)
print("eps' = %.5f -> at most %d of %d samples outside +-delta per side" % (eps_p, m, hist.K))

m2 = train_rdlpf(hist, config=TrainingConfig("M2"))

# %%
# The budget holds exactly on the training data
R = residuals(m2, hist)
deltas = np.array([r["delta"] for r in m2.provenance["rows"]])
over = (R > deltas[:, None]).sum(axis=1)
under = (R < -deltas[:, None]).sum(axis=1)
print("max violators per side:", over.max(), under.max())

# %%
# M1: one SDP per row (LMIs of order n_x + 2 after compression)
m1 = train_rdlpf(hist, config=TrainingConfig("M1"))
rows = m1.provenance["rows"]
print("min LMI eigenvalue over all rows: %.2e" % min(r["min_lmi_eig"] for r in rows))
print("delta set by:", sorted({r["delta_rule"] for r in rows}))

# %%
# Chosen-point squared error per row, both routes
c = m1.provenance["chosen_index"]
print("chosen sample:", c)
e1 = np.array([r["chosen_objective"] for r in rows])
e2 = np.array([r["chosen_objective"] for r in m2.provenance["rows"]])
print("rows with zero chosen error: M1 %d, M2 %d (of %d)" % ((e1 < 1e-20).sum(), (e2 < 1e-20).sum(), len(e1)))

# %%
# How far each robust model moved away from plain LS
for name, model in (("M1", m1), ("M2", m2)):
    shift = np.abs(model.A - ls.A).max(axis=1)
    print(name, "largest coefficient shift %.2e on row %d" % (shift.max(), shift.argmax()))

# %%
# Gaussian stress test of the M1 guarantee on one row
from rdlpf import empirical_moments

i = int(np.argmax([r["delta"] for r in rows]))
amb = empirical_moments(hist, 0.1, 1.1)
nx = hist.X.shape[1]
marg = amb.marginal(list(range(nx)) + [nx + i])
xi = np.random.default_rng(1).multivariate_normal(marg.mu0, marg.Sigma0, size=100_000, method="eigh")
r = xi[:, -1] - xi[:, :-1] @ m1.A[i]
print("row %d: delta %.4f, P(|r| > delta) = %.4f (bound 2 eps = %.2f)"
      % (i, rows[i]["delta"], np.mean(np.abs(r) > rows[i]["delta"]), 2 * eps))
