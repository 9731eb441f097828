"""
Power flow, training data and a least-squares baseline
======================================================

Walk through the IEEE 14-bus case: solve the AC power flow, draw a
history of operating points, and fit the plain least-squares linear model
that the robust variants start from.

Run with ``python3 demos/01_power_flow_and_data.py``.
"""

# %%
import numpy as np

from rdlpf import evaluate, gen_eval_set, gen_history, injections, load_case, solve_newton, train_ls

net = load_case("case14")
print(net.name, net.n_bus, "buses,", len(net.branches), "branches")

# %%
# Newton-Raphson at the base point, then at 140% load
sol = solve_newton(net)
print("base:", sol.iterations, "iterations, max mismatch %.1e" % sol.max_mismatch)
print("  |V| range %.4f .. %.4f" % (sol.Vm.min(), sol.Vm.max()))

Pd = np.array([b.Pd for b in net.buses])
Qd = np.array([b.Qd for b in net.buses])
inj = injections(net, 1.4 * Pd, 1.4 * Qd)
heavy = solve_newton(net, inj)
print("140%:", heavy.iterations, "iterations, lowest |V| %.4f" % heavy.Vm.min())

# %%
# A history of 300 operating points, loads jittered by +-20% per bus.
# x stacks P and Q injections at non-slack buses, y the branch flows.
hist = gen_history(net, 300, 0.2, seed=0)
print(hist.X.shape, hist.Y.shape)
print("inputs :", hist.map.x_layout[:3], "...")
print("outputs:", hist.map.y_layout[:3], "...")

# %%
# Generator-bus Q injections follow from P, so some columns are dependent;
# the LS fit takes a minimum-norm solution there.
ls = train_ls(hist)
print("ridge floor:", ls.provenance["ridge"])

# %%
# In-sample and out-of-sample error, in 1e-3 p.u.
for level in (1.0, 0.6, 1.4):
    ev = gen_eval_set(net, level, 200, seed=0)
    rep = evaluate(ls, ev)
    print("level %3.0f%%  avg %.3f  worst %.3f" % (100 * level, rep.avg * 1e3, rep.wc * 1e3))

# %%
# The worst rows are the heavily loaded ones
rep = evaluate(ls, gen_eval_set(net, 1.4, 200, seed=0))
worst = np.argsort(rep.row_wc)[::-1][:5]
for i in worst:
    print(hist.map.y_layout[i], "%.3f" % (rep.row_wc[i] * 1e3))
