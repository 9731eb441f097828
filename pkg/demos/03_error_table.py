"""
Error table across load levels
==============================

Train LS, M1 and M2 on one seeded history and tabulate average and
worst-case branch-flow errors at 60/80/120/140% net load, in 1e-3 p.u.
The same table comes out of the command line with

    rdlpf experiment run config.json

Pass a seed as the first argument (default 0).
"""

# %%
import sys
import time

from rdlpf import TrainingConfig, evaluate, gen_eval_set, gen_history, load_case, render_table, train_ls, train_rdlpf

seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
net = load_case("case14")
hist = gen_history(net, 300, 0.2, seed)

# %%
t0 = time.perf_counter()
models = {"LS": train_ls(hist)}
for method in ("M1", "M2"):
    models[method] = train_rdlpf(hist, config=TrainingConfig(method))
print("trained in %.1fs" % (time.perf_counter() - t0))

# %%
levels = (0.6, 0.8, 1.2, 1.4)
evals = {lv: gen_eval_set(net, lv, 200, seed=seed) for lv in levels}
reports = [evaluate(model, ev, method=name, level=lv) for name, model in models.items() for lv, ev in evals.items()]
print(render_table(reports))

# %%
# Ratio of LS to robust worst case: above 1 means the robust model did better
for lv in levels:
    wc = {r.method: r.wc for r in reports if r.level == lv}
    print("%3.0f%%  LS/M1 %.3f  LS/M2 %.3f" % (100 * lv, wc["LS"] / wc["M1"], wc["LS"] / wc["M2"]))
