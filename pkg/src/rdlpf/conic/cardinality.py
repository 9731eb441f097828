"""Regression under a per-side outlier budget.

Two modes solve :class:`CardinalityProblem`:

``heuristic``
    least-squares warm start, the ``budget`` worst violators on each side
    marked as outliers, a convex re-fit, then pairwise exchanges between
    outliers and binding inliers while the objective improves.  The result
    is feasible but carries no optimality proof, so its status is
    ``feasible``.

``exact``
    best-first branch and bound over the big-M formulation; every node is a
    convex relaxation solved by the interior-point method.  Reports
    ``optimal`` when the tree closes within the node budget.

The convex sub-problems put the quadratic objective in norm-epigraph form
``min ||L a - v||`` with ``P = L'L``, which keeps the minimizer accurate to
the solver tolerance rather than its square root.
"""
from __future__ import annotations

import heapq
import itertools
import logging
import math
import time

import numpy as np

from .ipm import interior_point
from .problem import CardinalityProblem, ProblemBuilder, Solution
from .verify import verify

log = logging.getLogger(__name__)

MARGINS = (1e-7, 1e-5, 1e-3)


def _factor_objective(p: CardinalityProblem):
    w, U = np.linalg.eigh(0.5 * (p.P + p.P.T))
    keep = w > 1e-13 * max(float(w.max()), 1e-300)
    if not np.any(keep):
        raise ValueError("objective matrix P is zero")
    w, U = w[keep], U[:, keep]
    L = np.sqrt(w)[:, None] * U.T
    v = -0.5 * (U.T @ p.q) / np.sqrt(w)
    resid = p.q - U @ (U.T @ p.q)
    if np.linalg.norm(resid) > 1e-9 * (1 + np.linalg.norm(p.q)):
        raise ValueError("linear objective term outside the range of P; objective unbounded")
    const = p.r0 - float(v @ v)
    return L, v, const


class _Sub:
    """Builder for the convex sub-problems of one cardinality problem."""

    def __init__(self, p: CardinalityProblem):
        self.p = p
        self.L, self.v, self.const = _factor_objective(p)

    def _base(self, name):
        p = self.p
        n = p.n_params
        b = ProblemBuilder(name=name)
        a = b.add_vars("a", n, shared=True)
        q = b.add_vars("q", 1, shared=True)[0]
        r = self.L.shape[0]
        rr, cc = np.nonzero(self.L)
        const = np.zeros((r + 1, r + 1))
        const[:r, r] = const[r, :r] = -self.v
        b.add_lmi(r + 1, const,
                  np.concatenate([np.full(r + 1, q), a[cc]]),
                  np.concatenate([np.arange(r + 1), rr]),
                  np.concatenate([np.arange(r + 1), np.full(len(rr), r)]),
                  np.concatenate([np.ones(r + 1), self.L[rr, cc]]), name="objective")
        b.set_objective([q], [1.0])
        for j in range(n):
            b.add_linear(-p.lb[j], [a[j]], [1.0])
            b.add_linear(p.ub[j], [a[j]], [-1.0])
        if p.side_coef is not None:
            nz = np.flatnonzero(p.side_coef)
            if p.side_tol <= 0:
                b.add_equality(p.side_rhs, a[nz], p.side_coef[nz])
            else:
                b.add_linear(p.side_tol + p.side_rhs, a[nz], -p.side_coef[nz])
                b.add_linear(p.side_tol - p.side_rhs, a[nz], p.side_coef[nz])
        return b, a

    def value(self, qval: float) -> float:
        return qval * qval + self.const

    def fit(self, up_rows, lo_rows, margin=MARGINS[0]):
        """Convex re-fit with hard bounds on the given rows; returns (status, a, obj, mult_up, mult_lo)."""
        p = self.p
        b, a = self._base("card-fit")
        first = len(b._lin_rows)
        d = p.delta * (1.0 - margin)
        for k in up_rows:
            b.add_linear(d - p.y[k], a, p.X[k])
        for k in lo_rows:
            b.add_linear(d + p.y[k], a, -p.X[k])
        prob = b.build()
        sol = interior_point(prob, tol=1e-10, feas_tol=1e-10, max_iter=150)
        if sol.status != "optimal":
            return sol.status, None, math.inf, None, None, sol.iterations
        av = sol.x[prob.groups["a"]]
        mult = sol.dual_lin[first:first + len(up_rows) + len(lo_rows)]
        return ("optimal", av, self.p.objective(av), mult[:len(up_rows)], mult[len(up_rows):], sol.iterations)

    def l1_split(self):
        """Minimize total bound excess; used to seed outlier sets when the first re-fit fails."""
        p = self.p
        K, n = p.X.shape
        b = ProblemBuilder(name="card-l1")
        a = b.add_vars("a", n, shared=True)
        su = b.add_vars("su", K)
        sl = b.add_vars("sl", K)
        b.set_objective(np.concatenate([su, sl]), np.ones(2 * K))
        for j in range(n):
            b.add_linear(-p.lb[j], [a[j]], [1.0])
            b.add_linear(p.ub[j], [a[j]], [-1.0])
        if p.side_coef is not None:
            nz = np.flatnonzero(p.side_coef)
            if p.side_tol <= 0:
                b.add_equality(p.side_rhs, a[nz], p.side_coef[nz])
            else:
                b.add_linear(p.side_tol + p.side_rhs, a[nz], -p.side_coef[nz])
                b.add_linear(p.side_tol - p.side_rhs, a[nz], p.side_coef[nz])
        for k in range(K):
            b.add_linear(p.delta - p.y[k], np.r_[a, su[k]], np.r_[p.X[k], 1.0])
            b.add_linear(p.delta + p.y[k], np.r_[a, sl[k]], np.r_[-p.X[k], 1.0])
            b.add_linear(0.0, [su[k]], [1.0])
            b.add_linear(0.0, [sl[k]], [1.0])
        prob = b.build()
        sol = interior_point(prob, tol=1e-9, feas_tol=1e-9, max_iter=150)
        if sol.status != "optimal":
            return None
        return sol.x[prob.groups["a"]]

    def relaxation(self, fix_up, fix_lo):
        """Big-M relaxation at a branch-and-bound node.

        ``fix_up``/``fix_lo`` map sample -> 0 (inlier) or 1 (outlier);
        unfixed samples get a continuous indicator in [0, 1].
        """
        p = self.p
        K = p.n_samples
        b, a = self._base("card-node")
        zu = {}
        zl = {}
        for side, fix, z, sign in (("u", fix_up, zu, 1.0), ("l", fix_lo, zl, -1.0)):
            free = [k for k in range(K) if k not in fix]
            if free:
                idx = b.add_vars(f"z{side}", len(free))
                z.update(zip(free, idx))
            for k in range(K):
                f = fix.get(k)
                if f == 1:
                    continue
                # delta + M z - sign * (y_k - X_k a) >= 0
                if f == 0:
                    b.add_linear(p.delta - sign * p.y[k], a, sign * p.X[k])
                else:
                    b.add_linear(p.delta - sign * p.y[k], np.r_[a, z[k]], np.r_[sign * p.X[k], p.big_m])
                    b.add_linear(0.0, [z[k]], [1.0])
                    b.add_linear(1.0, [z[k]], [-1.0])
            remaining = p.budget - sum(1 for v in fix.values() if v == 1)
            if remaining < 0:
                return "infeasible", None, math.inf, {}, {}
            if z:
                ids = np.array(list(z.values()))
                b.add_linear(float(remaining), ids, -np.ones(len(ids)))
        prob = b.build()
        sol = interior_point(prob, tol=1e-9, feas_tol=1e-9, max_iter=150)
        if sol.status != "optimal":
            return sol.status, None, math.inf, {}, {}
        y = sol.x
        q = float(y[prob.groups["q"]][0])
        bound = self.value(q)
        return ("optimal", y[prob.groups["a"]], bound,
                {k: float(y[j]) for k, j in zu.items()}, {k: float(y[j]) for k, j in zl.items()})


def _violators(p, a):
    r = p.residuals(a)
    return r, np.flatnonzero(r > p.delta), np.flatnonzero(r < -p.delta)


def _counts_ok(p, a):
    _, up, lo = _violators(p, a)
    return len(up) <= p.budget and len(lo) <= p.budget


class _Heuristic:
    def __init__(self, p, sub, max_evals):
        self.p, self.sub, self.max_evals = p, sub, max_evals
        self.evals = 0
        self.iterations = 0
        self.K = p.n_samples

    def solve(self, out_up, out_lo):
        """Re-fit with the given outlier sets; returns a result tuple or None."""
        p = self.p
        in_up = [k for k in range(self.K) if k not in out_up]
        in_lo = [k for k in range(self.K) if k not in out_lo]
        for margin in MARGINS:
            self.evals += 1
            status, a, obj, mu, ml, its = self.sub.fit(in_up, in_lo, margin)
            self.iterations += its
            if status != "optimal":
                return None
            r = p.residuals(a)
            # exact re-count: the re-fit must keep every inlier inside the band
            if np.all(r[in_up] <= p.delta) and np.all(r[in_lo] >= -p.delta):
                return a, obj, dict(zip(in_up, mu)), dict(zip(in_lo, ml))
        return None

    def initial_sets(self, a):
        p = self.p
        r = p.residuals(a)
        up = [k for k in np.argsort(-r) if r[k] > p.delta][:p.budget]
        lo = [k for k in np.argsort(r) if r[k] < -p.delta][:p.budget]
        return set(int(k) for k in up), set(int(k) for k in lo)

    def local_search(self, state, out_up, out_lo, width=2):
        p = self.p
        a, obj, mu, ml = state
        improved = True
        while improved and self.evals < self.max_evals:
            improved = False
            r = p.residuals(a)
            for side in ("up", "lo"):
                out = out_up if side == "up" else out_lo
                mult = mu if side == "up" else ml
                if not out:
                    continue
                binding = sorted((k for k, v in mult.items() if v > 1e-9), key=lambda k: -mult[k])[:width]
                if not binding:
                    continue
                excess = {o: (r[o] - p.delta if side == "up" else -r[o] - p.delta) for o in out}
                # outliers that no longer violate are free slots; then the mildest violators
                cand_out = sorted(out, key=lambda o: excess[o])[:width]
                for o, k in itertools.product(cand_out, binding):
                    if self.evals >= self.max_evals:
                        break
                    new_out = (out - {o}) | {k}
                    trial = self.solve(new_out, out_lo) if side == "up" else self.solve(out_up, new_out)
                    if trial is not None and trial[1] < obj - 1e-12 * (1 + abs(obj)):
                        if side == "up":
                            out_up = new_out
                        else:
                            out_lo = new_out
                        a, obj, mu, ml = trial
                        improved = True
                        break
                if improved:
                    break
        return (a, obj, mu, ml), out_up, out_lo


def _heuristic(p: CardinalityProblem, sub: _Sub, warm_start, max_evals):
    h = _Heuristic(p, sub, max_evals)
    t0 = time.perf_counter()
    free = h.solve(set(range(h.K)), set(range(h.K)))
    if free is None:
        return Solution(np.full(p.n_params, np.nan), "infeasible", math.inf, iterations=h.iterations,
                        info={"reason": "box/side constraints infeasible", "evals": h.evals,
                              "time": time.perf_counter() - t0})
    lower_bound = free[1]
    a0 = free[0]
    if _counts_ok(p, a0):
        return Solution(a0, "feasible", free[1], dual_objective=lower_bound, iterations=h.iterations,
                        info={"evals": h.evals, "lower_bound": lower_bound, "gap": 0.0,
                              "time": time.perf_counter() - t0})
    state = None
    seeds = [a0]
    if warm_start is not None:
        seeds.insert(0, np.asarray(warm_start, dtype=float))
    for seed in seeds:
        up, lo = h.initial_sets(seed)
        state = h.solve(up, lo)
        if state is not None:
            break
    if state is None:
        a1 = sub.l1_split()
        if a1 is not None:
            up, lo = h.initial_sets(a1)
            state = h.solve(up, lo)
    if state is None:
        return Solution(np.full(p.n_params, np.nan), "infeasible", math.inf, iterations=h.iterations,
                        info={"reason": "no outlier assignment found within the budget", "evals": h.evals,
                              "heuristic": True, "time": time.perf_counter() - t0})
    if state[1] > lower_bound + 1e-12 * (1 + abs(lower_bound)):
        state, up, lo = h.local_search(state, up, lo)
    a, obj = state[0], state[1]
    return Solution(a, "feasible", obj, dual_objective=lower_bound, iterations=h.iterations,
                    info={"evals": h.evals, "lower_bound": lower_bound, "gap": obj - lower_bound,
                          "outliers_upper": sorted(int(k) for k in up),
                          "outliers_lower": sorted(int(k) for k in lo), "time": time.perf_counter() - t0})


def _exact(p: CardinalityProblem, sub: _Sub, warm_start, node_budget, max_evals):
    t0 = time.perf_counter()
    inc = _heuristic(p, sub, warm_start, max_evals)
    best_a = inc.x if inc.ok else None
    best = inc.objective if inc.ok else math.inf
    counter = itertools.count()
    heap = [(-math.inf, next(counter), {}, {})]
    nodes = 0
    unresolved = 0
    iterations = inc.iterations
    K = p.n_samples
    while heap:
        bound, _, fu, fl = heapq.heappop(heap)
        if bound >= best - 1e-9 * (1 + abs(best)):
            continue
        if nodes >= node_budget:
            unresolved += 1 + len(heap)
            break
        nodes += 1
        status, a, nb, zu, zl = sub.relaxation(fu, fl)
        if status == "infeasible":
            continue
        if status != "optimal":
            nb = bound
            a = None
        elif nb >= best - 1e-9 * (1 + abs(best)):
            continue
        if a is not None:
            r = p.residuals(a)
            ok_up = [k for k in range(K) if r[k] > p.delta and fu.get(k) != 1]
            ok_lo = [k for k in range(K) if r[k] < -p.delta and fl.get(k) != 1]
            n_up = len(ok_up) + sum(v == 1 for v in fu.values())
            n_lo = len(ok_lo) + sum(v == 1 for v in fl.values())
            if n_up <= p.budget and n_lo <= p.budget and all(fu.get(k) != 0 for k in ok_up) \
                    and all(fl.get(k) != 0 for k in ok_lo):
                obj = p.objective(a)
                if obj < best:
                    best, best_a = obj, a
                continue
        # branch on the free indicator closest to one (largest violation as fallback)
        cand = [(v, "u", k) for k, v in zu.items()] + [(v, "l", k) for k, v in zl.items()]
        if not cand:
            free_u = [k for k in range(K) if k not in fu]
            free_l = [k for k in range(K) if k not in fl]
            cand = [(0.0, "u", k) for k in free_u] + [(0.0, "l", k) for k in free_l]
            if a is not None:
                r = p.residuals(a)
                cand = [(r[k] if s == "u" else -r[k], s, k) for _, s, k in cand]
        if not cand:
            unresolved += 1
            continue
        _, s, k = max(cand)
        for val in (1, 0):
            nfu, nfl = dict(fu), dict(fl)
            (nfu if s == "u" else nfl)[k] = val
            if sum(v == 1 for v in nfu.values()) > p.budget or sum(v == 1 for v in nfl.values()) > p.budget:
                continue
            # with the budget used up every other sample on that side is an inlier
            for fix in (nfu, nfl):
                if sum(v == 1 for v in fix.values()) == p.budget:
                    for j in range(K):
                        fix.setdefault(j, 0)
            heapq.heappush(heap, (nb, next(counter), nfu, nfl))
    info = {"nodes": nodes, "unresolved": unresolved, "time": time.perf_counter() - t0,
            "heuristic_objective": inc.objective if inc.ok else None}
    if best_a is None:
        status = "infeasible" if unresolved == 0 else "iteration-limit"
        return Solution(np.full(p.n_params, np.nan), status, math.inf, iterations=iterations, info=info)
    status = "optimal" if unresolved == 0 else "feasible"
    return Solution(best_a, status, best, iterations=iterations, info=info)


def solve_cardinality(p: CardinalityProblem, *, mode: str = "heuristic", warm_start=None,
                      node_budget: int = 5000, max_evals: int = 40) -> Solution:
    """Solve a budgeted-violation regression (see module docstring for the modes)."""
    if mode not in ("heuristic", "exact"):
        raise ValueError(f"unknown mode {mode!r}")
    sub = _Sub(p)
    if mode == "heuristic":
        sol = _heuristic(p, sub, warm_start, max_evals)
    else:
        sol = _exact(p, sub, warm_start, node_budget, max_evals)
    if sol.ok:
        sol.certificates = verify(p, sol)
        if not sol.certificates["passed"]:
            sol.status = "numerical-failure"
    return sol
