"""Independent reference computations used only by the tests.

None of these share code with the package beyond reading a Network.
"""
from __future__ import annotations

import itertools
import math

import numpy as np


def ybus_accumulate(net) -> np.ndarray:
    """Element-by-element pi-model accumulation with plain Python complex arithmetic."""
    n = net.n_bus
    Y = [[0j] * n for _ in range(n)]
    for br in net.branches:
        if not br.status:
            continue
        f, t = net.index[br.fbus], net.index[br.tbus]
        ys = 1 / complex(br.r, br.x)
        tap = br.tap if br.tap else 1.0
        a = tap * complex(math.cos(math.radians(br.shift)), math.sin(math.radians(br.shift)))
        Y[f][f] += (ys + 0.5j * br.b) / (abs(a) ** 2)
        Y[t][t] += ys + 0.5j * br.b
        Y[f][t] += -ys / a.conjugate()
        Y[t][f] += -ys / a
    for k, b in enumerate(net.buses):
        Y[k][k] += complex(b.Gs, b.Bs) / net.baseMVA
    return np.array(Y)


def gauss_seidel(net, P, Q, Vset, tol=1e-11, max_iter=200000, accel=1.6):
    """Gauss-Seidel power flow with acceleration; PV magnitudes reset every sweep.

    Returns ``(V, iterations, max_mismatch)``.
    """
    Y = ybus_accumulate(net)
    n = net.n_bus
    ref = net.slack
    gen_buses = {net.index[g.bus] for g in net.gens if g.status}
    kinds = ["slack" if k == ref else ("PV" if b.kind == "PV" and k in gen_buses else "PQ")
             for k, b in enumerate(net.buses)]
    V = np.ones(n, dtype=complex)
    for k in range(n):
        if kinds[k] != "PQ":
            V[k] = Vset[k]
    V[ref] = Vset[ref] * np.exp(1j * math.radians(net.buses[ref].Va))
    S = P + 1j * Q
    others = [np.array([j for j in range(n) if j != k and Y[k, j] != 0]) for k in range(n)]
    for it in range(1, max_iter + 1):
        for k in range(n):
            if kinds[k] == "slack":
                continue
            idx = others[k]
            sk = S[k]
            if kinds[k] == "PV":
                qk = -(np.conj(V[k]) * (Y[k, k] * V[k] + Y[k, idx] @ V[idx])).imag
                sk = P[k] + 1j * qk
            vk = (np.conj(sk / V[k]) - Y[k, idx] @ V[idx]) / Y[k, k]
            if kinds[k] == "PV":
                V[k] = Vset[k] * vk / abs(vk)
            else:
                V[k] = V[k] + accel * (vk - V[k])
        if it % 10 == 0:
            mis = V * np.conj(Y @ V) - S
            m = [abs(mis[k].real) for k in range(n) if kinds[k] != "slack"]
            m += [abs(mis[k].imag) for k in range(n) if kinds[k] == "PQ"]
            if max(m) <= tol:
                return V, it, max(m)
    raise RuntimeError("Gauss-Seidel did not converge")


def two_bus_voltage(P, Q, x):
    """Receiving-end voltage of a lossless line ``jx`` from a 1.0 pu source feeding ``P + jQ``.

    ``v^4 + (2 Q x - 1) v^2 + x^2 (P^2 + Q^2) = 0`` (high-voltage root), ``sin(theta) = -P x / v``.
    """
    b = 2 * Q * x - 1
    v2 = (-b + math.sqrt(b * b - 4 * x * x * (P * P + Q * Q))) / 2
    v = math.sqrt(v2)
    return v, math.asin(-P * x / v)


def kl_eps_grid(eps, d, n=10**6):
    """``1 - min_z (e^-d z^(1-eps) - 1) / (z - 1)`` over ``n`` evenly spaced points of (0, 1)."""
    z = np.linspace(1e-6, 1 - 1e-6, n)
    val = (np.exp(-d) * z ** (1 - eps) - 1) / (z - 1)
    return max(1 - float(val.min()), 0.0)


def enumerate_cardinality(X, y, delta, m, xc, yc, lb, ub):
    """Exact optimum of ``min (y_c - a x_c)^2`` with at most ``m`` violators per side, 1-D ``a``.

    Every choice of excused samples on each side leaves an interval for ``a``;
    the best point of each interval is the clipped chosen-point minimizer.
    """
    K = len(y)
    best = (math.inf, None)
    x = X[:, 0]
    for up in itertools.combinations(range(K), m):
        for lo in itertools.combinations(range(K), m):
            a_lo, a_hi = lb, ub
            ok = True
            for k in range(K):
                # upper side y - a x <= delta unless excused; lower side a x - y <= delta unless excused
                cons = []
                if k not in up:
                    cons.append((-x[k], delta - y[k]))
                if k not in lo:
                    cons.append((x[k], delta + y[k]))
                for c, h in cons:
                    if c > 0:
                        a_hi = min(a_hi, h / c)
                    elif c < 0:
                        a_lo = max(a_lo, h / c)
                    elif h < 0:
                        ok = False
            if not ok or a_lo > a_hi:
                continue
            a_star = yc / xc if xc != 0 else 0.0
            a = min(max(a_star, a_lo), a_hi)
            obj = (yc - a * xc) ** 2
            if obj < best[0] - 1e-15:
                best = (obj, a)
    return best


def check_sdpa_grammar(text):
    """Validate sparse SDPA text line by line; returns ``(m, sizes, n_entries)``.

    Independent of the package parser: every rule is checked with plain string
    handling and raises ``AssertionError`` on the first breach.
    """
    lines = [ln for ln in text.splitlines() if ln.strip()]
    body = [ln for ln in lines if ln.lstrip()[0] not in '"*']
    assert all(ln.lstrip()[0] in '"*' for ln in lines[:len(lines) - len(body)]), "comments must come first"
    assert len(body) >= 4, "missing header lines"
    m = int(body[0].split()[0])
    nb = int(body[1].split()[0])
    assert m >= 1 and nb >= 1
    sizes = [int(t) for t in body[2].replace(",", " ").replace("{", " ").replace("}", " ").split()[:nb]]
    assert len(sizes) == nb and 0 not in sizes
    c = [float(t) for t in body[3].replace(",", " ").replace("{", " ").replace("}", " ").split()[:m]]
    assert len(c) == m
    seen = set()
    for ln in body[4:]:
        t = ln.split()
        assert len(t) == 5, f"entry needs five fields: {ln!r}"
        mat, blk, i, j = (int(v) for v in t[:4])
        float(t[4])
        assert 0 <= mat <= m and 1 <= blk <= nb, ln
        n = abs(sizes[blk - 1])
        assert 1 <= i <= j <= n, f"upper triangle, 1-based: {ln!r}"
        if sizes[blk - 1] < 0:
            assert i == j, f"diagonal block: {ln!r}"
        assert (mat, blk, i, j) not in seen, f"duplicate entry {ln!r}"
        seen.add((mat, blk, i, j))
    return m, sizes, len(body) - 4
