"""Text exports: sparse SDPA (``.dat-s``) for conic problems, LP format for cardinality problems.

SDPA's primal reads ``min c'x s.t. sum_i F_i x_i - F_0 >= 0``, so a
:class:`ConicProblem` maps over with ``F_0 = -const``.  Scalar inequalities
share one diagonal block (negative size in the block structure);
equalities are written as two opposite inequalities.  Numbers use Python's
shortest round-trip representation, so parsing the file back reproduces
every coefficient bit for bit.
"""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .problem import CardinalityProblem, ConicProblem, LMIBlock


def _num(v: float) -> str:
    v = float(v)
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def export_sdpa(p: ConicProblem, comment: str | None = None) -> str:
    """Sparse SDPA text of ``p`` (equalities split, scalar rows in one LP block)."""
    q = p.with_equalities_as_inequalities()
    m = q.n_vars
    blocks = [b for b in q.blocks]
    sizes = [b.size for b in blocks]
    has_lp = q.n_lin > 0
    if has_lp:
        sizes.append(-q.n_lin)
    lines = []
    if comment:
        for ln in comment.splitlines():
            lines.append('"' + ln.replace('"', "'"))
    lines.append(str(m))
    lines.append(str(len(sizes)))
    lines.append(" ".join(str(s) for s in sizes))
    lines.append(" ".join(_num(v) for v in q.c))
    entries = []
    for k, b in enumerate(blocks, start=1):
        iu = np.triu_indices(b.size)
        F0 = -b.const[iu]
        for i, j, v in zip(iu[0], iu[1], F0):
            if v != 0.0:
                entries.append((0, k, i + 1, j + 1, v))
        acc: dict[tuple[int, int, int], float] = {}
        for var, i, j, v in zip(b.var, b.row, b.col, b.val):
            key = (int(var) + 1, int(i) + 1, int(j) + 1)
            acc[key] = acc.get(key, 0.0) + float(v)
        for (var, i, j), v in acc.items():
            if v != 0.0:
                entries.append((var, k, i, j, v))
    if has_lp:
        k = len(blocks) + 1
        for r, h in enumerate(q.lin_const):
            if h != 0.0:
                entries.append((0, k, r + 1, r + 1, -h))
        G = q.lin_coef.tocoo()
        for r, j, v in zip(G.row, G.col, G.data):
            if v != 0.0:
                entries.append((int(j) + 1, k, int(r) + 1, int(r) + 1, v))
    entries.sort(key=lambda e: (e[0], e[1], e[2], e[3]))
    for e in entries:
        lines.append(f"{e[0]} {e[1]} {e[2]} {e[3]} {_num(e[4])}")
    return "\n".join(lines) + "\n"


def _tokens(line: str) -> list[str]:
    for ch in ",{}()":
        line = line.replace(ch, " ")
    return line.split()


def parse_sdpa(text: str, name: str = "") -> ConicProblem:
    """Parse sparse SDPA text into a :class:`ConicProblem` (LP blocks become scalar rows)."""
    rows = [ln for ln in text.splitlines() if ln.strip() and ln.lstrip()[0] not in '"*']
    if len(rows) < 4:
        raise ValueError("SDPA text needs at least four header lines")
    m = int(_tokens(rows[0])[0])
    nblocks = int(_tokens(rows[1])[0])
    sizes = [int(t) for t in _tokens(rows[2])[:nblocks]]
    if len(sizes) != nblocks:
        raise ValueError("block structure does not list every block")
    c = np.array([float(t) for t in _tokens(rows[3])[:m]])
    if len(c) != m:
        raise ValueError("objective vector has the wrong length")
    const = {k: np.zeros((abs(s), abs(s))) if s > 0 else np.zeros(abs(s)) for k, s in enumerate(sizes, 1)}
    trip = {k: ([], [], [], []) for k in const}
    for ln in rows[4:]:
        t = _tokens(ln)
        if len(t) != 5:
            raise ValueError(f"bad entry line {ln!r}")
        mat, blk, i, j = (int(v) for v in t[:4])
        v = float(t[4])
        if not (0 <= mat <= m and 1 <= blk <= nblocks):
            raise ValueError(f"entry out of range: {ln!r}")
        i, j = min(i, j) - 1, max(i, j) - 1
        if sizes[blk - 1] < 0 and i != j:
            raise ValueError(f"off-diagonal entry in diagonal block: {ln!r}")
        if mat == 0:
            if sizes[blk - 1] > 0:
                const[blk][i, j] = const[blk][j, i] = -v
            else:
                const[blk][i] = -v
        else:
            tr = trip[blk]
            tr[0].append(mat - 1)
            tr[1].append(i)
            tr[2].append(j)
            tr[3].append(v)
    blocks = []
    lin_rows, lin_const = [], []
    for k, s in enumerate(sizes, 1):
        var, ri, ci, val = trip[k]
        if s > 0:
            blocks.append(LMIBlock(s, const[k], var, ri, ci, val, name=f"block{k}"))
        else:
            lin_rows.append(sp.csr_matrix((val, (ri, var)), shape=(-s, m)))
            lin_const.append(const[k])
    lin = sp.vstack(lin_rows).tocsr() if lin_rows else None
    h = np.concatenate(lin_const) if lin_const else None
    return ConicProblem(m, c, blocks, lin, h, name=name)


def export_lp(p: CardinalityProblem, name: str | None = None) -> str:
    """CPLEX LP text of the big-M mixed-integer form of a cardinality problem."""
    K, n = p.X.shape
    a = [f"a{j}" for j in range(n)]
    zu = [f"zu{k}" for k in range(K)]
    zl = [f"zl{k}" for k in range(K)]

    def lin(coefs, names):
        out = []
        for v, nm in zip(coefs, names):
            if v == 0.0:
                continue
            out.append(f"{'-' if v < 0 else '+'} {_num(abs(v))} {nm}")
        if not out:
            return "0 " + names[0]
        s = " ".join(out)
        return s[2:] if s.startswith("+ ") else s

    lines = [f"\\ {name or p.name or 'cardinality problem'}", "\\ objective constant " + _num(p.r0), "Minimize"]
    quad = []
    P = 0.5 * (p.P + p.P.T)
    for j in range(n):
        if P[j, j] != 0.0:
            quad.append(f"{_num(2 * P[j, j])} {a[j]} ^ 2")
        for k in range(j + 1, n):
            if P[j, k] != 0.0:
                quad.append(f"{_num(4 * P[j, k])} {a[j]} * {a[k]}")
    obj = " obj: " + lin(p.q, a) if np.any(p.q) else " obj: 0 a0"
    if quad:
        obj += " + [ " + " + ".join(quad).replace("+ -", "- ") + " ] / 2"
    lines.append(obj)
    lines.append("Subject To")
    for k in range(K):
        # y_k - X_k a <= delta + M zu_k
        lines.append(f" up{k}: " + lin(np.r_[-p.X[k], -p.big_m], a + [zu[k]]) + f" <= {_num(p.delta - p.y[k])}")
        lines.append(f" lo{k}: " + lin(np.r_[p.X[k], -p.big_m], a + [zl[k]]) + f" <= {_num(p.delta + p.y[k])}")
    lines.append(" budget_up: " + " + ".join(zu) + f" <= {p.budget}")
    lines.append(" budget_lo: " + " + ".join(zl) + f" <= {p.budget}")
    if p.side_coef is not None:
        if p.side_tol <= 0:
            lines.append(" chosen: " + lin(p.side_coef, a) + f" = {_num(p.side_rhs)}")
        else:
            lines.append(" chosen_hi: " + lin(p.side_coef, a) + f" <= {_num(p.side_rhs + p.side_tol)}")
            lines.append(" chosen_lo: " + lin(p.side_coef, a) + f" >= {_num(p.side_rhs - p.side_tol)}")
    lines.append("Bounds")
    for j in range(n):
        lines.append(f" {_num(p.lb[j])} <= {a[j]} <= {_num(p.ub[j])}")
    lines.append("Binaries")
    for chunk in range(0, 2 * K, 10):
        lines.append(" " + " ".join((zu + zl)[chunk:chunk + 10]))
    lines.append("End")
    return "\n".join(lines) + "\n"
