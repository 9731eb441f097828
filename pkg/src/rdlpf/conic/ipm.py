"""Dense primal-dual interior-point method for small SDPs.

Infeasible-start Mehrotra predictor-corrector with Nesterov-Todd scaling.
The problem is taken in the inequality form of :class:`ConicProblem`; the
conic dual carries one PSD multiplier ``X_b`` per LMI block, a nonnegative
multiplier vector for the scalar inequalities and a free multiplier for the
equalities.

The Schur complement ``M_ij = F_i . (W F_j W)`` is built from the sparse
coefficient triplets, so a block costs ``O(nnz * n^2)`` per iteration rather
than ``O(k^2 n^2)``.  When the problem marks a set of *shared* variables and
the remaining variables split into independent groups, ``M`` is factored as
a bordered block-diagonal matrix.
"""
from __future__ import annotations

import logging
import time

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .problem import ConicProblem, Solution

log = logging.getLogger(__name__)

DEFAULT_MAX_DIM = 400


class ProblemTooLarge(ValueError):
    pass


class _SdpBlock:
    def __init__(self, blk, m):
        n = blk.size
        self.n = n
        self.name = blk.name
        off = blk.row != blk.col
        p = np.concatenate([blk.row, blk.col[off]])
        q = np.concatenate([blk.col, blk.row[off]])
        v = np.concatenate([blk.val, blk.val[off]])
        var = np.concatenate([blk.var, blk.var[off]])
        self.vars, local = np.unique(var, return_inverse=True)
        self.k = len(self.vars)
        nnz = len(v)
        self.p, self.q = p, q
        self.A = sp.csr_matrix((v, (local, p * n + q)), shape=(self.k, n * n))
        self.AT = self.A.T.tocsr()
        self.S = sp.csr_matrix((v, (local, np.arange(nnz))), shape=(self.k, nnz))
        self.F0 = blk.const
        self.normF = np.sqrt(np.asarray(self.A.multiply(self.A).sum(axis=1)).ravel())

    def lin(self, dy):
        """Linear part ``sum_j dy_j F_j`` (no constant)."""
        return (self.AT @ dy[self.vars]).reshape(self.n, self.n)

    def adjoint(self, X):
        """``(F_j . X)_j`` for the variables of this block."""
        return self.A @ X.ravel()

    def schur(self, W):
        O = (W[:, self.p].T[:, :, None] * W[self.q, :][:, None, :]).reshape(len(self.p), -1)
        T = self.S @ O
        return np.asarray(self.A @ T.T)


def _scaling(X, Z):
    """NT scaling: returns (R, Rinv, lam) with Rinv X Rinv^T = diag(lam) = R^T Z R."""
    Lx = np.linalg.cholesky(X)
    Lz = np.linalg.cholesky(Z)
    U, s, Vt = np.linalg.svd(Lz.T @ Lx)
    R = Lx @ Vt.T / np.sqrt(s)
    Rinv = (U.T / np.sqrt(s)[:, None]) @ Lz.T
    return R, Rinv, s


def _max_step_sdp(lam, dS):
    d = 1.0 / np.sqrt(lam)
    e = np.linalg.eigvalsh(d[:, None] * dS * d[None, :])
    emin = e[0]
    return np.inf if emin >= 0 else -1.0 / emin


def _max_step_lp(x, dx):
    neg = dx < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-x[neg] / dx[neg]))


class _Factor:
    """Cholesky of the Schur matrix, optionally bordered block-diagonal."""

    def __init__(self, M, comps, border, refine: int = 2):
        self.M = M
        self.refine = refine
        self.comps = comps
        self.border = border
        reg = 1e-13 * max(1.0, float(np.max(np.abs(np.diag(M)))))
        for attempt in range(6):
            try:
                self._factor(M, reg)
                return
            except (np.linalg.LinAlgError, sla.LinAlgError):
                reg *= 100.0
        raise np.linalg.LinAlgError("Schur complement is numerically singular")

    def _factor(self, M, reg):
        if self.comps is None:
            self.L = sla.cho_factor(M + reg * np.eye(len(M)), lower=True, check_finite=False)
            return
        B = self.border
        self.facs = []
        S = M[np.ix_(B, B)] + reg * np.eye(len(B))
        self.cross = []
        for idx in self.comps:
            Mkk = M[np.ix_(idx, idx)] + reg * np.eye(len(idx))
            f = sla.cho_factor(Mkk, lower=True, check_finite=False)
            MkB = M[np.ix_(idx, B)]
            Y = sla.cho_solve(f, MkB, check_finite=False)
            S -= MkB.T @ Y
            self.facs.append(f)
            self.cross.append((MkB, Y))
        self.Sf = sla.cho_factor(S, lower=True, check_finite=False)

    def solve(self, r):
        """Solve ``M x = r`` with a few steps of iterative refinement."""
        x = self._solve(r)
        for _ in range(self.refine):
            res = r - self.M @ x
            if not np.all(np.isfinite(res)):
                break
            x = x + self._solve(res)
        return x

    def _solve(self, r):
        if self.comps is None:
            return sla.cho_solve(self.L, r, check_finite=False)
        B = self.border
        out = np.empty_like(r)
        rb = r[B].copy()
        partial = []
        for idx, f, (MkB, Y) in zip(self.comps, self.facs, self.cross):
            zk = sla.cho_solve(f, r[idx], check_finite=False)
            partial.append(zk)
            rb -= MkB.T @ zk
        xb = sla.cho_solve(self.Sf, rb, check_finite=False)
        out[B] = xb
        for idx, zk, (MkB, Y) in zip(self.comps, partial, self.cross):
            out[idx] = zk - Y @ xb
        return out


def _components(p, sdp, G, m):
    """Split non-shared variables into independently coupled groups."""
    if p.shared is None or len(p.shared) == 0:
        return None, None
    shared = np.zeros(m, dtype=bool)
    shared[p.shared] = True
    rows, cols = [], []
    for b in sdp:
        v = b.vars[~shared[b.vars]]
        if len(v) > 1:
            rows.append(np.full(len(v) - 1, v[0]))
            cols.append(v[1:])
    Gc = G.tocsr()
    for i in range(Gc.shape[0]):
        v = Gc.indices[Gc.indptr[i]:Gc.indptr[i + 1]]
        v = v[~shared[v]]
        if len(v) > 1:
            rows.append(np.full(len(v) - 1, v[0]))
            cols.append(v[1:])
    if rows:
        r = np.concatenate(rows)
        c = np.concatenate(cols)
        adj = sp.coo_matrix((np.ones(len(r)), (r, c)), shape=(m, m))
    else:
        adj = sp.coo_matrix((m, m))
    ncomp, labels = connected_components(adj, directed=False)
    free = np.flatnonzero(~shared)
    comps = [free[labels[free] == lab] for lab in np.unique(labels[free])]
    if len(comps) < 2:
        return None, None
    return comps, np.flatnonzero(shared)


def interior_point(p: ConicProblem, *, tol: float = 1e-8, feas_tol: float = 1e-8, max_iter: int = 100,
              max_dim: int = DEFAULT_MAX_DIM, step: float = 0.98, relaxed: float = 100.0,
              stall: int = 4) -> Solution:
    """Minimize ``p.c @ y`` subject to the LMIs, inequalities and equalities of ``p``.

    Returns a :class:`Solution` whose status is ``optimal`` when primal and
    dual residuals are below ``feas_tol`` and the relative duality gap is
    below ``tol``.  ``infeasible`` is reported when the dual iterates
    approach a Farkas ray; ``iteration-limit`` and ``numerical-failure``
    otherwise.

    Near degenerate optima the residuals can stop improving before the
    tolerances are met.  The best iterate is kept; if progress stalls for
    ``stall`` iterations, or the run ends without success, and that iterate
    is within ``relaxed`` times every tolerance, it is returned as
    ``optimal`` with ``info["reduced_accuracy"] = True``.
    """
    t0 = time.perf_counter()
    if p.lmi_dimension > max_dim:
        raise ProblemTooLarge(f"total LMI dimension {p.lmi_dimension} exceeds cap {max_dim}")
    m = p.n_vars
    c = p.c
    sdp = []
    lin_rows = [p.lin_coef]
    lin_const = [p.lin_const]
    for blk in p.blocks:
        if blk.size == 1:
            row = np.zeros(m)
            np.add.at(row, blk.var, blk.val)
            lin_rows.append(sp.csr_matrix(row[None, :]))
            lin_const.append(blk.const.ravel())
        elif blk.size > 1:
            sdp.append(_SdpBlock(blk, m))
    G = sp.vstack(lin_rows).tocsr() if lin_rows else sp.csr_matrix((0, m))
    h = np.concatenate(lin_const) if lin_const else np.zeros(0)
    E = p.eq_coef
    f = p.eq_rhs
    r = len(h)
    n_eq = len(f)
    GT = G.T.tocsr()
    ET = E.T.toarray() if n_eq else None
    G_used = np.unique(G.indices)
    Gd = G[:, G_used].toarray() if r else np.zeros((0, 0))
    comps, border = _components(p, sdp, G, m)

    # starting point
    y = np.zeros(m)
    nu = np.zeros(n_eq)
    Xs, Zs = [], []
    for b in sdp:
        cj = np.abs(c[b.vars])
        zeta = max(10.0, np.sqrt(b.n), b.n * float(np.max((1 + cj) / (1 + b.normF))) if b.k else 0.0)
        eta = max(10.0, np.sqrt(b.n), np.linalg.norm(b.F0), float(np.max(b.normF)) if b.k else 0.0)
        Xs.append(zeta * np.eye(b.n))
        Zs.append(eta * np.eye(b.n))
    if r:
        colnorm = np.sqrt(np.asarray(G.multiply(G).sum(axis=0)).ravel())
        zeta = max(10.0, float(np.max((1 + np.abs(c)) / (1 + colnorm))))
        eta = max(10.0, float(np.max(np.abs(h))), float(np.max(np.abs(G.data))) if G.nnz else 0.0)
        x = np.full(r, zeta)
        z = np.full(r, eta)
    else:
        x = np.zeros(0)
        z = np.zeros(0)
    N = sum(b.n for b in sdp) + r
    normF0 = max([np.linalg.norm(b.F0) for b in sdp] + [np.linalg.norm(h)] + [0.0])
    normc = np.linalg.norm(c)
    normf = np.linalg.norm(f)

    def adjoint_all(Xl, xl):
        out = np.zeros(m)
        for b, X in zip(sdp, Xl):
            out[b.vars] += b.adjoint(X)
        if r:
            out += GT @ xl
        return out

    status = "iteration-limit"
    it = 0
    history = []
    pobj = dobj = np.nan
    best = None
    since_best = 0
    for it in range(1, max_iter + 1):
        rp = [b.F0 + b.lin(y) - Z for b, Z in zip(sdp, Zs)]
        rp_lp = h + G @ y - z if r else np.zeros(0)
        aty = adjoint_all(Xs, x) + (ET @ nu if n_eq else 0.0)
        rd = c - aty
        re = f - E @ y if n_eq else np.zeros(0)
        gap = sum(float(np.sum(X * Z)) for X, Z in zip(Xs, Zs)) + float(x @ z)
        mu = gap / max(N, 1)
        pobj = float(c @ y)
        dobj = -sum(float(np.sum(b.F0 * X)) for b, X in zip(sdp, Xs)) - float(h @ x) + float(f @ nu)
        pinf = max([np.linalg.norm(R) for R in rp] + [np.linalg.norm(rp_lp), 0.0]) / (1 + normF0)
        einf = np.linalg.norm(re) / (1 + normf) if n_eq else 0.0
        dinf = np.linalg.norm(rd) / (1 + normc)
        relgap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        compl = gap / (1 + abs(pobj) + abs(dobj))
        history.append((pobj, dobj, pinf, dinf, relgap))
        if max(pinf, einf) <= feas_tol and dinf <= feas_tol and max(relgap, compl) <= tol:
            status = "optimal"
            break
        merit = max(max(pinf, einf, dinf) / feas_tol, max(relgap, compl) / tol)
        if np.isfinite(merit) and (best is None or merit < best[0]):
            best = (merit, it, y.copy(), [X.copy() for X in Xs], x.copy(), nu.copy(), pobj, dobj)
            since_best = 0
        else:
            since_best += 1
            if since_best >= stall and best[0] <= relaxed:
                status = "stalled"
                break
        # Farkas ray of the dual: F*(X) + G^T x + E^T nu ~ 0 with dual objective > 0
        if dobj > 0 and np.linalg.norm(aty) <= 1e-8 * dobj and dobj > 1e6 * (1 + abs(pobj)):
            status = "infeasible"
            break
        if not np.isfinite(mu) or not np.isfinite(pobj):
            status = "numerical-failure"
            break
        # dual heading to -inf (never a Farkas ray) while the primal residual no longer shrinks
        if len(history) > 3 and -dobj > 1e8 * (1 + abs(pobj)) and pinf > feas_tol \
                and pinf > 0.5 * history[-4][2]:
            status = "numerical-failure"
            break

        try:
            scal = [_scaling(X, Z) for X, Z in zip(Xs, Zs)]
        except np.linalg.LinAlgError:
            status = "numerical-failure"
            break
        Ws = [R @ R.T for R, _, _ in scal]
        M = np.zeros((m, m))
        for b, W in zip(sdp, Ws):
            M[np.ix_(b.vars, b.vars)] += b.schur(W)
        if r:
            with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
                d_lp = x / z
            if not np.all(np.isfinite(d_lp)):
                status = "numerical-failure"
                break
            M[np.ix_(G_used, G_used)] += Gd.T @ (d_lp[:, None] * Gd)
        try:
            fac = _Factor(M, comps, border)
        except np.linalg.LinAlgError:
            status = "numerical-failure"
            break
        if n_eq:
            EMinv = fac.solve(ET).T
            S_eq = E @ EMinv.T
            S_eq = 0.5 * (S_eq + S_eq.T)
            try:
                S_eqf = sla.cho_factor(S_eq + 1e-14 * np.eye(n_eq) * max(1.0, np.max(np.diag(S_eq))),
                                       lower=True, check_finite=False)
            except sla.LinAlgError:
                status = "numerical-failure"
                break

        def direction(Ds, D_lp):
            g = -rd.copy()
            for b, D, W, R_ in zip(sdp, Ds, Ws, rp):
                g[b.vars] += b.adjoint(D - W @ R_ @ W)
            if r:
                g += GT @ (D_lp - d_lp * rp_lp)
            if n_eq:
                Mg = fac.solve(g)
                dnu = sla.cho_solve(S_eqf, re - E @ Mg, check_finite=False)
                dy = Mg + EMinv.T @ dnu
            else:
                dnu = np.zeros(0)
                dy = fac.solve(g)
            dZs = [b.lin(dy) + R_ for b, R_ in zip(sdp, rp)]
            dXs = [D - W @ dZ @ W for D, W, dZ in zip(Ds, Ws, dZs)]
            dXs = [0.5 * (A + A.T) for A in dXs]
            dz = (G @ dy + rp_lp) if r else np.zeros(0)
            dx = D_lp - d_lp * dz if r else np.zeros(0)
            return dy, dnu, dXs, dZs, dx, dz

        def steps(dXs, dZs, dx, dz):
            ap, ad = np.inf, np.inf
            dXt, dZt = [], []
            for (R, Rinv, lam), dX, dZ in zip(scal, dXs, dZs):
                a = Rinv @ dX @ Rinv.T
                bb = R.T @ dZ @ R
                a = 0.5 * (a + a.T)
                bb = 0.5 * (bb + bb.T)
                dXt.append(a)
                dZt.append(bb)
                ap = min(ap, _max_step_sdp(lam, a))
                ad = min(ad, _max_step_sdp(lam, bb))
            if r:
                ap = min(ap, _max_step_lp(x, dx))
                ad = min(ad, _max_step_lp(z, dz))
            return ap, ad, dXt, dZt

        # predictor
        Ds = [-X for X in Xs]
        D_lp = -x
        dy, dnu, dXs, dZs, dx, dz = direction(Ds, D_lp)
        ap, ad, dXt, dZt = steps(dXs, dZs, dx, dz)
        ap, ad = min(1.0, ap), min(1.0, ad)
        gap_aff = sum(float(np.sum((X + ap * dX) * (Z + ad * dZ)))
                      for X, Z, dX, dZ in zip(Xs, Zs, dXs, dZs))
        if r:
            gap_aff += float((x + ap * dx) @ (z + ad * dz))
        sigma = min(1.0, max(0.0, gap_aff / max(gap, 1e-300))) ** 3

        # corrector
        Ds = []
        for (R, Rinv, lam), a, bb in zip(scal, dXt, dZt):
            rhs = -0.5 * (a @ bb + bb @ a)
            rhs[np.diag_indices_from(rhs)] += sigma * mu - lam ** 2
            U = 2.0 * rhs / (lam[:, None] + lam[None, :])
            Ds.append(R @ U @ R.T)
        D_lp = (sigma * mu - x * z - dx * dz) / z if r else np.zeros(0)
        dy, dnu, dXs, dZs, dx, dz = direction(Ds, D_lp)
        ap, ad, _, _ = steps(dXs, dZs, dx, dz)
        ap = min(1.0, step * ap)
        ad = min(1.0, step * ad)
        Xs = [X + ap * dX for X, dX in zip(Xs, dXs)]
        x = x + ap * dx
        y = y + ad * dy
        nu = nu + ad * dnu
        Zs = [Z + ad * dZ for Z, dZ in zip(Zs, dZs)]
        z = z + ad * dz

    reduced = False
    if status != "optimal" and status != "infeasible" and best is not None and best[0] <= relaxed:
        _, _, y, Xs, x, nu, pobj, dobj = best
        status = "optimal"
        reduced = True
    else:
        if status == "stalled":
            status = "numerical-failure"
        if status not in ("optimal", "infeasible") and best is not None:
            # hand back the least-bad iterate so callers can check it independently
            _, _, y, Xs, x, nu, pobj, dobj = best
    elapsed = time.perf_counter() - t0
    log.debug("interior_point %s: %s after %d iterations (%.3fs)", p.name, status, it, elapsed)
    return Solution(
        x=y, status=status, objective=pobj, dual_objective=dobj, iterations=it,
        info={"time": elapsed, "history": history, "nu": nu, "reduced_accuracy": reduced},
        dual_lmi=Xs, dual_lin=x,
    )
