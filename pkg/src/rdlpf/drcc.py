"""Distributionally robust chance-constrained training of linear power flow rows.

For output row ``i`` the random vector is ``xi = (x, y_i)`` and the affine
error is ``r(xi) = y_i - a @ x``.  Each side of the two-sided bound
``|r| <= delta`` becomes one chance constraint ``s @ xi <= delta`` with
``s = (-a, 1)`` (upper) or ``s = (a, -1)`` (lower), held at level ``eps``.

* **M1** guards it over the moment ambiguity set
  ``{P : (E xi - mu0)' Sigma0^-1 (E xi - mu0) <= gamma1, Cov xi <= gamma2 Sigma0}``
  via the dual SDP (one scalar inequality and three LMIs per side).
* **M2** guards it over a KL ball of radius ``d`` around the empirical
  distribution, which reduces to a nominal chance constraint at the
  adjusted risk ``eps'``; under the empirical measure this is an outlier
  budget ``floor(eps' K)`` per side.

Both minimize the chosen operating point's squared error.  That optimum is
usually attained on a whole face of the feasible set, so training then
picks, among the optimal models, the one with the smallest training
least-squares error (ridge floor included).
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.optimize as so

from .conic.cardinality import solve_cardinality
from .conic.backends import solve_sdp
from .conic.ipm import DEFAULT_MAX_DIM
from .conic.problem import CardinalityProblem, ConicProblem, ProblemBuilder
from .conic.verify import verify
from .lpfcore import LinearPFModel, VariableMap, effective_ridge, ridge_weight, train_ls

log = logging.getLogger(__name__)

DEFAULT_EPS = 0.05
DEFAULT_GAMMA1 = 0.1
DEFAULT_GAMMA2 = 1.1
DEFAULT_KL_D = 0.05
AUTO_DELTA_FACTOR = 1.5
AUTO_DELTA_QUANTILE = 0.95
MOMENT_RIDGE = 1e-8


class InfeasibleRowError(RuntimeError):
    def __init__(self, row: int, message: str):
        self.row = row
        super().__init__(f"row {row}: {message}")


class SolverFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class MomentAmbiguity:
    mu0: np.ndarray
    Sigma0: np.ndarray
    gamma1: float = DEFAULT_GAMMA1
    gamma2: float = DEFAULT_GAMMA2

    def __post_init__(self):
        mu0 = np.atleast_1d(np.asarray(self.mu0, dtype=float))
        S = np.atleast_2d(np.asarray(self.Sigma0, dtype=float))
        if S.shape != (len(mu0), len(mu0)):
            raise ValueError("Sigma0 must be square and match mu0")
        if not np.allclose(S, S.T, rtol=0, atol=1e-12 * max(1.0, np.abs(S).max())):
            raise ValueError("Sigma0 must be symmetric")
        if self.gamma1 < 0 or self.gamma2 < 1:
            raise ValueError("need gamma1 >= 0 and gamma2 >= 1")
        object.__setattr__(self, "mu0", mu0)
        object.__setattr__(self, "Sigma0", 0.5 * (S + S.T))

    def marginal(self, idx) -> MomentAmbiguity:
        idx = np.asarray(idx)
        return MomentAmbiguity(self.mu0[idx], self.Sigma0[np.ix_(idx, idx)], self.gamma1, self.gamma2)

    def with_gammas(self, gamma1: float, gamma2: float) -> MomentAmbiguity:
        return MomentAmbiguity(self.mu0, self.Sigma0, gamma1, gamma2)


@dataclass(frozen=True)
class KLAmbiguity:
    d: float = DEFAULT_KL_D

    def __post_init__(self):
        if not (np.isfinite(self.d) and self.d >= 0):
            raise ValueError("KL radius d must be finite and nonnegative")


@dataclass(frozen=True)
class ChanceSpec:
    """Per-row acceptable error ``delta`` (p.u., or ``"auto"``) and risk ``eps``."""

    delta: object = "auto"
    eps: object = DEFAULT_EPS
    two_sided: bool = True

    def __post_init__(self):
        if not (isinstance(self.delta, str) and self.delta == "auto"):
            if np.any(np.asarray(self.delta, dtype=float) <= 0):
                raise ValueError("delta must be positive")
        e = np.asarray(self.eps, dtype=float)
        if np.any(e <= 0) or np.any(e > 0.5):
            raise ValueError("eps must lie in (0, 0.5]")

    def eps_of(self, i: int) -> float:
        e = np.asarray(self.eps, dtype=float)
        return float(e if e.ndim == 0 else e[i])

    def delta_of(self, i: int) -> float:
        d = np.asarray(self.delta, dtype=float)
        return float(d if d.ndim == 0 else d[i])


@dataclass(frozen=True)
class CanonicalConstraint:
    """``s(a) @ xi <= t`` with ``s(a) = s0 + S @ a`` over ``xi = (x, y_i)``."""

    s0: np.ndarray
    S: np.ndarray
    t: float
    eps: float
    side: int

    def s(self, a) -> np.ndarray:
        return self.s0 + self.S @ np.asarray(a, dtype=float)

    def value(self, a, xi) -> np.ndarray:
        return np.asarray(xi) @ self.s(a)


@dataclass
class SdpDualBlock:
    G: np.ndarray
    H: np.ndarray
    l: float
    beta: float
    lam: float
    alpha: np.ndarray


@dataclass
class TrainingConfig:
    method: str = "M1"
    chance: ChanceSpec = field(default_factory=ChanceSpec)
    ambiguity: object = None
    chosen: object = "nearest-mean"
    delta_margin: float = 0.05
    delta_floor: float = 1e-8
    max_lmi: int = 120
    cardinality_mode: str = "heuristic"
    sdp_tol: float = 1e-8
    feas_tol: float = 1e-9
    backend: str = "ipm"
    rows: object = None

    def __post_init__(self):
        self.method = self.method.upper()
        if self.method not in ("M1", "M2"):
            raise ValueError(f"unknown method {self.method!r}")
        if self.ambiguity is None:
            self.ambiguity = KLAmbiguity() if self.method == "M2" else (DEFAULT_GAMMA1, DEFAULT_GAMMA2)


# ---------------------------------------------------------------------------
# ambiguity data


def empirical_moments(data, gamma1: float = DEFAULT_GAMMA1, gamma2: float = DEFAULT_GAMMA2) -> MomentAmbiguity:
    """Sample mean and covariance of ``xi = (x, y)`` with a ridge ``1e-8 trace/dim``."""
    xi = data.xi if hasattr(data, "xi") else np.asarray(data, dtype=float)
    xi = np.atleast_2d(xi)
    if xi.shape[0] == 1 and xi.ndim == 2 and not hasattr(data, "xi") and np.ndim(data) == 1:
        xi = xi.T
    K, n = xi.shape
    if K < 2:
        raise ValueError("need at least two samples for moment estimates")
    mu0 = xi.mean(axis=0)
    C = xi - mu0
    S = C.T @ C / (K - 1)
    tr = float(np.trace(S))
    ridge = MOMENT_RIDGE * (tr / n if tr > 0 else 1.0)
    return MomentAmbiguity(mu0, S + ridge * np.eye(n), gamma1, gamma2)


def _kl_objective(z, eps, d):
    # expm1 keeps the numerator accurate when d is tiny and z is near 1
    return math.expm1((1.0 - eps) * math.log(z) - d) / (z - 1.0)


def kl_adjusted_eps(eps: float, d: float) -> float:
    """Risk level of the nominal constraint equivalent to a KL-ball DRCC.

    ``eps' = 1 - inf_{z in (0,1)} (exp(-d) z^(1-eps) - 1) / (z - 1)``,
    clipped at zero.  At ``d = 0`` this returns ``eps``.
    """
    if not 0 < eps < 1:
        raise ValueError("eps must lie in (0, 1)")
    if not d >= 0:
        raise ValueError("d must be nonnegative")
    if d == 0:
        # infimum is the z -> 1 limit, 1 - eps
        return float(eps)
    # coarse logit-spaced scan to bracket the minimizer, then bounded Brent
    u = np.linspace(-30.0, 30.0, 601)
    z = 1.0 / (1.0 + np.exp(-u))
    z = z[(z > 0) & (z < 1)]
    vals = np.array([_kl_objective(v, eps, d) for v in z])
    k = int(np.argmin(vals))
    lo = z[max(k - 1, 0)] if k > 0 else 0.0
    hi = z[min(k + 1, len(z) - 1)] if k < len(z) - 1 else 1.0
    best_z, best = z[k], vals[k]
    if hi > lo:
        res = so.minimize_scalar(lambda v: _kl_objective(v, eps, d), bounds=(max(lo, 1e-300), min(hi, 1 - 1e-16)),
                                 method="bounded", options={"xatol": 1e-12, "maxiter": 500})
        if res.fun < best:
            best_z, best = res.x, res.fun
    # endpoint limits: z -> 0 gives 1; z -> 1 diverges for d > 0
    best = min(best, 1.0)
    # the d = 0 objective is bounded below by 1 - eps and grows with d
    return min(max(1.0 - float(best), 0.0), float(eps))


def canonicalize(i: int, map: VariableMap, chance: ChanceSpec, delta: float | None = None):
    """Upper and lower canonical constraints of row ``i`` over ``xi = (x, y_i)``."""
    n_x = map.n_x
    t = chance.delta_of(i) if delta is None else float(delta)
    eps = chance.eps_of(i)
    s0 = np.zeros(n_x + 1)
    s0[-1] = 1.0
    S = np.vstack([-np.eye(n_x), np.zeros((1, n_x))])
    upper = CanonicalConstraint(s0, S, t, eps, +1)
    lower = CanonicalConstraint(-s0, -S, t, eps, -1)
    return upper, lower


def row_xi(data, i: int) -> np.ndarray:
    return np.hstack([data.X, data.Y[:, [i]]])


def chosen_index(data, rule="nearest-mean") -> int:
    """Index of the chosen operating point (nearest to the sample mean of ``xi``; ties to the lowest)."""
    if isinstance(rule, (int, np.integer)):
        c = int(rule)
        if not 0 <= c < data.K:
            raise ValueError(f"chosen index {c} outside [0, {data.K})")
        return c
    if rule != "nearest-mean":
        raise ValueError(f"unknown chosen-point rule {rule!r}")
    xi = data.xi
    dist = np.linalg.norm(xi - xi.mean(axis=0), axis=1)
    return int(np.argmin(dist))


def moment_ambiguity(data, config: TrainingConfig, moments: MomentAmbiguity | None = None) -> MomentAmbiguity:
    if moments is not None:
        return moments
    amb = config.ambiguity
    if isinstance(amb, MomentAmbiguity):
        return amb
    g1, g2 = amb
    return empirical_moments(data, g1, g2)


# ---------------------------------------------------------------------------
# M1: moment-based SDP


def _sym_trace_coef(S: np.ndarray) -> np.ndarray:
    """Coefficients of ``S . G`` over the upper-triangle entries of symmetric ``G``."""
    iu = np.triu_indices(len(S))
    return np.where(iu[0] == iu[1], 1.0, 2.0) * S[iu]


def _sqrt_psd(S: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh(0.5 * (S + S.T))
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


def _add_side(b: ProblemBuilder, tag: str, con: CanonicalConstraint, amb: MomentAmbiguity, a_idx,
              delta_idx=None, whiten: bool = True, compress: bool = True):
    """Dual certificate of one robust chance constraint.

    With ``whiten`` the blocks are written for ``zeta`` where
    ``xi = mu0 + Sigma0^(1/2) zeta``: the nominal moments become ``(0, I)``
    and ``s`` becomes ``Sigma0^(1/2) s``, which keeps the multipliers on a
    common scale when ``Sigma0`` is nearly singular.  With ``compress`` the
    whitened vector is further projected onto the span that ``s`` can reach;
    a projection of the moment set is a moment set of the same kind, and the
    constraint only sees that projection, so nothing is lost.
    """
    if whiten:
        R = _sqrt_psd(amb.Sigma0)
        s0w, Sw = R @ con.s0, R @ con.S
        if compress:
            M = np.column_stack([s0w, Sw])
            U, sv, _ = np.linalg.svd(M, full_matrices=False)
            k = max(int(np.sum(sv > 1e-12 * max(sv[0], 1e-300))), 1)
            s0w, Sw = U[:, :k].T @ s0w, U[:, :k].T @ Sw
        n = len(s0w)
        Sigma_w = np.eye(n)
    else:
        n = len(amb.mu0)
        s0w, Sw, Sigma_w = con.s0, con.S, amb.Sigma0
    iu = np.triu_indices(n)
    # with gamma1 = 0 the mean is pinned: the infimum of Sigma.H + gamma1 beta over the third LMI is 0
    # but is only approached as beta -> inf, so that block is dropped (the closure of the feasible set)
    pinned = amb.gamma1 == 0
    G = b.add_vars(f"G{tag}", len(iu[0]))
    H = None if pinned else b.add_vars(f"H{tag}", len(iu[0]))
    alpha = b.add_vars(f"alpha{tag}", n)
    l, lam = b.add_vars(f"scal{tag}", 2)
    beta = None if pinned else b.add_vars(f"beta{tag}", 1)[0]
    # the mean enters only through s'mu0, which is the same in both coordinates
    shift0 = float(con.s0 @ amb.mu0)
    shift = con.S.T @ amb.mu0

    # [[G, -alpha], [-alpha', 1 - l]]
    base_var = np.concatenate([G, alpha, [l]])
    base_row = np.concatenate([iu[0], np.arange(n), [n]])
    base_col = np.concatenate([iu[1], np.full(n, n), [n]])
    base_val = np.concatenate([np.ones(len(G)), -np.ones(n), [-1.0]])
    const = np.zeros((n + 1, n + 1))
    const[n, n] = 1.0
    b.add_lmi(n + 1, const, base_var, base_row, base_col, base_val, name=f"lmi2{tag}")

    # the same block minus [[0, s/2], [s'/2, lam + s'mu0 - t]], s = s0 + S a
    const1 = const.copy()
    const1[:n, n] = const1[n, :n] = -0.5 * s0w
    const1[n, n] += -shift0 + con.t
    rows = np.nonzero(Sw)
    nz = np.nonzero(shift)[0]
    var1 = [base_var, a_idx[rows[1]], [lam], a_idx[nz]]
    row1 = [base_row, rows[0], [n], np.full(len(nz), n)]
    col1 = [base_col, np.full(len(rows[0]), n), [n], np.full(len(nz), n)]
    val1 = [base_val, -0.5 * Sw[rows], [-1.0], -shift[nz]]
    if delta_idx is not None:
        var1.append([delta_idx])
        row1.append([n])
        col1.append([n])
        val1.append([1.0])
    b.add_lmi(n + 1, const1, np.concatenate(var1), np.concatenate(row1), np.concatenate(col1),
              np.concatenate(val1), name=f"lmi1{tag}")

    sc = _sym_trace_coef(Sigma_w)
    keep = sc != 0
    idx = [[lam], G[keep], [l]]
    coef = [[con.eps], -amb.gamma2 * sc[keep], [1.0]]
    if not pinned:
        # [[H, alpha], [alpha', beta]]
        b.add_lmi(n + 1, np.zeros((n + 1, n + 1)),
                  np.concatenate([H, alpha, [beta]]),
                  np.concatenate([iu[0], np.arange(n), [n]]),
                  np.concatenate([iu[1], np.full(n, n), [n]]),
                  np.ones(len(H) + n + 1), name=f"lmi3{tag}")
        idx += [H[keep], [beta]]
        coef += [-sc[keep], [-amb.gamma1]]
    # eps*lam - gamma2 Sigma0.G - 1 + l - Sigma0.H - gamma1 beta >= 0
    b.add_linear(-1.0, np.concatenate(idx), np.concatenate(coef))
    b.add_linear(0.0, [lam], [1.0])


def _tiebreak_factor(X, y):
    """``L, v`` with ``||L a - v||^2 = (||y - X a||^2 + rho ||a||^2) / K - const``."""
    K, n = X.shape
    rho = effective_ridge(X)
    try:
        L = np.linalg.cholesky((X.T @ X + rho * np.eye(n)) / K).T
    except np.linalg.LinAlgError:
        # numerically singular although no column was flagged: fall back to the floor
        rho = ridge_weight(X)
        L = np.linalg.cholesky((X.T @ X + rho * np.eye(n)) / K).T
    v = np.linalg.solve(L.T, X.T @ y / K)
    return L, v


def _add_norm_epigraph(b: ProblemBuilder, L, v, a_idx, name="q"):
    """``q >= ||L a - v||`` as the arrow LMI ``[[q I, L a - v], [., q]] >= 0``; returns q's index."""
    q = b.add_vars(name, 1, shared=True)[0]
    r = L.shape[0]
    rr, cc = np.nonzero(L)
    var = np.concatenate([np.full(r + 1, q), a_idx[cc]])
    row = np.concatenate([np.arange(r + 1), rr])
    col = np.concatenate([np.arange(r + 1), np.full(len(rr), r)])
    val = np.concatenate([np.ones(r + 1), L[rr, cc]])
    const = np.zeros((r + 1, r + 1))
    const[:r, r] = const[r, :r] = -v
    b.add_lmi(r + 1, const, var, row, col, val, name=f"epi_{name}")
    b.set_objective([q], [1.0])
    return q


def coefficient_frame(X: np.ndarray, y: np.ndarray, rtol: float = 1e-9):
    """Reference fit, residual scale and search directions for one row.

    Returns ``(a_ref, sigma, T)`` where ``a_ref`` is the minimum-norm
    least-squares row, ``sigma`` its residual RMS (floored relative to the
    spread of ``y``) and ``T = V S^-1`` over the row space of
    ``X / sqrt(K) = U S V'``.  Writing ``a = a_ref + sigma T w`` moves the
    in-sample residual RMS by exactly ``sigma ||w||``.  Directions outside
    the row space change no prediction and only add ridge terms, so the
    optimum has no component there.
    """
    K = X.shape[0]
    _, sv, Vt = np.linalg.svd(X / math.sqrt(K), full_matrices=False)
    r = int(np.sum(sv > rtol * sv[0])) if len(sv) and sv[0] > 0 else 0
    if r == 0:
        raise ValueError("all regressors are zero")
    T = Vt[:r].T / sv[:r]
    a_ref = Vt[:r].T @ ((Vt[:r] @ (X.T @ y / K)) / sv[:r] ** 2)
    res = y - X @ a_ref
    sigma = max(float(np.sqrt(np.mean(res * res))), 1e-6 * float(np.std(y)), 1e-12)
    return a_ref, sigma, T


def row_coefficients(p: ConicProblem, y: np.ndarray) -> np.ndarray:
    """Map an assembled M1 solution back to the row coefficients ``a``."""
    return p.a_ref + p.a_map @ y[p.groups["w"]]


def assemble_m1(i: int, data, config: TrainingConfig, *, delta: float | None = None,
                moments: MomentAmbiguity | None = None, objective: str = "chosen",
                chosen_bound: float | None = None, whiten: bool = True,
                compress: bool = True, fixed_a=None) -> ConicProblem:
    """SDP for row ``i``: moment-robust chance constraints on both sides.

    ``objective``:

    * ``"chosen"``: minimize ``t`` with ``[[1, e], [e, t]] >= 0`` and
      ``e = y_i^c - a @ x^c`` (the chosen-point squared error);
    * ``"delta-min"``: ``delta`` becomes a variable and is minimized;
    * ``"tiebreak"``: minimize the training least-squares norm subject to
      ``|e| <= chosen_bound`` (``chosen_bound == 0`` imposes ``e = 0``).

    The row is searched as ``a = a_ref + sigma T w`` (see
    :func:`coefficient_frame`); residual quantities (``e``, ``t``,
    ``delta`` and the norm epigraph) are measured in units of ``sigma``,
    recorded as ``p.scale``.  :func:`row_coefficients` recovers ``a``.

    ``fixed_a`` pins the row to a given vector, turning the problem into a
    feasibility check of that model (its predictions must be reachable
    from the data, i.e. ``fixed_a - a_ref`` must lie in the row space).
    """
    vmap = data.map
    n_x = vmap.n_x
    n = n_x + 1
    if n + 1 > config.max_lmi:
        raise ValueError(f"row {i}: LMI order {n + 1} exceeds the cap {config.max_lmi}; "
                         "the KL route (M2) scales to this size")
    X, y = data.X, data.Y[:, i]
    amb_full = moment_ambiguity(data, config, moments)
    amb = amb_full.marginal(np.r_[np.arange(n_x), n_x + i])
    a_ref, sig, T = coefficient_frame(X, y)
    # rows the data predict exactly (e.g. idle branches) are scaled by the ridge-level spread instead
    s_ref = np.r_[-a_ref, 1.0]
    sig = max(sig, math.sqrt(max(float(s_ref @ amb.Sigma0 @ s_ref), 0.0)))
    if fixed_a is not None:
        # a pinned model is best measured by its own residual spread
        s_fix = np.r_[-np.asarray(fixed_a, dtype=float), 1.0]
        sig = max(sig, math.sqrt(max(float(s_fix @ amb.Sigma0 @ s_fix), 0.0)))
    t_scaled = (delta if delta is not None else 0.0) / sig
    sides = []
    for con in canonicalize(i, vmap, config.chance, delta=1.0):
        # s(a) = s0 + S a_ref + sigma S T w, divided through by sigma
        sides.append(CanonicalConstraint((con.s0 + con.S @ a_ref) / sig, con.S @ T, t_scaled, con.eps, con.side))

    b = ProblemBuilder(name=f"m1-row{i}-{objective}")
    w_idx = b.add_vars("w", T.shape[1], shared=True)
    delta_idx = None
    if objective == "delta-min":
        delta_idx = b.add_vars("delta", 1, shared=True)[0]
        b.set_objective([delta_idx], [1.0])
    elif delta is None:
        raise ValueError("delta is required unless objective='delta-min'")

    c = chosen_index(data, config.chosen)
    # e / sigma = (y_c - x_c a_ref) / sigma - x_c T w
    xc = T.T @ X[c]
    rc = (y[c] - X[c] @ a_ref) / sig
    if objective == "chosen":
        t, e = b.add_vars("t", 1, shared=True)[0], b.add_vars("e", 1, shared=True)[0]
        const = np.array([[1.0, 0.0], [0.0, 0.0]])
        b.add_lmi(2, const, [e, t], [0, 1], [1, 1], [1.0, 1.0], name="chosen")
        b.add_equality(rc, np.concatenate([[e], w_idx]), np.concatenate([[1.0], xc]))
        b.set_objective([t], [1.0])
    elif objective == "tiebreak":
        L, v = _tiebreak_factor(X, y)
        _add_norm_epigraph(b, L @ T, (v - L @ a_ref) / sig, w_idx)
        e = b.add_vars("e", 1, shared=True)[0]
        b.add_equality(rc, np.concatenate([[e], w_idx]), np.concatenate([[1.0], xc]))
        if chosen_bound is None or chosen_bound <= 0:
            b.add_equality(0.0, [e], [1.0])
        else:
            b.add_linear(chosen_bound / sig, [e], [-1.0])
            b.add_linear(chosen_bound / sig, [e], [1.0])
    elif objective != "delta-min":
        raise ValueError(f"unknown objective {objective!r}")

    if fixed_a is not None:
        da = np.asarray(fixed_a, dtype=float) - a_ref
        w_fix = np.linalg.lstsq(sig * T, da, rcond=None)[0]
        if np.linalg.norm(sig * T @ w_fix - da) > 1e-9 * (1 + np.linalg.norm(da)):
            raise ValueError("fixed_a differs from the data fit outside the regressors' row space")
        for j, wj in zip(w_idx, w_fix):
            b.add_equality(float(wj), [j], [1.0])

    _add_side(b, "+", sides[0], amb, w_idx, delta_idx, whiten, compress)
    _add_side(b, "-", sides[1], amb, w_idx, delta_idx, whiten, compress)
    p = b.build()
    p.chosen = c
    p.a_ref = a_ref
    p.a_map = sig * T
    p.scale = sig
    p.row = i
    return p


def extract_dual_block(p: ConicProblem, y: np.ndarray, tag: str) -> SdpDualBlock:
    """Multipliers of one side, in the (whitened, compressed) coordinates the blocks were written in."""
    n = len(p.groups[f"alpha{tag}"])
    iu = np.triu_indices(n)

    def sym(idx):
        M = np.zeros((n, n))
        M[iu] = y[idx]
        return M + np.triu(M, 1).T

    l, lam = y[p.groups[f"scal{tag}"]]
    pinned = f"H{tag}" not in p.groups
    H = np.zeros((n, n)) if pinned else sym(p.groups[f"H{tag}"])
    beta = 0.0 if pinned else float(y[p.groups[f"beta{tag}"]][0])
    return SdpDualBlock(sym(p.groups[f"G{tag}"]), H, float(l), beta, float(lam), y[p.groups[f"alpha{tag}"]].copy())


def moment_bound(a, amb: MomentAmbiguity, eps: float, side: int = +1) -> float:
    """Closed-form worst-case ``(1-eps)`` quantile of ``s @ xi`` over the moment set.

    ``s' mu0 + k ||Sigma0^(1/2) s||`` with ``k = sqrt(g1) + sqrt((1-eps)(g2-g1)/eps)``
    when ``g1/g2 <= eps`` and ``k = sqrt(g2/eps)`` otherwise.
    """
    a = np.asarray(a, dtype=float)
    s = side * np.r_[-a, 1.0]
    g1, g2 = amb.gamma1, amb.gamma2
    if g1 / g2 <= eps:
        k = math.sqrt(g1) + math.sqrt((1 - eps) * (g2 - g1) / eps)
    else:
        k = math.sqrt(g2 / eps)
    return float(s @ amb.mu0 + k * math.sqrt(max(s @ amb.Sigma0 @ s, 0.0)))


# ---------------------------------------------------------------------------
# M2: KL route under the empirical reference distribution


def violation_budget(eps_prime: float, K: int) -> int:
    return int(math.floor(eps_prime * K + 1e-12))


def _box(a_ls):
    half = 10.0 * (1.0 + float(np.max(np.abs(a_ls))) if len(a_ls) else 1.0)
    return a_ls - half, a_ls + half


def assemble_m2(i: int, data, config: TrainingConfig, *, delta: float, eps_prime: float | None = None,
                a_ls: np.ndarray | None = None, objective: str = "chosen",
                chosen_bound: float = 0.0) -> CardinalityProblem:
    """Chosen-point regression for row ``i`` with at most ``floor(eps'K)`` violators per side."""
    K = data.K
    X, y = data.X, data.Y[:, i]
    if eps_prime is None:
        eps_prime = kl_adjusted_eps(config.chance.eps_of(i), config.ambiguity.d)
    m = violation_budget(eps_prime, K)
    if a_ls is None:
        a_ls = train_ls(data).A[i]
    lb, ub = _box(a_ls)
    half = ub - a_ls
    # |y_k - a x_k| over the box is at most |r_ls_k| + half . |x_k|
    r_ls = y - X @ a_ls
    big_m = float(np.max(np.abs(r_ls) + np.abs(X) @ half)) + delta
    c = chosen_index(data, config.chosen)
    xc, yc = X[c], y[c]
    if objective == "chosen":
        P, q, r0 = np.outer(xc, xc), -2.0 * yc * xc, yc * yc
        side = None
    elif objective == "tiebreak":
        rho = effective_ridge(X)
        P = (X.T @ X + rho * np.eye(X.shape[1])) / K
        q = -2.0 * X.T @ y / K
        r0 = float(y @ y) / K
        side = xc
    else:
        raise ValueError(f"unknown objective {objective!r}")
    prob = CardinalityProblem(P, q, r0, X, y, delta, m, big_m, lb, ub,
                              side_coef=side, side_rhs=yc, side_tol=chosen_bound, name=f"m2-row{i}-{objective}")
    prob.chosen = c
    prob.eps_prime = eps_prime
    return prob


# ---------------------------------------------------------------------------
# training


def auto_delta(r_ls: np.ndarray) -> float:
    """``1.5 x`` the 95th percentile of absolute LS residuals of one row."""
    return AUTO_DELTA_FACTOR * float(np.quantile(np.abs(r_ls), AUTO_DELTA_QUANTILE))


def _m2_min_delta(r_ls: np.ndarray, m: int) -> float:
    """Smallest delta at which the LS row itself meets the per-side budget."""
    up = np.sort(np.maximum(r_ls, 0.0))[::-1]
    lo = np.sort(np.maximum(-r_ls, 0.0))[::-1]
    k = min(m, len(r_ls) - 1)
    return float(max(up[k], lo[k]))


def _solve_checked(p, config, what):
    opts = {}
    if config.backend == "ipm":
        opts = {"tol": config.sdp_tol, "feas_tol": config.feas_tol,
                "max_dim": max(DEFAULT_MAX_DIM, p.lmi_dimension)}
    sol = solve_sdp(p, backend=config.backend, **opts)
    log.debug("%s SDP %s: %s", what, p.name, sol.status)
    return sol


def row_delta(i: int, data, config: TrainingConfig, r_ls: np.ndarray, *, amb: MomentAmbiguity | None = None,
              eps_prime: float | None = None, stats: dict | None = None) -> float:
    """Error bound used for row ``i``: the configured value, or the automatic rule.

    The automatic rule takes ``1.5 x`` the 95th percentile of ``|r_LS|`` and
    raises it to ``(1 + delta_margin)`` times the smallest feasible bound
    when that is larger.  For M1 the floor is the optimum of the
    ``delta-min`` SDP; for M2 it is the bound the LS row itself meets
    within the violation budget.
    """
    stats = {} if stats is None else stats
    if not isinstance(config.chance.delta, str):
        return config.chance.delta_of(i)
    delta = max(auto_delta(r_ls), config.delta_floor)
    if config.method == "M1":
        dm = assemble_m1(i, data, config, moments=amb, objective="delta-min")
        sol = _solve_checked(dm, config, "delta-min")
        # a verified feasible point over-estimates the floor, which is the safe side
        if sol.status != "optimal" and not sol.certificates.get("passed", False):
            raise SolverFailure(f"row {i}: delta-floor SDP ended with status {sol.status}")
        floor = dm.scale * float(sol.x[dm.groups["delta"]][0])
    else:
        if eps_prime is None:
            eps_prime = kl_adjusted_eps(config.chance.eps_of(i), config.ambiguity.d)
        floor = _m2_min_delta(r_ls, violation_budget(eps_prime, len(r_ls)))
    stats["delta_floor"] = floor
    if (1 + config.delta_margin) * floor > delta:
        stats["delta_rule"] = "feasibility"
        return (1 + config.delta_margin) * floor
    stats["delta_rule"] = "quantile"
    return delta


def _train_row_m1(i, data, config, delta, amb, stats):
    p = assemble_m1(i, data, config, delta=delta, moments=amb, objective="chosen")
    # An optimal chosen-point error of zero is certified by any feasible model with e = 0,
    # so the tie-break problem is tried first and the chosen-point SDP only runs if it fails.
    q = assemble_m1(i, data, config, delta=delta, moments=amb, objective="tiebreak", chosen_bound=0.0)
    sol = _solve_checked(q, config, "tiebreak")
    stage1 = None
    if sol.status != "optimal":
        stage1 = _solve_checked(p, config, "chosen")
        if stage1.status == "infeasible":
            raise InfeasibleRowError(i, f"moment-robust constraints infeasible at delta={delta:.4g}; "
                                        "increase delta or eps")
        if stage1.status != "optimal":
            # any verified feasible point still gives a valid bound for the tie-break
            if not stage1.certificates.get("passed", False):
                raise SolverFailure(f"row {i}: chosen-point SDP ended with status {stage1.status}")
            stats["chosen_stage"] = f"bound from verified {stage1.status} iterate"
        a1 = row_coefficients(p, stage1.x)
        bound = abs(float(data.Y[p.chosen, i] - data.X[p.chosen] @ a1))
        q = assemble_m1(i, data, config, delta=delta, moments=amb, objective="tiebreak",
                        chosen_bound=bound * (1 + 1e-6) + 1e-9 * p.scale)
        sol = _solve_checked(q, config, "tiebreak")
        if sol.status != "optimal":
            sol, q = stage1, p
    cert = verify(q, sol)
    if not cert["passed"]:
        raise SolverFailure(f"row {i}: M1 solution failed verification: {cert['failures']}")
    a = row_coefficients(q, sol.x)
    r_c = float(data.Y[p.chosen, i] - data.X[p.chosen] @ a)
    stats.update(iterations=sol.iterations + (stage1.iterations if stage1 else 0),
                 min_lmi_eig=cert["min_lmi_eig"], min_lin_slack=cert["min_lin_slack"],
                 time=sol.info["time"] + (stage1.info["time"] if stage1 else 0.0))
    return a, r_c * r_c, q, sol


def _train_row_m2(i, data, config, delta, eps_prime, a_ls, stats):
    p = assemble_m2(i, data, config, delta=delta, eps_prime=eps_prime, a_ls=a_ls, objective="chosen")
    s1 = solve_cardinality(p, mode=config.cardinality_mode)
    if s1.status == "infeasible":
        raise InfeasibleRowError(i, f"no model meets the violation budget at delta={delta:.4g}; "
                                    "increase delta or eps")
    if not s1.ok:
        raise SolverFailure(f"row {i}: cardinality solver ended with status {s1.status}")
    chosen_err = abs(float(p.y[p.chosen] - p.X[p.chosen] @ s1.x))
    bound = 0.0 if chosen_err <= 1e-10 else chosen_err * (1 + 1e-6) + 1e-12
    q = assemble_m2(i, data, config, delta=delta, eps_prime=eps_prime, a_ls=a_ls, objective="tiebreak",
                    chosen_bound=bound)
    s2 = solve_cardinality(q, mode=config.cardinality_mode, warm_start=s1.x)
    sol, prob = (s2, q) if s2.ok else (s1, p)
    cert = verify(prob, sol)
    if not cert["passed"]:
        raise SolverFailure(f"row {i}: M2 solution failed verification: {cert['failures']}")
    a = sol.x
    r_c = float(p.y[p.chosen] - p.X[p.chosen] @ a)
    stats.update(budget=p.budget, violations_upper=cert["violations_upper"],
                 violations_lower=cert["violations_lower"], status=sol.status,
                 time=s1.info.get("time", 0.0) + s2.info.get("time", 0.0))
    return a, r_c * r_c


def train_rdlpf(data, map: VariableMap | None = None, config: TrainingConfig | None = None) -> LinearPFModel:
    """Train an RD-LPF model row by row with the M1 (moment SDP) or M2 (KL) route."""
    config = config or TrainingConfig()
    vmap = map or data.map
    if vmap is None:
        raise ValueError("a variable map is required")
    if data.map is None:
        data = type(data)(data.X, data.Y, vmap, dict(getattr(data, "meta", {})))
    t0 = time.perf_counter()
    ls = train_ls(data, vmap)
    R_ls = data.Y - data.X @ ls.A.T
    rows = range(vmap.n_y) if config.rows is None else list(config.rows)
    A = ls.A.copy()
    fired = []
    prov_rows = []
    c = chosen_index(data, config.chosen)
    if config.chosen == "nearest-mean":
        fired.append("chosen=nearest-mean")
    auto = isinstance(config.chance.delta, str)
    if auto:
        fired.append(f"delta=max({AUTO_DELTA_FACTOR}*q{int(AUTO_DELTA_QUANTILE * 100)}|r_LS|, "
                     f"(1+{config.delta_margin})*feasibility floor)")

    if np.ndim(config.chance.eps) == 0 and config.chance.eps == DEFAULT_EPS:
        fired.append(f"eps={DEFAULT_EPS}")
    if config.method == "M1" and isinstance(config.ambiguity, tuple) and \
            tuple(config.ambiguity) == (DEFAULT_GAMMA1, DEFAULT_GAMMA2):
        fired.append(f"gamma1={DEFAULT_GAMMA1}, gamma2={DEFAULT_GAMMA2}")
    if config.method == "M2" and config.ambiguity.d == DEFAULT_KL_D:
        fired.append(f"d={DEFAULT_KL_D}")

    amb = None
    eps_prime = {}
    if config.method == "M1":
        amb = moment_ambiguity(data, config)
        amb_info = {"gamma1": amb.gamma1, "gamma2": amb.gamma2, "moment_ridge": MOMENT_RIDGE}
    else:
        amb_info = {"d": config.ambiguity.d}

    for i in rows:
        stats: dict = {"row": int(i)}
        eps_i = config.chance.eps_of(i)
        if config.method == "M2":
            eps_prime[i] = kl_adjusted_eps(eps_i, config.ambiguity.d)
        delta = row_delta(i, data, config, R_ls[:, i], amb=amb, eps_prime=eps_prime.get(i), stats=stats)
        stats["delta"] = delta
        stats["eps"] = eps_i
        if config.method == "M1":
            a, obj, _, _ = _train_row_m1(i, data, config, delta, amb, stats)
        else:
            stats["eps_prime_plus"] = eps_prime[i]
            a, obj = _train_row_m2(i, data, config, delta, eps_prime[i], ls.A[i], stats)
        stats["chosen_objective"] = obj
        A[i] = a
        prov_rows.append(stats)
        log.debug("row %d: %s", i, stats)

    prov = {
        "method": config.method,
        "chosen_index": c,
        "eps": config.chance.eps if np.ndim(config.chance.eps) == 0 else list(np.ravel(config.chance.eps)),
        "delta": "auto" if auto else np.ravel(config.chance.delta).tolist(),
        "ambiguity": amb_info,
        "two_sided": "each side at eps (union bound gives 2 eps)",
        "defaults_fired": fired,
        "solver": {"backend": config.backend, "sdp_tol": config.sdp_tol, "feas_tol": config.feas_tol,
                   "cardinality_mode": config.cardinality_mode},
        "rows": prov_rows,
        "trained_rows": [int(r) for r in rows],
        "time": time.perf_counter() - t0,
        "training": dict(getattr(data, "meta", {}) or {}),
    }
    if config.method == "M2":
        prov["eps_prime_plus"] = kl_adjusted_eps(float(np.max(config.chance.eps)), config.ambiguity.d)
    return LinearPFModel(A, np.zeros(vmap.n_y), vmap, prov)
