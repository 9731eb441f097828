"""Problem and solution containers shared by the conic backends.

A :class:`ConicProblem` is stored in inequality form::

    minimize    c @ y
    subject to  F0_b + sum_j y_j F_jb  >= 0   (PSD, one per LMI block b)
                h + G @ y              >= 0   (elementwise)
                E @ y                  == f

Each LMI block keeps its coefficient matrices as sparse upper-triangle
triplets ``(var, i, j, value)`` with ``i <= j``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

STATUSES = ("optimal", "feasible", "infeasible", "iteration-limit", "numerical-failure")


@dataclass
class LMIBlock:
    size: int
    const: np.ndarray
    var: np.ndarray
    row: np.ndarray
    col: np.ndarray
    val: np.ndarray
    name: str = ""

    def __post_init__(self):
        self.const = np.asarray(self.const, dtype=float).reshape(self.size, self.size)
        self.var = np.asarray(self.var, dtype=np.int64)
        self.row = np.asarray(self.row, dtype=np.int64)
        self.col = np.asarray(self.col, dtype=np.int64)
        self.val = np.asarray(self.val, dtype=float)
        if not (len(self.var) == len(self.row) == len(self.col) == len(self.val)):
            raise ValueError(f"block {self.name!r}: triplet arrays differ in length")
        if np.any(self.row > self.col):
            raise ValueError(f"block {self.name!r}: coefficients must be upper-triangle (i <= j)")
        if self.size and np.any(self.col >= self.size):
            raise ValueError(f"block {self.name!r}: index out of range")
        if not np.allclose(self.const, self.const.T, rtol=0, atol=1e-14):
            raise ValueError(f"block {self.name!r}: constant matrix is not symmetric")

    def coefficient(self, j: int) -> np.ndarray:
        """Dense symmetric coefficient matrix of variable ``j``."""
        out = np.zeros((self.size, self.size))
        sel = self.var == j
        np.add.at(out, (self.row[sel], self.col[sel]), self.val[sel])
        off = sel & (self.row != self.col)
        np.add.at(out, (self.col[off], self.row[off]), self.val[off])
        return out

    def evaluate(self, y: np.ndarray) -> np.ndarray:
        """Return ``F0 + sum_j y_j F_j`` as a dense symmetric matrix."""
        out = self.const.copy()
        w = self.val * y[self.var]
        np.add.at(out, (self.row, self.col), w)
        off = self.row != self.col
        np.add.at(out, (self.col[off], self.row[off]), w[off])
        return out


@dataclass
class ConicProblem:
    n_vars: int
    c: np.ndarray
    blocks: list[LMIBlock] = field(default_factory=list)
    lin_coef: sp.csr_matrix | None = None
    lin_const: np.ndarray | None = None
    eq_coef: sp.csr_matrix | None = None
    eq_rhs: np.ndarray | None = None
    groups: dict[str, np.ndarray] = field(default_factory=dict)
    shared: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        m = self.n_vars
        self.c = np.asarray(self.c, dtype=float).reshape(m)
        if self.lin_coef is None:
            self.lin_coef = sp.csr_matrix((0, m))
            self.lin_const = np.zeros(0)
        if self.eq_coef is None:
            self.eq_coef = sp.csr_matrix((0, m))
            self.eq_rhs = np.zeros(0)
        self.lin_coef = sp.csr_matrix(self.lin_coef)
        self.eq_coef = sp.csr_matrix(self.eq_coef)
        self.lin_const = np.asarray(self.lin_const, dtype=float).reshape(-1)
        self.eq_rhs = np.asarray(self.eq_rhs, dtype=float).reshape(-1)
        if self.lin_coef.shape != (len(self.lin_const), m):
            raise ValueError("linear inequality data has inconsistent shape")
        if self.eq_coef.shape != (len(self.eq_rhs), m):
            raise ValueError("equality data has inconsistent shape")
        for b in self.blocks:
            if len(b.var) and (b.var.min() < 0 or b.var.max() >= m):
                raise ValueError(f"block {b.name!r} references an unknown variable")

    @property
    def n_lin(self) -> int:
        return len(self.lin_const)

    @property
    def n_eq(self) -> int:
        return len(self.eq_rhs)

    @property
    def lmi_dimension(self) -> int:
        """Total order of all LMI blocks (the quantity the size cap limits)."""
        return sum(b.size for b in self.blocks)

    def var(self, name: str) -> np.ndarray:
        return self.groups[name]

    def with_equalities_as_inequalities(self) -> ConicProblem:
        """Copy with each equality ``E y = f`` split into two inequalities."""
        if self.n_eq == 0:
            return self
        coef = sp.vstack([self.lin_coef, self.eq_coef, -self.eq_coef]).tocsr()
        const = np.concatenate([self.lin_const, -self.eq_rhs, self.eq_rhs])
        return ConicProblem(self.n_vars, self.c.copy(), list(self.blocks), coef, const,
                            groups=dict(self.groups), shared=self.shared, name=self.name)


class ProblemBuilder:
    """Incremental assembly of a :class:`ConicProblem`.

    Affine expressions are passed as ``(const, {var_index: coef})`` or as
    lists of ``(var_index, coef)`` pairs.
    """

    def __init__(self, name: str = ""):
        self.name = name
        self.n_vars = 0
        self.groups: dict[str, np.ndarray] = {}
        self.c: dict[int, float] = {}
        self.blocks: list[LMIBlock] = []
        self._lin_rows: list[tuple[float, np.ndarray, np.ndarray]] = []
        self._eq_rows: list[tuple[float, np.ndarray, np.ndarray]] = []
        self._shared: list[int] = []

    def add_vars(self, name: str, count: int, shared: bool = False) -> np.ndarray:
        if name in self.groups:
            raise ValueError(f"duplicate variable group {name!r}")
        idx = np.arange(self.n_vars, self.n_vars + count)
        self.n_vars += count
        self.groups[name] = idx
        if shared:
            self._shared.extend(idx.tolist())
        return idx

    def add_sym_vars(self, name: str, n: int) -> np.ndarray:
        """Allocate an ``n x n`` symmetric matrix variable; returns index matrix."""
        count = n * (n + 1) // 2
        flat = self.add_vars(name, count)
        mat = np.empty((n, n), dtype=np.int64)
        iu = np.triu_indices(n)
        mat[iu] = flat
        mat[(iu[1], iu[0])] = flat
        return mat

    def set_objective(self, idx, coef) -> None:
        for j, v in zip(np.atleast_1d(idx), np.broadcast_to(coef, np.shape(np.atleast_1d(idx)))):
            self.c[int(j)] = self.c.get(int(j), 0.0) + float(v)

    def add_lmi(self, size: int, const, var, row, col, val, name: str = "") -> None:
        var = np.asarray(var, dtype=np.int64)
        row = np.asarray(row, dtype=np.int64)
        col = np.asarray(col, dtype=np.int64)
        val = np.asarray(val, dtype=float)
        swap = row > col
        row, col = np.where(swap, col, row), np.where(swap, row, col)
        keep = val != 0.0
        self.blocks.append(LMIBlock(size, const, var[keep], row[keep], col[keep], val[keep], name))

    def add_linear(self, const: float, idx, coef) -> None:
        """Add ``const + sum coef_j y_idx_j >= 0``."""
        self._lin_rows.append((float(const), np.asarray(idx, dtype=np.int64), np.asarray(coef, dtype=float)))

    def add_equality(self, rhs: float, idx, coef) -> None:
        """Add ``sum coef_j y_idx_j == rhs``."""
        self._eq_rows.append((float(rhs), np.asarray(idx, dtype=np.int64), np.asarray(coef, dtype=float)))

    @staticmethod
    def _rows_to_csr(rows, m):
        if not rows:
            return sp.csr_matrix((0, m)), np.zeros(0)
        data, ri, ci, const = [], [], [], []
        for r, (b, idx, coef) in enumerate(rows):
            data.append(coef)
            ci.append(idx)
            ri.append(np.full(len(idx), r))
            const.append(b)
        mat = sp.csr_matrix((np.concatenate(data), (np.concatenate(ri), np.concatenate(ci))), shape=(len(rows), m))
        mat.sum_duplicates()
        return mat, np.array(const)

    def build(self) -> ConicProblem:
        m = self.n_vars
        c = np.zeros(m)
        for j, v in self.c.items():
            c[j] = v
        lin, lin_b = self._rows_to_csr(self._lin_rows, m)
        eq, eq_b = self._rows_to_csr(self._eq_rows, m)
        shared = np.array(sorted(set(self._shared)), dtype=np.int64) if self._shared else None
        return ConicProblem(m, c, list(self.blocks), lin, lin_b, eq, eq_b,
                            groups=dict(self.groups), shared=shared, name=self.name)


@dataclass
class CardinalityProblem:
    """Least-squares regression with a per-side outlier budget.

    Minimize ``a @ P @ a + q @ a + r0`` over ``a`` subject to

    * ``lb <= a <= ub``,
    * ``|side_coef @ a - side_rhs| <= side_tol`` (optional hard band),
    * for each sample ``k``: ``y_k - X_k @ a <= delta`` unless flagged as an
      upper violator, and ``y_k - X_k @ a >= -delta`` unless flagged as a
      lower violator, with at most ``budget`` flags per side.

    ``big_m`` bounds ``|y_k - X_k @ a|`` over the box and is what the
    binary (big-M) formulation uses to switch rows off.
    """

    P: np.ndarray
    q: np.ndarray
    r0: float
    X: np.ndarray
    y: np.ndarray
    delta: float
    budget: int
    big_m: float
    lb: np.ndarray
    ub: np.ndarray
    side_coef: np.ndarray | None = None
    side_rhs: float = 0.0
    side_tol: float = 0.0
    name: str = ""

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        K, n = self.X.shape
        self.P = np.asarray(self.P, dtype=float).reshape(n, n)
        self.q = np.asarray(self.q, dtype=float).reshape(n)
        self.lb = np.broadcast_to(np.asarray(self.lb, dtype=float), (n,)).copy()
        self.ub = np.broadcast_to(np.asarray(self.ub, dtype=float), (n,)).copy()
        if len(self.y) != K:
            raise ValueError("X and y disagree on the sample count")
        if not 0 <= self.budget <= K:
            raise ValueError("violation budget must lie in [0, K]")
        if not np.isfinite(self.big_m):
            raise ValueError("big-M must be finite")
        if self.delta <= 0:
            raise ValueError("delta must be positive")

    @property
    def n_samples(self) -> int:
        return self.X.shape[0]

    @property
    def n_params(self) -> int:
        return self.X.shape[1]

    def objective(self, a: np.ndarray) -> float:
        return float(a @ self.P @ a + self.q @ a + self.r0)

    def residuals(self, a: np.ndarray) -> np.ndarray:
        return self.y - self.X @ a


@dataclass
class Solution:
    x: np.ndarray
    status: str
    objective: float
    dual_objective: float = np.nan
    iterations: int = 0
    certificates: dict = field(default_factory=dict)
    info: dict = field(default_factory=dict)
    dual_lmi: list[np.ndarray] | None = None
    dual_lin: np.ndarray | None = None

    def __post_init__(self):
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")

    @property
    def ok(self) -> bool:
        return self.status in ("optimal", "feasible")
