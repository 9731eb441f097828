"""Generic linear power flow model ``y = A x + b`` and its least-squares trainer.

``x`` stacks the active then reactive injections of every non-slack bus and
``y`` stacks the from-end active then reactive flows of every in-service
branch (optionally the to-end flows as well).
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)

RIDGE_FLOOR = 1e-10


class RankDeficiencyError(ValueError):
    pass


@dataclass(frozen=True)
class VariableMap:
    x_layout: tuple[tuple[int, str], ...]
    y_layout: tuple[tuple[int, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "x_layout", tuple((int(a), str(b)) for a, b in self.x_layout))
        object.__setattr__(self, "y_layout", tuple((int(a), str(b)) for a, b in self.y_layout))
        if len(set(self.x_layout)) != len(self.x_layout) or len(set(self.y_layout)) != len(self.y_layout):
            raise ValueError("variable map contains duplicate entries")
        for _, q in self.x_layout:
            if q not in ("P", "Q"):
                raise ValueError(f"unknown x quantity {q!r}")
        for _, q in self.y_layout:
            if q not in ("Pf", "Qf", "Pt", "Qt"):
                raise ValueError(f"unknown y quantity {q!r}")

    @property
    def n_x(self) -> int:
        return len(self.x_layout)

    @property
    def n_y(self) -> int:
        return len(self.y_layout)

    @classmethod
    def for_network(cls, net, outputs: str = "from") -> VariableMap:
        """Default layout: non-slack bus P then Q; in-service branch Pf then Qf.

        Bus entries carry bus labels, branch entries carry branch positions.
        ``outputs="both"`` appends Pt and Qt.
        """
        ids = [b.id for k, b in enumerate(net.buses) if k != net.slack]
        x = [(i, "P") for i in ids] + [(i, "Q") for i in ids]
        on = np.flatnonzero(net.in_service).tolist()
        quantities = {"from": ("Pf", "Qf"), "both": ("Pf", "Qf", "Pt", "Qt")}[outputs]
        y = [(k, q) for q in quantities for k in on]
        return cls(tuple(x), tuple(y))

    def x_indices(self, net):
        """Bus positions and a P/Q mask for extracting ``x`` from bus vectors."""
        pos = np.array([net.index[i] for i, _ in self.x_layout], dtype=int)
        is_p = np.array([q == "P" for _, q in self.x_layout])
        return pos, is_p

    def extract(self, net, sol):
        """Build ``(x, y)`` from a power flow solution."""
        pos, is_p = self.x_indices(net)
        x = np.where(is_p, sol.P[pos], sol.Q[pos])
        flows = {"Pf": sol.Pf, "Qf": sol.Qf, "Pt": sol.Pt, "Qt": sol.Qt}
        y = np.array([flows[q][k] for k, q in self.y_layout])
        return x, y

    def to_dict(self) -> dict:
        return {"x": [list(e) for e in self.x_layout], "y": [list(e) for e in self.y_layout]}

    @classmethod
    def from_dict(cls, d) -> VariableMap:
        return cls(tuple(tuple(e) for e in d["x"]), tuple(tuple(e) for e in d["y"]))


@dataclass
class LinearPFModel:
    A: np.ndarray
    b: np.ndarray
    map: VariableMap
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=float)
        self.b = np.asarray(self.b, dtype=float).reshape(-1)
        if self.A.shape != (self.map.n_y, self.map.n_x) or len(self.b) != self.map.n_y:
            raise ValueError(f"model shape {self.A.shape} does not match map ({self.map.n_y}, {self.map.n_x})")
        if not (np.all(np.isfinite(self.A)) and np.all(np.isfinite(self.b))):
            raise ValueError("model contains non-finite entries")

    @property
    def method(self) -> str:
        return self.provenance.get("method", "")

    def to_dict(self) -> dict:
        return {
            "A": self.A.tolist(),
            "b": self.b.tolist(),
            "map": self.map.to_dict(),
            "provenance": self.provenance,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, default=_json_default)

    @classmethod
    def from_dict(cls, d) -> LinearPFModel:
        return cls(np.array(d["A"], dtype=float).reshape(len(d["map"]["y"]), len(d["map"]["x"])),
                   np.array(d["b"], dtype=float), VariableMap.from_dict(d["map"]), d.get("provenance", {}))

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> LinearPFModel:
        return cls.from_dict(json.loads(Path(path).read_text()))


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


@dataclass(frozen=True)
class ErrorIndicator:
    """Per-row error indicator ``r_i`` and its affine counterpart."""

    kind: str = "squared-residual"

    def __post_init__(self):
        if self.kind not in ("squared-residual", "absolute-residual"):
            raise ValueError(f"unknown indicator {self.kind!r}")

    @staticmethod
    def linear(a_i, b_i, x, y_i):
        return y_i - x @ a_i - b_i

    def __call__(self, a_i, b_i, x, y_i):
        r = self.linear(a_i, b_i, x, y_i)
        return r * r if self.kind == "squared-residual" else np.abs(r)


def _arrays(data):
    X = np.asarray(data.X, dtype=float)
    Y = np.asarray(data.Y, dtype=float)
    if X.ndim != 2 or Y.ndim != 2 or X.shape[0] != Y.shape[0]:
        raise ValueError("dataset arrays must be (K, n_x) and (K, n_y)")
    return X, Y


def ridge_weight(X: np.ndarray) -> float:
    """Ridge floor ``1e-10 * trace(X^T X) / n_x``."""
    return RIDGE_FLOOR * float(np.sum(X * X)) / max(X.shape[1], 1)


def effective_ridge(X: np.ndarray) -> float:
    """The ridge floor when the columns of ``X`` are dependent, otherwise zero."""
    return ridge_weight(X) if dependent_columns(X) else 0.0


def dependent_columns(X: np.ndarray, rtol: float = 1e-10) -> list[int]:
    """Columns found linearly dependent on earlier pivots by pivoted QR."""
    if X.size == 0:
        return []
    _, R, piv = sla.qr(X, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    if d.size == 0 or d[0] == 0:
        return list(range(X.shape[1]))
    rank = int(np.sum(d > rtol * d[0]))
    return sorted(int(j) for j in piv[rank:])


def train_ls(data, map: VariableMap | None = None, intercept: bool = False) -> LinearPFModel:
    """Per-row least squares ``a_i = argmin sum_k (y_i^k - a_i x^k)^2``.

    All rows share one QR factorization.  When pivoted QR finds dependent
    columns, the ridge floor is added as ``[X; sqrt(rho) I]`` so the fit is
    the (near) minimum-norm one; full-rank data are fit without it.  With
    ``intercept`` a constant column is appended (and not penalized).
    """
    X, Y = _arrays(data)
    map = map if map is not None else data.map
    K, n = X.shape
    p = n + int(intercept)
    if K < p:
        raise RankDeficiencyError(f"need at least {p} samples to fit {p} coefficients, got {K}")
    rho = ridge_weight(X)
    if rho == 0.0:
        raise RankDeficiencyError(f"all regressor columns are zero; dependent columns {list(range(n))}")
    dep = dependent_columns(X)
    if dep:
        log.info("train_ls: columns %s are dependent; ridge floor %.3g selects the minimum-norm fit", dep, rho)
    else:
        rho = 0.0
    Xa = np.hstack([X, np.ones((K, 1))]) if intercept else X
    pen = np.sqrt(rho) * np.eye(n, p)
    aug = np.vstack([Xa, pen])
    rhs = np.vstack([Y, np.zeros((n, Y.shape[1]))])
    Q, R = sla.qr(aug, mode="economic")
    d = np.abs(np.diag(R))
    if np.min(d) <= 1e-14 * np.max(d):
        raise RankDeficiencyError(f"regressors rank deficient beyond the ridge floor; dependent columns {dep}")
    coef = sla.solve_triangular(R, Q.T @ rhs)
    A = coef[:n].T
    b = coef[n] if intercept else np.zeros(Y.shape[1])
    prov = {
        "method": "LS",
        "intercept": bool(intercept),
        "ridge": rho,
        "dependent_columns": dep,
        "n_samples": K,
        "training": dict(getattr(data, "meta", {}) or {}),
    }
    return LinearPFModel(A, b, map, prov)


_PREDICT_CHUNK = 64


def predict(model: LinearPFModel, x) -> np.ndarray:
    """``y = A x + b`` for one sample (n_x,) or a batch (K, n_x).

    Each output is reduced on its own rather than through a matrix product,
    so a sample's prediction is bit-identical whatever batch it arrives in.
    """
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.map.n_x:
        raise ValueError(f"expected {model.map.n_x} inputs, got {x.shape[-1]}")
    flat = x.reshape(-1, x.shape[-1])
    out = np.empty((len(flat), model.map.n_y))
    for s in range(0, len(flat), _PREDICT_CHUNK):
        out[s:s + _PREDICT_CHUNK] = (flat[s:s + _PREDICT_CHUNK, None, :] * model.A[None]).sum(axis=2)
    return (out + model.b).reshape(x.shape[:-1] + (model.map.n_y,))


def residuals(model: LinearPFModel, data) -> np.ndarray:
    """``N_y x K`` matrix of ``y_i^k - a_i x^k - b_i``."""
    X, Y = _arrays(data)
    if X.shape[1] != model.map.n_x or Y.shape[1] != model.map.n_y:
        raise ValueError("dataset dimensions do not match the model")
    return (Y - predict(model, X)).T


def ls_objective(model: LinearPFModel, data) -> np.ndarray:
    """Per-row sum of squared residuals."""
    R = residuals(model, data)
    return np.sum(R * R, axis=1)
