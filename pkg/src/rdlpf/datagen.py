"""Synthetic operating-point datasets from perturbed loads and exact power flow.

Randomness: each sample ``k`` draws from its own ``numpy`` PCG64 stream
seeded with ``SeedSequence(seed, spawn_key=(purpose, tag, k))``, so a sample
does not depend on generation order.  Redraws after a non-convergent
power flow continue on the same stream.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .acpf import DEFAULT_TOL, injections, solve_newton
from .lpfcore import VariableMap
from .netmodel import Network, build_ybus

RNG_NAME = "numpy.random.PCG64 seeded by SeedSequence(seed, spawn_key=(purpose, tag, index))"
PURPOSE_HISTORY = 1
PURPOSE_EVAL = 2


class DataGenerationError(RuntimeError):
    pass


@dataclass(frozen=True)
class Sample:
    x: np.ndarray
    y: np.ndarray


@dataclass
class Dataset:
    X: np.ndarray
    Y: np.ndarray
    map: VariableMap | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))
        if self.X.shape[0] != self.Y.shape[0]:
            raise ValueError("X and Y must have the same number of samples")
        if self.map is not None and (self.X.shape[1] != self.map.n_x or self.Y.shape[1] != self.map.n_y):
            raise ValueError("dataset dimensions disagree with the variable map")

    @property
    def K(self) -> int:
        return self.X.shape[0]

    def __len__(self) -> int:
        return self.K

    @property
    def samples(self) -> list[Sample]:
        return [Sample(x, y) for x, y in zip(self.X, self.Y)]

    @property
    def xi(self) -> np.ndarray:
        """Joint vectors ``(x, y)`` stacked row-wise."""
        return np.hstack([self.X, self.Y])

    def subset(self, idx) -> Dataset:
        return Dataset(self.X[idx], self.Y[idx], self.map, dict(self.meta))


def _stream(seed: int, purpose: int, tag: int, index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(purpose, tag, index))))


def load_buses(net: Network) -> np.ndarray:
    """Positions of buses carrying nonzero load."""
    return np.array([k for k, b in enumerate(net.buses) if b.Pd != 0 or b.Qd != 0], dtype=int)


def _generate(net, count, low, high, scale, seed, purpose, tag, vmap, tol, max_retries):
    vmap = vmap or VariableMap.for_network(net)
    Y_bus = build_ybus(net)
    Pd0 = np.array([b.Pd for b in net.buses])
    Qd0 = np.array([b.Qd for b in net.buses])
    loads = load_buses(net)
    X = np.empty((count, vmap.n_x))
    Y = np.empty((count, vmap.n_y))
    redraws = 0
    for k in range(count):
        rng = _stream(seed, purpose, tag, k)
        for attempt in range(max_retries + 1):
            u = np.ones(net.n_bus)
            u[loads] = scale * rng.uniform(low, high, size=len(loads))
            sol = solve_newton(net, injections(net, Pd0 * u, Qd0 * u), tol=tol, Ybus=Y_bus)
            if sol.converged:
                break
            redraws += 1
        else:
            raise DataGenerationError(f"sample {k}: power flow failed {max_retries + 1} times; "
                                      "the perturbation range is likely infeasible")
        X[k], Y[k] = vmap.extract(net, sol)
    return X, Y, vmap, redraws


def gen_history(net: Network, K: int = 300, pct: float = 0.2, seed: int = 0, *,
                vmap: VariableMap | None = None, tol: float = DEFAULT_TOL, max_retries: int = 20) -> Dataset:
    """Historical samples with independent per-bus load multipliers in ``[1-pct, 1+pct]``.

    Active and reactive load move together (constant power factor); non-slack
    generation stays at its base dispatch.
    """
    if K < 1:
        raise ValueError("K must be at least 1")
    if not 0 <= pct < 1:
        raise ValueError("pct must lie in [0, 1)")
    X, Y, vmap, redraws = _generate(net, K, 1 - pct, 1 + pct, 1.0, seed, PURPOSE_HISTORY, 0,
                                    vmap, tol, max_retries)
    meta = {"case": net.name, "kind": "history", "seed": seed, "K": K, "pct": pct, "level": 1.0,
            "perturbation": "independent per-bus uniform multiplier on (Pd, Qd)",
            "rng": RNG_NAME, "stream": [PURPOSE_HISTORY, 0], "tol": tol, "redraws": redraws}
    return Dataset(X, Y, vmap, meta)


def level_tag(level: float) -> int:
    return int(round(level * 1e6))


def gen_eval_set(net: Network, level: float, M: int = 200, pct_local: float = 0.05, seed: int = 0, *,
                 vmap: VariableMap | None = None, tol: float = DEFAULT_TOL, max_retries: int = 20) -> Dataset:
    """Evaluation samples: loads scaled by ``level`` then jittered per bus by ``pct_local``."""
    if not level > 0:
        raise ValueError("level must be positive")
    if M < 1:
        raise ValueError("M must be at least 1")
    if not 0 <= pct_local < 1:
        raise ValueError("pct_local must lie in [0, 1)")
    X, Y, vmap, redraws = _generate(net, M, 1 - pct_local, 1 + pct_local, level, seed, PURPOSE_EVAL,
                                    level_tag(level), vmap, tol, max_retries)
    meta = {"case": net.name, "kind": "evaluation", "seed": seed, "K": M, "pct": pct_local, "level": level,
            "perturbation": "global level scaling with per-bus uniform jitter on (Pd, Qd)",
            "rng": RNG_NAME, "stream": [PURPOSE_EVAL, level_tag(level)], "tol": tol, "redraws": redraws}
    return Dataset(X, Y, vmap, meta)


def load_multipliers(net: Network, data: Dataset) -> np.ndarray:
    """Recover per-load-bus multipliers from the P entries of ``x`` (K x n_loads)."""
    vmap = data.map or VariableMap.for_network(net)
    pos, is_p = vmap.x_indices(net)
    base = injections(net)
    loads = load_buses(net)
    out = np.full((data.K, len(loads)), np.nan)
    for j, k in enumerate(loads):
        Pd = net.buses[k].Pd
        sel = np.flatnonzero(is_p & (pos == k))
        if len(sel) and Pd != 0:
            Pg = base.P[k] + Pd / net.baseMVA
            out[:, j] = (Pg - data.X[:, sel[0]]) * net.baseMVA / Pd
    return out


# ---------------------------------------------------------------------------
# CSV + meta JSON


def _meta_path(path: Path) -> Path:
    return path.with_name(path.name + ".meta.json") if path.suffix != ".csv" else path.with_suffix(".meta.json")


def save_dataset(data: Dataset, path) -> None:
    """Write ``x_0..x_{n-1},y_0..y_{m-1}`` CSV (round-trip float repr) plus a meta JSON."""
    path = Path(path)
    n, m = data.X.shape[1], data.Y.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x_{i}" for i in range(n)] + [f"y_{i}" for i in range(m)])
        for x, y in zip(data.X, data.Y):
            w.writerow([repr(float(v)) for v in x] + [repr(float(v)) for v in y])
    meta = dict(data.meta)
    if data.map is not None:
        meta["map"] = data.map.to_dict()
    _meta_path(path).write_text(json.dumps(meta, indent=1, sort_keys=True))


def load_dataset(path) -> Dataset:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    nx = sum(1 for h in header if h.startswith("x_"))
    ny = sum(1 for h in header if h.startswith("y_"))
    if nx + ny != len(header):
        raise ValueError(f"{path}: unexpected CSV header")
    vals = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float).reshape(-1, nx + ny)
    meta = {}
    mp = _meta_path(path)
    if mp.exists():
        meta = json.loads(mp.read_text())
    vmap = VariableMap.from_dict(meta.pop("map")) if "map" in meta else None
    return Dataset(vals[:, :nx], vals[:, nx:], vmap, meta)

