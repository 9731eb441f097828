"""Solver-independent feasibility checks.

Nothing here reuses the interior-point code: LMI values are rebuilt from
the stored triplets and their smallest eigenvalue comes from the Jacobi
iteration written out below.
"""
from __future__ import annotations

import numpy as np

from .problem import CardinalityProblem, ConicProblem, Solution

LMI_EIG_FLOOR = -1e-6
LIN_SLACK_FLOOR = -1e-8
EQ_TOL = 1e-8


def _round_robin(n: int):
    """Pairings of ``0..n-1`` (n even) so every pair meets once per sweep."""
    players = list(range(n))
    rounds = []
    for _ in range(n - 1):
        rounds.append([(players[k], players[n - 1 - k]) for k in range(n // 2)])
        players = [players[0], players[-1]] + players[1:-1]
    return rounds


def jacobi_eigenvalues(S: np.ndarray, tol: float = 1e-15, max_sweeps: int = 60) -> np.ndarray:
    """Eigenvalues of a symmetric matrix by Jacobi rotations (ascending).

    Rotations are applied in round-robin order, ``n/2`` disjoint pairs at a
    time, so each round is one orthogonal similarity ``J' A J``.
    """
    A = np.array(S, dtype=float)
    A = 0.5 * (A + A.T)
    n0 = len(A)
    if n0 <= 1:
        return np.diag(A).copy()
    n = n0 + (n0 % 2)
    if n != n0:
        # pad with an isolated zero so the pairing is perfect; dropped at the end
        A = np.pad(A, ((0, 1), (0, 1)))
    scale = max(np.abs(A).max(), 1e-300)
    rounds = [(np.array([p for p, _ in r]), np.array([q for _, q in r])) for r in _round_robin(n)]
    for _ in range(max_sweeps):
        if np.sqrt(np.sum(np.triu(A, 1) ** 2)) <= tol * scale:
            break
        for P, Q in rounds:
            apq = A[P, Q]
            app = A[P, P]
            aqq = A[Q, Q]
            active = np.abs(apq) > 1e-300
            theta = np.where(active, (aqq - app) / (2.0 * np.where(active, apq, 1.0)), 0.0)
            t = np.where(theta >= 0, 1.0, -1.0) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
            t = np.where(active, t, 0.0)
            c = 1.0 / np.sqrt(t * t + 1.0)
            s = t * c
            J = np.eye(n)
            J[P, P] = c
            J[Q, Q] = c
            J[P, Q] = s
            J[Q, P] = -s
            A = J.T @ A @ J
            A[P, Q] = A[Q, P] = 0.0
    # a padded coordinate never mixes with the rest (its off-diagonals stay zero)
    return np.sort(np.diag(A)[:n0])


def _verify_conic(p: ConicProblem, y: np.ndarray) -> dict:
    failures = []
    eigs = []
    for b in p.blocks:
        lam = jacobi_eigenvalues(b.evaluate(y))[0] if b.size else np.inf
        eigs.append(float(lam))
        if lam < LMI_EIG_FLOOR:
            failures.append(f"LMI {b.name or len(eigs) - 1}: min eigenvalue {lam:.3g}")
    slack = p.lin_const + p.lin_coef @ y if p.n_lin else np.zeros(0)
    min_slack = float(slack.min()) if len(slack) else np.inf
    if min_slack < LIN_SLACK_FLOOR:
        failures.append(f"scalar inequality slack {min_slack:.3g}")
    eq = p.eq_coef @ y - p.eq_rhs if p.n_eq else np.zeros(0)
    eq_res = float(np.max(np.abs(eq))) if len(eq) else 0.0
    if eq_res > EQ_TOL * (1 + float(np.max(np.abs(p.eq_rhs), initial=0.0))):
        failures.append(f"equality residual {eq_res:.3g}")
    return {
        "passed": not failures,
        "failures": failures,
        "min_lmi_eig": min(eigs) if eigs else np.inf,
        "lmi_eigs": eigs,
        "min_lin_slack": min_slack,
        "eq_residual": eq_res,
        "objective": float(p.c @ y),
    }


def count_violations(p: CardinalityProblem, a: np.ndarray) -> tuple[int, int]:
    """Exact (zero-tolerance) count of upper and lower bound violators."""
    r = p.residuals(a)
    return int(np.sum(r > p.delta)), int(np.sum(r < -p.delta))


def _verify_cardinality(p: CardinalityProblem, a: np.ndarray) -> dict:
    failures = []
    up, lo = count_violations(p, a)
    if up > p.budget or lo > p.budget:
        failures.append(f"violations ({up}, {lo}) exceed budget {p.budget}")
    box = float(max(np.max(p.lb - a), np.max(a - p.ub), 0.0))
    if box > 0:
        failures.append(f"box violated by {box:.3g}")
    side = 0.0
    if p.side_coef is not None:
        side = abs(float(p.side_coef @ a) - p.side_rhs)
        if side > p.side_tol + EQ_TOL * (1 + abs(p.side_rhs)):
            failures.append(f"side constraint violated: |e| = {side:.3g} > {p.side_tol:.3g}")
    return {
        "passed": not failures,
        "failures": failures,
        "violations_upper": up,
        "violations_lower": lo,
        "budget": p.budget,
        "box_violation": box,
        "side_residual": side,
        "objective": p.objective(a),
    }


def verify(problem, solution) -> dict:
    """Recheck a solution against its problem; returns a certificate dict with ``passed``."""
    y = solution.x if isinstance(solution, Solution) else np.asarray(solution, dtype=float)
    if isinstance(problem, CardinalityProblem):
        return _verify_cardinality(problem, y)
    if isinstance(problem, ConicProblem):
        return _verify_conic(problem, y)
    raise TypeError(f"cannot verify {type(problem).__name__}")
