"""Full Newton-Raphson AC power flow in polar coordinates.

Reactive limits are not enforced: PV buses stay PV.  The Jacobian is dense
and solved by LU, which is adequate up to a few hundred buses.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .netmodel import Network, branch_admittance, build_ybus

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 20


@dataclass(frozen=True)
class Injections:
    """Net bus injections in p.u. (generation minus load) and voltage setpoints."""

    P: np.ndarray
    Q: np.ndarray
    Vset: np.ndarray

    def __post_init__(self):
        n = len(self.P)
        if len(self.Q) != n or len(self.Vset) != n:
            raise ValueError("injection vectors must all have one entry per bus")


@dataclass
class PFSolution:
    Vm: np.ndarray
    Va: np.ndarray
    Pf: np.ndarray
    Qf: np.ndarray
    Pt: np.ndarray
    Qt: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    converged: bool
    iterations: int
    max_mismatch: float
    message: str = ""
    history: list[float] = field(default_factory=list)

    @property
    def V(self) -> np.ndarray:
        return self.Vm * np.exp(1j * self.Va)

    def to_dict(self) -> dict:
        d = {k: getattr(self, k).tolist() for k in ("Vm", "Va", "Pf", "Qf", "Pt", "Qt", "P", "Q")}
        d.update(converged=self.converged, iterations=self.iterations,
                 max_mismatch=self.max_mismatch, message=self.message)
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1)


def bus_types(net: Network):
    """Return (slack, pv, pq) bus positions.  PV buses without an in-service generator count as PQ."""
    gen_buses = {net.index[g.bus] for g in net.gens if g.status}
    ref = net.slack
    pv = np.array([k for k, b in enumerate(net.buses) if b.kind == "PV" and k in gen_buses], dtype=int)
    pq = np.array([k for k in range(net.n_bus) if k != ref and k not in set(pv.tolist())], dtype=int)
    return ref, pv, pq


def injections(net: Network, Pd=None, Qd=None) -> Injections:
    """Injections for the given bus loads (MW/MVAr, default the case loads) at base generation."""
    n = net.n_bus
    Pd = np.array([b.Pd for b in net.buses]) if Pd is None else np.asarray(Pd, dtype=float)
    Qd = np.array([b.Qd for b in net.buses]) if Qd is None else np.asarray(Qd, dtype=float)
    Pg = np.zeros(n)
    Qg = np.zeros(n)
    Vset = np.array([b.Vm for b in net.buses])
    for g in net.gens:
        if g.status:
            k = net.index[g.bus]
            Pg[k] += g.Pg
            Qg[k] += g.Qg
            Vset[k] = g.Vg
    return Injections((Pg - Pd) / net.baseMVA, (Qg - Qd) / net.baseMVA, Vset)


def _dS_dV(Y, V):
    """Partial derivatives of complex bus injections w.r.t. angle and magnitude (dense)."""
    Ibus = Y @ V
    diagV = np.diag(V)
    diagIc = np.diag(np.conj(Ibus))
    Vnorm = V / np.abs(V)
    dS_dVa = 1j * diagV @ np.conj(np.diag(Ibus) - Y * V[None, :])
    dS_dVm = diagV @ np.conj(Y * Vnorm[None, :]) + diagIc @ np.diag(Vnorm)
    return dS_dVa, dS_dVm


def branch_flows(net: Network, V: np.ndarray):
    """From- and to-end complex branch flows (p.u.); out-of-service branches carry zero."""
    ba = branch_admittance(net)
    Sf = np.zeros(net.n_branch, dtype=complex)
    St = np.zeros(net.n_branch, dtype=complex)
    Vf, Vt = V[ba.f], V[ba.t]
    Sf[ba.branch] = Vf * np.conj(ba.yff * Vf + ba.yft * Vt)
    St[ba.branch] = Vt * np.conj(ba.ytf * Vf + ba.ytt * Vt)
    return Sf, St


def solve_newton(net: Network, inj: Injections | None = None, *, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER, init: str = "flat", Ybus=None) -> PFSolution:
    """Solve the AC power flow for ``inj`` (default: case loads and dispatch).

    ``init="flat"`` starts from Vm = 1 (setpoints at PV/slack buses) and
    Va = 0; ``init="case"`` uses the case's stored voltages.  The iteration
    count includes the final mismatch evaluation, so an already balanced
    start reports one iteration.
    """
    if inj is None:
        inj = injections(net)
    Y = (build_ybus(net) if Ybus is None else Ybus).toarray()
    ref, pv, pq = bus_types(net)
    if init == "flat":
        Vm = np.ones(net.n_bus)
        Va = np.zeros(net.n_bus)
        Va[ref] = np.deg2rad(net.buses[ref].Va)
    elif init == "case":
        Vm = np.array([b.Vm for b in net.buses])
        Va = np.deg2rad([b.Va for b in net.buses])
    else:
        raise ValueError(f"unknown init {init!r}")
    gen_like = np.concatenate([[ref], pv]).astype(int)
    Vm[gen_like] = inj.Vset[gen_like]
    V = Vm * np.exp(1j * Va)
    Sspec = inj.P + 1j * inj.Q
    pvpq = np.concatenate([pv, pq]).astype(int)
    npvpq = len(pvpq)

    history = []
    converged = False
    message = ""
    it = 0
    mis_norm = np.inf
    for it in range(1, max_iter + 1):
        mis = V * np.conj(Y @ V) - Sspec
        F = np.concatenate([mis.real[pvpq], mis.imag[pq]])
        mis_norm = float(np.max(np.abs(F))) if len(F) else 0.0
        history.append(mis_norm)
        if mis_norm <= tol:
            converged = True
            break
        if it == max_iter or not np.isfinite(mis_norm):
            message = "maximum iterations reached" if np.isfinite(mis_norm) else "diverged"
            break
        dVa, dVm = _dS_dV(Y, V)
        J = np.block([
            [dVa[np.ix_(pvpq, pvpq)].real, dVm[np.ix_(pvpq, pq)].real],
            [dVa[np.ix_(pq, pvpq)].imag, dVm[np.ix_(pq, pq)].imag],
        ])
        try:
            lu = sla.lu_factor(J, check_finite=False)
            if np.min(np.abs(np.diag(lu[0]))) < 1e-14 * max(1.0, np.max(np.abs(J))):
                raise sla.LinAlgError
            dx = -sla.lu_solve(lu, F, check_finite=False)
        except (sla.LinAlgError, ValueError):
            message = "singular Jacobian"
            break
        Va[pvpq] += dx[:npvpq]
        Vm[pq] += dx[npvpq:]
        V = Vm * np.exp(1j * Va)
        Vm = np.abs(V)
        Va = np.angle(V)

    Sbus = V * np.conj(Y @ V)
    Sf, St = branch_flows(net, V)
    return PFSolution(np.abs(V), np.angle(V), Sf.real, Sf.imag, St.real, St.imag,
                      Sbus.real, Sbus.imag, converged, it, mis_norm, message, history)
