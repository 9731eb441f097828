"""Backend selection for conic problems.

A backend is any callable ``fn(problem, **options) -> Solution``.  The
in-tree interior-point method is registered as ``"ipm"``; adapters for
external solvers can be added with :func:`register_backend` and picked by
name.  Whatever the backend, :func:`solve_sdp` rechecks the returned point
with :func:`~rdlpf.conic.verify.verify` and never reports ``optimal`` for a
point that fails that check.
"""
from __future__ import annotations

from typing import Callable

from .ipm import interior_point
from .problem import ConicProblem, Solution
from .verify import verify

Backend = Callable[..., Solution]

_BACKENDS: dict[str, Backend] = {"ipm": interior_point}


def register_backend(name: str, fn: Backend, *, replace: bool = False) -> None:
    if not callable(fn):
        raise TypeError("backend must be callable")
    if name in _BACKENDS and not replace:
        raise ValueError(f"backend {name!r} already registered")
    _BACKENDS[name] = fn


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def get_backend(name: str) -> Backend:
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown backend {name!r}; available: {', '.join(available_backends())}") from None


def solve_sdp(p: ConicProblem, *, backend: str = "ipm", certify: bool = True, **options) -> Solution:
    """Solve ``p`` with the named backend and attach a verification certificate.

    With ``certify`` set, an ``optimal`` status whose point fails
    verification is downgraded to ``numerical-failure``; the failing
    certificate stays on the solution for inspection.
    """
    sol = get_backend(backend)(p, **options)
    if certify and sol.status != "infeasible":
        cert = verify(p, sol)
        sol.certificates = cert
        if sol.status == "optimal" and not cert["passed"]:
            sol.status = "numerical-failure"
            sol.info["downgraded"] = cert["failures"]
    sol.info.setdefault("backend", backend)
    return sol
