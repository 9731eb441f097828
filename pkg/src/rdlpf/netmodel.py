"""Transmission network data: MATPOWER-style case parsing and the bus admittance matrix.

Bus order everywhere is file order, slack included.  Branch admittances
follow the MATPOWER pi-model convention with complex tap
``t = tap * exp(j * shift)``::

    Yff = (ys + j b/2) / |t|^2     Yft = -ys / conj(t)
    Ytf = -ys / t                  Ytt = ys + j b/2
"""
from __future__ import annotations

import json
import logging
import re
import warnings
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

BUS_KINDS = {1: "PQ", 2: "PV", 3: "slack"}
_KIND_CODES = {v: k for k, v in BUS_KINDS.items()}

# columns read from each table, and the standard MATPOWER widths (with OPF result columns)
_MIN_COLS = {"bus": 10, "gen": 8, "branch": 11}
_STD_COLS = {"bus": 17, "gen": 25, "branch": 21}
BUNDLED_CASES = ("case14", "case57", "case118")


class CaseFormatError(ValueError):
    """Malformed or invalid case data.  ``code`` names the failed check."""

    def __init__(self, message: str, line: int | None = None, code: str = "format"):
        self.line = line
        self.code = code
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"{message}{where}")


@dataclass(frozen=True)
class BusRecord:
    id: int
    kind: str
    Pd: float = 0.0
    Qd: float = 0.0
    Gs: float = 0.0
    Bs: float = 0.0
    Vm: float = 1.0
    Va: float = 0.0
    baseKV: float = 0.0


@dataclass(frozen=True)
class BranchRecord:
    fbus: int
    tbus: int
    r: float
    x: float
    b: float = 0.0
    tap: float = 1.0
    shift: float = 0.0
    status: bool = True


@dataclass(frozen=True)
class GenRecord:
    bus: int
    Pg: float = 0.0
    Qg: float = 0.0
    Vg: float = 1.0
    status: bool = True


@dataclass(frozen=True)
class Network:
    baseMVA: float
    buses: tuple[BusRecord, ...]
    branches: tuple[BranchRecord, ...]
    gens: tuple[GenRecord, ...] = ()
    name: str = ""
    index: dict[int, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "buses", tuple(self.buses))
        object.__setattr__(self, "branches", tuple(self.branches))
        object.__setattr__(self, "gens", tuple(self.gens))
        index: dict[int, int] = {}
        for k, bus in enumerate(self.buses):
            if bus.id in index:
                raise CaseFormatError(f"duplicate bus label {bus.id}", code="duplicate-bus")
            index[bus.id] = k
        object.__setattr__(self, "index", index)
        validate(self)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def slack(self) -> int:
        """Position of the slack bus."""
        return next(k for k, b in enumerate(self.buses) if b.kind == "slack")

    def positions(self, kind: str) -> np.ndarray:
        return np.array([k for k, b in enumerate(self.buses) if b.kind == kind], dtype=int)

    @property
    def in_service(self) -> np.ndarray:
        return np.array([br.status for br in self.branches], dtype=bool)


def validate(net: Network) -> None:
    """Check the structural invariants of a network; raise :class:`CaseFormatError`."""
    if net.baseMVA <= 0:
        raise CaseFormatError("baseMVA must be positive", code="base")
    slack = [b.id for b in net.buses if b.kind == "slack"]
    if not slack:
        raise CaseFormatError("missing slack bus", code="missing-slack")
    if len(slack) > 1:
        raise CaseFormatError(f"multiple slack buses {slack}", code="multiple-slack")
    for b in net.buses:
        if b.kind not in _KIND_CODES:
            raise CaseFormatError(f"bus {b.id}: unknown kind {b.kind!r}", code="bus-kind")
        if not b.Vm > 0:
            raise CaseFormatError(f"bus {b.id}: Vm must be positive", code="bus-vm")
    for k, br in enumerate(net.branches):
        for end in (br.fbus, br.tbus):
            if end not in net.index:
                raise CaseFormatError(f"branch {k}: unknown bus {end}", code="unknown-bus")
        if not br.tap > 0:
            raise CaseFormatError(f"branch {k}: tap must be positive", code="branch-tap")
        if br.status and br.r == 0 and br.x == 0:
            raise CaseFormatError(f"branch {k}: zero series impedance", code="zero-impedance")
    for g in net.gens:
        if g.bus not in net.index:
            raise CaseFormatError(f"generator at unknown bus {g.bus}", code="unknown-bus")
    if not _connected(net):
        raise CaseFormatError("network is disconnected over in-service branches", code="disconnected")


def _connected(net: Network) -> bool:
    n = net.n_bus
    if n == 0:
        return False
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for br in net.branches:
        if br.status:
            a, b = find(net.index[br.fbus]), find(net.index[br.tbus])
            parent[a] = b
    root = find(0)
    return all(find(i) == root for i in range(n))


# ---------------------------------------------------------------------------
# MATPOWER text parsing

_MATRIX_RE = re.compile(r"mpc\.(bus|gen|branch)\s*=\s*\[")
_BASE_RE = re.compile(r"mpc\.baseMVA\s*=\s*([-+0-9.eE]+)\s*;?")


def _strip_comment(line: str) -> str:
    pos = line.find("%")
    return line if pos < 0 else line[:pos]


def _read_tables(text: str):
    lines = text.splitlines()
    base = None
    tables: dict[str, list[tuple[int, list[float]]]] = {}
    i = 0
    while i < len(lines):
        raw = _strip_comment(lines[i])
        m = _BASE_RE.search(raw)
        if m:
            base = (float(m.group(1)), i + 1)
        m = _MATRIX_RE.search(raw)
        if m:
            name = m.group(1)
            start_line = i + 1
            if name in tables:
                raise CaseFormatError(f"table {name!r} defined twice", start_line, code="duplicate-table")
            rows: list[tuple[int, list[float]]] = []
            body = raw[m.end():]
            closed = False
            while True:
                end = body.find("]")
                chunk = body if end < 0 else body[:end]
                for piece in chunk.split(";"):
                    tokens = piece.replace(",", " ").split()
                    if tokens:
                        try:
                            rows.append((i + 1, [float(t) for t in tokens]))
                        except ValueError:
                            raise CaseFormatError(f"non-numeric entry in {name} table", i + 1,
                                                  code="non-numeric") from None
                if end >= 0:
                    closed = True
                    break
                i += 1
                if i >= len(lines):
                    break
                body = _strip_comment(lines[i])
            if not closed:
                raise CaseFormatError(f"unterminated {name} table", start_line, code="unterminated")
            tables[name] = rows
        i += 1
    return base, tables


def _check_arity(name: str, rows) -> None:
    if not rows:
        return
    width = len(rows[0][1])
    for line, vals in rows:
        if len(vals) != width:
            raise CaseFormatError(f"malformed row arity in {name} table: expected {width} columns, "
                                  f"got {len(vals)}", line, code="arity")
    if width < _MIN_COLS[name]:
        raise CaseFormatError(f"{name} table needs at least {_MIN_COLS[name]} columns, got {width}",
                              rows[0][0], code="arity")
    if width > _STD_COLS[name]:
        warnings.warn(f"{name} table: ignoring {width - _STD_COLS[name]} unrecognized extra columns",
                      stacklevel=3)


def parse_case(text: str, name: str = "") -> Network:
    """Parse MATPOWER-style case text (``mpc.baseMVA``, ``mpc.bus``, ``mpc.gen``, ``mpc.branch``)."""
    base, tables = _read_tables(text)
    if base is None:
        raise CaseFormatError("missing baseMVA", code="missing-table")
    for tname in ("bus", "branch"):
        if tname not in tables:
            raise CaseFormatError(f"missing {tname} table", code="missing-table")
    tables.setdefault("gen", [])
    for tname, rows in tables.items():
        _check_arity(tname, rows)

    buses = []
    seen: dict[int, int] = {}
    slack_line = None
    for line, v in tables["bus"]:
        bid = int(v[0])
        if bid in seen:
            raise CaseFormatError(f"duplicate bus label {bid} (first on line {seen[bid]})", line,
                                  code="duplicate-bus")
        seen[bid] = line
        code = int(v[1])
        if code not in BUS_KINDS:
            raise CaseFormatError(f"bus {bid}: unsupported bus type {code}", line, code="bus-kind")
        if code == 3:
            if slack_line is not None:
                raise CaseFormatError(f"multiple slack buses (first on line {slack_line})", line,
                                      code="multiple-slack")
            slack_line = line
        if not v[7] > 0:
            raise CaseFormatError(f"bus {bid}: Vm must be positive", line, code="bus-vm")
        buses.append(BusRecord(bid, BUS_KINDS[code], v[2], v[3], v[4], v[5], v[7], v[8], v[9]))
    if slack_line is None:
        raise CaseFormatError("missing slack bus", tables["bus"][0][0] if tables["bus"] else None,
                              code="missing-slack")

    gens = []
    for line, v in tables["gen"]:
        if int(v[0]) not in seen:
            raise CaseFormatError(f"generator at unknown bus {int(v[0])}", line, code="unknown-bus")
        gens.append(GenRecord(int(v[0]), v[1], v[2], v[5], bool(v[7] > 0)))

    branches = []
    for line, v in tables["branch"]:
        f, t = int(v[0]), int(v[1])
        for end in (f, t):
            if end not in seen:
                raise CaseFormatError(f"branch endpoint {end} is not a bus", line, code="unknown-bus")
        status = bool(v[10] > 0)
        if status and v[2] == 0 and v[3] == 0:
            raise CaseFormatError("zero series impedance on in-service branch", line, code="zero-impedance")
        tap = v[8] if v[8] != 0 else 1.0
        if tap < 0:
            raise CaseFormatError("negative tap ratio", line, code="branch-tap")
        branches.append(BranchRecord(f, t, v[2], v[3], v[4], tap, v[9], status))

    try:
        return Network(base[0], tuple(buses), tuple(branches), tuple(gens), name=name)
    except CaseFormatError as err:
        if err.code == "disconnected":
            raise CaseFormatError(str(err), tables["branch"][0][0] if tables["branch"] else None,
                                  code="disconnected") from None
        raise


def read_case(path) -> Network:
    path = Path(path)
    if path.suffix == ".json":
        return network_from_json(path.read_text())
    return parse_case(path.read_text(), name=path.stem)


def load_case(name: str) -> Network:
    """Load one of the bundled IEEE cases (``case14``, ``case57``, ``case118``) or a file path."""
    if name in BUNDLED_CASES:
        text = resources.files("rdlpf").joinpath("data", f"{name}.m").read_text()
        return parse_case(text, name=name)
    return read_case(name)


def _num(v: float) -> str:
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 1e15 else repr(v)


def serialize_case(net: Network) -> str:
    """Write the retained fields back as MATPOWER text."""
    out = [f"function mpc = {net.name or 'case'}", "mpc.version = '2';",
           f"mpc.baseMVA = {_num(net.baseMVA)};", "",
           "%% bus_i type Pd Qd Gs Bs area Vm Va baseKV", "mpc.bus = ["]
    for b in net.buses:
        vals = [b.id, _KIND_CODES[b.kind], b.Pd, b.Qd, b.Gs, b.Bs, 1, b.Vm, b.Va, b.baseKV]
        out.append("\t" + "\t".join(_num(x) for x in vals) + ";")
    out += ["];", "", "%% bus Pg Qg Qmax Qmin Vg mBase status", "mpc.gen = ["]
    for g in net.gens:
        vals = [g.bus, g.Pg, g.Qg, 0, 0, g.Vg, net.baseMVA, int(g.status)]
        out.append("\t" + "\t".join(_num(x) for x in vals) + ";")
    out += ["];", "", "%% fbus tbus r x b rateA rateB rateC ratio angle status", "mpc.branch = ["]
    for br in net.branches:
        vals = [br.fbus, br.tbus, br.r, br.x, br.b, 0, 0, 0, br.tap, br.shift, int(br.status)]
        out.append("\t" + "\t".join(_num(x) for x in vals) + ";")
    out += ["];", ""]
    return "\n".join(out)


def network_to_dict(net: Network) -> dict:
    return {
        "name": net.name,
        "baseMVA": net.baseMVA,
        "buses": [asdict(b) for b in net.buses],
        "branches": [asdict(b) for b in net.branches],
        "gens": [asdict(g) for g in net.gens],
    }


def network_to_json(net: Network) -> str:
    return json.dumps(network_to_dict(net), indent=1)


def network_from_json(text: str) -> Network:
    d = json.loads(text)
    return Network(
        float(d["baseMVA"]),
        tuple(BusRecord(**b) for b in d["buses"]),
        tuple(BranchRecord(**b) for b in d["branches"]),
        tuple(GenRecord(**g) for g in d.get("gens", [])),
        name=d.get("name", ""),
    )


# ---------------------------------------------------------------------------
# admittance


@dataclass(frozen=True)
class BranchAdmittance:
    """Per-branch pi-model terms for in-service branches (positions into ``net.branches``)."""

    branch: np.ndarray
    f: np.ndarray
    t: np.ndarray
    yff: np.ndarray
    yft: np.ndarray
    ytf: np.ndarray
    ytt: np.ndarray


def branch_admittance(net: Network) -> BranchAdmittance:
    on = np.flatnonzero(net.in_service)
    brs = [net.branches[k] for k in on]
    r = np.array([b.r for b in brs])
    x = np.array([b.x for b in brs])
    if np.any((r == 0) & (x == 0)):
        raise CaseFormatError("zero series impedance on in-service branch", code="zero-impedance")
    ys = 1.0 / (r + 1j * x)
    bc = np.array([b.b for b in brs])
    tap = np.array([b.tap for b in brs]) * np.exp(1j * np.deg2rad([b.shift for b in brs]))
    ytt = ys + 0.5j * bc
    yff = ytt / (tap * np.conj(tap))
    yft = -ys / np.conj(tap)
    ytf = -ys / tap
    f = np.array([net.index[b.fbus] for b in brs], dtype=int)
    t = np.array([net.index[b.tbus] for b in brs], dtype=int)
    return BranchAdmittance(on, f, t, yff, yft, ytf, ytt)


def build_ybus(net: Network) -> sp.csr_matrix:
    """Complex nodal admittance matrix (N x N, p.u., sparse)."""
    n = net.n_bus
    ba = branch_admittance(net)
    ysh = np.array([(b.Gs + 1j * b.Bs) / net.baseMVA for b in net.buses])
    rows = np.concatenate([ba.f, ba.f, ba.t, ba.t, np.arange(n)])
    cols = np.concatenate([ba.f, ba.t, ba.f, ba.t, np.arange(n)])
    vals = np.concatenate([ba.yff, ba.yft, ba.ytf, ba.ytt, ysh])
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
