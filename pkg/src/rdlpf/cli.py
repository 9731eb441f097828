"""Command-line pipeline: ``rdlpf <command> ...``.

Every stage reads and writes files (dataset CSV + meta JSON, model JSON,
report JSON), so stages can be rerun or cached independently.
``experiment run`` chains them from one JSON config.

Exit codes: 0 success, 1 usage or config error, 2 infeasible problem or
solver failure, 3 data error (unreadable or inconsistent inputs).
"""
from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .acpf import injections, solve_newton
from .conic.export import export_lp, export_sdpa
from .datagen import DataGenerationError, gen_eval_set, gen_history, load_dataset, save_dataset
from .drcc import (ChanceSpec, InfeasibleRowError, KLAmbiguity, SolverFailure, TrainingConfig, assemble_m1,
                   assemble_m2, kl_adjusted_eps, moment_ambiguity, row_delta, train_rdlpf)
from .evalreport import ErrorReport, evaluate, render_table
from .lpfcore import LinearPFModel, RankDeficiencyError, VariableMap, train_ls
from .netmodel import BUNDLED_CASES, CaseFormatError, Network, load_case

log = logging.getLogger("rdlpf")

EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_DATA = 0, 1, 2, 3
TOOL = "rdlpf"


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# helpers


def _canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), default=_jsonable)


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"not serializable: {type(o).__name__}")


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(_canonical(cfg).encode()).hexdigest()[:16]


def artifact_meta(command: str, cfg: dict, seeds=()) -> dict:
    """Meta block for an artifact; ``created`` is the only volatile field and stays out of the hash."""
    return {"tool": TOOL, "version": __version__, "command": command, "config": cfg,
            "config_hash": config_hash(cfg), "seeds": list(seeds),
            "created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())}


def _write_json(path, obj) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=1, sort_keys=True, default=_jsonable) + "\n")


def _read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from None


def resolve_case(name: str) -> Network:
    """Bundled case name, ``ieee14``-style alias, or a path to a MATPOWER/JSON case file."""
    p = Path(name)
    if p.exists():
        return load_case(str(p))
    stem = p.name[:-2] if p.name.endswith(".m") else p.name
    if stem.startswith("ieee"):
        stem = "case" + stem[4:]
    if stem in BUNDLED_CASES:
        return load_case(stem)
    raise DataError(f"case {name!r} not found (bundled: {', '.join(BUNDLED_CASES)})")


def _load_data(path):
    try:
        data = load_dataset(path)
    except FileNotFoundError:
        raise DataError(f"{path}: no such file") from None
    except (ValueError, IndexError) as exc:
        raise DataError(f"{path}: {exc}") from None
    return data


def _split_timing(prov: dict) -> dict:
    """Move wall-clock fields out of the provenance so artifacts stay byte-stable."""
    timing = {}
    if "time" in prov:
        timing["total"] = prov.pop("time")
    rows = []
    for r in prov.get("rows", []):
        if "time" in r:
            rows.append(r.pop("time"))
    if rows:
        timing["rows"] = rows
    return timing


def save_model(model: LinearPFModel, path, meta: dict) -> None:
    d = model.to_dict()
    d["provenance"] = json.loads(json.dumps(d["provenance"], default=_jsonable))
    meta = dict(meta)
    timing = _split_timing(d["provenance"])
    if timing:
        meta["timing"] = timing
    d["meta"] = meta
    _write_json(path, d)


def load_model(path) -> LinearPFModel:
    d = _read_json(path)
    if "A" not in d:
        raise DataError(f"{path}: not a model file")
    try:
        return LinearPFModel.from_dict(d)
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from None


def parse_delta(text):
    if text is None or text == "auto":
        return "auto"
    try:
        v = float(text)
    except ValueError:
        raise UsageError(f"delta must be 'auto' or a positive number, got {text!r}") from None
    if not v > 0:
        raise UsageError("delta must be positive")
    return v


def parse_chosen(text):
    if text is None or text == "nearest-mean":
        return "nearest-mean"
    try:
        return int(text)
    except ValueError:
        raise UsageError(f"chosen must be 'nearest-mean' or a sample index, got {text!r}") from None


def training_config(method: str, *, delta="auto", eps=0.05, gamma1=0.1, gamma2=1.1, kl_d=0.05,
                    chosen="nearest-mean", backend="ipm", sdp_tol=1e-8, feas_tol=1e-9,
                    cardinality_mode="heuristic") -> TrainingConfig:
    method = method.upper()
    amb = KLAmbiguity(kl_d) if method == "M2" else (gamma1, gamma2)
    return TrainingConfig(method, ChanceSpec(delta, eps), amb, chosen, backend=backend, sdp_tol=sdp_tol,
                          feas_tol=feas_tol, cardinality_mode=cardinality_mode)


def _train_chunk(args):
    data, cfg, rows = args
    return train_rdlpf(data, config=dataclasses.replace(cfg, rows=rows))


def train_model(data, method: str, cfg: TrainingConfig | None = None, jobs: int = 1) -> LinearPFModel:
    """LS, M1 or M2 model; robust rows are split over ``jobs`` worker processes."""
    method = method.upper()
    if method == "LS":
        return train_ls(data)
    cfg = cfg or training_config(method)
    rows = list(range(data.map.n_y)) if cfg.rows is None else list(cfg.rows)
    if jobs <= 1 or len(rows) < 2:
        return train_rdlpf(data, config=cfg)
    chunks = [list(map(int, c)) for c in np.array_split(rows, min(jobs, len(rows))) if len(c)]
    with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
        parts = list(pool.map(_train_chunk, [(data, cfg, c) for c in chunks]))
    # rows are independent, so stitching the chunks reproduces the serial result
    A = parts[0].A.copy()
    prov = dict(parts[0].provenance)
    prov["rows"] = []
    prov["time"] = 0.0
    for part, c in zip(parts, chunks):
        A[c] = part.A[c]
        prov["rows"].extend(part.provenance["rows"])
        prov["time"] += part.provenance["time"]
    prov["trained_rows"] = rows
    return LinearPFModel(A, parts[0].b, data.map, prov)


# ---------------------------------------------------------------------------
# subcommands


def cmd_case_info(args):
    net = resolve_case(args.case)
    vmap = VariableMap.for_network(net)
    kinds = [b.kind for b in net.buses]
    info = {"name": net.name, "baseMVA": net.baseMVA, "buses": net.n_bus, "branches": net.n_branch,
            "in_service_branches": int(net.in_service.sum()), "generators": len(net.gens),
            "pq": kinds.count("PQ"), "pv": kinds.count("PV"), "slack_bus": net.buses[net.slack].id,
            "n_x": vmap.n_x, "n_y": vmap.n_y,
            "total_load_mw": float(sum(b.Pd for b in net.buses)),
            "total_load_mvar": float(sum(b.Qd for b in net.buses))}
    if args.json:
        print(json.dumps(info, indent=1))
    else:
        for k, v in info.items():
            print(f"{k:>20}: {v}")
    return EXIT_OK


def cmd_pf_solve(args):
    net = resolve_case(args.case)
    Pd = np.array([b.Pd for b in net.buses]) * args.level
    Qd = np.array([b.Qd for b in net.buses]) * args.level
    sol = solve_newton(net, injections(net, Pd, Qd), tol=args.tol, max_iter=args.max_iter, init=args.init)
    cfg = {"case": args.case, "level": args.level, "tol": args.tol, "max_iter": args.max_iter, "init": args.init}
    out = sol.to_dict()
    out["meta"] = artifact_meta("pf solve", cfg)
    if args.out:
        _write_json(args.out, out)
    print(f"{'converged' if sol.converged else 'NOT converged'} in {sol.iterations} iterations, "
          f"max mismatch {sol.max_mismatch:.3e} p.u.")
    if not sol.converged:
        raise SolverFailure(f"power flow did not converge: {sol.message}")
    return EXIT_OK


def _save_data(data, path, command, cfg, seed):
    data.meta.update({k: v for k, v in artifact_meta(command, cfg, [seed]).items() if k != "config"})
    data.meta["generator_config"] = cfg
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    save_dataset(data, path)


def cmd_data_gen(args):
    net = resolve_case(args.case)
    data = gen_history(net, args.k, args.pct, args.seed)
    cfg = {"case": args.case, "K": args.k, "pct": args.pct, "seed": args.seed}
    _save_data(data, args.out, "data gen", cfg, args.seed)
    print(f"wrote {data.K} samples ({data.X.shape[1]} inputs, {data.Y.shape[1]} outputs) to {args.out}")
    return EXIT_OK


def cmd_data_eval(args):
    net = resolve_case(args.case)
    data = gen_eval_set(net, args.level, args.m, args.pct_local, args.seed)
    cfg = {"case": args.case, "level": args.level, "M": args.m, "pct_local": args.pct_local, "seed": args.seed}
    _save_data(data, args.out, "data eval-set", cfg, args.seed)
    print(f"wrote {data.K} samples at level {args.level:g} to {args.out}")
    return EXIT_OK


def _train_cfg_from_args(args) -> TrainingConfig:
    return training_config(args.method, delta=parse_delta(args.delta), eps=args.eps, gamma1=args.gamma1,
                           gamma2=args.gamma2, kl_d=args.kl_d, chosen=parse_chosen(args.chosen),
                           backend=args.backend, cardinality_mode=args.cardinality_mode)


def cmd_train(args):
    data = _load_data(args.hist)
    if data.map is None:
        raise DataError(f"{args.hist}: dataset meta has no variable map")
    method = args.method.upper()
    cfg = None if method == "LS" else _train_cfg_from_args(args)
    if cfg is not None and args.rows:
        cfg = dataclasses.replace(cfg, rows=[int(r) for r in args.rows.split(",")])
    model = train_model(data, method, cfg, jobs=args.jobs)
    run_cfg = {"method": method, "hist": Path(args.hist).name, "train": _cfg_dict(cfg)}
    save_model(model, args.out, artifact_meta("train", run_cfg, [data.meta.get("seed")]))
    extra = ""
    if method == "M2":
        extra = f", eps'+ = {model.provenance['eps_prime_plus']:.6g}"
    print(f"trained {method} model ({model.map.n_y} x {model.map.n_x}){extra} -> {args.out}")
    return EXIT_OK


def _cfg_dict(cfg: TrainingConfig | None):
    if cfg is None:
        return None
    d = {"method": cfg.method, "delta": cfg.chance.delta, "eps": cfg.chance.eps, "chosen": cfg.chosen,
         "backend": cfg.backend, "sdp_tol": cfg.sdp_tol, "feas_tol": cfg.feas_tol,
         "cardinality_mode": cfg.cardinality_mode, "rows": cfg.rows}
    if isinstance(cfg.ambiguity, KLAmbiguity):
        d["kl_d"] = cfg.ambiguity.d
    else:
        d["gamma1"], d["gamma2"] = cfg.ambiguity
    return d


def cmd_eval(args):
    model = load_model(args.model)
    label = args.label or model.method or Path(args.model).stem
    reports = []
    for path in args.data:
        data = _load_data(path)
        try:
            reports.append(evaluate(model, data, method=label))
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from None
    cfg = {"model": Path(args.model).name, "data": [Path(p).name for p in args.data], "label": label}
    out = {"reports": [r.to_dict() for r in reports], "meta": artifact_meta("eval", cfg)}
    if args.out:
        _write_json(args.out, out)
    print(render_table(reports, "markdown"), end="")
    return EXIT_OK


def _reports_from(path, eval_sets):
    d = _read_json(path)
    if "reports" in d:
        return [ErrorReport.from_dict(r) for r in d["reports"]]
    if "avg" in d:
        return [ErrorReport.from_dict(d)]
    if "A" in d:
        if not eval_sets:
            raise UsageError(f"{path} is a model; pass --data evaluation sets to report on it")
        model = load_model(path)
        return [evaluate(model, data, method=model.method or Path(path).stem) for data in eval_sets]
    raise DataError(f"{path}: neither a report nor a model file")


def cmd_report(args):
    eval_sets = [_load_data(p) for p in (args.data or [])]
    reports = []
    for path in args.inputs:
        reports.extend(_reports_from(path, eval_sets))
    text = render_table(reports, args.format)
    if args.out:
        Path(args.out).write_text(text)
    else:
        print(text, end="")
    return EXIT_OK


def cmd_export(args):
    data = _load_data(args.hist)
    if data.map is None:
        raise DataError(f"{args.hist}: dataset meta has no variable map")
    if not 0 <= args.row < data.map.n_y:
        raise UsageError(f"row must lie in [0, {data.map.n_y})")
    method = "M1" if args.sdp else "M2"
    args.method = method
    cfg = _train_cfg_from_args(args)
    ls = train_ls(data)
    r_ls = data.Y[:, args.row] - data.X @ ls.A[args.row]
    if method == "M1":
        amb = moment_ambiguity(data, cfg)
        delta = row_delta(args.row, data, cfg, r_ls, amb=amb)
        p = assemble_m1(args.row, data, cfg, delta=delta, moments=amb, objective="chosen")
        text = export_sdpa(p, comment=f"{TOOL} {__version__} M1 row {args.row} delta={delta!r} "
                                      f"(variables in units of {p.scale!r} p.u.)")
    else:
        ep = kl_adjusted_eps(cfg.chance.eps_of(args.row), cfg.ambiguity.d)
        delta = row_delta(args.row, data, cfg, r_ls, eps_prime=ep)
        text = export_lp(assemble_m2(args.row, data, cfg, delta=delta, eps_prime=ep, a_ls=ls.A[args.row]))
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    Path(args.out).write_text(text)
    print(f"wrote {method} row {args.row} ({'SDPA sparse' if args.sdp else 'LP'}) to {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# experiment configs


@dataclasses.dataclass
class SolverOptions:
    backend: str = "ipm"
    sdp_tol: float = 1e-8
    feas_tol: float = 1e-9
    cardinality_mode: str = "heuristic"


@dataclasses.dataclass
class ExperimentConfig:
    case: str = "case14"
    seeds: list = dataclasses.field(default_factory=lambda: [0])
    K: int = 300
    M: int = 200
    pct: float = 0.2
    pct_local: float = 0.05
    levels: list = dataclasses.field(default_factory=lambda: [0.6, 0.8, 1.2, 1.4])
    methods: list = dataclasses.field(default_factory=lambda: ["M1", "M2", "LS"])
    delta: object = "auto"
    eps: float = 0.05
    gamma1: float = 0.1
    gamma2: float = 1.1
    kl_d: float = 0.05
    chosen: object = "nearest-mean"
    solver: SolverOptions = dataclasses.field(default_factory=SolverOptions)
    out_dir: str = "experiment-out"
    jobs: int = 1

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentConfig:
        if not isinstance(d, dict):
            raise UsageError("experiment config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise UsageError(f"unknown config keys: {', '.join(unknown)}")
        d = dict(d)
        solver = d.pop("solver", {})
        if not isinstance(solver, dict):
            raise UsageError("'solver' must be an object")
        sknown = {f.name for f in dataclasses.fields(SolverOptions)}
        bad = sorted(set(solver) - sknown)
        if bad:
            raise UsageError(f"unknown solver keys: {', '.join(bad)}")
        cfg = cls(**d, solver=SolverOptions(**solver))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise UsageError(f"config: {msg}")

        need(isinstance(self.case, str), "case must be a string")
        need(isinstance(self.seeds, list) and self.seeds and all(isinstance(s, int) for s in self.seeds),
             "seeds must be a non-empty list of integers")
        for k in ("K", "M", "jobs"):
            need(isinstance(getattr(self, k), int) and getattr(self, k) >= 1, f"{k} must be a positive integer")
        need(_num(self.pct) and 0 <= self.pct < 1, "pct must lie in [0, 1)")
        need(_num(self.pct_local) and 0 <= self.pct_local < 1, "pct_local must lie in [0, 1)")
        need(isinstance(self.levels, list) and all(_num(v) and v > 0 for v in self.levels),
             "levels must be a list of positive numbers")
        need(isinstance(self.methods, list) and self.methods
             and all(isinstance(m, str) and m.upper() in ("LS", "M1", "M2") for m in self.methods),
             "methods must be a non-empty subset of LS, M1, M2")
        need(self.delta == "auto" or (_num(self.delta) and self.delta > 0), "delta must be 'auto' or positive")
        need(_num(self.eps) and 0 < self.eps <= 0.5, "eps must lie in (0, 0.5]")
        need(_num(self.gamma1) and self.gamma1 >= 0, "gamma1 must be nonnegative")
        need(_num(self.gamma2) and self.gamma2 >= 1, "gamma2 must be at least 1")
        need(_num(self.kl_d) and self.kl_d >= 0, "kl_d must be nonnegative")
        need(self.chosen == "nearest-mean" or (isinstance(self.chosen, int) and 0 <= self.chosen < self.K),
             "chosen must be 'nearest-mean' or a sample index below K")
        need(self.solver.cardinality_mode in ("heuristic", "exact"), "solver.cardinality_mode must be "
             "'heuristic' or 'exact'")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def training(self, method: str) -> TrainingConfig:
        s = self.solver
        return training_config(method, delta=self.delta, eps=self.eps, gamma1=self.gamma1, gamma2=self.gamma2,
                               kl_d=self.kl_d, chosen=self.chosen, backend=s.backend, sdp_tol=s.sdp_tol,
                               feas_tol=s.feas_tol, cardinality_mode=s.cardinality_mode)


def _num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def run_experiment(cfg: ExperimentConfig, out_dir=None, echo=print) -> dict:
    """Generate data, train every method and evaluate per seed; returns the summary dict."""
    out = Path(out_dir or cfg.out_dir)
    net = resolve_case(cfg.case)
    cd = cfg.to_dict()
    methods = [m.upper() for m in cfg.methods]
    summary = {"config": cd, "seeds": {}}
    for seed in cfg.seeds:
        sd = out / f"seed{seed}"
        hist = gen_history(net, cfg.K, cfg.pct, seed)
        _save_data(hist, sd / "hist.csv", "data gen",
                   {"case": cfg.case, "K": cfg.K, "pct": cfg.pct, "seed": seed}, seed)
        evals = {}
        for lv in cfg.levels:
            e = gen_eval_set(net, lv, cfg.M, cfg.pct_local, seed)
            _save_data(e, sd / f"eval_{lv:g}.csv", "data eval-set",
                       {"case": cfg.case, "level": lv, "M": cfg.M, "pct_local": cfg.pct_local, "seed": seed}, seed)
            evals[lv] = e
        reports = []
        chosen = {}
        for m in methods:
            tcfg = None if m == "LS" else cfg.training(m)
            model = train_model(hist, m, tcfg, jobs=cfg.jobs)
            save_model(model, sd / f"{m.lower()}.json",
                       artifact_meta("train", {"method": m, "train": _cfg_dict(tcfg), "experiment": cd}, [seed]))
            if m != "LS":
                chosen[m] = [r["chosen_objective"] for r in model.provenance["rows"]]
            for lv, e in evals.items():
                reports.append(evaluate(model, e, method=m, level=lv))
        _write_json(sd / "reports.json", {"reports": [r.to_dict() for r in reports],
                                          "meta": artifact_meta("experiment run", cd, [seed])})
        table = render_table(reports, "markdown")
        (sd / "table.md").write_text(table)
        summary["seeds"][str(seed)] = {"table": table, "chosen_objectives": chosen,
                                       "errors": {f"{r.method}@{r.level:g}": {"avg": r.avg, "wc": r.wc}
                                                  for r in reports}}
        echo(f"seed {seed}\n{table}")
    summary["meta"] = artifact_meta("experiment run", cd, cfg.seeds)
    _write_json(out / "summary.json", summary)
    return summary


def cmd_experiment(args):
    cfg = ExperimentConfig.from_dict(_read_json(args.config))
    if args.jobs:
        cfg.jobs = args.jobs
    run_experiment(cfg, args.out_dir)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_train_options(p, method=True):
    if method:
        p.add_argument("--method", required=True, type=str.lower, choices=["ls", "m1", "m2"])
    p.add_argument("--delta", default="auto", help="per-row error bound in p.u., or 'auto'")
    p.add_argument("--eps", type=float, default=0.05, help="risk level per side")
    p.add_argument("--gamma1", type=float, default=0.1, help="M1 mean-uncertainty radius")
    p.add_argument("--gamma2", type=float, default=1.1, help="M1 covariance scaling")
    p.add_argument("--kl-d", type=float, default=0.05, help="M2 KL divergence radius")
    p.add_argument("--chosen", default="nearest-mean", help="chosen sample: 'nearest-mean' or an index")
    p.add_argument("--backend", default="ipm", help="SDP backend name")
    p.add_argument("--cardinality-mode", default="heuristic", choices=["heuristic", "exact"])


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog=TOOL, description="Robust data-driven linear power flow models.")
    ap.add_argument("--version", action="version", version=f"{TOOL} {__version__}")
    ap.add_argument("--json-errors", action="store_true", help="print errors as JSON on stderr")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)

    case = sub.add_parser("case", help="network case utilities").add_subparsers(dest="action", parser_class=_Parser)
    p = case.add_parser("info", help="summarize a case")
    p.add_argument("--case", default="case14")
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_case_info)

    pf = sub.add_parser("pf", help="AC power flow").add_subparsers(dest="action", parser_class=_Parser)
    p = pf.add_parser("solve", help="Newton power flow at a load level")
    p.add_argument("--case", default="case14")
    p.add_argument("--level", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=20)
    p.add_argument("--init", choices=["flat", "case"], default="flat")
    p.add_argument("--out")
    p.set_defaults(func=cmd_pf_solve)

    data = sub.add_parser("data", help="dataset generation").add_subparsers(dest="action", parser_class=_Parser)
    p = data.add_parser("gen", help="historical training set")
    p.add_argument("--case", default="case14")
    p.add_argument("--k", type=int, default=300)
    p.add_argument("--pct", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_data_gen)
    p = data.add_parser("eval-set", help="evaluation set at one load level")
    p.add_argument("--case", default="case14")
    p.add_argument("--level", type=float, required=True)
    p.add_argument("--m", type=int, default=200)
    p.add_argument("--pct-local", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_data_eval)

    p = sub.add_parser("train", help="train an LS, M1 or M2 model")
    p.add_argument("--hist", required=True)
    _add_train_options(p)
    p.add_argument("--rows", help="comma-separated output rows to robustify (others keep LS)")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on evaluation sets")
    p.add_argument("--model", required=True)
    p.add_argument("--data", nargs="+", required=True)
    p.add_argument("--label")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("report", help="render error tables")
    p.add_argument("--in", dest="inputs", nargs="+", required=True, help="report or model JSON files")
    p.add_argument("--data", nargs="*", help="evaluation sets (needed when --in lists models)")
    p.add_argument("--format", choices=["md", "markdown", "csv", "json"], default="md")
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("export", help="export one assembled training problem")
    g = p.add_mutually_exclusive_group(required=True)
    g.add_argument("--sdp", action="store_true", help="M1 SDP in sparse SDPA format")
    g.add_argument("--lp", action="store_true", help="M2 big-M problem in LP format")
    p.add_argument("--hist", required=True)
    p.add_argument("--row", type=int, required=True)
    _add_train_options(p, method=False)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export)

    exp = sub.add_parser("experiment", help="full pipeline").add_subparsers(dest="action", parser_class=_Parser)
    p = exp.add_parser("run", help="run an experiment config")
    p.add_argument("config")
    p.add_argument("--out-dir")
    p.add_argument("--jobs", type=int)
    p.set_defaults(func=cmd_experiment)
    return ap


def _error(args_json: bool, code: int, kind: str, message: str) -> int:
    if args_json:
        print(json.dumps({"error": kind, "message": message, "exit_code": code}), file=sys.stderr)
    else:
        print(f"{TOOL}: error: {message}", file=sys.stderr)
    return code


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    want_json = "--json-errors" in argv
    try:
        args = build_parser().parse_args(argv)
        if not hasattr(args, "func"):
            raise UsageError("missing command; see --help")
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except UsageError as exc:
        return _error(want_json, EXIT_USAGE, "usage", str(exc))
    except (InfeasibleRowError, SolverFailure, DataGenerationError) as exc:
        kind = "infeasible" if isinstance(exc, InfeasibleRowError) else "solver"
        return _error(want_json, EXIT_SOLVER, kind, str(exc))
    except (DataError, CaseFormatError, RankDeficiencyError, FileNotFoundError) as exc:
        return _error(want_json, EXIT_DATA, "data", str(exc))
    except ValueError as exc:
        return _error(want_json, EXIT_USAGE, "usage", str(exc))


if __name__ == "__main__":
    sys.exit(main())
