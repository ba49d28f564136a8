"""The ``pump`` command: config-driven experiments and built-in verification suites.

Exit codes: 0 success, 1 a verification suite has failing rows, 2 invalid
config, 3 numerical failure (the partial report is still written).
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

import numpy as np
from jsonschema import Draft202012Validator
from jsonschema.exceptions import best_match
from threadpoolctl import threadpool_limits

from . import __version__
from .chainspace import ChainGeometry
from .evolution import EvolutionError
from .groundstate import (FlowError, GapError, finite_gap, onsite_gap_hamiltonian,
                          random_symmetric_perturbation)
from .index import pump_index, stability_sweep
from .pumps import (LoopError, concat, constant_loop, dress, example_pump, pump_levels,
                    reparametrize, stack, time_reverse)
from .splitting import SplitError, multi_split, split_single_edge
from .symmetry import OnsiteRep, SymmetryGroup
from .zerodim import ChargeError, ZeroDimLoop, contract_loop, kato_transport

NUMERICAL_ERRORS = (ChargeError, LoopError, SplitError, GapError, FlowError, EvolutionError)
INDEX_COLUMNS = ["experiment_id", "group", "h_expected", "h_measured", "phase_residual",
                 "closure_metric", "wall_time_s"]
VERIFY_COLUMNS = ["test", "expected", "measured", "tolerance", "pass"]
PIPELINES = ("index", "split", "multisplit", "gap", "sweep")


class ConfigError(ValueError):
    def __init__(self, path, problems):
        super().__init__(f"{path}: invalid config")
        self.path = path
        self.problems = problems


# --- config ----------------------------------------------------------------

def _schema() -> dict:
    return json.loads(resources.files("chargepump").joinpath("schema/config.json").read_text())


def _pointer(parts) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts)


def validate_config(cfg, path="<config>") -> None:
    """Raise ConfigError listing each violation at its JSON pointer."""
    problems = []
    for err in sorted(Draft202012Validator(_schema()).iter_errors(cfg), key=lambda e: list(e.absolute_path)):
        # oneOf over loop constructors: report the closest branch instead of the union
        deep = best_match(err.context) if err.context else err
        problems.append((_pointer(deep.absolute_path) or "/", deep.message))
    if problems:
        raise ConfigError(path, problems)


def load_config(path) -> dict:
    try:
        cfg = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(path, [("", f"not valid JSON: {exc}")])
    validate_config(cfg, path)
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _charge(group: SymmetryGroup, x):
    return group.dual(x if isinstance(x, list) else [x])


def _unit(group, spec):
    return _charge(group, spec["unit"]) if "unit" in spec else group.dual([1] * group.n_factors)


_TYPE_OPS = {"example_pump": "pump", "time_reverse": "reverse"}


def _op_form(spec: dict) -> dict:
    """Rewrite a {"type": ...} node into the {"op": ...} form.

    concat "parts" are listed in running order; more than two parts nest to the left.
    """
    if "type" not in spec:
        return spec
    out = {k: v for k, v in spec.items() if k not in ("type", "parts")}
    out["op"] = _TYPE_OPS.get(spec["type"], spec["type"])
    if out["op"] == "concat":
        parts = spec["parts"]
        node = parts[0]
        for nxt in parts[1:]:
            node = {"op": "concat", "first": node, "second": nxt}
        return node
    if out["op"] == "stack":
        out["loops"] = spec["parts"]
    return out


def build_loop(spec: dict, group: SymmetryGroup, geometry: ChainGeometry, seed: int = 0):
    """LoopSpec from a constructor tree."""
    spec = _op_form(spec)
    op = spec["op"]
    if op == "pump":
        unit = _charge(group, spec["unit"]) if "unit" in spec else None
        return example_pump(group, _charge(group, spec["h"]), geometry, unit=unit)
    if op == "constant":
        rep = OnsiteRep.uniform(group, pump_levels(group, _unit(group, spec)), geometry.n_sites)
        return constant_loop(geometry, rep)
    if op == "concat":
        first = build_loop(spec["first"], group, geometry, seed)
        second = build_loop(spec["second"], group, geometry, seed)
        return concat(second, first)
    if op == "stack":
        a, b = (build_loop(s, group, geometry, seed) for s in spec["loops"])
        return stack(a, b)
    if op == "reverse":
        return time_reverse(build_loop(spec["loop"], group, geometry, seed))
    if op == "dress":
        inner = build_loop(spec["loop"], group, geometry, seed)
        return dress(inner, spec["strength"], spec.get("support"), seed=spec.get("seed", seed))
    if op == "reparametrize":
        return reparametrize(build_loop(spec["loop"], group, geometry, seed), spec["knots"])
    raise ValueError(f"unknown loop op {op!r}")


def _geometry(cfg, n_sites=None) -> ChainGeometry:
    geo = cfg.get("geometry", {})
    n = n_sites or geo.get("n_sites", 8)
    return ChainGeometry.centered(n, 3, ring=geo.get("ring", True))


def _evo(cfg) -> dict:
    e = cfg.get("evolution", {})
    return {"integrator": e.get("integrator", "auto"), "max_step": e.get("max_step", 0.01)}


def _index_kw(cfg) -> dict:
    ix = cfg.get("index", {})
    return {"cut": ix.get("cut", 0), "w": ix.get("w"), "method": ix.get("method", "phase"), **_evo(cfg)}


def sweep_family(name: str, seed: int = 0):
    """Deformation family t -> loop used by the sweep pipeline."""
    if name == "dress":
        return lambda loop, t: dress(loop, t, seed=seed)
    if name == "reparametrize":
        # j bends through (1/2, (1 + t)/2); t = 0 is the identity
        return lambda loop, t: reparametrize(loop, [(0.0, 0.0), (0.5, min(1.0, 0.5 + 0.5 * t)),
                                                    (1.0, 1.0)])
    raise ValueError(f"unknown sweep family {name!r}")


# --- pipelines ---------------------------------------------------------------

def _pipe_index(cfg, group, loop, seed, out):
    rep = pump_index(loop, **_index_kw(cfg))
    js = rep.to_json()
    out["runtime"]["index_s"] = js.pop("runtime_s")
    out["result"] = js
    out["rows"].append({"h_measured": rep.charge.to_list(), "phase_residual": rep.max_residual,
                        "closure_metric": _closure_metric(rep.closure)})


def _closure_metric(closure: dict) -> float | None:
    if not closure:
        return None
    if closure.get("trace_distance") is not None:
        return closure["trace_distance"]
    return 1 - closure["fidelity"]


def _pipe_split(cfg, group, loop, seed, out):
    sp = cfg.get("split", {})
    try:
        _, rep = split_single_edge(loop, sp.get("edge", 0), sp.get("n_times", 16),
                                   max_step=_evo(cfg)["max_step"])
    except SplitError as exc:
        if exc.report is not None:
            out["result"] = exc.report.to_json()
        raise
    out["result"] = rep.to_json()


def _pipe_multisplit(cfg, group, loop, seed, out):
    sp = cfg.get("split", {})
    rep = multi_split(loop, sp.get("R", 4), max_step=_evo(cfg)["max_step"])
    out["result"] = rep.to_json()


def _pipe_gap(cfg, group, loop, seed, out):
    gc = cfg.get("gap", {})
    f_target, samples = gc.get("f_target", 0.05), gc.get("samples", 20)
    rows = []
    out["result"] = {"sizes": rows}
    for L in gc.get("sizes", [4, 6, 8]):
        lo = build_loop(cfg["loop"], group, _geometry(cfg, L), seed)
        F = onsite_gap_hamiltonian(lo.basepoint)
        base = finite_gap(F)
        gaps = []
        for k in range(samples):
            W = random_symmetric_perturbation(lo.geometry, lo.rep, f_target, seed=seed + k)
            gaps.append(finite_gap(F + W).gap)
        rows.append({"L": L, "gap_F": base.gap, "method": base.method, "f_target": f_target,
                     "samples": samples, "min_gap_perturbed": min(gaps) if gaps else None,
                     "gaps_perturbed": gaps})


def _pipe_sweep(cfg, group, loop, seed, out):
    sw = cfg["sweep"]
    table = stability_sweep(loop, sweep_family(sw["family"], seed), sw["strengths"], **_index_kw(cfg))
    base = table.baseline.to_list() if table.baseline else None
    out["result"] = {"family": sw["family"], "baseline": base,
                     "largest_stable": table.largest_stable, "rows": []}
    for r in table.rows:
        rr = {"strength": r.strength, "error": r.error}
        if r.report is not None:
            js = r.report.to_json()
            js.pop("runtime_s")
            rr.update(js)
            out["rows"].append({"h_measured": r.report.charge.to_list(),
                                "phase_residual": r.report.max_residual,
                                "closure_metric": _closure_metric(r.report.closure),
                                "strength": r.strength})
        out["result"]["rows"].append(rr)


PIPES = {"index": _pipe_index, "split": _pipe_split, "multisplit": _pipe_multisplit,
         "gap": _pipe_gap, "sweep": _pipe_sweep}


def run_experiment(cfg: dict, pipeline: str | None = None, seed: int | None = None) -> tuple:
    """Run one validated config; returns (exit code, report dict, csv rows)."""
    t0 = time.perf_counter()
    pipeline = pipeline or cfg.get("pipeline", "index")
    seed = cfg.get("seed", 0) if seed is None else seed
    group = SymmetryGroup.from_config(cfg["group"])
    out = {"tool": {"name": "chargepump", "version": __version__},
           "config_hash": config_hash(cfg), "experiment_id": cfg["experiment_id"],
           "pipeline": pipeline, "seed": seed, "group": str(group),
           "expected": cfg.get("expected"), "status": "ok", "result": None,
           "runtime": {}, "rows": []}
    code = 0
    try:
        loop = build_loop(cfg["loop"], group, _geometry(cfg), seed)
        PIPES[pipeline](cfg, group, loop, seed, out)
    except NUMERICAL_ERRORS as exc:
        out["status"] = "error"
        out["error"] = {"type": type(exc).__name__, "message": str(exc)}
        code = 3
    wall = time.perf_counter() - t0
    out["runtime"]["wall_time_s"] = wall
    rows = [{"experiment_id": cfg["experiment_id"], "group": str(group),
             "h_expected": cfg.get("expected"), "wall_time_s": wall, **r} for r in out.pop("rows")]
    if rows and "expected" in cfg:
        want = cfg["expected"] if isinstance(cfg["expected"], list) else [cfg["expected"]]
        want = group.dual(want).to_list()
        out["matches_expected"] = all(r["h_measured"] == want for r in rows)
    return code, out, rows


def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, float):
        return repr(x)
    if isinstance(x, list):
        return " ".join(_fmt(v) for v in x)
    return str(x)


def write_csv(path_or_file, rows, columns) -> None:
    own = isinstance(path_or_file, (str, Path))
    f = open(path_or_file, "w", newline="") if own else path_or_file
    try:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([_fmt(r.get(c)) for c in columns])
    finally:
        if own:
            f.close()


def write_report(out_dir: Path, report: dict, rows) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    p = out_dir / f"{report['experiment_id']}.json"
    p.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    if rows:
        extra = [c for c in rows[0] if c not in INDEX_COLUMNS]
        write_csv(out_dir / f"{report['experiment_id']}.csv", rows, INDEX_COLUMNS + extra)
    return p


# --- verification suites ---------------------------------------------------------

def _row(test, expected, measured, tolerance, ok):
    return {"test": test, "expected": expected, "measured": measured, "tolerance": tolerance,
            "pass": bool(ok)}


def _index_row(name, loop, want, tol=1e-6, **kw):
    try:
        r = pump_index(loop, **kw)
    except NUMERICAL_ERRORS as exc:
        return _row(name, want.to_list(), f"{type(exc).__name__}: {exc}", tol, False)
    ok = r.charge == want and r.max_residual < tol
    return _row(name, want.to_list(), f"{r.charge.to_list()} (residual {r.max_residual:.2e})", tol, ok)


def suite_core() -> list:
    rows = []
    u1, z3 = SymmetryGroup.u1(), SymmetryGroup.zn(3)
    g8 = ChainGeometry.centered(8, 3, ring=True)
    for group, hs in ((u1, range(-2, 3)), (z3, range(3))):
        for h in hs:
            unit = group.dual([1]) if h == 0 else None
            rows.append(_index_row(f"realization {group} h={h}",
                                   example_pump(group, group.dual([h]), g8, unit=unit), group.dual([h])))
    rep = OnsiteRep.uniform(u1, pump_levels(u1, u1.dual([1])), 8)
    rows.append(_index_row("constant loop", constant_loop(g8, rep), u1.zero(), 1e-10))
    for h in (1, 2):
        rows.append(_index_row(f"time reversal h={h}", time_reverse(example_pump(u1, u1.dual([h]), g8)),
                               u1.dual([-h])))
    P = example_pump(u1, u1.dual([1]), g8)
    try:
        _, rep_s = split_single_edge(concat(P, time_reverse(P)), 0, 16)
        m = max(max(rep_s.entropy_after), rep_s.closure["trace_distance"])
        rows.append(_row("split rev(P).P entropy+closure", 0.0, m, 1e-6, rep_s.passed))
    except NUMERICAL_ERRORS as exc:
        rows.append(_row("split rev(P).P entropy+closure", 0.0, str(exc), 1e-6, False))
    try:
        split_single_edge(P, 0, 16)
        rows.append(_row("split P obstructed", "[1] [-1]", "split succeeded", "exact", False))
    except SplitError as exc:
        # the left half is the pumped state, so it carries the index; the right half the opposite
        c = exc.report.certificate if exc.report else {}
        got = f"{c.get('left')} {c.get('right')}"
        rows.append(_row("split P obstructed", "[1] [-1]", got, "exact", got == "[1] [-1]"))
    for L in (4, 6, 8):
        lo = example_pump(u1, u1.dual([1]), ChainGeometry.centered(L, 3, ring=True))
        gap = finite_gap(onsite_gap_hamiltonian(lo.basepoint)).gap
        rows.append(_row(f"gap(F) L={L}", 1.0, gap, 1e-10, abs(gap - 1) <= 1e-10))
    return rows


def suite_additivity() -> list:
    rows = []
    u1 = SymmetryGroup.u1()
    ring12 = ChainGeometry.centered(12, 3, ring=True)
    ring4 = ChainGeometry.centered(4, 3, ring=True)
    hs = range(-2, 3)
    # concat needs a common representation: both charges in {0, u, -u}
    for h1 in hs:
        for h2 in hs:
            units = {abs(h) for h in (h1, h2) if h}
            if len(units) > 1:
                continue
            u = u1.dual([units.pop() if units else 1])
            a = example_pump(u1, u1.dual([h1]), ring12, unit=u)
            b = example_pump(u1, u1.dual([h2]), ring12, unit=u)
            rows.append(_index_row(f"concat h={h1},{h2}", concat(b, a), u1.dual([h1 + h2])))
    for h1 in hs:
        for h2 in hs:
            a = example_pump(u1, u1.dual([h1]), ring4, unit=None if h1 else u1.dual([1]))
            b = example_pump(u1, u1.dual([h2]), ring4, unit=None if h2 else u1.dual([1]))
            rows.append(_index_row(f"stack h={h1},{h2}", stack(a, b), u1.dual([h1 + h2])))
    return rows


def random_zerodim_loop(d: int, rng, K: int = 256) -> ZeroDimLoop:
    """Closed loop: a random path out, then the same path back."""
    omega = rng.normal(size=d) + 1j * rng.normal(size=d)
    omega /= np.linalg.norm(omega)
    A0, A1 = (_herm(d, rng) for _ in range(2))

    def A(t):
        return A0 + t * A1

    def E(s):
        return 2 * A(2 * s) if s <= 0.5 else -2 * A(2 - 2 * s)
    return ZeroDimLoop.from_generator(omega, E, K=K)


def _herm(d, rng):
    M = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    return (M + M.conj().T) / (2 * math.sqrt(d))


def suite_zerodim(n: int = 50, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    rows = []
    for i in range(n):
        d = int(rng.integers(2, 7))
        start = rng.normal(size=d) + 1j * rng.normal(size=d)
        target = rng.normal(size=d) + 1j * rng.normal(size=d)
        path = kato_transport(target / np.linalg.norm(target), start / np.linalg.norm(start))
        sup, bound = path.sup_generator_norm(), 8 * path.distance
        rows.append(_row(f"transport #{i} sup|E|", f"<= {1.1 * bound!r}", sup, "x1.1",
                         sup <= 1.1 * bound))
        fid = abs(np.vdot(path.target, path.state(1.0)))
        rows.append(_row(f"transport #{i} fidelity", 1.0, fid, 1e-8, fid >= 1 - 1e-8))
        loop = random_zerodim_loop(d, rng)
        c = contract_loop(loop, n_lambda=33)
        rows.append(_row(f"contraction #{i} sup|E_lambda|", f"<= {1.1 * c.E_bound()!r}",
                         c.sup_E_lambda, "x1.1", c.sup_E_lambda <= 1.1 * c.E_bound()))
        rows.append(_row(f"contraction #{i} sup|F_s|", f"<= {1.1 * c.F_bound!r}",
                         c.sup_F_s, "x1.1", c.sup_F_s <= 1.1 * c.F_bound))
    return rows


SUITES = {"core": suite_core, "additivity": suite_additivity, "zerodim": suite_zerodim}


# --- commands -------------------------------------------------------------------

def _run_one(args_tuple):
    path, pipeline, seed, out_dir, threads = args_tuple
    with threadpool_limits(threads):
        cfg = load_config(path)
        code, report, rows = run_experiment(cfg, pipeline, seed)
    dest = Path(out_dir or cfg.get("output", {}).get("dir", "results"))
    p = write_report(dest, report, rows)
    return code, str(p), report.get("status"), report.get("error")


def _config_errors(paths) -> int:
    bad = 0
    for p in paths:
        try:
            load_config(p)
        except ConfigError as exc:
            for ptr, msg in exc.problems:
                print(f"{exc.path}: {ptr or '/'}: {msg}", file=sys.stderr)
            bad += 1
        except OSError as exc:
            print(f"{p}: {exc}", file=sys.stderr)
            bad += 1
    return bad


def cmd_run(args, pipeline=None) -> int:
    if not args.config:
        print("no --config given", file=sys.stderr)
        return 2
    if _config_errors(args.config):
        return 2
    n = max(1, args.threads or 1)
    jobs = [(p, pipeline, args.seed, args.out, 1 if len(args.config) > 1 and n > 1 else n)
            for p in args.config]
    if len(jobs) > 1 and n > 1:
        with ProcessPoolExecutor(max_workers=n) as ex:
            results = list(ex.map(_run_one, jobs))
    else:
        results = [_run_one(j) for j in jobs]
    worst = 0
    for code, path, status, err in results:
        msg = f"{path}: {status}"
        if err:
            msg += f" ({err['type']}: {err['message']})"
        print(msg)
        worst = max(worst, code)
    return worst


def cmd_verify(args) -> int:
    if not args.suite:
        print("available suites: " + ", ".join(SUITES))
        return 0
    if args.suite not in SUITES:
        print(f"unknown suite {args.suite!r}; available: {', '.join(SUITES)}", file=sys.stderr)
        return 2
    with threadpool_limits(args.threads or 1):
        rows = SUITES[args.suite]()
    buf = io.StringIO()
    write_csv(buf, rows, VERIFY_COLUMNS)
    sys.stdout.write(buf.getvalue())
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / f"verify_{args.suite}.csv").write_text(buf.getvalue())
    failed = sum(not r["pass"] for r in rows)
    print(f"# {len(rows) - failed}/{len(rows)} passed", file=sys.stderr)
    return 1 if failed else 0


def cmd_report(args) -> int:
    """Collect JSON reports into one index table."""
    files = []
    for p in args.paths or ["results"]:
        p = Path(p)
        files += sorted(p.glob("*.json")) if p.is_dir() else [p]
    rows = []
    for f in files:
        rep = json.loads(f.read_text())
        if "config_hash" not in rep:
            continue
        res = rep.get("result") or {}
        base = {"experiment_id": rep["experiment_id"], "group": rep["group"],
                "h_expected": rep.get("expected"),
                "wall_time_s": rep.get("runtime", {}).get("wall_time_s")}
        if rep["pipeline"] == "index" and res:
            rows.append({**base, "h_measured": res["index"]["charge"],
                         "phase_residual": max(res["residuals"]["phase"], default=None),
                         "closure_metric": _closure_metric(res.get("closure", {}))})
        elif rep["pipeline"] == "sweep" and res:
            for r in res["rows"]:
                if r.get("index"):
                    rows.append({**base, "h_measured": r["index"]["charge"],
                                 "phase_residual": max(r["residuals"]["phase"], default=None),
                                 "closure_metric": _closure_metric(r.get("closure", {}))})
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        write_csv(args.out, rows, INDEX_COLUMNS)
    else:
        write_csv(sys.stdout, rows, INDEX_COLUMNS)
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pump", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "index", "split", "gap", "sweep"):
        p = sub.add_parser(name, help="run configs" if name == "run" else f"run the {name} pipeline")
        p.add_argument("--config", action="append", default=[], help="config file (repeatable)")
        p.add_argument("--out", help="output directory (default: the config's output.dir)")
        p.add_argument("--seed", type=int, help="override the config seed")
        p.add_argument("--threads", type=int, default=1,
                       help="workers across configs, or BLAS threads for a single config")
    p = sub.add_parser("verify", help="run a built-in verification suite")
    p.add_argument("--suite", nargs="?", const="", default="", help="core, additivity or zerodim")
    p.add_argument("--out", help="also write the CSV here")
    p.add_argument("--threads", type=int, default=1)
    p = sub.add_parser("report", help="collect JSON reports into an index table")
    p.add_argument("paths", nargs="*", help="report files or directories (default: results)")
    p.add_argument("--out", help="CSV path (default: stdout)")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "verify":
        return cmd_verify(args)
    if args.command == "report":
        return cmd_report(args)
    return cmd_run(args, None if args.command == "run" else args.command)


if __name__ == "__main__":
    sys.exit(main())
