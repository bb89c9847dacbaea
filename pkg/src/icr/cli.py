"""Command-line entry point: ``icr <subcommand> ...``.

Exit codes: 0 success, 1 usage error, 2 invalid input, 3 non-convergence,
4 incompatibility when ``--expect-compatible`` was given.  Failures are
reported as one JSON object on a single stderr line.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .baselines import compare_report
from .cycles import check_edge, enumerate_cycles, make_cycle
from .engine import COMPATIBLE, INCOMPATIBLE, IcrConfig, run_all, stationary_set
from .ensemble import collect_ensemble, ensemble_from_plan, grid_search, measure_name, optimize_mixture
from .errors import IcrError, NonConvergence, NotConverged, PhaseError
from .model import classify, distribution_to_dict, load_distribution, load_model
from .synthesis import load_plan, run_plan, validate_sufficiency

log = logging.getLogger("icr")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INVALID = 2
EXIT_NONCONVERGED = 3
EXIT_INCOMPATIBLE = 4
TRACE_SCHEMA = "icr-trace/1"
CYCLE_CAP = 24


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _emit(obj) -> None:
    print(json.dumps(obj), flush=True)


def _diag(kind: str, message: str, code: int) -> int:
    sys.stderr.write(json.dumps({"error": kind, "message": message, "exit": code}) + "\n")
    return code


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, PhaseError):
        return _exit_code(exc.cause)
    if isinstance(exc, (NotConverged, NonConvergence)):
        return EXIT_NONCONVERGED
    return EXIT_INVALID


# -- subcommands -------------------------------------------------------------


def cmd_validate(args) -> int:
    m = load_model(args.model)
    report = {
        "valid": True,
        "variables": [{"name": v.name, "cardinality": v.cardinality} for v in m.variables],
        "blocks": [{"id": b.id, "label": b.label()} for b in m.blocks],
        "delta": [v.name for v in m.delta],
        "class": classify(m),
        "warnings": list(m.warnings),
    }
    if args.plan:
        report["plan"] = validate_sufficiency(m, load_plan(args.plan)).as_dict()
    _emit(report)
    return EXIT_OK


def cmd_cycles(args) -> int:
    m = load_model(args.model)
    if args.edges:
        for i in m.block_ids:
            for j in m.block_ids:
                if i != j:
                    _emit({"edge": check_edge(m, i, j).as_dict()})
    cycles = enumerate_cycles(m, limit=args.limit)
    for c in cycles:
        _emit(c.as_dict())
    if not cycles:
        log.info("no permissible updating cycle")
    return EXIT_OK


def _init_spec(value: str, m):
    if value in ("uniform", "block", "random"):
        return value
    return load_distribution(value, m.variables)


def _write_trace(path: Path, run) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema: {TRACE_SCHEMA}; cycle: {','.join(run.cycle.order)}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "M", "Pi"])
        for t, (mv, pv) in enumerate(zip(run.m_trace, run.pi_trace)):
            w.writerow([t, repr(mv), repr(pv)])


def cmd_run(args) -> int:
    m = load_model(args.model)
    cfg = IcrConfig(
        tol_m=args.tol,
        tol_pi=args.tol_pi if args.tol_pi is not None else args.tol,
        max_cycles=args.max_cycles,
        init=_init_spec(args.init, m),
        seed=args.seed,
    )
    if args.cycle:
        cycles = [make_cycle(m, [s.strip() for s in args.cycle.split(",") if s.strip()])]
    else:
        cycles = enumerate_cycles(m, limit=CYCLE_CAP)
    runs = run_all(m, cycles or None, cfg, threads=args.threads)
    out = Path(args.out) if args.out else None
    index = []
    code = EXIT_OK
    for k, run in enumerate(runs):
        summary = {
            "cycle": list(run.cycle.order),
            "cycles_run": len(run.m_trace),
            "converged": run.converged,
            "stop_cycle": run.stop_cycle,
            "compatibility": run.compatibility,
            "M": run.m_trace[-1],
            "Pi": run.pi_trace[-1],
            "seconds": run.elapsed,
        }
        trace_path = None
        if args.trace:
            base = Path(args.trace)
            trace_path = base if len(runs) == 1 else base.with_name(f"{base.stem}_c{k}{base.suffix}")
        elif out:
            trace_path = out / f"trace_c{k}.csv"
        if trace_path:
            _write_trace(trace_path, run)
            summary["trace"] = str(trace_path)
        if not run.converged:
            code = EXIT_NONCONVERGED
        elif out:
            st = stationary_set(run)
            out.mkdir(parents=True, exist_ok=True)
            for i, (member, label) in enumerate(zip(st.members, st.labels)):
                name = f"stationary_c{k}_r{i}.json"
                (out / name).write_text(json.dumps(distribution_to_dict(member), indent=1))
                index.append({"file": name, "cycle": list(run.cycle.order), "rotation": list(label),
                              "compatibility": run.compatibility})
        _emit(summary)
        if code == EXIT_OK and args.expect_compatible and run.compatibility != COMPATIBLE:
            code = EXIT_INCOMPATIBLE if run.compatibility == INCOMPATIBLE else code
    if out and index:
        (out / "index.json").write_text(json.dumps(index, indent=1))
    if code == EXIT_NONCONVERGED:
        return _diag("NonConvergence", "at least one run did not converge", code)
    if code == EXIT_INCOMPATIBLE:
        return _diag("Incompatible", "the model is incompatible along at least one cycle", code)
    return code


def _safe_name(name: str) -> str:
    return name.replace("/", "__").replace("|", "_").replace("*", "s")


def cmd_plan(args) -> int:
    m = load_model(args.model)
    plan = load_plan(args.plan)
    cfg = IcrConfig(tol_m=args.tol, tol_pi=args.tol, max_cycles=args.max_cycles, seed=args.seed)
    outs = run_plan(m, plan, cfg)
    report = validate_sufficiency(m, plan)
    out = Path(args.out) if args.out else None
    index = []
    for o in outs:
        s, g = o.dist.names()
        rec = {"id": o.id, "phase": o.phase, "scope": s, "given": g,
               "tag": list(o.tag), "assumption_dependent": o.assumption_dependent}
        if out:
            out.mkdir(parents=True, exist_ok=True)
            name = f"{_safe_name(o.id)}.json"
            (out / name).write_text(json.dumps(distribution_to_dict(o.dist), indent=1))
            rec["file"] = name
            index.append(rec)
        _emit({"intermediate": rec})
    _emit({"sufficiency": report.as_dict()})
    if out:
        (out / "index.json").write_text(json.dumps(index, indent=1))
    return EXIT_OK


def cmd_ensemble(args) -> int:
    m = load_model(args.model)
    measure = measure_name(args.measure)
    cfg = IcrConfig(tol_m=args.tol, tol_pi=args.tol, max_cycles=args.max_cycles, seed=args.seed)
    if args.plan:
        ens = ensemble_from_plan(m, load_plan(args.plan), cfg)
    else:
        ens = collect_ensemble(m, cfg, threads=args.threads, limit=CYCLE_CAP)
    res = optimize_mixture(ens, m, measure, seed=args.seed or 0)
    result = {**res.as_dict(), "sources": [list(s) for s in ens.sources]}
    if args.grid and len(ens.members) <= 3:
        w, f = grid_search(ens, m, measure)
        result["grid"] = {"weights": w.tolist(), "deviance": f}
    result["mixture"] = distribution_to_dict(res.mixture)
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=1))
    _emit({k: v for k, v in result.items() if k != "mixture"})
    return EXIT_OK


def cmd_bench(args) -> int:
    m = load_model(args.model)
    order = [s.strip() for s in args.cycle.split(",")] if args.cycle else list(m.block_ids)
    reference = load_distribution(args.reference, m.variables) if args.reference else None
    seed = args.seed or 0

    def one(chain):
        return compare_report(
            m, order, reference, gs_n=args.gs_n, gs_burn_in=args.gs_burnin,
            batches=args.batches, seed=seed, chain=chain,
        )

    with ThreadPoolExecutor(max_workers=max(1, args.threads)) as pool:
        reports = list(pool.map(one, range(args.seeds)))
    text = reports[0].to_csv()
    # extra chains contribute only their GS rows, tagged with the chain number
    for k, rep in enumerate(reports[1:], start=1):
        text += "".join(f"gibbs-c{k}{line[5:]}\n" for line in rep.to_csv().splitlines() if line.startswith("gibbs,"))
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


# -- wiring ------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="icr", description="Iterative conditional replacement for discrete conditional models.")
    p.add_argument("--version", action="version", version=f"icr {__version__}")
    p.add_argument("--log-level", default="WARNING", choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    p.add_argument("--threads", type=int, default=1, help="max concurrent independent runs")
    p.add_argument("--seed", type=int, default=None)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    v = sub.add_parser("validate", help="check a model file")
    v.add_argument("model")
    v.add_argument("--plan", help="also lint a synthesis plan")
    v.set_defaults(func=cmd_validate)

    c = sub.add_parser("cycles", help="list permissible updating cycles")
    c.add_argument("model")
    c.add_argument("--limit", type=int, default=None)
    c.add_argument("--edges", action="store_true", help="also print every pairwise edge check")
    c.set_defaults(func=cmd_cycles)

    r = sub.add_parser("run", help="run ICR")
    r.add_argument("model")
    r.add_argument("--cycle", help="comma-separated block ids")
    r.add_argument("--all-cycles", action="store_true", help="run every permissible cycle (default)")
    r.add_argument("--tol", type=float, default=1e-10)
    r.add_argument("--tol-pi", type=float, default=None)
    r.add_argument("--max-cycles", type=int, default=10000)
    r.add_argument("--init", default="uniform", help="uniform, block, random or a distribution JSON file")
    r.add_argument("--trace", help="CSV path for the M/Pi traces")
    r.add_argument("--out", help="directory for stationary distributions")
    r.add_argument("--expect-compatible", action="store_true")
    r.set_defaults(func=cmd_run)

    pl = sub.add_parser("plan", help="execute a synthesis plan")
    pl.add_argument("model")
    pl.add_argument("plan")
    pl.add_argument("--out")
    pl.add_argument("--tol", type=float, default=1e-10)
    pl.add_argument("--max-cycles", type=int, default=10000)
    pl.set_defaults(func=cmd_plan)

    e = sub.add_parser("ensemble", help="optimise a mixture of stationary joints")
    e.add_argument("model")
    e.add_argument("--measure", default="kl", choices=["kl", "x2", "f2"])
    e.add_argument("--plan", help="build members by running this plan")
    e.add_argument("--out")
    e.add_argument("--grid", action="store_true", help="also report a grid-search check")
    e.add_argument("--tol", type=float, default=1e-10)
    e.add_argument("--max-cycles", type=int, default=10000)
    e.set_defaults(func=cmd_ensemble)

    b = sub.add_parser("bench", help="compare ICR, power method and Gibbs sampling")
    b.add_argument("model")
    b.add_argument("--cycle")
    b.add_argument("--reference", help="reference joint JSON")
    b.add_argument("--gs-n", type=int, default=1_000_000)
    b.add_argument("--gs-burnin", type=int, default=100_000)
    b.add_argument("--batches", type=int, default=5)
    b.add_argument("--seeds", type=int, default=1, help="independent Gibbs chains")
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _diag("UsageError", str(exc), EXIT_USAGE)
    if args.threads < 1:
        return _diag("UsageError", "--threads must be >= 1", EXIT_USAGE)
    logging.basicConfig(level=getattr(logging, args.log_level), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except IcrError as exc:
        return _diag(type(exc).__name__, str(exc), _exit_code(exc))


if __name__ == "__main__":
    sys.exit(main())
