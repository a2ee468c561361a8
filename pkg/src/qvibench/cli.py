"""Command-line harness: ``qvibench run|profile|rate|list``.

Exit codes are a stable contract: 0 success, 2 usage or configuration
error, 3 I/O error.  Results use the CSV schema in :data:`CSV_HEADER` (or a
JSON document with the same fields); ``time_ms`` is wall time from a
monotonic clock and depends on the machine.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .core import ContractionParams, QviError, gamma_interval
from .metrics import (
    EocUndefinedError,
    Metric,
    RunRecord,
    eoc,
    performance_ratios,
    profile_curve,
    rate_report,
)
from .problems import SUITE_ORDER, builtin_problem, builtin_suite, load_problem
from .solvers import Algorithm, Schedule, SolverConfig, solve

log = logging.getLogger("qvibench")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3

SCHEMA = "qvibench-results/1"
CSV_HEADER = ("problem", "start_id", "solver", "iters", "time_ms", "opt", "feas", "status", "eoc")
MAX_JOBS = 64
PROFILE_POINTS = 50


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


# -- problem and solver selection ---------------------------------------------


def resolve_problems(specs) -> list:
    """``builtin`` expands to the suite; other entries are builtin names or file paths."""
    out = []
    for spec in specs:
        if spec == "builtin":
            out.extend(builtin_suite())
        elif spec in SUITE_ORDER:
            out.append(builtin_problem(spec))
        else:
            try:
                out.append(load_problem(spec))
            except OSError as exc:
                raise UsageError(f"cannot read problem {spec!r}: {exc.strerror or exc}") from exc
            except QviError as exc:
                raise UsageError(str(exc)) from exc
    names = [p.name for p in out]
    dup = {n for n in names if names.count(n) > 1}
    if dup:
        raise UsageError(f"problem names must be unique, repeated: {', '.join(sorted(dup))}")
    if not out:
        raise UsageError("no problems selected")
    return out


def resolve_solvers(text: str) -> list[Algorithm]:
    tags = [t.strip() for t in text.split(",") if t.strip()]
    if tags == ["all"]:
        return list(Algorithm)
    known = {a.value: a for a in Algorithm}
    out = []
    for t in tags:
        if t not in known:
            raise UsageError(f"unknown solver tag {t!r} (known: {', '.join(known)}, all)")
        if known[t] not in out:
            out.append(known[t])
    if not out:
        raise UsageError("no solvers selected")
    return out


def _schedule(text):
    if text is None:
        return None
    try:
        return Schedule.parse(text)
    except QviError as exc:
        raise UsageError(str(exc)) from exc


def resolve_jobs(arg) -> int:
    if arg is None:
        env = os.environ.get("QVIBENCH_JOBS")
        if env is None:
            return 1
        try:
            arg = int(env)
        except ValueError as exc:
            raise UsageError(f"QVIBENCH_JOBS must be an integer, got {env!r}") from exc
    if arg < 1:
        raise UsageError(f"jobs must be at least 1, got {arg}")
    return min(arg, MAX_JOBS)


# -- run ----------------------------------------------------------------------


def _run_cell(cell) -> RunRecord:
    problem, start_id, config = cell
    trace = solve(problem, config, problem.starts[start_id])
    try:
        e = eoc(trace)
    except EocUndefinedError:
        e = math.nan
    return RunRecord(problem.name, start_id, config.algorithm.value, trace.iters,
                     trace.elapsed * 1e3, trace.opt, trace.feas, trace.status.value, e)


def run_benchmark(problems, configs, jobs: int = 1) -> list[RunRecord]:
    """Every (problem, start, solver) cell, in that nesting order regardless of `jobs`."""
    cells = [(p, i, c) for p in problems for i in range(len(p.starts)) for c in configs]
    if jobs == 1 or len(cells) == 1:
        return [_run_cell(c) for c in cells]
    with ProcessPoolExecutor(max_workers=min(jobs, len(cells))) as pool:
        return list(pool.map(_run_cell, cells, chunksize=max(1, len(cells) // (4 * jobs))))


def _fmt(v: float) -> str:
    return repr(float(v)) if math.isfinite(v) else ("nan" if math.isnan(v) else str(v))


def records_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_HEADER)
    for r in records:
        w.writerow([r.problem, r.start_id, r.solver, r.iters, f"{r.time_ms:.3f}",
                    _fmt(r.final_opt), _fmt(r.final_feas), r.status, _fmt(r.eoc)])
    return buf.getvalue()


def _json_num(v: float):
    return v if math.isfinite(v) else _fmt(v)


def records_to_json(records) -> str:
    rows = [{"problem": r.problem, "start_id": r.start_id, "solver": r.solver, "iters": r.iters,
             "time_ms": round(r.time_ms, 3), "opt": _json_num(r.final_opt),
             "feas": _json_num(r.final_feas), "status": r.status, "eoc": _json_num(r.eoc)}
            for r in records]
    return json.dumps({"schema": SCHEMA, "columns": list(CSV_HEADER), "rows": rows}, indent=1) + "\n"


def _row_to_record(row: dict, where: str) -> RunRecord:
    try:
        return RunRecord(
            problem=str(row["problem"]),
            start_id=int(row["start_id"]),
            solver=str(row["solver"]),
            iters=int(row["iters"]),
            time_ms=float(row["time_ms"]),
            final_opt=float(row["opt"]),
            final_feas=float(row["feas"]),
            status=str(row["status"]),
            eoc=float(row["eoc"]) if row.get("eoc") not in (None, "") else math.nan,
        )
    except KeyError as exc:
        raise UsageError(f"{where}: missing column {exc.args[0]!r}") from exc
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{where}: {exc}") from exc


def parse_results(text: str) -> list[RunRecord]:
    """Records from CSV or JSON results text (format detected from the content)."""
    if text.lstrip().startswith("{"):
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise UsageError(f"results JSON, line {exc.lineno}: {exc.msg}") from exc
        if not isinstance(doc, dict) or doc.get("schema") != SCHEMA or not isinstance(doc.get("rows"), list):
            raise UsageError(f"results JSON must have schema {SCHEMA!r} and a rows array")
        return [_row_to_record(r if isinstance(r, dict) else {}, f"row {i}")
                for i, r in enumerate(doc["rows"])]
    reader = csv.DictReader(io.StringIO(text))
    if tuple(reader.fieldnames or ()) != CSV_HEADER:
        raise UsageError(f"results CSV header must be {','.join(CSV_HEADER)}")
    return [_row_to_record(r, f"line {i + 2}") for i, r in enumerate(reader)]


def _write(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def cmd_run(args) -> int:
    problems = resolve_problems(args.problems)
    algorithms = resolve_solvers(args.solvers)
    jobs = resolve_jobs(args.jobs)
    overrides = dict(gamma=args.gamma, tol=args.tol, max_iter=args.max_iter,
                     theta=_schedule(args.theta), alpha=_schedule(args.alpha),
                     beta=_schedule(args.beta))
    configs = []
    for a in algorithms:
        try:
            configs.append(SolverConfig.default(a, **overrides))
        except QviError as exc:
            raise UsageError(f"{a.value}: {exc}") from exc
    records = run_benchmark(problems, configs, jobs)
    text = records_to_csv(records) if args.format == "csv" else records_to_json(records)
    _write(args.out, text)
    return EXIT_OK


# -- profile ------------------------------------------------------------------


def profile_grid(ratios, points: int = PROFILE_POINTS) -> np.ndarray:
    """Log-spaced ``T`` over ``[1, max finite ratio]`` joined with every finite ratio."""
    r = ratios.r[np.isfinite(ratios.r)]
    top = float(r.max()) if r.size else 1.0
    grid = np.geomspace(1.0, top, points) if top > 1.0 else np.array([1.0])
    grid = np.union1d(grid, r)
    return grid[grid >= 1.0]


def cmd_profile(args) -> int:
    try:
        text = Path(args.results).read_text(encoding="utf-8")
    except OSError as exc:
        print(f"error: cannot read {args.results}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_IO
    records = parse_results(text)
    if not records:
        raise UsageError("results file holds no rows")
    try:
        ratios = performance_ratios(records, Metric(args.metric))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    for inst in ratios.excluded:
        print(f"warning: instance {inst[0]}:{inst[1]} excluded, every solver failed", file=sys.stderr)
    if not ratios.instances:
        raise UsageError("no instance was solved by any solver")
    grid = profile_grid(ratios, args.points)
    curves = [profile_curve(ratios, s, grid) for s in ratios.solvers]

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("solver", "T", "rho"))
    for c in curves:
        for T, rho in c.points:
            w.writerow((c.solver, repr(T), repr(rho)))
    _write(args.out, buf.getvalue())

    if args.gnuplot:
        lines = [f"# performance profile, metric={args.metric}, {len(ratios.instances)} instances",
                 "# T " + " ".join(c.solver for c in curves)]
        for j, T in enumerate(grid):
            lines.append(" ".join([repr(float(T))] + [repr(c.points[j][1]) for c in curves]))
        Path(args.gnuplot).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return EXIT_OK


# -- rate ---------------------------------------------------------------------


def cmd_rate(args) -> int:
    (problem,) = resolve_problems([args.problem])
    algorithm = resolve_solvers(args.solver)[0]
    if algorithm not in (Algorithm.PROPOSED, Algorithm.GRADPROJ):
        raise UsageError(f"rate verification covers proposed and gradproj, not {algorithm.value!r}")
    cert = problem.certified
    if cert is None:
        raise UsageError(
            f"{problem.name} has no certified contraction parameters: the lambda condition "
            "lambda + sqrt(1 - mu²/L²) < 1 fails. Use a feasible map with a smaller lambda "
            "or an operator with a larger mu/L."
        )
    if problem.reference is None:
        raise UsageError(f"{problem.name} has no reference solution; add a 'reference' field")
    lo, hi = gamma_interval(cert.mu, cert.lip, cert.lam)
    gamma = cert.gamma if args.gamma is None else args.gamma
    if not (max(lo, 0.0) < gamma < hi):
        raise UsageError(f"gamma = {gamma:.12g} lies outside the admissible interval "
                         f"({max(lo, 0.0):.12g}, {hi:.12g})")
    theta = cert.a if args.theta is None else args.theta
    if not 0.0 < theta < 1.0:
        raise UsageError(f"theta must lie in (0, 1), got {theta!r}")
    if not 0 <= args.start < len(problem.starts):
        raise UsageError(f"start index {args.start} out of range 0..{len(problem.starts) - 1}")
    params = ContractionParams(cert.mu, cert.lip, cert.lam, gamma, theta, theta)
    cfg = SolverConfig(algorithm, gamma=gamma, theta=Schedule.constant(theta), tol=None,
                       max_iter=args.max_iter)
    trace = solve(problem, cfg, problem.starts[args.start])
    if trace.iters < 5:
        raise UsageError(f"run stopped after {trace.iters} iterations ({trace.message})")
    rho = params.beta ** 2 if algorithm is Algorithm.GRADPROJ else None
    rep = rate_report(trace, problem.reference, params, rho=rho)
    out = {"problem": problem.name, "solver": algorithm.value, "gamma": gamma}
    if algorithm is Algorithm.PROPOSED:
        out["theta"] = theta
    out.update(rep.to_dict())
    err = [float((r.x - problem.reference) @ (r.x - problem.reference)) for r in trace.records]
    hit = next((i + 1 for i, e in enumerate(err) if e <= 1e-28), None)
    if hit is not None and hit <= 2:
        out["note"] = "converged in <= 2 iters"
    print(json.dumps(out, indent=1))
    return EXIT_OK


# -- list ---------------------------------------------------------------------


def catalog_rows(problems) -> list[dict]:
    rows = []
    for p in problems:
        op = p.operator
        try:
            lo, hi = gamma_interval(op.mu, op.lip, p.lam)
            interval = (max(lo, 0.0), hi)
        except QviError:
            interval = None
        rows.append({"name": p.name, "n": p.n, "lambda": p.lam, "mu": op.mu, "L": op.lip,
                     "gamma_interval": interval, "starts": len(p.starts)})
    return rows


def cmd_list(args) -> int:
    rows = catalog_rows(builtin_suite())
    print(f"{'name':<12} {'n':>4} {'lambda':>7} {'mu':>7} {'L':>7}  {'gamma interval':<20} {'starts':>6}")
    for r in rows:
        iv = "-" if r["gamma_interval"] is None else "({:.4g}, {:.4g})".format(*r["gamma_interval"])
        print(f"{r['name']:<12} {r['n']:>4} {r['lambda']:>7.4g} {r['mu']:>7.4g} {r['L']:>7.4g}  "
              f"{iv:<20} {r['starts']:>6}")
    return EXIT_OK


# -- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="qvibench", description="Benchmark projection solvers for QVIs.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run solvers over problems and write results")
    r.add_argument("--problems", nargs="+", default=["builtin"],
                   help="'builtin', builtin problem names or problem files")
    r.add_argument("--solvers", default="all", help="comma-separated tags or 'all'")
    r.add_argument("--gamma", type=float)
    r.add_argument("--tol", type=float)
    r.add_argument("--max-iter", type=int)
    r.add_argument("--theta", help="schedule: 0.5, 1/3 or p,q,r,s for (pk+q)/(rk+s)")
    r.add_argument("--alpha", help="schedule, as --theta")
    r.add_argument("--beta", help="schedule, as --theta")
    r.add_argument("--jobs", type=int, help=f"worker processes (default $QVIBENCH_JOBS or 1, cap {MAX_JOBS})")
    r.add_argument("--out", default="-", help="output file ('-' for stdout)")
    r.add_argument("--format", choices=("csv", "json"), default="csv")
    r.set_defaults(func=cmd_run)

    p = sub.add_parser("profile", help="performance profiles from a results file")
    p.add_argument("results")
    p.add_argument("--metric", choices=[m.value for m in Metric], default="iters")
    p.add_argument("--points", type=int, default=PROFILE_POINTS, help="log-spaced grid points")
    p.add_argument("--out", default="-", help="profile CSV (solver,T,rho); '-' for stdout")
    p.add_argument("--gnuplot", help="also write a whitespace table: T then one column per solver")
    p.set_defaults(func=cmd_profile)

    t = sub.add_parser("rate", help="check a run against the linear-rate bound")
    t.add_argument("--problem", required=True, help="builtin name or problem file")
    t.add_argument("--solver", default="proposed", help="proposed or gradproj")
    t.add_argument("--gamma", type=float, help="step size (default: the certified one)")
    t.add_argument("--theta", type=float, help="constant theta (default: the certified bound)")
    t.add_argument("--start", type=int, default=0, help="start point index")
    t.add_argument("--max-iter", type=int, default=200)
    t.set_defaults(func=cmd_rate)

    ls = sub.add_parser("list", help="catalogue of builtin problems")
    ls.set_defaults(func=cmd_list)
    return ap


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        args = build_parser().parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc.strerror or exc}: {getattr(exc, 'filename', '') or ''}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
