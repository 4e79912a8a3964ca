"""Command-line interface.

Subcommands: ``solve`` (SDPA sparse file), ``maxcut`` (edge list),
``complete`` (observation triples), ``bench`` (manifest of instances).
Heavy imports happen inside ``main`` so that ``--threads`` can pin the BLAS
thread pools through environment variables before numpy loads.

``--threads 1`` selects the deterministic mode: one BLAS thread, and the
timing/memory fields of the report are zeroed so that repeated runs with the
same seed produce byte-identical report files.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

_EXIT_OPTIMAL = 0
_EXIT_NOT_OPTIMAL = 1
_EXIT_USAGE = 2


def _peek_threads(argv):
    for i, a in enumerate(argv):
        if a == "--threads" and i + 1 < len(argv):
            try:
                return int(argv[i + 1])
            except ValueError:
                return None
        if a.startswith("--threads="):
            try:
                return int(a.split("=", 1)[1])
            except ValueError:
                return None
    return None


def _configure_threads(threads):
    if threads is None or threads < 1:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        os.environ[var] = str(threads)


def _build_parser():
    parser = argparse.ArgumentParser(prog="lrsdp",
                                     description="Low-rank two-stage SDP solver")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--eps", type=float, default=1e-5, help="stopping tolerance")
        p.add_argument("--reopt-level", type=int, default=1, choices=(0, 1, 2),
                       help="0: primal stop; 1: + gap; 2: + dual infeasibility")
        p.add_argument("--max-reopts", type=int, default=5)
        p.add_argument("--time-limit", type=float, default=10000.0, help="seconds")
        p.add_argument("--rank", type=int, default=None, help="initial rank override")
        p.add_argument("--seed", type=int, default=None,
                       help="RNG seed (default: LORASDP_SEED env var, else 0)")
        p.add_argument("--threads", type=int, default=None,
                       help="BLAS thread cap; 1 selects deterministic mode")
        p.add_argument("--out", default="report.json", help="JSON report path")
        p.add_argument("--trace", default=None, help="per-iteration CSV trace path")

    for name, help_text, arg in (
            ("solve", "solve an SDPA sparse .dat-s file", "file"),
            ("maxcut", "solve the MaxCut relaxation of an edge list", "file"),
            ("complete", "solve a matrix-completion instance", "file")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument(arg)
        add_common(p)

    p = sub.add_parser("bench", help="run a manifest of instances, emit CSV")
    p.add_argument("manifest")
    add_common(p)
    return parser


def _load_problem(kind, path):
    from . import problem as pr
    with open(path, "r") as fh:
        text = fh.read()
    if kind == "solve" or kind == "sdpa":
        return pr.parse_sdpa(text)
    if kind == "maxcut":
        return pr.build_maxcut(pr.read_edge_list(text))
    if kind == "complete":
        return pr.build_matrix_completion(pr.read_observations(text))
    raise ValueError(f"unknown instance kind {kind!r}")


def _make_config(args):
    from .driver import SolverConfig
    seed = args.seed
    if seed is None:
        seed = int(os.environ.get("LORASDP_SEED", "0"))
    return SolverConfig(eps=args.eps, reopt_level=args.reopt_level,
                        max_reopts=args.max_reopts, time_limit=args.time_limit,
                        rank_init=args.rank, seed=seed,
                        deterministic=(args.threads == 1))


def _write_report(report, path):
    with open(path, "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=2)
        fh.write("\n")


def _write_trace(report, path):
    import csv
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["stage", "iter", "objective", "err1",
                         "grad_or_cg_resid", "rho", "rank", "elapsed_s"])
        for row in report.trace_rows:
            writer.writerow([row[0], row[1]] + [repr(x) for x in row[2:7]] + [repr(row[7])])


def _status_exit(status):
    return _EXIT_OPTIMAL if status == "optimal" else _EXIT_NOT_OPTIMAL


def _run_single(args):
    from .driver import solve
    try:
        prob = _load_problem(args.command, args.file)
    except Exception as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_USAGE
    cfg = _make_config(args)
    report = solve(prob, cfg)
    _write_report(report, args.out)
    if args.trace:
        _write_trace(report, args.trace)
    err2 = "n/a" if report.err2 is None else f"{report.err2:.3e}"
    print(f"status       {report.status}")
    print(f"objective    {report.objective:.10g}")
    print(f"errors       err1={report.err1:.3e} err2={err2} err3={report.err3:.3e}")
    print(f"rank         {report.rank_final} (history {report.rank_history})")
    print(f"re-opt       {report.reopt_rounds} rounds")
    print(f"time         {report.time_total_s:.3f}s "
          f"(alm {report.time_alm_s:.3f}s, admm {report.time_admm_s:.3f}s)")
    print(f"report       {args.out}")
    return _status_exit(report.status)


def _run_bench(args):
    from .driver import solve
    entries = []
    try:
        with open(args.manifest) as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.strip()
                if not line or line.startswith("#"):
                    continue
                toks = line.split()
                if len(toks) < 2:
                    print(f"error: manifest line {lineno}: expected 'kind path [name]'",
                          file=sys.stderr)
                    return _EXIT_USAGE
                kind, path = toks[0], toks[1]
                name = toks[2] if len(toks) > 2 else os.path.basename(path)
                entries.append((kind, path, name))
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return _EXIT_USAGE

    out = args.out if args.out != "report.json" else "bench_results.csv"
    scaling_path = os.path.splitext(out)[0] + "_scaling.csv"
    rows = []
    worst = _EXIT_OPTIMAL
    for kind, path, name in entries:
        try:
            prob = _load_problem(kind, path)
        except Exception as exc:
            print(f"error loading {name}: {exc}", file=sys.stderr)
            return _EXIT_USAGE
        cfg = _make_config(args)
        t0 = time.perf_counter()
        report = solve(prob, cfg)
        elapsed = time.perf_counter() - t0
        err_max = max(x for x in (report.err1, report.err2 or 0.0, report.err3))
        rows.append((name, prob.n, prob.m, elapsed, err_max))
        worst = max(worst, _status_exit(report.status))
        print(f"{name}: n={prob.n} m={prob.m} status={report.status} "
              f"time={elapsed:.2f}s err_max={err_max:.3e}")

    with open(out, "w") as fh:
        fh.write("name,n,m,time,err_max\n")
        for name, n, m, elapsed, err_max in rows:
            fh.write(f"{name},{n},{m},{elapsed:.6f},{err_max:.6e}\n")
    with open(scaling_path, "w") as fh:
        fh.write("n,time\n")
        for _, n, _, elapsed, _ in rows:
            fh.write(f"{n},{elapsed:.6f}\n")
    print(f"wrote {out} and {scaling_path}")
    return worst


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    _configure_threads(_peek_threads(argv))
    args = _build_parser().parse_args(argv)
    if args.command == "bench":
        return _run_bench(args)
    return _run_single(args)


if __name__ == "__main__":
    sys.exit(main())
