"""Command-line front end.

Subcommands
-----------
allocate   : run one allocation scheme on a scenario config (JSON) and write
             the allocation and per-user rate CSVs.
simulate   : run a sweep preset or a SweepSpec JSON and write result CSVs.
fit-table  : regenerate the rational-approximation coefficient table and
             report fit quality against the shipped reference constants.
bench      : time the allocators and collect instrumented operation counts.

Every command writes a JSON manifest next to its outputs recording the
command, parameters, seed, package version and output paths. All randomness
flows from --seed (default 0); rate outputs are scaled by the configured
subchannel bandwidth to Mbit/s in the printed summary, while CSV rates stay
in bits/s/Hz.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import __version__, allocators, sim, specfun
from .allocators import AllocationError
from .model import NetworkConfig
from .quartic import QuarticSolveError
from .rates import system_rate

_EXIT_OK = 0
_EXIT_USAGE = 2
_EXIT_FAILED = 3


def _write_manifest(out_dir: Path, command: str, params: dict, outputs: list[Path]) -> Path:
    manifest = {
        "command": command,
        "params": params,
        "tool_version": __version__,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime()),
        "outputs": [str(p) for p in outputs],
    }
    path = out_dir / "manifest.json"
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path


def cmd_allocate(args) -> int:
    try:
        cfg = NetworkConfig.from_json(args.config)
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"allocate: bad config {args.config}: {exc}", file=sys.stderr)
        return _EXIT_USAGE
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    diagnostics = [] if args.debug_quartic else None
    try:
        if args.scheme == "pas1" and diagnostics is not None:
            alloc = allocators.pas1(cfg, collect_problems=diagnostics)
        else:
            alloc = allocators.get(args.scheme)(cfg)
    except (AllocationError, QuarticSolveError, ValueError) as exc:
        print(f"allocate: scheme {args.scheme} failed: {exc}", file=sys.stderr)
        return _EXIT_FAILED
    report = system_rate(cfg, alloc)
    alloc_csv = out / "allocation.csv"
    rates_csv = out / "rates.csv"
    alloc.to_csv(alloc_csv)
    report.to_csv(rates_csv)
    outputs = [alloc_csv, rates_csv]
    if diagnostics is not None:
        dbg = out / "quartic_debug.json"
        with open(dbg, "w") as fh:
            json.dump(diagnostics, fh, indent=2)
        outputs.append(dbg)
    _write_manifest(out, "allocate", {
        "config": cfg.to_dict(), "scheme": args.scheme, "seed": args.seed,
    }, outputs)
    mbit = report.system_rate * cfg.bandwidth_hz / 1e6
    print(f"scheme={args.scheme} system_rate={report.system_rate:.6f} bit/s/Hz "
          f"({mbit:.3f} Mbit/s at {cfg.bandwidth_hz:.0f} Hz), "
          f"iterations={alloc.iterations}, capped={sorted(alloc.capped_users)}, "
          f"shortfall={alloc.shortfall:.3g}")
    if alloc.message:
        print(f"note: {alloc.message}")
    return _EXIT_OK


def _apply_overrides(spec: sim.SweepSpec, args) -> sim.SweepSpec:
    updates = {"seed": args.seed}
    if args.trials is not None:
        updates["trials"] = args.trials
    if args.realizations is not None:
        updates["realizations"] = args.realizations
    return replace(spec, **updates)


def cmd_simulate(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if (args.preset is None) == (args.spec is None):
        print("simulate: give exactly one of --preset or --spec", file=sys.stderr)
        return _EXIT_USAGE
    if args.preset is not None:
        try:
            loaded = sim.preset(args.preset)
        except sim.SimulationError as exc:
            print(f"simulate: {exc}", file=sys.stderr)
            return _EXIT_USAGE
        if isinstance(loaded, tuple) and loaded[0] == "bench":
            return _run_bench(out, args, "simulate", **loaded[1])
        specs = loaded
    else:
        try:
            with open(args.spec) as fh:
                specs = [sim.SweepSpec.from_dict(json.load(fh))]
        except (OSError, TypeError, json.JSONDecodeError, sim.SimulationError) as exc:
            print(f"simulate: bad spec {args.spec}: {exc}", file=sys.stderr)
            return _EXIT_USAGE
    specs = [_apply_overrides(s, args) for s in specs]
    results = []
    try:
        for s in specs:
            results.append(sim.run_sweep(s, workers=args.workers))
    except sim.SimulationError as exc:
        print(f"simulate: {exc}", file=sys.stderr)
        return _EXIT_FAILED
    results_csv = out / "results.csv"
    timings_csv = out / "timings.csv"
    _concat_csv(results_csv, [(r, False) for r in results])
    _concat_timings(timings_csv, results)
    _write_manifest(out, "simulate", {
        "preset": args.preset, "spec": [s.to_dict() for s in specs],
        "seed": args.seed, "workers": args.workers,
        "failures": sum(r.failures for r in results),
        "attempts": sum(r.attempts for r in results),
    }, [results_csv, timings_csv])
    for r in results:
        for row in r.rows:
            print(f"{row.label or '-'} value={row.sweep_value:g} {row.scheme}: "
                  f"rate={row.mean_rate:.4f} +/- {row.std_error:.4f} "
                  f"(mc {row.mc_rate:.4f}) K={row.mean_K:.2f}")
    return _EXIT_OK


def _concat_csv(path: Path, results) -> None:
    first = True
    with open(path, "w", newline="") as fh:
        for result, include_timing in results:
            cols = [c for c in sim._CSV_COLUMNS if include_timing or c != "wall_clock_ms"]
            w = csv.writer(fh)
            if first:
                w.writerow(cols)
                first = False
            for r in result.rows:
                w.writerow([getattr(r, c) if isinstance(getattr(r, c), str)
                            else repr(getattr(r, c)) for c in cols])


def _concat_timings(path: Path, results) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["label", "sweep_value", "scheme", "wall_clock_ms"])
        for result in results:
            for r in result.rows:
                w.writerow([r.label, repr(r.sweep_value), r.scheme, repr(r.wall_clock_ms)])


def _run_bench(out: Path, args, command: str, M_values=(10, 25, 50, 100),
               repetitions: int = 5) -> int:
    result = sim.bench(M_values, repetitions=repetitions, seed=args.seed)
    bench_csv = out / "bench.csv"
    result.to_csv(bench_csv)
    _write_manifest(out, command, {
        "M_values": list(M_values), "repetitions": repetitions, "seed": args.seed,
    }, [bench_csv])
    for r in result.rows:
        print(f"M={r.M} {r.scheme}: median {r.median_ms:.3f} ms, K={r.mean_K:.2f}")
    return _EXIT_OK


def cmd_bench(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        m_values = tuple(int(v) for v in args.m_values.split(","))
    except ValueError:
        print(f"bench: bad --m-values {args.m_values!r}", file=sys.stderr)
        return _EXIT_USAGE
    return _run_bench(out, args, "bench", M_values=m_values,
                      repetitions=args.repetitions)


def cmd_fit_table(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    n = args.samples
    rows = []
    for ref in specfun.REFERENCE_TABLE:
        res = specfun.fit_coeffs(ref.range_lo_db, ref.range_hi_db, n)
        ref_residual = specfun.residual_sum(ref, n)
        rows.append((res, ref, ref_residual))
        if not res.converged:
            print(f"fit-table: range [{ref.range_lo_db}, {ref.range_hi_db}] dB "
                  f"did not converge after {res.iterations} iterations",
                  file=sys.stderr)
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["range_lo_db", "range_hi_db", "a", "b", "c", "residual",
                    "rmse", "rmse_alt", "converged",
                    "ref_a", "ref_b", "ref_c", "ref_residual"])
        for res, ref, ref_residual in rows:
            c = res.coeffs
            w.writerow([
                c.range_lo_db, c.range_hi_db, repr(c.a), repr(c.b), repr(c.c),
                repr(res.residual), repr(specfun.rmse_mean(res.residual, n)),
                repr(specfun.rmse_alt(res.residual, n)), res.converged,
                repr(ref.a), repr(ref.b), repr(ref.c), repr(ref_residual),
            ])
    _write_manifest(out.parent, "fit-table", {"samples": n, "seed": args.seed},
                    [out])
    for res, ref, ref_residual in rows:
        c = res.coeffs
        print(f"[{c.range_lo_db:+.0f},{c.range_hi_db:+.0f}] dB: "
              f"a={c.a:.6g} b={c.b:.6g} c={c.c:.6g} residual={res.residual:.3g} "
              f"(reference {ref_residual:.3g}) rmse={specfun.rmse_mean(res.residual, n):.3g}")
    return _EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="relayalloc",
                                description="relay power allocation toolkit")
    p.add_argument("--version", action="version", version=f"relayalloc {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    pa = sub.add_parser("allocate", help="run one allocation scheme on a config")
    pa.add_argument("--config", required=True, help="NetworkConfig JSON path")
    pa.add_argument("--scheme", required=True, choices=allocators.SCHEMES)
    pa.add_argument("--out", required=True, help="output directory")
    pa.add_argument("--seed", type=int, default=0)
    pa.add_argument("--debug-quartic", action="store_true",
                    help="dump per-user solver intermediates (pas1)")
    pa.set_defaults(fn=cmd_allocate)

    ps = sub.add_parser("simulate", help="run a sweep preset or SweepSpec JSON")
    ps.add_argument("--preset", choices=sim.PRESET_NAMES)
    ps.add_argument("--spec", help="SweepSpec JSON path")
    ps.add_argument("--out", required=True, help="output directory")
    ps.add_argument("--seed", type=int, default=0)
    ps.add_argument("--workers", type=int, default=1)
    ps.add_argument("--trials", type=int, default=None)
    ps.add_argument("--realizations", type=int, default=None)
    ps.set_defaults(fn=cmd_simulate)

    pf = sub.add_parser("fit-table", help="regenerate the coefficient table")
    pf.add_argument("--out", required=True, help="output CSV path")
    pf.add_argument("--samples", type=int, default=10_000)
    pf.add_argument("--seed", type=int, default=0)
    pf.set_defaults(fn=cmd_fit_table)

    pb = sub.add_parser("bench", help="time the allocators")
    pb.add_argument("--m-values", default="10,25,50,100")
    pb.add_argument("--repetitions", type=int, default=5)
    pb.add_argument("--out", required=True, help="output directory")
    pb.add_argument("--seed", type=int, default=0)
    pb.set_defaults(fn=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
