"""Command-line interface: ``tts-opt run | rates | plot | verify``."""
from __future__ import annotations

import argparse
import glob as globlib
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import diagnostics, runio
from ._backend import backend as active_backend
from .config import bundled_configs, load_config
from .errors import Aborted, ConfigError, InsufficientData, TTSError

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_ABORTED = 0, 1, 2, 3
THREADS_VAR = "TTS_OPT_THREADS"


def _err(msg):
    print(f"tts-opt: {msg}", file=sys.stderr)


def _workers(n_jobs: int) -> int:
    raw = os.environ.get(THREADS_VAR)
    if raw:
        try:
            cap = max(1, int(raw))
        except ValueError:
            raise ConfigError(f"{THREADS_VAR} must be an integer, got {raw!r}") from None
    else:
        cap = os.cpu_count() or 1
    return max(1, min(cap, n_jobs))


# --- run ----------------------------------------------------------------------


def cmd_run(args) -> int:
    from .experiments import Experiment

    try:
        cfg = load_config(args.config)
        exp = Experiment(cfg)
        workers = _workers(len(cfg.seeds))
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    out_dir = Path(args.out or cfg.output_dir)
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        _err(f"cannot create {out_dir}: {exc}")
        return EXIT_CONFIG

    t0 = time.perf_counter()
    # each seed owns its RNG stream, so worker count never changes results
    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = list(pool.map(exp.run_seed, cfg.seeds))
    wall = time.perf_counter() - t0

    written, failed = [], []
    for out in outcomes:
        path = out_dir / f"seed_{out.seed}.csv"
        if out.ok:
            runio.write_csv(out.records, path)
            written.append(path.name)
            continue
        failed.append(out)
        if args.keep_partial:
            runio.write_csv(out.records, path)
            written.append(path.name)
        elif path.exists():
            path.unlink()
    status = "ok" if not failed else "aborted"
    extra = {"burn_in": exp.burn_in}
    if failed:
        extra["failures"] = [{"seed": o.seed, "k": getattr(o.error, "k", None),
                              "error": str(o.error)} for o in failed]
    runio.write_manifest(out_dir / "manifest.json", cfg.raw, written, wall, active_backend(),
                         status, extra)
    for o in failed:
        kind = "aborted" if isinstance(o.error, Aborted) else "failed"
        _err(f"seed {o.seed} {kind}: {o.error}")
    print(f"{len(written)} run file(s) in {out_dir} ({wall:.2f} s, backend {active_backend()})")
    return EXIT_ABORTED if failed else EXIT_OK


# --- rates --------------------------------------------------------------------


def _load_runs(pattern: str) -> dict:
    paths = sorted(globlib.glob(pattern))
    if not paths:
        raise FileNotFoundError(f"no files match {pattern!r}")
    return {p: runio.read_csv(p) for p in paths}


def _manifest_burn_in(path):
    man = Path(path).parent / "manifest.json"
    try:
        value = json.loads(man.read_text()).get("burn_in")
    except (OSError, ValueError, AttributeError):
        return None
    return int(value) if isinstance(value, int) else None


def _burn_in(args, path, recs) -> int:
    """Explicit flag, then the run's manifest, then the step-size rule."""
    if args.burn_in is not None:
        return args.burn_in
    from_manifest = _manifest_burn_in(path)
    if from_manifest is not None:
        return from_manifest
    return diagnostics.burn_in_from_records(recs)


def cmd_rates(args) -> int:
    try:
        runs = _load_runs(args.pattern)
    except (OSError, runio.MalformedRow) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    rows = []
    for path, recs in runs.items():
        burn = _burn_in(args, path, recs)
        row = {"file": path, "burn_in": burn, "slope": None, "r2": None, "envelope_ok": None}
        try:
            fit = diagnostics.fit_rate(recs, burn)
            row.update(slope=fit.slope, r2=fit.r2, n_points=fit.n_points)
            row["envelope_ok"] = diagnostics.envelope_ratio_check(
                recs, args.exponent, args.log_power, burn, args.slack)
        except InsufficientData as exc:
            row["note"] = str(exc)
        rows.append(row)
    slopes = [r["slope"] for r in rows if r["slope"] is not None]
    summary = {
        "files": len(rows),
        "median_slope": float(np.median(slopes)) if slopes else None,
        "envelope": {"exponent": args.exponent, "log_power": args.log_power, "slack": args.slack},
        "runs": rows,
    }
    med = diagnostics.median_curve(list(runs.values()))
    burn = _burn_in(args, next(iter(runs)), med)
    try:
        fit = diagnostics.fit_rate(med, burn)
        summary["median_curve"] = {
            "slope": fit.slope, "r2": fit.r2, "burn_in": burn,
            "envelope_ok": diagnostics.envelope_ratio_check(med, args.exponent, args.log_power,
                                                            burn, args.slack)}
    except InsufficientData as exc:
        summary["median_curve"] = {"note": str(exc)}

    width = max(len(r["file"]) for r in rows)
    print(f"{'file':<{width}}  {'burn_in':>7}  {'slope':>9}  {'r2':>6}  envelope")
    for r in rows:
        slope = f"{r['slope']:9.4f}" if r["slope"] is not None else f"{'n/a':>9}"
        r2 = f"{r['r2']:6.3f}" if r["r2"] is not None else f"{'n/a':>6}"
        env = {True: "ok", False: "VIOLATED", None: "n/a"}[r["envelope_ok"]]
        print(f"{r['file']:<{width}}  {r['burn_in']:>7}  {slope}  {r2}  {env}")
    ms = summary["median_slope"]
    print(f"median slope: {'n/a' if ms is None else f'{ms:.4f}'}")
    print(json.dumps(summary))
    if args.json:
        Path(args.json).write_text(json.dumps(summary, indent=2) + "\n")
    return EXIT_OK


# --- plot ---------------------------------------------------------------------


def cmd_plot(args) -> int:
    from .plotting import render_svg

    try:
        runs = _load_runs(args.pattern)
    except (OSError, runio.MalformedRow) as exc:
        _err(str(exc))
        return EXIT_CONFIG
    median = diagnostics.median_curve(list(runs.values())) if len(runs) > 1 else None
    envelope = tuple(args.envelope) if args.envelope else None
    labels = {Path(p).stem: recs for p, recs in runs.items()}
    try:
        svg = render_svg(labels, median, envelope, title=args.title or args.pattern)
    except ValueError as exc:
        _err(str(exc))
        return EXIT_CONFIG
    try:
        Path(args.out).write_text(svg)
    except OSError as exc:
        _err(f"cannot write {args.out}: {exc}")
        return EXIT_CONFIG
    print(f"wrote {args.out}")
    return EXIT_OK


# --- verify -------------------------------------------------------------------


def cmd_verify(args) -> int:
    from .verify import run_battery

    results = run_battery(args.filter)
    if not results:
        _err(f"no check matches {args.filter!r}")
        return EXIT_CONFIG
    for r in results:
        print(f"{'PASS' if r.passed else 'FAIL'}  {r.name:<24} {r.seconds:6.2f}s  {r.detail}")
    failed = [r.name for r in results if not r.passed]
    if failed:
        print(f"{len(failed)} check(s) failed: {', '.join(failed)}")
        return EXIT_FAIL
    print(f"all {len(results)} checks passed")
    return EXIT_OK


def cmd_configs(args) -> int:
    for name in bundled_configs():
        print(name)
    return EXIT_OK


# --- entry point --------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tts-opt", description="Two-time-scale stochastic optimization experiments")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run an experiment config, one CSV per seed")
    r.add_argument("config", help="config JSON path or the name of a bundled config")
    r.add_argument("--out", help="output directory (overrides output_dir)")
    r.add_argument("--keep-partial", action="store_true",
                   help="keep the records of seeds that aborted")
    r.set_defaults(func=cmd_run)

    rt = sub.add_parser("rates", help="fit log-log slopes to run CSVs")
    rt.add_argument("pattern", help="glob of run CSV files")
    rt.add_argument("--burn-in", type=int, default=None)
    rt.add_argument("--exponent", type=float, default=-2.0 / 3.0)
    rt.add_argument("--log-power", type=float, default=2.0)
    rt.add_argument("--slack", type=float, default=1.05)
    rt.add_argument("--json", help="also write the summary JSON to this file")
    rt.set_defaults(func=cmd_rates)

    pl = sub.add_parser("plot", help="log-log SVG of run CSVs")
    pl.add_argument("pattern")
    pl.add_argument("out")
    pl.add_argument("--envelope", nargs=2, type=float, metavar=("EXPONENT", "LOG_POWER"))
    pl.add_argument("--title")
    pl.set_defaults(func=cmd_plot)

    v = sub.add_parser("verify", help="run the built-in property battery")
    v.add_argument("--filter", help="only checks whose name contains this string")
    v.set_defaults(func=cmd_verify)

    c = sub.add_parser("configs", help="list bundled configs")
    c.set_defaults(func=cmd_configs)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        _err(f"config error: {exc}")
        return EXIT_CONFIG
    except TTSError as exc:
        _err(str(exc))
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
