"""Command line entry point.

    rcmhomog <experiment> --config <path> [--threads N] [--out DIR]
    rcmhomog curves --kind psi --grid 1e-1,1e-2 --out psi.csv [--param d=1 ...]

Exit status: 0 on success, 2 on invalid input, 3 on numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import hashlib
import io
import json
import math
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import EXPERIMENTS, ExperimentConfig
from .distance import RateParams, psi_rate
from .errors import NumericalError, ValidationError
from .experiments import COLUMNS, run_experiment
from .homog import BOUND_KINDS, InitialData, bound_rhs
from .parallel import ENV_THREADS, resolve_threads

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
CURVE_KINDS = ("psi",) + BOUND_KINDS


def _jsonl(records) -> bytes:
    lines = [json.dumps(r.as_dict(), sort_keys=False, allow_nan=False) for r in records]
    return ("\n".join(lines) + "\n").encode() if lines else b""


def _csv(records) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for r in records:
        row = r.as_dict()
        w.writerow(["" if row[c] is None else (";".join(repr(v) for v in row[c]) if c == "x" else
                                               repr(row[c]) if isinstance(row[c], float) else row[c])
                    for c in COLUMNS])
    return buf.getvalue().encode()


def write_outputs(run, out_dir: Path, config_path, threads: int) -> dict:
    out_dir.mkdir(parents=True, exist_ok=True)
    jl, cs = _jsonl(run.records), _csv(run.records)
    (out_dir / "results.jsonl").write_bytes(jl)
    (out_dir / "results.csv").write_bytes(cs)
    cfg = run.cfg
    manifest = {
        "experiment": cfg.experiment,
        "version": __version__,
        "master_seed": cfg.master_seed,
        "config_path": str(config_path),
        "config": dict(cfg.raw),
        "resolved_config": cfg.resolved,
        "threads": threads,
        "results_sha256": hashlib.sha256(jl).hexdigest(),
        "csv_sha256": hashlib.sha256(cs).hexdigest(),
        "n_records": len(run.records),
        "wall_times": run.timings,
        "wall_time_total": sum(t["seconds"] for t in run.timings),
        "notes": run.notes,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "timestamp": _dt.datetime.now(_dt.timezone.utc).isoformat(),
    }
    (out_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


def _parse_params(items) -> dict[str, str]:
    out = {}
    for item in items or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ValidationError(f"--param expects key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _parse_grid(text: str) -> list[float]:
    try:
        grid = [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ValidationError(f"cannot parse grid {text!r}") from exc
    if not grid:
        raise ValidationError("grid is empty")
    return grid


def emit_reference_curves(kind: str, params: dict, grid, path) -> Path:
    """Write ``abscissa,bound`` rows for overlay plotting.

    ``psi`` evaluates the rate function at u in ``grid``; the bound kinds
    evaluate :func:`bound_rhs` with ``eps`` running over ``grid`` and the
    remaining arguments from ``params`` (C, d, q, delta, t, x, c, and for the
    parabolic/elliptic kinds the bump ``amplitude``/``width``).
    """
    if kind not in CURVE_KINDS:
        raise ValidationError(f"unknown curve kind {kind!r}; expected one of {CURVE_KINDS}")
    p = dict(params)

    def num(key, default=None):
        if key not in p:
            if default is None:
                raise ValidationError(f"curve {kind!r} requires parameter {key!r}")
            return default
        try:
            return float(p[key])
        except ValueError as exc:
            raise ValidationError(f"parameter {key!r}: cannot read {p[key]!r} as a number") from exc

    d = int(num("d", 1))
    q, delta = num("q", 0.0), num("delta", 0.1)
    rows = []
    if kind == "psi":
        rp = RateParams(d, q, delta)
        rows = [(u, psi_rate(u, rp)) for u in grid]
    else:
        kw = dict(C=num("C", 1.0), d=d, q=q, delta=delta)
        if kind in ("parabolic", "elliptic"):
            kw["f"] = InitialData.gaussian_bump(num("amplitude", 1.0), [0.0] * d, num("width", 1.0))
        if kind in ("parabolic", "kernel"):
            kw["t"] = num("t")
        if kind in ("kernel", "green"):
            kw["c"] = num("c")
            kw["x"] = [num("x")] + [0.0] * (d - 1)
        rows = [(e, bound_rhs(kind, eps=e, **kw)) for e in grid]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["u" if kind == "psi" else "eps", "bound"])
        for a, b in rows:
            if not math.isfinite(b):
                raise NumericalError(f"non-finite bound at {a}")
            w.writerow([repr(float(a)), repr(float(b))])
    return path


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rcmhomog", description="Random conductance model experiments.")
    ap.add_argument("--version", action="version", version=f"rcmhomog {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in EXPERIMENTS:
        sp = sub.add_parser(name, help=f"run the {name} experiment")
        sp.add_argument("--config", required=True, help="key = value config file")
        sp.add_argument("--threads", type=int, default=None, help=f"worker threads (fallback ${ENV_THREADS})")
        sp.add_argument("--out", default=None, help="output directory")
    cp = sub.add_parser("curves", help="emit a reference curve as CSV")
    cp.add_argument("--kind", required=True, choices=CURVE_KINDS)
    cp.add_argument("--grid", required=True, help="comma-separated abscissae")
    cp.add_argument("--param", action="append", help="key=value, repeatable")
    cp.add_argument("--out", required=True, help="CSV path")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "curves":
            path = emit_reference_curves(args.kind, _parse_params(args.param), _parse_grid(args.grid), args.out)
            print(f"wrote {path}")
            return EXIT_OK
        threads = resolve_threads(args.threads)
        cfg = ExperimentConfig.from_file(args.command, args.config)
        out = Path(args.out or cfg.raw.get("output_dir") or Path("rcmhomog-out") / args.command)
        run = run_experiment(cfg, threads)
        manifest = write_outputs(run, out, args.config, threads)
        for note in run.notes:
            print(f"note: {note}", file=sys.stderr)
        print(f"{manifest['n_records']} records written to {out}")
        return EXIT_OK
    except ValueError as exc:  # ValidationError, or e.g. a bad thread count
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
