"""Command-line entry point: ``hangsim <subcommand> ...``.

Exit codes
----------
0  success
1  a certificate check failed (``verify-lemmas`` FAIL line, or a failed
   certificate in ``bvp-solve``)
2  usage error (unknown subcommand or flag, bad argument value)
3  malformed configuration or invalid input data
4  input file not found
5  numerical abort (non-finite state, singular solve)
"""

from __future__ import annotations

import argparse
import hashlib
import io
import json
import logging
import platform
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from hangsim import __version__
from hangsim import dynamics
from hangsim.dynamics import CFLError, DataError, SimConfig
from hangsim.mesh import MeshError, mesh_from_nodes
from hangsim.tension import TensionError, solve_bvp
from hangsim.verification import verify_lemmas
from hangsim.wnorms import norm_report

log = logging.getLogger("hangsim")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_CONFIG, EXIT_MISSING, EXIT_ABORT = range(6)

TRAJECTORY_HEADER = "t,node,s,x1,x2,x3,v1,v2,v3,tau,tau_prime"
MONITORS_HEADER = "t," + ",".join(dynamics.MONITOR_KEYS)
BVP_HEADER = "s,tau,tau_prime,phi,psi"
JETS_HEADER = "s,xtt1,xtt2,xtt3,xttt1,xttt2,xttt3"
NUMBER = "%.17g"


class ConfigError(ValueError):
    """A config file problem; the message carries the line number."""


class UsageError(Exception):
    pass


# -- configuration ------------------------------------------------------------

def _parse_bool(text: str) -> bool:
    low = text.lower()
    if low not in ("true", "false"):
        raise ValueError(f"expected true or false, got {text!r}")
    return low == "true"


def _parse_int(text: str) -> int:
    value = float(text)
    if value != int(value):
        raise ValueError(f"expected an integer, got {text!r}")
    return int(value)


def _parse_g(text: str) -> tuple:
    parts = [p.strip() for p in text.split(",")]
    if len(parts) != 3:
        raise ValueError(f"g needs three comma-separated reals, got {text!r}")
    return tuple(float(p) for p in parts)


def _parse_dt(text: str):
    return "auto" if text.lower() == "auto" else float(text)


PARSERS = {
    "N": _parse_int,
    "gamma": float,
    "order": _parse_int,
    "g": _parse_g,
    "dt": _parse_dt,
    "T_end": float,
    "c0": float,
    "renormalize": _parse_bool,
    "sample_every": _parse_int,
    "initial": str,
}


def parse_config(text: str) -> SimConfig:
    """``key = value`` lines with ``#`` comments; every key is checked."""
    values = {}
    lines = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw.strip()!r}")
        if key not in PARSERS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} "
                              f"(first set on line {lines[key]})")
        if not value:
            raise ConfigError(f"line {lineno}: empty value for {key!r}")
        try:
            values[key] = PARSERS[key](value)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
        lines[key] = lineno
    if "order" in values and values["order"] not in (2, 4):
        raise ConfigError(f"line {lines['order']}: order must be 2 or 4")
    try:
        return SimConfig(**values)
    except ValueError as exc:
        bad = next((k for k in lines if k in str(exc)), None)
        where = f"line {lines[bad]}: " if bad else ""
        raise ConfigError(f"{where}{exc}") from None


# -- output helpers -----------------------------------------------------------

def _csv_text(header: str, table: np.ndarray) -> str:
    buf = io.StringIO()
    np.savetxt(buf, table, fmt=NUMBER, delimiter=",", header=header, comments="",
               newline="\n")
    return buf.getvalue()


def _write(path: Path, text: str) -> Path:
    with open(path, "w", newline="\n") as fh:
        fh.write(text)
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _plain(obj):
    """JSON-ready copy: numpy scalars unwrapped, non-finite floats as null."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def _dump(obj) -> str:
    return json.dumps(_plain(obj), indent=2, allow_nan=False) + "\n"


def _read_columns(path: Path, need: tuple) -> dict:
    if not path.is_file():
        raise FileNotFoundError(path)
    table = np.genfromtxt(path, delimiter=",", names=True)
    names = table.dtype.names or ()
    missing = [c for c in need if c not in names]
    if missing:
        raise DataError(f"{path}: missing columns {missing}")
    return {c: np.atleast_1d(table[c]).astype(float) for c in names}


# -- subcommands ----------------------------------------------------------------

def _trajectory_table(result) -> np.ndarray:
    s = result.mesh.nodes
    n = len(s)
    blocks = []
    for smp in result.samples:
        blocks.append(np.column_stack([
            np.full(n, smp.t), np.arange(n), s, smp.x, smp.xdot,
            smp.tension.tau, smp.tension.dtau,
        ]))
    return np.vstack(blocks)


def _monitor_table(result) -> np.ndarray:
    rows = result.monitor_rows()
    return np.array([[r["t"]] + [r[k] for k in dynamics.MONITOR_KEYS] for r in rows])


def _provenance(config: SimConfig, base: Path) -> dict:
    spec = config.initial.strip()
    if spec.startswith("csv:"):
        path = _resolve(spec[4:], base)
        return {"kind": "file", "path": str(path), "sha256": _sha256(path)}
    return {"kind": "builtin", "name": spec}


def _resolve(name: str, base: Path) -> Path:
    path = Path(name)
    return path if path.is_absolute() else base / path


def cmd_simulate(args) -> int:
    from hangsim import plotting

    cfg_path = Path(args.config)
    if not cfg_path.is_file():
        raise FileNotFoundError(cfg_path)
    config = parse_config(cfg_path.read_text())
    base = cfg_path.resolve().parent
    initial = config.initial.strip()
    if initial.startswith("csv:"):
        csv_path = _resolve(initial[4:], base)
        if not csv_path.is_file():
            raise FileNotFoundError(csv_path)
        initial = f"csv:{csv_path}"
    mesh = config.mesh()
    data = dynamics.parse_initial(initial, mesh, config.g, config.order)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    started = time.time()
    result = dynamics.run(config, data, force=args.force)
    elapsed = time.time() - started

    files = {
        "trajectory.csv": _write(out / "trajectory.csv",
                                 _csv_text(TRAJECTORY_HEADER, _trajectory_table(result))),
        "monitors.csv": _write(out / "monitors.csv",
                               _csv_text(MONITORS_HEADER, _monitor_table(result))),
    }
    rows = result.monitor_rows()
    last = rows[-1]
    summary = {
        "status": result.status,
        "message": result.message,
        "t_final": result.samples[-1].t,
        "samples": len(result.samples),
        "lambda": result.lam,
        "c0": result.c0,
        "max_drift": max(r["drift_max"] for r in rows),
        "min_tau_over_s": min(r["min_tau_over_s"] for r in rows),
        "sc1_violations": sum(not r["stability"].sc1_holds() for r in rows),
        "final": {k: last[k] for k in dynamics.MONITOR_KEYS},
        "certificate_failures": result.certificate_failures,
        "manifest": "manifest.json",
    }
    files["summary.json"] = _write(out / "summary.json", _dump(summary))

    if not args.no_plots:
        times = [smp.t for smp in result.samples]
        files["monitors.png"] = plotting.plot_monitors(rows, out / "monitors.png")
        files["shapes.png"] = plotting.plot_snapshots(
            times, [smp.x for smp in result.samples], out / "shapes.png")
        files["tension.png"] = plotting.plot_tension(
            times, result.mesh.nodes, [smp.tension.tau for smp in result.samples],
            out / "tension.png")

    manifest = {
        "config": asdict(config),
        "version": __version__,
        "mesh": result.mesh.summary(),
        "initial_data": _provenance(config, base),
        "outputs": {name: _sha256(path) for name, path in files.items()},
        "wall_clock": {
            "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
            "seconds": round(elapsed, 3),
            "python": platform.python_version(),
            "numpy": np.__version__,
        },
    }
    _write(out / "manifest.json", _dump(manifest))
    print(f"status={result.status} t={summary['t_final']:.6g} samples={len(rows)} "
          f"max_drift={summary['max_drift']:.3e} out={out}")
    if result.status == "nan_abort":
        print(f"aborted: {result.message}", file=sys.stderr)
        return EXIT_ABORT
    return EXIT_OK


def cmd_bvp_solve(args) -> int:
    cols = _read_columns(Path(args.input), ("s", "q", "h"))
    mesh = mesh_from_nodes(cols["s"], args.order)
    sol = solve_bvp(mesh, cols["q"], cols["h"], args.a, certify=True)
    table = np.column_stack([mesh.nodes, sol.tau, sol.dtau, sol.pair.phi, sol.pair.psi])
    certs = {
        "a": args.a,
        "wronskian": sol.pair.wronskian,
        "q_clipped": sol.q_clipped,
        "certificates": [c.to_dict() for c in sol.certificates],
        "all_satisfied": not sol.failed(),
    }
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        _write(out / "tension.csv", _csv_text(BVP_HEADER, table))
        _write(out / "certificates.json", _dump(certs))
        print(f"wrote {out / 'tension.csv'} and {out / 'certificates.json'}")
    else:
        sys.stdout.write(_csv_text(BVP_HEADER, table))
        sys.stderr.write(_dump(certs))
    for cert in sol.failed():
        print(f"certificate {cert.name} failed: {cert.lhs:.6g} > {cert.rhs:.6g}", file=sys.stderr)
    return EXIT_FAIL if sol.failed() else EXIT_OK


def cmd_norms(args) -> int:
    path = Path(args.input)
    cols = _read_columns(path, ("s",))
    names = [c for c in cols if c != "s"]
    if not names:
        raise DataError(f"{path}: no value column next to s")
    mesh = mesh_from_nodes(cols["s"], 4)
    u = cols[names[0]] if len(names) == 1 else np.column_stack([cols[c] for c in names])
    report = norm_report(mesh, u, name=",".join(names), eps=args.eps)
    if args.m is None:
        print(report.to_json())
        return EXIT_OK
    key = f"X{args.m}"
    if key not in report.values:
        raise UsageError(f"--m must be between 0 and 4, got {args.m}")
    print(json.dumps({key: report.values[key]}))
    return EXIT_OK


def cmd_verify(args) -> int:
    summary = verify_lemmas(args.seed, args.trials, args.threads)
    for entry in summary.values():
        print(entry.line())
    return EXIT_OK if all(e.passed for e in summary.values()) else EXIT_FAIL


def cmd_jets(args) -> int:
    path = Path(args.data)
    if not path.is_file():
        raise FileNotFoundError(path)
    data = dynamics.read_csv_data(path, args.order)
    second, third = dynamics.initial_jets(data, args.g)
    table = np.column_stack([data.mesh.nodes, second, third])
    sys.stdout.write(_csv_text(JETS_HEADER, table))
    return EXIT_OK


# -- argument parsing -----------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _g_arg(text: str) -> tuple:
    try:
        g = _parse_g(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None
    norm = float(np.linalg.norm(g))
    if not (norm == 0.0 or abs(norm - 1.0) <= 1e-12):
        raise argparse.ArgumentTypeError(f"|g| must be 0 or 1, got {norm:.6g}")
    return g


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hangsim", description="Hanging-string dynamics with certified tension.")
    parser.add_argument("--version", action="version", version=f"hangsim {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("simulate", help="integrate a configured run")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--force", action="store_true", help="allow a fixed dt above the CFL limit")
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("bvp-solve", help="solve the tension problem for tabulated data")
    p.add_argument("--in", dest="input", required=True, help="CSV with columns s,q,h")
    p.add_argument("--a", type=float, required=True, help="slope datum tau'(1)")
    p.add_argument("--out", help="output directory (default: CSV to stdout)")
    p.add_argument("--order", type=int, choices=(2, 4), default=4)
    p.set_defaults(func=cmd_bvp_solve)

    p = sub.add_parser("norms", help="weighted norms of a tabulated field")
    p.add_argument("--in", dest="input", required=True, help="CSV with column s and values")
    p.add_argument("--m", type=int)
    p.add_argument("--eps", type=float, default=0.25)
    p.set_defaults(func=cmd_norms)

    p = sub.add_parser("verify-lemmas", help="randomized certificate suite")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("jets", help="second and third time derivatives at t=0")
    p.add_argument("--data", required=True, help="CSV with columns s,x1,x2,x3,v1,v2,v3")
    p.add_argument("--g", type=_g_arg, default=(0.0, 0.0, -1.0))
    p.add_argument("--order", type=int, choices=(2, 4), default=4)
    p.set_defaults(func=cmd_jets)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    if args.command is None:
        print("hangsim: a subcommand is required (simulate, bvp-solve, norms, "
              "verify-lemmas, jets)", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except FileNotFoundError as exc:
        print(f"file not found: {exc.filename or exc}", file=sys.stderr)
        return EXIT_MISSING
    except (ConfigError, DataError, CFLError, MeshError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (TensionError, dynamics.NumericalAbort, FloatingPointError) as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
