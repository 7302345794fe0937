"""Command-line front end.

    tamed-sde SUBCOMMAND [flags]

Subcommands: simulate, convergence, moments, dominator-check, benchmark,
dimension-scan.  Defaults may come from a flat ``key=value`` file given
with ``--config``; flags on the command line win.  Exit codes: 0 success,
1 usage error, 2 numeric or solver failure, 3 invariant violation.
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import bench, diagnostics, error_analysis
from .brownian import sample_batch
from .exceptions import (ArgumentError, ConfigurationError, InvariantViolation, NumericError,
                         PreconditionError, SolverError)
from .schemes import SCHEMES, run_scheme
from .sde_model import BUILTIN_NAMES, make_builtin

SUBCOMMANDS = ("simulate", "convergence", "moments", "dominator-check", "benchmark",
               "dimension-scan")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_INVARIANT = 0, 1, 2, 3


class UsageError(Exception):
    pass


@dataclass
class RunConfig:
    subcommand: str
    problem: Optional[str] = None
    schemes: tuple = ("tamed",)
    steps: int = 256
    Ns: tuple = (16, 32, 64, 128, 256, 512)
    ref_steps: int = 8192
    paths: int = 1000
    order_p: float = 2.0
    seed: int = 0
    dim: int = 1
    dims: tuple = (10, 20, 40)
    out_path: Optional[Path] = None
    emit_plot: bool = False
    threads: int = field(default_factory=lambda: os.cpu_count() or 1)
    explicit_keys: frozenset = frozenset()


# -- value parsing ------------------------------------------------------------


def _positive_int(text):
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed integer {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be positive, got {value}")
    return value


def _seed(text):
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed integer {text!r}") from None


def _order(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"malformed number {text!r}") from None
    if not value >= 1:
        raise argparse.ArgumentTypeError(f"p must be >= 1, got {value}")
    return value


def _int_list(text):
    items = tuple(_positive_int(t) for t in text.split(",") if t.strip())
    if not items:
        raise argparse.ArgumentTypeError("empty list")
    if list(items) != sorted(items):
        raise argparse.ArgumentTypeError(f"list must be ascending: {text}")
    return items


def _problem(text):
    if text not in BUILTIN_NAMES:
        raise argparse.ArgumentTypeError(
            f"invalid choice {text!r} (choose from {', '.join(BUILTIN_NAMES)})")
    return text


def _scheme_list(text):
    items = tuple(t.strip() for t in text.split(",") if t.strip())
    for item in items:
        if item not in SCHEMES:
            raise argparse.ArgumentTypeError(
                f"invalid choice {item!r} (choose from {', '.join(SCHEMES)})")
    if not items:
        raise argparse.ArgumentTypeError("empty list")
    return items


def _flag(text):
    lowered = str(text).strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"malformed boolean {text!r}")


# option name -> (RunConfig field, converter)
OPTIONS = {
    "problem": ("problem", _problem),
    "scheme": ("schemes", _scheme_list),
    "N": ("steps", _positive_int),
    "Ns": ("Ns", _int_list),
    "Nref": ("ref_steps", _positive_int),
    "paths": ("paths", _positive_int),
    "p": ("order_p", _order),
    "seed": ("seed", _seed),
    "dim": ("dim", _positive_int),
    "dims": ("dims", _int_list),
    "out": ("out_path", Path),
    "emit-plot": ("emit_plot", _flag),
    "threads": ("threads", _positive_int),
}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tamed-sde", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", type=Path, help="key=value defaults file")
    for name, (_, conv) in OPTIONS.items():
        if name == "emit-plot":
            parser.add_argument("--emit-plot", dest="emit-plot", action="store_const",
                                const=True, default=None,
                                help="also write a gnuplot script next to --out")
        else:
            parser.add_argument(f"--{name}", dest=name, type=conv, default=None)
    return parser


def read_config(path: Path) -> dict:
    """Parse a ``key=value`` file; ``#`` starts a comment."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("_", "-") if key.replace("_", "-") in OPTIONS else key
        if key not in OPTIONS:
            raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
        _, conv = OPTIONS[key]
        try:
            values[key] = conv(value)
        except argparse.ArgumentTypeError as exc:
            raise UsageError(f"{path}:{lineno}: key {key}: {exc}") from None
    return values


def parse_args(argv: Sequence[str]) -> RunConfig:
    """Turn command-line arguments into a validated :class:`RunConfig`."""
    ns = vars(build_parser().parse_args(list(argv)))
    merged = read_config(ns["config"]) if ns.get("config") else {}
    merged.update({k: v for k, v in ns.items() if k in OPTIONS and v is not None})
    config = RunConfig(subcommand=ns["subcommand"])
    for key, value in merged.items():
        setattr(config, OPTIONS[key][0], value)
    config.explicit_keys = frozenset(merged)
    if config.out_path is None:
        raise UsageError("the following arguments are required: --out")
    if config.subcommand != "dimension-scan" and config.problem is None:
        raise UsageError("the following arguments are required: --problem")
    if config.problem is not None and config.problem != "langevin_double_well" \
            and config.dim != 1:
        raise UsageError(f"--dim must be 1 for problem {config.problem}")
    out_dir = config.out_path.resolve().parent
    if not out_dir.is_dir() or not os.access(out_dir, os.W_OK):
        raise UsageError(f"--out: directory {out_dir} is not writable")
    return config


# -- output -------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(bool(value)).lower()
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value)) if not math.isfinite(value) else format(float(value), ".17g")
    return str(value)


def write_csv(path: Path, header: Sequence[str], rows, meta: dict, trailer=()) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        fh.write("# " + " ".join(f"{k}={_fmt(v)}" for k, v in meta.items()) + "\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
        for line in trailer:
            fh.write("# " + line + "\n")


def _meta(config: RunConfig) -> dict:
    meta = {"seed": config.seed, "subcommand": config.subcommand}
    if config.problem:
        meta["problem"] = config.problem
    return meta


def _problem_of(config: RunConfig):
    return make_builtin(config.problem, config.dim)


# -- subcommands --------------------------------------------------------------


def _run_simulate(config: RunConfig) -> int:
    problem = _problem_of(config)
    batch = sample_batch(config.steps, problem.dim_noise, problem.horizon, config.seed,
                         range(config.paths))
    scheme = config.schemes[0]
    paths = run_scheme(problem, scheme, batch)
    d = problem.dim_state
    dt = problem.horizon / config.steps
    header = ["path_id", "n", "t"] + [f"y{i + 1}" for i in range(d)]

    def rows():
        for i, pid in enumerate(paths.path_ids):
            for n, state in enumerate(paths.states[i]):
                yield [int(pid), n, n * dt, *state]

    write_csv(config.out_path, header, rows(), {**_meta(config), "scheme": scheme})
    overflowed = int(np.sum(paths.overflowed))
    print(f"simulate: {config.paths} {scheme} paths of {problem.label} at N={config.steps}, "
          f"{overflowed} overflowed -> {config.out_path}")
    return EXIT_OK


CONVERGENCE_HEADER = ["scheme", "problem", "N", "Nref", "p", "paths", "value", "std_error",
                      "ci_low", "ci_high", "divergent_paths", "wall_seconds"]


def _run_convergence(config: RunConfig) -> int:
    problem = _problem_of(config)
    rows, trailer, summary = [], [], []
    for scheme in config.schemes:
        estimates = error_analysis.convergence_sweep(
            problem, scheme, config.Ns, config.ref_steps, config.order_p, config.paths,
            config.seed, workers=config.threads)
        for e in estimates:
            rows.append([scheme, problem.label, e.steps, e.ref_steps, e.order_p, e.paths,
                         e.value, e.std_error, e.ci_low, e.ci_high, e.divergent_paths,
                         e.wall_seconds])
        if len(estimates) >= 3 and all(math.isfinite(e.value) and e.value > 0
                                       for e in estimates):
            slope, intercept, r2 = error_analysis.estimate_order(estimates)
            at16 = error_analysis.predict_error(slope, intercept, 2**16)
            trailer.append(f"fit scheme={scheme} slope={_fmt(slope)} "
                           f"intercept_log2={_fmt(intercept)} r2={_fmt(r2)} "
                           f"predicted_error_N65536={_fmt(at16)}")
            summary.append(f"{scheme} slope={slope:.3f} r2={r2:.3f}")
        else:
            summary.append(f"{scheme} no fit")
    write_csv(config.out_path, CONVERGENCE_HEADER, rows, _meta(config), trailer)
    print(f"convergence: {problem.label} " + "; ".join(summary) + f" -> {config.out_path}")
    return EXIT_OK


def _run_moments(config: RunConfig) -> int:
    problem = _problem_of(config)
    rows = []
    for scheme in config.schemes:
        for r in error_analysis.moment_sweep(problem, scheme, config.order_p, config.Ns,
                                             config.paths, config.seed,
                                             workers=config.threads):
            rows.append([scheme, problem.label, r.steps, config.order_p, config.paths,
                         r.max_moment, r.overflow_fraction])
    write_csv(config.out_path, ["scheme", "problem", "N", "p", "paths", "max_moment",
                                "overflow_fraction"], rows, _meta(config))
    print(f"moments: {len(rows)} rows for {problem.label} -> {config.out_path}")
    return EXIT_OK


def _run_dominator_check(config: RunConfig) -> int:
    problem = _problem_of(config)
    Ns = config.Ns if "Ns" in config.explicit_keys else (config.steps,)
    rows, total = [], 0
    for N in Ns:
        for start in range(0, config.paths, error_analysis.CHUNK_PATHS):
            ids = range(start, min(config.paths, start + error_analysis.CHUNK_PATHS))
            batch = sample_batch(N, problem.dim_noise, problem.horizon, config.seed, ids)
            paths = run_scheme(problem, "tamed", batch)
            counts, ratios, _ = diagnostics.batch_domination(problem, batch, paths)
            for pid, k, r in zip(batch.path_ids, counts, ratios):
                rows.append([int(pid), N, int(k), float(r)])
                total += int(k)
    write_csv(config.out_path, ["path_id", "N", "violations", "max_log_ratio"], rows,
              _meta(config))
    print(f"dominator-check: {problem.label}, {config.paths} paths x {len(Ns)} N, "
          f"{total} violations -> {config.out_path}")
    return EXIT_OK if total == 0 else EXIT_INVARIANT


BENCH_HEADER = ["scheme", "problem", "dim", "N", "error", "wall_seconds", "newton_iters_total"]


def _bench_rows(rows):
    return [[r.scheme, r.problem, r.dim, r.steps, r.error, r.wall_seconds, r.newton_iters_total]
            for r in rows]


def _run_benchmark(config: RunConfig) -> int:
    problem = _problem_of(config)
    rows = bench.error_vs_runtime(problem, config.schemes, config.Ns, config.ref_steps,
                                  config.paths, config.order_p, config.seed)
    write_csv(config.out_path, BENCH_HEADER, _bench_rows(rows), _meta(config))
    if config.emit_plot:
        bench.write_plot_script(config.out_path, "error", config.schemes)
    print(f"benchmark: {len(rows)} rows for {problem.label} -> {config.out_path}")
    return EXIT_OK


def _run_dimension_scan(config: RunConfig) -> int:
    paths = config.paths if "paths" in config.explicit_keys else 64
    steps = config.steps if "N" in config.explicit_keys else 128
    schemes = config.schemes if "scheme" in config.explicit_keys else ("tamed", "implicit")
    rows = bench.dimension_scaling(config.dims, steps, paths, config.seed, schemes=schemes)
    write_csv(config.out_path, BENCH_HEADER, _bench_rows(rows), _meta(config))
    if config.emit_plot:
        bench.write_plot_script(config.out_path, "dimension", schemes)
    print(f"dimension-scan: dims {','.join(map(str, config.dims))} -> {config.out_path}")
    return EXIT_OK


_HANDLERS = {
    "simulate": _run_simulate,
    "convergence": _run_convergence,
    "moments": _run_moments,
    "dominator-check": _run_dominator_check,
    "benchmark": _run_benchmark,
    "dimension-scan": _run_dimension_scan,
}


def run(config: RunConfig) -> int:
    """Execute a parsed configuration and return the process exit code."""
    try:
        return _HANDLERS[config.subcommand](config)
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except (NumericError, SolverError) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ArgumentError, ConfigurationError, PreconditionError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        config = parse_args(sys.argv[1:] if argv is None else argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    return run(config)


if __name__ == "__main__":
    sys.exit(main())
