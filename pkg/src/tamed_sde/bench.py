"""Error-vs-runtime and runtime-vs-dimension experiments.

Timings use ``time.perf_counter`` (monotonic), one untimed warm-up call
and the median of three timed calls, all in the calling thread.  Absolute
numbers are machine specific; only orderings and scaling exponents carry
over between machines.
"""
from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .brownian import coarsen, sample_batch
from .error_analysis import convergence_sweep
from .exceptions import ArgumentError
from .schemes import SolverOptions, run_scheme
from .sde_model import SdeProblem, make_builtin

__all__ = [
    "BenchRow",
    "measure",
    "error_vs_runtime",
    "dimension_scaling",
    "loglog_slope",
    "write_plot_script",
]


@dataclass(frozen=True)
class BenchRow:
    scheme: str
    problem: str
    dim: int
    steps: int
    error: Optional[float]
    wall_seconds: float
    newton_iters_total: Optional[int] = None


def measure(fn: Callable[[], object], repeats: int = 3, warmup: int = 1) -> float:
    """Median wall time of ``fn()`` over ``repeats`` calls after ``warmup`` calls."""
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(repeats):
        tic = time.perf_counter()
        fn()
        times.append(time.perf_counter() - tic)
    return statistics.median(times)


def _timed_run(problem, scheme, batch, opts):
    result = {}

    def call():
        result["paths"] = run_scheme(problem, scheme, batch, opts)

    seconds = measure(call)
    iters = result["paths"].newton_iterations
    return seconds, None if iters is None else int(np.sum(iters))


def error_vs_runtime(problem: SdeProblem, schemes: Sequence[str], Ns: Sequence[int],
                     ref_steps: int, paths: int, order_p: float = 2.0, seed: int = 0,
                     opts: Optional[SolverOptions] = None) -> list[BenchRow]:
    """One row per (scheme, N): strong error and the time to simulate all paths.

    Errors come from :func:`convergence_sweep` with the same seed, so they
    match a plain error run.  Timing covers the scheme on the coarsened
    increments only, not sampling or the reference.
    """
    Ns = [int(n) for n in Ns]
    if not schemes:
        return []
    if Ns != sorted(Ns):
        raise ArgumentError("Ns must be ascending")
    if ref_steps < 4 * max(Ns):
        raise ArgumentError("ref_steps must be at least 4 * max(Ns)")
    fine = sample_batch(ref_steps, problem.dim_noise, problem.horizon, seed, range(paths))
    rows = []
    for scheme in schemes:
        estimates = convergence_sweep(problem, scheme, Ns, ref_steps, order_p, paths, seed,
                                      opts=opts)
        for est in estimates:
            coarse = coarsen(fine, ref_steps // est.steps)
            seconds, iters = _timed_run(problem, scheme, coarse, opts)
            rows.append(BenchRow(scheme, problem.label, problem.dim_state, est.steps,
                                 est.value, seconds, iters))
    return rows


def dimension_scaling(dims: Sequence[int], steps: int = 128, paths: int = 256,
                      seed: int = 0, opts: Optional[SolverOptions] = None,
                      schemes: Sequence[str] = ("tamed", "implicit")) -> list[BenchRow]:
    """Runtime of each scheme on the double-well Langevin equation in ``R^d``."""
    rows = []
    for d in dims:
        problem = make_builtin("langevin_double_well", int(d))
        batch = sample_batch(steps, problem.dim_noise, problem.horizon, seed, range(paths))
        for scheme in schemes:
            seconds, iters = _timed_run(problem, scheme, batch, opts)
            rows.append(BenchRow(scheme, problem.label, int(d), steps, None, seconds, iters))
    return rows


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    if len(xs) < 2:
        raise ArgumentError("need at least two points")
    lx, ly = np.log(np.asarray(xs, float)), np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])


_PLOT_HEADER = """\
# gnuplot script; run with: gnuplot {script}
set datafile separator ","
set terminal pngcairo size 800,600
set output "{png}"
set logscale xy
set grid
set key top right
"""


def write_plot_script(csv_path, kind: str, series: Sequence[str]) -> Path:
    """Write a gnuplot script next to ``csv_path`` and return its path.

    ``kind`` is ``"error"`` (error against runtime, one curve per scheme) or
    ``"dimension"`` (runtime against dimension, one curve per scheme).
    """
    csv_path = Path(csv_path)
    script = csv_path.with_suffix(".gp")
    lines = [_PLOT_HEADER.format(script=script.name, png=csv_path.with_suffix(".png").name)]
    if kind == "error":
        lines.append('set xlabel "runtime [s]"\nset ylabel "strong error"\n')
        x, y = "column(\"wall_seconds\")", "column(\"error\")"
    elif kind == "dimension":
        lines.append('set xlabel "dimension d"\nset ylabel "runtime [s]"\n')
        x, y = "column(\"dim\")", "column(\"wall_seconds\")"
    else:
        raise ArgumentError(f"unknown plot kind {kind!r}")
    curves = [
        f'"{csv_path.name}" using (strcol(1) eq "{s}" ? {x} : NaN):({y}) '
        f'with linespoints title "{s}"'
        for s in series
    ]
    lines.append("plot " + ", \\\n     ".join(curves) + "\n")
    script.write_text("".join(lines), encoding="utf-8")
    return script
