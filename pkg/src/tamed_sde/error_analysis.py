"""Strong error estimation on coupled Brownian paths.

The error functional is the grid-time surrogate of the strong L^p error

    ( mean_j  max_n |X^{(j)}(t_n) - Y^{(j)}_n|^p )^{1/p},

with ``X`` a reference path driven by the same Brownian increments: either
the exact solution (geometric Brownian motion) or the tamed scheme at a
finer resolution ``ref_steps``.  The maximum is taken over the coarse grid
times only; it bounds the continuous-time supremum from below.

Per-path quantities are always reduced in ascending path-index order with
``math.fsum``, so results do not depend on chunking or worker count.
"""
from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from .brownian import IncrementBatch, IncrementGrid, brownian_path, coarsen, sample_batch
from .diagnostics import DominationReport, DominatorTrace, assert_domination, dominator_trace
from .exceptions import ArgumentError, NumericError, PreconditionError
from .schemes import (SCHEMES, DiscretePath, PathBatch, SolverOptions, explicit_euler,
                      run_scheme, tamed_euler)
from .sde_model import SdeProblem

__all__ = [
    "ErrorEstimate",
    "MomentRow",
    "DivergenceReport",
    "strong_error",
    "convergence_sweep",
    "exact_gbm_reference",
    "estimate_order",
    "predict_error",
    "moment_sweep",
    "divergence_demo",
    "CHUNK_PATHS",
]

CHUNK_PATHS = 256
Z_95 = 1.959963984540054


@dataclass(frozen=True)
class ErrorEstimate:
    """Monte Carlo strong error with a 95% normal interval.

    The interval is built on the mean of p-th powers and mapped through
    ``x -> x^(1/p)``; ``std_error`` is the delta-method standard error of
    ``value``.
    """

    steps: int
    order_p: float
    paths: int
    value: float
    std_error: float
    ci_low: float
    ci_high: float
    divergent_paths: int = 0
    scheme: str = ""
    problem: str = ""
    ref_steps: int = 0
    wall_seconds: float = 0.0

    @property
    def contains_divergent_paths(self) -> bool:
        return self.divergent_paths > 0


@dataclass(frozen=True)
class MomentRow:
    steps: int
    max_moment: float
    overflow_fraction: float


def _chunks(paths: int, size: int = CHUNK_PATHS):
    return [range(s, min(paths, s + size)) for s in range(0, paths, size)]


def _map_chunks(fn, chunks, workers: int):
    if workers <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, chunks))


def exact_gbm_reference(x0: float, grid):
    """``x0 exp(-t_n / 2 + W_{t_n})`` at the grid times (solution of ``dX = X dW``)."""
    if grid.dim_noise != 1:
        raise ArgumentError(f"exact GBM reference needs m = 1, got {grid.dim_noise}")
    w = brownian_path(grid)
    t = np.arange(grid.steps + 1) * (grid.horizon / grid.steps)
    states = x0 * np.exp(w - 0.5 * t[:, None])
    if isinstance(grid, IncrementBatch):
        return PathBatch(states, grid.steps, "exact", np.full(len(grid), -1, dtype=np.int64),
                         grid.path_ids)
    return DiscretePath(states, grid.steps, "exact")


def _resolve_reference(problem: SdeProblem, reference: str) -> str:
    if reference == "auto":
        return "exact" if problem.label == "gbm" else "tamed"
    if reference not in ("exact", "tamed"):
        raise ArgumentError(f"unknown reference {reference!r}")
    if reference == "exact" and problem.label != "gbm":
        raise ArgumentError("exact reference is only available for gbm")
    return reference


def _discrepancy_powers(problem, scheme, Ns, ref_steps, order_p, seed, reference, opts, ids):
    """Per-path ``max_n |X - Y|^p`` for each ``N`` in ``Ns`` on one chunk,
    plus the seconds spent inside the scheme for each ``N``."""
    fine = sample_batch(ref_steps, problem.dim_noise, problem.horizon, seed, ids)
    if reference == "exact":
        ref = exact_gbm_reference(float(problem.initial_value[0]), fine)
    else:
        ref = tamed_euler(problem, fine)
        if np.any(ref.overflowed):
            raise NumericError(f"reference path overflowed (paths {ids.start}..{ids.stop - 1})")
    out = []
    for steps in Ns:
        factor = ref_steps // steps
        coarse = coarsen(fine, factor)
        tic = time.perf_counter()
        approx = run_scheme(problem, scheme, coarse, opts)
        elapsed = time.perf_counter() - tic
        diverged = approx.overflowed
        if scheme != "explicit" and np.any(diverged):
            raise NumericError(f"{scheme} path overflowed at N={steps}")
        with np.errstate(over="ignore", invalid="ignore"):
            diff = ref.states[:, ::factor] - approx.states
            worst = np.max(np.sqrt(np.sum(diff * diff, axis=-1)), axis=1)
        worst[diverged] = np.inf
        out.append((worst ** order_p, elapsed))
    return out


def _summarise(powers: np.ndarray, order_p: float):
    M = len(powers)
    divergent = int(np.sum(~np.isfinite(powers)))
    if divergent:
        return math.inf, math.inf, math.inf, math.inf, divergent
    mean = math.fsum(powers.tolist()) / M
    if M > 1:
        var = math.fsum(((powers - mean) ** 2).tolist()) / (M - 1)
    else:
        var = 0.0
    se_mean = math.sqrt(var / M)
    value = mean ** (1.0 / order_p)
    if mean > 0:
        std_error = se_mean / (order_p * mean ** ((order_p - 1.0) / order_p))
    else:
        std_error = 0.0
    low = max(mean - Z_95 * se_mean, 0.0) ** (1.0 / order_p)
    high = (mean + Z_95 * se_mean) ** (1.0 / order_p)
    return value, std_error, min(low, value), max(high, value), 0


def _check_error_args(problem, scheme, Ns, ref_steps, order_p, paths):
    if scheme not in SCHEMES:
        raise ArgumentError(f"unknown scheme {scheme!r}")
    for steps in Ns:
        if steps < 1 or ref_steps % steps != 0:
            raise ArgumentError(f"steps {steps} must divide ref_steps {ref_steps}")
        if scheme == "implicit" and not steps > problem.reg_constant * problem.horizon:
            raise PreconditionError(f"implicit scheme needs N > cT, got N={steps}")
    if paths < 1:
        raise ArgumentError("paths must be >= 1")
    if order_p < 1:
        raise ArgumentError("order_p must be >= 1")


def convergence_sweep(problem: SdeProblem, scheme: str, Ns: Sequence[int], ref_steps: int,
                      order_p: float, paths: int, seed: int, reference: str = "auto",
                      opts: Optional[SolverOptions] = None,
                      workers: int = 1) -> list[ErrorEstimate]:
    """:func:`strong_error` for several ``N`` sharing one reference run per path.

    Values equal separate :func:`strong_error` calls exactly; ``wall_seconds``
    is the time spent in the scheme itself for that ``N``.
    """
    Ns = [int(n) for n in Ns]
    _check_error_args(problem, scheme, Ns, ref_steps, order_p, paths)
    reference = _resolve_reference(problem, reference)

    def work(ids):
        return _discrepancy_powers(problem, scheme, Ns, ref_steps, order_p, seed,
                                   reference, opts, ids)

    parts = _map_chunks(work, _chunks(paths), workers)
    estimates = []
    for j, steps in enumerate(Ns):
        powers = np.concatenate([part[j][0] for part in parts])
        seconds = sum(part[j][1] for part in parts)
        value, se, low, high, divergent = _summarise(powers, order_p)
        estimates.append(ErrorEstimate(steps, order_p, paths, value, se, low, high, divergent,
                                       scheme, problem.label, ref_steps, seconds))
    return estimates


def strong_error(problem: SdeProblem, scheme: str, steps: int, ref_steps: int,
                 order_p: float, paths: int, seed: int, reference: str = "auto",
                 opts: Optional[SolverOptions] = None, workers: int = 1) -> ErrorEstimate:
    """Strong L^p error of ``scheme`` at ``steps`` against a coupled reference.

    Each path samples increments at ``ref_steps``, runs the reference there
    (the exact solution for ``gbm``, tamed Euler otherwise, unless
    ``reference`` says which), coarsens the same increments to ``steps`` and
    runs the scheme.  Diverging explicit-Euler paths count as ``+inf`` and are
    tallied in ``divergent_paths``; any other overflow raises
    :class:`NumericError`.  ``wall_seconds`` covers the whole estimate.
    """
    start = time.perf_counter()
    (est,) = convergence_sweep(problem, scheme, [steps], ref_steps, order_p, paths, seed,
                               reference, opts, workers)
    return replace(est, wall_seconds=time.perf_counter() - start)


def estimate_order(estimates: Sequence[ErrorEstimate]) -> tuple[float, float, float]:
    """Least-squares fit ``log2(value) = intercept + slope * log2(steps)``.

    Returns ``(slope, intercept, r_squared)``; the intercept plays the role
    of ``log2`` of the error constant.
    """
    if len(estimates) < 3:
        raise ArgumentError("need at least 3 estimates")
    steps = [e.steps for e in estimates]
    if len(set(steps)) != len(steps):
        raise ArgumentError("estimates must have distinct step counts")
    values = [e.value for e in estimates]
    if not all(v > 0 and math.isfinite(v) for v in values):
        raise ArgumentError("all error values must be finite and positive")
    x = np.log2(np.array(steps, dtype=float))
    y = np.log2(np.array(values, dtype=float))
    xm, ym = x.mean(), y.mean()
    sxx = float(np.sum((x - xm) ** 2))
    slope = float(np.sum((x - xm) * (y - ym))) / sxx
    intercept = float(ym - slope * xm)
    ss_tot = float(np.sum((y - ym) ** 2))
    ss_res = float(np.sum((y - intercept - slope * x) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return slope, intercept, r2


def predict_error(slope: float, intercept: float, steps: int) -> float:
    """Evaluate a fitted line from :func:`estimate_order` at ``steps``."""
    return 2.0 ** (intercept + slope * math.log2(steps))


def moment_sweep(problem: SdeProblem, scheme: str, order_p: float, Ns: Sequence[int],
                 paths: int, seed: int, opts: Optional[SolverOptions] = None,
                 workers: int = 1) -> list[MomentRow]:
    """``max_n mean_j |Y_n|^p`` and the overflowed fraction for each ``N``.

    After an overflow a path contributes ``+inf`` to every later time.
    """
    if paths < 1:
        raise ArgumentError("paths must be >= 1")
    if scheme not in SCHEMES:
        raise ArgumentError(f"unknown scheme {scheme!r}")
    rows = []
    for N in Ns:
        def work(ids, N=N):
            batch = sample_batch(N, problem.dim_noise, problem.horizon, seed, ids)
            sim = run_scheme(problem, scheme, batch, opts)
            with np.errstate(over="ignore", invalid="ignore"):
                powers = np.sum(sim.states ** 2, axis=-1) ** (order_p / 2.0)
            for i in np.flatnonzero(sim.overflowed):
                powers[i, sim.overflowed_at[i]:] = np.inf
            return powers, int(np.sum(sim.overflowed))

        parts = _map_chunks(work, _chunks(paths), workers)
        powers = np.concatenate([p for p, _ in parts])
        overflowed = sum(k for _, k in parts)
        with np.errstate(invalid="ignore"):
            means = [math.fsum(col) / paths if np.all(np.isfinite(col)) else math.inf
                     for col in powers.T.tolist()]
        rows.append(MomentRow(int(N), max(means), overflowed / paths))
    return rows


@dataclass(frozen=True, eq=False)
class DivergenceReport:
    explicit: DiscretePath
    tamed: DiscretePath
    trace: DominatorTrace
    domination: DominationReport
    ignited: bool
    threshold: float

    @property
    def status(self) -> str:
        return "ignited" if self.ignited else "no ignition"


def divergence_demo(problem: SdeProblem, steps: int, trigger_step: int,
                    trigger_magnitude: float) -> DivergenceReport:
    """Drive explicit and tamed Euler with a single noise kick.

    All increments are zero except ``trigger_magnitude`` at ``trigger_step``.
    Once ``|y| >= (3N/T)^(1/4)`` the explicit step at least doubles ``|y|``
    for ``-x^5`` drift, so the explicit path overflows, while the tamed
    path moves by less than one per step.
    """
    if problem.label != "quintic_gl":
        raise PreconditionError("divergence demo is defined for quintic_gl")
    if not 0 <= trigger_step < steps:
        raise ArgumentError(f"trigger_step must lie in [0, {steps})")
    inc = np.zeros((steps, problem.dim_noise))
    inc[trigger_step, 0] = trigger_magnitude
    grid = IncrementGrid(steps, problem.dim_noise, problem.horizon, inc, 0, 0)
    explicit = explicit_euler(problem, grid)
    tamed = tamed_euler(problem, grid)
    trace = dominator_trace(problem, grid, tamed)
    report = assert_domination(tamed, trace)
    threshold = (3.0 * steps / problem.horizon) ** 0.25
    after = explicit.states[trigger_step + 1:]
    with np.errstate(invalid="ignore"):
        reached = bool(np.any(np.abs(after[np.isfinite(after)]) >= threshold))
    ignited = explicit.overflowed_at is not None or reached
    return DivergenceReport(explicit, tamed, trace, report, ignited, threshold)
