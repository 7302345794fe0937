"""Dominating processes for the tamed Euler scheme and a pathwise check.

For a tamed path ``Y`` on increments ``dW`` with ``lambda = (1 + 2c + T +
|mu(0)| + |sigma(0)|)^4`` and

    alpha_k = 1{|Y_k| >= 1} <Y_k / |Y_k|, sigma(Y_k) dW_k / |Y_k|>,
    t_k     = lambda |dW_k|^2 + alpha_k,
    D_n     = (lambda + |xi|) exp(lambda + max_{u <= n} sum_{k=u}^{n-1} t_k),

the bound ``|Y_n| <= D_n`` holds whenever ``D_k <= N^(1/(2c))`` and
``|dW_k| <= 1`` for every ``k < n``.  ``lambda`` is at least 81 for any
``c >= 1``, so ``D_n`` is stored as a logarithm.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np

from .brownian import IncrementBatch, IncrementGrid, sample_batch
from .exceptions import ArgumentError
from .schemes import DiscretePath, PathBatch, tamed_euler
from .sde_model import SdeProblem

__all__ = [
    "DominatorTrace",
    "Violation",
    "DominationReport",
    "lambda_of",
    "alpha_terms",
    "dominator_path",
    "log_dominator_path",
    "omega_flags",
    "dominator_trace",
    "assert_domination",
    "omega_complement_rate",
    "batch_domination",
    "DOMINATION_RTOL",
]

DOMINATION_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class DominatorTrace:
    lam: float
    alphas: np.ndarray
    log_dominators: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        if len(self.log_dominators) != len(self.alphas) + 1:
            raise ArgumentError("need one more dominator than alpha term")
        if len(self.omega) != len(self.log_dominators):
            raise ArgumentError("omega flags and dominators differ in length")

    @property
    def dominators(self) -> np.ndarray:
        """``D_n`` itself; saturates to ``inf`` where it exceeds float range."""
        with np.errstate(over="ignore"):
            return np.exp(self.log_dominators)

    @property
    def saturated(self) -> bool:
        return bool(np.any(np.isinf(self.dominators)))


class Violation(NamedTuple):
    step: int
    norm: float
    log_dominator: float


@dataclass
class DominationReport:
    violations: list = field(default_factory=list)
    max_log_ratio: float = -math.inf
    checked: int = 0

    def __len__(self):
        return len(self.violations)

    def __bool__(self):
        return bool(self.violations)

    @property
    def indices(self) -> list[int]:
        return [v.step for v in self.violations]


def _norms(x: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(x * x, axis=-1))


def lambda_of(problem: SdeProblem) -> float:
    zero = np.zeros(problem.dim_state)
    mu0 = float(np.linalg.norm(problem.drift(zero)))
    sigma0 = float(np.linalg.norm(np.asarray(problem.diffusion(zero)), ord=2))
    return (1.0 + 2.0 * problem.reg_constant + problem.horizon + mu0 + sigma0) ** 4


def alpha_terms(path: DiscretePath, problem: SdeProblem, grid: IncrementGrid) -> np.ndarray:
    """``alpha_n`` for ``n = 0..N-1``; zero wherever ``|Y_n| < 1``."""
    states = np.asarray(path.states)[:-1]
    inc = np.asarray(grid.increments)
    if len(states) != len(inc):
        raise ArgumentError("path and grid have different step counts")
    norms = _norms(states)
    out = np.zeros(len(states))
    big = norms >= 1.0
    if np.any(big):
        y = states[big]
        noise = problem.sigma_dw(y, inc[big])
        out[big] = np.sum(y * noise, axis=-1) / norms[big] ** 2
    return out


def log_dominator_path(problem: SdeProblem, grid: IncrementGrid,
                       alphas: Sequence[float]) -> np.ndarray:
    """``log D_n`` for ``n = 0..N`` using the running maximum of trailing sums.

    ``S_0 = 0`` and ``S_{n+1} = max(0, S_n + t_n)`` equals
    ``max_{u <= n+1} sum_{k=u}^{n} t_k``, so the whole path costs O(N).
    """
    alphas = np.asarray(alphas, dtype=float)
    inc = np.asarray(grid.increments)
    if len(alphas) != grid.steps:
        raise ArgumentError(f"expected {grid.steps} alpha terms, got {len(alphas)}")
    lam = lambda_of(problem)
    terms = lam * np.sum(inc * inc, axis=-1) + alphas
    running = np.empty(grid.steps + 1)
    running[0] = s = 0.0
    for n, t in enumerate(terms.tolist()):
        s = max(0.0, s + t)
        running[n + 1] = s
    base = math.log(lam + float(np.linalg.norm(problem.initial_value)))
    return base + lam + running


def dominator_path(problem: SdeProblem, grid: IncrementGrid,
                   alphas: Sequence[float]) -> np.ndarray:
    """``D_n`` in linear scale; entries beyond float range become ``inf``."""
    with np.errstate(over="ignore"):
        return np.exp(log_dominator_path(problem, grid, alphas))


def omega_flags(problem: SdeProblem, grid: IncrementGrid,
                dominators: Sequence[float], log_scale: bool = False) -> np.ndarray:
    """``flag[n]`` is true iff ``D_k <= N^(1/(2c))`` and ``|dW_k| <= 1`` for all
    ``k < n``.  Pass ``log_scale=True`` when giving ``log D``."""
    dom = np.asarray(dominators, dtype=float)
    if len(dom) != grid.steps + 1:
        raise ArgumentError(f"expected {grid.steps + 1} dominators, got {len(dom)}")
    if log_scale:
        log_dom = dom
    else:
        with np.errstate(divide="ignore"):
            log_dom = np.log(dom)
    log_threshold = math.log(grid.steps) / (2.0 * problem.reg_constant)
    ok = (log_dom[:-1] <= log_threshold) & (_norms(np.asarray(grid.increments)) <= 1.0)
    flags = np.empty(grid.steps + 1, dtype=bool)
    flags[0] = True
    flags[1:] = np.logical_and.accumulate(ok)
    return flags


def dominator_trace(problem: SdeProblem, grid: IncrementGrid,
                    path: DiscretePath) -> DominatorTrace:
    alphas = alpha_terms(path, problem, grid)
    log_dom = log_dominator_path(problem, grid, alphas)
    flags = omega_flags(problem, grid, log_dom, log_scale=True)
    return DominatorTrace(lambda_of(problem), alphas, log_dom, flags)


def assert_domination(path: DiscretePath, trace: DominatorTrace,
                      rtol: float = DOMINATION_RTOL) -> DominationReport:
    """Check ``|Y_n| <= D_n (1 + rtol)`` at every ``n`` whose flag is set.

    The comparison is ``log|Y_n| <= log D_n + log1p(rtol)``.  The returned
    report is empty (falsy) when every check passes.
    """
    states = np.asarray(path.states)
    if len(states) != len(trace.log_dominators):
        raise ArgumentError(
            f"path has {len(states)} states, trace has {len(trace.log_dominators)}")
    report = DominationReport()
    slack = math.log1p(rtol)
    with np.errstate(divide="ignore"):
        log_norms = np.log(_norms(states))
    for n in np.flatnonzero(trace.omega):
        ratio = float(log_norms[n] - trace.log_dominators[n])
        report.checked += 1
        report.max_log_ratio = max(report.max_log_ratio, ratio)
        if not ratio <= slack:
            report.violations.append(
                Violation(int(n), float(math.exp(log_norms[n])), float(trace.log_dominators[n])))
    return report


def batch_domination(problem: SdeProblem, batch: IncrementBatch, paths: PathBatch,
                     rtol: float = DOMINATION_RTOL):
    """Vectorised :func:`dominator_trace` + :func:`assert_domination` over a batch.

    Returns ``(violations, max_log_ratio, omega_final)`` with one entry per
    path: the number of failed checks, the largest ``log|Y_n| - log D_n``
    over flagged ``n``, and whether the event still holds at ``n = N``.
    """
    states = np.asarray(paths.states)
    inc = np.asarray(batch.increments)
    P, N = inc.shape[0], inc.shape[1]
    lam = lambda_of(problem)
    norms = _norms(states)
    big = norms[:, :-1] >= 1.0
    alphas = np.zeros((P, N))
    if np.any(big):
        y = states[:, :-1][big]
        alphas[big] = np.sum(y * problem.sigma_dw(y, inc[big]), axis=-1) / norms[:, :-1][big] ** 2
    terms = lam * np.sum(inc * inc, axis=-1) + alphas
    running = np.zeros((P, N + 1))
    for n in range(N):
        running[:, n + 1] = np.maximum(0.0, running[:, n] + terms[:, n])
    log_dom = math.log(lam + float(np.linalg.norm(problem.initial_value))) + lam + running
    ok = (log_dom[:, :-1] <= math.log(N) / (2.0 * problem.reg_constant)) & (
        _norms(inc) <= 1.0)
    flags = np.ones((P, N + 1), dtype=bool)
    flags[:, 1:] = np.logical_and.accumulate(ok, axis=1)
    with np.errstate(divide="ignore"):
        ratio = np.log(norms) - log_dom
    masked = np.where(flags, ratio, -np.inf)
    violations = np.sum(flags & ~(ratio <= math.log1p(rtol)), axis=1)
    return violations, masked.max(axis=1), flags[:, -1]


def omega_complement_rate(problem: SdeProblem, Ns: Sequence[int], paths: int, seed: int,
                          sampler: Optional[Callable] = None) -> list[tuple[int, float]]:
    """Monte Carlo frequency of the complement of the event at ``n = N``.

    ``sampler(steps, m, T, seed, path_ids)`` may replace the Brownian
    generator; it must return an :class:`IncrementBatch`.
    """
    if paths < 1:
        raise ArgumentError("paths must be >= 1")
    sampler = sampler or sample_batch
    table = []
    for N in Ns:
        misses = 0
        for start in range(0, paths, 512):
            batch = sampler(N, problem.dim_noise, problem.horizon, seed,
                            range(start, min(paths, start + 512)))
            _, _, held = batch_domination(problem, batch, tamed_euler(problem, batch))
            misses += int(np.sum(~held))
        table.append((int(N), misses / paths))
    return table
