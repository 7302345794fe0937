"""Explicit, tamed and implicit Euler schemes on a shared Brownian grid.

Every stepper accepts either a single :class:`IncrementGrid` (returning a
:class:`DiscretePath`) or an :class:`IncrementBatch` (returning a
:class:`PathBatch`).  Batches are advanced in lock-step with numpy, but
each path's arithmetic is independent of the others, so a path's states
do not depend on which batch it was simulated in.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .brownian import IncrementBatch, IncrementGrid, brownian_path
from .exceptions import ArgumentError, InvariantViolation, PreconditionError, SolverError
from .sde_model import SdeProblem

__all__ = [
    "SCHEMES",
    "DiscretePath",
    "PathBatch",
    "SolverOptions",
    "explicit_euler",
    "tamed_euler",
    "implicit_euler",
    "implicit_cardano_cubic",
    "run_scheme",
    "taming_defect",
    "tamed_interpolant",
    "tamed_drift_increment",
]

SCHEMES = ("explicit", "tamed", "implicit", "implicit-cardano")

OVERFLOW_MAGNITUDE = 1e300


@dataclass(frozen=True, eq=False)
class DiscretePath:
    """States ``Y_0, ..., Y_N`` of one path, shape ``(N + 1, d)``.

    ``states[overflowed_at]`` holds the first value beyond ``1e300`` in
    magnitude (possibly ``inf`` or NaN); all later states are NaN.
    """

    states: np.ndarray
    steps: int
    scheme_tag: str
    overflowed_at: Optional[int] = None
    max_drift_increment: float = math.nan
    newton_iterations: int = 0

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]


@dataclass(frozen=True, eq=False)
class PathBatch:
    """States of ``P`` paths, shape ``(P, N + 1, d)``.

    ``overflowed_at[i]`` is -1 for paths that stayed finite.
    """

    states: np.ndarray
    steps: int
    scheme_tag: str
    overflowed_at: np.ndarray
    path_ids: np.ndarray
    max_drift_increment: float = math.nan
    newton_iterations: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.states)

    @property
    def overflowed(self) -> np.ndarray:
        return self.overflowed_at >= 0

    def path(self, i: int) -> DiscretePath:
        ov = int(self.overflowed_at[i])
        iters = 0 if self.newton_iterations is None else int(self.newton_iterations[i])
        return DiscretePath(self.states[i], self.steps, self.scheme_tag,
                            None if ov < 0 else ov, self.max_drift_increment, iters)


@dataclass(frozen=True)
class SolverOptions:
    """Newton settings for the implicit scheme.

    The finite-difference step used at a state ``y`` is
    ``fd_step * (1 + |y|)``.
    """

    residual_tol: float = 1e-12
    max_iterations: int = 50
    fd_step: float = 1e-7

    def __post_init__(self):
        if not self.residual_tol > 0:
            raise ArgumentError("residual_tol must be positive")
        if self.max_iterations < 1:
            raise ArgumentError("max_iterations must be >= 1")
        if not self.fd_step > 0:
            raise ArgumentError("fd_step must be positive")


Grid = Union[IncrementGrid, IncrementBatch]


# -- helpers ------------------------------------------------------------------


def _norm(x: np.ndarray) -> np.ndarray:
    if x.shape[-1] == 1:
        return np.abs(x[..., 0])
    return np.sqrt(np.einsum("...i,...i->...", x, x))


def _unpack(problem: SdeProblem, grid: Grid):
    if grid.dim_noise != problem.dim_noise:
        raise ArgumentError(
            f"grid has {grid.dim_noise} noise components, problem expects {problem.dim_noise}")
    if not math.isclose(grid.horizon, problem.horizon, rel_tol=1e-12):
        raise ArgumentError(
            f"grid horizon {grid.horizon} differs from problem horizon {problem.horizon}")
    if isinstance(grid, IncrementBatch):
        return grid.increments, grid.path_ids, False
    return grid.increments[None], np.array([grid.path_id], dtype=np.uint64), True


def _initial_states(problem: SdeProblem, paths: int, steps: int) -> np.ndarray:
    states = np.empty((paths, steps + 1, problem.dim_state))
    states[:, 0] = problem.initial_value
    return states


def _pack(single, states, steps, tag, overflow, ids, max_inc=math.nan, iters=None):
    if single:
        ov = int(overflow[0])
        return DiscretePath(states[0], steps, tag, None if ov < 0 else ov, max_inc,
                            0 if iters is None else int(iters[0]))
    return PathBatch(states, steps, tag, overflow, ids, max_inc, iters)


def tamed_drift_increment(problem: SdeProblem, y: np.ndarray, dt: float):
    """``dt*mu(y) / (1 + dt*|mu(y)|)`` for batched ``y``, plus the largest
    increment norm in the batch."""
    v = dt * problem.drift(y)
    nv = _norm(v)
    # x / (1 + x) is monotone under rounding, so the batch max maps to the max norm
    top = float(np.max(nv))
    return v / (1.0 + nv)[..., None], top / (1.0 + top)


# -- explicit and tamed -------------------------------------------------------


def _first_overflow(states: np.ndarray) -> np.ndarray:
    """Index of the first state beyond ``OVERFLOW_MAGNITUDE`` per path, or -1."""
    with np.errstate(invalid="ignore"):
        bad = ~(np.max(np.abs(states), axis=-1) <= OVERFLOW_MAGNITUDE)
    first = np.argmax(bad, axis=1)
    return np.where(bad[np.arange(len(bad)), first], first, -1).astype(np.int64)


def _explicit_family(problem: SdeProblem, grid: Grid, tamed: bool):
    inc, ids, single = _unpack(problem, grid)
    paths, steps = inc.shape[0], inc.shape[1]
    dt = grid.horizon / steps
    inc = np.ascontiguousarray(np.swapaxes(inc, 0, 1))
    # step-major while stepping so each write is contiguous
    states = np.empty((steps + 1, paths, problem.dim_state))
    states[0] = problem.initial_value
    overflow = np.full(paths, -1, dtype=np.int64)
    y = states[0].copy()
    drift, sigma_dw = problem.drift, problem.sigma_dw
    top_seen = 0.0
    with np.errstate(over="ignore", invalid="ignore"):
        if tamed:
            # increments of norm < 1 cannot reach 1e300 in any feasible N, so
            # overflow is located after the loop instead of at every step
            for n in range(steps):
                v = dt * drift(y)
                nv = _norm(v)
                top = float(nv.max())
                if not top / (1.0 + top) < 1.0:
                    raise InvariantViolation(
                        f"tamed drift increment norm {top / (1.0 + top)} >= 1 at step {n}")
                if top > top_seen:
                    top_seen = top
                y = y + v / (1.0 + nv)[..., None] + sigma_dw(y, inc[n])
                states[n + 1] = y
            states = np.swapaxes(states, 0, 1)
            overflow = _first_overflow(states)
        else:
            for n in range(steps):
                y = y + dt * drift(y) + sigma_dw(y, inc[n])
                states[n + 1] = y
                if not np.abs(y).max() <= OVERFLOW_MAGNITUDE:
                    bad = ~(np.max(np.abs(y), axis=-1) <= OVERFLOW_MAGNITUDE)
                    overflow[bad & (overflow < 0)] = n + 1
                    # overflowed paths idle at zero; their tail is blanked below
                    y[bad] = 0.0
                    if np.all(overflow >= 0):
                        states[n + 2:] = np.nan
                        break
            states = np.swapaxes(states, 0, 1)
    states = np.ascontiguousarray(states)
    for i in np.flatnonzero(overflow >= 0):
        states[i, overflow[i] + 1:] = np.nan
    tag = "tamed" if tamed else "explicit"
    max_inc = top_seen / (1.0 + top_seen) if tamed else math.nan
    return _pack(single, states, steps, tag, overflow, ids, max_inc)


def explicit_euler(problem: SdeProblem, grid: Grid):
    """Euler-Maruyama: ``Y+ = Y + dt mu(Y) + sigma(Y) dW``.

    Paths whose state leaves ``|y| <= 1e300`` (or turns non-finite) record
    the step in ``overflowed_at`` and stop there.
    """
    return _explicit_family(problem, grid, tamed=False)


def tamed_euler(problem: SdeProblem, grid: Grid):
    """Tamed Euler: ``Y+ = Y + dt mu(Y) / (1 + dt |mu(Y)|) + sigma(Y) dW``.

    Raises :class:`InvariantViolation` if a drift increment norm is not
    strictly below one in floating point.  The largest norm seen is kept in
    ``max_drift_increment``.
    """
    return _explicit_family(problem, grid, tamed=True)


def taming_defect(problem: SdeProblem, state, steps: int) -> np.ndarray:
    """Second-order term separating a tamed step from an explicit one:
    ``-(T/N)^2 mu(y) |mu(y)| / (1 + (T/N)|mu(y)|)``."""
    if steps < 1:
        raise ArgumentError("steps must be >= 1")
    y = np.asarray(state, dtype=float)
    dt = problem.horizon / steps
    mu = problem.drift(y)
    nmu = _norm(mu)[..., None]
    return -(dt**2) * mu * nmu / (1.0 + dt * nmu)


def tamed_interpolant(problem: SdeProblem, path: DiscretePath, grid: IncrementGrid,
                      t: float, w_at_t) -> np.ndarray:
    """Continuous-time tamed interpolant at ``t`` given ``W_t``.

    On ``[nT/N, (n+1)T/N]``:
    ``Y_n + (t - nT/N) mu(Y_n) / (1 + (T/N)|mu(Y_n)|) + sigma(Y_n)(W_t - W_{nT/N})``;
    the last segment is used at ``t = T``.
    """
    horizon, steps = grid.horizon, grid.steps
    if not 0.0 <= t <= horizon:
        raise ArgumentError(f"t={t} outside [0, {horizon}]")
    pos = t * steps / horizon
    n = int(round(pos)) if abs(pos - round(pos)) < 1e-9 else int(math.floor(pos))
    n = min(n, steps - 1)
    dt = horizon / steps
    y = path.states[n]
    w_n = brownian_path(grid)[n]
    mu = problem.drift(y)
    drift = (t - n * dt) * mu / (1.0 + dt * _norm(mu))
    return y + drift + problem.sigma_dw(y, np.asarray(w_at_t, dtype=float) - w_n)


# -- implicit -----------------------------------------------------------------


def _fd_jacobian(problem: SdeProblem, y: np.ndarray, h: np.ndarray,
                 eye: np.ndarray) -> np.ndarray:
    shift = h[:, None, None] * eye
    # one drift call on both stencils; row j of each block is y +- h e_j
    both = problem.drift(np.stack((y[:, None, :] + shift, y[:, None, :] - shift)))
    return np.swapaxes(both[0] - both[1], -1, -2) / (2.0 * h[:, None, None])


def _bisect_scalar(problem: SdeProblem, a: float, dt: float, tol: float) -> float:
    def f(x):
        return x - dt * problem.drift(np.array([x]))[0] - a

    width = 1.0 + abs(a)
    lo, hi = a - width, a + width
    while f(lo) > 0:
        lo -= width
        width *= 2
    width = 1.0 + abs(a)
    while f(hi) < 0:
        hi += width
        width *= 2
    while True:
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if abs(fm) <= tol or mid in (lo, hi):
            return mid
        if fm > 0:
            hi = mid
        else:
            lo = mid


def _newton_step(problem, y, a, dt, opts, eye, step_index):
    """Solve ``z - dt mu(z) = a`` row by row, starting from ``z = y``."""
    d = y.shape[-1]
    z = y.copy()
    iters = np.zeros(len(y), dtype=np.int64)
    idx = np.arange(len(y))
    for it in range(opts.max_iterations + 1):
        zi = z[idx]
        resid = zi - dt * problem.drift(zi) - a[idx]
        pending = ~(_norm(resid) <= opts.residual_tol)
        idx, zi, resid = idx[pending], zi[pending], resid[pending]
        if idx.size == 0 or it == opts.max_iterations:
            break
        h = opts.fd_step * (1.0 + _norm(zi))
        jac = eye - dt * _fd_jacobian(problem, zi, h, eye)
        if d == 1:
            delta = resid / jac[:, 0]
        else:
            delta = np.linalg.solve(jac, resid[..., None])[..., 0]
        z[idx] = zi - delta
        iters[idx] += 1
    if idx.size:
        if d != 1:
            raise SolverError(
                f"Newton did not reach residual {opts.residual_tol} in "
                f"{opts.max_iterations} iterations at step {step_index}", step_index)
        for i in idx:
            z[i, 0] = _bisect_scalar(problem, float(a[i, 0]), dt, opts.residual_tol)
    return z, iters


def implicit_euler(problem: SdeProblem, grid: Grid, opts: Optional[SolverOptions] = None):
    """Backward Euler: ``Y+ = Y + dt mu(Y+) + sigma(Y) dW``.

    Each step is solved by Newton's method with a central finite-difference
    Jacobian and a dense solve.  Scalar problems fall back to bisection when
    Newton stalls; otherwise :class:`SolverError` is raised.  Requires
    ``N > c T`` so that ``y - dt mu(y)`` is strictly monotone.
    """
    opts = opts or SolverOptions()
    inc, ids, single = _unpack(problem, grid)
    paths, steps = inc.shape[0], inc.shape[1]
    if not steps > problem.reg_constant * problem.horizon:
        raise PreconditionError(
            f"implicit Euler needs N > cT = {problem.reg_constant * problem.horizon}, "
            f"got N={steps}")
    dt = grid.horizon / steps
    states = _initial_states(problem, paths, steps)
    eye = np.eye(problem.dim_state)
    total_iters = np.zeros(paths, dtype=np.int64)
    y = states[:, 0].copy()
    for n in range(steps):
        rhs = y + problem.sigma_dw(y, inc[:, n])
        y, iters = _newton_step(problem, y, rhs, dt, opts, eye, n)
        total_iters += iters
        states[:, n + 1] = y
    if not np.all(np.isfinite(states)):
        raise SolverError("implicit Euler produced non-finite states")
    overflow = np.full(paths, -1, dtype=np.int64)
    return _pack(single, states, steps, "implicit", overflow, ids, iters=total_iters)


def implicit_cardano_cubic(y0: float, grid: Grid):
    """Backward Euler for ``dX = (X - X^3) dt + X dW`` on ``[0, 1]`` in closed form.

    The step equation ``y^3 + (N-1) y - 2q = 0`` with
    ``q = Y_n (N/2) (1 + dW_n)`` has the single real root
    ``cbrt(D + q) - cbrt(D - q)``, ``D = sqrt(q^2 + (N-1)^3/27)``.
    """
    if grid.dim_noise != 1:
        raise ArgumentError(f"Cardano scheme needs scalar noise, got m={grid.dim_noise}")
    if not math.isclose(grid.horizon, 1.0, rel_tol=1e-12):
        raise PreconditionError("Cardano scheme is specific to T = 1")
    steps = grid.steps
    if steps < 2:
        raise PreconditionError(f"Cardano scheme needs N >= 2, got {steps}")
    if isinstance(grid, IncrementBatch):
        inc, ids, single = grid.increments[..., 0], grid.path_ids, False
    else:
        inc, ids, single = grid.increments[None, :, 0], np.array([grid.path_id]), True
    paths = inc.shape[0]
    states = np.empty((paths, steps + 1, 1))
    states[:, 0, 0] = y0
    v = (steps - 1) ** 3 / 27.0
    y = np.full(paths, float(y0))
    for n in range(steps):
        q = y * steps * (1.0 + inc[:, n]) / 2.0
        disc = np.sqrt(q * q + v)
        y = np.cbrt(disc + q) - np.cbrt(disc - q)
        states[:, n + 1, 0] = y
    overflow = np.full(paths, -1, dtype=np.int64)
    return _pack(single, states, steps, "implicit-cardano", overflow, ids)


def run_scheme(problem: SdeProblem, scheme: str, grid: Grid,
               opts: Optional[SolverOptions] = None):
    """Dispatch on a scheme name from :data:`SCHEMES`."""
    if scheme == "explicit":
        return explicit_euler(problem, grid)
    if scheme == "tamed":
        return tamed_euler(problem, grid)
    if scheme == "implicit":
        return implicit_euler(problem, grid, opts)
    if scheme == "implicit-cardano":
        if problem.label != "cubic_gl":
            raise PreconditionError("implicit-cardano applies to cubic_gl only")
        _unpack(problem, grid)
        return implicit_cardano_cubic(float(problem.initial_value[0]), grid)
    raise ArgumentError(f"unknown scheme {scheme!r}; expected one of {', '.join(SCHEMES)}")
