"""Brownian increments on uniform grids, with exact coarsening for coupling.

Increments come from a counter-based generator (Philox-4x64) keyed by
``(seed, path_id)``.  Within a path, component ``j`` of step ``n`` is built
from raw 64-bit output number ``n * m + j`` of that key's stream:

    u = ((raw >> 11) + 0.5) * 2**-53        # uniform on (0, 1), never 0 or 1
    z = ndtri(u)                            # inverse standard normal CDF
    dW = sqrt(T / N) * z

so a grid depends only on (seed, path_id, step, component), never on the
order in which paths are generated or on how many workers generate them.

Coarse grids are obtained by summing fine increments in blocks.  A factor
is split into its prime factors in ascending order and each prime stage
sums its block left to right; hence coarsening by ``2**k`` is a fixed
pairwise tree and ``coarsen(coarsen(g, 2), 2)`` equals ``coarsen(g, 4)``
bit for bit.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Sequence, Union

import numpy as np
from scipy.special import ndtri

from .exceptions import ArgumentError

__all__ = [
    "IncrementGrid",
    "IncrementBatch",
    "sample_grid",
    "sample_batch",
    "coarsen",
    "brownian_path",
    "dump_grid",
    "load_grid",
]

_MASK64 = (1 << 64) - 1
_HEADER = struct.Struct("<QQdQQ")


@dataclass(frozen=True, eq=False)
class IncrementGrid:
    """Brownian increments of one path; ``increments`` has shape (steps, m)."""

    steps: int
    dim_noise: int
    horizon: float
    increments: np.ndarray
    path_id: int
    seed: int

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def __post_init__(self):
        object.__setattr__(self, "increments",
                           _checked(self.increments, (self.steps, self.dim_noise)))


@dataclass(frozen=True, eq=False)
class IncrementBatch:
    """Increments of several paths; ``increments`` has shape (P, steps, m)."""

    steps: int
    dim_noise: int
    horizon: float
    increments: np.ndarray
    path_ids: np.ndarray
    seed: int

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    def __post_init__(self):
        object.__setattr__(self, "path_ids", np.asarray(self.path_ids, dtype=np.uint64))
        object.__setattr__(self, "increments", _checked(
            self.increments, (len(self.path_ids), self.steps, self.dim_noise)))

    def __len__(self):
        return len(self.path_ids)

    def path(self, i: int) -> IncrementGrid:
        return IncrementGrid(self.steps, self.dim_noise, self.horizon,
                             self.increments[i], int(self.path_ids[i]), self.seed)


Grid = Union[IncrementGrid, IncrementBatch]


def _checked(arr, shape):
    arr = np.asarray(arr, dtype=np.float64)
    if arr.shape != shape:
        raise ArgumentError(f"increments have shape {arr.shape}, expected {shape}")
    arr.flags.writeable = False
    return arr


def _path_normals(seed: int, path_id: int, count: int) -> np.ndarray:
    key = np.array([seed & _MASK64, path_id & _MASK64], dtype=np.uint64)
    raw = np.random.Philox(key=key).random_raw(count)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    return ndtri(u)


def _check_sampling_args(steps, dim_noise, horizon):
    if steps < 1:
        raise ArgumentError(f"steps must be >= 1, got {steps}")
    if dim_noise < 1:
        raise ArgumentError(f"dim_noise must be >= 1, got {dim_noise}")
    if not (horizon > 0 and math.isfinite(horizon)):
        raise ArgumentError(f"horizon must be positive, got {horizon}")


def sample_grid(steps: int, dim_noise: int, horizon: float, seed: int,
                path_id: int) -> IncrementGrid:
    """Increments of path ``path_id`` at resolution ``steps``."""
    _check_sampling_args(steps, dim_noise, horizon)
    z = _path_normals(seed, path_id, steps * dim_noise)
    inc = np.sqrt(horizon / steps) * z.reshape(steps, dim_noise)
    return IncrementGrid(steps, dim_noise, float(horizon), inc,
                         path_id & _MASK64, seed & _MASK64)


def sample_batch(steps: int, dim_noise: int, horizon: float, seed: int,
                 path_ids: Sequence[int]) -> IncrementBatch:
    """Increments for several paths at once; row ``i`` equals
    ``sample_grid(..., path_ids[i]).increments`` exactly."""
    _check_sampling_args(steps, dim_noise, horizon)
    ids = np.array([int(p) & _MASK64 for p in path_ids], dtype=np.uint64)
    scale = np.sqrt(horizon / steps)
    inc = np.empty((len(ids), steps, dim_noise))
    for i, pid in enumerate(ids):
        inc[i] = scale * _path_normals(seed, int(pid), steps * dim_noise).reshape(
            steps, dim_noise)
    return IncrementBatch(steps, dim_noise, float(horizon), inc, ids, seed & _MASK64)


def _prime_factors(n: int) -> list[int]:
    out, p = [], 2
    while p * p <= n:
        while n % p == 0:
            out.append(p)
            n //= p
        p += 1
    if n > 1:
        out.append(n)
    return out


def _block_sum(inc: np.ndarray, factor: int) -> np.ndarray:
    for p in _prime_factors(factor):
        blocks = inc.reshape(inc.shape[:-2] + (inc.shape[-2] // p, p, inc.shape[-1]))
        acc = blocks[..., 0, :].copy()
        for j in range(1, p):
            acc += blocks[..., j, :]
        inc = acc
    return inc


def coarsen(grid: Grid, factor: int) -> Grid:
    """Sum consecutive blocks of ``factor`` increments."""
    if factor < 1 or grid.steps % factor != 0:
        raise ArgumentError(f"factor {factor} does not divide steps {grid.steps}")
    if factor == 1:
        return grid
    inc = _block_sum(np.asarray(grid.increments), factor)
    return replace(grid, steps=grid.steps // factor, increments=inc)


def brownian_path(grid: Grid) -> np.ndarray:
    """``W`` at the grid times: prefix sums in ascending order, ``W_0 = 0``.

    Shape is ``(steps + 1, m)``, or ``(P, steps + 1, m)`` for a batch.
    """
    inc = np.asarray(grid.increments)
    out = np.zeros(inc.shape[:-2] + (inc.shape[-2] + 1, inc.shape[-1]))
    np.cumsum(inc, axis=-2, out=out[..., 1:, :])
    return out


def dump_grid(grid: IncrementGrid, path: Union[str, Path]) -> None:
    """Write a grid as a little-endian header plus float64 increments.

    Header (40 bytes): ``steps`` u64, ``m`` u64, ``T`` f64, ``seed`` u64,
    ``path_id`` u64.  Body: ``steps * m`` f64 values, step-major.
    """
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(grid.steps, grid.dim_noise, grid.horizon,
                              grid.seed & _MASK64, grid.path_id & _MASK64))
        fh.write(np.ascontiguousarray(grid.increments, dtype="<f8").tobytes())


def load_grid(path: Union[str, Path]) -> IncrementGrid:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ArgumentError("truncated grid file")
    steps, m, horizon, seed, path_id = _HEADER.unpack_from(data)
    if (len(data) - _HEADER.size) % 8:
        raise ArgumentError("grid file body is not a whole number of float64 values")
    body = np.frombuffer(data, dtype="<f8", offset=_HEADER.size)
    if body.size != steps * m:
        raise ArgumentError(f"grid file holds {body.size} values, header says {steps * m}")
    return IncrementGrid(steps, m, horizon, body.astype(np.float64).reshape(steps, m),
                         path_id, seed)
