"""SDE problem definitions and the built-in test equations.

Coefficient functions are vectorised: ``drift`` maps an array of shape
``(..., d)`` to ``(..., d)`` and ``diffusion`` maps ``(..., d)`` to
``(..., d, m)``.  Every scheme evaluates them on whole batches of paths at
once, so they must broadcast over leading axes and must be pure.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .exceptions import ConfigurationError, NumericError

__all__ = [
    "SdeProblem",
    "BUILTIN_NAMES",
    "make_builtin",
    "estimate_one_sided_lipschitz",
    "estimate_diffusion_lipschitz",
    "check_derivative_growth",
    "validate_problem",
]

Coefficient = Callable[[np.ndarray], np.ndarray]

FD_STEP = 1e-5


@dataclass(frozen=True, eq=False)
class SdeProblem:
    """Autonomous Ito SDE ``dX = mu(X) dt + sigma(X) dW`` on ``[0, T]``.

    ``reg_constant`` is the constant ``c`` that simultaneously bounds the
    diffusion Lipschitz constant, the one-sided Lipschitz constant of the
    drift and the polynomial growth ``|mu'(x)| <= c (1 + |x|^c)``.  It is
    stored rather than inferred; :func:`validate_problem` checks it by
    sampling.

    ``noise_product`` optionally computes ``sigma(x) @ dw`` directly.  It is
    a performance hook for structured diffusions (identity, diagonal) and
    must agree with the dense product.
    """

    dim_state: int
    dim_noise: int
    horizon: float
    drift: Coefficient
    diffusion: Coefficient
    initial_value: np.ndarray
    reg_constant: float
    label: str = "custom"
    noise_product: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = field(
        default=None, repr=False
    )

    def __post_init__(self):
        if self.dim_state < 1 or self.dim_noise < 1:
            raise ConfigurationError("dimensions must be positive")
        if not self.horizon > 0:
            raise ConfigurationError(f"horizon must be positive, got {self.horizon}")
        if not self.reg_constant >= 1:
            raise ConfigurationError(
                f"reg_constant must be >= 1, got {self.reg_constant}"
            )
        x0 = np.array(self.initial_value, dtype=float).reshape(-1)
        if x0.shape != (self.dim_state,):
            raise ConfigurationError(
                f"initial_value has shape {x0.shape}, expected ({self.dim_state},)"
            )
        if not np.all(np.isfinite(x0)):
            raise ConfigurationError("initial_value must be finite")
        x0.flags.writeable = False
        object.__setattr__(self, "initial_value", x0)

    def sigma_dw(self, x: np.ndarray, dw: np.ndarray) -> np.ndarray:
        """``sigma(x) dw`` for batched ``x`` of shape (..., d), ``dw`` (..., m)."""
        if self.noise_product is not None:
            return self.noise_product(x, dw)
        return np.einsum("...ij,...j->...i", self.diffusion(x), dw)


# -- built-in problems --------------------------------------------------------


def _quintic_drift(x):
    return -(x**5)


def _cubic_drift(x):
    return x - x**3


def _zero_drift(x):
    return np.zeros_like(x)


def _linear_diffusion(x):
    return x[..., :, None]


def _scalar_product(x, dw):
    return x * dw


def _double_well_drift(x):
    return x - np.einsum("...i,...i->...", x, x)[..., None] * x


def _identity_product(x, dw):
    return np.array(dw, dtype=float, copy=True)


BUILTIN_NAMES = ("quintic_gl", "cubic_gl", "langevin_double_well", "gbm")


def make_builtin(name: str, dim: int = 1) -> SdeProblem:
    """Return one of the built-in equations with a verified ``reg_constant``.

    ``quintic_gl``
        ``dX = -X^5 dt + X dW``, ``X_0 = 1``; ``c = 5``.
    ``cubic_gl``
        ``dX = (X - X^3) dt + X dW``, ``X_0 = 1``; ``c = 3``.
    ``langevin_double_well``
        ``dX = (X - |X|^2 X) dt + dW`` in ``R^d`` with ``m = d``,
        ``X_0 = 0``; ``c = 3``.
    ``gbm``
        ``dX = X dW``, ``X_0 = 1``; ``c = 1``.

    All use ``T = 1``.
    """
    if name not in BUILTIN_NAMES:
        raise ConfigurationError(
            f"unknown problem {name!r}; expected one of {', '.join(BUILTIN_NAMES)}"
        )
    if dim < 1:
        raise ConfigurationError(f"dim must be positive, got {dim}")
    if name != "langevin_double_well" and dim != 1:
        raise ConfigurationError(f"problem {name!r} is scalar; dim must be 1")

    if name == "quintic_gl":
        return SdeProblem(1, 1, 1.0, _quintic_drift, _linear_diffusion, [1.0], 5.0,
                          name, _scalar_product)
    if name == "cubic_gl":
        return SdeProblem(1, 1, 1.0, _cubic_drift, _linear_diffusion, [1.0], 3.0,
                          name, _scalar_product)
    if name == "gbm":
        return SdeProblem(1, 1, 1.0, _zero_drift, _linear_diffusion, [1.0], 1.0,
                          name, _scalar_product)

    eye = np.eye(dim)

    def identity_diffusion(x):
        return np.broadcast_to(eye, np.shape(x) + (dim,))

    return SdeProblem(dim, dim, 1.0, _double_well_drift, identity_diffusion,
                      np.zeros(dim), 3.0, name, _identity_product)


# -- sampled regularity checks -----------------------------------------------


def _sample_ball(rng, count, dim, radius):
    direction = rng.standard_normal((count, dim))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    r = radius * rng.random(count) ** (1.0 / dim)
    return direction * r[:, None]


def _sample_pairs(problem, samples, radius, seed):
    if samples < 1:
        raise ConfigurationError("samples must be >= 1")
    if not radius > 0:
        raise ConfigurationError("radius must be positive")
    rng = np.random.default_rng(seed)
    x = _sample_ball(rng, samples, problem.dim_state, radius)
    y = _sample_ball(rng, samples, problem.dim_state, radius)
    keep = np.any(x != y, axis=1)
    return x[keep], y[keep]


def _finite_or_raise(values, inputs, what):
    bad = ~np.all(np.isfinite(values.reshape(len(values), -1)), axis=1)
    if np.any(bad):
        idx = int(np.argmax(bad))
        raise NumericError(f"non-finite {what} at x={inputs[idx]}", inputs[idx])


def estimate_one_sided_lipschitz(problem: SdeProblem, samples: int, radius: float,
                                 seed: int) -> float:
    """Largest sampled ``<x-y, mu(x)-mu(y)> / |x-y|^2`` over pairs in a ball."""
    x, y = _sample_pairs(problem, samples, radius, seed)
    mx = problem.drift(x)
    _finite_or_raise(mx, x, "drift")
    my = problem.drift(y)
    _finite_or_raise(my, y, "drift")
    diff = x - y
    quotient = np.sum(diff * (mx - my), axis=1) / np.sum(diff * diff, axis=1)
    return float(np.max(quotient))


def estimate_diffusion_lipschitz(problem: SdeProblem, samples: int, radius: float,
                                 seed: int) -> float:
    """Largest sampled ``|sigma(x)-sigma(y)| / |x-y|`` (operator norm)."""
    x, y = _sample_pairs(problem, samples, radius, seed)
    sx = np.asarray(problem.diffusion(x))
    _finite_or_raise(sx, x, "diffusion")
    sy = np.asarray(problem.diffusion(y))
    _finite_or_raise(sy, y, "diffusion")
    num = np.linalg.norm(sx - sy, ord=2, axis=(-2, -1))
    return float(np.max(num / np.linalg.norm(x - y, axis=1)))


def drift_jacobian_fd(problem: SdeProblem, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central finite-difference Jacobian of the drift at a batch of points.

    Returns shape ``(n, d, d)`` with ``[k, i, j] = d mu_i / d x_j`` at ``x[k]``.
    """
    x = np.atleast_2d(x)
    d = x.shape[-1]
    shift = step * np.eye(d)
    plus = problem.drift(x[:, None, :] + shift)
    minus = problem.drift(x[:, None, :] - shift)
    return np.swapaxes((plus - minus) / (2.0 * step), -1, -2)


def check_derivative_growth(problem: SdeProblem, samples: int, radius: float,
                            seed: int) -> float:
    """Worst ratio ``|mu'(x)| / (c (1 + |x|^c))`` over sampled points.

    A value above one means the stored ``reg_constant`` does not bound the
    drift derivative.
    """
    rng = np.random.default_rng(seed)
    x = _sample_ball(rng, samples, problem.dim_state, radius)
    jac = drift_jacobian_fd(problem, x)
    _finite_or_raise(jac, x, "drift derivative")
    c = problem.reg_constant
    bound = c * (1.0 + np.linalg.norm(x, axis=1) ** c)
    return float(np.max(np.linalg.norm(jac, ord=2, axis=(-2, -1)) / bound))


def validate_problem(problem: SdeProblem, samples: int = 10_000, radius: float = 10.0,
                     seed: int = 0, atol: float = 1e-9) -> None:
    """Raise :class:`ConfigurationError` unless ``reg_constant`` witnesses all
    three regularity conditions on the sampled points."""
    c = problem.reg_constant
    osl = estimate_one_sided_lipschitz(problem, samples, radius, seed)
    if osl > c + atol:
        raise ConfigurationError(
            f"{problem.label}: one-sided Lipschitz quotient {osl} exceeds c={c}"
        )
    lip = estimate_diffusion_lipschitz(problem, samples, radius, seed + 1)
    if lip > c + atol:
        raise ConfigurationError(
            f"{problem.label}: diffusion Lipschitz quotient {lip} exceeds c={c}"
        )
    # central differences with step 1e-5 carry O(1e-10) relative error
    growth = check_derivative_growth(problem, samples, radius, seed + 2)
    if growth > 1.0 + 1e-6:
        raise ConfigurationError(
            f"{problem.label}: drift derivative exceeds c(1+|x|^c) by factor {growth}"
        )
