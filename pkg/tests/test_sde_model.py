import numpy as np
import pytest

from tamed_sde.exceptions import ConfigurationError, NumericError
from tamed_sde.sde_model import (BUILTIN_NAMES, SdeProblem, check_derivative_growth,
                                 estimate_diffusion_lipschitz, estimate_one_sided_lipschitz,
                                 make_builtin, validate_problem)


def _problems():
    return [make_builtin(n) for n in BUILTIN_NAMES if n != "langevin_double_well"] + [
        make_builtin("langevin_double_well", d) for d in (1, 3, 10)
    ]


def test_quintic_values_at_one():
    p = make_builtin("quintic_gl")
    assert p.drift(np.array([1.0]))[0] == -1.0
    assert p.diffusion(np.array([1.0]))[0, 0] == 1.0
    assert p.reg_constant == 5.0
    assert p.initial_value.tolist() == [1.0]


def test_gbm_has_zero_drift():
    p = make_builtin("gbm")
    x = np.linspace(-50, 50, 101)[:, None]
    assert np.all(p.drift(x) == 0.0)


def test_langevin_shapes_and_identity_diffusion():
    p = make_builtin("langevin_double_well", 10)
    assert (p.dim_state, p.dim_noise) == (10, 10)
    assert np.all(p.drift(np.zeros(10)) == 0.0)
    np.testing.assert_array_equal(p.diffusion(np.ones(10)), np.eye(10))
    x = np.random.default_rng(0).normal(size=(7, 10))
    dw = np.random.default_rng(1).normal(size=(7, 10))
    # noise_product shortcut equals the generic contraction
    np.testing.assert_array_equal(p.sigma_dw(x, dw),
                                  np.einsum("...ij,...j->...i", p.diffusion(x), dw))


def test_drift_vectorised_matches_pointwise():
    for p in _problems():
        x = np.random.default_rng(3).normal(size=(5, p.dim_state))
        batched = p.drift(x)
        for i in range(5):
            np.testing.assert_array_equal(batched[i], p.drift(x[i]))


def test_unknown_builtin_and_bad_dim():
    with pytest.raises(ConfigurationError):
        make_builtin("nosuch")
    with pytest.raises(ConfigurationError):
        make_builtin("quintic_gl", 2)
    with pytest.raises(ConfigurationError):
        make_builtin("langevin_double_well", 0)


def test_problem_rejects_small_constant_and_bad_x0():
    p = make_builtin("gbm")
    with pytest.raises(ConfigurationError):
        SdeProblem(1, 1, 1.0, p.drift, p.diffusion, [1.0], 0.5)
    with pytest.raises(ConfigurationError):
        SdeProblem(1, 1, 1.0, p.drift, p.diffusion, [1.0, 2.0], 1.0)
    with pytest.raises(ConfigurationError):
        SdeProblem(1, 1, 1.0, p.drift, p.diffusion, [np.nan], 1.0)


def test_problem_is_immutable():
    p = make_builtin("cubic_gl")
    with pytest.raises(Exception):
        p.reg_constant = 1.0
    with pytest.raises(ValueError):
        p.initial_value[0] = 2.0


def test_one_sided_lipschitz_examples():
    assert estimate_one_sided_lipschitz(make_builtin("gbm"), 1000, 10.0, 4) == 0.0
    assert estimate_one_sided_lipschitz(make_builtin("quintic_gl"), 1000, 10.0, 1) <= 0.0
    assert estimate_one_sided_lipschitz(make_builtin("cubic_gl"), 1000, 10.0, 1) <= 1.0 + 1e-9


@pytest.mark.parametrize("problem", _problems(), ids=lambda p: f"{p.label}-{p.dim_state}")
def test_builtin_constants_witness_regularity(problem):
    c = problem.reg_constant
    assert estimate_one_sided_lipschitz(problem, 10_000, 10.0, 0) <= c + 1e-9
    assert estimate_diffusion_lipschitz(problem, 10_000, 10.0, 0) <= c + 1e-9
    assert check_derivative_growth(problem, 2000, 10.0, 0) <= 1.0 + 1e-6
    validate_problem(problem, samples=2000)


def test_validate_rejects_understated_constant():
    # dX = -x^7 dt: derivative 7|x|^6 is not bounded by 1 + |x|
    p = SdeProblem(1, 1, 1.0, lambda x: -x**7, lambda x: np.zeros(np.shape(x) + (1,)),
                   [1.0], 1.0, "septic")
    with pytest.raises(ConfigurationError):
        validate_problem(p, samples=2000)


def test_validate_rejects_large_one_sided_constant():
    p = SdeProblem(1, 1, 1.0, lambda x: 4.0 * x, lambda x: np.zeros(np.shape(x) + (1,)),
                   [1.0], 2.0, "linear")
    with pytest.raises(ConfigurationError):
        validate_problem(p, samples=500)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_coefficients_raise():
    p = SdeProblem(1, 1, 1.0, lambda x: np.exp(x**3), lambda x: np.zeros(np.shape(x) + (1,)),
                   [0.0], 1.0, "explosive")
    with pytest.raises(NumericError):
        estimate_one_sided_lipschitz(p, 1000, 10.0, 0)
