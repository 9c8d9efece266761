import math

import numpy as np
import pytest

from singular_control_hub.core.exceptions import (
    ConfigurationError,
    EvaluationError,
    ProblemNotFoundError,
    StructuralError,
)
from singular_control_hub.core.grids import SpaceGrid, TimeGrid
from singular_control_hub.core.model import ControlGrid, ControlSet, ProblemSpec, validate_problem
from singular_control_hub.core.problems import (
    builtin_linear_fk,
    builtin_section4,
    builtin_wang,
    closed_form_section4,
    get_problem,
    list_problems,
)

from conftest import make_spec


def test_time_grid_nodes_end_exactly_at_horizon():
    grid = TimeGrid(0.0, 1.0, 3)
    assert grid.nodes[-1] == 1.0
    assert np.all(np.diff(grid.nodes) > 0)
    assert grid.index_of(1.0 / 3.0) == 1


@pytest.mark.parametrize("t0, T, N", [(1.0, 1.0, 5), (0.0, 1.0, 0)])
def test_time_grid_rejects_bad_input(t0, T, N):
    with pytest.raises(StructuralError):
        TimeGrid(t0, T, N)


def test_space_grid_uniform_and_nearest_index():
    grid = SpaceGrid.uniform([-2.0], [2.0], 0.05)
    assert grid.counts == (81,)
    assert grid.dx[0] == pytest.approx(0.05)
    assert grid.nearest_index([1.0]) == (60,)
    assert grid.nearest_index([9.0]) == (80,)
    with pytest.raises(StructuralError):
        SpaceGrid.uniform([0.0], [1.0], -0.1)
    with pytest.raises(StructuralError):
        SpaceGrid((0.0,), (1.0,), (2,))


def test_interior_mask_drops_boundary_band():
    grid = SpaceGrid.uniform([0.0], [1.0], 0.1)
    mask = grid.interior_mask(0.1)
    assert not mask[0] and not mask[-1]
    assert mask[5]


def test_control_grid_keeps_endpoints_of_disconnected_set():
    grid = ControlGrid.from_set(ControlSet.intervals((-1.0, 0.0), (1.0, 2.0)))
    values = set(grid.points[:, 0].tolist())
    assert {-1.0, 0.0, 1.0, 2.0} <= values
    assert len(values) == len(grid)
    assert np.all(ControlSet.intervals((-1.0, 0.0), (1.0, 2.0)).contains(grid.points))


def test_control_grid_for_empty_control_has_one_point():
    grid = ControlGrid.from_set(ControlSet.singleton())
    assert grid.points.shape == (1, 0)


def test_control_set_rejects_empty_box():
    with pytest.raises(StructuralError):
        ControlSet.intervals((1.0, 0.0))


def test_problem_spec_rejects_mismatched_K():
    with pytest.raises(StructuralError) as info:
        ProblemSpec(
            n=1, d=1, k=0, m=1, T=1.0,
            b=lambda t, x, v: x, sigma=lambda t, x, v: x[..., None], f=lambda t, x, y, z, v: y,
            Phi=lambda x: x[..., 0], G=np.ones((1, 1)), K=np.ones(2), U=ControlSet.singleton(),
        )
    assert info.value.field == "K"


def test_section4_spec_matches_example_data():
    spec = builtin_section4()
    assert (spec.n, spec.d, spec.k, spec.m) == (1, 1, 1, 1)
    assert len(spec.U.boxes) == 2
    assert spec.Phi(np.array([[1.0]]))[0] == 1.0
    value = spec.f(0.0, np.array([[0.3]]), np.array([0.7]), np.array([[2.0]]), np.array([[-1.0]]))
    assert value[0] == 2.0


def test_section4_generator_is_linear_in_z():
    spec = builtin_section4()
    rng = np.random.default_rng(3)
    x = rng.uniform(-2, 2, size=(50, 1))
    y = rng.normal(size=50)
    z = rng.normal(size=(50, 1))
    v = rng.choice([-1.0, -0.5, 1.5, 2.0], size=(50, 1))
    for alpha in (-2.0, 0.0, 3.5):
        np.testing.assert_allclose(spec.f(0.0, x, y, alpha * z, v), alpha * spec.f(0.0, x, y, z, v))


def test_wang_spec():
    spec = builtin_wang(0.0, 0.0, 1.0, 0.0)
    assert spec.Phi(np.array([[5.0]]))[0] == 0.0
    assert spec.G[0, 0] == 1.0 and spec.K[0] == 1.0
    shifted = builtin_wang(1.0, 2.0, 1.0, 0.0)
    assert shifted.b(0.0, np.array([[3.0]]), np.zeros((1, 0)))[0, 0] == 5.0
    with pytest.raises(StructuralError):
        builtin_wang(0.0, 0.0, 0.0, 0.0)


def test_linear_fk_exact_values():
    entry = get_problem("linear_fk")
    exact = entry.exact_value({"c": 0.0})
    assert exact(0.0, np.array([[1.0]]))[0] == 1.0
    exact = entry.exact_value({"c": 1.0})
    assert exact(0.0, np.array([[0.0]]))[0] == 1.0
    with pytest.raises(StructuralError):
        builtin_linear_fk(K0=0.0)


def test_closed_form_section4():
    assert closed_form_section4(1.0, 0.7) == pytest.approx(0.7)
    assert closed_form_section4(0.0, 1.0) == pytest.approx(math.exp(-1.0))
    assert closed_form_section4(0.0, -1.0) == pytest.approx(-math.e)


def test_registry_lookup_and_parameter_validation():
    assert list_problems() == ["linear_fk", "section4", "wang"]
    assert get_problem(" Section4 ").name == "section4"
    with pytest.raises(ProblemNotFoundError):
        get_problem("nope")
    with pytest.raises(ConfigurationError) as info:
        get_problem("section4").resolve_params({"sigma": 1.0})
    assert info.value.key == "problem.sigma"


def test_validate_problem_reports_assumptions_for_section4():
    report = validate_problem(builtin_section4(), sample_count=10_000, rng_seed=1)
    assert report.passed["positive_cost"]
    assert report.all_passed
    # |b(x) - b(x')| = |1 + v| |x - x'| <= 3 |x - x'|
    assert report.lipschitz_estimates["b"] <= 3.0 + 1e-9
    assert all(value >= 0 and np.isfinite(value) for value in report.lipschitz_estimates.values())


def test_validate_problem_is_deterministic():
    first = validate_problem(builtin_section4(), 500, rng_seed=7).as_dict()
    second = validate_problem(builtin_section4(), 500, rng_seed=7).as_dict()
    assert first == second


def test_validate_problem_flags_zero_cost():
    report = validate_problem(make_spec(K=0.0), 100, rng_seed=0)
    assert report.passed["positive_cost"] is False
    assert report.k_min == 0.0


@pytest.mark.parametrize("factory", [builtin_section4, builtin_wang, builtin_linear_fk])
def test_builtins_pass_assumptions(factory):
    assert validate_problem(factory(), 10_000, rng_seed=0).all_passed


def test_validate_problem_names_wrong_shape():
    spec = make_spec(b=lambda t, x, v: np.zeros(np.shape(x)[:-1] + (2,)))
    with pytest.raises(StructuralError) as info:
        validate_problem(spec, 10, rng_seed=0)
    assert info.value.field == "b"


def test_validate_problem_reports_non_finite_sample():
    spec = make_spec(Phi=lambda x: np.where(x[..., 0] > 1.5, np.inf, x[..., 0]))
    with pytest.raises(EvaluationError) as info:
        validate_problem(spec, 1000, rng_seed=0)
    assert info.value.function == "Phi"
