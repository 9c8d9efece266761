import math
from dataclasses import replace

import numpy as np
import pytest

from singular_control_hub.core.bsde import (
    McConfig,
    RegressionBasis,
    backward_semigroup,
    comparison_check,
    cost_functional,
    semigroup_solution,
    solve_bsde,
)
from singular_control_hub.core.exceptions import ConfigurationError, ContractError
from singular_control_hub.core.grids import SpaceGrid, TimeGrid
from singular_control_hub.core.model import ControlGrid
from singular_control_hub.core.problems import builtin_linear_fk, builtin_wang
from singular_control_hub.core.sde import RegularControlPolicy, SingularControlPath, simulate_forward
from singular_control_hub.core.utils import Estimate
from singular_control_hub.core.verification import DPOracleConfig, dp_oracle

NO_CONTROL = RegularControlPolicy.constant([])
BASIS = RegressionBasis()


def test_martingale_terminal_gives_initial_state():
    spec = builtin_linear_fk(c=0.0)
    estimate = cost_functional(spec, 0.0, [0.4], NO_CONTROL, None, McConfig(paths=20_000, steps=20, seed=2))
    assert estimate.within(0.4, 3.0)


def test_constant_generator_integrates_exactly():
    spec = builtin_linear_fk(c=1.0)
    estimate = cost_functional(spec, 0.25, [0.5], NO_CONTROL, None, McConfig(paths=20_000, steps=20, seed=4))
    assert estimate.within(0.5 + 0.75, 3.0)


@pytest.mark.slow
def test_linear_feynman_kac_at_full_path_count(linear_fk):
    estimate = cost_functional(linear_fk, 0.0, [0.5], NO_CONTROL, None, McConfig(paths=100_000, steps=20, seed=11))
    assert estimate.within(1.5, 3.0)


def test_jump_adds_its_cost_to_the_value():
    spec = builtin_linear_fk(c=1.0, G0=0.0, K0=1.0)
    xi = SingularControlPath.single_jump(20, 1, 0, 1.0)
    estimate = cost_functional(spec, 0.0, [0.5], NO_CONTROL, xi, McConfig(paths=20_000, steps=20, seed=5))
    assert estimate.within(0.5 + 1.0 + 1.0, 3.0)


def test_zero_data_gives_zero_cost():
    spec = builtin_wang(0.0, 0.0, 1.0, 0.0)
    estimate = cost_functional(spec, 0.0, [0.3], NO_CONTROL, None, McConfig(paths=500, steps=10))
    assert estimate.value == 0.0


def test_section4_without_control_follows_deterministic_flow(section4):
    estimate = cost_functional(section4, 0.0, [1.0], RegularControlPolicy.constant([0.0]), None,
                               McConfig(paths=64, steps=2000))
    assert abs(estimate.value - math.e) <= 3.0 * estimate.stderr + 1e-3


def test_fixed_control_matches_markov_chain_value(section4):
    fixed = ControlGrid(np.array([[-1.0]]))
    oracle = dp_oracle(section4, DPOracleConfig(sgrid=SpaceGrid.uniform([-2.0], [2.0], 0.02),
                                                tgrid=TimeGrid(0.0, 1.0, 10), control_grid=fixed, jump_steps=0))
    bundle = simulate_forward(section4, TimeGrid(0.0, 1.0, 50), [1.0], RegularControlPolicy.constant([-1.0]), None,
                              20_000, 5)
    solution = solve_bsde(section4, bundle, section4.Phi(bundle.X[:, -1]), BASIS)
    assert solution.y0.value == pytest.approx(oracle.value(0.0, [[1.0]])[0], abs=5e-2)
    assert oracle.value(0.0, [[1.0]])[0] == pytest.approx(math.exp(-1.0), abs=1e-2)


def test_terminal_slice_is_copied_exactly(section4):
    bundle = simulate_forward(section4, TimeGrid(0.0, 1.0, 10), [1.0], RegularControlPolicy.constant([-1.0]),
                              None, 1000, 1)
    terminal = np.sin(bundle.X[:, -1, 0])
    solution = solve_bsde(section4, bundle, terminal, BASIS)
    assert np.array_equal(solution.Y[:, -1], terminal)
    assert np.all(np.isfinite(solution.Y)) and np.all(np.isfinite(solution.Z))


def test_solution_is_linear_in_terminal_values():
    spec = builtin_wang(0.0, 0.0, 1.0, 0.3)
    bundle = simulate_forward(spec, TimeGrid(0.0, 1.0, 10), [0.2], NO_CONTROL, None, 2000, 8)
    rng = np.random.default_rng(0)
    terminals = [rng.normal(size=bundle.M) + bundle.X[:, -1, 0] ** 2 for _ in range(3)]
    parts = [solve_bsde(spec, bundle, terminal, BASIS).Y for terminal in terminals]
    combined = solve_bsde(spec, bundle, sum(terminals), BASIS).Y
    np.testing.assert_allclose(combined, sum(parts), rtol=1e-10, atol=1e-10)


def test_value_is_consistent_across_seeds():
    spec = builtin_linear_fk(c=1.0)
    estimates = [
        cost_functional(spec, 0.0, [0.0], NO_CONTROL, None, McConfig(paths=5000, steps=10, seed=seed))
        for seed in range(20)
    ]
    values = np.array([e.value for e in estimates])
    reported = np.mean([e.stderr for e in estimates])
    assert values.std(ddof=1) <= 1.5 * reported


def test_semigroup_matches_cost_at_horizon():
    spec = builtin_linear_fk(c=1.0)
    mc = McConfig(paths=5000, steps=10, seed=3)
    full = backward_semigroup(spec, 0.0, 1.0, [0.5], NO_CONTROL, None, spec.Phi, mc)
    assert full == cost_functional(spec, 0.0, [0.5], NO_CONTROL, None, mc)
    assert full.within(1.5, 3.0)


def test_zero_terminal_semigroup():
    spec = builtin_linear_fk(c=0.0)
    estimate = backward_semigroup(spec, 0.0, 0.5, [1.0], NO_CONTROL, None, lambda x: np.zeros(x.shape[0]),
                                  McConfig(paths=200, steps=5))
    assert estimate.value == 0.0


def test_semigroup_composition():
    spec = builtin_linear_fk(c=1.0)
    mc = McConfig(paths=20_000, steps=10, seed=6)
    full = semigroup_solution(spec, 0.0, 1.0, [0.0], NO_CONTROL, None, spec.Phi, mc)
    # node 5 of [0, 1] is t = 0.5; there the states are spread out
    eta = full.value_function(5)
    nested = backward_semigroup(spec, 0.0, 0.5, [0.0], NO_CONTROL, None, eta, McConfig(paths=20_000, steps=5, seed=7))
    combined = math.hypot(full.y0.stderr, nested.stderr)
    assert abs(full.y0.value - nested.value) <= 3.0 * combined + 0.02
    assert nested.within(1.0, 3.0, extra=0.02)


def test_semigroup_rejects_inverted_window():
    spec = builtin_linear_fk()
    with pytest.raises(ContractError):
        backward_semigroup(spec, 0.5, 0.5, [0.0], NO_CONTROL, None, spec.Phi, McConfig(paths=10, steps=2))


def test_comparison_identical_problems():
    spec = builtin_linear_fk(c=1.0)
    bundle = simulate_forward(spec, TimeGrid(0.0, 1.0, 10), [0.0], NO_CONTROL, None, 2000, 0)
    report = comparison_check(spec, spec, bundle, BASIS)
    assert report.passed
    assert report.margin.value == 0.0


def test_comparison_generator_shift_integrates_to_horizon():
    low = builtin_linear_fk(c=0.0)
    high = builtin_linear_fk(c=1.0)
    bundle = simulate_forward(low, TimeGrid(0.0, 1.0, 10), [0.0], NO_CONTROL, None, 2000, 0)
    report = comparison_check(high, low, bundle, BASIS)
    assert report.passed
    assert report.margin.value == pytest.approx(1.0, abs=1e-6)


def test_comparison_terminal_shift():
    spec = builtin_linear_fk(c=0.0)
    shifted = replace(spec, Phi=lambda x: x[..., 0] + 1.0)
    bundle = simulate_forward(spec, TimeGrid(0.0, 1.0, 10), [0.0], NO_CONTROL, None, 2000, 0)
    report = comparison_check(shifted, spec, bundle, BASIS)
    assert report.margin.value == pytest.approx(1.0, abs=1e-6)


def test_comparison_precondition_violation_is_raised():
    low = builtin_linear_fk(c=0.0)
    high = builtin_linear_fk(c=1.0)
    bundle = simulate_forward(low, TimeGrid(0.0, 1.0, 5), [0.0], NO_CONTROL, None, 100, 0)
    with pytest.raises(ContractError) as info:
        comparison_check(low, high, bundle, BASIS)
    assert "f^1 >= f^2" in info.value.reason


def test_comparison_randomized_suite():
    rng = np.random.default_rng(2024)
    base = builtin_wang(0.0, 0.0, 1.0, 0.5)
    successes = 0
    for trial in range(50):
        a, b = rng.uniform(0.0, 0.5, size=2)
        upper = replace(
            base,
            f=lambda t, x, y, z, v, a=a: 0.5 * z[..., 0] + a + 0.0 * y,
            Phi=lambda x, b=b: np.sin(x[..., 0]) + b,
        )
        lower = replace(base, Phi=lambda x: np.sin(x[..., 0]))
        bundle = simulate_forward(base, TimeGrid(0.0, 1.0, 10), [0.0], NO_CONTROL, None, 500, trial)
        successes += comparison_check(upper, lower, bundle, BASIS, seed=trial).passed
    assert successes >= 48


def test_partition_basis_and_configuration_errors():
    basis = RegressionBasis(kind="partition", bins=4)
    states = np.linspace(0.0, 1.0, 400)[:, None]
    fit = basis.fit(states, states[:, 0])
    assert np.max(np.abs(fit.predict(states) - states[:, 0])) <= 0.25
    with pytest.raises(ConfigurationError):
        RegressionBasis(kind="spline")
    with pytest.raises(ConfigurationError):
        McConfig(paths=0)


def test_degenerate_states_collapse_to_mean():
    fit = RegressionBasis().fit(np.ones((10, 1)), np.arange(10.0))
    assert np.all(fit.predict(np.zeros((3, 1))) == 4.5)


def test_estimate_helpers():
    estimate = Estimate.from_samples(np.array([1.0, 3.0]))
    assert estimate.value == 2.0
    assert estimate.within(2.5, extra=0.5)
