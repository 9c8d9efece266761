import math

import numpy as np
import pytest

from singular_control_hub.core.exceptions import ContractError, SimulationError, StructuralError
from singular_control_hub.core.grids import TimeGrid
from singular_control_hub.core.model import ControlSet
from singular_control_hub.core.sde import (
    RegularControlPolicy,
    SingularControlPath,
    SingularFeedbackRule,
    TestFunction,
    brownian_increments,
    ito_residual,
    moment_scaling,
    simulate_forward,
)

from conftest import make_spec

NO_CONTROL = RegularControlPolicy.constant([])


def unit_noise_spec(**kwargs):
    return make_spec(sigma=lambda t, x, v: np.ones(np.shape(x) + (1,)), **kwargs)


def test_zero_dynamics_keep_initial_state(zero_spec):
    bundle = simulate_forward(zero_spec, TimeGrid(0.0, 1.0, 10), [0.7], NO_CONTROL, None, 5, seed=1)
    assert bundle.X.shape == (5, 11, 1)
    assert np.all(bundle.X == 0.7)


def test_single_jump_pushes_state_by_its_size(zero_spec):
    xi = SingularControlPath.single_jump(10, 1, node=3, size=2.0)
    bundle = simulate_forward(zero_spec, TimeGrid(0.0, 1.0, 10), [0.0], NO_CONTROL, xi, 3, seed=0)
    assert np.all(bundle.X[:, :4, 0] == 0.0)
    assert np.all(bundle.X_plus[:, 3, 0] == 2.0)
    assert np.all(bundle.X[:, 4:, 0] == 2.0)
    assert np.all(bundle.xi_total[:, 0] == 2.0)


def test_larger_jump_gives_larger_state(zero_spec):
    grid = TimeGrid(0.0, 1.0, 8)
    small = simulate_forward(zero_spec, grid, [0.0], NO_CONTROL, SingularControlPath.single_jump(8, 1, 2, 0.5), 4, 0)
    large = simulate_forward(zero_spec, grid, [0.0], NO_CONTROL, SingularControlPath.single_jump(8, 1, 2, 1.5), 4, 0)
    assert np.all(large.X >= small.X)
    assert np.any(large.X > small.X)


def test_singular_path_is_nondecreasing_from_zero():
    xi = SingularControlPath(np.full((5, 1), 0.3), ((1, [0.5]), (4, [0.25])))
    cumulative = xi.cumulative(0.2)
    assert cumulative[0, 0] == 0.0
    assert np.all(np.diff(cumulative[:, 0]) >= 0)
    with pytest.raises(ContractError):
        SingularControlPath(np.full((5, 1), -0.1))
    with pytest.raises(ContractError):
        SingularControlPath(np.zeros((5, 1)), ((2, [-1.0]),))
    with pytest.raises(StructuralError):
        SingularControlPath(np.zeros((5, 1)), ((5, [1.0]),))


def test_simulation_is_reproducible_and_prefix_stable(section4):
    grid = TimeGrid(0.0, 1.0, 20)
    policy = RegularControlPolicy.constant([-1.0])
    first = simulate_forward(section4, grid, [1.0], policy, None, 3000, seed=11)
    second = simulate_forward(section4, grid, [1.0], policy, None, 3000, seed=11, threads=4)
    assert np.array_equal(first.X, second.X)
    assert np.array_equal(first.dW, second.dW)
    shorter = simulate_forward(section4, grid, [1.0], policy, None, 1500, seed=11)
    assert np.array_equal(shorter.X, first.X[:1500])


def test_brownian_increments_reject_negative_seed():
    with pytest.raises(StructuralError):
        brownian_increments(-1, 10, 5, 1, 0.1)


def test_policy_outside_control_set_is_rejected(section4):
    with pytest.raises(ContractError):
        simulate_forward(section4, TimeGrid(0.0, 1.0, 5), [1.0], RegularControlPolicy.constant([0.5]), None, 4, 0)


def test_feedback_rule_with_negative_jump_is_rejected(zero_spec):
    rule = SingularFeedbackRule(jump=lambda t, x: -np.ones((x.shape[0], 1)))
    with pytest.raises(ContractError):
        simulate_forward(zero_spec, TimeGrid(0.0, 1.0, 5), [0.0], NO_CONTROL, rule, 4, 0)


def test_non_finite_state_reports_step():
    spec = make_spec(b=lambda t, x, v: np.where(t > 0.45, np.inf, 0.0) + 0.0 * x)
    with pytest.raises(SimulationError) as info:
        simulate_forward(spec, TimeGrid(0.0, 1.0, 10), [0.0], NO_CONTROL, None, 4, 0)
    assert info.value.step == 6


def test_open_loop_policy_values_are_applied(section4):
    values = np.tile([[-1.0], [2.0]], (5, 1))
    bundle = simulate_forward(section4, TimeGrid(0.0, 1.0, 10), [1.0], RegularControlPolicy.open_loop(values), None, 3, 0)
    assert np.array_equal(bundle.controls[0, :, 0], values[:, 0])


def test_mean_of_deterministic_growth(section4):
    # v = 0 kills the diffusion: dX = X ds
    bundle = simulate_forward(section4, TimeGrid(0.0, 1.0, 2000), [1.0], RegularControlPolicy.constant([0.0]),
                              None, 16, seed=0)
    assert bundle.X[:, -1, 0].mean() == pytest.approx(math.e, abs=2e-3)


def test_ito_residual_of_constant_is_exactly_zero(section4):
    xi = SingularControlPath.single_jump(20, 1, 5, 0.3)
    bundle = simulate_forward(section4, TimeGrid(0.0, 1.0, 20), [1.0], RegularControlPolicy.constant([2.0]), xi, 200, 0)
    result = ito_residual(section4, bundle, TestFunction.constant(4.0))
    assert result.residual.value == 0.0
    assert result.residual.stderr == 0.0


def test_ito_residual_of_identity_for_brownian_motion():
    spec = unit_noise_spec()
    bundle = simulate_forward(spec, TimeGrid(0.0, 1.0, 50), [0.5], NO_CONTROL, None, 20_000, 3)
    result = ito_residual(spec, bundle, TestFunction.linear([1.0]), control_variate=False)
    assert result.passes(3.0)


def test_ito_residual_of_square_with_jump(section4):
    xi = SingularControlPath.single_jump(200, 1, 40, 0.5)
    bundle = simulate_forward(section4, TimeGrid(0.0, 1.0, 200), [1.0], RegularControlPolicy.constant([-1.0]),
                              xi, 20_000, 5)
    result = ito_residual(section4, bundle, TestFunction.square())
    assert result.jump_term > 0
    assert result.passes(3.0, extra=0.05)


def test_ito_residual_bias_shrinks_linearly_in_step():
    spec = unit_noise_spec()
    steps = (10, 20, 40)
    means = []
    for count in steps:
        bundle = simulate_forward(spec, TimeGrid(0.0, 1.0, count), [0.5], NO_CONTROL, None, 50_000, 8)
        means.append(ito_residual(spec, bundle, TestFunction.exp_square()).residual.value)
    slope = np.polyfit(np.log([1.0 / count for count in steps]), np.log(np.abs(means)), 1)[0]
    assert 0.7 <= slope <= 1.3


def test_moment_scaling_zero_dynamics(zero_spec):
    report = moment_scaling(zero_spec, TimeGrid(0.0, 1.0, 5), [[0.5], [1.0], [2.0]], NO_CONTROL, None, 10, 0)
    assert [m.value for m in report.sup_moments] == pytest.approx([0.25, 1.0, 4.0])
    assert report.c_hat <= 1.0


def test_moment_scaling_deterministic_flow_difference():
    spec = make_spec(b=lambda t, x, v: x)
    grid = TimeGrid(0.0, 1.0, 100)
    report = moment_scaling(spec, grid, [[1.0], [1.1], [1.3]], NO_CONTROL, None, 4, 0)
    i, j, estimate = report.pairwise[0]
    assert (i, j) == (0, 1)
    # |X^x - X^x'| = (1 + dt)^N |x - x'| at the last node
    expected = (1.0 + grid.dt) ** (2 * grid.N)
    assert estimate.value == pytest.approx(expected, rel=1e-9)


def test_moment_scaling_section4_ratio_bounded(section4):
    report = moment_scaling(section4, TimeGrid(0.0, 1.0, 50), [[0.5], [1.0], [2.0]],
                            RegularControlPolicy.constant([0.0]), None, 100, 0)
    assert max(report.ratios) <= math.e ** 2
    with pytest.raises(ContractError):
        moment_scaling(section4, TimeGrid(0.0, 1.0, 5), [[0.5], [1.0]], RegularControlPolicy.constant([0.0]),
                       None, 10, 0)


def test_control_set_contains_tolerance():
    control_set = ControlSet.intervals((-1.0, 0.0), (1.0, 2.0))
    assert control_set.contains(np.array([[0.0 + 1e-13]]))[0]
    assert not control_set.contains(np.array([[0.5]]))[0]
