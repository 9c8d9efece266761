import math
from dataclasses import replace

import numpy as np
import pytest

from singular_control_hub.core.bsde import McConfig
from singular_control_hub.core.exceptions import ConfigurationError, StructuralError
from singular_control_hub.core.grids import SpaceGrid, TimeGrid
from singular_control_hub.core.hjb_checks import jump_inequality_check
from singular_control_hub.core.model import ControlSet
from singular_control_hub.core.problems import closed_form_section4, get_problem
from singular_control_hub.core.verification import (
    BatteryConfig,
    BatteryReport,
    DPOracleConfig,
    cross_check,
    dp_oracle,
    estimate_battery,
)

from conftest import make_spec

LINEAR_CANDIDATE = get_problem("linear_fk").candidate_policy()


def oracle_config(dx=0.05, steps=10, **kwargs):
    return DPOracleConfig(sgrid=SpaceGrid.uniform([-2.0], [2.0], dx), tgrid=TimeGrid(0.0, 1.0, steps), **kwargs)


def test_oracle_of_zero_problem_is_zero(wang):
    surface = dp_oracle(wang, oracle_config())
    assert np.all(surface.u == 0.0)
    assert surface.metadata["method"] == "markov_chain_dp"


def test_oracle_reproduces_linear_feynman_kac(linear_fk):
    surface = dp_oracle(linear_fk, oracle_config(dx=0.02))
    assert surface.sgrid.counts == (201,)
    x = surface.sgrid.points[..., 0]
    error = np.abs(surface.u[0] - (x + 1.0))[surface.interior]
    assert error.max() <= 1e-2
    assert np.array_equal(surface.u[-1], x)


def test_oracle_rejects_oversized_chain_step(linear_fk):
    with pytest.raises(ConfigurationError) as info:
        dp_oracle(linear_fk, oracle_config(chain_dt=0.5))
    assert info.value.key == "chain_dt"


def test_oracle_configuration_is_validated(linear_fk):
    with pytest.raises(ConfigurationError):
        oracle_config(chain_dt=-1.0)
    with pytest.raises(ConfigurationError):
        DPOracleConfig(sgrid=SpaceGrid.uniform([0.0, 0.0], [1.0, 1.0], 0.5), tgrid=TimeGrid(0.0, 1.0, 2))
    with pytest.raises(ConfigurationError) as info:
        dp_oracle(linear_fk, oracle_config(max_entries=10))
    assert info.value.key == "oracle"
    with pytest.raises(StructuralError):
        dp_oracle(linear_fk, DPOracleConfig(sgrid=SpaceGrid.uniform([-2.0], [2.0], 0.1),
                                            tgrid=TimeGrid(0.0, 2.0, 4)))


@pytest.mark.slow
def test_oracle_matches_section4_closed_form(section4):
    surface = dp_oracle(section4, oracle_config(dx=0.05, steps=20))
    exact = closed_form_section4(0.0, surface.sgrid.points[..., 0])
    assert np.max(np.abs(surface.u[0] - exact)[surface.interior]) <= 5e-2


def test_oracle_is_monotone_in_terminal_function(section4):
    config = oracle_config(dx=0.1)
    lower = replace(section4, Phi=lambda x: x[..., 0] - 0.2 - 0.1 * np.cos(x[..., 0]) ** 2)
    assert np.all(dp_oracle(lower, config).u <= dp_oracle(section4, config).u)


def test_oracle_satisfies_jump_inequality_on_its_grid(section4):
    surface = dp_oracle(section4, oracle_config(dx=0.1))
    report = jump_inequality_check(surface, section4, [[0.1], [0.2]], interior_only=False)
    assert report.max_violation <= 1e-12


def test_oracle_agrees_with_solver_on_linear_problem(linear_fk, linear_fk_surface):
    oracle = dp_oracle(linear_fk, oracle_config(steps=20))
    x = oracle.sgrid.points[oracle.interior]
    gap = np.abs(oracle.u[0][oracle.interior] - linear_fk_surface.value(0.0, x))
    assert gap.max() <= 1e-2


@pytest.mark.slow
def test_oracle_agrees_with_solver_on_section4(section4, section4_fine_surface):
    oracle = dp_oracle(section4, oracle_config(dx=0.05, steps=20))
    x = oracle.sgrid.points[oracle.interior]
    for index in (0, 10):
        t = float(oracle.tgrid.nodes[index])
        gap = np.abs(oracle.u[index][oracle.interior] - section4_fine_surface.value(t, x))
        assert gap.max() <= 5e-2


def test_cross_check_agrees_on_linear_problem(linear_fk, linear_fk_surface):
    oracle = dp_oracle(linear_fk, oracle_config(steps=20))
    mc = McConfig(paths=20_000, steps=20, seed=3)
    points = [(0.0, [0.5]), (0.5, [0.0])]
    report = cross_check(linear_fk, points, linear_fk_surface, mc, LINEAR_CANDIDATE, oracle_surface=oracle)
    assert report.passed
    assert report.as_dict()["cross_check.passed"] == "True"
    assert report.rows[0].pde == pytest.approx(1.5, abs=1e-6)

    swapped = cross_check(linear_fk, points, oracle, mc, LINEAR_CANDIDATE, oracle_surface=linear_fk_surface,
                          tol_pde=report.tol_oracle, tol_oracle=report.tol_pde)
    assert swapped.flags() == report.flags()


def test_cross_check_runs_the_oracle_when_configured(linear_fk, linear_fk_surface):
    report = cross_check(linear_fk, [(0.0, [0.0])], linear_fk_surface, McConfig(paths=5000, steps=10),
                         LINEAR_CANDIDATE, oracle_cfg=oracle_config(steps=20))
    assert report.rows[0].pde_oracle_pass


def test_cross_check_needs_an_oracle(linear_fk, linear_fk_surface):
    with pytest.raises(StructuralError):
        cross_check(linear_fk, [(0.0, [0.0])], linear_fk_surface, McConfig(paths=10, steps=2), LINEAR_CANDIDATE)


@pytest.mark.slow
def test_cross_check_anchors_on_section4(section4, section4_fine_surface):
    candidate = get_problem("section4").candidate_policy()
    points = [(0.0, [1.0]), (0.0, [-1.0])]
    report = cross_check(section4, points, section4_fine_surface, McConfig(paths=20_000, steps=200, seed=4),
                         candidate, oracle_cfg=oracle_config(steps=20))
    assert report.passed
    for row, exact in zip(report.rows, (math.exp(-1.0), -math.e)):
        assert row.pde == pytest.approx(exact, abs=2e-2)
        assert row.oracle == pytest.approx(exact, abs=5e-2)
        assert row.mc.value == pytest.approx(exact, abs=3.0 * row.mc.stderr + 2e-2)


def test_battery_on_noiseless_problem():
    spec = make_spec(U=ControlSet.intervals((0.0, 1.0)))
    report = estimate_battery(spec, BatteryConfig(mc=McConfig(paths=200, steps=10)))
    assert set(report.perturbation) == {0.2, 0.1, 0.05}
    assert all(pair == (0.0, 0.0) for pair in report.perturbation.values())
    assert report.slope == math.inf
    assert report.passed
    assert [x0 for x0, _, _ in report.growth] == [0.5, 1.0, 2.0]
    assert report.as_dict()["battery.passed"] == "True"


def test_battery_rejects_window_longer_than_horizon():
    spec = make_spec(U=ControlSet.intervals((0.0, 1.0)))
    with pytest.raises(ConfigurationError):
        estimate_battery(spec, BatteryConfig(windows=(2.0,), mc=McConfig(paths=50, steps=5)))


def battery_report(perturbation):
    return BatteryReport(perturbation=perturbation, growth=[], windows={}, slope=math.inf,
                         slope_threshold=1.2, stability_ratio=4.0)


def test_battery_requires_shrinking_cost_gap():
    growing = battery_report({0.2: (1.0, 1.0), 0.1: (1.0, 2.5), 0.05: (1.0, 1.0)})
    assert growing.perturbation_stable
    assert not growing.perturbation_monotone
    assert not growing.passed
    assert growing.as_dict()["battery.perturbation_monotone"] == "False"

    shrinking = battery_report({0.2: (1.0, 1.0), 0.1: (1.0, 1.5), 0.05: (1.0, 1.0)})
    assert shrinking.perturbation_monotone
    assert shrinking.passed


def test_battery_configuration_is_validated():
    with pytest.raises(StructuralError):
        BatteryConfig(windows=(0.1, -0.05))
    with pytest.raises(StructuralError):
        BatteryConfig(perturbations=(0.0,))
    with pytest.raises(StructuralError):
        BatteryConfig(stability_ratio=-1.0)


@pytest.mark.slow
def test_battery_window_slope_on_linear_problem(linear_fk):
    report = estimate_battery(linear_fk)
    assert report.perturbation == {}
    assert report.slope >= 1.2
    assert report.passed


@pytest.mark.slow
def test_battery_on_section4_is_finite_and_stable(section4):
    report = estimate_battery(section4, BatteryConfig(mc=McConfig(paths=5000, steps=40)))
    assert report.growth_finite
    assert report.perturbation_stable
    assert all(math.isfinite(gap) for gap in report.windows.values())
    assert report.perturbation_monotone
