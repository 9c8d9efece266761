"""Общие фикстуры: задачи, грубые поверхности и каталог результатов."""

from __future__ import annotations

import numpy as np
import pytest

from singular_control_hub.core.grids import SpaceGrid, TimeGrid
from singular_control_hub.core.hjb import solve_hjb_vi
from singular_control_hub.core.model import ControlGrid, ControlSet, ProblemSpec
from singular_control_hub.core.problems import builtin_linear_fk, builtin_section4, builtin_wang
from singular_control_hub.infra.settings import OUTPUT_DIR_ENV, SettingsLoader

COARSE_DX = 0.05
COARSE_STEPS = 20


def make_spec(
    b=None,
    sigma=None,
    f=None,
    Phi=None,
    G: float = 1.0,
    K: float = 1.0,
    U: ControlSet | None = None,
    T: float = 1.0,
) -> ProblemSpec:
    """Одномерная задача (n = d = m = 1) с нулевыми коэффициентами по умолчанию."""
    U = U or ControlSet.singleton()
    return ProblemSpec(
        n=1, d=1, k=U.k, m=1, T=T,
        b=b or (lambda t, x, v: np.zeros_like(x, dtype=float)),
        sigma=sigma or (lambda t, x, v: np.zeros(np.shape(x) + (1,))),
        f=f or (lambda t, x, y, z, v: np.zeros(np.shape(x)[:-1])),
        Phi=Phi or (lambda x: x[..., 0]),
        G=np.array([[G]]), K=np.array([K]), U=U,
        time_homogeneous=True,
    )


def coarse_solve(spec: ProblemSpec, dx: float = COARSE_DX, steps: int = COARSE_STEPS, per_unit: int = 3):
    lo, hi = spec.domain[0]
    return solve_hjb_vi(
        spec,
        TimeGrid(0.0, spec.T, steps),
        SpaceGrid.uniform([lo], [hi], dx),
        ControlGrid.from_set(spec.U, per_unit),
    )


@pytest.fixture
def zero_spec() -> ProblemSpec:
    return make_spec()


@pytest.fixture(scope="session")
def section4() -> ProblemSpec:
    return builtin_section4()


@pytest.fixture(scope="session")
def linear_fk() -> ProblemSpec:
    return builtin_linear_fk(c=1.0, G0=1.0, K0=1.0)


@pytest.fixture(scope="session")
def wang() -> ProblemSpec:
    return builtin_wang(0.0, 0.0, 1.0, 0.0)


@pytest.fixture(scope="session")
def section4_surface(section4):
    return coarse_solve(section4)


@pytest.fixture(scope="session")
def section4_fine_surface(section4):
    """Решение на сетке dx = 0.01 (только для медленных тестов)."""
    return coarse_solve(section4, dx=0.01, steps=20)


@pytest.fixture(scope="session")
def linear_fk_surface(linear_fk):
    return coarse_solve(linear_fk)


@pytest.fixture
def output_dir(tmp_path, monkeypatch):
    """Каталог результатов во временной папке (через переменную окружения)."""
    target = tmp_path / "output"
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(target))
    SettingsLoader.reload()
    yield target
    SettingsLoader.reload()
