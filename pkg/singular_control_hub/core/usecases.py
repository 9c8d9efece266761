"""
Конвейеры подкоманд CLI.

Модуль содержит сервисы, каждый из которых собирает задачу и сетки из
конфигурации запуска, вызывает численные модули и пишет артефакты:

1. SolveService    - решение HJB (surface.csv, inaction.csv, report.txt);
2. SimulateService - моделирование траекторий и стоимости (paths.csv);
3. CheckService    - решение HJB и выбранные проверки (код 2 при провале);
4. ExampleService  - сравнение решения с явной формулой в точке;
5. OracleService   - оракул динамического программирования (oracle.csv).

Каждый сервис возвращает пару (код завершения, сводка).
"""

from __future__ import annotations

import logging
import math
from typing import TYPE_CHECKING, Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from ..decorators import log_action
from ..infra.settings import SettingsLoader
from ..infra.storage import ArtifactStorage
from .bsde import McConfig, solve_bsde
from .grids import SpaceGrid, TimeGrid
from .hjb import HjbOptions, ValueSurface, solve_hjb_vi, unit_pushes
from .hjb_checks import (
    default_tolerance,
    dpp_residual,
    extract_inaction_region,
    hamiltonian_feedback,
    jump_inequality_check,
    regularity_estimate,
    verification_check,
    viscosity_residual_check,
)
from .model import ControlGrid, ProblemSpec
from .problems import ProblemEntry, get_problem
from .sde import RegularControlPolicy, simulate_forward
from .verification import BatteryConfig, DPOracleConfig, cross_check, dp_oracle, estimate_battery

if TYPE_CHECKING:
    from ..cli.interface import RunConfig

logger = logging.getLogger("singular_control_hub.usecases")

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_CHECK_FAILED = 2

CHECK_NAMES = ("inaction", "jump", "viscosity", "regularity", "dpp", "verification", "oracle", "battery")

JUMP_SAMPLES = (0.1, 0.5, 1.0)
ACCEPTANCE_TOL = 2e-2
ORACLE_TOL = 5e-2
ORACLE_MIN_DX = 0.05
DPP_WINDOW = 0.1

Summary = Dict[str, Any]


def _build_problem(config: "RunConfig") -> Tuple[ProblemEntry, Dict[str, float], ProblemSpec]:
    entry = get_problem(config.problem)
    params = dict(config.params)
    if config.horizon is not None:
        params["T"] = config.horizon
    params = entry.resolve_params(params)
    return entry, params, entry.build(params)


def _grids(config: "RunConfig", spec: ProblemSpec, dx: Optional[float] = None) -> Tuple[TimeGrid, SpaceGrid]:
    lower = [config.x_min if config.x_min is not None else lo for lo, _ in spec.domain]
    upper = [config.x_max if config.x_max is not None else hi for _, hi in spec.domain]
    sgrid = SpaceGrid.uniform(lower, upper, dx or config.dx)
    steps = config.steps if config.dt is None else max(1, int(round(spec.T / config.dt)))
    return TimeGrid(0.0, spec.T, steps), sgrid


def _hjb_options() -> HjbOptions:
    settings = SettingsLoader()
    return HjbOptions(
        cfl_factor=float(settings.get("cfl_factor", 0.9)),
        max_substeps=int(settings.get("max_substeps", 1_000_000)),
        margin_fraction=float(settings.get("margin_fraction", 0.1)),
    )


def _mc_config(config: "RunConfig") -> McConfig:
    settings = SettingsLoader()
    return McConfig(
        paths=config.paths,
        steps=config.mc_steps,
        seed=config.seed,
        degree=config.degree,
        ridge=float(settings.get("ridge", 1e-8)),
        threads=config.threads,
    )


def _point(config: "RunConfig", spec: ProblemSpec) -> Tuple[float, np.ndarray]:
    if config.point is None:
        return 0.0, np.ones(spec.n)
    t, *x = config.point
    return float(t), np.asarray(x, dtype=float).reshape(spec.n)


def _solve(config: "RunConfig", spec: ProblemSpec) -> Tuple[ValueSurface, ControlGrid]:
    tgrid, sgrid = _grids(config, spec)
    controls = ControlGrid.from_set(spec.U, config.control)
    return solve_hjb_vi(spec, tgrid, sgrid, controls, _hjb_options()), controls


def _surface_summary(surface: ValueSurface, entry: ProblemEntry, params: Dict[str, float]) -> Summary:
    summary: Summary = {f"scheme.{key}": value for key, value in surface.metadata.items()}
    exact = entry.exact_value(params)
    if exact is not None:
        errors = [
            np.abs(surface.u[i] - exact(float(t), surface.sgrid.points))[surface.interior]
            for i, t in enumerate(surface.tgrid.nodes)
        ]
        summary["max_interior_error"] = float(max(error.max() for error in errors))
    return summary


def _storage(config: "RunConfig") -> ArtifactStorage:
    return ArtifactStorage(config.output_dir)


class SolveService:
    """Решение вариационного неравенства и выгрузка поверхности."""

    @classmethod
    @log_action("SOLVE")
    def run(cls, config: "RunConfig") -> Tuple[int, Summary]:
        entry, params, spec = _build_problem(config)
        surface, _ = _solve(config, spec)
        mask = extract_inaction_region(surface, spec)
        storage = _storage(config)
        summary = {"problem": spec.name, **_surface_summary(surface, entry, params)}
        summary["inaction_fraction"] = mask.fraction(surface.interior)
        files = [
            storage.write_surface(surface),
            storage.write_inaction(mask, surface),
            storage.write_report(summary),
        ]
        summary["files"] = ",".join(str(path) for path in files)
        return EXIT_OK, summary


class SimulateService:
    """Траектории прямого уравнения и рекурсивная стоимость при кандидатном управлении."""

    @classmethod
    @log_action("SIMULATE")
    def run(cls, config: "RunConfig") -> Tuple[int, Summary]:
        entry, params, spec = _build_problem(config)
        t, x0 = _point(config, spec)
        mc = _mc_config(config)
        candidate = entry.candidate_policy(params)
        if candidate is None:
            policy = RegularControlPolicy.constant(ControlGrid.from_set(spec.U, 2).points[0])
        else:
            policy = RegularControlPolicy.from_feedback(candidate, label="candidate")
        grid = TimeGrid(t, spec.T, mc.steps)
        bundle = simulate_forward(spec, grid, x0, policy, None, mc.paths, mc.seed, mc.threads)
        solution = solve_bsde(spec, bundle, spec.Phi(bundle.X[:, -1]), mc.basis(), mc.picard_passes)
        storage = _storage(config)
        summary: Summary = {
            "problem": spec.name,
            "policy": policy.label,
            "paths": bundle.M,
            "steps": bundle.N,
            "seed": bundle.rng_seed,
            "mean_X_T": float(bundle.X[:, -1, 0].mean()),
            "cost": solution.y0.value,
            "cost_se": solution.y0.stderr,
            "regression_flags": len(solution.flags),
        }
        files = [storage.write_paths(bundle), storage.write_report(summary)]
        summary["files"] = ",".join(str(path) for path in files)
        return EXIT_OK, summary


class CheckService:
    """Решение HJB и выбранные проверки поверхности."""

    @classmethod
    def _selected(cls, config: "RunConfig") -> List[str]:
        if config.all:
            return list(CHECK_NAMES)
        return [name for name in CHECK_NAMES if name in config.checks]

    @classmethod
    @log_action("CHECK")
    def run(cls, config: "RunConfig") -> Tuple[int, Summary]:
        entry, params, spec = _build_problem(config)
        surface, controls = _solve(config, spec)
        storage = _storage(config)
        mask = extract_inaction_region(surface, spec)
        summary: Summary = {"problem": spec.name, **_surface_summary(surface, entry, params)}
        context = _CheckContext(config, entry, params, spec, surface, controls, mask, storage)

        outcomes: Dict[str, bool] = {}
        for name in cls._selected(config):
            passed, details = _CHECKS[name](context)
            outcomes[name] = passed
            summary.update({f"check.{name}.{key}": value for key, value in details.items()})
            summary[f"check.{name}.passed"] = passed
        summary["checks_passed"] = all(outcomes.values())

        files = [
            storage.write_surface(surface),
            storage.write_inaction(mask, surface),
            *context.files,
            storage.write_report(summary),
        ]
        summary["files"] = ",".join(str(path) for path in files)
        return (EXIT_OK if all(outcomes.values()) else EXIT_CHECK_FAILED), summary


class _CheckContext:
    def __init__(self, config, entry, params, spec, surface, controls, mask, storage) -> None:
        self.config = config
        self.entry = entry
        self.params = params
        self.spec = spec
        self.surface = surface
        self.controls = controls
        self.mask = mask
        self.storage = storage
        self.files: List[Any] = []

    def interior_points(self, count: int = 5) -> List[float]:
        axis = self.surface.sgrid.axes[0]
        inner = axis[self.surface.interior] if self.spec.n == 1 else axis[1:-1]
        picks = np.linspace(0.2, 0.8, count)
        return [float(inner[int(round(p * (inner.size - 1)))]) for p in picks]


def _check_inaction(ctx: _CheckContext) -> Tuple[bool, Summary]:
    region = ctx.mask.defined & ctx.surface.interior
    worst = float(np.min(np.where(region, ctx.mask.margins, np.inf)))
    return worst >= -ctx.mask.tol, {
        "fraction": ctx.mask.fraction(ctx.surface.interior),
        "min_margin": worst,
        "tol": ctx.mask.tol,
    }


def _check_jump(ctx: _CheckContext) -> Tuple[bool, Summary]:
    spec = ctx.spec
    samples = []
    for column in range(spec.m):
        for size in JUMP_SAMPLES:
            h = np.zeros(spec.m)
            h[column] = size
            samples.append(h)
    report = jump_inequality_check(ctx.surface, spec, samples, tol=ACCEPTANCE_TOL)
    aligned = jump_inequality_check(ctx.surface, spec, [np.diag(unit_pushes(spec, ctx.surface.sgrid))[i]
                                                        for i in range(spec.m)])
    details = {"max_violation": report.max_violation, "grid_aligned_violation": aligned.max_violation}
    return report.passed and aligned.max_violation <= 0.0, details


def _check_viscosity(ctx: _CheckContext) -> Tuple[bool, Summary]:
    sgrid = ctx.surface.sgrid
    t_indices = sorted({0, ctx.surface.tgrid.N // 2})
    points = [(i, sgrid.nearest_index([x])) for i in t_indices for x in ctx.interior_points()]
    report = viscosity_residual_check(ctx.surface, ctx.spec, points, ctx.controls)
    return report.passed, {"max_residual": report.max_residual, "tol": report.tol, "points": len(points)}


def _check_regularity(ctx: _CheckContext) -> Tuple[bool, Summary]:
    lx, ht = regularity_estimate(ctx.surface)
    return math.isfinite(lx) and math.isfinite(ht), {"Lx": lx, "Ht": ht}


def _check_dpp(ctx: _CheckContext) -> Tuple[bool, Summary]:
    tgrid = ctx.surface.tgrid
    delta_steps = max(1, min(tgrid.N, int(round(DPP_WINDOW / tgrid.dt))))
    mc = _mc_config(ctx.config)
    passed = True
    details: Summary = {"delta": delta_steps * tgrid.dt}
    extra = max(ACCEPTANCE_TOL, 2.0 * float(np.max(ctx.surface.sgrid.dx)))
    for index, x in enumerate(ctx.interior_points()):
        result = dpp_residual(ctx.spec, ctx.surface, 0, delta_steps, [x], mc=mc)
        ok = result.passes(extra) and result.upper_bound_holds(extra)
        passed &= ok
        details[f"{index}.x"] = x
        details[f"{index}.residual"] = result.residual.value
        details[f"{index}.se"] = result.residual.stderr
        details[f"{index}.best"] = result.best
    return passed, details


def _check_verification(ctx: _CheckContext) -> Tuple[bool, Summary]:
    candidate = ctx.entry.candidate_policy(ctx.params) or hamiltonian_feedback(ctx.surface, ctx.spec, ctx.controls)
    t, x0 = _point(ctx.config, ctx.spec)
    t_index = int(round((t - ctx.surface.tgrid.t0) / ctx.surface.tgrid.dt))
    report = verification_check(
        ctx.spec, ctx.surface, candidate, None, _mc_config(ctx.config), x0, t_index=t_index,
        control_grid=ctx.controls,
    )
    details: Summary = {name: result.margin for name, result in report.conditions.items()}
    details.update({"value": report.value, "cost": report.cost.value, "cost_se": report.cost.stderr,
                    "exit_fraction": report.exit_fraction})
    return report.passed, details


def _check_oracle(ctx: _CheckContext) -> Tuple[bool, Summary]:
    spec = ctx.spec
    if spec.n != 1:
        return True, {"status": "оракул только для n = 1"}
    config = ctx.config
    oracle_dx = max(config.dx, ORACLE_MIN_DX)
    _, sgrid = _grids(config, spec, dx=oracle_dx)
    oracle_cfg = DPOracleConfig(sgrid=sgrid, tgrid=ctx.surface.tgrid, control_grid=ctx.controls)
    t, x0 = _point(config, spec)
    candidate = ctx.entry.candidate_policy(ctx.params) or hamiltonian_feedback(ctx.surface, spec, ctx.controls)
    report = cross_check(
        spec, [(t, x0)], ctx.surface, _mc_config(config), candidate, oracle_cfg,
        tol_pde=max(ACCEPTANCE_TOL, default_tolerance(spec, ctx.surface.sgrid)),
        tol_oracle=ORACLE_TOL,
    )
    rows = [
        (row.t, *row.x, row.pde, row.oracle, row.mc.value, row.mc.stderr, int(row.passed)) for row in report.rows
    ]
    header = ["t", *[f"x_{axis + 1}" for axis in range(spec.n)], "pde", "oracle", "mc", "mc_se", "passed"]
    ctx.files.append(ctx.storage.write_rows("cross_check.csv", header, rows))
    return report.passed, {key.removeprefix("cross_check."): value for key, value in report.as_dict().items()}


def _check_battery(ctx: _CheckContext) -> Tuple[bool, Summary]:
    report = estimate_battery(ctx.spec, BatteryConfig(mc=_mc_config(ctx.config)))
    return report.passed, {key.removeprefix("battery."): value for key, value in report.as_dict().items()}


_CHECKS: Dict[str, Callable[[_CheckContext], Tuple[bool, Summary]]] = {
    "inaction": _check_inaction,
    "jump": _check_jump,
    "viscosity": _check_viscosity,
    "regularity": _check_regularity,
    "dpp": _check_dpp,
    "verification": _check_verification,
    "oracle": _check_oracle,
    "battery": _check_battery,
}


class ExampleService:
    """Значение решения в точке рядом с явной формулой (если она известна)."""

    @classmethod
    @log_action("EXAMPLE")
    def run(cls, config: "RunConfig") -> Tuple[int, Summary]:
        entry, params, spec = _build_problem(config)
        t, x0 = _point(config, spec)
        surface, _ = _solve(config, spec)
        solved = float(surface.value(t, x0[None])[0])
        summary: Summary = {"problem": spec.name, "t": t, "x": ",".join(f"{v:g}" for v in x0), "solved": solved}
        exact = entry.exact_value(params)
        if exact is not None:
            value = float(np.asarray(exact(t, x0[None])).ravel()[0])
            summary["exact"] = value
            summary["error"] = abs(solved - value)
        storage = _storage(config)
        files = [storage.write_surface(surface), storage.write_report(summary)]
        summary["files"] = ",".join(str(path) for path in files)
        return EXIT_OK, summary


class OracleService:
    """Поверхность оракула динамического программирования."""

    @classmethod
    @log_action("ORACLE_RUN")
    def run(cls, config: "RunConfig") -> Tuple[int, Summary]:
        entry, params, spec = _build_problem(config)
        tgrid, sgrid = _grids(config, spec)
        controls = ControlGrid.from_set(spec.U, config.control)
        surface = dp_oracle(spec, DPOracleConfig(sgrid=sgrid, tgrid=tgrid, control_grid=controls))
        summary = {"problem": spec.name, **_surface_summary(surface, entry, params)}
        storage = _storage(config)
        files = [storage.write_surface(surface, name="oracle.csv"), storage.write_report(summary)]
        summary["files"] = ",".join(str(path) for path in files)
        return EXIT_OK, summary


SERVICES = {
    "solve": SolveService,
    "simulate": SimulateService,
    "check": CheckService,
    "example": ExampleService,
    "oracle": OracleService,
}
