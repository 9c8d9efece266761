"""
Проверки решённой поверхности u(t, x):

- extract_inaction_region - область бездействия (сдвиг вдоль G строго дороже);
- jump_inequality_check   - неравенство u(t,x) <= u(t,x+Gh) + K h;
- dpp_residual            - принцип динамического программирования через
                            обратную полугруппу и семейство управлений;
- viscosity_residual_check- невязка обеих ветвей неравенства в узлах;
- verification_check      - условия теоремы верификации вдоль траекторий;
- regularity_estimate     - константы Липшица по x и Гёльдера-1/2 по t;
- hamiltonian_feedback    - регулярное управление argmin гамильтониана;
- reflection_rule         - сингулярное правило, выталкивающее состояние
                            из области действия в область бездействия.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .bsde import McConfig, backward_semigroup, solve_bsde
from .exceptions import ContractError, StructuralError
from .grids import SpaceGrid, TimeGrid
from .hjb import ValueSurface, second_differences, unit_pushes
from .model import ControlGrid, ProblemSpec
from .sde import (
    RegularControlPolicy,
    SingularControlPath,
    SingularFeedbackRule,
    StateMap,
    simulate_forward,
)
from .utils import Estimate

logger = logging.getLogger("singular_control_hub.checks")

SNAP_TOL = 1e-9


def default_tolerance(spec: ProblemSpec, sgrid: SpaceGrid) -> float:
    """2 * dx * max K - допуск, связанный с разрешением сетки."""
    return float(2.0 * np.max(sgrid.dx) * np.max(spec.K))


def shift_values(u: np.ndarray, sgrid: SpaceGrid, shift: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Значения u(x + shift) во всех узлах.

    Args:
        u: Массив формы (..., *sgrid.shape) (ведущие оси - например, время)
        sgrid: Сетка
        shift: Вектор сдвига длины n

    Returns:
        (values, valid): значения той же формы, что u, и маска узлов, для
        которых x + shift лежит в сетке. Сдвиг, кратный шагу с точностью
        1e-9, берётся точной перестановкой узлов, иначе - мультилинейной
        интерполяцией.
    """
    shift = np.asarray(shift, dtype=float).ravel()
    offsets = shift / sgrid.dx
    rounded = np.rint(offsets)
    lead = u.shape[: u.ndim - sgrid.ndim]
    values = np.full(u.shape, np.nan)
    valid = np.zeros(sgrid.shape, dtype=bool)

    if np.all(np.abs(offsets - rounded) <= SNAP_TOL):
        src: List[slice] = []
        dst: List[slice] = []
        for k, count in zip(rounded.astype(int), sgrid.counts):
            if abs(k) >= count:
                return values, valid
            if k >= 0:
                dst.append(slice(0, count - k))
                src.append(slice(k, count))
            else:
                dst.append(slice(-k, count))
                src.append(slice(0, count + k))
        full = (Ellipsis,)
        values[full + tuple(dst)] = u[full + tuple(src)]
        valid[tuple(dst)] = True
        return values, valid

    points = sgrid.points + shift
    lower, upper = np.asarray(sgrid.lower), np.asarray(sgrid.upper)
    valid = np.all((points >= lower - 1e-12) & (points <= upper + 1e-12), axis=-1)
    inside = np.clip(points[valid], lower, upper)
    flat_u = u.reshape((-1,) + sgrid.shape)
    flat_values = values.reshape((-1,) + sgrid.shape)
    for index in range(flat_u.shape[0]):
        interp = RegularGridInterpolator(sgrid.axes, flat_u[index])
        flat_values[index][valid] = interp(inside)
    return flat_values.reshape(lead + sgrid.shape), valid


def _push_directions(spec: ProblemSpec, sgrid: SpaceGrid) -> List[Tuple[int, float]]:
    return [(i, h) for i, h in enumerate(unit_pushes(spec, sgrid)) if h > 0]


@dataclass(frozen=True, eq=False)
class InactionMask:
    """
    Классификация узлов: True - бездействие, False - действие.

    Attributes:
        mask: Форма (N+1, *shape)
        defined: Узлы, для которых есть хотя бы один сдвиг в пределах сетки
        margins: Минимальный удельный запас min_h [u(x+Gh) + Kh - u(x)] / |h|
        tol: Использованный допуск
    """

    mask: np.ndarray
    defined: np.ndarray
    margins: np.ndarray
    tol: float

    def fraction(self, interior: Optional[np.ndarray] = None) -> float:
        """Доля узлов бездействия среди определённых (и внутренних, если задана маска)."""
        selected = self.defined if interior is None else self.defined & interior
        total = int(selected.sum())
        return float((self.mask & selected).sum()) / total if total else float("nan")


def extract_inaction_region(surface: ValueSurface, spec: ProblemSpec, tol: Optional[float] = None) -> InactionMask:
    """
    Область бездействия: узел помечен, если удельный запас сдвига больше tol.

    Перебираются все сдвиги на целое число единичных шагов вдоль каждого
    столбца G, остающиеся в сетке; запас делится на длину сдвига |h|.
    """
    tol = default_tolerance(spec, surface.sgrid) if tol is None else float(tol)
    u = surface.u
    margins = np.full(u.shape, np.inf)
    defined = np.zeros(surface.sgrid.shape, dtype=bool)
    max_steps = max(surface.sgrid.counts)
    for i, unit in _push_directions(spec, surface.sgrid):
        for steps in range(1, max_steps):
            h = steps * unit
            pushed, valid = shift_values(u, surface.sgrid, spec.G[:, i] * h)
            if not valid.any():
                break
            margin = (pushed + spec.K[i] * h - u) / h
            margins = np.where(valid, np.minimum(margins, margin), margins)
            defined |= valid
    mask = (margins > tol) & defined
    return InactionMask(mask=mask, defined=np.broadcast_to(defined, u.shape).copy(), margins=margins, tol=tol)


@dataclass(frozen=True)
class JumpCheckReport:
    """Максимальное нарушение u(t,x) - u(t,x+Gh) - K h по узлам, времени и h."""

    max_violation: float
    per_h: Dict[str, float]
    location: Optional[Tuple[int, Tuple[int, ...]]]
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_violation <= self.tol


def jump_inequality_check(
    surface: ValueSurface,
    spec: ProblemSpec,
    h_samples: Sequence[Sequence[float]],
    interior_only: bool = True,
    include_terminal: bool = False,
    tol: Optional[float] = None,
) -> JumpCheckReport:
    """
    Проверка неравенства скачка u(t,x) <= u(t,x+Gh) + K h.

    Терминальный слой (Phi) по умолчанию не проверяется: ограничение
    применяется только на слоях 0..N-1.
    """
    tol = default_tolerance(spec, surface.sgrid) if tol is None else float(tol)
    u = surface.u if include_terminal else surface.u[:-1]
    region = surface.interior if interior_only else np.ones(surface.sgrid.shape, dtype=bool)
    worst, location = -np.inf, None
    per_h: Dict[str, float] = {}
    for h in h_samples:
        h = np.asarray(h, dtype=float).reshape(spec.m)
        if np.any(h < 0):
            raise ContractError("h должен быть неотрицательным", sample=h.tolist())
        pushed, valid = shift_values(u, surface.sgrid, spec.G @ h)
        violation = u - (pushed + float(spec.K @ h))
        violation = np.where(valid & region, violation, -np.inf)
        value = float(violation.max()) if violation.size else -np.inf
        per_h[",".join(f"{x:g}" for x in h)] = value
        if value > worst:
            worst = value
            flat = np.unravel_index(int(np.argmax(violation)), violation.shape)
            location = (int(flat[0]), tuple(int(k) for k in flat[1:]))
    return JumpCheckReport(max_violation=float(worst), per_h=per_h, location=location, tol=tol)


@dataclass(frozen=True)
class DppSearch:
    """Семейство управлений для проверки DPP: постоянные v и один скачок в момент t."""

    control_points_per_unit: int = 3
    jump_sizes: Tuple[float, ...] = (0.0, 0.1, 0.25, 0.5)


@dataclass(frozen=True)
class DppResult:
    """
    Невязка inf_family G_{t,t+delta}[u(t+delta, .)] - u(t, x0).

    Attributes:
        residual: Невязка со стандартной ошибкой лучшего элемента
        u_value: u(t, x0) по поверхности
        best: Описание лучшего элемента семейства
        family: (описание, оценка) для всех элементов
    """

    residual: Estimate
    u_value: float
    best: str
    family: List[Tuple[str, Estimate]] = field(default_factory=list)

    def passes(self, extra: float, n_se: float = 3.0) -> bool:
        return self.residual.within(0.0, n_se, extra)

    def upper_bound_holds(self, extra: float, n_se: float = 3.0) -> bool:
        """u(t, x0) не больше значения каждого элемента семейства (с допуском)."""
        return all(self.u_value <= est.value + n_se * est.stderr + extra for _, est in self.family)


def dpp_residual(
    spec: ProblemSpec,
    surface: ValueSurface,
    t_index: int,
    delta_steps: int,
    x0: Sequence[float],
    search: Optional[DppSearch] = None,
    mc: Optional[McConfig] = None,
) -> DppResult:
    """
    Невязка принципа динамического программирования в (t, x0).

    Для каждого элемента семейства считается G_{t,t+delta}[eta] с
    eta = u(t+delta, .) (интерполяция поверхности); все элементы
    используют одно зерно.

    Raises:
        ContractError: Если t_index + delta_steps > N
    """
    search = search or DppSearch()
    mc = mc or McConfig(paths=4000, steps=20)
    if delta_steps < 1 or t_index < 0 or t_index + delta_steps > surface.tgrid.N:
        raise ContractError(f"требуется 0 <= t_index < t_index + delta_steps <= N, "
                            f"получено {t_index} + {delta_steps} > {surface.tgrid.N}")
    nodes = surface.tgrid.nodes
    t, t1 = float(nodes[t_index]), float(nodes[t_index + delta_steps])
    x0 = np.asarray(x0, dtype=float).ravel()
    eta = lambda x: surface.at_node(t_index + delta_steps, x)  # noqa: E731
    u_value = float(surface.at_node(t_index, x0[None])[0])

    controls = ControlGrid.from_set(spec.U, search.control_points_per_unit).points
    family: List[Tuple[str, Estimate]] = []
    for v in controls:
        policy = RegularControlPolicy.constant(v)
        for column in range(spec.m):
            for size in search.jump_sizes:
                if size == 0 and column > 0:
                    continue
                if size == 0:
                    xi = SingularControlPath.none(mc.steps, spec.m)
                else:
                    jump = np.zeros(spec.m)
                    jump[column] = size
                    xi = SingularControlPath.single_jump(mc.steps, spec.m, 0, jump)
                estimate = backward_semigroup(spec, t, t1, x0, policy, xi, eta, mc)
                family.append((f"v={v.tolist()} jump[{column}]={size:g}", estimate))
    best_label, best = min(family, key=lambda item: item[1].value)
    residual = Estimate(best.value - u_value, best.stderr)
    logger.debug("DPP в (%.3g, %s): невязка %.4g (SE %.3g), лучший %s", t, x0, residual.value, best.stderr, best_label)
    return DppResult(residual=residual, u_value=u_value, best=best_label, family=family)


def _gradient_fields(u_slice: np.ndarray, sgrid: SpaceGrid) -> np.ndarray:
    grads = np.gradient(u_slice, *sgrid.dx, edge_order=1) if sgrid.ndim > 1 else [np.gradient(u_slice, sgrid.dx[0])]
    return np.stack(grads, axis=-1)


def _hamiltonian_at(
    spec: ProblemSpec,
    t: float,
    x: np.ndarray,
    y: np.ndarray,
    grad: np.ndarray,
    hess: np.ndarray,
    v: np.ndarray,
) -> np.ndarray:
    """1/2 Tr(a D2u) + <b, Du> + f(t, x, u, Du sigma, v); x (..., n), v (..., k)."""
    B = np.broadcast_to(np.asarray(spec.b(t, x, v), dtype=float), x.shape)
    S = np.broadcast_to(np.asarray(spec.sigma(t, x, v), dtype=float), x.shape + (spec.d,))
    A = np.einsum("...nd,...md->...nm", S, S)
    z = np.einsum("...n,...nd->...d", grad, S)
    generator = np.broadcast_to(np.asarray(spec.f(t, x, y, z, v), dtype=float), x.shape[:-1])
    return 0.5 * np.einsum("...jk,...jk->...", A, hess) + np.sum(B * grad, axis=-1) + generator


def _hamiltonian_terms(
    spec: ProblemSpec,
    t: float,
    x: np.ndarray,
    y: np.ndarray,
    grad: np.ndarray,
    hess: np.ndarray,
    controls: np.ndarray,
) -> np.ndarray:
    """Значения _hamiltonian_at для всех точек сетки управлений, форма (P, L)."""
    count, length = controls.shape[0], x.shape[0]
    X = np.broadcast_to(x, (count,) + x.shape)
    V = np.broadcast_to(controls[:, None, :], (count, length, controls.shape[1]))
    return _hamiltonian_at(
        spec,
        t,
        X,
        np.broadcast_to(y, (count, length)),
        np.broadcast_to(grad, X.shape),
        np.broadcast_to(hess, (count,) + hess.shape),
        V,
    )


@dataclass(frozen=True)
class ViscosityPoint:
    t_index: int
    node: Tuple[int, ...]
    A: float
    B: float
    residual: float
    passed: bool


@dataclass(frozen=True)
class ViscosityReport:
    """Невязка min(A, B) в тестовых узлах; A = min(Du G + K), B = u_t + min_v [...]."""

    points: List[ViscosityPoint]
    tol: float

    @property
    def passed(self) -> bool:
        return all(point.passed for point in self.points)

    @property
    def max_residual(self) -> float:
        return max((abs(point.residual) for point in self.points), default=0.0)


def viscosity_residual_check(
    surface: ValueSurface,
    spec: ProblemSpec,
    test_points: Sequence[Tuple[int, Sequence[int]]],
    control_grid: Optional[ControlGrid] = None,
    tol: Optional[float] = None,
) -> ViscosityReport:
    """
    Разностная невязка обеих ветвей неравенства в узлах (t_index, node).

    u_t - разность вперёд по времени, Du и D2u - центральные разности.

    Raises:
        ContractError: Узел ближе двух узлов к границе или t_index = N
    """
    control_grid = control_grid or ControlGrid.from_set(spec.U)
    tol = default_tolerance(spec, surface.sgrid) if tol is None else float(tol)
    sgrid, tgrid = surface.sgrid, surface.tgrid
    results = []
    for t_index, node in test_points:
        node = tuple(int(k) for k in np.atleast_1d(node))
        if not 0 <= t_index < tgrid.N:
            raise ContractError("t_index должен быть в 0..N-1", sample=t_index)
        if any(k < 2 or k > count - 3 for k, count in zip(node, sgrid.counts)):
            raise ContractError("узел должен отстоять от границы не меньше чем на 2 узла", sample=node)
        t = float(tgrid.nodes[t_index])
        u_now, u_next = surface.u[t_index], surface.u[t_index + 1]
        u_t = (u_next[node] - u_now[node]) / (tgrid.nodes[t_index + 1] - tgrid.nodes[t_index])
        grad = np.array([
            (u_now[tuple(k + (1 if a == j else 0) for a, k in enumerate(node))]
             - u_now[tuple(k - (1 if a == j else 0) for a, k in enumerate(node))]) / (2.0 * sgrid.dx[j])
            for j in range(sgrid.ndim)
        ])
        hess = second_differences(u_now, sgrid.dx)[node]
        x = sgrid.points[node][None]
        terms = _hamiltonian_terms(spec, t, x, np.array([u_now[node]]), grad[None], hess[None], control_grid.points)
        B = float(u_t + terms.min())
        A = float(np.min(grad @ spec.G + spec.K))
        residual = min(A, B)
        results.append(ViscosityPoint(t_index, node, A, B, residual, abs(residual) <= tol))
    return ViscosityReport(points=results, tol=tol)


@dataclass(frozen=True)
class ConditionResult:
    passed: bool
    margin: float
    detail: str = ""


@dataclass(frozen=True)
class VerificationReport:
    """
    Условия теоремы верификации вдоль траекторий кандидата.

    conditions: constraint_slack, complementarity, hamiltonian_min,
    jump_consistency, value_match.
    """

    conditions: Dict[str, ConditionResult]
    value: float
    cost: Estimate
    exit_fraction: float

    @property
    def passed(self) -> bool:
        return all(result.passed for result in self.conditions.values())


class _SurfaceField:
    """u, Du, D2u поверхности как функции (индекс слоя, точки)."""

    def __init__(self, surface: ValueSurface) -> None:
        self.surface = surface
        self._cache: Dict[int, Tuple[RegularGridInterpolator, RegularGridInterpolator, RegularGridInterpolator]] = {}

    def slice_index(self, t: float) -> int:
        tgrid = self.surface.tgrid
        return int(np.clip(np.rint((t - tgrid.t0) / tgrid.dt), 0, tgrid.N))

    def _interpolators(self, index: int):
        if index not in self._cache:
            sgrid = self.surface.sgrid
            u = self.surface.u[index]
            make = lambda values: RegularGridInterpolator(  # noqa: E731
                sgrid.axes, values, bounds_error=False, fill_value=None
            )
            self._cache[index] = (make(u), make(_gradient_fields(u, sgrid)), make(second_differences(u, sgrid.dx)))
        return self._cache[index]

    def evaluate(self, t: float, x: np.ndarray):
        value, grad, hess = self._interpolators(self.slice_index(t))
        return value(x), grad(x), hess(x)


def hamiltonian_feedback(
    surface: ValueSurface,
    spec: ProblemSpec,
    control_grid: Optional[ControlGrid] = None,
) -> StateMap:
    """
    Обратная связь v(t, x) = argmin по сетке управлений гамильтониана
    с производными поверхности в ближайшем слое. При равенстве берётся
    первый узел сетки.
    """
    controls = (control_grid or ControlGrid.from_set(spec.U)).points
    surface_field = _SurfaceField(surface)

    def policy(t, x):
        x = np.asarray(x, dtype=float).reshape(-1, spec.n)
        u, grad, hess = surface_field.evaluate(float(t), x)
        terms = _hamiltonian_terms(spec, float(t), x, u, grad, hess, controls)
        return controls[np.argmin(terms, axis=0)]

    return policy


def verification_check(
    spec: ProblemSpec,
    surface: ValueSurface,
    candidate_policy: StateMap,
    candidate_xi_rule: Optional[SingularFeedbackRule],
    mc: McConfig,
    x0: Sequence[float],
    t_index: int = 0,
    control_grid: Optional[ControlGrid] = None,
    tol: Optional[float] = None,
) -> VerificationReport:
    """
    Численная проверка условий верификации для пары (v*, xi*).

    1. constraint_slack: Du G + K > tol в посещённых узлах, где xi не действует;
    2. complementarity: |E sum (Du G + K) dxi| <= tol (1 + E xi_T);
    3. hamiltonian_min: v* даёт минимум гамильтониана по сетке управлений;
    4. jump_consistency: V(X) = V(X+) + K dxi на каждом скачке;
    5. value_match: |V(t, x) - J(t, x; v*, xi*)| <= 3 SE + 2 dx.

    Траектории, покинувшие сетку, отмечаются и исключаются из условий 1-4.
    """
    control_grid = control_grid or ControlGrid.from_set(spec.U)
    sgrid = surface.sgrid
    tol = default_tolerance(spec, sgrid) if tol is None else float(tol)
    t0 = float(surface.tgrid.nodes[t_index])
    grid = TimeGrid(t0, spec.T, mc.steps)
    policy = RegularControlPolicy.from_feedback(candidate_policy, label="candidate")
    xi = candidate_xi_rule or SingularFeedbackRule.none(spec.m)
    bundle = simulate_forward(spec, grid, x0, policy, xi, mc.paths, mc.seed, mc.threads)
    surface_field = _SurfaceField(surface)
    lower, upper = np.asarray(sgrid.lower), np.asarray(sgrid.upper)

    inside_all = np.ones(bundle.M, dtype=bool)
    slack_min = np.inf
    slack_positive = []
    complementarity = np.zeros(bundle.M)
    hamiltonian_gap = 0.0
    jump_error = 0.0
    jumps_seen = 0
    for i in range(bundle.N):
        t = float(grid.nodes[i])
        x, xp, v = bundle.X[:, i], bundle.X_plus[:, i], bundle.controls[:, i]
        inside = np.all((x >= lower) & (x <= upper), axis=-1) & np.all((xp >= lower) & (xp <= upper), axis=-1)
        inside_all &= inside
        if not inside.any():
            continue
        u_x, grad_x, _ = surface_field.evaluate(t, x[inside])
        u_p, grad_p, hess_p = surface_field.evaluate(t, xp[inside])
        slack = np.min(grad_x @ spec.G + spec.K, axis=-1)
        increments = bundle.xi_increments[inside, i]
        idle = ~np.any(increments > 0, axis=-1)
        if idle.any():
            slack_min = min(slack_min, float(slack[idle].min()))
            slack_positive.append(slack[idle] > tol)
        complementarity[inside] += np.sum((grad_x @ spec.G + spec.K) * increments, axis=-1)

        terms = _hamiltonian_terms(spec, t, xp[inside], u_p, grad_p, hess_p, control_grid.points)
        chosen = _hamiltonian_at(spec, t, xp[inside], u_p, grad_p, hess_p, v[inside])
        hamiltonian_gap = max(hamiltonian_gap, float(np.max(chosen - terms.min(axis=0))))

        jumped = np.any(bundle.jumps[inside, i] > 0, axis=-1)
        if jumped.any():
            cost = bundle.jumps[inside, i][jumped] @ spec.K
            error = np.abs(u_x[jumped] - u_p[jumped] - cost)
            jump_error = max(jump_error, float(error.max()))
            jumps_seen += int(jumped.sum())

    exit_fraction = 1.0 - float(inside_all.mean())
    if exit_fraction > 0:
        logger.warning("Доля траекторий, покинувших сетку: %.3f", exit_fraction)

    solution = solve_bsde(spec, bundle, spec.Phi(bundle.X[:, -1]), mc.basis(), mc.picard_passes)
    cost = solution.y0
    value = float(surface.at_node(t_index, np.asarray(x0, dtype=float).reshape(1, -1))[0])
    value_tol = 3.0 * cost.stderr + 2.0 * float(np.max(sgrid.dx))
    xi_mean = float(np.mean(np.sum(bundle.xi_total, axis=-1)))
    comp_value = float(np.mean(np.abs(complementarity)))
    fraction_slack = float(np.mean(np.concatenate(slack_positive))) if slack_positive else float("nan")

    conditions = {
        "constraint_slack": ConditionResult(
            slack_min > tol, float(slack_min), f"доля узлов с запасом > tol: {fraction_slack:.3f}"
        ),
        "complementarity": ConditionResult(comp_value <= tol * (1.0 + xi_mean), comp_value),
        "hamiltonian_min": ConditionResult(hamiltonian_gap <= tol, hamiltonian_gap),
        "jump_consistency": ConditionResult(jump_error <= tol, jump_error, f"скачков: {jumps_seen}"),
        "value_match": ConditionResult(abs(value - cost.value) <= value_tol, abs(value - cost.value)),
    }
    return VerificationReport(conditions=conditions, value=value, cost=cost, exit_fraction=exit_fraction)


def regularity_estimate(surface: ValueSurface, interior_only: bool = True) -> Tuple[float, float]:
    """
    Оценки Lx = max |u(t,x) - u(t,x')| / dx по соседним узлам и
    Ht = max |u(t,x) - u(t',x)| / sqrt|t - t'| по всем парам слоёв.
    """
    u = surface.u
    sgrid = surface.sgrid
    region = surface.interior if interior_only else np.ones(sgrid.shape, dtype=bool)
    lx = 0.0
    for axis in range(sgrid.ndim):
        diff = np.abs(np.diff(u, axis=axis + 1)) / sgrid.dx[axis]
        selector = [slice(None)] * sgrid.ndim
        selector[axis] = slice(0, -1)
        pair_mask = region[tuple(selector)].copy()
        selector[axis] = slice(1, None)
        pair_mask &= region[tuple(selector)]
        if pair_mask.any():
            lx = max(lx, float(diff[:, pair_mask].max()))
    nodes = surface.tgrid.nodes
    ht = 0.0
    for lag in range(1, surface.tgrid.N + 1):
        gaps = np.sqrt(nodes[lag:] - nodes[:-lag])
        ratio = np.abs(u[lag:] - u[:-lag])[:, region] / gaps[:, None]
        ht = max(ht, float(ratio.max()))
    return lx, ht


def reflection_rule(surface: ValueSurface, mask: InactionMask, spec: ProblemSpec) -> SingularFeedbackRule:
    """
    Сингулярное правило по области бездействия (n = m = 1).

    Состояние в области действия сдвигается вдоль G до ближайшего узла
    области бездействия; в области бездействия скачков нет.

    Raises:
        StructuralError: Если n != 1 или m != 1, или G = 0
    """
    if spec.n != 1 or spec.m != 1 or spec.G[0, 0] == 0:
        raise StructuralError("G", "правило отражения реализовано для n = m = 1 и G != 0")
    sgrid = surface.sgrid
    g = float(spec.G[0, 0])
    direction = 1 if g > 0 else -1
    axis = sgrid.axes[0]
    count = sgrid.counts[0]
    # целевой узел для каждого (слоя, узла): ближайший узел бездействия по направлению сдвига
    targets = np.full(mask.mask.shape, -1, dtype=int)
    for layer in range(mask.mask.shape[0]):
        nearest = -1
        order = range(count - 1, -1, -1) if direction > 0 else range(count)
        for j in order:
            if mask.mask[layer, j]:
                nearest = j
            if mask.defined[layer, j] and not mask.mask[layer, j]:
                targets[layer, j] = nearest
    tgrid = surface.tgrid

    def jump(t, x):
        x = np.asarray(x, dtype=float)
        layer = int(np.clip(np.rint((t - tgrid.t0) / tgrid.dt), 0, tgrid.N))
        nodes = np.clip(np.rint((x[:, 0] - sgrid.lower[0]) / sgrid.dx[0]).astype(int), 0, count - 1)
        target = targets[layer, nodes]
        size = np.where(target >= 0, (axis[np.maximum(target, 0)] - x[:, 0]) / g, 0.0)
        return np.maximum(size, 0.0)[:, None]

    return SingularFeedbackRule(jump=jump, name="reflection")
