"""
Решатель вариационного неравенства HJB с градиентным ограничением

    min( Du G + K,  u_t + min_v [ L^v u + f(t, x, u, Du sigma, v) ] ) = 0,
    u(T, x) = Phi(x).

Явная монотонная схема назад по времени. Каждый шаг сетки по времени
разбивается на подшаги по условию CFL; на подшаге две фазы:

1. PDE-фаза: u <- u + dt * min_v [ 1/2 Tr(a D2u) + H(Du) ], где
   H(p) = <b, p> + f(t, x, u, p sigma, v). Первая производная по каждой
   координате берётся против потока: вперёд, если секущая H по этой
   координате положительна, иначе назад. Так же учитывается и
   зависимость f от z.
2. Фаза ограничения: u <- min(u, u(x + G h) + K h) по единичным сдвигам
   вдоль столбцов G.

На границе области используются односторонние разности внутрь области
и D2u = 0; там схема не обязана быть монотонной, поэтому граничная
полоса исключается из всех метрик ошибки.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, Optional, Tuple

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from ..decorators import log_action
from .exceptions import ConfigurationError, NumericError, StructuralError
from .grids import SpaceGrid, TimeGrid
from .model import ControlGrid, ProblemSpec

logger = logging.getLogger("singular_control_hub.hjb")


@dataclass(frozen=True)
class HjbOptions:
    """
    Параметры схемы.

    Attributes:
        cfl_factor: Доля от предельного шага явной схемы (0 < cfl <= 1)
        max_substeps: Бюджет подшагов на весь расчёт
        margin_fraction: Доля узлов у каждой границы, исключаемая из метрик
        relax_tol: Порог остановки релаксации ограничения (общий случай)
        max_relax_passes: Предел числа проходов релаксации
    """

    cfl_factor: float = 0.9
    max_substeps: int = 1_000_000
    margin_fraction: float = 0.1
    relax_tol: float = 1e-12
    max_relax_passes: int = 100_000

    def __post_init__(self) -> None:
        if not 0 < self.cfl_factor <= 1:
            raise ConfigurationError("cfl_factor", f"должно быть в (0, 1], получено {self.cfl_factor}")
        if int(self.max_substeps) < 1:
            raise ConfigurationError("max_substeps", f"должно быть >= 1, получено {self.max_substeps}")
        if not 0 <= self.margin_fraction < 0.5:
            raise ConfigurationError("margin_fraction", f"должно быть в [0, 0.5), получено {self.margin_fraction}")


@dataclass(frozen=True, eq=False)
class ValueSurface:
    """
    Дискретная функция цены u(t_i, x_j).

    Attributes:
        u: Значения формы (N+1, *sgrid.shape); u[N] = Phi в узлах
        tgrid: Сетка по времени
        sgrid: Сетка по пространству
        metadata: Параметры схемы (фактический dt, число подшагов, CFL, ...)
        margin_fraction: Ширина граничной полосы, исключаемой из метрик
    """

    u: np.ndarray
    tgrid: TimeGrid
    sgrid: SpaceGrid
    metadata: Dict[str, Any] = field(default_factory=dict)
    margin_fraction: float = 0.1

    def __post_init__(self) -> None:
        u = np.asarray(self.u, dtype=float)
        expected = (self.tgrid.N + 1,) + self.sgrid.shape
        if u.shape != expected:
            raise StructuralError("u", f"ожидается форма {expected}, получено {u.shape}")
        u.setflags(write=False)
        object.__setattr__(self, "u", u)

    @cached_property
    def interior(self) -> np.ndarray:
        """Маска внутренних узлов (без граничной полосы)."""
        return self.sgrid.interior_mask(self.margin_fraction)

    def slice_interpolator(self, index: int) -> RegularGridInterpolator:
        """Мультилинейная интерполяция слоя index (линейная экстраполяция за сеткой)."""
        return RegularGridInterpolator(self.sgrid.axes, self.u[index], bounds_error=False, fill_value=None)

    def at_node(self, index: int, x) -> np.ndarray:
        """Значения слоя index в точках x формы (..., n)."""
        x = np.asarray(x, dtype=float)
        points = x.reshape(-1, self.sgrid.ndim)
        return self.slice_interpolator(index)(points).reshape(x.shape[:-1])

    def value(self, t: float, x) -> np.ndarray:
        """u(t, x): линейно по времени между слоями, мультилинейно по пространству."""
        nodes = self.tgrid.nodes
        t = float(np.clip(t, nodes[0], nodes[-1]))
        upper = int(np.searchsorted(nodes, t - 1e-12 * max(1.0, abs(t))))
        upper = min(max(upper, 0), self.tgrid.N)
        if upper == 0 or abs(nodes[upper] - t) <= 1e-12 * max(1.0, abs(t)):
            return self.at_node(upper, x)
        lower = upper - 1
        weight = (t - nodes[lower]) / (nodes[upper] - nodes[lower])
        return (1.0 - weight) * self.at_node(lower, x) + weight * self.at_node(upper, x)


def _along(array: np.ndarray, axis: int, index) -> Tuple:
    selector = [slice(None)] * array.ndim
    selector[axis] = index
    return tuple(selector)


def first_differences(u: np.ndarray, dx: float, axis: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Разности вперёд и назад по оси axis.

    На левой границе обе равны разности вперёд, на правой - разности назад.
    """
    diff = np.diff(u, axis=axis) / dx
    forward = np.empty_like(u)
    backward = np.empty_like(u)
    forward[_along(u, axis, slice(0, -1))] = diff
    forward[_along(u, axis, -1)] = diff[_along(diff, axis, -1)]
    backward[_along(u, axis, slice(1, None))] = diff
    backward[_along(u, axis, 0)] = diff[_along(diff, axis, 0)]
    return forward, backward


def second_differences(u: np.ndarray, dx: np.ndarray) -> np.ndarray:
    """Матрица вторых разностей формы (*shape, n, n); на границе ноль."""
    n = u.ndim
    out = np.zeros(u.shape + (n, n))
    for j in range(n):
        inner = _along(u, j, slice(1, -1))
        out[inner + (j, j)] = (
            u[_along(u, j, slice(2, None))] - 2.0 * u[inner] + u[_along(u, j, slice(0, -2))]
        ) / dx[j] ** 2
    if n == 2:
        cross = (u[2:, 2:] - u[2:, :-2] - u[:-2, 2:] + u[:-2, :-2]) / (4.0 * dx[0] * dx[1])
        out[1:-1, 1:-1, 0, 1] = cross
        out[1:-1, 1:-1, 1, 0] = cross
    return out


class _Operator:
    """Коэффициенты и дискретный оператор PDE-фазы на фиксированной сетке."""

    def __init__(self, spec: ProblemSpec, sgrid: SpaceGrid, controls: ControlGrid) -> None:
        self.spec = spec
        self.sgrid = sgrid
        self.dx = sgrid.dx
        self.points = sgrid.points
        self.controls = controls.points
        self.count = len(controls)
        shape = (self.count,) + sgrid.shape
        self.V = np.broadcast_to(
            self.controls.reshape((self.count,) + (1,) * sgrid.ndim + (spec.k,)), shape + (spec.k,)
        )
        self.X = np.broadcast_to(self.points, shape + (spec.n,))
        self._cached_time: Optional[float] = None
        self.B = self.S = self.A = None

    def coefficients(self, t: float) -> None:
        if self.B is not None and (self.spec.time_homogeneous or self._cached_time == t):
            return
        B = np.asarray(self.spec.b(t, self.X, self.V), dtype=float)
        S = np.asarray(self.spec.sigma(t, self.X, self.V), dtype=float)
        for name, values in (("b", B), ("sigma", S)):
            if not np.all(np.isfinite(values)):
                raise NumericError(f"{name}(t={t})", "нечисловой коэффициент")
        self.B = np.broadcast_to(B, self.X.shape)
        self.S = np.broadcast_to(S, self.X.shape + (self.spec.d,))
        self.A = np.einsum("...nd,...md->...nm", self.S, self.S)
        self._cached_time = t

    def hamiltonian(self, t: float, u: np.ndarray, grad: np.ndarray) -> np.ndarray:
        z = np.einsum("...n,...nd->...d", grad, self.S)
        drift = np.sum(self.B * grad, axis=-1)
        generator = self.spec.f(t, self.X, np.broadcast_to(u, self.X.shape[:-1]), z, self.V)
        return drift + np.broadcast_to(np.asarray(generator, dtype=float), drift.shape)

    def apply(self, t: float, u: np.ndarray, with_rate: bool = False) -> Tuple[np.ndarray, float]:
        """
        min_v [1/2 Tr(a D2u) + H(Du)] в каждом узле и (опционально) оценка
        предельной скорости явной схемы.
        """
        self.coefficients(t)
        n = self.sgrid.ndim
        forward, backward, central = [], [], []
        for j in range(n):
            fwd, bwd = first_differences(u, self.dx[j], j)
            forward.append(fwd)
            backward.append(bwd)
            central.append(0.5 * (fwd + bwd))
        base = np.stack(central, axis=-1)
        chosen = base.copy()
        slopes = []
        h_final = None
        for j in range(n):
            grad_p = base.copy()
            grad_p[..., j] = forward[j]
            grad_m = base.copy()
            grad_m[..., j] = backward[j]
            h_p = self.hamiltonian(t, u, grad_p[None])
            h_m = self.hamiltonian(t, u, grad_m[None])
            gap = forward[j] - backward[j]
            use_forward = (h_p - h_m) * gap > 0
            chosen_j = np.where(use_forward, forward[j], backward[j])
            if n == 1:
                h_final = np.where(use_forward, h_p, h_m)
            else:
                chosen = np.broadcast_to(chosen, chosen_j.shape + (n,)).copy()
                chosen[..., j] = chosen_j
            if with_rate:
                bumped_p, bumped_m = base.copy(), base.copy()
                bumped_p[..., j] += 1.0
                bumped_m[..., j] -= 1.0
                slopes.append(
                    np.abs(self.hamiltonian(t, u, bumped_p[None]) - self.hamiltonian(t, u, bumped_m[None])) / 2.0
                )
        if h_final is None:
            h_final = self.hamiltonian(t, u, chosen)
        d2 = second_differences(u, self.dx)
        diffusion = 0.5 * np.einsum("p...jk,...jk->p...", self.A, d2)
        total = diffusion + h_final
        operator = total.min(axis=0)

        rate = 0.0
        if with_rate:
            scale = 1.0 / np.outer(self.dx, self.dx)
            rate_field = np.einsum("p...jk,jk->p...", np.abs(self.A), scale)
            for j, slope in enumerate(slopes):
                rate_field = rate_field + slope / self.dx[j]
            rate = float(rate_field.max())
        return operator, rate


def _constraint_1d(u: np.ndarray, step_cost: float, reverse: bool) -> np.ndarray:
    work = u[::-1] if reverse else u
    if np.all(work[:-1] <= work[1:] + step_cost):
        return u
    index = np.arange(work.size)
    shifted = work + index * step_cost
    out = np.minimum.accumulate(shifted[::-1])[::-1] - index * step_cost
    out = np.minimum(out, work)
    while True:
        updated = np.minimum(out[:-1], out[1:] + step_cost)
        if np.array_equal(updated, out[:-1]):
            break
        out[:-1] = updated
    return out[::-1].copy() if reverse else out


def unit_pushes(spec: ProblemSpec, sgrid: SpaceGrid) -> np.ndarray:
    """Единичный сдвиг h_i по каждому столбцу G: min_j dx_j / |G_ji| (0 для нулевого столбца)."""
    pushes = np.zeros(spec.m)
    for i in range(spec.m):
        column = np.abs(spec.G[:, i])
        if np.any(column > 0):
            pushes[i] = float(np.min(sgrid.dx[column > 0] / column[column > 0]))
    return pushes


def constraint_phase(u: np.ndarray, sgrid: SpaceGrid, spec: ProblemSpec, options: Optional[HjbOptions] = None) -> np.ndarray:
    """
    Дискретное ограничение Du G + K >= 0: u <- min(u, u(x + G^i h_i) + K^i h_i).

    Для n = m = 1 сдвиг на один узел: при G > 0 после фазы выполнено точно
    u[j] <= u[j+1] + K dx / G (при G < 0 зеркально, при G = 0 ничего не
    меняется). Если нарушений нет, массив возвращается без изменений.
    В общем случае - поточечная релаксация с мультилинейной интерполяцией
    до изменения не больше relax_tol.
    """
    options = options or HjbOptions()
    u = np.asarray(u, dtype=float)
    if spec.n == 1 and spec.m == 1:
        g = float(spec.G[0, 0])
        if g == 0:
            return u
        step_cost = float(spec.K[0]) * (sgrid.dx[0] / abs(g))
        return _constraint_1d(u, step_cost, reverse=g < 0)

    pushes = unit_pushes(spec, sgrid)
    points = sgrid.points.reshape(-1, spec.n)
    lower, upper = np.asarray(sgrid.lower), np.asarray(sgrid.upper)
    targets = []
    for i in range(spec.m):
        if pushes[i] == 0:
            continue
        shifted = points + spec.G[:, i] * pushes[i]
        valid = np.all((shifted >= lower - 1e-12) & (shifted <= upper + 1e-12), axis=-1)
        targets.append((np.clip(shifted, lower, upper), valid, float(spec.K[i]) * pushes[i]))
    if not targets:
        return u
    flat = u.reshape(-1).copy()
    for _ in range(options.max_relax_passes):
        interp = RegularGridInterpolator(sgrid.axes, flat.reshape(sgrid.shape))
        candidate = flat.copy()
        for shifted, valid, cost in targets:
            pushed = interp(shifted) + cost
            candidate = np.where(valid, np.minimum(candidate, pushed), candidate)
        change = float(np.max(flat - candidate))
        flat = candidate
        if change <= options.relax_tol:
            return flat.reshape(sgrid.shape)
    raise NumericError("constraint_phase", "релаксация не сошлась")


@log_action("SOLVE_HJB")
def solve_hjb_vi(
    spec: ProblemSpec,
    tgrid: TimeGrid,
    sgrid: SpaceGrid,
    control_grid: ControlGrid,
    opts: Optional[HjbOptions] = None,
) -> ValueSurface:
    """
    Решает вариационное неравенство назад от u(T, .) = Phi.

    Args:
        spec: Задача (n <= 2)
        tgrid: Сетка хранения по времени (каждый интервал делится на подшаги)
        sgrid: Сетка по пространству
        control_grid: Дискретизация U
        opts: Параметры схемы

    Returns:
        ValueSurface

    Raises:
        ConfigurationError: CFL не достижим в пределах бюджета подшагов
        NumericError: Нечисловое значение (с индексом узла)
    """
    opts = opts or HjbOptions()
    if sgrid.ndim != spec.n:
        raise StructuralError("sgrid", f"размерность сетки {sgrid.ndim} не равна n = {spec.n}")
    if control_grid.k != spec.k:
        raise StructuralError("control_grid", f"размерность {control_grid.k} не равна k = {spec.k}")
    if abs(tgrid.T - spec.T) > 1e-12 * max(1.0, spec.T):
        raise StructuralError("T", f"конец сетки {tgrid.T} не совпадает с горизонтом {spec.T}")

    operator = _Operator(spec, sgrid, control_grid)
    u = np.empty((tgrid.N + 1,) + sgrid.shape)
    terminal = np.asarray(spec.Phi(sgrid.points), dtype=float)
    terminal = np.broadcast_to(terminal, sgrid.shape)
    if not np.all(np.isfinite(terminal)):
        raise NumericError(("N", np.unravel_index(int(np.argmax(~np.isfinite(terminal))), sgrid.shape)))
    u[-1] = terminal

    nodes = tgrid.nodes
    total_substeps = 0
    min_dt = math.inf
    current = u[-1].copy()
    for i in range(tgrid.N - 1, -1, -1):
        interval = float(nodes[i + 1] - nodes[i])
        s = float(nodes[i + 1])
        increment, rate = operator.apply(s, current, with_rate=True)
        count = max(1, math.ceil(interval * rate / opts.cfl_factor)) if rate > 0 else 1
        if total_substeps + count > opts.max_substeps:
            raise ConfigurationError(
                "max_substeps",
                f"условие CFL требует {total_substeps + count} подшагов при бюджете {opts.max_substeps}; "
                "уменьшите сетку по пространству или увеличьте бюджет",
            )
        dt = interval / count
        min_dt = min(min_dt, dt)
        for sub in range(count):
            if sub > 0:
                increment, _ = operator.apply(s, current)
            current = current + dt * increment
            current = constraint_phase(current, sgrid, spec, opts)
            s -= dt
        bad = ~np.isfinite(current)
        if bad.any():
            raise NumericError((i, np.unravel_index(int(np.argmax(bad)), sgrid.shape)))
        u[i] = current
        total_substeps += count

    metadata = {
        "dt_used": min_dt,
        "substeps": total_substeps,
        "cfl_factor": opts.cfl_factor,
        "control_points": len(control_grid),
        "margin_fraction": opts.margin_fraction,
        "dx": ",".join(f"{value:.17g}" for value in sgrid.dx),
        "problem": spec.name,
    }
    logger.info("HJB решена: %d подшагов, dt=%.3g", total_substeps, min_dt)
    return ValueSurface(u=u, tgrid=tgrid, sgrid=sgrid, metadata=metadata, margin_fraction=opts.margin_fraction)
