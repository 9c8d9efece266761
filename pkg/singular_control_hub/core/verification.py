"""
Независимые оракулы и перекрёстные проверки.

- dp_oracle       - динамическое программирование на управляемой цепи
                    Маркова (локально согласованные вероятности), n = 1;
- cross_check     - согласие PDE, оракула и Монте-Карло в заданных точках;
- estimate_battery- эмпирические оценки устойчивости и роста.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..decorators import log_action
from .bsde import McConfig, cost_functional, solve_bsde
from .exceptions import ConfigurationError, NumericError, StructuralError
from .grids import SpaceGrid, TimeGrid
from .hjb import ValueSurface
from .model import ControlGrid, ProblemSpec
from .sde import RegularControlPolicy, SingularFeedbackRule, StateMap, simulate_forward
from .utils import Estimate, format_float, validate_positive

logger = logging.getLogger("singular_control_hub.verification")

MAX_TABLE_ENTRIES = 10_000_000
CHAIN_SAFETY = 0.9


@dataclass(frozen=True)
class DPOracleConfig:
    """
    Параметры оракула.

    Attributes:
        sgrid: Грубая сетка по пространству (n = 1)
        tgrid: Сетка хранения по времени
        control_grid: Дискретизация U (по умолчанию ControlGrid.from_set(U))
        jump_steps: Скачки {0, dx/|G|, ..., jump_steps dx/|G|} по каждому столбцу G
        chain_dt: Шаг цепи; None - выбирается автоматически
        max_entries: Предел размера таблицы состояние-действие на слое
    """

    sgrid: SpaceGrid
    tgrid: TimeGrid
    control_grid: Optional[ControlGrid] = None
    jump_steps: int = 10
    chain_dt: Optional[float] = None
    max_entries: int = MAX_TABLE_ENTRIES

    def __post_init__(self) -> None:
        if self.sgrid.ndim != 1:
            raise ConfigurationError("oracle.sgrid", "оракул поддерживает только n = 1")
        if int(self.jump_steps) < 0:
            raise ConfigurationError("jump_steps", f"должно быть >= 0, получено {self.jump_steps}")
        if self.chain_dt is not None and not self.chain_dt > 0:
            raise ConfigurationError("chain_dt", f"шаг цепи должен быть положительным, получено {self.chain_dt}")


def _ghost(w: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Соседи слева и справа с линейной экстраполяцией за границей."""
    left = np.empty_like(w)
    right = np.empty_like(w)
    left[1:], right[:-1] = w[:-1], w[1:]
    left[0] = 2.0 * w[0] - w[1]
    right[-1] = 2.0 * w[-1] - w[-2]
    return left, right


class _Chain:
    """Вероятности перехода и шаг цепи на фиксированной сетке."""

    def __init__(self, spec: ProblemSpec, sgrid: SpaceGrid, controls: ControlGrid) -> None:
        self.spec = spec
        self.dx = float(sgrid.dx[0])
        self.points = sgrid.points  # (S, 1)
        self.controls = controls.points
        count = len(controls)
        self.X = np.broadcast_to(self.points, (count,) + self.points.shape)
        self.V = np.broadcast_to(self.controls[:, None, :], (count, self.points.shape[0], spec.k))

    def coefficients(self, t: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        b = np.broadcast_to(np.asarray(self.spec.b(t, self.X, self.V), dtype=float), self.X.shape)[..., 0]
        sigma = np.broadcast_to(
            np.asarray(self.spec.sigma(t, self.X, self.V), dtype=float), self.X.shape + (self.spec.d,)
        )[..., 0, :]
        a = np.sum(sigma * sigma, axis=-1)
        if not (np.all(np.isfinite(b)) and np.all(np.isfinite(a))):
            raise NumericError(f"коэффициенты цепи (t={t})")
        return b, sigma, a

    def generator(self, t: float, y: np.ndarray, p: np.ndarray, sigma: np.ndarray) -> np.ndarray:
        z = p[..., None] * sigma
        values = self.spec.f(t, self.X, np.broadcast_to(y, p.shape), z, self.V)
        return np.broadcast_to(np.asarray(values, dtype=float), p.shape)

    def rate(self, t: float, w: np.ndarray) -> np.ndarray:
        """a/dx^2 + |b|/dx + наклон f по p, делённый на dx, для всех (v, x)."""
        b, sigma, a = self.coefficients(t)
        p = np.zeros_like(b)
        slope = np.abs(self.generator(t, w, p + 1.0, sigma) - self.generator(t, w, p - 1.0, sigma)) / 2.0
        return a / self.dx ** 2 + (np.abs(b) + slope) / self.dx

    def step(self, t: float, w: np.ndarray, dt: float) -> np.ndarray:
        """min_v [ E w(X') + f(t, x, w, z_fd, v) dt ] по всем узлам."""
        b, sigma, a = self.coefficients(t)
        left, right = _ghost(w)
        forward, backward = (right - w) / self.dx, (w - left) / self.dx
        up = dt / self.dx ** 2 * (0.5 * a + self.dx * np.maximum(b, 0.0))
        down = dt / self.dx ** 2 * (0.5 * a + self.dx * np.maximum(-b, 0.0))
        f_fwd = self.generator(t, w, np.broadcast_to(forward, b.shape), sigma)
        f_bwd = self.generator(t, w, np.broadcast_to(backward, b.shape), sigma)
        use_forward = (f_fwd - f_bwd) * (forward - backward) > 0
        generator = np.where(use_forward, f_fwd, f_bwd)
        gap = np.abs(forward - backward)
        slope = np.where(gap > 0, np.abs(f_fwd - f_bwd) / np.where(gap > 0, gap, 1.0), 0.0)
        stay = 1.0 - up - down - dt * slope / self.dx
        if np.any(stay < -1e-12):
            raise ConfigurationError(
                "chain_dt", f"вероятность перехода вне [0, 1] при dt = {dt:.3g}; уменьшите шаг цепи"
            )
        expected = up * right + down * left + (1.0 - up - down) * w
        return np.min(expected + generator * dt, axis=0)


def _jump_fixed_point(values: np.ndarray, spec: ProblemSpec, dx: float, jump_steps: int) -> np.ndarray:
    """value = min(value, K h + value(x + G h)) по сетке скачков, до неподвижной точки."""
    out = values.copy()
    size = out.size
    moves = []
    for i in range(spec.m):
        g = float(spec.G[0, i])
        if g == 0:
            continue
        cost = float(spec.K[i]) * dx / abs(g)
        direction = 1 if g > 0 else -1
        moves.extend((direction * steps, steps * cost) for steps in range(1, jump_steps + 1) if steps < size)
    if not moves:
        return out
    for _ in range(size * max(1, jump_steps) + 1):
        candidate = out.copy()
        for shift, cost in moves:
            if shift > 0:
                candidate[:-shift] = np.minimum(candidate[:-shift], out[shift:] + cost)
            else:
                candidate[-shift:] = np.minimum(candidate[-shift:], out[:shift] + cost)
        if np.array_equal(candidate, out):
            return out
        out = candidate
    raise NumericError("dp_oracle", "итерации скачков не сошлись")


@log_action("ORACLE")
def dp_oracle(spec: ProblemSpec, cfg: DPOracleConfig) -> ValueSurface:
    """
    Поверхность цены по рекурсии динамического программирования на цепи.

    На каждом шаге цепи: сначала ветвь диффузии min_v [E w + f dt],
    затем ветвь скачков min_h [K h + value(x + G h)] итерациями внутри слоя.

    Raises:
        StructuralError: n != 1 или конец сетки не совпадает с T
        ConfigurationError: Заданный chain_dt даёт вероятности вне [0, 1],
            либо таблица состояние-действие превышает max_entries
    """
    if spec.n != 1:
        raise StructuralError("n", "оракул поддерживает только n = 1")
    if abs(cfg.tgrid.T - spec.T) > 1e-12 * max(1.0, spec.T):
        raise StructuralError("T", f"конец сетки {cfg.tgrid.T} не совпадает с горизонтом {spec.T}")
    controls = cfg.control_grid or ControlGrid.from_set(spec.U)
    if controls.k != spec.k:
        raise StructuralError("control_grid", f"размерность {controls.k} не равна k = {spec.k}")
    size = cfg.sgrid.counts[0]
    entries = size * len(controls) * (1 + spec.m * cfg.jump_steps)
    if entries > cfg.max_entries:
        raise ConfigurationError("oracle", f"таблица {entries} превышает предел {cfg.max_entries}")

    chain = _Chain(spec, cfg.sgrid, controls)
    dx = float(cfg.sgrid.dx[0])
    tgrid = cfg.tgrid
    u = np.empty((tgrid.N + 1, size))
    terminal = np.broadcast_to(np.asarray(spec.Phi(cfg.sgrid.points), dtype=float), (size,))
    if not np.all(np.isfinite(terminal)):
        raise NumericError(("N", int(np.argmax(~np.isfinite(terminal)))))
    u[-1] = terminal
    current = u[-1].copy()
    nodes = tgrid.nodes
    chain_steps = 0
    min_dt = math.inf
    for i in range(tgrid.N - 1, -1, -1):
        interval = float(nodes[i + 1] - nodes[i])
        if cfg.chain_dt is None:
            rate = float(chain.rate(float(nodes[i + 1]), current).max())
            count = max(1, math.ceil(interval * rate / CHAIN_SAFETY)) if rate > 0 else 1
        else:
            count = max(1, math.ceil(interval / cfg.chain_dt - 1e-12))
        dt = interval / count
        min_dt = min(min_dt, dt)
        s = float(nodes[i + 1])
        for _ in range(count):
            s -= dt
            current = chain.step(s, current, dt)
            current = _jump_fixed_point(current, spec, dx, cfg.jump_steps)
        if not np.all(np.isfinite(current)):
            raise NumericError((i, int(np.argmax(~np.isfinite(current)))))
        u[i] = current
        chain_steps += count

    metadata = {
        "dt_used": min_dt,
        "substeps": chain_steps,
        "jump_steps": cfg.jump_steps,
        "control_points": len(controls),
        "dx": format_float(dx),
        "problem": spec.name,
        "method": "markov_chain_dp",
    }
    logger.info("Оракул: %d шагов цепи, dt=%.3g", chain_steps, min_dt)
    return ValueSurface(u=u, tgrid=tgrid, sgrid=cfg.sgrid, metadata=metadata)


@dataclass(frozen=True)
class CrossCheckRow:
    """Одна точка перекрёстной проверки; у каждого расхождения свой допуск."""

    t: float
    x: Tuple[float, ...]
    pde: float
    oracle: float
    mc: Estimate
    pde_oracle_gap: float
    pde_oracle_tol: float
    mc_pde_gap: float
    mc_pde_tol: float
    mc_oracle_gap: float
    mc_oracle_tol: float

    @property
    def pde_oracle_pass(self) -> bool:
        return self.pde_oracle_gap <= self.pde_oracle_tol

    @property
    def mc_pass(self) -> bool:
        return self.mc_pde_gap <= self.mc_pde_tol and self.mc_oracle_gap <= self.mc_oracle_tol

    @property
    def passed(self) -> bool:
        return self.pde_oracle_pass and self.mc_pass


@dataclass(frozen=True)
class CrossCheckReport:
    rows: List[CrossCheckRow]
    tol_pde: float
    tol_oracle: float

    @property
    def passed(self) -> bool:
        return all(row.passed for row in self.rows)

    def flags(self) -> List[Tuple[bool, bool]]:
        return [(row.pde_oracle_pass, row.mc_pass) for row in self.rows]

    def as_dict(self) -> Dict[str, str]:
        data = {"cross_check.passed": str(self.passed)}
        for index, row in enumerate(self.rows):
            prefix = f"cross_check.{index}"
            data[f"{prefix}.pde"] = format_float(row.pde)
            data[f"{prefix}.oracle"] = format_float(row.oracle)
            data[f"{prefix}.mc"] = format_float(row.mc.value)
            data[f"{prefix}.mc_se"] = format_float(row.mc.stderr)
            data[f"{prefix}.passed"] = str(row.passed)
        return data


def cross_check(
    spec: ProblemSpec,
    points: Sequence[Tuple[float, Sequence[float]]],
    pde_surface: ValueSurface,
    mc: McConfig,
    candidate_policy: StateMap,
    oracle_cfg: Optional[DPOracleConfig] = None,
    candidate_xi_rule: Optional[SingularFeedbackRule] = None,
    oracle_surface: Optional[ValueSurface] = None,
    tol_pde: float = 2e-2,
    tol_oracle: float = 5e-2,
    n_se: float = 3.0,
) -> CrossCheckReport:
    """
    Сравнение трёх оценок цены в точках (t, x).

    |PDE - oracle| <= tol_pde + tol_oracle; оценка Монте-Карло при
    кандидатных управлениях должна попасть в n_se SE + tol от каждой из
    поверхностей. Условия симметричны: перестановка ролей PDE и оракула
    (вместе с допусками) не меняет результата, поэтому кандидат v*
    задаётся явно, а не выводится из одной из поверхностей.

    Raises:
        StructuralError: Не задан ни oracle_cfg, ни oracle_surface
    """
    if oracle_surface is None:
        if oracle_cfg is None:
            raise StructuralError("oracle", "нужен oracle_cfg или готовая oracle_surface")
        oracle_surface = dp_oracle(spec, oracle_cfg)
    policy = RegularControlPolicy.from_feedback(candidate_policy, label="candidate")

    rows = []
    for t, x in points:
        x = np.asarray(x, dtype=float).reshape(1, spec.n)
        pde_value = float(pde_surface.value(t, x)[0])
        oracle_value = float(oracle_surface.value(t, x)[0])
        estimate = cost_functional(spec, float(t), x[0], policy, candidate_xi_rule, mc)
        rows.append(
            CrossCheckRow(
                t=float(t),
                x=tuple(float(v) for v in x[0]),
                pde=pde_value,
                oracle=oracle_value,
                mc=estimate,
                pde_oracle_gap=abs(pde_value - oracle_value),
                pde_oracle_tol=tol_pde + tol_oracle,
                mc_pde_gap=abs(estimate.value - pde_value),
                mc_pde_tol=n_se * estimate.stderr + tol_pde,
                mc_oracle_gap=abs(estimate.value - oracle_value),
                mc_oracle_tol=n_se * estimate.stderr + tol_oracle,
            )
        )
    report = CrossCheckReport(rows=rows, tol_pde=tol_pde, tol_oracle=tol_oracle)
    logger.info("Перекрёстная проверка: %d точек, passed=%s", len(rows), report.passed)
    return report


@dataclass(frozen=True)
class BatteryConfig:
    """
    Параметры набора эмпирических оценок.

    Attributes:
        perturbations: Размеры возмущения регулярного управления
        initial_states: Начальные состояния для оценок роста (скаляр на координату)
        windows: Длины окон для сравнения замороженного и подвижного уравнений
        x0: Начальное состояние для возмущений и окон
        mc: Параметры Монте-Карло
        slope_threshold: Минимальный наклон log-log для окон
        stability_ratio: Допустимое отношение max/min констант по возмущениям
    """

    perturbations: Tuple[float, ...] = (0.2, 0.1, 0.05)
    initial_states: Tuple[float, ...] = (0.5, 1.0, 2.0)
    windows: Tuple[float, ...] = (0.2, 0.1, 0.05)
    x0: float = 1.0
    mc: McConfig = field(default_factory=lambda: McConfig(paths=20000, steps=40))
    slope_threshold: float = 1.2
    stability_ratio: float = 4.0

    def __post_init__(self) -> None:
        for name in ("perturbations", "windows"):
            values = tuple(validate_positive(value, name) for value in getattr(self, name))
            object.__setattr__(self, name, values)
        validate_positive(self.stability_ratio, "stability_ratio")


@dataclass(frozen=True)
class BatteryReport:
    """
    Итоги оценок.

    Attributes:
        perturbation: delta -> (E sup |X^d - X|^2 / d^2, |Y^d_0 - Y_0| / d)
        growth: (x0, E sup |Y|^2 / (1+|x|^2), E sum |Z|^2 dt / (1+|x|^2))
        windows: delta -> |Y(moving) - Y(frozen)|
        slope: Наклон log |dY| по log delta
    """

    perturbation: Dict[float, Tuple[float, float]]
    growth: List[Tuple[float, float, float]]
    windows: Dict[float, float]
    slope: float
    slope_threshold: float
    stability_ratio: float

    @property
    def perturbation_stable(self) -> bool:
        if not self.perturbation:
            return True
        for column in range(2):
            values = [pair[column] for pair in self.perturbation.values()]
            if not all(math.isfinite(v) for v in values):
                return False
            low, high = min(values), max(values)
            if high > 1e-12 and (low <= 0 or high / low > self.stability_ratio):
                return False
        return True

    @property
    def perturbation_monotone(self) -> bool:
        """|Y^d_0 - Y_0| не возрастает при уменьшении d."""
        ordered = sorted(self.perturbation.items(), reverse=True)
        gaps = [cost_const * delta for delta, (_, cost_const) in ordered]
        return all(smaller <= larger + 1e-12 for larger, smaller in zip(gaps, gaps[1:]))

    @property
    def growth_finite(self) -> bool:
        return all(math.isfinite(y) and math.isfinite(z) for _, y, z in self.growth)

    @property
    def slope_ok(self) -> bool:
        return self.slope >= self.slope_threshold

    @property
    def passed(self) -> bool:
        return self.perturbation_stable and self.perturbation_monotone and self.growth_finite and self.slope_ok

    def as_dict(self) -> Dict[str, str]:
        data: Dict[str, str] = {}
        for delta, (state_const, cost_const) in self.perturbation.items():
            data[f"battery.perturbation.{delta:g}.state"] = format_float(state_const)
            data[f"battery.perturbation.{delta:g}.cost"] = format_float(cost_const)
        for x0, y_ratio, z_ratio in self.growth:
            data[f"battery.growth.{x0:g}.y"] = format_float(y_ratio)
            data[f"battery.growth.{x0:g}.z"] = format_float(z_ratio)
        for delta, gap in self.windows.items():
            data[f"battery.window.{delta:g}"] = format_float(gap)
        data["battery.perturbation_monotone"] = str(self.perturbation_monotone)
        data["battery.slope"] = format_float(self.slope)
        data["battery.passed"] = str(self.passed)
        return data


def _base_control(spec: ProblemSpec) -> np.ndarray:
    if spec.k == 0:
        return np.zeros(0)
    return np.asarray(spec.U.boxes[0].lower, dtype=float)


def _perturbed(spec: ProblemSpec, base: np.ndarray, delta: float) -> Optional[np.ndarray]:
    for sign in (1.0, -1.0):
        candidate = base + sign * delta
        if bool(spec.U.contains(candidate[None])[0]):
            return candidate
    return None


def _quartic(x: np.ndarray) -> np.ndarray:
    return np.sum(x ** 4, axis=-1)


def _frozen_value(spec: ProblemSpec, t: float, x0: np.ndarray, v: np.ndarray, window: float) -> float:
    """phi(x0) + window * [L phi + f](t, x0, phi(x0), D phi sigma, v) при замороженных коэффициентах."""
    x = x0[None]
    vv = v[None]
    grad = 4.0 * x ** 3
    hess = np.diag(12.0 * x0 ** 2)
    b = np.asarray(spec.b(t, x, vv), dtype=float).reshape(spec.n)
    sigma = np.asarray(spec.sigma(t, x, vv), dtype=float).reshape(spec.n, spec.d)
    a = sigma @ sigma.T
    y = _quartic(x)
    z = grad @ sigma
    generator = float(np.asarray(spec.f(t, x, y, z, vv), dtype=float).ravel()[0])
    return float(y[0] + window * (b @ grad[0] + 0.5 * np.sum(a * hess) + generator))


def _moving_value(spec: ProblemSpec, t: float, x0: np.ndarray, v: np.ndarray, window: float, mc: McConfig) -> float:
    """
    Y_t обратного уравнения на [t, t+window] с терминалом phi(X).

    Из стоимости по траекториям вычитается контрольная переменная
    sum D phi(X+) sigma dW с нулевым средним.
    """
    grid = TimeGrid(t, t + window, mc.steps)
    policy = RegularControlPolicy.constant(v)
    bundle = simulate_forward(spec, grid, x0, policy, None, mc.paths, mc.seed, mc.threads)
    solution = solve_bsde(spec, bundle, _quartic(bundle.X[:, -1]), mc.basis(), mc.picard_passes)
    martingale = np.zeros(bundle.M)
    for i, s in enumerate(grid.nodes[:-1]):
        xp = bundle.X_plus[:, i]
        sigma = np.asarray(spec.sigma(float(s), xp, bundle.controls[:, i]), dtype=float)
        martingale += np.einsum("pn,pnd,pd->p", 4.0 * xp ** 3, sigma, bundle.dW[:, i])
    return float(np.mean(solution.pathwise_cost - martingale))


@log_action("BATTERY")
def estimate_battery(spec: ProblemSpec, config: Optional[BatteryConfig] = None) -> BatteryReport:
    """
    Эмпирические оценки устойчивости и роста.

    1. Возмущение регулярного управления на delta при общих случайных
       числах: константы E sup |X^d - X|^2 / d^2 и |Y^d_0 - Y_0| / d.
    2. Рост моментов: E sup |Y|^2 и E sum |Z|^2 dt относительно 1 + |x|^2.
    3. Сравнение обратного уравнения с подвижным x и с замороженными
       коэффициентами на окнах delta для phi(x) = sum x^4; наклон
       log-log подбирается по всем окнам.
    """
    config = config or BatteryConfig()
    mc = config.mc
    base = _base_control(spec)
    x0 = np.full(spec.n, float(config.x0))
    grid = TimeGrid(0.0, spec.T, mc.steps)
    base_policy = RegularControlPolicy.constant(base)
    base_bundle = simulate_forward(spec, grid, x0, base_policy, None, mc.paths, mc.seed, mc.threads)
    base_cost = solve_bsde(spec, base_bundle, spec.Phi(base_bundle.X[:, -1]), mc.basis(), mc.picard_passes)

    perturbation: Dict[float, Tuple[float, float]] = {}
    if spec.k > 0:
        for delta in config.perturbations:
            shifted = _perturbed(spec, base, delta)
            if shifted is None:
                logger.warning("Возмущение %.3g выводит управление из U, пропущено", delta)
                continue
            bundle = simulate_forward(
                spec, grid, x0, RegularControlPolicy.constant(shifted), None, mc.paths, mc.seed, mc.threads
            )
            cost = solve_bsde(spec, bundle, spec.Phi(bundle.X[:, -1]), mc.basis(), mc.picard_passes)
            state_gap = np.max(np.sum((bundle.X - base_bundle.X) ** 2, axis=-1), axis=1)
            perturbation[float(delta)] = (
                float(state_gap.mean() / delta ** 2),
                abs(cost.y0.value - base_cost.y0.value) / delta,
            )

    growth = []
    for state in config.initial_states:
        start = np.full(spec.n, float(state))
        bundle = simulate_forward(spec, grid, start, base_policy, None, mc.paths, mc.seed, mc.threads)
        solution = solve_bsde(spec, bundle, spec.Phi(bundle.X[:, -1]), mc.basis(), mc.picard_passes)
        scale = 1.0 + float(start @ start)
        y_moment = float(np.mean(np.max(solution.Y ** 2, axis=1)))
        z_moment = float(np.mean(np.sum(solution.Z ** 2, axis=(1, 2)) * grid.dt))
        growth.append((float(state), y_moment / scale, z_moment / scale))

    windows: Dict[float, float] = {}
    for window in config.windows:
        if window > spec.T:
            raise ConfigurationError("windows", f"окно {window} длиннее горизонта {spec.T}")
        moving = _moving_value(spec, 0.0, x0, base, float(window), mc)
        frozen = _frozen_value(spec, 0.0, x0, base, float(window))
        windows[float(window)] = abs(moving - frozen)

    gaps = np.array(list(windows.values()))
    if len(gaps) < 2 or np.all(gaps <= 1e-14):
        slope = math.inf
    else:
        sizes = np.log(np.array(list(windows.keys())))
        slope = float(np.polyfit(sizes, np.log(np.maximum(gaps, 1e-300)), 1)[0])

    report = BatteryReport(
        perturbation=perturbation,
        growth=growth,
        windows=windows,
        slope=slope,
        slope_threshold=config.slope_threshold,
        stability_ratio=config.stability_ratio,
    )
    logger.info("Оценки: наклон %.3g, passed=%s", slope, report.passed)
    return report
