"""
Обратное уравнение: рекурсивная стоимость Y при заданных управлениях.

    Y_s = Phi(X_T) + int_s^T f(r, X, Y, Z, v) dr + int_s^T K dxi - int_s^T Z dW

Условные математические ожидания оцениваются регрессией по базису от
состояния X+_i (метод наименьших квадратов в духе Лонгстаффа-Шварца).
Шаг назад по времени:

    Z_i = E[Y_{i+1} dW_i / dt | X+_i]
    Y^_i = E[Y_{i+1} | X+_i]
    Y_i = E[Y_{i+1} + f(t_i, X+_i, Y^_i, Z_i, v_i) dt | X+_i] + K dxi_i

Слагаемое K dxi_i измеримо относительно F_{t_i} и добавляется по траекториям
после регрессии.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy import linalg
from sklearn.preprocessing import PolynomialFeatures

from .exceptions import ConfigurationError, ContractError, NumericError, StructuralError
from .grids import TimeGrid
from .model import ProblemSpec
from .sde import PathBundle, RegularControlPolicy, SingularControl, simulate_forward
from .utils import Estimate

logger = logging.getLogger("singular_control_hub.bsde")

BASIS_KINDS = ("polynomial", "partition")


@dataclass(frozen=True)
class RegressionBasis:
    """
    Базис регрессии.

    Attributes:
        kind: "polynomial" (полиномы полной степени degree от стандартизованных
            состояний) или "partition" (кусочно-постоянный на равных ячейках)
        degree: Степень полиномов
        ridge: Вес гребневой регуляризации
        bins: Число ячеек по каждой координате для "partition"
    """

    kind: str = "polynomial"
    degree: int = 3
    ridge: float = 1e-8
    bins: int = 20

    def __post_init__(self) -> None:
        if self.kind not in BASIS_KINDS:
            raise ConfigurationError("basis", f"допустимые значения: {', '.join(BASIS_KINDS)}")
        if int(self.degree) < 0:
            raise ConfigurationError("degree", f"степень должна быть >= 0, получено {self.degree}")
        if not float(self.ridge) >= 0:
            raise ConfigurationError("ridge", f"регуляризация должна быть >= 0, получено {self.ridge}")
        if int(self.bins) < 1:
            raise ConfigurationError("bins", f"число ячеек должно быть >= 1, получено {self.bins}")

    def fit(self, states: np.ndarray, targets: np.ndarray) -> "RegressionFit":
        """
        Оценка условного математического ожидания targets при данных states.

        Args:
            states: Состояния формы (M, n)
            targets: Значения формы (M,) или (M, q)
        """
        states = np.asarray(states, dtype=float)
        targets = np.asarray(targets, dtype=float)
        center = states.mean(axis=0)
        spread = states.std(axis=0)
        degenerate = spread <= 1e-12 * np.maximum(1.0, np.abs(center))
        if np.all(degenerate) or (self.kind == "polynomial" and self.degree == 0):
            return RegressionFit(basis=self, constant=targets.mean(axis=0))
        if self.kind == "partition":
            return self._fit_partition(states, targets)

        scale = np.where(degenerate, 1.0, spread)
        features = PolynomialFeatures(degree=int(self.degree))
        design = features.fit_transform((states - center) / scale)
        count = design.shape[0]
        gram = design.T @ design / count + float(self.ridge) * np.eye(design.shape[1])
        rhs = design.T @ targets / count
        fallback = False
        try:
            coef = linalg.solve(gram, rhs, assume_a="pos")
            if not np.all(np.isfinite(coef)):
                raise linalg.LinAlgError("нечисловые коэффициенты")
        except linalg.LinAlgError:
            coef = linalg.lstsq(design, targets)[0]
            fallback = True
        return RegressionFit(basis=self, center=center, scale=scale, features=features, coef=coef, fallback=fallback)

    def _fit_partition(self, states: np.ndarray, targets: np.ndarray) -> "RegressionFit":
        lower, upper = states.min(axis=0), states.max(axis=0)
        cells = _cell_index(states, lower, upper, self.bins)
        total = self.bins ** states.shape[1]
        counts = np.bincount(cells, minlength=total)
        flat = targets.reshape(targets.shape[0], -1)
        means = np.empty((total, flat.shape[1]))
        overall = flat.mean(axis=0)
        for column in range(flat.shape[1]):
            sums = np.bincount(cells, weights=flat[:, column], minlength=total)
            means[:, column] = np.where(counts > 0, sums / np.maximum(counts, 1), overall[column])
        return RegressionFit(basis=self, lower=lower, upper=upper,
                             coef=means.reshape((total,) + targets.shape[1:]))


def _cell_index(states: np.ndarray, lower: np.ndarray, upper: np.ndarray, bins: int) -> np.ndarray:
    width = np.where(upper > lower, (upper - lower) / bins, 1.0)
    index = np.clip(np.floor((states - lower) / width).astype(int), 0, bins - 1)
    flat = np.zeros(states.shape[0], dtype=int)
    for axis in range(states.shape[1]):
        flat = flat * bins + index[:, axis]
    return flat


@dataclass(frozen=True, eq=False)
class RegressionFit:
    """Подобранная функция регрессии; predict(states) возвращает оценки."""

    basis: RegressionBasis
    constant: Optional[np.ndarray] = None
    center: Optional[np.ndarray] = None
    scale: Optional[np.ndarray] = None
    features: Optional[PolynomialFeatures] = None
    coef: Optional[np.ndarray] = None
    lower: Optional[np.ndarray] = None
    upper: Optional[np.ndarray] = None
    fallback: bool = False

    def predict(self, states: np.ndarray) -> np.ndarray:
        states = np.asarray(states, dtype=float)
        if self.constant is not None:
            return np.broadcast_to(self.constant, states.shape[:1] + np.shape(self.constant)).copy()
        if self.basis.kind == "partition":
            return self.coef[_cell_index(states, self.lower, self.upper, self.basis.bins)]
        return self.features.transform((states - self.center) / self.scale) @ self.coef


@dataclass(frozen=True, eq=False)
class BackwardSolution:
    """
    Решение обратного уравнения на ансамбле траекторий.

    Attributes:
        Y: Значения в узлах, форма (M, N+1); Y[:, N] - терминальные значения
        Z: Оценки Z, форма (M, N, d)
        y0: Оценка Y в начальный момент со стандартной ошибкой
        pathwise_cost: Терминал + сумма f dt + сумма K dxi по каждой траектории
        flags: Отметки о вырожденных регрессиях
        fits: Функции регрессии для Y по узлам 0..N-1
    """

    Y: np.ndarray
    Z: np.ndarray
    y0: Estimate
    pathwise_cost: np.ndarray
    flags: List[str] = field(default_factory=list)
    fits: List[RegressionFit] = field(default_factory=list, repr=False)
    state_dim: int = 1

    def value_function(self, index: int) -> Callable[[np.ndarray], np.ndarray]:
        """Оценка E[Y_{index+1} + f dt | X+ = x] как функция состояния (без K dxi в этом узле)."""
        if not 0 <= index < len(self.fits):
            raise StructuralError("index", f"узел {index} вне диапазона 0..{len(self.fits) - 1}")
        fit = self.fits[index]
        dim = self.state_dim
        return lambda x: fit.predict(np.asarray(x, dtype=float).reshape(-1, dim))


def solve_bsde(
    spec: ProblemSpec,
    bundle: PathBundle,
    terminal: np.ndarray,
    basis: RegressionBasis,
    picard_passes: int = 1,
    xi_increments: Optional[np.ndarray] = None,
) -> BackwardSolution:
    """
    Решает обратное уравнение регрессией назад по времени.

    Args:
        spec: Задача (генератор f и вектор K)
        bundle: Траектории прямого уравнения
        terminal: Терминальные значения по траекториям, форма (M,)
        basis: Базис регрессии
        picard_passes: Число проходов по Y внутри шага (1 или 2)
        xi_increments: Приращения xi формы (M, N, m); по умолчанию из bundle

    Returns:
        BackwardSolution

    Raises:
        NumericError: Нечисловое промежуточное значение (с номером шага)
    """
    terminal = np.asarray(terminal, dtype=float).ravel()
    M, steps = bundle.M, bundle.N
    if terminal.shape != (M,):
        raise StructuralError("terminal", f"ожидается {M} значений, получено {terminal.shape}")
    if not np.all(np.isfinite(terminal)):
        raise NumericError(f"шаг {steps}", "нечисловое терминальное значение")
    if picard_passes not in (1, 2):
        raise ConfigurationError("picard_passes", "допустимо 1 или 2")
    increments = bundle.xi_increments if xi_increments is None else np.asarray(xi_increments, dtype=float)
    singular_cost = increments @ spec.K

    dt = bundle.tgrid.dt
    nodes = bundle.tgrid.nodes
    Y = np.empty((M, steps + 1))
    Z = np.empty((M, steps, spec.d))
    Y[:, steps] = terminal
    pathwise = terminal.copy()
    flags: List[str] = []
    fits: List[Optional[RegressionFit]] = [None] * steps

    for i in range(steps - 1, -1, -1):
        t = float(nodes[i])
        xp, v = bundle.X_plus[:, i], bundle.controls[:, i]
        y_next = Y[:, i + 1]
        z_fit = basis.fit(xp, y_next[:, None] * bundle.dW[:, i] / dt)
        Z[:, i] = z_fit.predict(xp)
        y_hat = basis.fit(xp, y_next).predict(xp)
        for _ in range(picard_passes):
            generator = np.broadcast_to(np.asarray(spec.f(t, xp, y_hat, Z[:, i], v), dtype=float), (M,))
            fit = basis.fit(xp, y_next + generator * dt)
            y_hat = fit.predict(xp)
        fits[i] = fit
        Y[:, i] = y_hat + singular_cost[:, i]
        pathwise += generator * dt + singular_cost[:, i]
        if z_fit.fallback or fit.fallback:
            flags.append(f"lstsq_fallback@{i}")
        if not (np.all(np.isfinite(Y[:, i])) and np.all(np.isfinite(Z[:, i]))):
            raise NumericError(f"шаг {i}")

    se = Estimate.from_samples(pathwise).stderr
    y0 = Estimate(float(Y[:, 0].mean()), se)
    if flags:
        logger.warning("Регрессия переключилась на lstsq в %d узлах", len(flags))
    return BackwardSolution(
        Y=Y, Z=Z, y0=y0, pathwise_cost=pathwise, flags=flags, fits=fits, state_dim=spec.n
    )


@dataclass(frozen=True)
class McConfig:
    """Параметры Монте-Карло для обратного уравнения."""

    paths: int = 10000
    steps: int = 50
    seed: int = 0
    degree: int = 3
    ridge: float = 1e-8
    picard_passes: int = 1
    threads: int = 1
    basis_kind: str = "polynomial"
    bins: int = 20

    def __post_init__(self) -> None:
        for key in ("paths", "steps", "threads"):
            if int(getattr(self, key)) < 1:
                raise ConfigurationError(key, f"должно быть >= 1, получено {getattr(self, key)}")
        if int(self.seed) < 0:
            raise ConfigurationError("seed", f"зерно должно быть >= 0, получено {self.seed}")

    def basis(self) -> RegressionBasis:
        return RegressionBasis(kind=self.basis_kind, degree=self.degree, ridge=self.ridge, bins=self.bins)

    def with_seed(self, seed: int) -> "McConfig":
        return replace(self, seed=seed)


def semigroup_solution(
    spec: ProblemSpec,
    t: float,
    t1: float,
    x0: Sequence[float],
    policy: RegularControlPolicy,
    xi: Optional[SingularControl],
    eta: Callable[[np.ndarray], np.ndarray],
    mc: McConfig,
) -> BackwardSolution:
    """Решение обратного уравнения на [t, t1] с терминальным условием eta(X_{t1})."""
    if not (0.0 <= t < t1 <= spec.T + 1e-12):
        raise ContractError(f"требуется 0 <= t < t1 <= T, получено t={t}, t1={t1}")
    grid = TimeGrid(t, min(t1, spec.T), mc.steps)
    bundle = simulate_forward(spec, grid, x0, policy, xi, mc.paths, mc.seed, mc.threads)
    terminal = np.broadcast_to(np.asarray(eta(bundle.X[:, -1]), dtype=float), (bundle.M,))
    return solve_bsde(spec, bundle, terminal, mc.basis(), mc.picard_passes)


def backward_semigroup(
    spec: ProblemSpec,
    t: float,
    t1: float,
    x0: Sequence[float],
    policy: RegularControlPolicy,
    xi: Optional[SingularControl],
    eta: Callable[[np.ndarray], np.ndarray],
    mc: McConfig,
) -> Estimate:
    """
    Обратная полугруппа G_{t,t1}[eta(X_{t1})].

    Моделирует прямое уравнение на [t, t1] из x0 (mc.steps шагов) и решает
    обратное с терминальным условием eta. При t1 = T и eta = Phi совпадает
    с cost_functional.
    """
    return semigroup_solution(spec, t, t1, x0, policy, xi, eta, mc).y0


def cost_functional(
    spec: ProblemSpec,
    t: float,
    x0: Sequence[float],
    policy: RegularControlPolicy,
    xi: Optional[SingularControl],
    mc: McConfig,
) -> Estimate:
    """Рекурсивная стоимость J(t, x; v, xi) = Y_t."""
    return backward_semigroup(spec, t, spec.T, x0, policy, xi, spec.Phi, mc)


@dataclass(frozen=True)
class ComparisonReport:
    """Результат проверки теоремы сравнения на уровне оценок."""

    margin: Estimate
    y1: Estimate
    y2: Estimate
    n_se: float
    passed: bool


def comparison_check(
    spec1: ProblemSpec,
    spec2: ProblemSpec,
    bundle: PathBundle,
    basis: RegressionBasis,
    terminal1: Optional[np.ndarray] = None,
    terminal2: Optional[np.ndarray] = None,
    xi_increments1: Optional[np.ndarray] = None,
    xi_increments2: Optional[np.ndarray] = None,
    n_se: float = 3.0,
    sample_count: int = 2000,
    yz_radius: float = 2.0,
    seed: int = 0,
) -> ComparisonReport:
    """
    Проверка Y^1_0 >= Y^2_0 - n_se * SE на общем ансамбле траекторий.

    Предусловия проверяются на выборке: f^1 >= f^2 в случайных точках
    (t_i, X+_i, y, z, v_i), terminal^1 >= terminal^2 и K^1 dxi^1 >= K^2 dxi^2
    по траекториям.

    Raises:
        StructuralError: Разные размерности задач
        ContractError: Нарушено предусловие (с примером)
    """
    if (spec1.n, spec1.d, spec1.k, spec1.m) != (spec2.n, spec2.d, spec2.k, spec2.m):
        raise StructuralError("spec2", "задачи должны иметь одинаковые размерности")
    terminal1 = spec1.Phi(bundle.X[:, -1]) if terminal1 is None else np.asarray(terminal1, dtype=float)
    terminal2 = spec2.Phi(bundle.X[:, -1]) if terminal2 is None else np.asarray(terminal2, dtype=float)
    increments1 = bundle.xi_increments if xi_increments1 is None else np.asarray(xi_increments1, dtype=float)
    increments2 = bundle.xi_increments if xi_increments2 is None else np.asarray(xi_increments2, dtype=float)

    gap = np.asarray(terminal1) - np.asarray(terminal2)
    if np.any(gap < -1e-12):
        row = int(np.argmin(gap))
        raise ContractError("terminal^1 >= terminal^2 нарушено", sample={"path": row, "gap": float(gap[row])})
    singular_gap = increments1 @ spec1.K - increments2 @ spec2.K
    if np.any(singular_gap < -1e-12):
        path, step = np.unravel_index(int(np.argmin(singular_gap)), singular_gap.shape)
        raise ContractError("K^1 dxi^1 >= K^2 dxi^2 нарушено", sample={"path": int(path), "step": int(step)})

    rng = np.random.default_rng(seed)
    paths = rng.integers(0, bundle.M, size=sample_count)
    steps = rng.integers(0, bundle.N, size=sample_count)
    t = bundle.tgrid.nodes[steps]
    x = bundle.X_plus[paths, steps]
    v = bundle.controls[paths, steps]
    y = rng.uniform(-yz_radius, yz_radius, size=sample_count)
    z = rng.uniform(-yz_radius, yz_radius, size=(sample_count, spec1.d))
    f_gap = np.asarray(spec1.f(t, x, y, z, v), dtype=float) - np.asarray(spec2.f(t, x, y, z, v), dtype=float)
    f_gap = np.broadcast_to(f_gap, (sample_count,))
    if np.any(f_gap < -1e-12):
        row = int(np.argmin(f_gap))
        raise ContractError(
            "f^1 >= f^2 нарушено",
            sample={"t": float(t[row]), "x": x[row].tolist(), "y": float(y[row]), "z": z[row].tolist()},
        )

    sol1 = solve_bsde(spec1, bundle, terminal1, basis, xi_increments=increments1)
    sol2 = solve_bsde(spec2, bundle, terminal2, basis, xi_increments=increments2)
    diff_se = Estimate.from_samples(sol1.pathwise_cost - sol2.pathwise_cost).stderr
    margin = Estimate(sol1.y0.value - sol2.y0.value, diff_se)
    passed = margin.value >= -n_se * margin.stderr
    logger.debug("Сравнение: разность %.6g (SE %.3g), passed=%s", margin.value, margin.stderr, passed)
    return ComparisonReport(margin=margin, y1=sol1.y0, y2=sol2.y0, n_se=n_se, passed=bool(passed))
