"""
Моделирование прямого уравнения с регулярным и сингулярным управлением.

    dX = b(s, X, v) ds + sigma(s, X, v) dW + G dxi

Схема Эйлера-Маруямы. Соглашение о скачках (xi непрерывен слева):
скачок в узле i применяется до шага i, то есть

    X+_i    = X_i + G jump_i
    X_{i+1} = X+_i + b(t_i, X+_i, v_i) dt + sigma(t_i, X+_i, v_i) dW_i + G rate_i dt

Скачки возможны только в узлах 0..N-1. Это же соглашение используют
обратное уравнение, решатель HJB и проверки.

Шум: блоки по BLOCK_SIZE траекторий, у каждого блока свой поток Philox
с ключом SeedSequence(seed, spawn_key=(block,)). Траектория j не зависит
ни от M, ни от числа потоков.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .exceptions import ContractError, EvaluationError, SimulationError, StructuralError
from .grids import TimeGrid
from .model import ControlSet, ProblemSpec
from .utils import Estimate, validate_positive_int

logger = logging.getLogger("singular_control_hub.sde")

BLOCK_SIZE = 1024
CONTROL_TOL = 1e-12

StateMap = Callable[[float, np.ndarray], np.ndarray]


def _readonly(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class SingularControlPath:
    """
    Детерминированный сингулярный процесс xi на сетке.

    Attributes:
        ac_density: Плотности абсолютно непрерывной части, форма (N, m), >= 0
        jumps: Упорядоченные пары (узел, вектор скачка >= 0), узлы 0..N-1
    """

    ac_density: np.ndarray
    jumps: Tuple[Tuple[int, np.ndarray], ...] = ()

    def __post_init__(self) -> None:
        density = np.array(self.ac_density, dtype=float)
        if density.ndim != 2:
            raise StructuralError("ac_density", f"ожидается форма (N, m), получено {density.shape}")
        if np.any(density < 0) or not np.all(np.isfinite(density)):
            raise ContractError("плотность xi должна быть неотрицательной", sample=float(density.min()))
        steps, m = density.shape
        jumps = []
        for node, size in sorted(((int(node), size) for node, size in self.jumps), key=lambda item: item[0]):
            size = np.array(size, dtype=float).reshape(m)
            if not 0 <= node < steps:
                raise StructuralError("jumps", f"узел скачка {node} вне диапазона 0..{steps - 1}")
            if np.any(size < 0):
                raise ContractError("скачок xi должен быть неотрицательным", sample=(node, size.tolist()))
            jumps.append((node, _readonly(size)))
        object.__setattr__(self, "ac_density", _readonly(density))
        object.__setattr__(self, "jumps", tuple(jumps))

    @classmethod
    def none(cls, steps: int, m: int) -> "SingularControlPath":
        """xi = 0."""
        return cls(np.zeros((steps, m)))

    @classmethod
    def single_jump(cls, steps: int, m: int, node: int, size) -> "SingularControlPath":
        """Один скачок размера size в узле node."""
        return cls(np.zeros((steps, m)), ((node, np.broadcast_to(np.asarray(size, dtype=float), (m,))),))

    @property
    def steps(self) -> int:
        return int(self.ac_density.shape[0])

    @property
    def m(self) -> int:
        return int(self.ac_density.shape[1])

    def jump_array(self) -> np.ndarray:
        """Скачки по узлам, форма (N, m)."""
        out = np.zeros((self.steps, self.m))
        for node, size in self.jumps:
            out[node] += size
        return out

    def cumulative(self, dt: float) -> np.ndarray:
        """Значения xi в узлах (слева), форма (N+1, m); xi_0 = 0."""
        increments = self.jump_array() + self.ac_density * dt
        return np.vstack([np.zeros((1, self.m)), np.cumsum(increments, axis=0)])


@dataclass(frozen=True)
class SingularFeedbackRule:
    """
    Сингулярное управление в форме обратной связи.

    Attributes:
        jump: Отображение (t, X) -> скачки формы (M, m), >= 0
        rate: Необязательное отображение (t, X) -> плотности формы (M, m), >= 0
        name: Метка для отчётов
    """

    jump: StateMap
    rate: Optional[StateMap] = None
    name: str = "feedback"

    @classmethod
    def none(cls, m: int) -> "SingularFeedbackRule":
        return cls(jump=lambda t, x: np.zeros(np.shape(x)[:-1] + (m,)), name="none")

    @staticmethod
    def _checked(values, count: int, m: int, what: str) -> np.ndarray:
        values = np.broadcast_to(np.asarray(values, dtype=float), (count, m))
        if not np.all(np.isfinite(values)):
            raise EvaluationError(what, int(np.argmax(~np.isfinite(values).all(axis=-1))))
        if np.any(values < 0):
            row = int(np.argmax((values < 0).any(axis=-1)))
            raise ContractError(f"{what}: приращение xi должно быть неотрицательным", sample=row)
        return values

    def jumps_at(self, t: float, x: np.ndarray, m: int) -> np.ndarray:
        return self._checked(self.jump(t, x), x.shape[0], m, "xi.jump")

    def rates_at(self, t: float, x: np.ndarray, m: int) -> np.ndarray:
        if self.rate is None:
            return np.zeros((x.shape[0], m))
        return self._checked(self.rate(t, x), x.shape[0], m, "xi.rate")


SingularControl = Union[SingularControlPath, SingularFeedbackRule]


@dataclass(frozen=True, eq=False)
class RegularControlPolicy:
    """
    Регулярное управление v: обратная связь (t, x) -> U или программное
    (значения по шагам, общие или по траекториям).
    """

    feedback: Optional[StateMap] = None
    values: Optional[np.ndarray] = None
    label: str = "policy"

    def __post_init__(self) -> None:
        if (self.feedback is None) == (self.values is None):
            raise StructuralError("policy", "нужно задать ровно одно: feedback или values")
        if self.values is not None:
            object.__setattr__(self, "values", _readonly(np.array(self.values, dtype=float)))

    @classmethod
    def constant(cls, v: Sequence[float]) -> "RegularControlPolicy":
        point = np.asarray(v, dtype=float).ravel()
        return cls(feedback=lambda t, x: np.broadcast_to(point, np.shape(x)[:-1] + point.shape),
                   label=f"constant{point.tolist()}")

    @classmethod
    def from_feedback(cls, rule: StateMap, label: str = "feedback") -> "RegularControlPolicy":
        return cls(feedback=rule, label=label)

    @classmethod
    def open_loop(cls, values: np.ndarray) -> "RegularControlPolicy":
        """values формы (N, k) (общие для всех траекторий) или (M, N, k)."""
        return cls(values=values, label="open_loop")

    def evaluate(self, step: int, t: float, x: np.ndarray, control_set: ControlSet) -> np.ndarray:
        """
        Значения управления на шаге step для состояний x формы (M, n).

        Raises:
            ContractError: Если значение вне U
        """
        count, k = x.shape[0], control_set.k
        if self.values is not None:
            raw = self.values[step] if self.values.ndim == 2 else self.values[:count, step]
        else:
            raw = self.feedback(t, x)
        v = np.broadcast_to(np.asarray(raw, dtype=float), (count, k))
        if k:
            inside = control_set.contains(v, tol=CONTROL_TOL)
            if not inside.all():
                row = int(np.argmin(inside))
                raise ContractError("управление вне множества U", sample=v[row].tolist())
        return v


@dataclass(frozen=True, eq=False)
class PathBundle:
    """
    Ансамбль траекторий прямого уравнения.

    Attributes:
        X: Состояния в узлах (значения слева), форма (M, N+1, n)
        X_plus: Состояния после скачков X+_i, форма (M, N, n)
        dW: Броуновские приращения, форма (M, N, d)
        controls: Применённые v_i, форма (M, N, k)
        jumps: Скачки xi в узлах, форма (M, N, m)
        ac_increments: Приращения абсолютно непрерывной части rate_i dt, (M, N, m)
        tgrid: Сетка по времени
        x0: Начальное состояние
        rng_seed: Зерно генератора
        xi: Использованное сингулярное управление
    """

    X: np.ndarray
    X_plus: np.ndarray
    dW: np.ndarray
    controls: np.ndarray
    jumps: np.ndarray
    ac_increments: np.ndarray
    tgrid: TimeGrid
    x0: np.ndarray
    rng_seed: int
    xi: SingularControl = field(repr=False, compare=False, default=None)

    @property
    def M(self) -> int:
        return int(self.X.shape[0])

    @property
    def N(self) -> int:
        return self.tgrid.N

    @property
    def xi_increments(self) -> np.ndarray:
        """Полные приращения xi на шаге i: скачок плюс rate dt."""
        return self.jumps + self.ac_increments

    @property
    def xi_total(self) -> np.ndarray:
        """xi_T по траекториям, форма (M, m)."""
        return self.xi_increments.sum(axis=1)


def _block_noise(seed: int, block: int, steps: int, d: int) -> np.ndarray:
    generator = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(block,))))
    return generator.standard_normal((BLOCK_SIZE, steps, d))


def brownian_increments(seed: int, M: int, steps: int, d: int, dt: float, threads: int = 1) -> np.ndarray:
    """
    Приращения броуновского движения формы (M, steps, d).

    Блок всегда генерируется целиком и обрезается, поэтому первые j
    траекторий одинаковы при любом M.
    """
    if int(seed) < 0:
        raise StructuralError("seed", f"зерно должно быть неотрицательным, получено {seed}")
    blocks = -(-M // BLOCK_SIZE)
    workers = max(1, min(int(threads), blocks))
    if workers == 1:
        chunks = [_block_noise(int(seed), block, steps, d) for block in range(blocks)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda block: _block_noise(int(seed), block, steps, d), range(blocks)))
    return np.concatenate(chunks, axis=0)[:M] * np.sqrt(dt)


def simulate_forward(
    spec: ProblemSpec,
    grid: TimeGrid,
    x0: Sequence[float],
    policy: RegularControlPolicy,
    xi: Optional[SingularControl],
    M: int,
    seed: int,
    threads: int = 1,
) -> PathBundle:
    """
    Моделирует M траекторий прямого уравнения.

    Args:
        spec: Задача
        grid: Сетка по времени
        x0: Начальное состояние (общее для всех траекторий)
        policy: Регулярное управление
        xi: Сингулярное управление (None - нулевое)
        M: Число траекторий
        seed: Зерно
        threads: Число потоков для генерации шума (на результат не влияет)

    Returns:
        PathBundle

    Raises:
        SimulationError: Нечисловое состояние (с индексом траектории и шага)
        ContractError: Управление вне U или отрицательное приращение xi
    """
    M = validate_positive_int(M, "M")
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape != (spec.n,):
        raise StructuralError("x0", f"ожидается вектор длины {spec.n}, получено {x0.shape}")
    steps, dt = grid.N, grid.dt
    if xi is None:
        xi = SingularControlPath.none(steps, spec.m)
    if isinstance(xi, SingularControlPath) and (xi.steps, xi.m) != (steps, spec.m):
        raise StructuralError("xi", f"ожидается форма ({steps}, {spec.m}), получено ({xi.steps}, {xi.m})")

    dW = brownian_increments(seed, M, steps, spec.d, dt, threads)
    X = np.empty((M, steps + 1, spec.n))
    X_plus = np.empty((M, steps, spec.n))
    controls = np.empty((M, steps, spec.k))
    jumps = np.zeros((M, steps, spec.m))
    ac = np.zeros((M, steps, spec.m))
    X[:, 0] = x0

    if isinstance(xi, SingularControlPath):
        path_jumps = xi.jump_array()

    x = X[:, 0].copy()
    for i, t in enumerate(grid.nodes[:-1]):
        t = float(t)
        if isinstance(xi, SingularControlPath):
            jumps[:, i] = path_jumps[i]
            ac[:, i] = xi.ac_density[i] * dt
        else:
            jumps[:, i] = xi.jumps_at(t, x, spec.m)
            ac[:, i] = xi.rates_at(t, x, spec.m) * dt
        xp = x + jumps[:, i] @ spec.G.T
        v = policy.evaluate(i, t, xp, spec.U)
        drift = np.asarray(spec.b(t, xp, v), dtype=float)
        diffusion = np.asarray(spec.sigma(t, xp, v), dtype=float)
        x = xp + drift * dt + np.einsum("pnd,pd->pn", diffusion, dW[:, i]) + ac[:, i] @ spec.G.T
        bad = ~np.isfinite(x).all(axis=-1)
        if bad.any():
            raise SimulationError(int(np.argmax(bad)), i + 1)
        X_plus[:, i] = xp
        controls[:, i] = v
        X[:, i + 1] = x

    logger.debug("Смоделировано %d траекторий, %d шагов (seed=%d)", M, steps, seed)
    return PathBundle(
        X=_readonly(X),
        X_plus=_readonly(X_plus),
        dW=_readonly(dW),
        controls=_readonly(controls),
        jumps=_readonly(jumps),
        ac_increments=_readonly(ac),
        tgrid=grid,
        x0=_readonly(x0.copy()),
        rng_seed=int(seed),
        xi=xi,
    )


@dataclass(frozen=True)
class TestFunction:
    """
    Гладкая функция Psi(t, x) с производными для проверки формулы Ито.

    value(t, x) -> (M,), d_t -> (M,), d_x -> (M, n), d_xx -> (M, n, n).
    """

    value: Callable[[float, np.ndarray], np.ndarray]
    d_t: Callable[[float, np.ndarray], np.ndarray]
    d_x: Callable[[float, np.ndarray], np.ndarray]
    d_xx: Callable[[float, np.ndarray], np.ndarray]
    name: str = "psi"

    __test__ = False

    @classmethod
    def constant(cls, c: float) -> "TestFunction":
        return cls(
            value=lambda t, x: np.full(x.shape[:-1], float(c)),
            d_t=lambda t, x: np.zeros(x.shape[:-1]),
            d_x=lambda t, x: np.zeros(x.shape),
            d_xx=lambda t, x: np.zeros(x.shape + (x.shape[-1],)),
            name="constant",
        )

    @classmethod
    def linear(cls, coef: Sequence[float]) -> "TestFunction":
        a = np.asarray(coef, dtype=float)
        return cls(
            value=lambda t, x: x @ a,
            d_t=lambda t, x: np.zeros(x.shape[:-1]),
            d_x=lambda t, x: np.broadcast_to(a, x.shape),
            d_xx=lambda t, x: np.zeros(x.shape + (x.shape[-1],)),
            name="linear",
        )

    @classmethod
    def square(cls) -> "TestFunction":
        """Psi = |x|^2."""
        return cls(
            value=lambda t, x: np.sum(x * x, axis=-1),
            d_t=lambda t, x: np.zeros(x.shape[:-1]),
            d_x=lambda t, x: 2.0 * x,
            d_xx=lambda t, x: np.broadcast_to(2.0 * np.eye(x.shape[-1]), x.shape + (x.shape[-1],)),
            name="square",
        )

    @classmethod
    def exp_square(cls) -> "TestFunction":
        """Psi = e^t |x|^2."""
        return cls(
            value=lambda t, x: np.exp(t) * np.sum(x * x, axis=-1),
            d_t=lambda t, x: np.exp(t) * np.sum(x * x, axis=-1),
            d_x=lambda t, x: 2.0 * np.exp(t) * x,
            d_xx=lambda t, x: np.broadcast_to(2.0 * np.exp(t) * np.eye(x.shape[-1]), x.shape + (x.shape[-1],)),
            name="exp_square",
        )


@dataclass(frozen=True)
class ItoResidual:
    """Разность сторон формулы Ито по траекториям: среднее и стандартная ошибка."""

    residual: Estimate
    lhs: Estimate
    rhs: Estimate
    jump_term: float
    control_variate: bool

    def passes(self, n_se: float = 3.0, extra: float = 0.0) -> bool:
        return self.residual.within(0.0, n_se, extra)


def ito_residual(
    spec: ProblemSpec,
    bundle: PathBundle,
    psi: TestFunction,
    control_variate: bool = True,
) -> ItoResidual:
    """
    Проверка формулы Ито для процесса с сингулярными приращениями.

    Левая часть: Psi(T, X_N). Правая: Psi(t0, x0) + сумма (Psi_t + L Psi) dt
    + сумма Psi_x G rate dt + сумма скачков Psi(X+) - Psi(X). С контрольной
    переменной к правой части добавляется сумма Psi_x sigma dW (её среднее
    равно нулю), что снижает дисперсию оценки.

    Raises:
        EvaluationError: Если Psi или производные нечисловые
    """
    nodes, dt = bundle.tgrid.nodes, bundle.tgrid.dt
    M = bundle.M
    lhs = np.asarray(psi.value(float(nodes[-1]), bundle.X[:, -1]), dtype=float)
    rhs = np.broadcast_to(np.asarray(psi.value(float(nodes[0]), bundle.X[:, 0]), dtype=float), (M,)).copy()
    jump_sum = np.zeros(M)
    for i in range(bundle.N):
        t = float(nodes[i])
        x, xp, v = bundle.X[:, i], bundle.X_plus[:, i], bundle.controls[:, i]
        jump_sum += psi.value(t, xp) - psi.value(t, x)
        grad = np.asarray(psi.d_x(t, xp), dtype=float)
        hess = np.asarray(psi.d_xx(t, xp), dtype=float)
        drift = np.asarray(spec.b(t, xp, v), dtype=float)
        diffusion = np.asarray(spec.sigma(t, xp, v), dtype=float)
        a = np.einsum("pnd,pmd->pnm", diffusion, diffusion)
        generator = (
            psi.d_t(t, xp)
            + np.einsum("pn,pn->p", drift, grad)
            + 0.5 * np.einsum("pnm,pnm->p", a, hess)
        )
        rhs += generator * dt + np.einsum("pn,pn->p", grad, bundle.ac_increments[:, i] @ spec.G.T)
        if control_variate:
            rhs += np.einsum("pn,pnd,pd->p", grad, diffusion, bundle.dW[:, i])
    rhs += jump_sum
    bad = ~(np.isfinite(lhs) & np.isfinite(rhs))
    if bad.any():
        raise EvaluationError(psi.name, bundle.X[int(np.argmax(bad)), -1].tolist())
    return ItoResidual(
        residual=Estimate.from_samples(lhs - rhs),
        lhs=Estimate.from_samples(lhs),
        rhs=Estimate.from_samples(rhs),
        jump_term=float(jump_sum.mean()),
        control_variate=control_variate,
    )


@dataclass(frozen=True)
class MomentScalingReport:
    """
    Эмпирические моментные оценки прямого уравнения.

    Attributes:
        initial_states: Начальные состояния
        sup_moments: E[sup |X|^2] для каждого начального состояния
        ratios: E[sup |X|^2] / (1 + |x|^2)
        c_hat: Подобранная константа (максимум отношений)
        pairwise: (i, j, E[sup |X^x - X^x'|^2] / |x - x'|^2) для соседних пар
    """

    initial_states: List[np.ndarray]
    sup_moments: List[Estimate]
    ratios: List[float]
    c_hat: float
    pairwise: List[Tuple[int, int, Estimate]]

    def as_dict(self) -> Dict[str, float]:
        data = {"c_hat": self.c_hat}
        for i, (moment, ratio) in enumerate(zip(self.sup_moments, self.ratios)):
            data[f"sup_moment.{i}"] = moment.value
            data[f"ratio.{i}"] = ratio
        for i, j, est in self.pairwise:
            data[f"pairwise.{i}_{j}"] = est.value
        return data


def moment_scaling(
    spec: ProblemSpec,
    grid: TimeGrid,
    x0_list: Sequence[Sequence[float]],
    policy: RegularControlPolicy,
    xi: Optional[SingularControl],
    M: int,
    seed: int,
    threads: int = 1,
) -> MomentScalingReport:
    """
    Оценки E[sup |X|^2] <= C (1 + |x|^2) и устойчивости по начальному условию.

    Все начальные состояния моделируются с одним зерном (общие случайные числа).

    Raises:
        ContractError: Если начальных состояний меньше трёх
    """
    states = [np.asarray(x0, dtype=float).ravel() for x0 in x0_list]
    if len(states) < 3:
        raise ContractError("нужно не меньше трёх начальных состояний", sample=len(states))
    bundles = [simulate_forward(spec, grid, x0, policy, xi, M, seed, threads) for x0 in states]
    sup_samples = [np.max(np.sum(bundle.X ** 2, axis=-1), axis=1) for bundle in bundles]
    moments = [Estimate.from_samples(samples) for samples in sup_samples]
    ratios = [est.value / (1.0 + float(x0 @ x0)) for est, x0 in zip(moments, states)]

    pairwise = []
    for i in range(len(states) - 1):
        gap = float(np.sum((states[i] - states[i + 1]) ** 2))
        if gap == 0:
            continue
        diff = np.max(np.sum((bundles[i].X - bundles[i + 1].X) ** 2, axis=-1), axis=1)
        pairwise.append((i, i + 1, Estimate.from_samples(diff / gap)))
    return MomentScalingReport(
        initial_states=states,
        sup_moments=moments,
        ratios=ratios,
        c_hat=float(max(ratios)),
        pairwise=pairwise,
    )
