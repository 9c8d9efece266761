"""
Модель задачи сингулярного управления рекурсивной (FBSDE) системой.

Содержит:

1. ControlBox / ControlSet - компактное множество регулярных управлений U
   как конечное объединение прямоугольников в R^k.

2. ControlGrid - конечная дискретизация U, по которой берётся минимум
   в гамильтониане.

3. ProblemSpec - полные данные задачи: b, sigma, f, Phi, G, K, U, T
   и размерности (n, d, k, m).

4. AssumptionReport и validate_problem - выборочная проверка условий
   Липшица, линейного роста и строгой положительности K.

Соглашение о функциях (векторизованные, с broadcasting):
    b(t, x, v)          x: (..., n), v: (..., k)  ->  (..., n)
    sigma(t, x, v)                                ->  (..., n, d)
    f(t, x, y, z, v)    y: (...), z: (..., d)     ->  (...)
    Phi(x)                                        ->  (...)
Функции должны быть чистыми (без скрытого состояния).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Optional, Tuple

import numpy as np

from .exceptions import EvaluationError, StructuralError
from .utils import validate_positive_int

logger = logging.getLogger("singular_control_hub.model")

DriftFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]
DiffusionFn = Callable[[float, np.ndarray, np.ndarray], np.ndarray]
GeneratorFn = Callable[[float, np.ndarray, np.ndarray, np.ndarray, np.ndarray], np.ndarray]
TerminalFn = Callable[[np.ndarray], np.ndarray]

DEFAULT_POINTS_PER_UNIT = 41


@dataclass(frozen=True)
class ControlBox:
    """Прямоугольник [lower, upper] в R^k (k = 0 - одна пустая точка)."""

    lower: Tuple[float, ...]
    upper: Tuple[float, ...]

    def __post_init__(self) -> None:
        lower = tuple(float(v) for v in self.lower)
        upper = tuple(float(v) for v in self.upper)
        if len(lower) != len(upper):
            raise StructuralError("U", "размерности границ прямоугольника не совпадают")
        if not all(np.isfinite(lower)) or not all(np.isfinite(upper)):
            raise StructuralError("U", "множество управлений должно быть ограниченным")
        if any(lo > hi for lo, hi in zip(lower, upper)):
            raise StructuralError("U", f"пустой прямоугольник [{lower}, {upper}]")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def k(self) -> int:
        return len(self.lower)


@dataclass(frozen=True)
class ControlSet:
    """Компактное множество U как объединение прямоугольников."""

    boxes: Tuple[ControlBox, ...]

    def __post_init__(self) -> None:
        boxes = tuple(self.boxes)
        if not boxes:
            raise StructuralError("U", "множество управлений не может быть пустым")
        if len({box.k for box in boxes}) != 1:
            raise StructuralError("U", "прямоугольники разной размерности")
        object.__setattr__(self, "boxes", boxes)

    @classmethod
    def intervals(cls, *bounds: Tuple[float, float]) -> "ControlSet":
        """Объединение отрезков на прямой (k = 1)."""
        return cls(tuple(ControlBox((lo,), (hi,)) for lo, hi in bounds))

    @classmethod
    def singleton(cls, point: Tuple[float, ...] = ()) -> "ControlSet":
        """Одноточечное множество (k = len(point), по умолчанию k = 0)."""
        return cls((ControlBox(tuple(point), tuple(point)),))

    @property
    def k(self) -> int:
        return self.boxes[0].k

    def contains(self, v: np.ndarray, tol: float = 1e-12) -> np.ndarray:
        """Поэлементная проверка принадлежности U (v формы (..., k))."""
        v = np.asarray(v, dtype=float)
        if self.k == 0:
            return np.ones(v.shape[:-1], dtype=bool)
        inside = np.zeros(v.shape[:-1], dtype=bool)
        for box in self.boxes:
            lo = np.asarray(box.lower) - tol
            hi = np.asarray(box.upper) + tol
            inside |= np.all((v >= lo) & (v <= hi), axis=-1)
        return inside


@dataclass(frozen=True, eq=False)
class ControlGrid:
    """Конечный набор точек U формы (P, k), без повторов."""

    points: np.ndarray

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=float)
        if points.ndim != 2 or points.shape[0] < 1:
            raise StructuralError("control_grid", "нужен хотя бы один узел формы (P, k)")
        points = np.unique(points, axis=0) if points.shape[1] > 0 else points[:1]
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @classmethod
    def from_set(cls, control_set: ControlSet, per_unit: int = DEFAULT_POINTS_PER_UNIT) -> "ControlGrid":
        """
        Дискретизация каждого прямоугольника по осям.

        Число узлов на оси длины L равно round(per_unit * L), но не меньше 2
        (концы отрезка всегда входят); вырожденная ось даёт один узел.
        """
        per_unit = validate_positive_int(per_unit, "control_points_per_unit")
        k = control_set.k
        if k == 0:
            return cls(np.zeros((1, 0)))
        chunks = []
        for box in control_set.boxes:
            axes = []
            for lo, hi in zip(box.lower, box.upper):
                if hi == lo:
                    axes.append(np.array([lo]))
                else:
                    count = max(2, int(round(per_unit * (hi - lo))))
                    axis = np.linspace(lo, hi, count)
                    axis[0], axis[-1] = lo, hi
                    axes.append(axis)
            mesh = np.meshgrid(*axes, indexing="ij")
            chunks.append(np.stack([m.ravel() for m in mesh], axis=-1))
        return cls(np.concatenate(chunks, axis=0))

    def __len__(self) -> int:
        return int(self.points.shape[0])

    @property
    def k(self) -> int:
        return int(self.points.shape[1])


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """
    Данные задачи управления (неизменяемые после создания).

    Attributes:
        n, d, k, m: Размерности состояния, броуновского движения,
            регулярного и сингулярного управления
        T: Горизонт
        b, sigma, f, Phi: Снос, диффузия, генератор BSDE, терминальная функция
        G: Матрица n x m при dxi в прямом уравнении
        K: Вектор длины m при dxi в обратном уравнении
        U: Множество регулярных управлений
        name: Идентификатор задачи
        time_homogeneous: b и sigma не зависят от t (разрешает кеширование)
        domain: Прямоугольник по состоянию для проверок и решателя по умолчанию
        params: Числовые параметры встроенной задачи
    """

    n: int
    d: int
    k: int
    m: int
    T: float
    b: DriftFn
    sigma: DiffusionFn
    f: GeneratorFn
    Phi: TerminalFn
    G: np.ndarray
    K: np.ndarray
    U: ControlSet
    name: str = "custom"
    time_homogeneous: bool = False
    domain: Optional[Tuple[Tuple[float, float], ...]] = None
    params: Dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        for name in ("n", "d", "m"):
            validate_positive_int(getattr(self, name), name)
        validate_positive_int(self.k, "k", minimum=0)
        if not float(self.T) > 0:
            raise StructuralError("T", f"горизонт должен быть положительным, получено {self.T}")
        G = np.array(self.G, dtype=float).reshape(self.n, self.m) if np.size(self.G) == self.n * self.m else None
        if G is None:
            raise StructuralError("G", f"ожидается матрица {self.n}x{self.m}, получено {np.shape(self.G)}")
        K = np.array(self.K, dtype=float).ravel()
        if K.shape != (self.m,):
            raise StructuralError("K", f"ожидается вектор длины {self.m}, получено {np.shape(self.K)}")
        if not (np.all(np.isfinite(G)) and np.all(np.isfinite(K))):
            raise StructuralError("G", "G и K должны быть конечными")
        if self.U.k != self.k:
            raise StructuralError("U", f"размерность U равна {self.U.k}, а k = {self.k}")
        for name in ("b", "sigma", "f", "Phi"):
            if not callable(getattr(self, name)):
                raise StructuralError(name, "ожидается вызываемый объект")
        G.setflags(write=False)
        K.setflags(write=False)
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "K", K)
        object.__setattr__(self, "T", float(self.T))
        if self.domain is None:
            object.__setattr__(self, "domain", tuple((-2.0, 2.0) for _ in range(self.n)))
        object.__setattr__(self, "params", dict(self.params))

    def check_signatures(self) -> None:
        """
        Проверка согласованности размерностей на одной тестовой точке.

        Raises:
            StructuralError: С именем функции, вернувшей массив не той формы
        """
        t = 0.0
        x = np.zeros((2, self.n))
        v = np.broadcast_to(ControlGrid.from_set(self.U, 2).points[0], (2, self.k))
        y = np.zeros(2)
        z = np.zeros((2, self.d))
        shapes = {
            "b": (np.shape(self.b(t, x, v)), (2, self.n)),
            "sigma": (np.shape(self.sigma(t, x, v)), (2, self.n, self.d)),
            "f": (np.shape(np.broadcast_to(self.f(t, x, y, z, v), (2,))), (2,)),
            "Phi": (np.shape(np.broadcast_to(self.Phi(x), (2,))), (2,)),
        }
        for name, (got, expected) in shapes.items():
            if got != expected:
                raise StructuralError(name, f"ожидается форма {expected}, получено {got}")


@dataclass(frozen=True)
class AssumptionReport:
    """
    Результат выборочной проверки предположений о коэффициентах: липшицевость, линейный рост, K > 0.

    Это оценка, а не доказательство: константы Липшица получены как
    максимумы разностных отношений по случайной выборке.
    """

    lipschitz_estimates: Dict[str, float]
    growth_estimates: Dict[str, float]
    k_min: float
    passed: Dict[str, bool]
    sample_count: int

    @property
    def all_passed(self) -> bool:
        return all(self.passed.values())

    def as_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {f"lipschitz.{k}": v for k, v in self.lipschitz_estimates.items()}
        data.update({f"growth.{k}": v for k, v in self.growth_estimates.items()})
        data["k_min"] = self.k_min
        data.update({f"passed.{k}": v for k, v in self.passed.items()})
        data["sample_count"] = self.sample_count
        return data


def _sample_controls(spec: ProblemSpec, rng: np.random.Generator, count: int) -> np.ndarray:
    """Случайные точки U: прямоугольник выбирается пропорционально числу, координаты равномерно."""
    if spec.k == 0:
        return np.zeros((count, 0))
    boxes = spec.U.boxes
    which = rng.integers(0, len(boxes), size=count)
    lower = np.array([box.lower for box in boxes])[which]
    upper = np.array([box.upper for box in boxes])[which]
    return lower + (upper - lower) * rng.random((count, spec.k))


def _checked(values: np.ndarray, name: str, points: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values)
    if bad.any():
        row = int(np.argwhere(bad)[0][0])
        raise EvaluationError(name, points[row].tolist())
    return values


def validate_problem(
    spec: ProblemSpec,
    sample_count: int,
    rng_seed: int,
    lipschitz_bound: float = 1e6,
    yz_radius: float = 1.0,
) -> AssumptionReport:
    """
    Выборочная проверка предположений о коэффициентах: липшицевость, линейный рост, K > 0.

    Для sample_count случайных наборов (t, x, x', v, y, y', z, z') оцениваются
    максимальные разностные отношения b, sigma (по x), f (по x, y, z), Phi
    и отношения роста |b|/(1+|x|), |sigma|/(1+|x|).

    Args:
        spec: Задача
        sample_count: Число выборок
        rng_seed: Зерно генератора (результат детерминирован)
        lipschitz_bound: Порог, выше которого липшицевость считается нарушенным
        yz_radius: Радиус выборки для аргументов y, z генератора

    Returns:
        AssumptionReport

    Raises:
        StructuralError: Несогласованные размерности (с именем поля)
        EvaluationError: Нечисловое значение функции (с точкой выборки)
    """
    sample_count = validate_positive_int(sample_count, "sample_count")
    spec.check_signatures()
    rng = np.random.default_rng(rng_seed)

    lo = np.array([box[0] for box in spec.domain])
    hi = np.array([box[1] for box in spec.domain])
    t = rng.uniform(0.0, spec.T, size=sample_count)
    x = lo + (hi - lo) * rng.random((sample_count, spec.n))
    x2 = lo + (hi - lo) * rng.random((sample_count, spec.n))
    v = _sample_controls(spec, rng, sample_count)
    y = rng.uniform(-yz_radius, yz_radius, size=sample_count)
    y2 = rng.uniform(-yz_radius, yz_radius, size=sample_count)
    z = rng.uniform(-yz_radius, yz_radius, size=(sample_count, spec.d))
    z2 = rng.uniform(-yz_radius, yz_radius, size=(sample_count, spec.d))
    points = np.concatenate([t[:, None], x, v], axis=1)

    tt = t[:, None]
    bx = _checked(spec.b(tt, x, v), "b", points)
    bx2 = _checked(spec.b(tt, x2, v), "b", points)
    sx = _checked(spec.sigma(tt[..., None], x, v), "sigma", points)
    sx2 = _checked(spec.sigma(tt[..., None], x2, v), "sigma", points)
    fx = _checked(np.broadcast_to(spec.f(t, x, y, z, v), (sample_count,)), "f", points)
    fx2 = _checked(np.broadcast_to(spec.f(t, x2, y2, z2, v), (sample_count,)), "f", points)
    px = _checked(np.broadcast_to(spec.Phi(x), (sample_count,)), "Phi", points)
    px2 = _checked(np.broadcast_to(spec.Phi(x2), (sample_count,)), "Phi", points)

    dx = np.linalg.norm(x - x2, axis=-1)
    dx = np.where(dx > 0, dx, np.inf)
    dfull = dx + np.abs(y - y2) + np.linalg.norm(z - z2, axis=-1)
    lipschitz = {
        "b": float(np.max(np.linalg.norm(bx - bx2, axis=-1) / dx)),
        "sigma": float(np.max(np.linalg.norm((sx - sx2).reshape(sample_count, -1), axis=-1) / dx)),
        "f": float(np.max(np.abs(fx - fx2) / dfull)),
        "Phi": float(np.max(np.abs(px - px2) / dx)),
    }
    radius = 1.0 + np.linalg.norm(x, axis=-1)
    growth = {
        "b": float(np.max(np.linalg.norm(bx, axis=-1) / radius)),
        "sigma": float(np.max(np.linalg.norm(sx.reshape(sample_count, -1), axis=-1) / radius)),
    }
    k_min = float(np.min(spec.K))
    passed = {
        "lipschitz": all(np.isfinite(val) and val <= lipschitz_bound for val in lipschitz.values()),
        "linear_growth": all(np.isfinite(val) for val in growth.values()),
        "positive_cost": bool(k_min > 0),
    }
    logger.debug("Проверка предположений %s: %s", spec.name, passed)
    return AssumptionReport(
        lipschitz_estimates=lipschitz,
        growth_estimates=growth,
        k_min=k_min,
        passed=passed,
        sample_count=sample_count,
    )
