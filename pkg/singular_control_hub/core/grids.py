"""
Сетки по времени и пространству.

TimeGrid - равномерная сетка [t0, T] из N шагов.
SpaceGrid - равномерная прямоугольная сетка в R^n (n <= 2).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Tuple

import numpy as np

from .exceptions import StructuralError


@dataclass(frozen=True)
class TimeGrid:
    """Равномерная сетка по времени: узлы t0 < t1 < ... < tN = T."""

    t0: float
    T: float
    N: int

    def __post_init__(self) -> None:
        if not float(self.t0) < float(self.T):
            raise StructuralError("T", f"требуется t0 < T, получено t0={self.t0}, T={self.T}")
        if int(self.N) < 1:
            raise StructuralError("N", f"число шагов должно быть >= 1, получено {self.N}")
        object.__setattr__(self, "t0", float(self.t0))
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "N", int(self.N))

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.N

    @cached_property
    def nodes(self) -> np.ndarray:
        nodes = self.t0 + self.dt * np.arange(self.N + 1)
        nodes[-1] = self.T
        return nodes

    def index_of(self, t: float, tol: float = 1e-9) -> int:
        """Индекс узла, совпадающего с t (с допуском)."""
        index = int(round((float(t) - self.t0) / self.dt))
        if index < 0 or index > self.N or abs(self.nodes[index] - t) > tol * max(1.0, abs(t)):
            raise StructuralError("t", f"время {t} не является узлом сетки")
        return index


@dataclass(frozen=True)
class SpaceGrid:
    """
    Равномерная сетка по пространству.

    Attributes:
        lower: Левые границы по каждой координате
        upper: Правые границы
        counts: Число узлов по каждой координате (>= 3)
    """

    lower: Tuple[float, ...]
    upper: Tuple[float, ...]
    counts: Tuple[int, ...]

    def __post_init__(self) -> None:
        lower = tuple(float(v) for v in np.atleast_1d(self.lower))
        upper = tuple(float(v) for v in np.atleast_1d(self.upper))
        counts = tuple(int(v) for v in np.atleast_1d(self.counts))
        if not (len(lower) == len(upper) == len(counts)):
            raise StructuralError("SpaceGrid", "размерности lower/upper/counts не совпадают")
        if not 1 <= len(lower) <= 2:
            raise StructuralError("SpaceGrid", "поддерживаются только n = 1 и n = 2")
        for lo, hi, cnt in zip(lower, upper, counts):
            if not lo < hi:
                raise StructuralError("x_min", f"требуется x_min < x_max, получено [{lo}, {hi}]")
            if cnt < 3:
                raise StructuralError("counts", f"нужно не меньше 3 узлов, получено {cnt}")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        object.__setattr__(self, "counts", counts)

    @classmethod
    def uniform(cls, lower, upper, dx) -> "SpaceGrid":
        """Сетка с шагом dx (число узлов округляется до целого)."""
        lower = np.atleast_1d(np.asarray(lower, dtype=float))
        upper = np.atleast_1d(np.asarray(upper, dtype=float))
        dx = np.broadcast_to(np.asarray(dx, dtype=float), lower.shape)
        if np.any(dx <= 0):
            raise StructuralError("dx", "шаг сетки должен быть положительным")
        counts = np.rint((upper - lower) / dx).astype(int) + 1
        return cls(tuple(lower), tuple(upper), tuple(counts))

    @property
    def ndim(self) -> int:
        return len(self.lower)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.counts

    @cached_property
    def dx(self) -> np.ndarray:
        return np.array([(hi - lo) / (c - 1) for lo, hi, c in zip(self.lower, self.upper, self.counts)])

    @cached_property
    def axes(self) -> Tuple[np.ndarray, ...]:
        return tuple(np.linspace(lo, hi, c) for lo, hi, c in zip(self.lower, self.upper, self.counts))

    @cached_property
    def points(self) -> np.ndarray:
        """Все узлы сетки формы (*shape, n), порядок индексов 'ij'."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack(mesh, axis=-1)

    def interior_mask(self, margin_fraction: float) -> np.ndarray:
        """Маска узлов, отстоящих от границы больше чем на margin_fraction узлов с каждой стороны."""
        mask = np.ones(self.shape, dtype=bool)
        for axis, count in enumerate(self.counts):
            width = max(1, int(np.ceil(margin_fraction * count)))
            index = [slice(None)] * self.ndim
            index[axis] = slice(0, width)
            mask[tuple(index)] = False
            index[axis] = slice(count - width, count)
            mask[tuple(index)] = False
        return mask

    def nearest_index(self, x) -> Tuple[int, ...]:
        """Индекс ближайшего узла к точке x."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        index = np.rint((x - np.asarray(self.lower)) / self.dx).astype(int)
        return tuple(int(np.clip(i, 0, c - 1)) for i, c in zip(index, self.counts))
