"""
Встроенные задачи и их реестр.

Каждая задача регистрируется под своим идентификатором и извлекается
через get_problem(); неизвестный идентификатор даёт ProblemNotFoundError.

Встроенные задачи:
- section4  - пример с разрывным множеством управлений и явным решением
              u(t,x) = e^{t-T} x (x > 0), e^{T-t} x (x <= 0);
- wang      - модель Вана (n = d = m = 1, k = 0), нулевая терминальная функция;
- linear_fk - задача Фейнмана-Каца с постоянным генератором,
              u(t,x) = x + c (T - t).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Dict, Optional

import numpy as np

from .exceptions import ConfigurationError, ProblemNotFoundError, StructuralError
from .model import ControlSet, ProblemSpec

FeedbackControl = Callable[[float, np.ndarray], np.ndarray]
ExactValue = Callable[[float, np.ndarray], np.ndarray]


def closed_form_section4(t, x, T: float = 1.0):
    """
    Явное решение примера section4.

    Args:
        t: Время (0 <= t <= T), скаляр или массив
        x: Состояние, скаляр или массив
        T: Горизонт

    Returns:
        e^{t-T} x при x > 0 и e^{T-t} x при x <= 0
    """
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    value = np.where(x > 0, np.exp(t - T) * x, np.exp(T - t) * x)
    return float(value) if value.ndim == 0 else value


def builtin_section4(G: float = 1.0, K: float = 1.0, T: float = 1.0) -> ProblemSpec:
    """
    Пример с U = [-1, 0] U [1, 2]: b = x + xv, sigma = xv, f = -z v, Phi(x) = x.

    Обратное уравнение берётся со знаком "-K dxi", как в общей постановке.
    """

    def b(t, x, v):
        return x * (1.0 + v)

    def sigma(t, x, v):
        return (x * v)[..., None]

    def f(t, x, y, z, v):
        return -(z[..., 0] * v[..., 0]) + 0.0 * y

    def Phi(x):
        return x[..., 0]

    return ProblemSpec(
        n=1, d=1, k=1, m=1, T=T,
        b=b, sigma=sigma, f=f, Phi=Phi,
        G=np.array([[G]]), K=np.array([K]),
        U=ControlSet.intervals((-1.0, 0.0), (1.0, 2.0)),
        name="section4",
        time_homogeneous=True,
        domain=((-2.0, 2.0),),
        params={"G": float(G), "K": float(K), "T": float(T)},
    )


def builtin_wang(
    a: float = 0.0,
    b0: float = 0.0,
    sigma0: float = 1.0,
    mu: float = 0.0,
    T: float = 1.0,
) -> ProblemSpec:
    """
    Модель Вана: dX = (aX + b0) ds + sigma0 dW + dxi, генератор mu z, Phi = 0.

    Raises:
        StructuralError: Если sigma0 <= 0
    """
    if not sigma0 > 0:
        raise StructuralError("sigma0", f"волатильность должна быть положительной, получено {sigma0}")

    def b(t, x, v):
        return a * x + b0

    def sigma(t, x, v):
        return np.full(np.shape(x)[:-1] + (1, 1), float(sigma0))

    def f(t, x, y, z, v):
        return mu * z[..., 0] + 0.0 * y

    def Phi(x):
        return np.zeros(np.shape(x)[:-1])

    return ProblemSpec(
        n=1, d=1, k=0, m=1, T=T,
        b=b, sigma=sigma, f=f, Phi=Phi,
        G=np.array([[1.0]]), K=np.array([1.0]),
        U=ControlSet.singleton(),
        name="wang",
        time_homogeneous=True,
        domain=((-2.0, 2.0),),
        params={"a": float(a), "b0": float(b0), "sigma0": float(sigma0), "mu": float(mu), "T": float(T)},
    )


def builtin_linear_fk(c: float = 1.0, G0: float = 1.0, K0: float = 1.0, T: float = 1.0) -> ProblemSpec:
    """
    Задача Фейнмана-Каца: b = 0, sigma = 1, f = c, Phi(x) = x.

    Raises:
        StructuralError: Если K0 <= 0
    """
    if not K0 > 0:
        raise StructuralError("K0", f"стоимость сингулярного управления должна быть положительной, получено {K0}")

    def b(t, x, v):
        return np.zeros_like(x, dtype=float)

    def sigma(t, x, v):
        return np.ones(np.shape(x)[:-1] + (1, 1))

    def f(t, x, y, z, v):
        return c + 0.0 * y

    def Phi(x):
        return x[..., 0]

    return ProblemSpec(
        n=1, d=1, k=0, m=1, T=T,
        b=b, sigma=sigma, f=f, Phi=Phi,
        G=np.array([[G0]]), K=np.array([K0]),
        U=ControlSet.singleton(),
        name="linear_fk",
        time_homogeneous=True,
        domain=((-2.0, 2.0),),
        params={"c": float(c), "G0": float(G0), "K0": float(K0), "T": float(T)},
    )


@dataclass(frozen=True)
class ProblemEntry:
    """
    Запись реестра встроенных задач.

    Attributes:
        name: Идентификатор задачи
        factory: Функция, строящая ProblemSpec по числовым параметрам
        defaults: Значения параметров по умолчанию
        description: Краткое описание
        candidate: Кандидат в оптимальное регулярное управление (по параметрам)
        exact: Точное значение u(t, x) (по параметрам), если оно известно
    """

    name: str
    factory: Callable[..., ProblemSpec]
    defaults: Dict[str, float]
    description: str
    candidate: Optional[Callable[[Dict[str, float]], FeedbackControl]] = None
    exact: Optional[Callable[[Dict[str, float]], Optional[ExactValue]]] = None

    def resolve_params(self, overrides: Optional[Dict[str, float]] = None) -> Dict[str, float]:
        """
        Объединяет параметры по умолчанию с переданными значениями.

        Raises:
            ConfigurationError: Если передан неизвестный параметр
        """
        params = dict(self.defaults)
        for key, value in (overrides or {}).items():
            if key not in params:
                allowed = ", ".join(sorted(params))
                raise ConfigurationError(f"problem.{key}", f"неизвестный параметр задачи {self.name} ({allowed})")
            params[key] = float(value)
        return params

    def build(self, overrides: Optional[Dict[str, float]] = None) -> ProblemSpec:
        return self.factory(**self.resolve_params(overrides))

    def candidate_policy(self, overrides: Optional[Dict[str, float]] = None) -> Optional[FeedbackControl]:
        if self.candidate is None:
            return None
        return self.candidate(self.resolve_params(overrides))

    def exact_value(self, overrides: Optional[Dict[str, float]] = None) -> Optional[ExactValue]:
        if self.exact is None:
            return None
        return self.exact(self.resolve_params(overrides))


_registered_problems: Dict[str, ProblemEntry] = {}


def register_problem(entry: ProblemEntry) -> None:
    """Регистрация задачи в глобальном реестре (ключ - имя в нижнем регистре)."""
    _registered_problems[entry.name.lower()] = entry


def get_problem(name: str) -> ProblemEntry:
    """
    Получение задачи из реестра.

    Raises:
        ProblemNotFoundError: Если задача не зарегистрирована
    """
    key = str(name).strip().lower()
    if key not in _registered_problems:
        raise ProblemNotFoundError(name)
    return _registered_problems[key]


def list_problems() -> list[str]:
    return sorted(_registered_problems)


def _section4_candidate(params: Dict[str, float]) -> FeedbackControl:
    def policy(t, x):
        x = np.asarray(x, dtype=float)
        return np.where(x[..., :1] > 0, -1.0, 0.0)

    return policy


def _section4_exact(params: Dict[str, float]) -> Optional[ExactValue]:
    # при G < 0 сдвиг влево может оказаться выгодным, формула неверна
    if params["G"] < 0:
        return None
    T = params["T"]
    return lambda t, x: closed_form_section4(t, np.asarray(x, dtype=float)[..., 0], T)


def _empty_candidate(params: Dict[str, float]) -> FeedbackControl:
    return lambda t, x: np.zeros(np.shape(x)[:-1] + (0,))


def _wang_exact(params: Dict[str, float]) -> ExactValue:
    return lambda t, x: np.zeros(np.shape(x)[:-1])


def _linear_fk_exact(params: Dict[str, float]) -> Optional[ExactValue]:
    if params["G0"] + params["K0"] < 0:
        return None
    c, T = params["c"], params["T"]
    return lambda t, x: np.asarray(x, dtype=float)[..., 0] + c * (T - np.asarray(t, dtype=float))


register_problem(
    ProblemEntry(
        name="section4",
        factory=builtin_section4,
        defaults={"G": 1.0, "K": 1.0, "T": 1.0},
        description="b = x + xv, sigma = xv, f = -zv, Phi = x, U = [-1,0] U [1,2]",
        candidate=_section4_candidate,
        exact=_section4_exact,
    )
)
register_problem(
    ProblemEntry(
        name="wang",
        factory=builtin_wang,
        defaults={"a": 0.0, "b0": 0.0, "sigma0": 1.0, "mu": 0.0, "T": 1.0},
        description="b = ax + b0, sigma = sigma0, f = mu z, Phi = 0",
        candidate=_empty_candidate,
        exact=_wang_exact,
    )
)
register_problem(
    ProblemEntry(
        name="linear_fk",
        factory=builtin_linear_fk,
        defaults={"c": 1.0, "G0": 1.0, "K0": 1.0, "T": 1.0},
        description="b = 0, sigma = 1, f = c, Phi = x",
        candidate=_empty_candidate,
        exact=_linear_fk_exact,
    )
)

