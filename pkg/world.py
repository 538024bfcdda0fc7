"""
Модель мира: скрытые бинарные процессы и зашумлённые наблюдения.

Процессы разбиты на независимые группы (одиночки и пары). Внутри пары
состояния коррелированы с коэффициентом rho, каждый процесс нормален
с вероятностью q. Наблюдение процесса - его состояние, инвертированное
с вероятностью p (двоичный симметричный канал).
"""

import logging
from dataclasses import dataclass
from enum import IntEnum
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)


class StreamPurpose(IntEnum):
    """Назначение подпотока случайных чисел (входит в ключ SeedSequence)"""
    INIT = 0
    STATE = 1
    OBSERVATION = 2
    POLICY = 3
    EVAL_STATE = 11
    EVAL_OBSERVATION = 12
    EVAL_POLICY = 13


class RandomStreams:
    """
    Детерминированное дробление одного мастер-сида на подпотоки.

    Подпоток определяется ключом (назначение, эпизод[, сенсор]) и не зависит
    от порядка, в котором их запрашивают, поэтому эпизоды можно считать
    параллельно и получать те же результаты.
    """

    def __init__(self, seed: int):
        if seed < 0:
            raise ValueError(f"seed должен быть неотрицательным, получено {seed}")
        self.seed = int(seed)

    def generator(self, purpose: StreamPurpose, *key: int) -> np.random.Generator:
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(int(purpose), *map(int, key)))
        return np.random.default_rng(seq)

    def episode(self, purpose: StreamPurpose, episode: int) -> np.random.Generator:
        return self.generator(purpose, episode)

    def sensor(self, purpose: StreamPurpose, episode: int, sensor: int) -> np.random.Generator:
        return self.generator(purpose, episode, sensor)


@dataclass(frozen=True)
class DependenceStructure:
    """
    Структура зависимостей между процессами.

    groups - разбиение {0..n-1} на группы размера 1 или 2 (индексы с нуля),
    rho - коэффициент корреляции внутри пар, q - вероятность, что процесс нормален.
    """
    n: int
    groups: Tuple[Tuple[int, ...], ...]
    rho: float
    q: float

    def __post_init__(self):
        # Нормализуем группы к кортежам, чтобы структура оставалась хешируемой
        object.__setattr__(self, "groups", tuple(tuple(int(i) for i in g) for g in self.groups))

        problems = []
        if self.n < 1:
            problems.append(f"n должно быть >= 1, получено {self.n}")
        if not 0.0 <= self.rho <= 1.0:
            problems.append(f"rho должно лежать в [0, 1], получено {self.rho}")
        if not 0.0 <= self.q <= 1.0:
            problems.append(f"q должно лежать в [0, 1], получено {self.q}")
        flat = [i for g in self.groups for i in g]
        if any(len(g) not in (1, 2) for g in self.groups):
            problems.append("группы должны состоять из 1 или 2 процессов")
        if sorted(flat) != list(range(self.n)):
            problems.append(f"группы {self.groups} не образуют разбиение {{0..{self.n - 1}}}")
        if problems:
            raise ValueError("Некорректная структура зависимостей: " + "; ".join(problems))

    @classmethod
    def standard(cls, rho: float = 0.6, q: float = 0.8) -> "DependenceStructure":
        """Пять процессов, группы {1,2}, {3,4}, {5}"""
        return cls(n=5, groups=((0, 1), (2, 3), (4,)), rho=rho, q=q)

    @classmethod
    def paired(cls, n: int, rho: float, q: float = 0.8) -> "DependenceStructure":
        """Соседние пары (0,1), (2,3), ... и одиночка в конце при нечётном n"""
        groups = [tuple(range(i, min(i + 2, n))) for i in range(0, n, 2)]
        return cls(n=n, groups=tuple(groups), rho=rho, q=q)

    @classmethod
    def from_text(cls, text: str, rho: float, q: float) -> "DependenceStructure":
        """
        Разбор групп из строки вида "1-2,3-4,5" (нумерация с единицы).
        """
        groups = []
        for chunk in text.split(","):
            chunk = chunk.strip()
            if not chunk:
                continue
            try:
                groups.append(tuple(int(x) - 1 for x in chunk.split("-")))
            except ValueError as e:
                raise ValueError(f"Не удалось разобрать группу '{chunk}'") from e
        n = sum(len(g) for g in groups)
        return cls(n=n, groups=tuple(groups), rho=rho, q=q)

    def to_text(self) -> str:
        return ",".join("-".join(str(i + 1) for i in g) for g in self.groups)

    def partner(self, i: int) -> Optional[int]:
        """Напарник процесса i по паре или None для одиночки"""
        for g in self.groups:
            if i in g:
                return next((j for j in g if j != i), None)
        raise IndexError(f"Процесс {i} вне диапазона 0..{self.n - 1}")

    def pair_joint(self) -> np.ndarray:
        """
        Совместное распределение пары 2x2: [s_a, s_b].

        Вероятность неравных исходов делится поровну, чтобы обе маргинали
        оставались равными q.
        """
        q, rho = self.q, self.rho
        unequal = (1.0 - rho) * q * (1.0 - q)
        return np.array([
            [q * q + rho * q * (1.0 - q), unequal / 2.0],
            [unequal / 2.0, (1.0 - q) ** 2 + rho * q * (1.0 - q)],
        ])


@dataclass(frozen=True)
class Observation:
    """Наблюдение: выбранные процессы и полученные биты"""
    selected: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        if len(self.selected) != len(self.values):
            raise ValueError("values должны быть заданы ровно для выбранных процессов")

    def __len__(self) -> int:
        return len(self.selected)

    @property
    def is_empty(self) -> bool:
        return len(self.selected) == 0

    @classmethod
    def empty(cls) -> "Observation":
        return cls(selected=np.zeros(0, dtype=np.int64), values=np.zeros(0, dtype=np.int8))

    def restrict(self, allowed: Iterable[int]) -> "Observation":
        """Только те наблюдения, чьи процессы входят в allowed"""
        allowed = set(allowed)
        keep = np.array([int(a) in allowed for a in self.selected], dtype=bool)
        return Observation(selected=self.selected[keep], values=self.values[keep])


def sample_states(dep: DependenceStructure, rng: np.random.Generator, count: int) -> np.ndarray:
    """Векторная выборка count состояний, форма (count, n), 1 = аномалия"""
    states = np.zeros((count, dep.n), dtype=np.int8)
    joint = dep.pair_joint().ravel()  # порядок исходов: 00, 01, 10, 11
    cumulative = np.cumsum(joint)
    for group in dep.groups:
        u = rng.random(count)
        if len(group) == 1:
            states[:, group[0]] = (u >= dep.q).astype(np.int8)
        else:
            outcome = np.minimum(np.searchsorted(cumulative, u, side="right"), 3)
            states[:, group[0]] = outcome >> 1
            states[:, group[1]] = outcome & 1
    return states


def sample_state(dep: DependenceStructure, rng: np.random.Generator) -> np.ndarray:
    """Одно состояние процессов s"""
    return sample_states(dep, rng, 1)[0]


def observe(s: np.ndarray, selected: Sequence[int], p: float, rng: np.random.Generator) -> Observation:
    """
    Наблюдение выбранных процессов через канал с вероятностью инверсии p.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p должно лежать в [0, 1], получено {p}")
    selected = np.asarray(selected, dtype=np.int64).reshape(-1)
    if selected.size == 0:
        return Observation.empty()
    if selected.min() < 0 or selected.max() >= len(s):
        raise IndexError(f"Индексы {selected.tolist()} вне диапазона 0..{len(s) - 1}")
    flips = rng.random(selected.size) < p
    values = (np.asarray(s)[selected] ^ flips).astype(np.int8)
    return Observation(selected=selected, values=values)
