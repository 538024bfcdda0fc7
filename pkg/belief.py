"""
Апостериорные убеждения о состояниях процессов.

Маргинальная рекурсия (приближённая, линейная по числу процессов),
наивная рекурсия (обновляет только наблюдённые процессы) и точное
совместное апостериорное распределение по всем 2^N состояниям.
"""

import logging
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from world import DependenceStructure, Observation

logger = logging.getLogger(__name__)

# Нижняя граница для маргинальных убеждений
EPS = 1e-12

# Совместное распределение строим не дальше этого размера
MAX_JOINT_PROCESSES = 20


class BeliefContradictionError(RuntimeError):
    """Все гипотезы потеряли вероятностную массу (возможно только при p в {0, 1})"""


class JointBeliefTooLargeError(ValueError):
    """Совместное распределение для N > MAX_JOINT_PROCESSES не строим"""


def channel_matrix(p: float) -> np.ndarray:
    """C[y, s'] = P[y | s_a = s']"""
    return np.array([[1.0 - p, p], [p, 1.0 - p]])


@dataclass(frozen=True)
class PairwiseModel:
    """
    Таблица условных вероятностей table[a, i, s, s'] = P[s_a = s' | s_i = s].
    """
    table: np.ndarray

    @property
    def n(self) -> int:
        return self.table.shape[0]


def build_pairwise(dep: DependenceStructure) -> PairwiseModel:
    """Аналитическая таблица попарных условных вероятностей по структуре зависимостей"""
    q, rho = dep.q, dep.rho
    independent = np.array([[q, 1.0 - q], [q, 1.0 - q]])
    dependent = np.array([
        [q + rho * (1.0 - q), (1.0 - rho) * (1.0 - q)],
        [(1.0 - rho) * q, (1.0 - q) + rho * q],
    ])
    table = np.empty((dep.n, dep.n, 2, 2))
    table[:, :] = independent
    for group in dep.groups:
        if len(group) == 2:
            a, b = group
            table[a, b] = dependent
            table[b, a] = dependent
    for i in range(dep.n):
        table[i, i] = np.eye(2)
    return PairwiseModel(table=table)


def likelihood(y_a: int, a: int, i: int, s: int, model: PairwiseModel, p: float) -> float:
    """P[y_a | s_i = s] с маргинализацией по s_a"""
    return float(channel_matrix(p)[y_a] @ model.table[a, i, s])


def _likelihood_products(obs: Observation, model: PairwiseModel, p: float) -> np.ndarray:
    """Произведения правдоподобий по всем наблюдениям, форма (n, 2) по (i, s)"""
    channel = channel_matrix(p)
    products = np.ones((model.n, 2))
    for a, y in zip(obs.selected, obs.values):
        # table[a] имеет форму (n, 2, 2): (i, s, s'), свёртка по s'
        products *= model.table[a] @ channel[int(y)]
    return products


def _normalize_binary(sigma: np.ndarray, lik0: np.ndarray, lik1: np.ndarray) -> np.ndarray:
    numerator = sigma * lik0
    denominator = numerator + (1.0 - sigma) * lik1
    dead = denominator <= 0.0
    if np.any(dead):
        raise BeliefContradictionError(
            f"Наблюдения противоречат обеим гипотезам для процессов {np.flatnonzero(dead).tolist()}"
        )
    return np.clip(numerator / denominator, EPS, 1.0 - EPS)


def initial_sigma(dep: DependenceStructure) -> np.ndarray:
    """sigma(0) = q * 1 (с учётом нижней границы)"""
    return np.clip(np.full(dep.n, dep.q), EPS, 1.0 - EPS)


def update_marginal(sigma: np.ndarray, obs: Observation, model: PairwiseModel, p: float) -> np.ndarray:
    """
    Рекурсивное обновление маргинальных убеждений.

    Каждый sigma_i умножается на произведение P[y_a | s_i = 0] по всем
    наблюдённым a и нормируется. Пустое наблюдение оставляет sigma как есть.
    """
    sigma = np.asarray(sigma, dtype=np.float64)
    if obs.is_empty:
        return sigma.copy()
    products = _likelihood_products(obs, model, p)
    return _normalize_binary(sigma, products[:, 0], products[:, 1])


def update_naive(sigma: np.ndarray, obs: Observation, p: float) -> np.ndarray:
    """Обновляет только наблюдённые процессы, игнорируя зависимость между ними"""
    sigma = np.asarray(sigma, dtype=np.float64).copy()
    if obs.is_empty:
        return sigma
    channel = channel_matrix(p)
    for a, y in zip(obs.selected, obs.values):
        lik = channel[int(y)]
        sigma[a] = _normalize_binary(sigma[a:a + 1], lik[0:1], lik[1:2])[0]
    return sigma


@lru_cache(maxsize=None)
def state_bits(n: int) -> np.ndarray:
    """Матрица (2^n, n): бит i строки r - значение s_i в состоянии r"""
    if n > MAX_JOINT_PROCESSES:
        raise JointBeliefTooLargeError(
            f"Совместное распределение для N={n} процессов не поддерживается (максимум {MAX_JOINT_PROCESSES})"
        )
    r = np.arange(2 ** n)[:, None]
    bits = ((r >> np.arange(n)[None, :]) & 1).astype(np.int8)
    bits.setflags(write=False)
    return bits


@dataclass(frozen=True)
class JointBelief:
    """Точное апостериорное распределение pi по 2^N состояниям"""
    pi: np.ndarray

    @property
    def n(self) -> int:
        return int(np.log2(len(self.pi)))

    @classmethod
    def prior(cls, dep: DependenceStructure) -> "JointBelief":
        """Априорное распределение по структуре зависимостей"""
        bits = state_bits(dep.n)
        pi = np.ones(len(bits))
        pair = dep.pair_joint()
        for group in dep.groups:
            if len(group) == 1:
                pi *= np.where(bits[:, group[0]] == 0, dep.q, 1.0 - dep.q)
            else:
                a, b = group
                pi *= pair[bits[:, a], bits[:, b]]
        return cls(pi=pi / pi.sum())

    @classmethod
    def uniform(cls, n: int) -> "JointBelief":
        size = len(state_bits(n))
        return cls(pi=np.full(size, 1.0 / size))

    @classmethod
    def point_mass(cls, s: np.ndarray) -> "JointBelief":
        n = len(s)
        pi = np.zeros(len(state_bits(n)))
        pi[state_index(s)] = 1.0
        return cls(pi=pi)


def state_index(s: np.ndarray) -> int:
    """Номер строки состояния s в таблице state_bits"""
    return int(np.sum(np.asarray(s, dtype=np.int64) << np.arange(len(s))))


def update_joint(belief: JointBelief, obs: Observation, p: float) -> JointBelief:
    """Точный байесовский шаг для совместного распределения"""
    if obs.is_empty:
        return belief
    bits = state_bits(belief.n)
    pi = belief.pi.copy()
    for a, y in zip(obs.selected, obs.values):
        pi *= np.where(bits[:, a] == y, 1.0 - p, p)
    total = pi.sum()
    if total <= 0.0:
        raise BeliefContradictionError("Наблюдения обнулили всю массу совместного распределения")
    return JointBelief(pi=pi / total)


def marginalize(belief: JointBelief) -> np.ndarray:
    """sigma_i = сумма pi_r по состояниям с s_i = 0"""
    bits = state_bits(belief.n)
    return (1 - bits).T.astype(np.float64) @ belief.pi


def estimate_states(sigma: np.ndarray) -> np.ndarray:
    """Оценка s: процесс нормален, если sigma_i >= 1 - sigma_i (ничья -> нормален)"""
    sigma = np.asarray(sigma)
    return (sigma < 1.0 - sigma).astype(np.int8)


def estimate_joint(belief: JointBelief) -> np.ndarray:
    """Состояние с максимальной апостериорной вероятностью"""
    return state_bits(belief.n)[int(np.argmax(belief.pi))].copy()


def confidence(sigma_i):
    return np.maximum(sigma_i, 1.0 - np.asarray(sigma_i))


def stopping_met(sigma: np.ndarray, upsilon: float) -> bool:
    """Критерий остановки: min_i max(sigma_i, 1 - sigma_i) > upsilon"""
    return bool(np.min(confidence(np.asarray(sigma))) > upsilon)


def joint_stopping_met(belief: JointBelief, upsilon: float) -> bool:
    return bool(np.max(belief.pi) > upsilon)
