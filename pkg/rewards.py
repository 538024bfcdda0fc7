"""
Мгновенные награды MDP: уменьшение неопределённости (энтропия или LLR)
и штраф за число наблюдений в децентрализованной постановке.

Логарифм везде натуральный.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from belief import EPS, JointBelief


class RewardKind(str, Enum):
    ENTROPY = "entropy"
    LLR = "llr"


@dataclass(frozen=True)
class CostParams:
    """eta - регуляризатор, lambda_cost - стоимость одного наблюдения"""
    eta: float
    lambda_cost: float

    def __post_init__(self):
        if self.eta <= 0:
            raise ValueError(f"eta должно быть > 0, получено {self.eta}")
        if self.lambda_cost <= 0:
            raise ValueError(f"lambda_cost должно быть > 0, получено {self.lambda_cost}")

    @property
    def per_observation(self) -> float:
        return self.eta * self.lambda_cost


def _clamp(x):
    return np.clip(np.asarray(x, dtype=np.float64), EPS, 1.0 - EPS)


def binary_entropy(x):
    """H(x) = -x ln x - (1-x) ln(1-x)"""
    x = _clamp(x)
    return -x * np.log(x) - (1.0 - x) * np.log(1.0 - x)


def llr_stat(x):
    """L(x) = (2x - 1) ln(x / (1 - x)), неотрицательна и минимальна в 0.5"""
    x = _clamp(x)
    return (2.0 * x - 1.0) * np.log(x / (1.0 - x))


def central_reward(kind: RewardKind, sigma_prev: np.ndarray, sigma_next: np.ndarray) -> float:
    """Суммарное по процессам уменьшение неопределённости за шаг"""
    if len(sigma_prev) != len(sigma_next):
        raise ValueError("sigma_prev и sigma_next должны быть одной длины")
    if kind == RewardKind.ENTROPY:
        return float(np.sum(binary_entropy(sigma_prev) - binary_entropy(sigma_next)))
    return float(np.sum(llr_stat(sigma_next) - llr_stat(sigma_prev)))


def decentral_reward(kind: RewardKind, sigma_prev: np.ndarray, sigma_next: np.ndarray,
                     num_selected: int, cost: CostParams) -> float:
    """Центральная награда минус eta * lambda * |A(k)|"""
    if num_selected < 0:
        raise ValueError(f"num_selected должно быть >= 0, получено {num_selected}")
    return central_reward(kind, sigma_prev, sigma_next) - cost.per_observation * num_selected


def joint_entropy(belief: JointBelief) -> float:
    pi = belief.pi[belief.pi > 0]
    return float(-np.sum(pi * np.log(pi)))


def joint_reward(prev: JointBelief, nxt: JointBelief) -> float:
    """Награда базовой совместной схемы: H(pi(k-1)) - H(pi(k))"""
    return joint_entropy(prev) - joint_entropy(nxt)
