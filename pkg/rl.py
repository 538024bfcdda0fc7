"""
Правила обновления actor-critic.

Централизованный актор поднимается по delta * grad ln mu_A, децентрализованный -
по delta * grad phi(A) (или grad ln phi при log_gradient=True), критик
спускается по полуградиенту delta^2 с замороженной целью r + gamma * V(next).
При delta == 0 шаг не выполняется вовсе, иначе накопленные моменты Adam
сдвинули бы параметры.
"""

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from nn import MlpNet, Params, Trainable, scale_grads

# Нижняя граница вероятности действия внутри ln mu
POLICY_FLOOR = 1e-12


@dataclass(frozen=True)
class TdContext:
    reward: float
    gamma: float
    v_next: float
    v_prev: float
    terminal: bool = False

    def __post_init__(self):
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma должно лежать в (0, 1), получено {self.gamma}")

    @property
    def target(self) -> float:
        bootstrap = 0.0 if self.terminal else self.gamma * self.v_next
        return self.reward + bootstrap


def td_error(ctx: TdContext) -> float:
    """delta = r + gamma * V(next) - V(prev); в терминальном состоянии V(next) = 0"""
    return ctx.target - ctx.v_prev


def selection_mask(selected, n: int) -> np.ndarray:
    """Множество индексов или булева маска -> булева маска длины n"""
    arr = np.asarray(selected)
    if arr.dtype == bool:
        if arr.shape != (n,):
            raise ValueError(f"Маска выбора должна иметь длину {n}")
        return arr.copy()
    mask = np.zeros(n, dtype=bool)
    mask[arr.astype(np.int64).reshape(-1)] = True
    return mask


def joint_action_prob(nu: np.ndarray, selected) -> float:
    """phi(A) = prod_{a in A} nu_a * prod_{a not in A} (1 - nu_a)"""
    nu = np.asarray(nu, dtype=np.float64)
    mask = selection_mask(selected, len(nu))
    return float(np.prod(np.where(mask, nu, 1.0 - nu)))


def joint_action_prob_grad(nu: np.ndarray, selected, log_gradient: bool = False) -> np.ndarray:
    """Градиент phi (или ln phi) по выходам nu"""
    nu = np.asarray(nu, dtype=np.float64)
    mask = selection_mask(selected, len(nu))
    dlog = np.where(mask, 1.0 / nu, -1.0 / (1.0 - nu))
    if log_gradient:
        return dlog
    return joint_action_prob(nu, mask) * dlog


def log_policy_gradient(net: MlpNet, sigma_prev: np.ndarray, action: int) -> Params:
    """grad ln mu_action(sigma_prev) по параметрам актора"""
    mu, cache = net.forward(sigma_prev)
    head_grad = np.zeros_like(mu)
    # ниже границы ln mu обрезан константой, градиент нулевой
    if mu[action] >= POLICY_FLOOR:
        head_grad[action] = 1.0 / mu[action]
    return net.backward(cache, head_grad)


def joint_policy_gradient(net: MlpNet, sigma_prev: np.ndarray, selected, log_gradient: bool = False) -> Params:
    """grad phi(A) (или grad ln phi(A)) по параметрам актора"""
    nu, cache = net.forward(sigma_prev)
    return net.backward(cache, joint_action_prob_grad(nu, selected, log_gradient))


def centralized_actor_step(actor: Trainable, sigma_prev: np.ndarray, action: int, delta: float) -> None:
    if not 0 <= action < actor.net.output_dim:
        raise IndexError(f"Действие {action} вне диапазона 0..{actor.net.output_dim - 1}")
    if delta == 0.0:
        return
    grads = log_policy_gradient(actor.net, sigma_prev, action)
    actor.apply(scale_grads(grads, delta), ascend=True)


def decentralized_actor_step(actor: Trainable, sigma_prev: np.ndarray, selected, delta: float,
                             log_gradient: bool = False) -> None:
    if delta == 0.0:
        return
    grads = joint_policy_gradient(actor.net, sigma_prev, selected, log_gradient)
    actor.apply(scale_grads(grads, delta), ascend=True)


def value(net: MlpNet, sigma: np.ndarray) -> float:
    return float(net.predict(sigma)[0])


def critic_gradient(net: MlpNet, sigma_prev: np.ndarray, ctx: TdContext) -> Params:
    """
    Полуградиент delta^2: цель r + gamma * V(next) считается константой,
    поэтому градиент равен -2 * delta * grad V(sigma_prev).
    """
    v_prev, cache = net.forward(sigma_prev)
    delta = td_error(replace(ctx, v_prev=float(v_prev[0])))
    return net.backward(cache, np.array([-2.0 * delta]))


def full_td_gradient(net: MlpNet, sigma_prev: np.ndarray, sigma_next: np.ndarray, reward: float,
                     gamma: float, terminal: bool = False) -> Params:
    """
    Полный градиент delta^2 с дифференцированием и через V(next).
    Используется только для сравнения с полуградиентом.
    """
    v_prev, cache_prev = net.forward(sigma_prev)
    v_next, cache_next = net.forward(sigma_next)
    ctx = TdContext(reward=reward, gamma=gamma, v_next=float(v_next[0]), v_prev=float(v_prev[0]),
                    terminal=terminal)
    delta = td_error(ctx)
    grads = net.backward(cache_prev, np.array([-2.0 * delta]))
    if terminal:
        return grads
    next_grads = net.backward(cache_next, np.array([2.0 * delta * gamma]))
    return [(gw + nw, gb + nb) for (gw, gb), (nw, nb) in zip(grads, next_grads)]


def critic_step(critic: Trainable, sigma_prev: np.ndarray, ctx: TdContext) -> float:
    """Шаг спуска по полуградиенту delta^2; возвращает delta до шага"""
    delta = td_error(replace(ctx, v_prev=value(critic.net, sigma_prev)))
    if delta == 0.0:
        return delta
    critic.apply(critic_gradient(critic.net, sigma_prev, ctx), ascend=False)
    return delta


def sample_categorical(probs: np.ndarray, rng: np.random.Generator) -> int:
    cumulative = np.cumsum(probs)
    u = rng.random() * cumulative[-1]
    return int(min(np.searchsorted(cumulative, u, side="right"), len(probs) - 1))


def all_subsets(n: int) -> Sequence[np.ndarray]:
    """Все 2^n масок выбора (для проверок, n небольшое)"""
    return [np.array([(r >> i) & 1 for i in range(n)], dtype=bool) for r in range(2 ** n)]
