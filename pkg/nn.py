"""
Минимальный многослойный перцептрон на numpy: ReLU между слоями,
выходная голова softmax / sigmoid / identity, аналитический backprop и Adam.
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import List, Sequence, Tuple

import numpy as np

# Выход sigmoid держим строго внутри (0, 1)
SIGMOID_FLOOR = 1e-12


class Head(str, Enum):
    SOFTMAX = "softmax"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


Params = List[Tuple[np.ndarray, np.ndarray]]


@dataclass
class ForwardCache:
    """Входы слоёв, предактивации и выход - всё, что нужно для backward"""
    inputs: List[np.ndarray]
    preactivations: List[np.ndarray]
    output: np.ndarray


def _apply_head(head: Head, z: np.ndarray) -> np.ndarray:
    if head == Head.SOFTMAX:
        shifted = np.exp(z - np.max(z, axis=-1, keepdims=True))
        return shifted / np.sum(shifted, axis=-1, keepdims=True)
    if head == Head.SIGMOID:
        y = 0.5 * (1.0 + np.tanh(0.5 * z))
        return np.clip(y, SIGMOID_FLOOR, 1.0 - SIGMOID_FLOOR)
    return z


class MlpNet:
    """Полносвязная сеть: layers[l] = (W, b), W имеет форму (out, in)"""

    def __init__(self, layers: Params, head: Head):
        if not layers:
            raise ValueError("Сеть должна содержать хотя бы один слой")
        for (w_prev, _), (w_next, _) in zip(layers, layers[1:]):
            if w_prev.shape[0] != w_next.shape[1]:
                raise ValueError(f"Размерности слоёв не согласованы: {w_prev.shape} -> {w_next.shape}")
        for w, b in layers:
            if b.shape != (w.shape[0],):
                raise ValueError(f"Смещение формы {b.shape} не подходит к весам {w.shape}")
        self.layers = [(np.asarray(w, dtype=np.float64), np.asarray(b, dtype=np.float64)) for w, b in layers]
        self.head = Head(head)

    @classmethod
    def initialize(cls, dims: Sequence[int], head: Head, rng: np.random.Generator) -> "MlpNet":
        """Веса ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))"""
        layers = []
        for fan_in, fan_out in zip(dims, dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            b = rng.uniform(-bound, bound, size=fan_out)
            layers.append((w, b))
        return cls(layers, head)

    @classmethod
    def zeros(cls, dims: Sequence[int], head: Head) -> "MlpNet":
        return cls([(np.zeros((o, i)), np.zeros(o)) for i, o in zip(dims, dims[1:])], head)

    @property
    def dims(self) -> List[int]:
        return [self.layers[0][0].shape[1]] + [w.shape[0] for w, _ in self.layers]

    @property
    def input_dim(self) -> int:
        return self.dims[0]

    @property
    def output_dim(self) -> int:
        return self.dims[-1]

    def num_parameters(self) -> int:
        return sum(w.size + b.size for w, b in self.layers)

    def copy(self) -> "MlpNet":
        return MlpNet([(w.copy(), b.copy()) for w, b in self.layers], self.head)

    def get_flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in self.layers])

    def set_flat(self, flat: np.ndarray) -> None:
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.num_parameters():
            raise ValueError(f"Ожидалось {self.num_parameters()} параметров, получено {flat.size}")
        offset = 0
        for idx, (w, b) in enumerate(self.layers):
            w_new = flat[offset:offset + w.size].reshape(w.shape).copy()
            offset += w.size
            b_new = flat[offset:offset + b.size].copy()
            offset += b.size
            self.layers[idx] = (w_new, b_new)

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(w)) and np.all(np.isfinite(b)) for w, b in self.layers)

    def forward(self, x: np.ndarray) -> Tuple[np.ndarray, ForwardCache]:
        """
        Прямой проход. x может быть вектором или пачкой векторов (последняя ось - входы);
        backward поддерживается только для одного вектора.
        """
        a = np.asarray(x, dtype=np.float64)
        if a.shape[-1] != self.input_dim:
            raise ValueError(f"Размер входа {a.shape[-1]} не совпадает с {self.input_dim}")
        inputs, preacts = [], []
        last = len(self.layers) - 1
        for idx, (w, b) in enumerate(self.layers):
            inputs.append(a)
            z = a @ w.T + b
            preacts.append(z)
            a = z if idx == last else np.maximum(z, 0.0)
        out = _apply_head(self.head, a)
        return out, ForwardCache(inputs=inputs, preactivations=preacts, output=out)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, cache: ForwardCache, output_grad: np.ndarray) -> Params:
        """
        Градиенты скаляра output . output_grad по всем параметрам (с якобианом головы).
        """
        g = np.asarray(output_grad, dtype=np.float64)
        if g.shape != cache.output.shape or g.ndim != 1:
            raise ValueError(f"Градиент выхода формы {g.shape} не подходит к выходу {cache.output.shape}")
        y = cache.output
        if self.head == Head.SOFTMAX:
            dz = y * (g - np.dot(y, g))
        elif self.head == Head.SIGMOID:
            dz = y * (1.0 - y) * g
        else:
            dz = g

        grads: Params = [None] * len(self.layers)
        for idx in range(len(self.layers) - 1, -1, -1):
            w, _ = self.layers[idx]
            grads[idx] = (np.outer(dz, cache.inputs[idx]), dz.copy())
            if idx > 0:
                dz = (w.T @ dz) * (cache.preactivations[idx - 1] > 0.0)
        return grads


@dataclass
class AdamState:
    """Моменты Adam той же формы, что параметры сети"""
    lr: float
    m: Params
    v: Params
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_net(cls, net: MlpNet, lr: float) -> "AdamState":
        if lr <= 0:
            raise ValueError(f"Скорость обучения должна быть > 0, получено {lr}")
        zeros = [(np.zeros_like(w), np.zeros_like(b)) for w, b in net.layers]
        return cls(lr=lr, m=zeros, v=[(z_w.copy(), z_b.copy()) for z_w, z_b in zeros])

    def flat_moments(self) -> Tuple[np.ndarray, np.ndarray]:
        def flatten(params: Params) -> np.ndarray:
            return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in params])
        return flatten(self.m), flatten(self.v)

    def set_flat_moments(self, net: MlpNet, m_flat: np.ndarray, v_flat: np.ndarray) -> None:
        holder = net.copy()
        holder.set_flat(m_flat)
        self.m = [(w.copy(), b.copy()) for w, b in holder.layers]
        holder.set_flat(v_flat)
        self.v = [(w.copy(), b.copy()) for w, b in holder.layers]

    def step(self, net: MlpNet, grads: Params, ascend: bool) -> None:
        """
        Шаг Adam с коррекцией смещения. ascend=True - подъём (градиент политики),
        False - спуск (потеря критика). Сеть и моменты меняются на месте.
        """
        if len(grads) != len(net.layers):
            raise ValueError("Число градиентов не совпадает с числом слоёв")
        self.t += 1
        sign = 1.0 if ascend else -1.0
        correction1 = 1.0 - self.beta1 ** self.t
        correction2 = 1.0 - self.beta2 ** self.t
        for idx, ((w, b), (gw, gb)) in enumerate(zip(net.layers, grads)):
            if gw.shape != w.shape or gb.shape != b.shape:
                raise ValueError(f"Форма градиента {gw.shape} не совпадает с параметрами {w.shape}")
            mw, mb = self.m[idx]
            vw, vb = self.v[idx]
            mw = self.beta1 * mw + (1.0 - self.beta1) * gw
            mb = self.beta1 * mb + (1.0 - self.beta1) * gb
            vw = self.beta2 * vw + (1.0 - self.beta2) * gw * gw
            vb = self.beta2 * vb + (1.0 - self.beta2) * gb * gb
            self.m[idx] = (mw, mb)
            self.v[idx] = (vw, vb)
            w = w + sign * self.lr * (mw / correction1) / (np.sqrt(vw / correction2) + self.eps)
            b = b + sign * self.lr * (mb / correction1) / (np.sqrt(vb / correction2) + self.eps)
            net.layers[idx] = (w, b)


@dataclass
class Trainable:
    """Сеть вместе с её оптимизатором (единственный писатель)"""
    net: MlpNet
    opt: AdamState = field(repr=False)

    @classmethod
    def create(cls, dims: Sequence[int], head: Head, lr: float, rng: np.random.Generator) -> "Trainable":
        net = MlpNet.initialize(dims, head, rng)
        return cls(net=net, opt=AdamState.for_net(net, lr))

    def apply(self, grads: Params, ascend: bool) -> None:
        self.opt.step(self.net, grads, ascend)


def scale_grads(grads: Params, factor: float) -> Params:
    return [(gw * factor, gb * factor) for gw, gb in grads]


def flatten_grads(grads: Params) -> np.ndarray:
    return np.concatenate([np.concatenate([gw.ravel(), gb]) for gw, gb in grads])
