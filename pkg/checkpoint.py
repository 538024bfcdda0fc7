"""
Сохранение и загрузка обученных сетей.

Формат файла: магия SNSCKPT\\0, версия (uint16), длина заголовка (uint32),
JSON-заголовок, плоские массивы <f8 (актор: параметры, m, v; критик:
параметры, m, v) и SHA-256 всего предыдущего содержимого.
"""

import hashlib
import json
import logging
import os
import struct
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from nn import AdamState, Head, MlpNet, Trainable

logger = logging.getLogger(__name__)

MAGIC = b"SNSCKPT\0"
FORMAT_VERSION = 1
DIGEST_SIZE = 32
_PREFIX = struct.Struct("<8sHI")
_NETWORKS = ("actor", "critic")


class CheckpointError(ValueError):
    """Ошибка чтения или записи чекпоинта"""


class CheckpointCorruptedError(CheckpointError):
    pass


class CheckpointVersionError(CheckpointError):
    pass


class CheckpointShapeError(CheckpointError):
    pass


@dataclass
class CheckpointMeta:
    variant: str
    reward_kind: str
    fingerprint: str
    episodes: int
    extra: Dict[str, Any] = field(default_factory=dict)


@dataclass
class Checkpoint:
    actor: Trainable
    critic: Trainable
    meta: CheckpointMeta


def _exact_number(value: float) -> str:
    """Короткая запись числа, если она точна, иначе repr"""
    short = format(value, "g")
    return short if float(short) == value else repr(float(value))


def checkpoint_filename(variant: str, reward_kind: str, rho: float, lambda_cost: Optional[float] = None) -> str:
    name = f"{variant}_{reward_kind}_rho{_exact_number(rho)}"
    if lambda_cost is not None:
        name += f"_lambda{_exact_number(lambda_cost)}"
    return name + ".ckpt"


def _network_header(trainable: Trainable) -> Dict[str, Any]:
    opt = trainable.opt
    return {
        "head": trainable.net.head.value,
        "dims": trainable.net.dims,
        "t": opt.t,
        "lr": opt.lr,
        "beta1": opt.beta1,
        "beta2": opt.beta2,
        "eps": opt.eps,
    }


def _network_arrays(trainable: Trainable) -> List[np.ndarray]:
    m, v = trainable.opt.flat_moments()
    return [trainable.net.get_flat(), m, v]


def save_checkpoint(path: str, actor: Trainable, critic: Trainable, meta: CheckpointMeta) -> str:
    """Записывает чекпоинт атомарно (через временный файл и os.replace)"""
    header = {
        "version": FORMAT_VERSION,
        "fingerprint": meta.fingerprint,
        "episodes": meta.episodes,
        "variant": meta.variant,
        "reward_kind": meta.reward_kind,
        "input_dim": actor.net.input_dim,
        "extra": meta.extra,
        "networks": {"actor": _network_header(actor), "critic": _network_header(critic)},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    arrays = _network_arrays(actor) + _network_arrays(critic)

    body = bytearray(_PREFIX.pack(MAGIC, FORMAT_VERSION, len(header_bytes)))
    body += header_bytes
    for arr in arrays:
        body += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    body += hashlib.sha256(body).digest()

    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    tmp_path = path + ".tmp"
    try:
        with open(tmp_path, "wb") as f:
            f.write(bytes(body))
        os.replace(tmp_path, path)
    except OSError as e:
        raise CheckpointError(f"Не удалось записать чекпоинт {path}: {e}") from e
    logger.info(f"💾 Чекпоинт сохранён: {path} ({len(body)} байт)")
    return path


def _read_verified(path: str) -> Tuple[Dict[str, Any], bytes]:
    """Проверка размера и контрольной суммы до какого-либо разбора"""
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise CheckpointError(f"Не удалось прочитать чекпоинт {path}: {e}") from e

    if len(data) < _PREFIX.size + DIGEST_SIZE:
        raise CheckpointCorruptedError(f"Чекпоинт {path} обрезан ({len(data)} байт)")
    content, digest = data[:-DIGEST_SIZE], data[-DIGEST_SIZE:]
    if hashlib.sha256(content).digest() != digest:
        raise CheckpointCorruptedError(f"Контрольная сумма чекпоинта {path} не совпадает")

    magic, version, header_len = _PREFIX.unpack_from(content)
    if magic != MAGIC:
        raise CheckpointCorruptedError(f"Файл {path} не является чекпоинтом")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(f"Версия чекпоинта {version} не поддерживается (ожидалась {FORMAT_VERSION})")
    if _PREFIX.size + header_len > len(content):
        raise CheckpointCorruptedError(f"Заголовок чекпоинта {path} выходит за пределы файла")
    try:
        header = json.loads(content[_PREFIX.size:_PREFIX.size + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointCorruptedError(f"Заголовок чекпоинта {path} не читается") from e
    return header, content[_PREFIX.size + header_len:]


def _param_count(dims: List[int]) -> int:
    return sum(o * i + o for i, o in zip(dims, dims[1:]))


def load_checkpoint(path: str, expected_input_dim: Optional[int] = None,
                    expected_output_dim: Optional[int] = None) -> Checkpoint:
    """
    Загрузка чекпоинта. Ожидаемые размеры входа/выхода сверяются с заголовком
    (например, чекпоинт для N=5 не подходит к конфигурации с N=6).
    """
    header, payload = _read_verified(path)
    try:
        specs = [header["networks"][name] for name in _NETWORKS]
        counts = [_param_count(spec["dims"]) for spec in specs]
    except (KeyError, TypeError) as e:
        raise CheckpointCorruptedError(f"В заголовке чекпоинта {path} нет описания сетей") from e

    expected_bytes = 8 * 3 * sum(counts)
    if len(payload) != expected_bytes:
        raise CheckpointCorruptedError(
            f"Размер данных чекпоинта {len(payload)} байт, ожидалось {expected_bytes}"
        )

    actor_dims = specs[0]["dims"]
    if expected_input_dim is not None and actor_dims[0] != expected_input_dim:
        raise CheckpointShapeError(
            f"Вход сети в чекпоинте {actor_dims[0]}, а конфигурация требует {expected_input_dim}"
        )
    if expected_output_dim is not None and actor_dims[-1] != expected_output_dim:
        raise CheckpointShapeError(
            f"Выход актора в чекпоинте {actor_dims[-1]}, а конфигурация требует {expected_output_dim}"
        )

    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    offset = 0
    trainables = []
    for spec, count in zip(specs, counts):
        parts = []
        for _ in range(3):
            parts.append(flat[offset:offset + count])
            offset += count
        net = MlpNet.zeros(spec["dims"], Head(spec["head"]))
        net.set_flat(parts[0])
        opt = AdamState.for_net(net, spec["lr"])
        opt.set_flat_moments(net, parts[1], parts[2])
        opt.t = int(spec["t"])
        opt.beta1, opt.beta2, opt.eps = spec["beta1"], spec["beta2"], spec["eps"]
        trainables.append(Trainable(net=net, opt=opt))

    meta = CheckpointMeta(
        variant=header["variant"],
        reward_kind=header["reward_kind"],
        fingerprint=header["fingerprint"],
        episodes=int(header["episodes"]),
        extra=header.get("extra", {}),
    )
    logger.info(f"📂 Загружен чекпоинт {path}: {meta.variant}/{meta.reward_kind}, {meta.episodes} эпизодов")
    return Checkpoint(actor=trainables[0], critic=trainables[1], meta=meta)


def inspect_checkpoint(path: str) -> Dict[str, Any]:
    """Заголовок проверенного чекпоинта и число параметров каждой сети"""
    header, payload = _read_verified(path)
    summary = dict(header)
    summary["parameters"] = {
        name: _param_count(header["networks"][name]["dims"]) for name in _NETWORKS
    }
    summary["payload_bytes"] = len(payload)
    return summary
