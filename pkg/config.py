import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields
from typing import Any, Dict, List, Mapping, Optional

from dotenv import dotenv_values, load_dotenv

from agents import AlgorithmVariant, TrainConfig
from belief import MAX_JOINT_PROCESSES
from rewards import CostParams, RewardKind
from world import DependenceStructure

# Базовая директория проекта (там, где лежит этот файл config.py)
BASE_DIR = os.path.dirname(os.path.abspath(__file__))

# Загружаем переменные окружения из .env в корне проекта (независимо от текущей директории)
load_dotenv(os.path.join(BASE_DIR, ".env"))


def _project_path(raw: str) -> str:
    """Относительный путь считается от корня проекта, пустая строка - отключено"""
    if not raw:
        return ""
    return raw if os.path.isabs(raw) else os.path.join(BASE_DIR, raw)


@dataclass
class Config:
    """Конфигурация приложения"""

    # Папки для данных и логов - по умолчанию внутри проекта
    DATA_DIR: str = _project_path(os.getenv("DATA_DIR", "data"))
    LOGS_DIR: str = _project_path(os.getenv("LOGS_DIR", "logs"))

    # Реестр запусков; пустое значение RESULTS_DB_PATH отключает запись
    RESULTS_DB_PATH: str = _project_path(os.getenv("RESULTS_DB_PATH", os.path.join("data", "results.db")))

    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO").upper()
    SENSING_WORKERS: int = int(os.getenv("SENSING_WORKERS", "1"))

    def validate(self) -> bool:
        """Проверка настроек"""
        if self.LOG_LEVEL not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            raise ValueError(f"LOG_LEVEL имеет неизвестное значение: {self.LOG_LEVEL}")
        if self.SENSING_WORKERS < 1:
            raise ValueError(f"SENSING_WORKERS должно быть >= 1, получено {self.SENSING_WORKERS}")
        return True

    def setup_dirs(self):
        """Создание необходимых директорий"""
        os.makedirs(self.DATA_DIR, exist_ok=True)
        os.makedirs(self.LOGS_DIR, exist_ok=True)

        # Создаем папку для реестра, если нужно
        db_dir = os.path.dirname(self.RESULTS_DB_PATH)
        if db_dir and not os.path.exists(db_dir):
            os.makedirs(db_dir, exist_ok=True)


# Создаем экземпляр конфигурации
config = Config()


# ===== Конфигурация эксперимента =====

class ExperimentConfigError(ValueError):
    """Ошибки конфигурации эксперимента, перечисленные списком"""

    def __init__(self, problems: List[str]):
        self.problems = list(problems)
        super().__init__("Некорректная конфигурация эксперимента:\n - " + "\n - ".join(self.problems))


TOPOLOGY_NAMES = ("shared", "local", "joint", "ring")

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}

# Как разбирать текстовое значение каждого поля
_FIELD_KINDS = {
    "variant": "str_list",
    "reward_kind": "str",
    "topology": "str_list",
    "n": "int",
    "groups": "opt_str",
    "q": "float",
    "p": "float",
    "rho": "float_list",
    "train_rho": "opt_float",
    "lambda_cost": "float_list",
    "eta": "opt_float",
    "upsilon": "float_list",
    "episodes": "int",
    "steps_per_episode": "int",
    "gamma": "float",
    "actor_lr": "opt_float",
    "critic_lr": "opt_float",
    "hidden_width": "int",
    "central_hidden_layers": "int",
    "decentral_hidden_layers": "int",
    "log_gradient": "bool",
    "greedy": "bool",
    "train_stop_threshold": "opt_float",
    "eval_episodes": "int",
    "k_max": "int",
    "seed": "int",
    "workers": "int",
    "output": "str",
    "checkpoint_dir": "opt_str",
    "excel": "bool",
    "progress": "bool",
}

REQUIRED_FIELDS = ("variant", "output")
# Поля, не влияющие на результаты эксперимента
RUNTIME_FIELDS = ("workers", "progress", "excel")


def _coerce(kind: str, raw: Any) -> Any:
    if not isinstance(raw, str):
        return raw
    text = raw.strip()
    if kind.startswith("opt_") and text == "":
        return None
    base = kind[4:] if kind.startswith("opt_") else kind
    if base == "str":
        return text
    if base == "int":
        return int(text)
    if base == "float":
        return float(text)
    if base == "bool":
        lowered = text.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError(f"'{text}' не является логическим значением")
    items = [item.strip() for item in text.split(",") if item.strip()]
    if base == "float_list":
        return [float(item) for item in items]
    return items


@dataclass
class ExperimentConfig:
    """Полная конфигурация запуска (по умолчанию N=5, q=0.8, p=0.2, rho=0.6)"""
    variant: List[str]
    output: str
    reward_kind: str = RewardKind.LLR.value
    topology: List[str] = field(default_factory=lambda: ["shared"])
    n: int = 5
    groups: Optional[str] = None
    q: float = 0.8
    p: float = 0.2
    rho: List[float] = field(default_factory=lambda: [0.6])
    train_rho: Optional[float] = None
    lambda_cost: List[float] = field(default_factory=lambda: [5.0])
    eta: Optional[float] = None
    upsilon: List[float] = field(default_factory=lambda: [0.95])
    episodes: int = 20000
    steps_per_episode: int = 30
    gamma: float = 0.9
    actor_lr: Optional[float] = None
    critic_lr: Optional[float] = None
    hidden_width: int = 64
    central_hidden_layers: int = 1
    decentral_hidden_layers: int = 2
    log_gradient: bool = False
    greedy: bool = False
    train_stop_threshold: Optional[float] = None
    eval_episodes: int = 2000
    k_max: int = 500
    seed: int = 0
    workers: int = field(default_factory=lambda: config.SENSING_WORKERS)
    checkpoint_dir: Optional[str] = None
    excel: bool = False
    progress: bool = False

    @classmethod
    def from_mapping(cls, raw: Mapping[str, Any]) -> "ExperimentConfig":
        """Разбор и проверка значений; все найденные ошибки собираются в одно исключение"""
        problems = []
        values: Dict[str, Any] = {}
        for key, value in raw.items():
            name = key.strip().lower().replace("-", "_")
            if name not in _FIELD_KINDS:
                problems.append(f"{key}: неизвестный параметр")
                continue
            if value is None:
                continue
            try:
                values[name] = _coerce(_FIELD_KINDS[name], value)
            except ValueError as e:
                problems.append(f"{name}: не удалось разобрать значение '{value}' ({e})")

        for name in REQUIRED_FIELDS:
            if values.get(name) in (None, "", []):
                problems.append(f"{name}: обязательный параметр не задан")
                values.pop(name, None)
        if problems:
            raise ExperimentConfigError(problems)

        # n по умолчанию выводится из groups
        if values.get("groups") and "n" not in values:
            try:
                values["n"] = DependenceStructure.from_text(values["groups"], rho=0.0, q=0.5).n
            except ValueError:
                pass  # об ошибке в groups сообщит resolve()

        exp = cls(**values)
        exp.resolve()
        return exp

    def resolve(self) -> None:
        """Раскрывает значения по умолчанию и проверяет конфигурацию целиком"""
        problems = []

        for name in self.variant:
            if name not in {v.value for v in AlgorithmVariant}:
                problems.append(f"variant: неизвестный вариант '{name}'")
        if self.reward_kind not in {k.value for k in RewardKind}:
            problems.append(f"reward_kind: должно быть entropy или llr, получено '{self.reward_kind}'")
        for name in self.topology:
            if name not in TOPOLOGY_NAMES:
                problems.append(f"topology: неизвестная топология '{name}'")
        for name in ("topology", "rho", "lambda_cost", "upsilon"):
            if not getattr(self, name):
                problems.append(f"{name}: список не должен быть пустым")

        if self.groups is None and self.n >= 1:
            self.groups = DependenceStructure.paired(self.n, rho=0.0).to_text()
        if self.groups is not None:
            try:
                dep = DependenceStructure.from_text(self.groups, rho=0.0, q=0.5)
                if dep.n != self.n:
                    problems.append(f"groups: описывает {dep.n} процессов, а n = {self.n}")
            except ValueError as e:
                problems.append(f"groups: {e}")

        joint_needed = "joint" in self.variant or ("decentralized" in self.variant and "joint" in self.topology)
        if joint_needed and self.n > MAX_JOINT_PROCESSES:
            problems.append(f"n: совместная схема поддерживает не более {MAX_JOINT_PROCESSES} процессов")
        if "joint" in self.variant and self.reward_kind != RewardKind.ENTROPY.value:
            problems.append("reward_kind: вариант joint обучается только с энтропийной наградой")

        if not 0.0 <= self.q <= 1.0:
            problems.append(f"q: должно лежать в [0, 1], получено {self.q}")
        if not 0.0 <= self.p <= 1.0:
            problems.append(f"p: должно лежать в [0, 1], получено {self.p}")
        for rho in self.rho + ([self.train_rho] if self.train_rho is not None else []):
            if not 0.0 <= rho <= 1.0:
                problems.append(f"rho: значение {rho} вне [0, 1]")
        for lam in self.lambda_cost:
            if lam <= 0:
                problems.append(f"lambda_cost: значение {lam} должно быть > 0")
        for ups in self.upsilon:
            if not 0.5 < ups < 1.0:
                problems.append(f"upsilon: значение {ups} вне (0.5, 1)")

        if self.eta is None:
            self.eta = 1.0 if self.reward_kind == RewardKind.LLR.value else 0.1
        if self.eta <= 0:
            problems.append(f"eta: должно быть > 0, получено {self.eta}")

        for name in ("n", "episodes", "steps_per_episode", "hidden_width", "central_hidden_layers",
                     "decentral_hidden_layers", "eval_episodes", "k_max", "workers"):
            if getattr(self, name) < 1:
                problems.append(f"{name}: должно быть >= 1, получено {getattr(self, name)}")
        if self.seed < 0:
            problems.append(f"seed: должно быть >= 0, получено {self.seed}")
        if not 0.0 < self.gamma < 1.0:
            problems.append(f"gamma: должно лежать в (0, 1), получено {self.gamma}")
        for name in ("actor_lr", "critic_lr"):
            if getattr(self, name) is not None and getattr(self, name) <= 0:
                problems.append(f"{name}: должно быть > 0")
        if self.train_stop_threshold is not None and not 0.5 < self.train_stop_threshold < 1.0:
            problems.append(f"train_stop_threshold: значение {self.train_stop_threshold} вне (0.5, 1)")

        if self.checkpoint_dir is None and self.output:
            self.checkpoint_dir = os.path.join(os.path.dirname(self.output) or ".", "checkpoints")

        if problems:
            raise ExperimentConfigError(problems)

    # ===== Производные объекты =====

    @property
    def variants(self) -> List[AlgorithmVariant]:
        return [AlgorithmVariant(v) for v in self.variant]

    @property
    def reward(self) -> RewardKind:
        return RewardKind(self.reward_kind)

    def dependence(self, rho: float) -> DependenceStructure:
        return DependenceStructure.from_text(self.groups, rho=rho, q=self.q)

    def train_config(self, variant: AlgorithmVariant, lambda_cost: Optional[float] = None) -> TrainConfig:
        common = dict(
            episodes=self.episodes,
            steps_per_episode=self.steps_per_episode,
            gamma=self.gamma,
            seed=self.seed,
            hidden_width=self.hidden_width,
            stop_threshold=self.train_stop_threshold,
            progress=self.progress,
        )
        if self.actor_lr is not None:
            common["actor_lr"] = self.actor_lr
        if self.critic_lr is not None:
            common["critic_lr"] = self.critic_lr
        if variant == AlgorithmVariant.DECENTRALIZED:
            return TrainConfig.decentralized(
                reward_kind=self.reward,
                lambda_cost=lambda_cost if lambda_cost is not None else self.lambda_cost[0],
                eta=self.eta,
                hidden_layers=self.decentral_hidden_layers,
                log_gradient=self.log_gradient,
                **common,
            )
        return TrainConfig.centralized(reward_kind=self.reward, hidden_layers=self.central_hidden_layers, **common)

    def cost(self, lambda_cost: float) -> CostParams:
        return CostParams(eta=self.eta, lambda_cost=lambda_cost)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2, ensure_ascii=False)

    def fingerprint(self) -> str:
        """SHA-256 канонического JSON конфигурации без RUNTIME_FIELDS"""
        payload = {k: v for k, v in self.to_dict().items() if k not in RUNTIME_FIELDS}
        canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def experiment_field_names() -> List[str]:
    return [f.name for f in fields(ExperimentConfig)]


def load_experiment_config(path: Optional[str] = None,
                           overrides: Optional[Mapping[str, Any]] = None) -> ExperimentConfig:
    """
    Файл KEY=value (синтаксис .env) плюс переопределения из командной строки.
    Переопределения имеют приоритет над файлом.
    """
    raw: Dict[str, Any] = {}
    if path:
        if not os.path.exists(path):
            raise ExperimentConfigError([f"config: файл {path} не найден"])
        raw.update({k.lower(): v for k, v in dotenv_values(path).items()})
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key.lower().replace("-", "_")] = value
    return ExperimentConfig.from_mapping(raw)
