"""
Агенты обнаружения аномалий: обучение и тестирование всех вариантов.

Централизованные варианты (marginal, naive, joint) выбирают один процесс
за шаг по softmax-актору. Децентрализованный вариант обучается централизованно
с общим апостериорным вектором, а исполняется по сенсорам с их собственными
убеждениями и топологией обмена наблюдениями.
"""

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from belief import (
    JointBelief,
    JointBeliefTooLargeError,
    MAX_JOINT_PROCESSES,
    PairwiseModel,
    build_pairwise,
    confidence,
    estimate_joint,
    estimate_states,
    initial_sigma,
    joint_stopping_met,
    marginalize,
    stopping_met,
    update_joint,
    update_marginal,
    update_naive,
)
from nn import Head, MlpNet, Trainable
from rewards import CostParams, RewardKind, central_reward, decentral_reward, joint_reward
from rl import (
    TdContext,
    centralized_actor_step,
    critic_step,
    decentralized_actor_step,
    sample_categorical,
    td_error,
    value,
)
from world import DependenceStructure, Observation, RandomStreams, StreamPurpose, observe, sample_state

logger = logging.getLogger(__name__)

REWARD_WINDOW = 500


class AlgorithmVariant(str, Enum):
    CENTRAL_MARGINAL = "marginal"
    CENTRAL_NAIVE = "naive"
    CENTRAL_JOINT = "joint"
    DECENTRALIZED = "decentralized"

    @property
    def is_centralized(self) -> bool:
        return self != AlgorithmVariant.DECENTRALIZED


# ===== Топология обмена наблюдениями =====

@dataclass(frozen=True)
class Topology:
    """neighbors[i] - сенсоры, чьи наблюдения получает сенсор i (включая сам i)"""
    name: str
    neighbors: Tuple[FrozenSet[int], ...]

    def __post_init__(self):
        n = len(self.neighbors)
        for i, group in enumerate(self.neighbors):
            if i not in group:
                raise ValueError(f"Сенсор {i} должен входить в собственное окружение")
            if any(j < 0 or j >= n for j in group):
                raise ValueError(f"Окружение сенсора {i} содержит индексы вне 0..{n - 1}")

    @property
    def n(self) -> int:
        return len(self.neighbors)

    @classmethod
    def shared(cls, n: int) -> "Topology":
        everyone = frozenset(range(n))
        return cls(name="shared", neighbors=tuple(everyone for _ in range(n)))

    @classmethod
    def local(cls, n: int) -> "Topology":
        return cls(name="local", neighbors=tuple(frozenset({i}) for i in range(n)))

    @classmethod
    def ring(cls, n: int) -> "Topology":
        return cls(name="ring", neighbors=tuple(frozenset({(i - 1) % n, i, (i + 1) % n}) for i in range(n)))

    def receivers(self, i: int) -> FrozenSet[int]:
        """Сенсоры, которым уходит наблюдение сенсора i"""
        return frozenset(j for j, group in enumerate(self.neighbors) if i in group)


# ===== Результаты =====

@dataclass(frozen=True)
class EpisodeResult:
    stopping_time: int
    estimate: np.ndarray
    truth: np.ndarray
    correct: bool
    total_observations: int
    timed_out: bool

    @property
    def obs_per_unit_time(self) -> float:
        return self.total_observations / self.stopping_time


@dataclass(frozen=True)
class EvaluationSummary:
    """Агрегированные метрики тестирования (суммы и счётчики, от порядка не зависят)"""
    episodes: int
    accuracy: float
    mean_stopping_time: float
    mean_obs_per_unit_time: float
    timeouts: int
    results: Tuple[EpisodeResult, ...] = field(repr=False, default=())

    @classmethod
    def from_results(cls, results: Sequence[EpisodeResult]) -> "EvaluationSummary":
        if not results:
            raise ValueError("Нет результатов эпизодов для агрегации")
        completed = [r.stopping_time for r in results if not r.timed_out]
        return cls(
            episodes=len(results),
            accuracy=sum(r.correct for r in results) / len(results),
            mean_stopping_time=float(np.mean(completed)) if completed else float("nan"),
            mean_obs_per_unit_time=float(np.mean([r.obs_per_unit_time for r in results])),
            timeouts=sum(r.timed_out for r in results),
            results=tuple(results),
        )

    def describe(self) -> str:
        return (
            f"точность={self.accuracy:.4f}, K={self.mean_stopping_time:.3f}, "
            f"наблюдений/шаг={self.mean_obs_per_unit_time:.3f}, таймаутов={self.timeouts}/{self.episodes}"
        )


@dataclass
class StepRecord:
    """Запись одного шага для трассировки (передаётся в step_hook)"""
    episode: int
    k: int
    selected: np.ndarray
    sigma_prev: np.ndarray
    sigma_next: np.ndarray
    reward: Optional[float] = None
    delta: Optional[float] = None
    sensor_sigmas: Optional[np.ndarray] = None


StepHook = Callable[[StepRecord], None]


# ===== Конфигурация обучения =====

class TrainConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """Параметры обучения; значения по умолчанию - для централизованного варианта"""
    episodes: int = 20000
    steps_per_episode: int = 30
    gamma: float = 0.9
    actor_lr: float = 5e-4
    critic_lr: float = 5e-3
    reward_kind: RewardKind = RewardKind.LLR
    cost: Optional[CostParams] = None
    seed: int = 0
    hidden_width: int = 64
    hidden_layers: int = 1
    log_gradient: bool = False
    stop_threshold: Optional[float] = None
    progress: bool = False

    def __post_init__(self):
        object.__setattr__(self, "reward_kind", RewardKind(self.reward_kind))
        problems = []
        if self.episodes < 1:
            problems.append(f"episodes: должно быть >= 1, получено {self.episodes}")
        if self.steps_per_episode < 1:
            problems.append(f"steps_per_episode: должно быть >= 1, получено {self.steps_per_episode}")
        if not 0.0 < self.gamma < 1.0:
            problems.append(f"gamma: должно лежать в (0, 1), получено {self.gamma}")
        if self.actor_lr <= 0:
            problems.append(f"actor_lr: должно быть > 0, получено {self.actor_lr}")
        if self.critic_lr <= 0:
            problems.append(f"critic_lr: должно быть > 0, получено {self.critic_lr}")
        if self.seed < 0:
            problems.append(f"seed: должно быть >= 0, получено {self.seed}")
        if self.hidden_width < 1 or self.hidden_layers < 1:
            problems.append("hidden_width и hidden_layers должны быть >= 1")
        if self.stop_threshold is not None and not 0.5 < self.stop_threshold < 1.0:
            problems.append(f"stop_threshold: должно лежать в (0.5, 1), получено {self.stop_threshold}")
        if problems:
            raise TrainConfigError("Некорректная конфигурация обучения:\n - " + "\n - ".join(problems))

    @classmethod
    def centralized(cls, reward_kind: RewardKind = RewardKind.LLR, **overrides) -> "TrainConfig":
        return cls(reward_kind=reward_kind, **overrides)

    @classmethod
    def decentralized(cls, reward_kind: RewardKind = RewardKind.ENTROPY, lambda_cost: float = 5.0,
                      eta: Optional[float] = None, **overrides) -> "TrainConfig":
        reward_kind = RewardKind(reward_kind)
        if eta is None:
            eta = 1.0 if reward_kind == RewardKind.LLR else 0.1
        defaults = dict(
            actor_lr=3e-5 if reward_kind == RewardKind.LLR else 2e-5,
            critic_lr=1e-4,
            hidden_layers=2,
            cost=CostParams(eta=eta, lambda_cost=lambda_cost),
        )
        defaults.update(overrides)
        return cls(reward_kind=reward_kind, **defaults)


@dataclass
class TrainedPolicy:
    variant: AlgorithmVariant
    reward_kind: RewardKind
    actor: Trainable
    critic: Trainable
    episodes_trained: int = 0
    reward_history: List[float] = field(default_factory=list, repr=False)

    def moving_average(self, window: int = REWARD_WINDOW) -> np.ndarray:
        history = np.asarray(self.reward_history, dtype=np.float64)
        if len(history) < window:
            return np.array([history.mean()]) if len(history) else history
        return np.convolve(history, np.ones(window) / window, mode="valid")


# ===== Трекеры убеждений =====

class BeliefTracker:
    """Общий интерфейс для маргинального, наивного и совместного вариантов"""

    def features(self) -> np.ndarray:
        raise NotImplementedError

    def marginals(self) -> np.ndarray:
        raise NotImplementedError

    def snapshot(self):
        raise NotImplementedError

    def update(self, obs: Observation) -> None:
        raise NotImplementedError

    def reward(self, kind: RewardKind, before) -> float:
        return central_reward(kind, before, self.marginals())

    def stop(self, upsilon: float) -> bool:
        return stopping_met(self.marginals(), upsilon)

    def estimate(self) -> np.ndarray:
        return estimate_states(self.marginals())

    def state_size(self) -> int:
        return int(self.features().size)


class MarginalTracker(BeliefTracker):
    """Маргинальная рекурсия с попарными условными вероятностями"""

    def __init__(self, dep: DependenceStructure, p: float, model: Optional[PairwiseModel] = None):
        self.sigma = initial_sigma(dep)
        self.model = model if model is not None else build_pairwise(dep)
        self.p = p

    def features(self) -> np.ndarray:
        return self.sigma

    def marginals(self) -> np.ndarray:
        return self.sigma

    def snapshot(self):
        return self.sigma.copy()

    def update(self, obs: Observation) -> None:
        self.sigma = update_marginal(self.sigma, obs, self.model, self.p)


class NaiveTracker(BeliefTracker):
    """Обновляется только выбранный процесс"""

    def __init__(self, dep: DependenceStructure, p: float):
        self.sigma = initial_sigma(dep)
        self.p = p

    def features(self) -> np.ndarray:
        return self.sigma

    def marginals(self) -> np.ndarray:
        return self.sigma

    def snapshot(self):
        return self.sigma.copy()

    def update(self, obs: Observation) -> None:
        self.sigma = update_naive(self.sigma, obs, self.p)


class JointTracker(BeliefTracker):
    """Точное совместное распределение; вход сетей - сам вектор pi длины 2^N"""

    def __init__(self, dep: DependenceStructure, p: float):
        self.belief = JointBelief.prior(dep)
        self.p = p

    def features(self) -> np.ndarray:
        return self.belief.pi

    def marginals(self) -> np.ndarray:
        return marginalize(self.belief)

    def snapshot(self):
        return self.belief

    def update(self, obs: Observation) -> None:
        self.belief = update_joint(self.belief, obs, self.p)

    def reward(self, kind: RewardKind, before) -> float:
        if kind != RewardKind.ENTROPY:
            raise ValueError("Совместная схема поддерживает только энтропийную награду")
        return joint_reward(before, self.belief)

    def stop(self, upsilon: float) -> bool:
        return joint_stopping_met(self.belief, upsilon)

    def estimate(self) -> np.ndarray:
        return estimate_joint(self.belief)


def make_tracker(variant: AlgorithmVariant, dep: DependenceStructure, p: float,
                 model: Optional[PairwiseModel] = None) -> BeliefTracker:
    if variant == AlgorithmVariant.CENTRAL_NAIVE:
        return NaiveTracker(dep, p)
    if variant == AlgorithmVariant.CENTRAL_JOINT:
        if dep.n > MAX_JOINT_PROCESSES:
            raise JointBeliefTooLargeError(
                f"Совместная схема отклонена: N={dep.n} > {MAX_JOINT_PROCESSES}"
            )
        return JointTracker(dep, p)
    return MarginalTracker(dep, p, model)


def belief_state_size(variant: AlgorithmVariant, dep: DependenceStructure) -> Dict[str, int]:
    """Число элементов в состоянии убеждений и в модели зависимостей"""
    tracker = make_tracker(variant, dep, p=0.2)
    model = tracker.model.table.size if isinstance(tracker, MarginalTracker) else 0
    return {"state": tracker.state_size(), "model": model}


def _feature_dim(variant: AlgorithmVariant, dep: DependenceStructure) -> int:
    return 2 ** dep.n if variant == AlgorithmVariant.CENTRAL_JOINT else dep.n


def _build_networks(cfg: TrainConfig, input_dim: int, output_dim: int, actor_head: Head,
                    rng: np.random.Generator) -> Tuple[Trainable, Trainable]:
    hidden = [cfg.hidden_width] * cfg.hidden_layers
    actor = Trainable.create([input_dim, *hidden, output_dim], actor_head, cfg.actor_lr, rng)
    critic = Trainable.create([input_dim, *hidden, 1], Head.IDENTITY, cfg.critic_lr, rng)
    return actor, critic


def _log_progress(policy: TrainedPolicy, episode: int, total: int) -> None:
    every = max(1, total // 10)
    if (episode + 1) % every == 0 or episode + 1 == total:
        recent = policy.reward_history[-min(REWARD_WINDOW, len(policy.reward_history)):]
        logger.info(
            f"🎓 {policy.variant.value}: эпизод {episode + 1}/{total}, "
            f"средняя награда за эпизод {np.mean(recent):.4f}"
        )


# ===== Централизованное обучение и тестирование =====

def train_centralized(cfg: TrainConfig, variant: AlgorithmVariant, dep: DependenceStructure, p: float,
                      step_hook: Optional[StepHook] = None) -> TrainedPolicy:
    """
    Обучение централизованного актора и критика: эпизоды по T шагов,
    новое состояние s на каждый эпизод, sigma(0) = q * 1.
    """
    variant = AlgorithmVariant(variant)
    if not variant.is_centralized:
        raise TrainConfigError(f"train_centralized не поддерживает вариант {variant.value}")
    if variant == AlgorithmVariant.CENTRAL_JOINT and cfg.reward_kind != RewardKind.ENTROPY:
        raise TrainConfigError("reward_kind: совместная схема обучается только с энтропийной наградой")

    streams = RandomStreams(cfg.seed)
    model = build_pairwise(dep)
    actor, critic = _build_networks(cfg, _feature_dim(variant, dep), dep.n, Head.SOFTMAX,
                                    streams.generator(StreamPurpose.INIT))
    policy = TrainedPolicy(variant=variant, reward_kind=cfg.reward_kind, actor=actor, critic=critic)
    logger.info(f"🚀 Обучение {variant.value}: {cfg.episodes} эпизодов по {cfg.steps_per_episode} шагов, "
                f"rho={dep.rho}, p={p}, награда {cfg.reward_kind.value}")

    episodes = tqdm(range(cfg.episodes), desc=f"train {variant.value}", disable=not cfg.progress)
    for ep in episodes:
        s = sample_state(dep, streams.episode(StreamPurpose.STATE, ep))
        obs_rng = streams.episode(StreamPurpose.OBSERVATION, ep)
        policy_rng = streams.episode(StreamPurpose.POLICY, ep)
        tracker = make_tracker(variant, dep, p, model)
        total_reward = 0.0

        for k in range(1, cfg.steps_per_episode + 1):
            x_prev = tracker.features().copy()
            mu = actor.net.predict(x_prev)
            action = sample_categorical(mu, policy_rng)
            obs = observe(s, [action], p, obs_rng)

            before = tracker.snapshot()
            sigma_prev = tracker.marginals().copy()
            tracker.update(obs)
            reward = tracker.reward(cfg.reward_kind, before)
            x_next = tracker.features()

            terminal = cfg.stop_threshold is not None and tracker.stop(cfg.stop_threshold)
            ctx = TdContext(
                reward=reward,
                gamma=cfg.gamma,
                v_next=0.0 if terminal else value(critic.net, x_next),
                v_prev=value(critic.net, x_prev),
                terminal=terminal,
            )
            delta = td_error(ctx)
            centralized_actor_step(actor, x_prev, action, delta)
            critic_step(critic, x_prev, ctx)
            total_reward += reward

            if step_hook is not None:
                mask = np.zeros(dep.n, dtype=bool)
                mask[action] = True
                step_hook(StepRecord(episode=ep, k=k, selected=mask, sigma_prev=sigma_prev,
                                     sigma_next=tracker.marginals().copy(), reward=reward, delta=delta))
            if terminal:
                break

        policy.reward_history.append(total_reward)
        policy.episodes_trained += 1
        _log_progress(policy, ep, cfg.episodes)

    if not actor.net.is_finite() or not critic.net.is_finite():
        raise RuntimeError("Параметры сетей стали нечисловыми (NaN/Inf) в ходе обучения")
    return policy


def _central_episode(actor: MlpNet, variant: AlgorithmVariant, dep: DependenceStructure,
                     model: PairwiseModel, p: float, upsilon: float, k_max: int, streams: RandomStreams,
                     ep: int, greedy: bool, step_hook: Optional[StepHook]) -> EpisodeResult:
    s = sample_state(dep, streams.episode(StreamPurpose.EVAL_STATE, ep))
    obs_rng = streams.episode(StreamPurpose.EVAL_OBSERVATION, ep)
    policy_rng = streams.episode(StreamPurpose.EVAL_POLICY, ep)
    tracker = make_tracker(variant, dep, p, model)

    stopped_at = None
    for k in range(1, k_max + 1):
        mu = actor.predict(tracker.features())
        action = int(np.argmax(mu)) if greedy else sample_categorical(mu, policy_rng)
        sigma_prev = tracker.marginals().copy()
        tracker.update(observe(s, [action], p, obs_rng))
        if step_hook is not None:
            mask = np.zeros(dep.n, dtype=bool)
            mask[action] = True
            step_hook(StepRecord(episode=ep, k=k, selected=mask, sigma_prev=sigma_prev,
                                 sigma_next=tracker.marginals().copy()))
        if tracker.stop(upsilon):
            stopped_at = k
            break

    timed_out = stopped_at is None
    estimate = tracker.estimate()
    stopping_time = k_max if timed_out else stopped_at
    return EpisodeResult(
        stopping_time=stopping_time,
        estimate=estimate,
        truth=s,
        correct=(not timed_out) and bool(np.array_equal(estimate, s)),
        total_observations=stopping_time,
        timed_out=timed_out,
    )


def _central_chunk(args) -> List[EpisodeResult]:
    actor, variant, dep, p, upsilon, k_max, seed, greedy, indices = args
    streams = RandomStreams(seed)
    model = build_pairwise(dep)
    return [_central_episode(actor, variant, dep, model, p, upsilon, k_max, streams, ep, greedy, None)
            for ep in indices]


def _validate_eval(upsilon: float, episodes: int, k_max: int) -> None:
    if not 0.5 < upsilon < 1.0:
        raise ValueError(f"upsilon должно лежать в (0.5, 1), получено {upsilon}")
    if episodes < 1 or k_max < 1:
        raise ValueError("episodes и k_max должны быть >= 1")


def _run_chunks(worker: Callable, make_args: Callable[[Sequence[int]], tuple], episodes: int,
                workers: int) -> List[EpisodeResult]:
    """Эпизоды делятся на непрерывные куски; результаты склеиваются в исходном порядке"""
    chunks = [list(c) for c in np.array_split(np.arange(episodes), max(1, workers)) if len(c)]
    if workers <= 1 or len(chunks) == 1:
        return worker(make_args(list(range(episodes))))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(worker, [make_args(c) for c in chunks]))
    return [r for part in parts for r in part]


def evaluate_centralized(actor: MlpNet, variant: AlgorithmVariant, dep: DependenceStructure, p: float,
                         upsilon: float, episodes: int, k_max: int = 500, *, seed: int = 0,
                         greedy: bool = False, workers: int = 1,
                         step_hook: Optional[StepHook] = None) -> EvaluationSummary:
    """
    Тестирование: действия выбираются стохастически по актору, эпизод
    останавливается по критерию уверенности или по k_max (таймаут).
    """
    variant = AlgorithmVariant(variant)
    if not variant.is_centralized:
        raise ValueError(f"evaluate_centralized не поддерживает вариант {variant.value}")
    _validate_eval(upsilon, episodes, k_max)
    frozen = actor.copy()

    if step_hook is not None:
        streams = RandomStreams(seed)
        model = build_pairwise(dep)
        results = [_central_episode(frozen, variant, dep, model, p, upsilon, k_max, streams, ep, greedy, step_hook)
                   for ep in range(episodes)]
    else:
        results = _run_chunks(
            _central_chunk,
            lambda idx: (frozen, variant, dep, p, upsilon, k_max, seed, greedy, idx),
            episodes, workers,
        )
    summary = EvaluationSummary.from_results(results)
    logger.info(f"📊 {variant.value}, rho={dep.rho}, upsilon={upsilon}: {summary.describe()}")
    return summary


# ===== Децентрализованное обучение и исполнение =====

def train_decentralized(cfg: TrainConfig, dep: DependenceStructure, p: float,
                        cost: Optional[CostParams] = None,
                        step_hook: Optional[StepHook] = None) -> TrainedPolicy:
    """
    Централизованное обучение общего sigmoid-актора: каждый процесс выбирается
    независимо с вероятностью nu_a, все наблюдения попадают в общий вектор sigma.
    """
    cost = cost if cost is not None else cfg.cost
    if cost is None:
        raise TrainConfigError("cost: для децентрализованного обучения нужны eta и lambda_cost")

    streams = RandomStreams(cfg.seed)
    model = build_pairwise(dep)
    actor, critic = _build_networks(cfg, dep.n, dep.n, Head.SIGMOID, streams.generator(StreamPurpose.INIT))
    policy = TrainedPolicy(variant=AlgorithmVariant.DECENTRALIZED, reward_kind=cfg.reward_kind,
                           actor=actor, critic=critic)
    logger.info(f"🚀 Обучение decentralized: {cfg.episodes} эпизодов, rho={dep.rho}, "
                f"lambda={cost.lambda_cost}, eta={cost.eta}, награда {cfg.reward_kind.value}")

    episodes = tqdm(range(cfg.episodes), desc="train decentralized", disable=not cfg.progress)
    for ep in episodes:
        s = sample_state(dep, streams.episode(StreamPurpose.STATE, ep))
        obs_rng = streams.episode(StreamPurpose.OBSERVATION, ep)
        policy_rng = streams.episode(StreamPurpose.POLICY, ep)
        sigma = initial_sigma(dep)
        total_reward = 0.0

        for k in range(1, cfg.steps_per_episode + 1):
            nu = actor.net.predict(sigma)
            mask = policy_rng.random(dep.n) < nu
            selected = np.flatnonzero(mask)
            obs = observe(s, selected, p, obs_rng)
            sigma_next = update_marginal(sigma, obs, model, p)
            reward = decentral_reward(cfg.reward_kind, sigma, sigma_next, len(selected), cost)

            terminal = cfg.stop_threshold is not None and stopping_met(sigma_next, cfg.stop_threshold)
            ctx = TdContext(
                reward=reward,
                gamma=cfg.gamma,
                v_next=0.0 if terminal else value(critic.net, sigma_next),
                v_prev=value(critic.net, sigma),
                terminal=terminal,
            )
            delta = td_error(ctx)
            decentralized_actor_step(actor, sigma, mask, delta, log_gradient=cfg.log_gradient)
            critic_step(critic, sigma, ctx)
            total_reward += reward

            if step_hook is not None:
                step_hook(StepRecord(episode=ep, k=k, selected=mask, sigma_prev=sigma.copy(),
                                     sigma_next=sigma_next.copy(), reward=reward, delta=delta))
            sigma = sigma_next
            if terminal:
                break

        policy.reward_history.append(total_reward)
        policy.episodes_trained += 1
        _log_progress(policy, ep, cfg.episodes)

    if not actor.net.is_finite() or not critic.net.is_finite():
        raise RuntimeError("Параметры сетей стали нечисловыми (NaN/Inf) в ходе обучения")
    return policy


def _decentral_episode(actor: MlpNet, topology: Topology, dep: DependenceStructure, model: PairwiseModel,
                       p: float, upsilon: float, k_max: int, streams: RandomStreams, ep: int, greedy: bool,
                       joint_stopping: bool, step_hook: Optional[StepHook]) -> EpisodeResult:
    n = dep.n
    s = sample_state(dep, streams.episode(StreamPurpose.EVAL_STATE, ep))
    obs_rngs = [streams.sensor(StreamPurpose.EVAL_OBSERVATION, ep, i) for i in range(n)]
    policy_rngs = [streams.sensor(StreamPurpose.EVAL_POLICY, ep, i) for i in range(n)]
    sigmas = np.tile(initial_sigma(dep), (n, 1))  # строка i - убеждения сенсора i
    joint = JointBelief.prior(dep) if joint_stopping else None
    flags = np.zeros(n, dtype=bool)
    total_observations = 0

    stopped_at = None
    for k in range(1, k_max + 1):
        # Каждый сенсор смотрит только на свой выход общего актора
        nu = np.diag(actor.predict(sigmas))
        if greedy:
            mask = nu >= 0.5
        else:
            mask = np.array([policy_rngs[i].random() < nu[i] for i in range(n)])
        selected = np.flatnonzero(mask)
        values = [observe(s, [i], p, obs_rngs[i]).values[0] for i in selected]
        obs = Observation(selected=selected, values=np.asarray(values, dtype=np.int8))
        total_observations += len(selected)

        sigma_prev = sigmas.copy()
        for i in range(n):
            sigmas[i] = update_marginal(sigmas[i], obs.restrict(topology.neighbors[i]), model, p)
        if joint is not None:
            joint = update_joint(joint, obs, p)

        # Флаги остановки защёлкиваются: однажды поднятый флаг не опускается
        flags |= confidence(np.diag(sigmas)) > upsilon
        if step_hook is not None:
            step_hook(StepRecord(episode=ep, k=k, selected=mask, sigma_prev=np.diag(sigma_prev).copy(),
                                 sigma_next=np.diag(sigmas).copy(), sensor_sigmas=sigmas.copy()))

        done = joint_stopping_met(joint, upsilon) if joint is not None else bool(flags.all())
        if done:
            stopped_at = k
            break

    timed_out = stopped_at is None
    estimate = estimate_joint(joint) if joint is not None else estimate_states(np.diag(sigmas))
    stopping_time = k_max if timed_out else stopped_at
    return EpisodeResult(
        stopping_time=stopping_time,
        estimate=estimate,
        truth=s,
        correct=(not timed_out) and bool(np.array_equal(estimate, s)),
        total_observations=total_observations,
        timed_out=timed_out,
    )


def _decentral_chunk(args) -> List[EpisodeResult]:
    actor, topology, dep, p, upsilon, k_max, seed, greedy, joint_stopping, indices = args
    streams = RandomStreams(seed)
    model = build_pairwise(dep)
    return [_decentral_episode(actor, topology, dep, model, p, upsilon, k_max, streams, ep, greedy,
                               joint_stopping, None)
            for ep in indices]


def evaluate_decentralized(actor: MlpNet, topology: Topology, dep: DependenceStructure, p: float,
                           upsilon: float, episodes: int, k_max: int = 500, *, seed: int = 0,
                           greedy: bool = False, workers: int = 1, joint_stopping: bool = False,
                           step_hook: Optional[StepHook] = None) -> EvaluationSummary:
    """
    Децентрализованное исполнение: сенсор i держит свой sigma^(i), выбирает
    процесс i с вероятностью nu_i(sigma^(i)), получает наблюдения от окружения
    и поднимает флаг остановки при уверенности в своём процессе выше upsilon.
    Эпизод заканчивается, когда подняты все флаги.
    """
    if topology.n != dep.n:
        raise ValueError(f"Топология на {topology.n} сенсоров не подходит к {dep.n} процессам")
    _validate_eval(upsilon, episodes, k_max)
    if joint_stopping and dep.n > MAX_JOINT_PROCESSES:
        raise JointBeliefTooLargeError(f"Совместная остановка отклонена: N={dep.n} > {MAX_JOINT_PROCESSES}")
    frozen = actor.copy()

    if step_hook is not None:
        streams = RandomStreams(seed)
        model = build_pairwise(dep)
        results = [_decentral_episode(frozen, topology, dep, model, p, upsilon, k_max, streams, ep, greedy,
                                      joint_stopping, step_hook)
                   for ep in range(episodes)]
    else:
        results = _run_chunks(
            _decentral_chunk,
            lambda idx: (frozen, topology, dep, p, upsilon, k_max, seed, greedy, joint_stopping, idx),
            episodes, workers,
        )
    summary = EvaluationSummary.from_results(results)
    label = "joint" if joint_stopping else topology.name
    logger.info(f"📊 decentralized/{label}, rho={dep.rho}, upsilon={upsilon}: {summary.describe()}")
    return summary


def run_joint_detection(actor: MlpNet, dep: DependenceStructure, p: float, upsilon: float, episodes: int,
                        k_max: int = 500, *, seed: int = 0, greedy: bool = False, workers: int = 1,
                        step_hook: Optional[StepHook] = None) -> EvaluationSummary:
    """Как shared-исполнение, но остановка и оценка по точному совместному распределению"""
    return evaluate_decentralized(actor, Topology.shared(dep.n), dep, p, upsilon, episodes, k_max,
                                  seed=seed, greedy=greedy, workers=workers, joint_stopping=True,
                                  step_hook=step_hook)
