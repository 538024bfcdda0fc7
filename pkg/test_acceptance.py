"""
Долгие проверки обучения: тренды по порогу, корреляции, цене наблюдений и топологии.

Запускаются только при SENSING_SLOW_TESTS=1.
"""

import os
from functools import lru_cache

import numpy as np
import pytest

from agents import (
    AlgorithmVariant,
    Topology,
    TrainConfig,
    evaluate_centralized,
    evaluate_decentralized,
    run_joint_detection,
    train_centralized,
    train_decentralized,
)
from rewards import RewardKind
from world import DependenceStructure

pytestmark = pytest.mark.skipif(
    os.getenv("SENSING_SLOW_TESTS") != "1",
    reason="долгие тесты обучения включаются через SENSING_SLOW_TESTS=1",
)

P = 0.2
EVAL_EPISODES = 2000
WORKERS = int(os.getenv("SENSING_WORKERS", "1"))


@lru_cache(maxsize=None)
def central_policy(variant: AlgorithmVariant, rho: float, reward: RewardKind = RewardKind.LLR):
    return train_centralized(TrainConfig.centralized(reward), variant, DependenceStructure.standard(rho=rho), P)


@lru_cache(maxsize=None)
def decentral_policy(rho: float, lambda_cost: float, eta=None):
    cfg = TrainConfig.decentralized(RewardKind.ENTROPY, lambda_cost=lambda_cost, eta=eta)
    return train_decentralized(cfg, DependenceStructure.standard(rho=rho), P)


def _central_eval(variant, rho, upsilon=0.95):
    policy = central_policy(variant, rho)
    return evaluate_centralized(policy.actor.net, variant, DependenceStructure.standard(rho=rho), P, upsilon,
                                EVAL_EPISODES, seed=100, workers=WORKERS)


def _relative_spread(values):
    return (max(values) - min(values)) / min(values)


def test_centralized_training_improves_reward():
    history = central_policy(AlgorithmVariant.CENTRAL_MARGINAL, 0.6).moving_average()
    assert history[-1] > history[0]


def test_threshold_raises_accuracy_and_stopping_time():
    policy = central_policy(AlgorithmVariant.CENTRAL_MARGINAL, 0.6)
    dep = DependenceStructure.standard(rho=0.6)
    summaries = [
        evaluate_centralized(policy.actor.net, AlgorithmVariant.CENTRAL_MARGINAL, dep, P, ups, EVAL_EPISODES,
                             seed=200, workers=WORKERS)
        for ups in (0.8, 0.9, 0.99)
    ]
    accuracy = [s.accuracy for s in summaries]
    stopping = [s.mean_stopping_time for s in summaries]
    assert accuracy[0] < accuracy[1] < accuracy[2]
    assert stopping[0] < stopping[1] < stopping[2]


def test_marginal_exploits_correlation():
    independent = _central_eval(AlgorithmVariant.CENTRAL_MARGINAL, 0.0)
    correlated = _central_eval(AlgorithmVariant.CENTRAL_MARGINAL, 1.0)
    assert correlated.mean_stopping_time <= 0.9 * independent.mean_stopping_time


def test_naive_ignores_correlation():
    stopping = [_central_eval(AlgorithmVariant.CENTRAL_NAIVE, rho).mean_stopping_time for rho in (0.0, 0.5, 1.0)]
    assert _relative_spread(stopping) < 0.15


@pytest.mark.parametrize("rho", [0.0, 1.0])
def test_marginal_accuracy_floor(rho):
    assert _central_eval(AlgorithmVariant.CENTRAL_MARGINAL, rho).accuracy >= 0.80


def test_decentralized_training_improves_reward():
    history = decentral_policy(0.6, 5.0).moving_average()
    assert history[-1] > history[0]


def test_sensing_cost_reduces_observation_rate():
    dep = DependenceStructure.standard(rho=0.6)
    summaries = [
        evaluate_decentralized(decentral_policy(0.6, lam, 1.0).actor.net, Topology.shared(dep.n), dep, P, 0.95,
                               EVAL_EPISODES, seed=300, workers=WORKERS)
        for lam in (1.0, 5.0, 10.0)
    ]
    rates = [s.mean_obs_per_unit_time for s in summaries]
    stopping = [s.mean_stopping_time for s in summaries]
    assert rates[0] > rates[1] > rates[2]
    assert stopping[0] < stopping[1] < stopping[2]


def test_topology_contrast():
    actor = decentral_policy(0.6, 5.0).actor.net

    def stopping_time(topology, rho):
        dep = DependenceStructure.standard(rho=rho)
        return evaluate_decentralized(actor, topology, dep, P, 0.95, EVAL_EPISODES, seed=400,
                                      workers=WORKERS).mean_stopping_time

    assert stopping_time(Topology.shared(5), 1.0) < stopping_time(Topology.shared(5), 0.0)
    local = [stopping_time(Topology.local(5), rho) for rho in (0.0, 0.5, 1.0)]
    assert _relative_spread(local) < 0.15
    assert not np.isnan(local).any()


def test_joint_detection_not_less_accurate_than_shared():
    actor = decentral_policy(0.8, 5.0).actor.net
    dep = DependenceStructure.standard(rho=0.8)
    shared = evaluate_decentralized(actor, Topology.shared(dep.n), dep, P, 0.95, EVAL_EPISODES, seed=500,
                                    workers=WORKERS)
    joint = run_joint_detection(actor, dep, P, 0.95, EVAL_EPISODES, seed=500, workers=WORKERS)
    assert joint.accuracy >= shared.accuracy - 0.05
