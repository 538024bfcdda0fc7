"""
Тесты агентов: трекеры убеждений, циклы обучения и тестирования, топологии
"""

from collections import defaultdict

import numpy as np
import pytest

from agents import (
    AlgorithmVariant,
    EpisodeResult,
    EvaluationSummary,
    JointTracker,
    MarginalTracker,
    NaiveTracker,
    Topology,
    TrainConfig,
    TrainConfigError,
    belief_state_size,
    evaluate_centralized,
    evaluate_decentralized,
    run_joint_detection,
    train_centralized,
    train_decentralized,
)
from belief import JointBeliefTooLargeError, confidence, stopping_met
from nn import Head, MlpNet
from rewards import CostParams, RewardKind
from world import DependenceStructure, RandomStreams, StreamPurpose, observe, sample_state

P = 0.2


def _small_central_config(**overrides):
    params = dict(episodes=30, steps_per_episode=10, hidden_width=16, seed=1)
    params.update(overrides)
    return TrainConfig.centralized(**params)


def _small_decentral_config(**overrides):
    params = dict(episodes=20, steps_per_episode=10, hidden_width=16, seed=2)
    params.update(overrides)
    return TrainConfig.decentralized(**params)


def _random_actor(head, seed=0, n=5):
    return MlpNet.initialize([n, 16, n], head, np.random.default_rng(seed))


def _records_by_episode(records):
    grouped = defaultdict(list)
    for rec in records:
        grouped[rec.episode].append(rec)
    return grouped


# ===== Топологии и конфигурация =====

def test_topology_presets():
    shared, local, ring = Topology.shared(5), Topology.local(5), Topology.ring(5)
    assert all(group == frozenset(range(5)) for group in shared.neighbors)
    assert all(group == frozenset({i}) for i, group in enumerate(local.neighbors))
    assert ring.neighbors[0] == frozenset({4, 0, 1})
    assert ring.receivers(0) == frozenset({4, 0, 1})
    assert local.receivers(3) == frozenset({3})
    with pytest.raises(ValueError):
        Topology(name="broken", neighbors=(frozenset({1}), frozenset({1})))


def test_train_config_defaults_and_validation():
    dec = TrainConfig.decentralized(reward_kind=RewardKind.ENTROPY, lambda_cost=5.0)
    assert dec.actor_lr == 2e-5 and dec.critic_lr == 1e-4
    assert dec.cost == CostParams(eta=0.1, lambda_cost=5.0)
    assert dec.hidden_layers == 2
    llr = TrainConfig.decentralized(reward_kind=RewardKind.LLR, lambda_cost=1.0)
    assert llr.actor_lr == 3e-5 and llr.cost.eta == 1.0
    central = TrainConfig.centralized()
    assert (central.actor_lr, central.critic_lr, central.gamma) == (5e-4, 5e-3, 0.9)

    with pytest.raises(TrainConfigError) as excinfo:
        TrainConfig(episodes=0, gamma=1.5)
    assert "episodes" in str(excinfo.value) and "gamma" in str(excinfo.value)


def test_train_rejects_wrong_variant_and_reward():
    dep = DependenceStructure.standard()
    with pytest.raises(TrainConfigError):
        train_centralized(_small_central_config(), AlgorithmVariant.DECENTRALIZED, dep, P)
    with pytest.raises(TrainConfigError):
        train_centralized(_small_central_config(reward_kind=RewardKind.LLR), AlgorithmVariant.CENTRAL_JOINT, dep, P)


# ===== Трекеры =====

def test_marginal_and_joint_trackers_agree_without_correlation():
    dep = DependenceStructure.standard(rho=0.0)
    streams = RandomStreams(5)
    for ep in range(20):
        rng = streams.episode(StreamPurpose.OBSERVATION, ep)
        s = sample_state(dep, streams.episode(StreamPurpose.STATE, ep))
        marginal, joint = MarginalTracker(dep, P), JointTracker(dep, P)
        for _ in range(15):
            obs = observe(s, [int(rng.integers(dep.n))], P, rng)
            marginal.update(obs)
            joint.update(obs)
            np.testing.assert_allclose(marginal.marginals(), joint.marginals(), atol=1e-10, rtol=0)


def test_joint_tracker_features_are_full_posterior():
    dep = DependenceStructure.standard()
    tracker = JointTracker(dep, P)
    assert tracker.features().shape == (32,)
    with pytest.raises(ValueError):
        tracker.reward(RewardKind.LLR, tracker.snapshot())


def test_naive_tracker_changes_only_observed_entry():
    dep = DependenceStructure.standard(rho=0.9)
    tracker = NaiveTracker(dep, P)
    before = tracker.snapshot()
    tracker.update(observe(np.zeros(5, dtype=np.int8), [2], P, np.random.default_rng(0)))
    changed = np.flatnonzero(tracker.marginals() != before)
    np.testing.assert_array_equal(changed, [2])


# ===== Централизованные варианты =====

def test_train_centralized_smoke_and_determinism():
    dep = DependenceStructure.standard(rho=0.6)
    first = train_centralized(_small_central_config(), AlgorithmVariant.CENTRAL_MARGINAL, dep, P)
    second = train_centralized(_small_central_config(), AlgorithmVariant.CENTRAL_MARGINAL, dep, P)
    assert first.episodes_trained == 30
    assert len(first.reward_history) == 30
    assert first.actor.net.dims == [5, 16, 5]
    assert first.critic.net.dims == [5, 16, 1]
    np.testing.assert_array_equal(first.actor.net.get_flat(), second.actor.net.get_flat())
    np.testing.assert_array_equal(first.critic.net.get_flat(), second.critic.net.get_flat())


def test_train_joint_uses_full_posterior_input():
    dep = DependenceStructure.standard(rho=0.6)
    cfg = _small_central_config(episodes=5, reward_kind=RewardKind.ENTROPY)
    policy = train_centralized(cfg, AlgorithmVariant.CENTRAL_JOINT, dep, P)
    assert policy.actor.net.dims == [32, 16, 5]


def test_naive_training_trace_keeps_unselected_entries():
    dep = DependenceStructure.standard(rho=0.8)
    records = []
    train_centralized(_small_central_config(episodes=10), AlgorithmVariant.CENTRAL_NAIVE, dep, P,
                      step_hook=records.append)
    assert len(records) == 100
    for rec in records:
        untouched = ~rec.selected
        np.testing.assert_array_equal(rec.sigma_next[untouched], rec.sigma_prev[untouched])


def test_training_stop_threshold_ends_episodes():
    dep = DependenceStructure.standard()
    records = []
    train_centralized(_small_central_config(episodes=20, stop_threshold=0.6), AlgorithmVariant.CENTRAL_MARGINAL,
                      dep, P, step_hook=records.append)
    for recs in _records_by_episode(records).values():
        assert not any(stopping_met(rec.sigma_next, 0.6) for rec in recs[:-1])
        assert stopping_met(recs[-1].sigma_next, 0.6) or recs[-1].k == 10


def test_reward_history_sums_step_rewards():
    dep = DependenceStructure.standard(rho=0.6)
    records = []
    policy = train_centralized(_small_central_config(episodes=5, reward_kind=RewardKind.ENTROPY),
                               AlgorithmVariant.CENTRAL_MARGINAL, dep, P, step_hook=records.append)
    for ep, recs in _records_by_episode(records).items():
        assert sum(r.reward for r in recs) == pytest.approx(policy.reward_history[ep], abs=1e-12)


def test_noiseless_evaluation_stops_once_everything_observed():
    dep = DependenceStructure.standard(rho=0.0)
    records = []
    summary = evaluate_centralized(_random_actor(Head.SOFTMAX), AlgorithmVariant.CENTRAL_MARGINAL, dep, 0.0,
                                   upsilon=0.95, episodes=50, step_hook=records.append)
    assert summary.accuracy == 1.0
    assert summary.timeouts == 0
    for result, recs in zip(summary.results, _records_by_episode(records).values()):
        seen = np.zeros(dep.n, dtype=bool)
        for rec in recs:
            seen |= rec.selected
            if seen.all():
                assert rec.k == result.stopping_time
                break
            assert rec.k < result.stopping_time


def test_timeouts_count_as_incorrect():
    dep = DependenceStructure.standard()
    summary = evaluate_centralized(_random_actor(Head.SOFTMAX), AlgorithmVariant.CENTRAL_MARGINAL, dep, P,
                                   upsilon=0.99, episodes=10, k_max=1)
    assert summary.timeouts == 10
    assert summary.accuracy == 0.0
    assert np.isnan(summary.mean_stopping_time)


def test_higher_threshold_takes_longer_and_is_more_accurate():
    dep = DependenceStructure.standard(rho=0.6)
    actor = _random_actor(Head.SOFTMAX, seed=3)
    low = evaluate_centralized(actor, AlgorithmVariant.CENTRAL_MARGINAL, dep, P, 0.8, episodes=300, seed=4)
    high = evaluate_centralized(actor, AlgorithmVariant.CENTRAL_MARGINAL, dep, P, 0.99, episodes=300, seed=4)
    assert high.mean_stopping_time > low.mean_stopping_time
    assert high.accuracy >= low.accuracy
    # Общие сиды: путь до остановки одинаков, поэтому K не убывает поэпизодно
    assert all(h.stopping_time >= l.stopping_time for h, l in zip(high.results, low.results))


def test_greedy_evaluation_is_reproducible():
    dep = DependenceStructure.standard()
    actor = _random_actor(Head.SOFTMAX, seed=5)
    a = evaluate_centralized(actor, AlgorithmVariant.CENTRAL_MARGINAL, dep, P, 0.9, episodes=20, greedy=True)
    b = evaluate_centralized(actor, AlgorithmVariant.CENTRAL_MARGINAL, dep, P, 0.9, episodes=20, greedy=True)
    assert a.mean_stopping_time == b.mean_stopping_time and a.accuracy == b.accuracy


def test_parallel_evaluation_matches_sequential():
    dep = DependenceStructure.standard(rho=0.6)
    actor = _random_actor(Head.SOFTMAX, seed=6)
    seq = evaluate_centralized(actor, AlgorithmVariant.CENTRAL_MARGINAL, dep, P, 0.95, episodes=24, workers=1)
    par = evaluate_centralized(actor, AlgorithmVariant.CENTRAL_MARGINAL, dep, P, 0.95, episodes=24, workers=3)
    assert [r.stopping_time for r in seq.results] == [r.stopping_time for r in par.results]
    assert (seq.accuracy, seq.mean_obs_per_unit_time) == (par.accuracy, par.mean_obs_per_unit_time)


# ===== Децентрализованный вариант =====

def test_train_decentralized_smoke_and_empty_steps():
    dep = DependenceStructure.standard(rho=0.6)
    records = []
    policy = train_decentralized(_small_decentral_config(), dep, P, step_hook=records.append)
    assert policy.variant == AlgorithmVariant.DECENTRALIZED
    assert policy.actor.net.dims == [5, 16, 16, 5]
    assert policy.actor.net.head == Head.SIGMOID
    for rec in records:
        if not rec.selected.any():
            np.testing.assert_array_equal(rec.sigma_next, rec.sigma_prev)
            assert rec.reward == 0.0

    again = train_decentralized(_small_decentral_config(), dep, P)
    np.testing.assert_array_equal(policy.actor.net.get_flat(), again.actor.net.get_flat())


def test_train_decentralized_needs_cost():
    cfg = TrainConfig(episodes=1, hidden_layers=2)
    with pytest.raises(TrainConfigError):
        train_decentralized(cfg, DependenceStructure.standard(), P)


def test_shared_topology_keeps_identical_beliefs():
    dep = DependenceStructure.standard(rho=0.6)
    records = []
    evaluate_decentralized(_random_actor(Head.SIGMOID), Topology.shared(5), dep, P, 0.95, episodes=10,
                           step_hook=records.append)
    for rec in records:
        for row in rec.sensor_sigmas[1:]:
            np.testing.assert_array_equal(row, rec.sensor_sigmas[0])


def test_local_topology_sensor_learns_only_from_itself():
    dep = DependenceStructure.standard(rho=0.6)
    records = []
    evaluate_decentralized(_random_actor(Head.SIGMOID, seed=1), Topology.local(5), dep, P, 0.95, episodes=10,
                           step_hook=records.append)
    for recs in _records_by_episode(records).values():
        previous = np.tile(np.full(5, dep.q), (5, 1))
        for rec in recs:
            for i in range(5):
                if not rec.selected[i]:
                    np.testing.assert_array_equal(rec.sensor_sigmas[i], previous[i])
            previous = rec.sensor_sigmas


def test_local_stop_flags_stay_raised():
    dep = DependenceStructure.standard(rho=0.0)
    upsilon = 0.85
    records = []
    summary = evaluate_decentralized(_random_actor(Head.SIGMOID, seed=4), Topology.local(5), dep, 0.3, upsilon,
                                     episodes=300, step_hook=records.append)
    dropped = 0
    stopped_below = 0
    for result, recs in zip(summary.results, _records_by_episode(records).values()):
        ever_raised = np.zeros(5, dtype=bool)
        all_raised_at = None
        for rec in recs:
            current = confidence(np.diag(rec.sensor_sigmas)) > upsilon
            dropped += int(np.any(ever_raised & ~current))
            ever_raised |= current
            if all_raised_at is None and ever_raised.all():
                all_raised_at = rec.k
                stopped_below += int(not current.all())
        if all_raised_at is None:
            assert result.timed_out
        else:
            assert result.stopping_time == all_raised_at == recs[-1].k
    assert dropped > 0
    assert stopped_below > 0


def test_noiseless_local_detection_is_exact():
    dep = DependenceStructure.standard(rho=0.6)
    summary = evaluate_decentralized(_random_actor(Head.SIGMOID, seed=2), Topology.local(5), dep, 0.0, 0.95,
                                     episodes=30)
    assert summary.accuracy == 1.0
    assert summary.mean_obs_per_unit_time > 0


def test_joint_detection_point_mass_prior_stops_immediately():
    dep = DependenceStructure.standard(rho=0.6, q=1.0)
    summary = run_joint_detection(_random_actor(Head.SIGMOID), dep, P, 0.95, episodes=10)
    assert all(r.stopping_time == 1 for r in summary.results)
    assert summary.accuracy == 1.0


def test_joint_detection_shares_selection_stream_with_shared():
    dep = DependenceStructure.standard(rho=0.8)
    actor = _random_actor(Head.SIGMOID, seed=3)
    shared, joint = [], []
    evaluate_decentralized(actor, Topology.shared(5), dep, P, 0.95, episodes=10, step_hook=shared.append)
    run_joint_detection(actor, dep, P, 0.95, episodes=10, step_hook=joint.append)
    by_shared, by_joint = _records_by_episode(shared), _records_by_episode(joint)
    for ep in by_shared:
        for a, b in zip(by_shared[ep], by_joint[ep]):
            np.testing.assert_array_equal(a.selected, b.selected)


def test_joint_detection_refuses_large_systems():
    dep = DependenceStructure.paired(21, rho=0.5)
    with pytest.raises(JointBeliefTooLargeError):
        run_joint_detection(_random_actor(Head.SIGMOID, n=21), dep, P, 0.95, episodes=1)


# ===== Размеры и агрегаты =====

def test_belief_state_sizes_scale():
    sizes = {n: (belief_state_size(AlgorithmVariant.CENTRAL_MARGINAL, DependenceStructure.paired(n, 0.5)),
                 belief_state_size(AlgorithmVariant.CENTRAL_JOINT, DependenceStructure.paired(n, 0.5)))
             for n in (5, 10, 15)}
    for n, (marginal, joint) in sizes.items():
        assert marginal["state"] == n
        assert marginal["model"] == 4 * n * n
        assert joint["state"] == 2 ** n
    with pytest.raises(JointBeliefTooLargeError):
        belief_state_size(AlgorithmVariant.CENTRAL_JOINT, DependenceStructure.paired(21, 0.5))


def test_evaluation_summary_aggregates():
    truth = np.zeros(2, dtype=np.int8)
    results = [
        EpisodeResult(4, truth, truth, True, 4, False),
        EpisodeResult(6, truth, truth, False, 12, False),
        EpisodeResult(10, truth, truth, False, 5, True),
    ]
    summary = EvaluationSummary.from_results(results)
    assert summary.accuracy == pytest.approx(1 / 3)
    assert summary.mean_stopping_time == 5.0
    assert summary.mean_obs_per_unit_time == pytest.approx((1.0 + 2.0 + 0.5) / 3)
    assert summary.timeouts == 1


def test_moving_average():
    dep = DependenceStructure.standard()
    policy = train_centralized(_small_central_config(episodes=3), AlgorithmVariant.CENTRAL_MARGINAL, dep, P)
    policy.reward_history = [1.0, 2.0, 3.0, 4.0]
    np.testing.assert_allclose(policy.moving_average(window=2), [1.5, 2.5, 3.5])
    np.testing.assert_allclose(policy.moving_average(window=10), [2.5])
