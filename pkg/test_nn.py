"""
Тесты перцептрона: прямой проход, аналитический backprop против конечных разностей, Adam
"""

import numpy as np
import pytest

from nn import AdamState, Head, MlpNet, Trainable, flatten_grads

H = 1e-5


def _away_from_kinks(net, rng, dim, margin=1e-3):
    """Вход, для которого ни одна предактивация ReLU не лежит рядом с нулём"""
    while True:
        x = rng.normal(size=dim)
        _, cache = net.forward(x)
        if all(np.min(np.abs(z)) > margin for z in cache.preactivations[:-1]):
            return x


def _numeric_grad(net, x, g):
    flat = net.get_flat()
    grad = np.zeros_like(flat)
    probe = net.copy()
    for k in range(flat.size):
        shifted = flat.copy()
        shifted[k] += H
        probe.set_flat(shifted)
        plus = probe.predict(x) @ g
        shifted[k] -= 2 * H
        probe.set_flat(shifted)
        minus = probe.predict(x) @ g
        grad[k] = (plus - minus) / (2 * H)
    return grad


def _relative_error(a, b):
    return np.linalg.norm(a - b) / max(np.linalg.norm(a) + np.linalg.norm(b), 1e-12)


def test_zero_network_outputs():
    np.testing.assert_allclose(MlpNet.zeros([5, 8, 5], Head.SOFTMAX).predict(np.ones(5)), np.full(5, 0.2))
    np.testing.assert_allclose(MlpNet.zeros([5, 8, 5], Head.SIGMOID).predict(np.ones(5)), np.full(5, 0.5))


def test_identity_network():
    net = MlpNet([(np.eye(3), np.zeros(3))], Head.IDENTITY)
    x = np.array([0.3, -1.0, 2.5])
    np.testing.assert_array_equal(net.predict(x), x)


def test_input_dimension_mismatch():
    net = MlpNet.initialize([5, 4, 2], Head.IDENTITY, np.random.default_rng(0))
    with pytest.raises(ValueError):
        net.forward(np.ones(4))
    with pytest.raises(ValueError):
        MlpNet([(np.ones((4, 5)), np.ones(4)), (np.ones((2, 3)), np.ones(2))], Head.IDENTITY)


def test_output_ranges():
    rng = np.random.default_rng(1)
    soft = MlpNet.initialize([5, 16, 5], Head.SOFTMAX, rng)
    sig = MlpNet.initialize([5, 16, 5], Head.SIGMOID, rng)
    for _ in range(50):
        x = rng.normal(scale=5.0, size=5)
        assert soft.predict(x).sum() == pytest.approx(1.0, abs=1e-12)
        y = sig.predict(x)
        assert np.all(y > 0) and np.all(y < 1)


def test_batched_forward_matches_single():
    rng = np.random.default_rng(2)
    net = MlpNet.initialize([5, 16, 16, 5], Head.SIGMOID, rng)
    batch = rng.random((7, 5))
    np.testing.assert_allclose(net.predict(batch), np.stack([net.predict(x) for x in batch]))


@pytest.mark.parametrize("head", list(Head))
def test_backward_matches_finite_differences(head):
    rng = np.random.default_rng(list(Head).index(head))
    for _ in range(100):
        net = MlpNet.initialize([5, 16, 5], head, rng)
        x = _away_from_kinks(net, rng, 5)
        g = rng.normal(size=5)
        _, cache = net.forward(x)
        analytic = flatten_grads(net.backward(cache, g))
        assert _relative_error(analytic, _numeric_grad(net, x, g)) < 1e-4


def test_zero_output_grad_gives_zero_gradients():
    net = MlpNet.initialize([5, 16, 5], Head.SOFTMAX, np.random.default_rng(3))
    _, cache = net.forward(np.ones(5))
    assert np.all(flatten_grads(net.backward(cache, np.zeros(5))) == 0.0)


def test_dead_relu_unit_gets_no_gradient():
    net = MlpNet.initialize([3, 4, 2], Head.IDENTITY, np.random.default_rng(4))
    w, b = net.layers[0]
    w[0] = 0.0
    b[0] = -1.0
    _, cache = net.forward(np.array([0.5, -0.2, 1.0]))
    grads = net.backward(cache, np.ones(2))
    assert np.all(grads[0][0][0] == 0.0)
    assert grads[0][1][0] == 0.0


def test_backward_shape_mismatch():
    net = MlpNet.initialize([3, 4, 2], Head.IDENTITY, np.random.default_rng(5))
    _, cache = net.forward(np.ones(3))
    with pytest.raises(ValueError):
        net.backward(cache, np.ones(3))


def test_adam_first_step():
    net = MlpNet([(np.zeros((2, 2)), np.zeros(2))], Head.IDENTITY)
    opt = AdamState.for_net(net, lr=0.01)
    grads = [(np.array([[0.5, -2.0], [1e-3, 0.0]]), np.array([3.0, -0.1]))]
    opt.step(net, grads, ascend=True)
    w, b = net.layers[0]
    np.testing.assert_allclose(w, 0.01 * grads[0][0] / (np.abs(grads[0][0]) + 1e-8))
    np.testing.assert_allclose(b, 0.01 * grads[0][1] / (np.abs(grads[0][1]) + 1e-8))


def test_adam_descend_moves_opposite():
    net = MlpNet([(np.zeros((1, 1)), np.zeros(1))], Head.IDENTITY)
    opt = AdamState.for_net(net, lr=0.1)
    opt.step(net, [(np.array([[1.0]]), np.array([1.0]))], ascend=False)
    assert net.layers[0][0][0, 0] == pytest.approx(-0.1)


def test_adam_zero_gradient_keeps_parameters_and_decays_moments():
    net = MlpNet([(np.ones((1, 1)), np.ones(1))], Head.IDENTITY)
    opt = AdamState.for_net(net, lr=0.1)
    opt.step(net, [(np.zeros((1, 1)), np.zeros(1))], ascend=True)
    np.testing.assert_array_equal(net.get_flat(), [1.0, 1.0])

    opt.step(net, [(np.array([[2.0]]), np.array([2.0]))], ascend=True)
    m_before, v_before = opt.flat_moments()
    opt.step(net, [(np.zeros((1, 1)), np.zeros(1))], ascend=True)
    m_after, v_after = opt.flat_moments()
    np.testing.assert_allclose(m_after, 0.9 * m_before)
    np.testing.assert_allclose(v_after, 0.999 * v_before)


def test_adam_two_constant_steps():
    net = MlpNet([(np.zeros((1, 1)), np.zeros(1))], Head.IDENTITY)
    opt = AdamState.for_net(net, lr=0.05)
    g = 0.7
    expected = 0.0
    m = v = 0.0
    for t in (1, 2):
        opt.step(net, [(np.array([[g]]), np.array([g]))], ascend=True)
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        expected += 0.05 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
    assert net.layers[0][0][0, 0] == pytest.approx(expected, rel=1e-12)
    assert opt.t == 2


def test_training_is_deterministic():
    def run():
        rng = np.random.default_rng(6)
        model = Trainable.create([5, 16, 1], Head.IDENTITY, 1e-3, rng)
        for k in range(20):
            x = np.full(5, 0.1 * k)
            _, cache = model.net.forward(x)
            model.apply(model.net.backward(cache, np.ones(1)), ascend=False)
        return model.net.get_flat()

    np.testing.assert_array_equal(run(), run())


def test_flat_parameters_round_trip():
    net = MlpNet.initialize([5, 16, 5], Head.SOFTMAX, np.random.default_rng(7))
    clone = MlpNet.zeros(net.dims, net.head)
    clone.set_flat(net.get_flat())
    assert clone.num_parameters() == 5 * 16 + 16 + 16 * 5 + 5
    np.testing.assert_array_equal(clone.predict(np.ones(5)), net.predict(np.ones(5)))
    with pytest.raises(ValueError):
        clone.set_flat(np.zeros(3))
