"""Adam optimizer and polynomial learning-rate schedule."""

import numpy as np
import pytest

from xmodal.nncore import Adam, AdamConfig, Dense, Network, Tensor, lr_at


def test_zero_gradient_leaves_params_unchanged():
    p = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    p.grad = np.zeros(2)
    opt = Adam([p], AdamConfig(total_steps=10))
    opt.step()
    assert np.array_equal(p.data, np.array([1.0, 2.0]))


def test_single_step_matches_closed_form():
    # one scalar param, g = 1, fresh moments: update = lr * m_hat / (sqrt(v_hat) + eps)
    # with m_hat = v_hat = 1, i.e. a decrease of lr0 * (1 - eps') with eps' < 1e-3
    lr0 = 0.001
    p = Tensor(np.array([0.5]), requires_grad=True)
    p.grad = np.array([1.0])
    opt = Adam([p], AdamConfig(lr0=lr0, total_steps=100))
    opt.step()
    decrease = 0.5 - p.data[0]
    assert decrease == pytest.approx(lr0, rel=1e-3)
    assert decrease < lr0


def test_linear_schedule_midpoint():
    cfg = AdamConfig(lr0=0.001, total_steps=100, decay_power=1.0, end_lr=0.0)
    assert lr_at(cfg, 50) == pytest.approx(0.0005)
    assert lr_at(cfg, 0) == pytest.approx(0.001)
    assert lr_at(cfg, 100) == pytest.approx(0.0)


@pytest.mark.parametrize("power,end_lr", [(1.0, 0.0), (0.5, 0.0), (2.0, 1e-5)])
def test_schedule_monotone_non_increasing(power, end_lr):
    cfg = AdamConfig(lr0=0.01, total_steps=200, decay_power=power, end_lr=end_lr)
    values = [lr_at(cfg, s) for s in range(0, 201)]
    assert values[0] == pytest.approx(0.01)
    assert all(a >= b - 1e-15 for a, b in zip(values, values[1:]))


def test_adam_converges_on_quadratic():
    p = Tensor(np.array([5.0]), requires_grad=True)
    opt = Adam([p], AdamConfig(lr0=0.1, total_steps=500))
    for _ in range(500):
        p.grad = 2.0 * p.data  # d/dp of p^2
        opt.step()
    assert abs(p.data[0]) < 1e-2


def test_frozen_params_bit_identical_after_steps(rng):
    net = Network([Dense(3, 2, seed=5)])
    net.set_frozen(True)
    snapshot = [p.data.copy() for p in net.parameters()]
    opt = Adam(net.parameters(), AdamConfig(total_steps=50))
    for _ in range(20):
        for p in net.parameters():
            p.grad = rng.normal(size=p.data.shape)  # even if grads are forced in
        opt.step()
    for p, snap in zip(net.parameters(), snapshot):
        assert np.array_equal(p.data, snap)
