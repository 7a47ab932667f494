import numpy as np
import pytest

from fastbci.autograd import Tensor, set_debug_checks
from fastbci.errors import ShapeError

from fd import assert_grads_match


def test_square_gradient():
    theta = Tensor(3.0, requires_grad=True)
    loss = theta ** 2
    loss.backward()
    assert loss.item() == 9.0
    assert theta.grad == pytest.approx(6.0)


def test_grad_zero_for_unused_parameter():
    used = Tensor(2.0, requires_grad=True)
    unused = Tensor(5.0, requires_grad=True)
    used.zero_grad()
    unused.zero_grad()
    (used * used).backward()
    assert used.grad == pytest.approx(4.0)
    assert unused.grad == pytest.approx(0.0)


def test_repeated_backward_accumulates():
    theta = Tensor(3.0, requires_grad=True)
    loss = theta ** 2
    loss.backward()
    loss.backward()
    assert theta.grad == pytest.approx(12.0)
    theta.zero_grad()
    loss.backward()
    assert theta.grad == pytest.approx(6.0)


def test_backward_rejects_non_scalar():
    t = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ShapeError):
        (t * 2.0).backward()


def test_shared_node_gradient():
    # y = x*x + x -> dy/dx = 2x + 1
    x = Tensor(4.0, requires_grad=True)
    y = x * x + x
    y.backward()
    assert x.grad == pytest.approx(9.0)


def test_broadcast_add_unbroadcasts_grad():
    a = Tensor(np.ones((2, 3)), requires_grad=True)
    b = Tensor(np.ones(3), requires_grad=True)
    (a + b).sum().backward()
    assert a.grad.shape == (2, 3)
    assert b.grad.shape == (3,)
    np.testing.assert_allclose(b.grad, [2.0, 2.0, 2.0])


def test_mean_and_reshape_gradients():
    rng = np.random.default_rng(0)
    x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
    assert_grads_match(lambda: (x.reshape((4, 3)) * x.reshape((4, 3))).mean(), [x])


@pytest.mark.parametrize("seed", range(5))
def test_arithmetic_grads_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    a = Tensor(rng.normal(size=(4,)), requires_grad=True)
    b = Tensor(rng.normal(size=(4,)) + 3.0, requires_grad=True)

    def f():
        return ((a * b - a + 0.5 * b) * (a + 2.0)).sum() + (b ** 3).mean()

    assert_grads_match(f, [a, b])


def test_determinism_same_seed_bitwise():
    def run():
        rng = np.random.default_rng(99)
        x = Tensor(rng.normal(size=(5, 5)), requires_grad=True)
        loss = ((x * x) - x).mean()
        loss.backward()
        return loss.item(), x.grad.copy()

    l1, g1 = run()
    l2, g2 = run()
    assert l1 == l2
    assert np.array_equal(g1, g2)


def test_debug_checks_flag_catches_nonfinite():
    set_debug_checks(True)
    try:
        with pytest.raises(ValueError):
            Tensor([1.0, np.nan])
    finally:
        set_debug_checks(False)
    Tensor([1.0, np.nan])  # silent when disabled
