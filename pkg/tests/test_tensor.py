import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from compcaps import tensor as T
from compcaps.errors import ContractError, DimensionError, DomainError, NonFiniteError
from compcaps.tensor import Tensor

from _oracles import check_grads, numerical_grad, rel_err


def test_matmul_identity_and_hand_product():
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(T.matmul(Tensor(np.eye(2)), Tensor(x)).data, x)
    out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
    assert out.data.tolist() == [[3.0], [7.0]]


def test_matmul_dimension_error():
    with pytest.raises(DimensionError):
        T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 5))))


def test_elementwise_values():
    assert T.elementwise("relu", Tensor(-3.0)).item() == 0.0
    assert T.elementwise("sigmoid", Tensor(0.0)).item() == 0.5
    assert T.elementwise("tanh", Tensor(0.0)).item() == 0.0
    # tanh(1) = (e^2 - 1)/(e^2 + 1) from the exponential series
    e2 = sum(2.0 ** k / math.factorial(k) for k in range(40))
    assert T.elementwise("tanh", Tensor(1.0)).item() == pytest.approx((e2 - 1) / (e2 + 1), abs=1e-15)
    assert T.elementwise("tanh", Tensor(1.0)).item() == pytest.approx(0.761594, abs=1e-6)
    assert T.elementwise("add", Tensor([1.0, 2.0]), Tensor(3.0)).data.tolist() == [4.0, 5.0]


def test_log_domain_error():
    with pytest.raises(DomainError):
        T.log(Tensor([1.0, 0.0]))
    with pytest.raises(DomainError):
        T.log(Tensor(-2.0))


def test_broadcast_restricted_to_scalars():
    with pytest.raises(DimensionError):
        Tensor(np.ones(3)) + Tensor(np.ones(2))
    with pytest.raises(DimensionError):
        Tensor(np.ones((2, 3))) * Tensor(np.ones(3))


def test_non_finite_forward_is_rejected_with_op_name():
    with pytest.raises(NonFiniteError, match="exp"):
        T.exp(Tensor([1000.0]))
    with pytest.raises(NonFiniteError):
        Tensor([np.nan])


def test_backward_simple_cases():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    x.sum().backward()
    assert x.grad.tolist() == [1.0, 1.0, 1.0]
    y = Tensor(3.0, requires_grad=True)
    T.square(y).backward()
    assert y.grad == 6.0


def test_backward_needs_scalar():
    x = Tensor([1.0, 2.0], requires_grad=True)
    with pytest.raises(ContractError):
        (x * 2.0).backward()


def test_unreachable_params_get_zero_grad():
    a = Tensor([1.0, 2.0], requires_grad=True)
    b = Tensor([[5.0]], requires_grad=True)
    a.sum().backward(params=[a, b])
    assert np.array_equal(b.grad, np.zeros((1, 1)))


def test_backward_visits_shared_nodes_once():
    x = Tensor(2.0, requires_grad=True)
    y = x * x
    z = y + y  # y reached twice
    z.backward()
    assert x.grad == pytest.approx(8.0)


def test_backward_linearity():
    rng = np.random.default_rng(0)
    w0 = rng.normal(size=(3, 4))
    xs = rng.normal(size=(5, 3))

    def loss1(w):
        return T.tanh(T.matmul(Tensor(xs), w)).sum()

    def loss2(w):
        return T.square(T.matmul(Tensor(xs), w)).mean()

    w = Tensor(w0, requires_grad=True)
    (loss1(w) + loss2(w)).backward()
    combined = w.grad.copy()
    w = Tensor(w0, requires_grad=True)
    loss1(w).backward()
    loss2(w).backward()
    np.testing.assert_allclose(w.grad, combined, rtol=1e-13, atol=1e-15)


def test_forward_is_pure():
    rng = np.random.default_rng(3)
    a, b = rng.normal(size=(4, 4)), rng.normal(size=(4, 4))
    r1 = T.sigmoid(T.matmul(Tensor(a), Tensor(b))).data
    r2 = T.sigmoid(T.matmul(Tensor(a), Tensor(b))).data
    assert r1.tobytes() == r2.tobytes()


UNARY = ["tanh", "sigmoid", "relu", "exp", "square"]


@pytest.mark.parametrize("seed", range(100))
def test_elementwise_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(rng.integers(1, 5, size=rng.integers(1, 3)))
    x = rng.normal(size=shape)
    x[np.abs(x) < 1e-3] = 0.5  # keep relu away from its kink
    y = rng.normal(size=shape)
    pos = rng.uniform(0.5, 2.0, size=shape)
    worst = 0.0
    for op in UNARY:
        worst = max(worst, check_grads(lambda t: T.elementwise(op, t).sum(), [x]))
    worst = max(worst, check_grads(lambda t: T.log(t).sum(), [pos]))
    worst = max(worst, check_grads(lambda t: T.sqrt(t).sum(), [pos]))
    worst = max(worst, check_grads(lambda a, b: (T.mul(a, b) + T.add(a, b)).sum(), [x, y]))
    worst = max(worst, check_grads(lambda a, b: T.div(a, b).sum(), [x, pos]))
    assert worst <= 1e-6


@pytest.mark.parametrize("seed", range(100))
def test_three_layer_composite_gradient(seed):
    rng = np.random.default_rng(1000 + seed)
    x = rng.normal(size=(3, 4))
    w1, w2, w3 = rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), rng.normal(size=(3, 2))

    def build(w1, w2, w3):
        h = T.tanh(T.matmul(Tensor(x), w1))
        h = T.sigmoid(T.matmul(h, w2))
        return T.square(T.matmul(h, w3)).sum()

    assert check_grads(build, [w1, w2, w3]) <= 1e-6


@pytest.mark.parametrize("seed", range(20))
def test_structural_op_gradients(seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(4, 5))
    c = rng.normal(size=(3,))
    wgt = rng.normal(size=(2, 3, 4))
    ops = [
        lambda t: (T.softmax(t, axis=1) * Tensor(wgt)).sum(),
        lambda t: (T.log_softmax(t, axis=2) * Tensor(wgt)).sum(),
        lambda t: (T.transpose(t, (2, 0, 1)).reshape(4, 6) * Tensor(wgt.reshape(4, 6))).sum(),
        lambda t: T.square(t[:, 1:, ::2]).sum(),
        lambda t: T.square(T.concat([t, t * 2.0], axis=1)).sum(),
        lambda t: T.norm(t, axis=-1).sum(),
        lambda t: T.square(T.tsum(t, axis=1)).sum(),
        lambda t: T.square(T.mean(t, axis=(0, 2))).sum(),
    ]
    for op in ops:
        assert check_grads(op, [a]) <= 1e-6
    assert check_grads(lambda a, b: T.square(T.einsum("ijk,kl->ijl", a, b)).sum(), [a, b]) <= 1e-6
    assert check_grads(lambda c, a: (T.broadcast_to(c, (2, 3)) * a[:, :, 0]).sum().square(),
                       [c, a]) <= 1e-6


@pytest.mark.parametrize("stride", [1, 2])
def test_conv2d_gradient(stride, rng):
    x = rng.normal(size=(2, 2, 7, 8))
    w = rng.normal(size=(3, 2, 3, 3))
    assert check_grads(lambda x, w: T.square(T.conv2d(x, w, stride)).sum(), [x, w]) <= 1e-6


def test_conv2d_matches_direct_loop(rng):
    x = rng.normal(size=(1, 2, 6, 7))
    w = rng.normal(size=(3, 2, 3, 2))
    out = T.conv2d(Tensor(x), Tensor(w), stride=2).data
    ref = np.zeros((1, 3, 2, 3))
    for o in range(3):
        for i in range(2):
            for j in range(3):
                ref[0, o, i, j] = np.sum(x[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 2] * w[o])
    np.testing.assert_allclose(out, ref, rtol=1e-12)


def test_cross_entropy_gradient(rng):
    logits = rng.normal(size=(4, 3))
    assert check_grads(lambda z: T.cross_entropy(z, [0, 2, 1, 1]), [logits]) <= 1e-6


# -- Adam ----------------------------------------------------------------------


def test_adam_zero_gradient_is_fixed_point():
    p = [np.array([1.0, -2.0])]
    new, _ = T.adaptive_moment_step(p, [np.zeros(2)], T.AdamState())
    assert np.array_equal(new[0], p[0])


def test_adam_single_step_hand_evaluation():
    # m = 0.1, v = 0.001; bias corrected both equal 1 -> step lr / (1 + eps)
    new, state = T.adaptive_moment_step([np.array([0.0])], [np.array([1.0])], T.AdamState(), lr=0.001)
    assert new[0][0] == pytest.approx(-0.001 / (1 + 1e-8), rel=1e-12)
    assert state.step == 1


def test_adam_deterministic():
    rng = np.random.default_rng(5)
    p, g = [rng.normal(size=3)], [rng.normal(size=3)]
    a, sa = T.adaptive_moment_step(p, g, T.AdamState())
    b, sb = T.adaptive_moment_step(p, g, T.AdamState())
    assert a[0].tobytes() == b[0].tobytes()
    assert sa.m[0].tobytes() == sb.m[0].tobytes()


def test_adam_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        T.adaptive_moment_step([np.zeros(2)], [np.array([np.inf, 0.0])], T.AdamState())
    with pytest.raises(DimensionError):
        T.adaptive_moment_step([np.zeros(2)], [np.zeros(3)], T.AdamState())


def test_adam_minimises_quadratic():
    w = Tensor([3.0, -4.0], requires_grad=True)
    opt = T.Adam([w], lr=0.1)
    for _ in range(300):
        opt.zero_grad()
        T.square(w).sum().backward()
        opt.step()
    assert np.all(np.abs(w.data) < 1e-2)


def test_glorot_bounds(rng):
    w = T.glorot_uniform(rng, (40, 60), 40, 60)
    assert np.abs(w.data).max() <= np.sqrt(6 / 100)
    assert w.requires_grad


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=1, max_size=6))
def test_softmax_is_distribution(z):
    p = T.softmax(Tensor(z)).data
    assert abs(p.sum() - 1) < 1e-12 and np.all(p >= 0)


def test_numerical_grad_oracle_self_check():
    x = np.array([1.0, 2.0])
    g = numerical_grad(lambda a: float(np.sum(a ** 3)), [x])[0]
    assert rel_err(g, 3 * x ** 2) < 1e-9


@pytest.mark.parametrize("seed", range(100))
def test_bmm_gradient(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(3, 2, 4)), rng.normal(size=(3, 4, 5))
    w = rng.normal(size=(3, 2, 5))
    assert check_grads(lambda x, y: (T.bmm(x, y) * T.Tensor(w)).sum(), [a, b]) <= 1e-6


def test_bmm_matches_matmul_and_rejects_mismatch(rng):
    a, b = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 4, 2))
    np.testing.assert_allclose(T.bmm(T.Tensor(a), T.Tensor(b)).data, a @ b, rtol=1e-14)
    with pytest.raises(DimensionError):
        T.bmm(T.Tensor(a), T.Tensor(b[:1]))
