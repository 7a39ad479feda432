import numpy as np
import pytest

from compcaps import dclstm, tensor as T
from compcaps.dclstm import DcLstm, DcLstmConfig, LstmLayerParams
from compcaps.errors import ContractError, DimensionError, ParameterError
from compcaps.tensor import Tensor

from _oracles import check_grads, softmax_ref


def test_lstm_step_zero_fixed_point():
    p = LstmLayerParams.zeros(3, 4)
    h, c = dclstm.lstm_step(p, Tensor(np.ones((2, 3))), T.zeros((2, 4)), T.zeros((2, 4)))
    assert np.all(h.data == 0) and np.all(c.data == 0)


def test_lstm_step_matches_scalar_reference(rng):
    p = LstmLayerParams.init(rng, 2, 3)
    x, h0, c0 = rng.normal(size=(1, 2)), rng.normal(size=(1, 3)), rng.normal(size=(1, 3))
    h, c = dclstm.lstm_step(p, Tensor(x), Tensor(h0), Tensor(c0))
    z = x @ p.w_x.data + h0 @ p.w_h.data + p.b.data
    sig = lambda a: 1 / (1 + np.exp(-a))
    i, f, o, g = sig(z[:, :3]), sig(z[:, 3:6]), sig(z[:, 6:9]), np.tanh(z[:, 9:])
    c_ref = f * c0 + i * g
    np.testing.assert_allclose(c.data, c_ref, rtol=1e-12)
    np.testing.assert_allclose(h.data, o * np.tanh(c_ref), rtol=1e-12)


def test_forget_bias_initialised_to_one(rng):
    p = LstmLayerParams.init(rng, 1, 5)
    assert np.all(p.b.data[5:10] == 1) and np.all(p.b.data[:5] == 0) and np.all(p.b.data[10:] == 0)


def test_lstm_step_shape_errors(rng):
    p = LstmLayerParams.init(rng, 2, 3)
    with pytest.raises(DimensionError):
        dclstm.lstm_step(p, Tensor(np.ones((1, 4))), T.zeros((1, 3)), T.zeros((1, 3)))
    with pytest.raises(DimensionError):
        dclstm.lstm_step(p, Tensor(np.ones((1, 2))), T.zeros((1, 2)), T.zeros((1, 3)))


def test_hidden_state_bounded(rng):
    p = LstmLayerParams.init(rng, 2, 4)
    p.w_x.data *= 20
    h, c = T.zeros((3, 4)), T.zeros((3, 4))
    for _ in range(20):
        h, c = dclstm.lstm_step(p, Tensor(rng.normal(size=(3, 2)) * 10), h, c)
        assert np.all(np.abs(h.data) < 1)


@pytest.mark.parametrize("seed", range(5))
def test_five_step_gradient(seed):
    rng = np.random.default_rng(seed)
    p0 = LstmLayerParams.init(rng, 2, 3)
    xs = rng.normal(size=(5, 2, 2))

    def build(wx, wh, b):
        p = LstmLayerParams(wx, wh, b)
        h, c = T.zeros((2, 3)), T.zeros((2, 3))
        for t in range(5):
            h, c = dclstm.lstm_step(p, Tensor(xs[t]), h, c)
        return T.square(h).sum() + c.sum()

    assert check_grads(build, [p0.w_x.data, p0.w_h.data, p0.b.data]) <= 1e-6


def test_forward_channel_cases(rng):
    l1, l2 = LstmLayerParams.init(rng, 1, 4), LstmLayerParams.init(rng, 4, 4)
    one = dclstm.forward_channel(l1, l2, np.ones((1, 1, 1)))
    h1, c1 = dclstm.lstm_step(l1, Tensor(np.ones((1, 1))), T.zeros((1, 4)), T.zeros((1, 4)))
    h2, _ = dclstm.lstm_step(l2, h1, T.zeros((1, 4)), T.zeros((1, 4)))
    np.testing.assert_array_equal(one.data, h2.data)
    ramp = np.linspace(-1, 1, 7)[None, :, None]
    a = dclstm.forward_channel(l1, l2, ramp).data
    b = dclstm.forward_channel(l1, l2, ramp[:, ::-1]).data
    assert not np.allclose(a, b)
    z1, z2 = LstmLayerParams.zeros(1, 4), LstmLayerParams.zeros(4, 4)
    assert np.all(dclstm.forward_channel(z1, z2, ramp).data == 0)
    with pytest.raises(ContractError):
        dclstm.forward_channel(l1, l2, np.zeros((1, 0, 1)))


def test_fuse_and_classify():
    h = Tensor(np.zeros(2))
    p = dclstm.fuse_and_classify(h, h, Tensor(np.zeros((4, 3)))).data
    np.testing.assert_allclose(p, [1 / 3] * 3, atol=1e-15)
    # logits (1, 2) through an identity-like head
    w = np.array([[1.0, 0.0], [0.0, 1.0], [0.0, 0.0], [0.0, 0.0]])
    p = dclstm.fuse_and_classify(Tensor([1.0, 2.0]), Tensor([0.0, 0.0]), Tensor(w)).data
    np.testing.assert_allclose(p, softmax_ref([1.0, 2.0]), rtol=1e-12)
    np.testing.assert_allclose(p, [0.26894, 0.73106], atol=1e-5)


def test_softmax_shift_invariance(rng):
    z = rng.normal(size=5)
    a = T.softmax(Tensor(z)).data
    b = T.softmax(Tensor(z + 17.3)).data
    np.testing.assert_allclose(a, b, atol=1e-15)


def test_dclstm_probabilities_and_full_gradient(rng):
    model = DcLstm(DcLstmConfig(hidden_dim=3, num_classes=3), rng)
    pitch, energy = rng.normal(size=(2, 4, 1)), rng.normal(size=(2, 6, 1))
    p = model.probabilities(pitch, energy)
    assert np.all(p >= 0)
    np.testing.assert_allclose(p.sum(axis=1), 1, atol=1e-12)
    names = list(model.named_parameters())
    arrays = [t.data.copy() for t in model.parameters()]

    def build(*ts):
        for n, t in zip(names, ts):
            obj, attr = n.split("/")
            if obj == "head":
                setattr(model, "head_w" if attr == "w" else "head_b", t)
            else:
                setattr(getattr(model, obj), attr, t)
        return T.cross_entropy(model.logits(pitch, energy), [0, 2])

    assert check_grads(build, arrays) <= 1e-5


def test_elimination_list_examples():
    assert dclstm.elimination_list([0.3, 0.1, 0.2], 0.0) == ()
    assert set(dclstm.elimination_list([0.5, 0.01, 0.3, 0.02], 0.5)) == {1, 3}
    assert dclstm.elimination_list([1.0] * 4, 0.5) == (0, 1)
    with pytest.raises(ParameterError):
        dclstm.elimination_list([1.0, 2.0], 1.0)
    with pytest.raises(ParameterError):
        dclstm.elimination_list([1.0, 2.0], -0.1)


def test_elimination_list_sort_oracle_and_permutation(rng):
    for _ in range(50):
        n = int(rng.integers(1, 20))
        v = rng.permutation(n).astype(float) + rng.uniform(0, 0.5, n)
        r = float(rng.uniform(0, 0.99))
        k = int(np.floor(r * n + 1e-9))
        ref = sorted(sorted(range(n), key=lambda i: (v[i], i))[:k])
        got = dclstm.elimination_list(v, r)
        assert list(got) == ref
        perm = rng.permutation(n)
        moved = dclstm.elimination_list(v[perm], r)
        # position p in the permuted profile holds original index perm[p]
        assert {int(perm[p]) for p in moved} == set(got)
