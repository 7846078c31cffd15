import numpy as np
import pytest

from topdown_nmt.nncore import autodiff as ad
from topdown_nmt.nncore import (
    AdditiveMultiHeadAttention,
    LstmLnCell,
    Parameter,
    ParamStore,
    Tape,
    Tensor,
    dropout_mask,
    grad_check,
    load_checkpoint,
    lstm_ln_step,
    save_checkpoint,
)

TOL = 1e-4


def P(rng, *shape, name="p", positive=False):
    data = rng.standard_normal(shape)
    if positive:
        data = np.abs(data) + 0.5
    return Parameter(data, name)


def project(out: Tensor, seed=99):
    """Scalar read-out with fixed random weights, so every output element matters."""
    r = np.random.default_rng(seed).standard_normal(out.shape)
    return ad.sum(ad.mul(out, Tensor(r)))


def check(f, params):
    report = grad_check(f, params, tolerance=TOL, h=1e-5)
    assert report.passed, str(report)
    return report


OPS = {
    "add": (lambda a, b: ad.add(a, b), [(3, 4), (3, 4)]),
    "add-broadcast": (lambda a, b: ad.add(a, b), [(3, 4), (4,)]),
    "sub": (lambda a, b: ad.sub(a, b), [(2, 5), (1, 5)]),
    "mul": (lambda a, b: ad.mul(a, b), [(3, 4), (3, 1)]),
    "scale": (lambda a: ad.scale(a, -2.5), [(3, 3)]),
    "dropout": (lambda a: ad.dropout_mask_apply(a, np.array([[2.0, 0.0, 2.0]])), [(4, 3)]),
    "tanh": (ad.tanh, [(3, 4)]),
    "sigmoid": (ad.sigmoid, [(3, 4)]),
    "exp": (ad.exp, [(3, 4)]),
    "matmul": (ad.matmul, [(3, 4), (4, 2)]),
    "matmul-batched": (ad.matmul, [(2, 3, 4), (4, 5)]),
    "linear": (ad.linear, [(3, 4), (4, 2), (2,)]),
    "einsum": (lambda a, b: ad.einsum("bsh,bshv->bhv", a, b), [(2, 3, 2), (2, 3, 2, 4)]),
    "einsum-tied": (lambda a, b: ad.einsum("nd,vd->nv", a, b), [(3, 4), (5, 4)]),
    "reshape": (lambda a: ad.reshape(a, (6, 2)), [(3, 4)]),
    "getitem": (lambda a: a[:, 1:3], [(3, 4)]),
    "concat": (lambda a, b: ad.concat([a, b], axis=-1), [(3, 2), (3, 4)]),
    "split": (lambda a: ad.mul(*ad.split(a, [2, 2], axis=-1)), [(3, 4)]),
    "take": (lambda t: ad.take(t, np.array([0, 2, 2, 1])), [(3, 4)]),
    "sum-axis": (lambda a: ad.sum(a, axis=1), [(3, 4)]),
    "mean": (lambda a: ad.mean(a, axis=0), [(3, 4)]),
    "softmax": (lambda a: ad.softmax(a, axis=-1), [(3, 5)]),
    "softmax-masked": (lambda a: ad.softmax(a, axis=1, mask=np.array([[[1], [1], [0]]], dtype=bool)), [(2, 3, 2)]),
    "log_softmax": (lambda a: ad.log_softmax(a, axis=-1), [(3, 5)]),
    "layer_norm": (lambda a, g, b: ad.layer_norm(a, g, b), [(3, 6), (6,), (6,)]),
}


@pytest.mark.parametrize("name", sorted(OPS))
def test_op_gradients(name):
    fn, shapes = OPS[name]
    rng = np.random.default_rng(len(name))
    params = [P(rng, *s, name=f"x{i}") for i, s in enumerate(shapes)]
    check(lambda: project(fn(*params)), params)


def test_log_gradient():
    rng = np.random.default_rng(1)
    x = P(rng, 3, 4, positive=True)
    check(lambda: project(ad.log(x)), [x])


def test_shared_parameter_accumulates():
    x = Parameter(np.array([[1.5, -2.0]]), "x")
    with Tape() as tape:
        y = ad.sum(ad.mul(x, x))
    tape.backward(y)
    np.testing.assert_allclose(x.grad, 2 * x.data)


def test_backward_twice_is_additive():
    x = Parameter(np.array([[1.0, 2.0]]), "x")
    for _ in range(2):
        with Tape() as tape:
            y = ad.sum(ad.scale(x, 3.0))
        tape.backward(y)
    np.testing.assert_allclose(x.grad, [[6.0, 6.0]])


def test_softmax_mask_zero():
    x = Tensor(np.random.default_rng(0).standard_normal((2, 4, 1)))
    mask = np.array([[[1], [1], [0], [0]], [[1], [1], [1], [0]]], dtype=bool)
    w = ad.softmax(x, axis=1, mask=mask).data
    assert np.all(w[~mask] == 0.0)
    np.testing.assert_allclose(w.sum(axis=1), 1.0)


def test_layer_norm_statistics():
    x = Tensor(np.random.default_rng(0).standard_normal((5, 8)) * 3 + 2)
    y = ad.layer_norm(x).data
    np.testing.assert_allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=-1), 1.0, rtol=1e-4)


def test_matmul_rejects_vectors():
    with pytest.raises(ValueError):
        ad.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))


def test_gradcheck_detects_wrong_gradient():
    x = Parameter(np.array([[0.3, -0.7]]), "x")

    def bad():
        out = ad._make(x.data**2, (x,), lambda g: (g * 3 * x.data,))  # wrong: should be 2x
        return ad.sum(out)

    assert not grad_check(bad, [x]).passed


class TestLstmCell:
    def test_two_step_rollout_gradients(self):
        store = ParamStore(seed=3)
        cell = LstmLnCell(store, "c", 5, 4)
        rng = np.random.default_rng(3)
        for p in cell.parameters():
            p.data += 0.1 * rng.standard_normal(p.shape)
        xs = [P(rng, 2, 5, name=f"x{t}") for t in range(2)]
        h0 = P(rng, 2, 4, name="h0")
        c0 = P(rng, 2, 4, name="c0")

        def f():
            state = (h0, c0)
            for x in xs:
                state = lstm_ln_step(cell, x, state)
            return ad.add(project(state[0]), project(state[1], seed=5))

        check(f, cell.parameters() + xs + [h0, c0])

    def test_forget_bias_and_shapes(self):
        cell = LstmLnCell(ParamStore(), "c", 3, 6)
        assert np.all(cell.bias.data[1] == 1.0) and np.all(cell.bias.data[[0, 2, 3]] == 0.0)
        h, c = cell.step(Tensor(np.ones((2, 3))), cell.init_state(2))
        assert h.shape == c.shape == (2, 6)

    def test_width_mismatch(self):
        cell = LstmLnCell(ParamStore(), "c", 3, 6)
        with pytest.raises(ValueError):
            cell.step(Tensor(np.ones((2, 4))), cell.init_state(2))

    def test_variational_masks_fixed_per_sequence(self):
        cell = LstmLnCell(ParamStore(), "c", 3, 4, dropout=0.5)
        masks = cell.sample_masks(2, np.random.default_rng(0), training=True)
        assert masks.x.shape == (2, 3) and masks.h.shape == (2, 4)
        assert set(np.unique(masks.x)) <= {0.0, 2.0}
        off = cell.sample_masks(2, np.random.default_rng(0), training=False)
        assert off.x is None and off.h is None

    def test_dropout_mask_scaling(self):
        m = dropout_mask((20000,), 0.1, np.random.default_rng(0))
        assert abs(m.mean() - 1.0) < 0.02
        assert dropout_mask((3,), 0.0, np.random.default_rng(0)) is None


class TestAttention:
    def test_gradients_ragged(self):
        store = ParamStore(seed=4)
        attn = AdditiveMultiHeadAttention(store, "a", 6, 8, 8, heads=2)
        rng = np.random.default_rng(4)
        q = P(rng, 2, 6, name="q")
        src = P(rng, 2, 3, 8, name="src")
        check(lambda: project(attn.attend(q, src, lengths=[3, 2])[0]), attn.parameters() + [q, src])

    def test_weights_shape_and_padding(self):
        attn = AdditiveMultiHeadAttention(ParamStore(seed=1), "a", 4, 8, 8, heads=4)
        ctx, w = attn.attend(Tensor(np.ones((2, 4))), Tensor(np.ones((2, 5, 8))), lengths=[5, 2])
        assert ctx.shape == (2, 8) and w.shape == (2, 5, 4)
        assert np.all(w[1, 2:] == 0.0)
        np.testing.assert_allclose(w.sum(axis=1), 1.0)

    def test_padding_does_not_change_context(self):
        attn = AdditiveMultiHeadAttention(ParamStore(seed=2), "a", 4, 8, 8, heads=2)
        rng = np.random.default_rng(0)
        src = rng.standard_normal((1, 3, 8))
        q = Tensor(rng.standard_normal((1, 4)))
        padded = np.concatenate([src, rng.standard_normal((1, 2, 8))], axis=1)
        a, _ = attn.attend(q, Tensor(src))
        b, _ = attn.attend(q, Tensor(padded), lengths=[3])
        np.testing.assert_allclose(a.data, b.data, atol=1e-12)

    def test_head_divisibility(self):
        with pytest.raises(ValueError):
            AdditiveMultiHeadAttention(ParamStore(), "a", 4, 6, 8, heads=4)


class TestParams:
    def test_duplicate_name(self):
        store = ParamStore()
        store.create("w", (2, 2))
        with pytest.raises((KeyError, ValueError)):
            store.create("w", (2, 2))

    def test_checkpoint_roundtrip(self, tmp_path):
        store = ParamStore(seed=0)
        store.create("a", (3, 4))
        store.create("b", (4,), init="zeros")
        save_checkpoint(tmp_path / "c.npz", store.state_dict(), {"note": "x"})
        arrays, header = load_checkpoint(tmp_path / "c.npz")
        assert header["note"] == "x"
        other = ParamStore(seed=1)
        other.create("a", (3, 4))
        other.create("b", (4,), init="zeros")
        other.load_state_dict(arrays)
        for k, v in store.state_dict().items():
            assert np.array_equal(other[k].data, v)

    def test_seeded_init_deterministic(self):
        a, b = ParamStore(seed=5), ParamStore(seed=5)
        assert np.array_equal(a.create("w", (3, 3)).data, b.create("w", (3, 3)).data)
