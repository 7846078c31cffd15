import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from topdown_nmt.config import TrainConfig, preset
from topdown_nmt.nncore.autodiff import Parameter, Tape
from topdown_nmt.synth import SynthSpec, synth_generate
from topdown_nmt.training import (
    Adam,
    TrainingError,
    accumulate_gradients,
    label_smoothing_loss,
    load_model,
    make_model,
    mean_loss,
    save_model,
    smoothed_targets,
    teacher_forced_accuracy,
    train,
    transformer_lr,
)
from topdown_nmt.vocab import build_vocab

TINY = dict(d_model=8, action_dim=4, enc_layers=1, dec_layers=2, heads=2, dropout=0.0, warmup=10)


@pytest.fixture(scope="module")
def corpus():
    pairs = synth_generate(SynthSpec(vocab_size=16, max_nodes=5, seed=11), 100)
    return pairs, build_vocab(pairs)


class TestLabelSmoothing:
    @pytest.mark.parametrize("V", [2, 5, 37, 1000])
    def test_uniform_logits_give_log_v(self, V):
        # [DERIVED] q sums to one, so -sum q log(1/V) = ln V
        loss = label_smoothing_loss(np.zeros(V), 0, epsilon=0.1)
        assert abs(float(loss.data) - math.log(V)) < 1e-9

    def test_three_class_hand_computed(self):
        p = np.array([0.7, 0.2, 0.1])
        loss = label_smoothing_loss(np.log(p), 0, epsilon=0.1)
        expected = -(0.9 * math.log(0.7) + 0.05 * math.log(0.2) + 0.05 * math.log(0.1))
        assert abs(float(loss.data) - expected) < 1e-12

    def test_zero_epsilon_is_cross_entropy(self):
        logits = np.random.default_rng(0).standard_normal((4, 6))
        targets = np.array([0, 3, 5, 2])
        ls = logits - logits.max(axis=1, keepdims=True)
        logp = ls - np.log(np.exp(ls).sum(axis=1, keepdims=True))
        ce = -logp[np.arange(4), targets].mean()
        assert float(label_smoothing_loss(logits, targets, 0.0).data) == pytest.approx(ce, abs=1e-12)

    def test_pad_excluded_from_smoothing(self):
        q = smoothed_targets(np.array([2, 0]), 5, 0.2, pad_id=0)
        assert q[0].tolist() == pytest.approx([0.0, 0.2 / 3, 0.8, 0.2 / 3, 0.2 / 3])
        assert q[1].sum() == 0.0

    def test_pad_rows_ignored_in_mean(self):
        logits = np.random.default_rng(1).standard_normal((3, 4))
        full = label_smoothing_loss(logits[:2], [1, 2], 0.1, pad_id=0)
        padded = label_smoothing_loss(logits, [1, 2, 0], 0.1, pad_id=0)
        assert float(full.data) == pytest.approx(float(padded.data), abs=1e-14)

    def test_invalid_inputs(self):
        with pytest.raises(ValueError):
            label_smoothing_loss(np.zeros(3), 3)
        with pytest.raises(ValueError):
            label_smoothing_loss(np.zeros(3), 0, epsilon=1.0)
        with pytest.raises(ValueError):
            label_smoothing_loss(np.zeros(3), 0, pad_id=0)

    def test_gradient_is_softmax_minus_q(self):
        logits = Parameter(np.random.default_rng(2).standard_normal(5), "z")
        with Tape() as tape:
            loss = label_smoothing_loss(logits, 3, 0.1)
        tape.backward(loss)
        p = np.exp(logits.data) / np.exp(logits.data).sum()
        q = smoothed_targets(np.array([3]), 5, 0.1, None)[0]
        np.testing.assert_allclose(logits.grad, p - q, atol=1e-12)


class TestSchedule:
    def test_reference_value(self):
        # [PAPER] base configuration: d=512, warmup 4000
        assert abs(transformer_lr(4000, 512, 4000) - 6.988e-4) < 1e-7

    @pytest.mark.parametrize("warmup", [10, 200, 4000])
    def test_peak_at_warmup(self, warmup):
        rates = [transformer_lr(t, 64, warmup) for t in range(1, 3 * warmup)]
        assert int(np.argmax(rates)) + 1 == warmup

    def test_step_zero_rejected(self):
        with pytest.raises(ValueError):
            transformer_lr(0, 64, 10)


class TestAdam:
    def test_first_step_is_signed_lr(self):
        p = Parameter(np.array([1.0, -2.0, 3.0]), "p")
        p.grad = np.array([0.5, -3.0, 1e-3])
        opt = Adam([p], d_model=64, warmup=10)
        lr = opt.step()
        np.testing.assert_allclose(p.data, [1.0, -2.0, 3.0] - lr * np.sign(p.grad), atol=1e-7)

    def test_non_finite_gradient_raises(self):
        p = Parameter(np.zeros(2), "p")
        p.grad = np.array([np.nan, 0.0])
        with pytest.raises(TrainingError):
            Adam([p], 64, 10).step()


class TestDelayedUpdate:
    @pytest.mark.parametrize("micro", [1, 7, 33])
    def test_matches_single_batch(self, corpus, micro):
        pairs, vocab = corpus
        for arm in ("topdown", "baseline"):
            model = make_model(arm, vocab, TrainConfig(**TINY))
            examples = [model.example(p) for p in pairs[:100]]
            loss_a, n_a = accumulate_gradients(model, examples, 100, 0.1)
            ref = {p.name: p.grad.copy() for p in model.parameters()}
            loss_b, n_b = accumulate_gradients(model, examples, micro, 0.1)
            assert n_a == n_b and abs(loss_a - loss_b) < 1e-10
            for p in model.parameters():
                assert np.max(np.abs(p.grad - ref[p.name])) < 1e-10, p.name

    def test_order_invariant(self, corpus):
        pairs, vocab = corpus
        model = make_model("topdown", vocab, TrainConfig(**TINY))
        examples = [model.example(p) for p in pairs[:30]]
        accumulate_gradients(model, examples, 8, 0.1)
        ref = {p.name: p.grad.copy() for p in model.parameters()}
        perm = np.random.default_rng(3).permutation(30)
        accumulate_gradients(model, [examples[i] for i in perm], 8, 0.1)
        for p in model.parameters():
            np.testing.assert_allclose(p.grad, ref[p.name], atol=1e-12)


class TestTrainLoop:
    @pytest.mark.parametrize("seed", range(5))
    def test_one_step_descends(self, corpus, seed):
        pairs, vocab = corpus
        cfg = TrainConfig(**{**TINY, "warmup": 1}, seed=seed)
        model = make_model("topdown", vocab, cfg)
        examples = [model.example(p) for p in pairs[:10]]
        before = mean_loss(model, examples, 0.1)
        accumulate_gradients(model, examples, 10, 0.1)
        opt = Adam(model.parameters(), 8, 1)
        opt.lr = lambda step=None: 1e-3
        opt.step()
        assert mean_loss(model, examples, 0.1) < before

    def test_deterministic(self, corpus):
        pairs, vocab = corpus
        cfg = TrainConfig(**{**TINY, "dropout": 0.2}, examples_per_update=10, micro_batch=4, max_updates=3)
        a = train(cfg, pairs[:20], vocab=vocab).model.store.state_dict()
        b = train(cfg, pairs[:20], vocab=vocab).model.store.state_dict()
        for k in a:
            assert np.array_equal(a[k], b[k])

    def test_resume_matches_uninterrupted(self, corpus, tmp_path):
        pairs, vocab = corpus
        cfg = TrainConfig(**{**TINY, "dropout": 0.2}, examples_per_update=7, micro_batch=3, max_updates=6)
        full = train(cfg, pairs[:15], vocab=vocab).model.store.state_dict()
        ck = tmp_path / "run.npz"
        train(cfg, pairs[:15], vocab=vocab, checkpoint_path=ck, max_updates=3)
        resumed = train(cfg, pairs[:15], vocab=vocab, resume_from=ck)
        assert resumed.updates == 6
        for k, v in resumed.model.store.state_dict().items():
            assert np.array_equal(v, full[k]), k

    def test_resume_wrong_arm(self, corpus, tmp_path):
        pairs, vocab = corpus
        cfg = TrainConfig(**TINY, examples_per_update=4, micro_batch=4, max_updates=1)
        ck = tmp_path / "b.npz"
        train(cfg, pairs[:8], arm="baseline", vocab=vocab, checkpoint_path=ck)
        with pytest.raises(TrainingError):
            train(cfg, pairs[:8], arm="topdown", vocab=vocab, resume_from=ck)

    def test_stop_accuracy_and_log(self, corpus):
        pairs, vocab = corpus
        cfg = TrainConfig(**TINY, examples_per_update=4, micro_batch=4, max_updates=4, stop_accuracy=0.01, accuracy_every=2)
        seen = []
        res = train(cfg, pairs[:4], vocab=vocab, log_fn=seen.append)
        assert res.stop_reason == "stop_accuracy" and res.updates == 2
        assert "train_accuracy" in seen[-1]

    def test_length_threshold_filters_everything(self, corpus):
        pairs, vocab = corpus
        cfg = TrainConfig(**TINY, length_threshold=1)
        long_only = [p for p in pairs if len(p.source) > 1][:3]
        with pytest.raises(TrainingError):
            train(cfg, long_only, vocab=vocab)

    def test_unknown_arm(self, corpus):
        with pytest.raises(ValueError):
            make_model("rnng", corpus[1], TrainConfig(**TINY))

    def test_checkpoint_roundtrip(self, corpus, tmp_path):
        pairs, vocab = corpus
        model = make_model("baseline", vocab, TrainConfig(**TINY))
        save_model(tmp_path / "m.npz", model)
        loaded, _, header = load_model(tmp_path / "m.npz")
        assert header["arm"] == "baseline" and loaded.vocab.to_text() == vocab.to_text()
        examples = [model.example(p) for p in pairs[:5]]
        assert teacher_forced_accuracy(loaded, examples) == teacher_forced_accuracy(model, examples)


class TestConfig:
    def test_desk_preset(self):
        cfg = preset("desk")
        assert (cfg.d_model, cfg.enc_layers, cfg.dec_layers, cfg.heads) == (64, 2, 4, 4)

    def test_unknown_preset(self):
        with pytest.raises(KeyError):
            preset("huge")

    @pytest.mark.parametrize("bad", [{"d_model": 7}, {"dropout": 1.0}, {"micro_batch": 0}, {"dtype": "float16"}])
    def test_rejects(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 10_000), st.integers(1, 10_000))
    def test_lr_bounded_by_peak(self, step, warmup):
        assert transformer_lr(step, 64, warmup) <= transformer_lr(warmup, 64, warmup) + 1e-18
