import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from topdown_nmt.deptree import DepTree, Token
from topdown_nmt.estimators import Seq2SeqTranslator, TopDownTranslator, check_piece_targets, check_sources
from topdown_nmt.synth import SynthSpec, synth_generate

SMALL = dict(d_model=8, action_dim=4, enc_layers=1, dec_layers=2, heads=2, dropout=0.0, warmup=10,
             examples_per_update=4, micro_batch=4, max_updates=3, beam_size=2)  # fmt: skip


@pytest.fixture(scope="module")
def data():
    pairs = synth_generate(SynthSpec(vocab_size=16, max_nodes=4, seed=4), 6)
    return [p.source for p in pairs], [p.target for p in pairs]


@pytest.mark.parametrize("cls", [TopDownTranslator, Seq2SeqTranslator])
def test_params_roundtrip(cls):
    est = cls(d_model=32, beam_size=3)
    params = est.get_params()
    assert params["d_model"] == 32 and params["beam_size"] == 3
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(heads=2)
    assert est.heads == 2


@pytest.mark.parametrize("cls", [TopDownTranslator, Seq2SeqTranslator])
def test_predict_before_fit(cls, data):
    with pytest.raises(NotFittedError):
        cls().predict(data[0])


def test_source_validation():
    with pytest.raises(TypeError):
        check_sources("a b c")
    with pytest.raises(TypeError):
        check_sources(["a b c"])
    with pytest.raises(ValueError):
        check_sources([[]])
    with pytest.raises(ValueError):
        check_sources([["a", "b c"]])
    with pytest.raises(ValueError):
        check_sources([])


def test_tree_targets_required(data):
    X, y = data
    with pytest.raises(TypeError):
        TopDownTranslator(**SMALL).fit(X, [t.pieces for t in y])


def test_nonprojective_rejected(data):
    X, _ = data
    tokens = tuple(Token.from_pieces((w,), "NN") for w in "abcd")
    tree = DepTree(tokens, (0, 4, 1, 1))  # arc 4->2 crosses 1->3
    with pytest.raises(ValueError):
        TopDownTranslator(**SMALL).fit(X[:1], [tree])


def test_length_mismatch(data):
    X, y = data
    with pytest.raises(ValueError):
        Seq2SeqTranslator(**SMALL).fit(X, y[:-1])


def test_piece_targets():
    (tree,) = check_piece_targets([["ka@@", "mi", "to"]])
    assert list(tree.forms) == ["kami", "to"]
    with pytest.raises(ValueError):
        check_piece_targets([["ka@@"]])


def test_topdown_fit_predict(data):
    X, y = data
    est = TopDownTranslator(**SMALL).fit(X, y)
    assert est.n_updates_ == 3 and len(est.train_log_) == 3
    out = est.predict(X)
    assert len(out) == len(X)
    assert all(t is None or isinstance(t, DepTree) for t in out)
    assert 0.0 <= est.score(X, y) <= 100.0


def test_seq2seq_fit_predict(data):
    X, y = data
    est = Seq2SeqTranslator(**SMALL).fit(X, [t.pieces for t in y])
    out = est.predict(X)
    assert len(out) == len(X) and all(isinstance(p, list) for p in out)
    assert 0.0 <= est.score(X, y) <= 100.0


def test_fit_is_deterministic(data):
    X, y = data
    a = TopDownTranslator(**SMALL).fit(X, y).model_.store.state_dict()
    b = TopDownTranslator(**SMALL).fit(X, y).model_.store.state_dict()
    assert all(np.array_equal(a[k], b[k]) for k in a)
