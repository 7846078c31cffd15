"""scikit-learn style wrappers around the two translation arms.

``X`` is a list of source token sequences.  For :class:`TopDownTranslator`
``y`` is a list of :class:`~topdown_nmt.deptree.DepTree`; for
:class:`Seq2SeqTranslator` it may be trees or plain target piece sequences.
"""

from __future__ import annotations

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .config import preset
from .deptree import DepTree, SentencePair, Token, detokenize_pieces, require_projective
from .evalx import bleu


def check_sources(X) -> list[tuple[str, ...]]:
    """Validate source sentences: non-empty sequences of non-empty, whitespace-free strings."""
    if isinstance(X, (str, bytes)):
        raise TypeError("X must be a sequence of token sequences, not a string")
    out = []
    for i, sent in enumerate(X):
        if isinstance(sent, str):
            raise TypeError(f"X[{i}] is a string; pass a sequence of tokens")
        toks = tuple(sent)
        if not toks:
            raise ValueError(f"X[{i}] is empty")
        for tok in toks:
            if not isinstance(tok, str) or not tok or any(c.isspace() for c in tok):
                raise ValueError(f"X[{i}] has an invalid token {tok!r}")
        out.append(toks)
    if not out:
        raise ValueError("X is empty")
    return out


def check_trees(y) -> list[DepTree]:
    trees = list(y)
    for i, t in enumerate(trees):
        if not isinstance(t, DepTree):
            raise TypeError(f"y[{i}] is {type(t).__name__}, expected DepTree")
        require_projective(t)
    return trees


def check_piece_targets(y) -> list[DepTree]:
    """Trees pass through; piece sequences become flat trees (pieces are all the baseline uses)."""
    out = []
    for i, t in enumerate(y):
        if isinstance(t, DepTree):
            out.append(t)
            continue
        pieces = check_sources([t])[0]
        words, current = [], []
        for p in pieces:
            current.append(p)
            if not p.endswith("@@"):
                words.append(current)
                current = []
        if current:
            raise ValueError(f"y[{i}] ends with a continuation piece")
        tokens = tuple(Token.from_pieces(w, "_") for w in words)
        out.append(DepTree(tokens, tuple([0] + [1] * (len(tokens) - 1))))
    return out


def _check_lengths(X, y) -> None:
    if len(X) != len(y):
        raise ValueError(f"X has {len(X)} sentences but y has {len(y)}")


class _Translator(BaseEstimator):
    _arm = ""

    def __init__(
        self,
        preset: str = "desk",
        d_model: int = 64,
        action_dim: int = 32,
        enc_layers: int = 2,
        dec_layers: int = 4,
        heads: int = 4,
        dropout: float = 0.1,
        label_smoothing: float = 0.1,
        warmup: int = 200,
        examples_per_update: int = 100,
        micro_batch: int = 100,
        max_updates: int = 1000,
        stop_accuracy: float = 0.0,
        seed: int = 1,
        beam_size: int = 5,
    ):
        self.preset = preset
        self.d_model = d_model
        self.action_dim = action_dim
        self.enc_layers = enc_layers
        self.dec_layers = dec_layers
        self.heads = heads
        self.dropout = dropout
        self.label_smoothing = label_smoothing
        self.warmup = warmup
        self.examples_per_update = examples_per_update
        self.micro_batch = micro_batch
        self.max_updates = max_updates
        self.stop_accuracy = stop_accuracy
        self.seed = seed
        self.beam_size = beam_size

    def _config(self):
        keys = (
            "d_model", "action_dim", "enc_layers", "dec_layers", "heads", "dropout", "label_smoothing",
            "warmup", "examples_per_update", "micro_batch", "max_updates", "stop_accuracy", "seed",
        )  # fmt: skip
        return preset(self.preset, **{k: getattr(self, k) for k in keys})

    def _targets(self, y) -> list[DepTree]:
        raise NotImplementedError

    def fit(self, X, y):
        from .training import train

        X = check_sources(X)
        trees = self._targets(y)
        _check_lengths(X, trees)
        if self.beam_size < 1:
            raise ValueError("beam_size must be >= 1")
        pairs = [SentencePair(s, t) for s, t in zip(X, trees)]
        result = train(self._config(), pairs, arm=self._arm)
        self.model_ = result.model
        self.n_updates_ = result.updates
        self.train_log_ = result.log
        return self

    def _surface(self, X) -> list[list[str]]:
        raise NotImplementedError

    def score(self, X, y) -> float:
        """Corpus BLEU (0-100) of the predictions against the references' word forms."""
        trees = self._targets(y)
        _check_lengths(X, trees)
        return bleu(self._surface(X), [t.forms for t in trees])


class TopDownTranslator(_Translator):
    """Tree-producing translator; ``predict`` returns a DepTree per sentence (None on failure)."""

    _arm = "topdown"

    def _targets(self, y):
        return check_trees(y)

    def predict(self, X) -> list[DepTree | None]:
        from .decoder_topdown import beam_decode

        check_is_fitted(self, "model_")
        out = []
        for src in check_sources(X):
            hyp = beam_decode(self.model_, src, self.beam_size)
            out.append(hyp.tree if hyp.failure is None else None)
        return out

    def _surface(self, X):
        return [t.forms if t is not None else [] for t in self.predict(X)]


class Seq2SeqTranslator(_Translator):
    """Sequence baseline; ``predict`` returns target piece lists."""

    _arm = "baseline"

    def _targets(self, y):
        return check_piece_targets(y)

    def predict(self, X) -> list[list[str]]:
        from .decoder_baseline import baseline_decode

        check_is_fitted(self, "model_")
        return [baseline_decode(self.model_, src, self.beam_size).pieces for src in check_sources(X)]

    def _surface(self, X):
        return [detokenize_pieces(p) for p in self.predict(X)]
