"""Attentional sequence decoder used as the comparison arm.

Same encoder, attention and conditional stack as the top-down model, but
the decoder input is only the previous subword's embedding and the output
covers specials plus subwords.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import TrainConfig
from .deptree import SentencePair, detokenize_pieces
from .encoder import Encoder, pad_ids
from ._decoder import ConditionalStack, DecoderState
from .nncore import autodiff as ad
from .nncore.autodiff import Tensor
from .nncore.layers import PreparedSource
from .nncore.params import ParamStore
from .vocab import EOS, PAD, ROOT, UNK, JointVocab


@dataclass
class BaselineExample:
    source: np.ndarray
    inputs: np.ndarray  # joint ids, starting with ROOT as begin-of-sentence
    targets: np.ndarray  # ids in the baseline output space, ending with EOS

    @property
    def n_targets(self) -> int:
        return len(self.targets)


class BaselineModel:
    arm = "baseline"

    def __init__(self, vocab: JointVocab, config: TrainConfig):
        self.vocab = vocab
        self.config = config
        d = config.d_model
        self.store = ParamStore(seed=config.seed, dtype=np.dtype(config.dtype))
        self.embedding = self.store.create("embed", (len(vocab), d), init="normal", scale=d**-0.5)
        self.encoder = Encoder(self.store, self.embedding, d, config.enc_layers, config.dropout)
        self.decoder = ConditionalStack(self.store, "dec", d, d, config.dec_layers, config.heads, config.dropout)
        self.output_ids = vocab.baseline_ids()
        self.out_bias = self.store.create("dec.out_bias", (len(self.output_ids),), init="zeros")
        self._to_output = np.full(len(vocab), -1, dtype=np.int64)
        self._to_output[self.output_ids] = np.arange(len(self.output_ids))

    @property
    def dtype(self):
        return self.store.dtype

    @property
    def output_size(self) -> int:
        return len(self.output_ids)

    def parameters(self) -> list[Tensor]:
        return list(self.store)

    def to_output(self, joint_ids) -> np.ndarray:
        return self._to_output[np.asarray(joint_ids)]

    def to_joint(self, output_ids) -> np.ndarray:
        return self.output_ids[np.asarray(output_ids)]

    def example(self, pair: SentencePair) -> BaselineExample:
        pieces = np.array(self.vocab.encode_tokens(pair.target.pieces), dtype=np.int64)
        return BaselineExample(
            np.array(self.vocab.encode_tokens(pair.source), dtype=np.int64),
            np.r_[ROOT, pieces].astype(np.int64),
            np.r_[self.to_output(pieces), self._to_output[EOS]].astype(np.int64),
        )

    def encode(self, source_ids, lengths=None, rng=None, training: bool = False):
        enc = self.encoder.encode(source_ids, lengths, rng, training)
        return enc, self.decoder.attn.prepare(enc.states, enc.lengths)

    def init_state(self, batch: int, rng=None, training: bool = False) -> DecoderState:
        return self.decoder.init_state(batch, self.dtype, rng, training)

    def project(self, readout: Tensor) -> Tensor:
        table = ad.take(self.embedding, self.output_ids)
        return ad.add(ad.einsum("nd,vd->nv", readout, table), self.out_bias)

    def baseline_step(self, prev_ids, state: DecoderState, src: PreparedSource):
        """One step: (logits over the baseline output space, context, new state)."""
        x = ad.take(self.embedding, np.atleast_1d(prev_ids))
        readout, ctx, _, new_state = self.decoder.step(x, state, src)
        return self.project(readout), ctx, new_state

    def forward_teacher(self, examples: list[BaselineExample], training: bool = False, rng=None):
        src, lengths = pad_ids([e.source for e in examples], PAD)
        _, prepared = self.encode(src, lengths, rng, training)
        inputs, _ = pad_ids([e.inputs for e in examples], PAD)
        targets, _ = pad_ids([e.targets for e in examples], PAD)
        state = self.init_state(len(examples), rng, training)
        readouts = []
        for t in range(targets.shape[1]):
            x = ad.take(self.embedding, inputs[:, t])
            readout, _, _, state = self.decoder.step(x, state, prepared)
            readouts.append(readout)
        return self.project(ad.concat(readouts, axis=0)), targets.T.reshape(-1)


@dataclass
class BaselineResult:
    pieces: list[str]
    score: float
    failure: str | None = None

    @property
    def words(self) -> list[str]:
        return detokenize_pieces(self.pieces)


def _log_softmax(row: np.ndarray) -> np.ndarray:
    m = np.max(row)
    return row - m - np.log(np.sum(np.exp(row - m)))


def baseline_decode(
    model: BaselineModel,
    source,
    beam_size: int = 5,
    max_steps: int | None = None,
    length_norm: bool = False,
) -> BaselineResult:
    """Beam search until EOS or the step cap.

    PAD, UNK and the begin marker are never produced.  Ranking uses the
    cumulative log-probability, divided by the output length (EOS included)
    when ``length_norm`` is set.  An immediate EOS yields an empty, flagged
    translation.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    vocab = model.vocab
    ids = np.array(vocab.encode_tokens(source), dtype=np.int64)
    if ids.size == 0:
        raise ValueError("cannot translate an empty source")
    max_steps = 10 * len(ids) + 50 if max_steps is None else max_steps
    _, src1 = model.encode(ids[None, :])
    banned = model.to_output([PAD, UNK, ROOT])
    eos = int(model.to_output(EOS))

    def rank(score, n):
        return score / n if length_norm else score

    live = [(0.0, [])]  # (score, output-space ids)
    state = model.init_state(1)
    finished: list[tuple[float, list[int]]] = []
    for _ in range(max_steps):
        src = src1
        if len(live) > 1:
            rep = lambda a: np.repeat(a, len(live), axis=0)  # noqa: E731
            src = PreparedSource(Tensor(rep(src1.keys.data)), Tensor(rep(src1.values.data)), rep(src1.mask))
        prev = [model.to_joint(out[-1]) if out else ROOT for _, out in live]
        logits, _, new_state = model.baseline_step(prev, state, src)
        cands = []
        for i, (score, out) in enumerate(live):
            row = logits.data[i].copy()
            row[banned] = -np.inf
            logp = _log_softmax(row)
            top = np.argsort(-logp, kind="stable")[:beam_size]
            cands.extend((score + float(logp[j]), i, int(j)) for j in top if np.isfinite(logp[j]))
        cands.sort(key=lambda c: (-c[0], live[c[1]][1] + [c[2]]))
        next_live, rows = [], []
        for score, i, j in cands:
            out = live[i][1] + [j]
            if j == eos:
                finished.append((score, out))
            else:
                next_live.append((score, out))
                rows.append(i)
            if len(next_live) >= beam_size:
                break
        if len(finished) >= beam_size or not next_live:
            break
        if finished and not length_norm and max(s for s, _ in finished) >= max(s for s, _ in next_live):
            break
        live = next_live
        state = new_state.select(rows)
    if finished:
        finished.sort(key=lambda h: (-rank(h[0], len(h[1])), h[1]))
        score, out = finished[0]
        pieces = [vocab.decode(int(model.to_joint(j))).text for j in out[:-1]]
        failure = "empty translation (EOS first)" if not pieces else None
        return BaselineResult(pieces, score, failure)
    score, out = min(live, key=lambda h: (-rank(h[0], len(h[1])), h[1]))
    pieces = [vocab.decode(int(model.to_joint(j))).text for j in out]
    return BaselineResult(pieces, score, f"no EOS within {max_steps} steps")
