"""Action-conditioned top-down tree decoder.

The decoder input at every step is the embedding of the previous output
symbol concatenated with the embedding of the action on top of the pending
action stack.  One shared softmax over the joint vocabulary scores subwords,
PoS tags and empty symbols alike; at decode time it can be restricted to the
symbols that are legal for the current action.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .deptree import DepTree, SentencePair
from .encoder import Encoder, EncoderStates, pad_ids
from ._decoder import ConditionalStack, DecoderState
from .nncore import autodiff as ad
from .nncore.autodiff import Tensor
from .nncore.layers import PreparedSource
from .nncore.params import ParamStore
from .transition import ACTION_INDEX, ROOT_MARK, ActionKind, Executor, TransitionStep, oracle
from .vocab import PAD, ROOT, JointVocab


@dataclass
class TopDownExample:
    source: np.ndarray
    actions: np.ndarray
    inputs: np.ndarray
    targets: np.ndarray

    @property
    def n_targets(self) -> int:
        return len(self.targets)


class TopDownModel:
    """Encoder, action embeddings and conditional decoder over one tied embedding table."""

    arm = "topdown"

    def __init__(self, vocab: JointVocab, config: TrainConfig):
        self.vocab = vocab
        self.config = config
        d = config.d_model
        self.store = ParamStore(seed=config.seed, dtype=np.dtype(config.dtype))
        # one table: source embedding, decoder input embedding, output projection
        self.embedding = self.store.create("embed", (len(vocab), d), init="normal", scale=d**-0.5)
        self.encoder = Encoder(self.store, self.embedding, d, config.enc_layers, config.dropout)
        self.action_embedding = self.store.create("dec.action_embed", (len(ActionKind), config.action_dim), init="normal", scale=0.1)
        self.decoder = ConditionalStack(self.store, "dec", d + config.action_dim, d, config.dec_layers, config.heads, config.dropout)
        self.out_bias = self.store.create("dec.out_bias", (len(vocab),), init="zeros")

    @property
    def dtype(self):
        return self.store.dtype

    def parameters(self) -> list[Tensor]:
        return list(self.store)

    # -- data -----------------------------------------------------------------

    def example(self, pair: SentencePair) -> TopDownExample:
        steps = oracle(pair.target)
        enc = self.vocab.encode
        return TopDownExample(
            np.array(self.vocab.encode_tokens(pair.source), dtype=np.int64),
            np.array([ACTION_INDEX[s.action] for s in steps], dtype=np.int64),
            np.array([enc(s.input) for s in steps], dtype=np.int64),
            np.array([enc(s.output) for s in steps], dtype=np.int64),
        )

    # -- network ----------------------------------------------------------------

    def encode(self, source_ids, lengths=None, rng=None, training: bool = False) -> tuple[EncoderStates, PreparedSource]:
        enc = self.encoder.encode(source_ids, lengths, rng, training)
        return enc, self.decoder.attn.prepare(enc.states, enc.lengths)

    def init_state(self, batch: int, rng=None, training: bool = False) -> DecoderState:
        return self.decoder.init_state(batch, self.dtype, rng, training)

    def step_readout(self, prev_ids, action_ids, state: DecoderState, src: PreparedSource):
        x = ad.concat(
            [ad.take(self.embedding, np.asarray(prev_ids)), ad.take(self.action_embedding, np.asarray(action_ids))],
            axis=-1,
        )
        return self.decoder.step(x, state, src)

    def project(self, readout: Tensor) -> Tensor:
        """Tied output projection onto the whole joint vocabulary."""
        return ad.add(ad.einsum("nd,vd->nv", readout, self.embedding), self.out_bias)

    def decoder_step(self, prev_ids, actions, state: DecoderState, src: PreparedSource):
        """One decoder timestep for a batch: (logits, context, new state).

        ``actions`` may be ActionKind values or action indices.
        """
        action_ids = [ACTION_INDEX[a] if isinstance(a, ActionKind) else int(a) for a in np.atleast_1d(actions)]
        readout, ctx, _, new_state = self.step_readout(np.atleast_1d(prev_ids), action_ids, state, src)
        return self.project(readout), ctx, new_state

    def forward_teacher(self, examples: list[TopDownExample], training: bool = False, rng=None):
        """Teacher-forced logits, one row per transition step.

        Returns ``(logits (T*B, V), targets (T*B,))`` in time-major order;
        padding rows carry target PAD.
        """
        src, lengths = pad_ids([e.source for e in examples], PAD)
        _, prepared = self.encode(src, lengths, rng, training)
        actions, _ = pad_ids([e.actions for e in examples], 0)
        inputs, _ = pad_ids([e.inputs for e in examples], PAD)
        targets, _ = pad_ids([e.targets for e in examples], PAD)
        state = self.init_state(len(examples), rng, training)
        readouts = []
        for t in range(targets.shape[1]):
            readout, _, _, state = self.step_readout(inputs[:, t], actions[:, t], state, prepared)
            readouts.append(readout)
        logits = self.project(ad.concat(readouts, axis=0))
        return logits, targets.T.reshape(-1)


def apply_legality_mask(logits: np.ndarray, action: ActionKind, vocab: JointVocab, require_piece: bool = False) -> np.ndarray:
    """Set logits of symbols illegal under ``action`` to -inf."""
    mask = vocab.legal_mask(action, require_piece)
    return np.where(mask, logits, -np.inf)


def default_max_steps(source_len: int) -> int:
    return 10 * source_len + 50


def _log_softmax(row: np.ndarray) -> np.ndarray:
    m = np.max(row)
    return row - m - np.log(np.sum(np.exp(row - m)))


@dataclass
class Hypothesis:
    score: float
    outputs: list[int]
    executor: Executor
    steps: list[TransitionStep] = field(default_factory=list)
    failure: str | None = None

    @property
    def finished(self) -> bool:
        return self.executor.done

    @property
    def tree(self) -> DepTree | None:
        return self.executor.tree() if self.executor.done else None


DecodeResult = Hypothesis


def _start(model: TopDownModel, source) -> PreparedSource:
    ids = np.asarray(model.vocab.encode_tokens(source) if not isinstance(source, np.ndarray) else source, dtype=np.int64)
    if ids.size == 0:
        raise ValueError("cannot translate an empty source")
    _, prepared = model.encode(ids[None, :])
    return prepared


def _expand(src: PreparedSource, rows: int) -> PreparedSource:
    if src.keys.shape[0] == rows:
        return src
    rep = lambda a: np.repeat(a[:1], rows, axis=0)  # noqa: E731
    return PreparedSource(Tensor(rep(src.keys.data)), Tensor(rep(src.values.data)), rep(src.mask))


def greedy_decode(model: TopDownModel, source, max_steps: int | None = None, mask: bool = True) -> Hypothesis:
    """Argmax decoding driven by the executor's required action.

    The result's ``failure`` is set (and ``tree`` is None) when the step cap
    is hit or, without masking, an illegal symbol is chosen.
    """
    return beam_decode(model, source, beam_size=1, max_steps=max_steps, mask=mask, _greedy=True)


def beam_decode(
    model: TopDownModel,
    source,
    beam_size: int = 5,
    max_steps: int | None = None,
    mask: bool = True,
    _greedy: bool = False,
) -> Hypothesis:
    """Beam search ranked by raw cumulative log-probability.

    Each hypothesis carries its own executor; expansions are restricted to
    symbols the executor accepts.  Finished hypotheses are set aside, and
    search stops once no live hypothesis can still beat the best finished
    one (scores only decrease).  ``beam_size=1`` is greedy decoding.
    """
    if beam_size < 1:
        raise ValueError("beam_size must be >= 1")
    vocab = model.vocab
    src_len = len(source)
    max_steps = default_max_steps(src_len) if max_steps is None else max_steps
    if max_steps < 5:
        raise ValueError("max_steps must be >= 5")
    src1 = _start(model, source)
    live = [Hypothesis(0.0, [], Executor())]
    state = model.init_state(1)
    finished: list[Hypothesis] = []
    for _ in range(max_steps):
        src = _expand(src1, len(live))
        prev = [h.outputs[-1] if h.outputs else ROOT for h in live]
        actions = [h.executor.required_action for h in live]
        logits, _, new_state = model.decoder_step(prev, actions, state, src)
        logits = logits.data
        candidates = []
        for i, h in enumerate(live):
            legal = vocab.legal_mask(actions[i], h.executor.needs_piece)
            row = np.where(legal, logits[i], -np.inf) if mask else logits[i]
            if _greedy:
                best = int(np.argmax(row))
                logp = _log_softmax(row)
                candidates.append((h.score + float(logp[best]), i, best))
                continue
            logp = _log_softmax(row)
            legal_ids = np.flatnonzero(legal & np.isfinite(logp))
            top = legal_ids[np.argsort(-logp[legal_ids], kind="stable")[:beam_size]]
            candidates.extend((h.score + float(logp[j]), i, int(j)) for j in top)
        candidates.sort(key=lambda c: (-c[0], live[c[1]].outputs + [c[2]]))
        next_live, rows = [], []
        for score, i, j in candidates:
            parent = live[i]
            sym = vocab.decode(j)
            ex = parent.executor.copy()
            prev_sym = vocab.decode(parent.outputs[-1]) if parent.outputs else None
            hyp = Hypothesis(score, parent.outputs + [j], ex, parent.steps)
            if not ex.accepts(sym):
                hyp.failure = f"illegal output {sym.text or sym.kind} under {ex.required_action.value}"
                return hyp
            action = ex.required_action
            ex.step(sym)
            hyp.steps = parent.steps + [TransitionStep(action, prev_sym if prev_sym is not None else ROOT_MARK, sym)]
            if ex.done:
                finished.append(hyp)
            else:
                next_live.append(hyp)
                rows.append(i)
            if len(next_live) >= beam_size or (_greedy and (finished or next_live)):
                break
        if finished:
            best_done = max(h.score for h in finished)
            if not next_live or best_done >= max(h.score for h in next_live):
                break
        if not next_live:
            break
        live = next_live
        state = new_state.select(rows)
    if finished:
        finished.sort(key=lambda h: (-h.score, h.outputs))
        return finished[0]
    best = min(live, key=lambda h: (-h.score, h.outputs))
    best.failure = f"no complete tree within {max_steps} steps"
    return best

