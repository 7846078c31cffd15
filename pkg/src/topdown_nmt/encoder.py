"""Stacked bidirectional LSTM encoder over the shared embedding table."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nncore import autodiff as ad
from .nncore.autodiff import Parameter, Tensor
from .nncore.layers import LstmLnCell
from .nncore.params import ParamStore


@dataclass
class EncoderStates:
    states: Tensor  # (B, S, d_model)
    lengths: np.ndarray  # (B,)


def pad_ids(seqs, pad: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad integer sequences into a (B, max_len) array plus lengths."""
    lengths = np.array([len(s) for s in seqs], dtype=np.int64)
    out = np.full((len(seqs), int(lengths.max(initial=0))), pad, dtype=np.int64)
    for i, s in enumerate(seqs):
        out[i, : len(s)] = s
    return out, lengths


class Encoder:
    """Per layer a forward and a backward cell of width ``d_model / 2``.

    Their outputs are concatenated per position and fed to the next layer;
    the last layer's output goes through a linear projection.
    """

    def __init__(self, store: ParamStore, embedding: Parameter, d_model: int, layers: int, dropout: float = 0.0):
        if d_model % 2:
            raise ValueError("d_model must be even")
        self.embedding = embedding
        self.d_model = d_model
        half = d_model // 2
        self.fwd = [LstmLnCell(store, f"enc.{k}.fwd", d_model, half, dropout) for k in range(layers)]
        self.bwd = [LstmLnCell(store, f"enc.{k}.bwd", d_model, half, dropout) for k in range(layers)]
        self.w_proj = store.create("enc.proj.w", (d_model, d_model))
        self.b_proj = store.create("enc.proj.b", (d_model,), init="zeros")

    def parameters(self) -> list[Tensor]:
        ps = []
        for f, b in zip(self.fwd, self.bwd):
            ps += f.parameters() + b.parameters()
        return ps + [self.w_proj, self.b_proj]

    def encode(self, ids, lengths=None, rng=None, training: bool = False) -> EncoderStates:
        """Encode a (B, S) id array; ``lengths`` marks the real prefix of each row."""
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim == 1:
            ids = ids[None, :]
        batch, slen = ids.shape
        if slen == 0:
            raise ValueError("cannot encode an empty source")
        lengths = np.full(batch, slen) if lengths is None else np.asarray(lengths)
        if (lengths < 1).any():
            raise ValueError("cannot encode an empty source")
        dtype = self.embedding.data.dtype
        ragged = bool((lengths != slen).any())
        valid = [(t < lengths).astype(dtype)[:, None] for t in range(slen)]

        emb = ad.take(self.embedding, ids)
        xs = [emb[:, t, :] for t in range(slen)]
        for fcell, bcell in zip(self.fwd, self.bwd):
            fm = fcell.sample_masks(batch, rng, training)
            bm = bcell.sample_masks(batch, rng, training)
            state = fcell.init_state(batch, dtype)
            outs_f = []
            for t in range(slen):
                state = fcell.step(xs[t], state, fm)
                outs_f.append(state[0])
            state = bcell.init_state(batch, dtype)
            outs_b = [None] * slen
            for t in reversed(range(slen)):
                h, c = bcell.step(xs[t], state, bm)
                if ragged and not valid[t].all():
                    keep = valid[t]
                    h = ad.add(ad.mul(h, keep), ad.mul(state[0], 1.0 - keep))
                    c = ad.add(ad.mul(c, keep), ad.mul(state[1], 1.0 - keep))
                state = (h, c)
                outs_b[t] = h
            xs = [ad.concat([f, b], axis=-1) for f, b in zip(outs_f, outs_b)]
        stacked = ad.concat([ad.reshape(x, (batch, 1, self.d_model)) for x in xs], axis=1)
        states = ad.linear(stacked, self.w_proj, self.b_proj)
        return EncoderStates(states, lengths)


def encode(encoder: Encoder, source_ids, rng=None, training: bool = False) -> EncoderStates:
    return encoder.encode(np.asarray(source_ids)[None, :], rng=rng, training=training)
