"""Conditional stacked LSTM shared by the top-down and the sequence decoder.

One timestep: a pre-attention cell updates layer 1 from the input, its
output queries the source, a post-attention cell takes the context as input
and layer 1's pre-attention state as its state, then layers 2..l run as a
plain stack.  The readout is ``tanh(W [h_top; context] + b)`` at embedding
width, ready for the tied output projection.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .nncore import autodiff as ad
from .nncore.autodiff import Tensor
from .nncore.layers import AdditiveMultiHeadAttention, CellMasks, LstmLnCell, PreparedSource
from .nncore.params import ParamStore


@dataclass
class DecoderState:
    layers: list  # [(h, c)] for layer 1 .. l
    masks: list  # CellMasks for pre, post, then layers 2..l

    def select(self, rows) -> "DecoderState":
        """Sub-batch by row indices (used by beam search)."""
        rows = np.asarray(rows)
        layers = [(Tensor(h.data[rows]), Tensor(c.data[rows])) for h, c in self.layers]
        masks = [CellMasks(None if m.x is None else m.x[rows], None if m.h is None else m.h[rows]) for m in self.masks]
        return DecoderState(layers, masks)


class ConditionalStack:
    def __init__(self, store: ParamStore, prefix: str, input_dim: int, d_model: int, layers: int, heads: int, dropout: float):
        if layers < 1:
            raise ValueError("decoder needs at least one layer")
        self.d_model = d_model
        self.n_layers = layers
        self.pre = LstmLnCell(store, f"{prefix}.pre", input_dim, d_model, dropout)
        self.attn = AdditiveMultiHeadAttention(store, f"{prefix}.attn", d_model, d_model, d_model, heads)
        self.post = LstmLnCell(store, f"{prefix}.post", d_model, d_model, dropout)
        self.upper = [LstmLnCell(store, f"{prefix}.l{k}", d_model, d_model, dropout) for k in range(2, layers + 1)]
        self.w_read = store.create(f"{prefix}.readout.w", (2 * d_model, d_model))
        self.b_read = store.create(f"{prefix}.readout.b", (d_model,), init="zeros")

    def cells(self) -> list[LstmLnCell]:
        return [self.pre, self.post] + self.upper

    def parameters(self) -> list[Tensor]:
        ps = []
        for c in self.cells():
            ps += c.parameters()
        return ps + self.attn.parameters() + [self.w_read, self.b_read]

    def init_state(self, batch: int, dtype, rng=None, training: bool = False) -> DecoderState:
        layers = [self.pre.init_state(batch, dtype) for _ in range(self.n_layers)]
        masks = [c.sample_masks(batch, rng, training) for c in self.cells()]
        return DecoderState(layers, masks)

    def step(self, x: Tensor, state: DecoderState, src: PreparedSource):
        """Advance one timestep; returns (readout, context, attention weights, new state)."""
        m_pre, m_post, *m_upper = state.masks
        h1p = self.pre.step(x, state.layers[0], m_pre)
        ctx, weights = self.attn.attend_prepared(h1p[0], src)
        h1 = self.post.step(ctx, h1p, m_post)
        new_layers = [h1]
        below = h1[0]
        for k, cell in enumerate(self.upper, start=1):
            hk = cell.step(below, state.layers[k], m_upper[k - 1])
            new_layers.append(hk)
            below = hk[0]
        readout = ad.tanh(ad.linear(ad.concat([below, ctx], axis=-1), self.w_read, self.b_read))
        return readout, ctx, weights, DecoderState(new_layers, state.masks)
