"""Recurrent cell and attention building blocks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .params import ParamStore


def dropout_mask(shape, rate: float, rng: np.random.Generator, dtype=np.float64) -> np.ndarray | None:
    """Inverted-dropout mask: kept units are scaled by ``1 / (1 - rate)``."""
    if rate <= 0.0:
        return None
    keep = 1.0 - rate
    return (rng.random(shape) < keep).astype(dtype) / keep


@dataclass
class CellMasks:
    x: np.ndarray | None = None
    h: np.ndarray | None = None


class LstmLnCell:
    """LSTM with per-gate layer normalisation and variational dropout.

    Each gate's input-path and recurrent-path pre-activations are normalised
    separately (own gains), summed, then biased.  The cell state is not
    normalised.  Gate order in the weight columns is i, f, o, g.
    """

    def __init__(self, store: ParamStore, prefix: str, input_dim: int, hidden: int, dropout: float = 0.0):
        self.input_dim, self.hidden, self.dropout = input_dim, hidden, dropout
        self.w_x = store.create(f"{prefix}.w_x", (input_dim, 4 * hidden))
        self.w_h = store.create(f"{prefix}.w_h", (hidden, 4 * hidden))
        self.gain_x = store.create(f"{prefix}.gain_x", (4, hidden), init="ones")
        self.gain_h = store.create(f"{prefix}.gain_h", (4, hidden), init="ones")
        bias = store.create(f"{prefix}.bias", (4, hidden), init="zeros")
        bias.data[1] = 1.0  # forget gate
        self.bias = bias

    def parameters(self) -> list[Tensor]:
        return [self.w_x, self.w_h, self.gain_x, self.gain_h, self.bias]

    def init_state(self, batch: int, dtype=np.float64) -> tuple[Tensor, Tensor]:
        z = np.zeros((batch, self.hidden), dtype=dtype)
        return Tensor(z), Tensor(z.copy())

    def sample_masks(self, batch: int, rng: np.random.Generator | None, training: bool) -> CellMasks:
        """Draw the per-sequence masks; identity (None) outside training."""
        if not training or rng is None or self.dropout <= 0.0:
            return CellMasks()
        dtype = self.w_x.data.dtype
        return CellMasks(
            dropout_mask((batch, self.input_dim), self.dropout, rng, dtype),
            dropout_mask((batch, self.hidden), self.dropout, rng, dtype),
        )

    def step(self, x: Tensor, state: tuple[Tensor, Tensor], masks: CellMasks | None = None):
        h_prev, c_prev = state
        if x.shape[-1] != self.input_dim or h_prev.shape[-1] != self.hidden:
            raise ValueError(
                f"cell expects input width {self.input_dim} and state width {self.hidden}, "
                f"got {x.shape[-1]} and {h_prev.shape[-1]}"
            )
        masks = masks or CellMasks()
        batch, hid = x.shape[0], self.hidden
        xm = ad.dropout_mask_apply(x, masks.x)
        hm = ad.dropout_mask_apply(h_prev, masks.h)
        zx = ad.layer_norm(ad.reshape(ad.matmul(xm, self.w_x), (batch, 4, hid)), self.gain_x)
        zh = ad.layer_norm(ad.reshape(ad.matmul(hm, self.w_h), (batch, 4, hid)), self.gain_h)
        z = ad.reshape(ad.add(ad.add(zx, zh), self.bias), (batch, 4 * hid))
        ifo = ad.sigmoid(z[:, : 3 * hid])
        g = ad.tanh(z[:, 3 * hid :])
        i, f, o = ifo[:, :hid], ifo[:, hid : 2 * hid], ifo[:, 2 * hid :]
        c = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
        h = ad.mul(o, ad.tanh(c))
        return h, c


def lstm_ln_step(cell: LstmLnCell, x: Tensor, state, masks: CellMasks | None = None):
    return cell.step(x, state, masks)


@dataclass
class PreparedSource:
    keys: Tensor  # (B, S, heads, attn_dim)
    values: Tensor  # (B, S, heads, value_dim)
    mask: np.ndarray  # (B, S, 1) bool, True at real positions


class AdditiveMultiHeadAttention:
    """Multi-head additive attention.

    Per head: ``score_i = v . tanh(W q + U s_i)``, softmax over source
    positions, context ``sum_i w_i V s_i``; head contexts are concatenated
    and mapped by an output transform.
    """

    def __init__(self, store: ParamStore, prefix: str, query_dim: int, source_dim: int, out_dim: int, heads: int = 4):
        if source_dim % heads or out_dim % heads:
            raise ValueError("source and output widths must be divisible by the head count")
        self.heads = heads
        self.attn_dim = source_dim // heads
        self.value_dim = source_dim // heads
        self.w_q = store.create(f"{prefix}.w_q", (query_dim, heads * self.attn_dim))
        self.w_k = store.create(f"{prefix}.w_k", (source_dim, heads * self.attn_dim))
        self.v = store.create(f"{prefix}.v", (heads, self.attn_dim), init="glorot")
        self.w_v = store.create(f"{prefix}.w_v", (source_dim, heads * self.value_dim))
        self.w_o = store.create(f"{prefix}.w_o", (heads * self.value_dim, out_dim))
        self.b_o = store.create(f"{prefix}.b_o", (out_dim,), init="zeros")

    def parameters(self) -> list[Tensor]:
        return [self.w_q, self.w_k, self.v, self.w_v, self.w_o, self.b_o]

    def prepare(self, source: Tensor, lengths=None) -> PreparedSource:
        """Project source states once per sentence batch.  ``source`` is (B, S, D)."""
        b, s, _ = source.shape
        if s == 0:
            raise ValueError("attention over an empty source")
        keys = ad.reshape(ad.linear(source, self.w_k), (b, s, self.heads, self.attn_dim))
        values = ad.reshape(ad.linear(source, self.w_v), (b, s, self.heads, self.value_dim))
        if lengths is None:
            mask = np.ones((b, s, 1), dtype=bool)
        else:
            mask = (np.arange(s)[None, :] < np.asarray(lengths)[:, None])[:, :, None]
        return PreparedSource(keys, values, mask)

    def attend_prepared(self, query: Tensor, src: PreparedSource) -> tuple[Tensor, np.ndarray]:
        b = query.shape[0]
        q = ad.reshape(ad.matmul(query, self.w_q), (b, 1, self.heads, self.attn_dim))
        e = ad.tanh(ad.add(src.keys, q))
        scores = ad.einsum("bsha,ha->bsh", e, self.v)
        weights = ad.softmax(scores, axis=1, mask=src.mask)
        ctx = ad.einsum("bsh,bshv->bhv", weights, src.values)
        ctx = ad.reshape(ctx, (b, self.heads * self.value_dim))
        return ad.add(ad.matmul(ctx, self.w_o), self.b_o), weights.data

    def attend(self, query: Tensor, source: Tensor, lengths=None) -> tuple[Tensor, np.ndarray]:
        """Context vector (B, out_dim) and per-head weights (B, S, heads)."""
        return self.attend_prepared(query, self.prepare(source, lengths))
