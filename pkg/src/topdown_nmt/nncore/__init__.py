"""Dense numerics with reverse-mode differentiation and recurrent building blocks."""

from . import autodiff
from .autodiff import Parameter, Tape, Tensor
from .gradcheck import GradCheckReport, grad_check
from .layers import AdditiveMultiHeadAttention, CellMasks, LstmLnCell, dropout_mask, lstm_ln_step
from .params import ParamStore, load_checkpoint, save_checkpoint

__all__ = [
    "AdditiveMultiHeadAttention",
    "CellMasks",
    "GradCheckReport",
    "LstmLnCell",
    "ParamStore",
    "Parameter",
    "Tape",
    "Tensor",
    "autodiff",
    "dropout_mask",
    "grad_check",
    "load_checkpoint",
    "lstm_ln_step",
    "save_checkpoint",
]
