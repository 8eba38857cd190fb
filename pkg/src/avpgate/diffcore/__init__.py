"""Small reverse-mode autodiff engine used by the network."""

from .kernels import BACKEND, crc64
from .ops import (attention_pool, bilstm, conv1d, dropout, finite_diff_check, linear,
                  lstm_sequence, lstm_step, lstm_weights)
from .tensor import Tape, Tensor, backward

__all__ = [
    "BACKEND", "Tape", "Tensor", "attention_pool", "backward", "bilstm", "conv1d", "crc64",
    "dropout", "finite_diff_check", "linear", "lstm_sequence", "lstm_step", "lstm_weights",
]
