from . import tensor as ops
from .gradcheck import max_relative_error
from .layers import BiLSTM, GRUCell, LSTM, Linear, MLP, MultiHeadAttention, sinusoidal_encoding
from .params import CHECKPOINT_MAGIC, ParamStore, adam_step
from .tensor import Graph, ShapeError, Tensor, backward

__all__ = [
    "ops", "Tensor", "Graph", "ShapeError", "backward", "ParamStore", "adam_step",
    "CHECKPOINT_MAGIC", "Linear", "MLP", "MultiHeadAttention", "GRUCell", "LSTM",
    "BiLSTM", "sinusoidal_encoding", "max_relative_error",
]
