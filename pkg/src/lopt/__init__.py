"""Desk-scale soft-prompt tuning with low-rank prompt parameterizations.

Core pieces: a float64 tape-autodiff tensor engine, a small frozen
decoder-only transformer, full/low-rank prompt parameterizations with
exact parameter accounting, Adafactor, synthetic classification tasks,
a config-driven training harness with CLI, and independent numerical
oracles (finite differences, Jacobi SVD).
"""

from .backend import active_backend, available_backends
from .data import Dataset, Example, Verbalizer, Vocab, generate_task
from .exceptions import LoptError
from .harness import ExperimentConfig, RunMetrics, evaluate, train
from .model import InputEmbeddings, ModelDims, TinyLM, pretrain
from .optim import Adafactor, Sgd
from .prompts import (
    FullPrompt,
    LoPT1,
    LoPT2,
    init_prompt,
    materialize,
    parameter_count,
    reduction_rate,
    trainable_parameters,
)
from .tensor import ELU, GELU, RELU, Nonlinearity, Tensor, backward
from .verify import effective_rank, finite_diff_grad, singular_values

__version__ = "0.1.0"

__all__ = [
    "Adafactor",
    "Dataset",
    "ELU",
    "Example",
    "ExperimentConfig",
    "FullPrompt",
    "GELU",
    "InputEmbeddings",
    "LoPT1",
    "LoPT2",
    "LoptError",
    "ModelDims",
    "Nonlinearity",
    "RELU",
    "RunMetrics",
    "Sgd",
    "Tensor",
    "TinyLM",
    "Verbalizer",
    "Vocab",
    "active_backend",
    "available_backends",
    "backward",
    "effective_rank",
    "evaluate",
    "finite_diff_grad",
    "generate_task",
    "init_prompt",
    "materialize",
    "parameter_count",
    "pretrain",
    "reduction_rate",
    "singular_values",
    "train",
    "trainable_parameters",
]
