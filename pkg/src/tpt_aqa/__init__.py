"""Temporal parsing transformer for action quality assessment, on a numpy autodiff engine."""

from .autodiff import Parameter, Tape, Tensor, backward
from .data import GeneratorConfig, ScoredVideo, generate_dataset
from .decoder import PartSet, TemporalParsingTransformer, TPTConfig
from .harness import RunConfig, ablate, evaluate, gradcheck, train
from .losses import LossWeights
from .metrics import EvalReport, relative_l2, spearman

__version__ = "0.1.0"
