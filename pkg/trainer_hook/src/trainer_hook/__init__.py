"""Training-loop exporter for metaselect run bundles.

Instrument a training loop with an ExportSession, capture per-epoch,
per-seed, and MC-dropout log-probabilities plus embeddings and token
scores, and finalize a bundle directory the engine's `validate`,
`characterize`, and `select` commands consume directly.
"""

from . import errors
from .errors import ExportError, IncompleteCapture, OutOfOrderEpoch, ShapeMismatch
from .session import ExportSession
from .toy import (
    TinyMlp,
    ToyTask,
    make_toy_task,
    run_toy_session,
    sentence_embeddings,
    train_toy_model,
    unigram_scorer,
)

__version__ = "0.1.0"

__all__ = [
    "ExportError",
    "ExportSession",
    "IncompleteCapture",
    "OutOfOrderEpoch",
    "ShapeMismatch",
    "TinyMlp",
    "ToyTask",
    "errors",
    "make_toy_task",
    "run_toy_session",
    "sentence_embeddings",
    "train_toy_model",
    "unigram_scorer",
]
