"""Few-shot text classification with label templates, supervised contrastive
learning, and attention-weighted prototypes, on a small exactly-differentiable
encoder (or externally supplied fixed embeddings)."""

from . import autodiff, contrastive, encoder, episodes, model, protonet, serialize, synth, trainer
from .config import TrainConfig

__version__ = "0.1.0"

__all__ = [
    "autodiff", "contrastive", "encoder", "episodes", "model", "protonet",
    "serialize", "synth", "trainer", "TrainConfig", "__version__",
]
