"""Temporal graph network for citation link prediction and paper recommendation."""

from .config import TrainConfig
from .data import SyntheticConfig, generate_synthetic, load_checkpoint, load_citation_dataset, save_checkpoint
from .graph import TemporalGraph
from .model import RandomScorer, TGNTRec
from .training import Trainer, evaluate, run_ablation, train

__all__ = [
    "RandomScorer",
    "SyntheticConfig",
    "TGNTRec",
    "TemporalGraph",
    "TrainConfig",
    "Trainer",
    "evaluate",
    "generate_synthetic",
    "load_checkpoint",
    "load_citation_dataset",
    "run_ablation",
    "save_checkpoint",
    "train",
]
