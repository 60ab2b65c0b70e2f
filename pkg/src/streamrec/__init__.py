"""Streaming recommendation with stratified time-aware sampling and an
adaptively fused ensemble of neural collaborative-filtering members."""

from .core import ExperimentConfig, Interaction, Interactions, Reservoir, SeenIndex, StreamSchedule
from .harness import aggregate, run_prequential_phase, run_stream, run_training_phase

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig", "Interaction", "Interactions", "Reservoir", "SeenIndex",
    "StreamSchedule", "aggregate", "run_prequential_phase", "run_stream", "run_training_phase",
]
