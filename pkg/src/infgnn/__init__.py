"""Continual spatio-temporal forecasting on growing, drifting graphs."""

__version__ = "0.1.0"

from .graph import DynamicGraphSequence, FeatureTensor, Interval, IntervalGraph
from .io import load_dataset, write_dataset
from .synthetic import SynthConfig, generate_synthetic_drift
from .trainer import TrainConfig, run_continual

__all__ = [
    "DynamicGraphSequence", "FeatureTensor", "Interval", "IntervalGraph", "SynthConfig",
    "TrainConfig", "generate_synthetic_drift", "load_dataset", "run_continual", "write_dataset",
]
