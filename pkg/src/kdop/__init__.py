"""Stacked outcome prediction from dynamic and static patient data.

An attention LSTM autoencoder trained on negative-outcome series turns each
patient's reconstruction error into a sample weight for a gradient-boosted
classifier over static features.
"""
from .config import PipelineConfig, load_config
from .dynamic_kd import TrainConfig
from .pipeline import cross_validate, explain, run_fold
from .static_op import GbConfig
from .synth import SynthConfig, generate

__version__ = "0.1.0"

__all__ = ["PipelineConfig", "load_config", "TrainConfig", "GbConfig", "SynthConfig", "generate",
           "cross_validate", "run_fold", "explain", "__version__"]
