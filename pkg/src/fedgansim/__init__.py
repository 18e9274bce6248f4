"""Simulation of backdoor attacks and defenses in federated conditional GAN training."""

from .cgan import CganModel, build_model
from .dataset import LabeledImage, ShapeCorpusSpec, TriggerSpec, generate_corpus
from .errors import ConfigError, DimensionError, FormatError, IngestionError, ValidationError
from .feddetect import DetectionState, ForestParams, anomaly_scores, detect_round
from .federation import ExperimentLog, FederationConfig, ModelConfig, fed_avg, run_experiment

__version__ = "0.1.0"

__all__ = [
    "CganModel", "build_model", "LabeledImage", "ShapeCorpusSpec", "TriggerSpec",
    "generate_corpus", "ConfigError", "DimensionError", "FormatError", "IngestionError",
    "ValidationError", "DetectionState", "ForestParams", "anomaly_scores", "detect_round",
    "ExperimentLog", "FederationConfig", "ModelConfig", "fed_avg", "run_experiment",
]
