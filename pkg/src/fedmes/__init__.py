"""Personalized federated continual learning simulator with memory-corrected training and KNN inference."""

from fedmes.federation import ExperimentPlan, aggregate, run_experiment
from fedmes.inference import InferenceConfig
from fedmes.metrics import AccuracyTensor, MetricsReport
from fedmes.nn_core import ModelSpec
from fedmes.tasks import StreamSpec, generate_streams
from fedmes.trainer import TrainerConfig

__all__ = [
    "AccuracyTensor", "ExperimentPlan", "InferenceConfig", "MetricsReport", "ModelSpec",
    "StreamSpec", "TrainerConfig", "aggregate", "generate_streams", "run_experiment",
]
