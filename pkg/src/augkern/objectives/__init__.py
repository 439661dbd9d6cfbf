"""Augmented objectives, their approximations and related checks."""

from augkern.objectives.core import (
    MODES,
    Dataset,
    ObjectiveSpec,
    TrainResult,
    averaged_features,
    averaged_kernel,
    objective_gradient,
    objective_value,
    objective_values,
    parse_expectation,
    prediction_kl,
    train,
    transformed_inputs,
)
from augkern.objectives.features import FeatureMap
from augkern.objectives.losses import LossModel, loss_eval
from augkern.objectives.prop1 import Prop1Report, proposition1_check
from augkern.objectives.synthetic import gaussian_mixture

__all__ = [
    "MODES", "Dataset", "ObjectiveSpec", "TrainResult", "averaged_features",
    "averaged_kernel", "objective_gradient", "objective_value", "objective_values",
    "parse_expectation", "prediction_kl", "train", "transformed_inputs", "FeatureMap",
    "LossModel", "loss_eval", "Prop1Report", "proposition1_check", "gaussian_mixture",
]
