"""Concolic testing and verification of individual fairness for ReLU networks."""
from .concolic import concolic_forward, exploration, next_target
from .driver import (
    Budget,
    Mode,
    Outcome,
    Witness,
    bias_estimate,
    check_dataset,
    check_instance,
    verify_fairness,
)
from .dual import build_dual, dual_output, split_input
from .formats import SCHEMA_VERSION, TOOL_VERSION
from .model import AttributeSpec, LayerSpec, ModelSpec, dump_model, forward, load_model, predict

__version__ = TOOL_VERSION

__all__ = [
    "AttributeSpec",
    "LayerSpec",
    "ModelSpec",
    "load_model",
    "dump_model",
    "forward",
    "predict",
    "concolic_forward",
    "exploration",
    "next_target",
    "build_dual",
    "dual_output",
    "split_input",
    "Budget",
    "Mode",
    "Outcome",
    "Witness",
    "check_instance",
    "check_dataset",
    "verify_fairness",
    "bias_estimate",
]
