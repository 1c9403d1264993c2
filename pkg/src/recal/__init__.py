"""Recursive lossy label-invariant calibration of classifier logits."""

from .data import (
    GLOBAL_TRANSFORM_INDEX,
    CalibrationIteration,
    CalibrationMap,
    ComparisonMode,
    FitConfig,
    GroupPartition,
    ImageTensorSet,
    LogitsTable,
    TransformationKind,
    TransformationPool,
    TransformationSpec,
)
from .exceptions import ContractError, DomainError, FormatError, ParseError, ReCalError
from .recursive import ReCal, build_pool
from .temperature import TemperatureScaling

__version__ = "0.1.0"

__all__ = [
    "GLOBAL_TRANSFORM_INDEX",
    "CalibrationIteration",
    "CalibrationMap",
    "ComparisonMode",
    "ContractError",
    "DomainError",
    "FitConfig",
    "FormatError",
    "GroupPartition",
    "ImageTensorSet",
    "LogitsTable",
    "ParseError",
    "ReCal",
    "ReCalError",
    "TemperatureScaling",
    "TransformationKind",
    "TransformationPool",
    "TransformationSpec",
    "build_pool",
]
