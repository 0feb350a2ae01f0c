"""
Error hierarchy
Every error carries an error_code and a human-readable message
"""
from typing import Any, Dict


class VTDError(Exception):
    """Base error. `detail` mirrors the {"error_code", "message"} payload shape."""

    error_code = "VTD_ERROR"

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context = context

    @property
    def detail(self) -> Dict[str, Any]:
        detail = {"error_code": self.error_code, "message": self.message}
        if self.context:
            detail["context"] = self.context
        return detail

    def __str__(self) -> str:
        return self.message


class DimensionError(VTDError):
    error_code = "DIMENSION_MISMATCH"


class DomainError(VTDError):
    error_code = "DOMAIN_ERROR"


class DegenerateInputError(VTDError):
    error_code = "DEGENERATE_INPUT"


class VocabularyIndexError(VTDError, IndexError):
    error_code = "INDEX_OUT_OF_RANGE"


class TargetIndexError(VTDError, IndexError):
    error_code = "INDEX_OUT_OF_RANGE"


class ValidationError(VTDError):
    error_code = "VALIDATION_ERROR"


class TrainingDivergenceError(VTDError):
    error_code = "TRAINING_DIVERGED"


class FrozenWeightError(VTDError):
    error_code = "FROZEN_WEIGHTS_MUTATED"


class CheckpointError(VTDError):
    error_code = "CHECKPOINT_INVALID"


class ConfigError(VTDError):
    error_code = "CONFIG_INVALID"


class DatasetError(VTDError):
    error_code = "DATASET_INVALID"
