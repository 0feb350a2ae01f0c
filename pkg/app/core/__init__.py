from app.core.tensor import ComputationTape, Tensor, current_tape

__all__ = ["ComputationTape", "Tensor", "current_tape"]
