"""
Dense f64 tensors with tape-based reverse-mode differentiation.

Operations record themselves onto the ComputationTape that is active in the
current thread (see `ComputationTape.__enter__`). With no active tape nothing is
recorded, which is how gradient-free evaluation runs.
"""
import logging
import threading
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)

_local = threading.local()


class Tensor:
    """Row-major f64 buffer plus an optional gradient buffer of the same shape."""

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        array = np.array(data, dtype=np.float64)
        self.data: np.ndarray = array
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self.name = name

    @classmethod
    def wrap(cls, array: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Adopt a freshly computed f64 array without copying it."""
        out = cls.__new__(cls)
        out.data = np.asarray(array, dtype=np.float64)
        out.requires_grad = requires_grad
        out.grad = None
        out.name = None
        return out

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return int(self.data.size)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy(), requires_grad=False, name=self.name)

    def zero_grad(self):
        self.grad = None

    def accumulate_grad(self, grad: np.ndarray):
        # += semantics: a tensor used at several graph sites sums its contributions
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True).reshape(self.data.shape)
        else:
            self.grad += grad

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    # Operator sugar; implementations live in app.core.ops
    def __add__(self, other):
        from app.core import ops
        return ops.add(self, other)

    def __sub__(self, other):
        from app.core import ops
        return ops.sub(self, other)

    def __mul__(self, other):
        from app.core import ops
        if isinstance(other, (int, float)):
            return ops.scale(self, float(other))
        return ops.mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        from app.core import ops
        return ops.scale(self, -1.0)

    def __matmul__(self, other):
        from app.core import ops
        return ops.matmul(self, other)

    @property
    def T(self):
        from app.core import ops
        return ops.transpose(self)


BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class TapeRecord:
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class ComputationTape:
    """
    Ordered record of differentiable operations for one forward pass.

    Confined to the thread that entered it. Use one tape per training step:

        with ComputationTape() as tape:
            loss = ...
        tape.backward(loss)
    """

    def __init__(self):
        self.records: List[TapeRecord] = []

    def __enter__(self) -> "ComputationTape":
        stack = _tape_stack()
        stack.append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()
        return False

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward: BackwardFn):
        self.records.append(TapeRecord(op, tuple(inputs), output, backward))

    def clear(self):
        self.records = []

    def backward(self, root: Tensor, grad: Optional[np.ndarray] = None, clear: bool = True):
        """Replay recorded rules in reverse order, accumulating into every input that requires grad."""
        if not root.requires_grad:
            logger.debug("backward() called on a tensor that does not require grad")
            if clear:
                self.clear()
            return
        seed = np.ones_like(root.data) if grad is None else np.array(grad, dtype=np.float64).reshape(root.shape)
        root.grad = seed.copy()

        for rec in reversed(self.records):
            out_grad = rec.output.grad
            if out_grad is None:
                continue
            input_grads = rec.backward(out_grad)
            for tensor, g in zip(rec.inputs, input_grads):
                if g is None or not tensor.requires_grad:
                    continue
                tensor.accumulate_grad(g)

        if clear:
            self.clear()


def _tape_stack() -> List[ComputationTape]:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = []
        _local.stack = stack
    return stack


def current_tape() -> Optional[ComputationTape]:
    stack = _tape_stack()
    return stack[-1] if stack else None


def make_result(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """Wrap an op output, recording it when a tape is active and some input needs grad."""
    tape = current_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor.wrap(data, requires_grad=needs_grad)
    if needs_grad:
        tape.record(op, inputs, out, backward)
    return out


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)
