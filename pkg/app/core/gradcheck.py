"""
Central finite-difference gradient checks.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Sequence

import numpy as np

from app.core.tensor import ComputationTape, Tensor

logger = logging.getLogger(__name__)

DEFAULT_STEP = 1e-4
DEFAULT_ABS_FLOOR = 1e-8


@dataclass
class GradCheckReport:
    max_rel_error: float
    per_input: Dict[str, float]
    checked_coordinates: int

    def passed(self, tolerance: float) -> bool:
        return self.max_rel_error < tolerance


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = DEFAULT_ABS_FLOOR) -> float:
    """max over elements of |a − n| / max(|a|, |n|); differences within `floor` count as exact."""
    diff = np.abs(np.asarray(analytic) - np.asarray(numeric))
    if not diff.size:
        return 0.0
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    rel = np.where(diff <= floor, 0.0, diff / np.maximum(scale, np.finfo(np.float64).tiny))
    return float(np.max(rel))


def numerical_gradient(fn: Callable[[], Tensor], tensor: Tensor, step: float = DEFAULT_STEP,
                       coordinates: Sequence[int] = None) -> np.ndarray:
    """
    Central differences of the scalar fn() w.r.t. `tensor.data`, perturbed in place.

    fn must rebuild its graph from the current data on every call. When
    `coordinates` is given only those flat indices are perturbed (others stay 0).
    """
    flat = tensor.data.reshape(-1)
    grad = np.zeros_like(flat)
    indices = range(flat.size) if coordinates is None else coordinates
    for i in indices:
        original = flat[i]
        flat[i] = original + step
        plus = fn().item()
        flat[i] = original - step
        minus = fn().item()
        flat[i] = original
        grad[i] = (plus - minus) / (2.0 * step)
    return grad.reshape(tensor.shape)


def analytic_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor]) -> Dict[int, np.ndarray]:
    for t in inputs:
        t.zero_grad()
    with ComputationTape() as tape:
        out = fn()
    tape.backward(out)
    return {id(t): (np.zeros_like(t.data) if t.grad is None else t.grad.copy()) for t in inputs}


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], step: float = DEFAULT_STEP,
                    floor: float = DEFAULT_ABS_FLOOR, max_coordinates: int = None,
                    rng: np.random.Generator = None) -> GradCheckReport:
    """
    Compare backward() against central differences for every tensor in `inputs`.

    `max_coordinates` bounds the perturbed coordinates per input (sampled with `rng`) for large tensors.
    """
    analytic = analytic_gradients(fn, inputs)
    per_input = {}
    checked = 0
    worst = 0.0
    for position, t in enumerate(inputs):
        coords = None
        if max_coordinates is not None and t.size > max_coordinates:
            rng = rng or np.random.default_rng(0)
            coords = sorted(rng.choice(t.size, size=max_coordinates, replace=False).tolist())
        numeric = numerical_gradient(fn, t, step=step, coordinates=coords)
        a = analytic[id(t)]
        if coords is not None:
            a = a.reshape(-1)[coords]
            numeric = numeric.reshape(-1)[coords]
        err = relative_error(a, numeric, floor)
        per_input[t.name or f"input_{position}"] = err
        checked += int(np.size(numeric))
        worst = max(worst, err)
    if worst > 1e-3:
        logger.warning(f"Gradient check worst relative error {worst:.3e} over {checked} coordinates")
    return GradCheckReport(max_rel_error=worst, per_input=per_input, checked_coordinates=checked)
