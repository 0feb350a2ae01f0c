"""
Adam with decoupled weight decay.

    m_t = β1·m + (1 − β1)·g
    v_t = β2·v + (1 − β2)·g²
    θ  ← θ − lr·wd·θ − lr · m̂_t / (√v̂_t + ε)

Each parameter keeps its own step count, so a parameter that receives no gradient
in a step (no gradient path, or a deferred codebook update) is left untouched and
its bias correction stays consistent.
"""
import logging
from typing import Dict, Iterable, Optional

import numpy as np

from app.core.tensor import Tensor
from app.exceptions import TrainingDivergenceError, ValidationError

logger = logging.getLogger(__name__)

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


class AdamOptimizer:
    def __init__(self, parameters: Dict[str, Tensor], lr: float, weight_decay: float = 0.0,
                 beta1: float = BETA1, beta2: float = BETA2, eps: float = EPS):
        if not lr > 0:
            raise ValidationError(f"learning rate must be > 0, got {lr}", learning_rate=lr)
        if weight_decay < 0:
            raise ValidationError(f"weight decay must be >= 0, got {weight_decay}")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ValidationError(f"invalid betas ({beta1}, {beta2})")

        self.parameters = dict(parameters)
        self.lr = lr
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.state: Dict[str, Dict] = {
            name: {
                "step": 0,
                "exp_avg": np.zeros_like(p.data),
                "exp_avg_sq": np.zeros_like(p.data),
            }
            for name, p in self.parameters.items()
        }
        logger.debug(f"Adam over {len(self.parameters)} tensors: lr={lr}, weight_decay={weight_decay}")

    def zero_grad(self):
        for p in self.parameters.values():
            p.zero_grad()

    def collect_grads(self, names: Optional[Iterable[str]] = None) -> Dict[str, np.ndarray]:
        """Current .grad buffers of the registered parameters that have one."""
        selected = self.parameters if names is None else {n: self.parameters[n] for n in names}
        return {name: p.grad for name, p in selected.items() if p.grad is not None}

    def step(self, grads: Dict[str, np.ndarray]):
        """Apply one update to every parameter named in `grads`."""
        for name, g in grads.items():
            if name not in self.parameters:
                raise ValidationError(f"gradient for unregistered parameter {name}", parameter=name)
            if not np.all(np.isfinite(g)):
                raise TrainingDivergenceError(
                    f"non-finite gradient for parameter {name} at step {self.step_count + 1}",
                    parameter=name, step=self.step_count + 1,
                )

        for name, g in grads.items():
            p = self.parameters[name]
            state = self.state[name]
            state["step"] += 1
            t = state["step"]
            exp_avg, exp_avg_sq = state["exp_avg"], state["exp_avg_sq"]
            exp_avg *= self.beta1
            exp_avg += (1.0 - self.beta1) * g
            exp_avg_sq *= self.beta2
            exp_avg_sq += (1.0 - self.beta2) * g * g

            m_hat = exp_avg / (1.0 - self.beta1 ** t)
            v_hat = exp_avg_sq / (1.0 - self.beta2 ** t)
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

        self.step_count += 1

    # ============== Persistence ==============

    def state_arrays(self) -> Dict[str, np.ndarray]:
        out = {"step_count": np.array(float(self.step_count))}
        for name, state in self.state.items():
            out[f"{name}.step"] = np.array(float(state["step"]))
            out[f"{name}.exp_avg"] = state["exp_avg"]
            out[f"{name}.exp_avg_sq"] = state["exp_avg_sq"]
        return out

    def load_state_arrays(self, arrays: Dict[str, np.ndarray]):
        self.step_count = int(arrays.get("step_count", np.array(0.0)))
        for name, state in self.state.items():
            if f"{name}.exp_avg" not in arrays:
                continue
            state["step"] = int(arrays[f"{name}.step"])
            state["exp_avg"] = np.array(arrays[f"{name}.exp_avg"], dtype=np.float64).reshape(state["exp_avg"].shape)
            state["exp_avg_sq"] = np.array(arrays[f"{name}.exp_avg_sq"], dtype=np.float64).reshape(
                state["exp_avg_sq"].shape
            )
