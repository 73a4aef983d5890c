"""
TVNet - Optimizer and Learning-Rate Schedules
"""

import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence

import numpy as np

from tvnet.core.errors import CheckpointError, NonFiniteError, ShapeError
from tvnet.core.tensor import Tensor

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    """Adam hyperparameters plus per-parameter moment estimates"""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    def to_arrays(self, prefix: str = "adam") -> Dict[str, np.ndarray]:
        """Flatten the state into named arrays for a checkpoint file"""
        arrays = {
            f"{prefix}/step": np.array([float(self.step)]),
            f"{prefix}/hyper": np.array([self.learning_rate, self.beta1, self.beta2, self.epsilon]),
        }
        for name, moment in self.first_moment.items():
            arrays[f"{prefix}/m/{name}"] = moment.astype(np.float64)
        for name, moment in self.second_moment.items():
            arrays[f"{prefix}/v/{name}"] = moment.astype(np.float64)
        return arrays

    @classmethod
    def from_arrays(cls, arrays: Mapping[str, np.ndarray], prefix: str = "adam") -> "AdamState":
        if f"{prefix}/step" not in arrays:
            raise CheckpointError("Checkpoint holds no optimizer state")
        hyper = arrays[f"{prefix}/hyper"]
        state = cls(
            learning_rate=float(hyper[0]),
            beta1=float(hyper[1]),
            beta2=float(hyper[2]),
            epsilon=float(hyper[3]),
            step=int(arrays[f"{prefix}/step"][0]),
        )
        for key, values in arrays.items():
            if key.startswith(f"{prefix}/m/"):
                state.first_moment[key[len(prefix) + 3:]] = np.array(values)
            elif key.startswith(f"{prefix}/v/"):
                state.second_moment[key[len(prefix) + 3:]] = np.array(values)
        return state


class StepSchedule:
    """
    Piecewise-constant learning rate by epoch

    rates[i] applies to epochs in [boundaries[i-1], boundaries[i]); the last rate
    applies from the last boundary on.
    """

    def __init__(self, boundaries: Sequence[int], rates: Sequence[float]):
        if len(rates) != len(boundaries) + 1:
            raise ValueError(f"StepSchedule needs {len(boundaries) + 1} rates for {len(boundaries)} boundaries")
        if list(boundaries) != sorted(boundaries):
            raise ValueError("StepSchedule boundaries must be sorted")
        self.boundaries = list(boundaries)
        self.rates = list(rates)

    def __call__(self, epoch: int) -> float:
        for boundary, rate in zip(self.boundaries, self.rates):
            if epoch < boundary:
                return rate
        return self.rates[-1]

    def __repr__(self) -> str:
        return f"StepSchedule(boundaries={self.boundaries}, rates={self.rates})"


def adam_step(
    state: AdamState,
    params: Sequence[Tensor],
    grads: Optional[Mapping[str, np.ndarray]] = None,
    schedule: Optional[Callable[[int], float]] = None,
) -> List[Tensor]:
    """
    Apply one bias-corrected Adam update in place

    Args:
        state: Optimizer state, updated in place
        params: Named parameters
        grads: Gradient per parameter name; defaults to each parameter's .grad
        schedule: Optional callback mapping the new step count to a learning rate

    Returns:
        List[Tensor]: The updated parameters

    Raises:
        NonFiniteError: If any gradient holds NaN or Inf; no parameter is touched
    """
    resolved = []
    for index, param in enumerate(params):
        name = param.name or f"param_{index}"
        grad = grads[name] if grads is not None else param.grad
        if grad is None:
            grad = np.zeros_like(param.data)
        grad = np.asarray(grad)
        if grad.shape != param.shape:
            raise ShapeError(f"Gradient for '{name}' has shape {grad.shape}, parameter has {param.shape}")
        if not np.all(np.isfinite(grad)):
            raise NonFiniteError(f"Non-finite gradient in parameter '{name}'")
        resolved.append((name, param, grad))

    state.step += 1
    if schedule is not None:
        state.learning_rate = float(schedule(state.step))
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step

    for name, param, grad in resolved:
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / correction1
        v_hat = v / correction2
        update = state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)
        param.data = (param.data - update).astype(param.dtype, copy=False)
    return [param for _, param, _ in resolved]
