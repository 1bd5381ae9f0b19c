"""Adam with decoupled weight decay."""

from typing import Dict, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from glat.exceptions import DimensionMismatchError, NonFiniteGradientError
from glat.models import ModelParams, TrainConfig


class AdamState(BaseModel):
    """First/second moment estimates and the step counter."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    step: int = 0
    m: Dict[str, np.ndarray] = Field(default_factory=dict)
    v: Dict[str, np.ndarray] = Field(default_factory=dict)


def adam_update(
    value: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    step: int,
    config: TrainConfig,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    One Adam step for a single array.

    Returns:
        (new value, new first moment, new second moment)
    """
    m = config.beta1 * m + (1.0 - config.beta1) * grad
    v = config.beta2 * v + (1.0 - config.beta2) * (grad * grad)
    m_hat = m / (1.0 - config.beta1**step)
    v_hat = v / (1.0 - config.beta2**step)
    new_value = (
        value
        - config.lr * m_hat / (np.sqrt(v_hat) + config.eps)
        - config.lr * config.weight_decay * value
    )
    return new_value, m, v


def adam_step(
    params: ModelParams,
    grads: Dict[str, np.ndarray],
    state: AdamState,
    config: TrainConfig,
) -> Tuple[ModelParams, AdamState]:
    """
    Apply one optimizer step to every trainable array.

    Args:
        params: Current parameters (not modified)
        grads: Gradients keyed like ``params.arrays()``
        state: Optimizer state (not modified)
        config: lr, weight decay, betas, eps

    Returns:
        (updated parameters, updated state)

    Raises:
        NonFiniteGradientError: If an update is not finite
    """
    step = state.step + 1
    new_arrays: Dict[str, np.ndarray] = {}
    new_m: Dict[str, np.ndarray] = {}
    new_v: Dict[str, np.ndarray] = {}

    for name, value in params.arrays().items():
        grad = grads[name]
        if grad.shape != value.shape:
            raise DimensionMismatchError(f"Gradient for {name} has shape {grad.shape}, expected {value.shape}")
        m = state.m.get(name, np.zeros_like(value))
        v = state.v.get(name, np.zeros_like(value))
        new_value, new_m[name], new_v[name] = adam_update(value, grad, m, v, step, config)
        if not np.all(np.isfinite(new_value)):
            raise NonFiniteGradientError(name)
        new_arrays[name] = new_value

    return params.with_arrays(new_arrays), AdamState(step=step, m=new_m, v=new_v)
