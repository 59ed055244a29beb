"""Parameter update rules.

Updates are applied in place to the arrays passed in, which are also
returned.  ``sgd_momentum`` keeps one velocity buffer per parameter and
``adam`` keeps two moment buffers, matching the planner's state multipliers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np

OPTIMIZERS = ("sgd", "sgd_momentum", "adam")


@dataclass(frozen=True)
class OptimizerConfig:
    kind: str = "adam"
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self) -> None:
        if self.kind not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.kind!r}; expected one of {OPTIMIZERS}")

    @property
    def state_slots(self) -> int:
        return {"sgd": 0, "sgd_momentum": 1, "adam": 2}[self.kind]


def sgd_update(
    param: np.ndarray, grad: np.ndarray, lr: float, velocity: np.ndarray = None, momentum: float = 0.0
) -> Tuple[np.ndarray, np.ndarray]:
    if velocity is None:
        param -= lr * grad
        return param, None
    velocity *= momentum
    velocity += grad
    param -= lr * velocity
    return param, velocity


def adam_update(
    param: np.ndarray,
    grad: np.ndarray,
    m: np.ndarray,
    v: np.ndarray,
    t: int,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One Adam step with bias correction; ``t`` counts from 1."""
    m *= beta1
    m += (1 - beta1) * grad
    v *= beta2
    v += (1 - beta2) * grad * grad
    m_hat = m / (1 - beta1**t)
    v_hat = v / (1 - beta2**t)
    param -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return param, m, v


def apply_update(
    config: OptimizerConfig, param: np.ndarray, grad: np.ndarray, state: List[np.ndarray], t: int, lr: float
) -> None:
    if config.kind == "sgd":
        sgd_update(param, grad, lr)
    elif config.kind == "sgd_momentum":
        sgd_update(param, grad, lr, velocity=state[0], momentum=config.momentum)
    else:
        adam_update(param, grad, state[0], state[1], t, lr, config.beta1, config.beta2, config.eps)
