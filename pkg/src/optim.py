"""
AdamW optimizer over named numpy parameters.
Parameters are updated in place; moment estimates are kept per parameter name.
"""

from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np


@dataclass
class _Moments:
    m: np.ndarray
    v: np.ndarray
    steps: np.ndarray


@dataclass
class AdamW:
    """
    Adam with decoupled weight decay.

    ``step`` accepts an optional boolean row mask: rows outside the mask keep
    their value and moment estimates (lazy update), so codewords that received
    no assignment in a batch stay where they are.
    """

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    state: Dict[str, _Moments] = field(default_factory=dict)

    def step(
        self,
        name: str,
        param: np.ndarray,
        grad: np.ndarray,
        rows: Optional[np.ndarray] = None,
        decay: bool = False,
    ) -> None:
        """
        Apply one update to ``param`` in place.

        Args:
            name: Key of the parameter's moment estimates
            param: Parameter array (0-d arrays are updated in place as well)
            grad: Gradient with the shape of ``param``
            rows: Optional boolean mask over the first axis
            decay: Apply decoupled weight decay to this parameter
        """
        grad = np.asarray(grad, dtype=np.float64)
        moments = self.state.get(name)
        if moments is None:
            lead = param.shape[0] if param.ndim else 1
            moments = _Moments(m=np.zeros_like(param), v=np.zeros_like(param), steps=np.zeros(lead))
            self.state[name] = moments

        if rows is None:
            rows = np.ones(moments.steps.shape[0], dtype=bool)
        if param.ndim == 0:
            self._update_scalar(moments, param, grad, bool(rows[0]), decay)
            return

        moments.steps[rows] += 1
        t = moments.steps[rows]
        shape = (-1,) + (1,) * (param.ndim - 1)
        moments.m[rows] = self.beta1 * moments.m[rows] + (1.0 - self.beta1) * grad[rows]
        moments.v[rows] = self.beta2 * moments.v[rows] + (1.0 - self.beta2) * grad[rows] ** 2
        m_hat = moments.m[rows] / (1.0 - self.beta1 ** t).reshape(shape)
        v_hat = moments.v[rows] / (1.0 - self.beta2 ** t).reshape(shape)
        if decay and self.weight_decay:
            param[rows] *= 1.0 - self.learning_rate * self.weight_decay
        param[rows] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)

    def _update_scalar(self, moments: _Moments, param: np.ndarray, grad: np.ndarray, live: bool, decay: bool) -> None:
        if not live:
            return
        moments.steps[0] += 1
        t = moments.steps[0]
        moments.m[...] = self.beta1 * moments.m + (1.0 - self.beta1) * grad
        moments.v[...] = self.beta2 * moments.v + (1.0 - self.beta2) * grad**2
        m_hat = moments.m / (1.0 - self.beta1**t)
        v_hat = moments.v / (1.0 - self.beta2**t)
        if decay and self.weight_decay:
            param[...] *= 1.0 - self.learning_rate * self.weight_decay
        param[...] -= self.learning_rate * m_hat / (np.sqrt(v_hat) + self.eps)
