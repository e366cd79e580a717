"""Adam optimizer with per-parameter moment state and freeze support."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch


@dataclass
class AdamState:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def clone(self) -> "AdamState":
        return AdamState(lr=self.lr, beta1=self.beta1, beta2=self.beta2,
                         eps=self.eps, t=self.t,
                         m={k: a.copy() for k, a in self.m.items()},
                         v={k: a.copy() for k, a in self.v.items()})


def adam_step(params: dict[str, np.ndarray],
              grads: dict[str, np.ndarray | None],
              state: AdamState,
              trainable: dict[str, bool] | None = None) -> None:
    """One in-place Adam update.

    theta <- theta - lr * (m / (1 - b1^t)) / (sqrt(v / (1 - b2^t)) + eps).
    Parameters flagged non-trainable (or with a None gradient) are left
    byte-for-byte untouched, moments included.
    """
    state.t += 1
    bc1 = 1.0 - state.beta1 ** state.t
    bc2 = 1.0 - state.beta2 ** state.t
    for name, theta in params.items():
        if trainable is not None and not trainable.get(name, True):
            continue
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != theta.shape:
            raise ShapeMismatch(f"{name}: grad {g.shape} vs param {theta.shape}")
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        theta -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


class Adam:
    """Convenience wrapper binding AdamState to a model's parameter dict."""

    def __init__(self, lr: float = 0.001, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)

    def step(self, model) -> None:
        adam_step(model.parameters(), model.gradients(), self.state,
                  model.trainable_flags())
