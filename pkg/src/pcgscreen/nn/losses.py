"""Binary cross-entropy and its gradients."""

from __future__ import annotations

import numpy as np

CLIP_EPS = 1e-7


def _clip(p: np.ndarray) -> np.ndarray:
    return np.clip(p, CLIP_EPS, 1.0 - CLIP_EPS)


def bce_loss(p, y) -> np.ndarray:
    """Elementwise -[y ln p + (1-y) ln(1-p)] with probabilities clipped."""
    p = _clip(np.asarray(p, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    return -(y * np.log(p) + (1.0 - y) * np.log1p(-p))


def bce_grad(p, y) -> np.ndarray:
    """dL/dp on the clipped probability."""
    p = _clip(np.asarray(p, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    return (p - y) / (p * (1.0 - p))


def bce_sigmoid_grad(p, y) -> np.ndarray:
    """Fused dL/dz for a sigmoid head: simply p - y."""
    return np.asarray(p, dtype=np.float64) - np.asarray(y, dtype=np.float64)
