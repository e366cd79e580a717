"""Forward/backward implementations of the layer set.

Tensors are plain numpy arrays in NCHW layout (dense layers take NxD).
Layers cache whatever the backward pass needs; they are single-use per
forward call and must not be shared across concurrent invocations.
"""

from __future__ import annotations

import os

import numpy as np

from ..errors import ShapeMismatch

# When enabled, every layer asserts its outputs are finite.  Cheap insurance
# for tests; off by default in training runs.
DEBUG_CHECK_FINITE = bool(int(os.environ.get("PCGSCREEN_DEBUG_FINITE", "0")))


def _check_finite(name: str, *arrays) -> None:
    if not DEBUG_CHECK_FINITE:
        return
    for a in arrays:
        if a is not None and not np.all(np.isfinite(a)):
            raise FloatingPointError(f"{name}: non-finite values produced")


def relu(z: np.ndarray) -> np.ndarray:
    return np.maximum(z, z.dtype.type(0))


def sigmoid(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Layer:
    """Base class: parameters in ``params``, gradients in ``grads``."""

    def __init__(self, name: str):
        self.name = name
        self.trainable = True
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray | None] = {}

    def init_params(self, rng: np.random.Generator, dtype) -> None:
        pass

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError


def _same_pad(k: int) -> tuple[int, int]:
    # Stride-1 "same" padding; even kernels pad one extra at the end.
    before = (k - 1) // 2
    return before, k - 1 - before


class Conv2D(Layer):
    """Stride-1 cross-correlation with same (zero) padding.

    Weights (F, C, kh, kw) init He-normal for ReLU, biases zero.

    Internally the padded image is flattened row-major so that each kernel
    tap becomes one contiguous slice and one GEMM; the junk columns this
    sweeps through (the horizontal pad margin) are cropped from the output
    and pinned to zero in the gradient.  Wide layers fall back to plain
    im2col, where the single big GEMM dominates anyway.
    """

    _IM2COL_MIN_K = 288  # im2col when C*kh*kw reaches this

    def __init__(self, name, in_channels, filters, kh, kw, activation="relu"):
        super().__init__(name)
        if filters < 1 or kh < 1 or kw < 1:
            raise ShapeMismatch(f"{name}: bad conv geometry")
        self.in_channels = in_channels
        self.filters = filters
        self.kh, self.kw = kh, kw
        self.activation = activation
        self._cache = None
        self._mask = None

    def init_params(self, rng, dtype):
        fan_in = self.in_channels * self.kh * self.kw
        std = np.sqrt(2.0 / fan_in)
        w = rng.normal(0.0, std, size=(self.filters, self.in_channels, self.kh, self.kw))
        self.params = {"w": w.astype(dtype), "b": np.zeros(self.filters, dtype=dtype)}

    def _windows(self, xp):
        v = np.lib.stride_tricks.sliding_window_view(xp, (self.kh, self.kw),
                                                     axis=(2, 3))
        return v  # (N, C, H, W, kh, kw)

    def _taps(self, wp):
        return [(i, j, i * wp + j)
                for i in range(self.kh) for j in range(self.kw)]

    def forward(self, x, train=False, rng=None):
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ShapeMismatch(f"{self.name}: expected NCHW with "
                                f"{self.in_channels} channels, got {x.shape}")
        n, c, h, w = x.shape
        pt, pb = _same_pad(self.kh)
        pl, pr = _same_pad(self.kw)
        xp = np.pad(x, ((0, 0), (0, 0), (pt, pb), (pl, pr)))

        if c == 1:
            z = self._forward_single_channel(xp, h, w)
        elif c * self.kh * self.kw < self._IM2COL_MIN_K:
            z = self._forward_taps(xp, h, w)
        else:
            z = self._forward_im2col(xp)
        z += self.params["b"][None, :, None, None]
        if self.activation == "relu":
            out = relu(z)
            self._mask = out > 0
        else:
            out = z
            self._mask = None
        _check_finite(self.name, out)
        return out

    def backward(self, grad):
        if self._mask is not None:
            grad = grad * self._mask
        kind = self._cache[0]
        if kind == "c1":
            dx = self._backward_single_channel(grad)
        elif kind == "taps":
            dx = self._backward_taps(grad)
        else:
            dx = self._backward_im2col(grad)
        if self.trainable:
            self.grads["b"] = grad.sum(axis=(0, 2, 3))
        else:
            self.grads = {"w": None, "b": None}
        _check_finite(self.name, self.grads.get("w"), dx)
        return dx

    # -- single input channel: one stacked GEMM over all taps ---------------

    def _forward_single_channel(self, xp, h, w):
        n, _, hp, wp = xp.shape
        span = (h - 1) * wp + w
        x1 = xp.reshape(n, hp * wp)
        cols = np.empty((self.kh * self.kw, n, span), dtype=xp.dtype)
        for t, (_, _, d) in enumerate(self._taps(wp)):
            cols[t] = x1[:, d:d + span]
        wmat = self.params["w"].reshape(self.filters, -1).T  # (kh*kw, F)
        zc = cols.reshape(-1, n * span).T @ wmat
        # positions past `span` fall in the crop margin and are never read
        zf = np.empty((n, h * wp, self.filters), dtype=xp.dtype)
        zf[:, :span] = zc.reshape(n, span, self.filters)
        self._cache = ("c1", cols, (hp, wp, span))
        return self._fold_flat(zf, h, w, wp)

    def _backward_single_channel(self, grad):
        cols, (hp, wp, span) = self._cache[1], self._cache[2]
        n, _, h, w = grad.shape
        dz = self._unfold_flat(grad, wp, span).reshape(n * span, self.filters)
        if self.trainable:
            gw = cols.reshape(-1, n * span) @ dz  # (kh*kw, F)
            self.grads["w"] = np.ascontiguousarray(
                gw.T.reshape(self.filters, 1, self.kh, self.kw))
        wmat = self.params["w"].reshape(self.filters, -1)  # (F, kh*kw)
        dtaps = (dz @ wmat).T.reshape(self.kh * self.kw, n, span)
        dxf = np.zeros((n, hp * wp), dtype=grad.dtype)
        for t, (_, _, d) in enumerate(self._taps(wp)):
            dxf[:, d:d + span] += dtaps[t]
        pt, _ = _same_pad(self.kh)
        pl, _ = _same_pad(self.kw)
        return dxf.reshape(n, 1, hp, wp)[:, :, pt:pt + h, pl:pl + w]

    # -- few channels: one GEMM per tap on contiguous flat slices -----------

    def _forward_taps(self, xp, h, w):
        n, c, hp, wp = xp.shape
        span = (h - 1) * wp + w
        xf = np.ascontiguousarray(xp.transpose(0, 2, 3, 1)).reshape(n, hp * wp, c)
        w2 = np.ascontiguousarray(self.params["w"].transpose(2, 3, 1, 0))
        zf = np.empty((n, h * wp, self.filters), dtype=xp.dtype)
        zc = zf[:, :span]
        taps = self._taps(wp)
        _, _, d0 = taps[0]
        zc[:] = xf[:, d0:d0 + span] @ w2[0, 0]
        for i, j, d in taps[1:]:
            zc += xf[:, d:d + span] @ w2[i, j]
        self._cache = ("taps", xf, (hp, wp, span))
        return self._fold_flat(zf, h, w, wp)

    def _backward_taps(self, grad):
        xf, (hp, wp, span) = self._cache[1], self._cache[2]
        n, _, h, w = grad.shape
        c = self.in_channels
        dz = self._unfold_flat(grad, wp, span)
        if self.trainable:
            gw2 = np.empty((self.kh, self.kw, c, self.filters), dtype=grad.dtype)
            for i, j, d in self._taps(wp):
                seg = xf[:, d:d + span]
                gw2[i, j] = np.matmul(seg.transpose(0, 2, 1), dz).sum(axis=0)
            self.grads["w"] = np.ascontiguousarray(gw2.transpose(3, 2, 0, 1))
        w2 = self.params["w"].transpose(2, 3, 1, 0)
        dxf = np.zeros((n, hp * wp, c), dtype=grad.dtype)
        for i, j, d in self._taps(wp):
            dxf[:, d:d + span] += dz @ np.ascontiguousarray(w2[i, j].T)
        pt, _ = _same_pad(self.kh)
        pl, _ = _same_pad(self.kw)
        dxs = dxf.reshape(n, hp, wp, c)
        return np.ascontiguousarray(
            dxs[:, pt:pt + h, pl:pl + w, :].transpose(0, 3, 1, 2))

    # -- many channels: classic im2col, the GEMM dominates -------------------

    def _forward_im2col(self, xp):
        v = self._windows(xp)
        z = np.tensordot(v, self.params["w"], axes=([1, 4, 5], [1, 2, 3]))
        self._cache = ("im2col", xp, None)
        return np.ascontiguousarray(z.transpose(0, 3, 1, 2))

    def _backward_im2col(self, grad):
        xp = self._cache[1]
        n, _, h, w = grad.shape
        c = self.in_channels
        if self.trainable:
            v = self._windows(xp)
            self.grads["w"] = np.tensordot(grad, v, axes=([0, 2, 3], [0, 2, 3]))
        hp, wp = xp.shape[2], xp.shape[3]
        dxp = np.zeros((n, c, hp, wp), dtype=grad.dtype)
        for i, j, _ in self._taps(wp):
            contrib = np.tensordot(grad, self.params["w"][:, :, i, j], axes=(1, 0))
            dxp[:, :, i:i + h, j:j + w] += contrib.transpose(0, 3, 1, 2)
        pt, _ = _same_pad(self.kh)
        pl, _ = _same_pad(self.kw)
        return dxp[:, :, pt:pt + h, pl:pl + w]

    # -- flat-frame helpers ---------------------------------------------------

    def _fold_flat(self, zf, h, w, wp):
        """(N, H*Wp, F) flat frame -> NCHW with the pad margin cropped."""
        n = zf.shape[0]
        z = zf.reshape(n, h, wp, self.filters)[:, :, :w, :]
        return np.ascontiguousarray(z.transpose(0, 3, 1, 2))

    def _unfold_flat(self, grad, wp, span):
        """NCHW gradient -> flat NHWC frame; crop-margin columns stay zero."""
        n, f, h, w = grad.shape
        dzf = np.zeros((n, h, wp, f), dtype=grad.dtype)
        dzf[:, :, :w, :] = grad.transpose(0, 2, 3, 1)
        return dzf.reshape(n, h * wp, f)[:, :span]


class MaxPool2D(Layer):
    """Non-overlapping max pooling; stride equals the pool size.

    Spatial dims floor-divide; the cropped remainder receives zero gradient.
    Ties route the gradient to the first occurrence in row-major scan order.
    """

    def __init__(self, name, ph, pw):
        super().__init__(name)
        if ph < 1 or pw < 1:
            raise ShapeMismatch(f"{name}: bad pool size")
        self.ph, self.pw = ph, pw
        self._idx = None
        self._in_shape = None

    def forward(self, x, train=False, rng=None):
        n, c, h, w = x.shape
        ho, wo = h // self.ph, w // self.pw
        if ho < 1 or wo < 1:
            raise ShapeMismatch(f"{self.name}: input {h}x{w} smaller than pool")
        self._in_shape = x.shape
        xc = x[:, :, :ho * self.ph, :wo * self.pw]
        win = (xc.reshape(n, c, ho, self.ph, wo, self.pw)
                 .transpose(0, 1, 2, 4, 3, 5)
                 .reshape(n, c, ho, wo, self.ph * self.pw))
        self._idx = np.argmax(win, axis=-1)
        out = np.take_along_axis(win, self._idx[..., None], axis=-1)[..., 0]
        _check_finite(self.name, out)
        return out

    def backward(self, grad):
        n, c, h, w = self._in_shape
        ho, wo = grad.shape[2], grad.shape[3]
        win = np.zeros((n, c, ho, wo, self.ph * self.pw), dtype=grad.dtype)
        np.put_along_axis(win, self._idx[..., None], grad[..., None], axis=-1)
        dx = np.zeros(self._in_shape, dtype=grad.dtype)
        dx[:, :, :ho * self.ph, :wo * self.pw] = (
            win.reshape(n, c, ho, wo, self.ph, self.pw)
               .transpose(0, 1, 2, 4, 3, 5)
               .reshape(n, c, ho * self.ph, wo * self.pw))
        return dx


class Dropout(Layer):
    """Inverted dropout: survivors scaled by 1/(1-rate); inference is identity."""

    def __init__(self, name, rate):
        super().__init__(name)
        if not 0.0 <= rate < 1.0:
            raise ShapeMismatch(f"{name}: rate must be in [0, 1)")
        self.rate = rate
        self._mask = None

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ValueError(f"{self.name}: training-mode dropout needs an rng")
        keep = rng.random(x.shape) >= self.rate
        self._mask = keep.astype(x.dtype) / x.dtype.type(1.0 - self.rate)
        return x * self._mask

    def backward(self, grad):
        if self._mask is None:
            return grad
        return grad * self._mask


class Flatten(Layer):
    def __init__(self, name):
        super().__init__(name)
        self._in_shape = None

    def forward(self, x, train=False, rng=None):
        self._in_shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._in_shape)


class Dense(Layer):
    """Affine map plus activation ('relu', 'sigmoid' or 'linear')."""

    def __init__(self, name, in_features, units, activation="relu"):
        super().__init__(name)
        if units < 1:
            raise ShapeMismatch(f"{name}: units must be positive")
        self.in_features = in_features
        self.units = units
        self.activation = activation
        self._x = None
        self._out = None
        self._mask = None

    def init_params(self, rng, dtype):
        if self.activation == "sigmoid":
            # Glorot-uniform for the logistic head.
            limit = np.sqrt(6.0 / (self.in_features + self.units))
            w = rng.uniform(-limit, limit, size=(self.in_features, self.units))
        else:
            w = rng.normal(0.0, np.sqrt(2.0 / self.in_features),
                           size=(self.in_features, self.units))
        self.params = {"w": w.astype(dtype), "b": np.zeros(self.units, dtype=dtype)}

    def forward(self, x, train=False, rng=None):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeMismatch(f"{self.name}: expected (N, {self.in_features}), "
                                f"got {x.shape}")
        self._x = x
        z = x @ self.params["w"] + self.params["b"]
        if self.activation == "relu":
            out = relu(z)
            self._mask = out > 0
        elif self.activation == "sigmoid":
            out = sigmoid(z)
            self._out = out
        else:
            out = z
        _check_finite(self.name, out)
        return out

    def backward(self, grad, preactivation: bool = False):
        """``preactivation=True`` means ``grad`` is dL/dz already (the fused
        sigmoid + cross-entropy path)."""
        if not preactivation:
            if self.activation == "relu":
                grad = grad * self._mask
            elif self.activation == "sigmoid":
                grad = grad * self._out * (1.0 - self._out)
        if self.trainable:
            self.grads["w"] = self._x.T @ grad
            self.grads["b"] = grad.sum(axis=0)
        else:
            self.grads = {"w": None, "b": None}
        dx = grad @ self.params["w"].T
        _check_finite(self.name, dx)
        return dx
