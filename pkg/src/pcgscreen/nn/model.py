"""Declarative model configuration and the Model wrapper.

A ModelConfig is an ordered stack of LayerSpecs over a fixed input shape.
Validation propagates shapes through the stack (stride-1 same-padding
convolutions keep spatial dims, pools floor-divide) and rejects any
configuration that reaches a zero dimension or does not end in a
single-unit sigmoid head.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from ..errors import InvalidConfig, ShapeMismatch
from .layers import Conv2D, Dense, Dropout, Flatten, Layer, MaxPool2D


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # conv | pool | dropout | flatten | dense
    filters: int = 0
    kernel: tuple[int, int] = (0, 0)
    pool: tuple[int, int] = (0, 0)
    rate: float = 0.0
    units: int = 0
    activation: str = ""


def conv(filters: int, kh: int, kw: int, activation: str = "relu") -> LayerSpec:
    return LayerSpec(kind="conv", filters=filters, kernel=(kh, kw),
                     activation=activation)


def maxpool(ph: int, pw: int) -> LayerSpec:
    return LayerSpec(kind="pool", pool=(ph, pw))


def dropout(rate: float) -> LayerSpec:
    return LayerSpec(kind="dropout", rate=rate)


def flatten() -> LayerSpec:
    return LayerSpec(kind="flatten")


def dense(units: int, activation: str = "relu") -> LayerSpec:
    return LayerSpec(kind="dense", units=units, activation=activation)


@dataclass(frozen=True)
class ModelConfig:
    name: str
    input_shape: tuple[int, int, int]  # (C, H, W)
    layers: tuple[LayerSpec, ...]

    def shape_trace(self) -> list[tuple[int, ...]]:
        """Shapes after each layer; raises InvalidConfig on violations."""
        shape: tuple[int, ...] = tuple(self.input_shape)
        trace = [shape]
        for spec in self.layers:
            if spec.kind == "conv":
                if len(shape) != 3:
                    raise InvalidConfig(f"{self.name}: conv after flatten")
                if spec.filters < 1 or min(spec.kernel) < 1:
                    raise InvalidConfig(f"{self.name}: bad conv spec {spec}")
                shape = (spec.filters, shape[1], shape[2])
            elif spec.kind == "pool":
                if len(shape) != 3:
                    raise InvalidConfig(f"{self.name}: pool after flatten")
                h, w = shape[1] // spec.pool[0], shape[2] // spec.pool[1]
                if h < 1 or w < 1:
                    raise InvalidConfig(
                        f"{self.name}: pooling collapses {shape[1]}x{shape[2]} to zero")
                shape = (shape[0], h, w)
            elif spec.kind == "dropout":
                if not 0.0 <= spec.rate < 1.0:
                    raise InvalidConfig(f"{self.name}: dropout rate {spec.rate}")
            elif spec.kind == "flatten":
                if len(shape) != 2:
                    shape = (int(np.prod(shape)),)
            elif spec.kind == "dense":
                if len(shape) != 1:
                    raise InvalidConfig(f"{self.name}: dense needs flattened input")
                if spec.units < 1:
                    raise InvalidConfig(f"{self.name}: dense units {spec.units}")
                shape = (spec.units,)
            else:
                raise InvalidConfig(f"{self.name}: unknown layer kind {spec.kind!r}")
            trace.append(shape)
        return trace

    def validate(self) -> None:
        trace = self.shape_trace()
        last = self.layers[-1] if self.layers else None
        if last is None or last.kind != "dense" or last.units != 1 \
                or last.activation != "sigmoid":
            raise InvalidConfig(f"{self.name}: final layer must be dense(1, sigmoid)")
        if trace[-1] != (1,):
            raise InvalidConfig(f"{self.name}: head does not produce one output")

    def flatten_size(self) -> int:
        trace = self.shape_trace()
        for spec, shape in zip(self.layers, trace[1:]):
            if spec.kind == "flatten":
                return shape[0]
        raise InvalidConfig(f"{self.name}: no flatten layer")

    def to_json(self) -> str:
        return json.dumps({"name": self.name,
                           "input_shape": list(self.input_shape),
                           "layers": [asdict(s) for s in self.layers]})

    @classmethod
    def from_json(cls, text: str) -> "ModelConfig":
        raw = json.loads(text)
        layers = []
        for d in raw["layers"]:
            d["kernel"] = tuple(d["kernel"])
            d["pool"] = tuple(d["pool"])
            layers.append(LayerSpec(**d))
        return cls(name=raw["name"], input_shape=tuple(raw["input_shape"]),
                   layers=tuple(layers))


PROB_EPS = 1e-7  # probabilities clipped into the open interval


@dataclass
class Model:
    """A built network: config plus live layer objects holding parameters."""

    config: ModelConfig
    layers: list[Layer] = field(default_factory=list)
    dtype: type = np.float32

    @classmethod
    def build(cls, config: ModelConfig, seed: int, dtype=np.float32) -> "Model":
        """Instantiate layers and draw initial weights deterministically."""
        config.validate()
        rng = np.random.default_rng(seed)
        trace = config.shape_trace()
        layers: list[Layer] = []
        counters: dict[str, int] = {}
        for spec, in_shape in zip(config.layers, trace[:-1]):
            counters[spec.kind] = counters.get(spec.kind, 0) + 1
            n = counters[spec.kind]
            if spec.kind == "conv":
                layer = Conv2D(f"conv{n}", in_shape[0], spec.filters,
                               *spec.kernel, activation=spec.activation)
            elif spec.kind == "pool":
                layer = MaxPool2D(f"pool{n}", *spec.pool)
            elif spec.kind == "dropout":
                layer = Dropout(f"dropout{n}", spec.rate)
            elif spec.kind == "flatten":
                layer = Flatten(f"flatten{n}")
            else:
                layer = Dense(f"dense{n}", in_shape[0], spec.units,
                              activation=spec.activation)
            layer.init_params(rng, dtype)
            layers.append(layer)
        return cls(config=config, layers=layers, dtype=dtype)

    # -- parameter plumbing -------------------------------------------------

    def parameters(self) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for layer in self.layers:
            for key, arr in layer.params.items():
                out[f"{layer.name}.{key}"] = arr
        return out

    def gradients(self) -> dict[str, np.ndarray | None]:
        out: dict[str, np.ndarray | None] = {}
        for layer in self.layers:
            for key in layer.params:
                out[f"{layer.name}.{key}"] = layer.grads.get(key)
        return out

    def trainable_flags(self) -> dict[str, bool]:
        return {f"{layer.name}.{key}": layer.trainable
                for layer in self.layers for key in layer.params}

    def set_parameters(self, params: dict[str, np.ndarray]) -> None:
        own = self.parameters()
        if set(own) != set(params):
            raise ShapeMismatch("parameter name sets differ")
        for layer in self.layers:
            for key in layer.params:
                src = params[f"{layer.name}.{key}"]
                if src.shape != layer.params[key].shape:
                    raise ShapeMismatch(f"{layer.name}.{key}: shape "
                                        f"{src.shape} != {layer.params[key].shape}")
                layer.params[key] = src.astype(self.dtype).copy()

    def freeze(self, layer_names) -> None:
        names = set(layer_names)
        known = {layer.name for layer in self.layers}
        unknown = names - known
        if unknown:
            raise ShapeMismatch(f"cannot freeze unknown layers {sorted(unknown)}")
        for layer in self.layers:
            if layer.name in names:
                layer.trainable = False

    # -- forward / backward ---------------------------------------------------

    def _prep(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 3:  # (N, H, W) -> single channel
            x = x[:, None, :, :]
        c, h, w = self.config.input_shape
        if x.shape[1:] != (c, h, w):
            raise ShapeMismatch(f"expected input {(c, h, w)}, got {x.shape[1:]}")
        return x

    def forward(self, x, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        """Probabilities in the open interval (0, 1), one per input image."""
        out = self._prep(x)
        for layer in self.layers:
            out = layer.forward(out, train=train, rng=rng)
        p = out[:, 0]
        return np.clip(p, self.dtype(PROB_EPS), self.dtype(1.0 - PROB_EPS))

    def backward_from_logit_grad(self, dz: np.ndarray) -> None:
        """Backpropagate a gradient w.r.t. the head's pre-activation."""
        grad = self.layers[-1].backward(dz, preactivation=True)
        for layer in reversed(self.layers[:-1]):
            grad = layer.backward(grad)

    def predict_proba(self, x, batch_size: int = 128) -> np.ndarray:
        x = np.asarray(x)
        chunks = [self.forward(x[i:i + batch_size])
                  for i in range(0, len(x), batch_size)]
        return np.concatenate(chunks) if chunks else np.zeros(0, dtype=self.dtype)
