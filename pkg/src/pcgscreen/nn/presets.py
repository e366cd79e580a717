"""The seven investigated architecture variants plus the proposed model.

EXP1..EXP7 encode the literal conv/pool stacks of the variant sweep; BEST
is the proposed four-block model (conv -> pool 2x2 -> 25% dropout per
block).  Every preset ends with flatten -> 50% dropout -> dense(1, sigmoid).
"""

from __future__ import annotations

from .model import ModelConfig, conv, dense, dropout, flatten, maxpool

INPUT_SHAPE = (1, 137, 310)

_HEAD = (flatten(), dropout(0.5), dense(1, "sigmoid"))

_EXP_STACKS = {
    "EXP1": (conv(128, 3, 3), maxpool(3, 3),
             conv(256, 3, 3), maxpool(3, 3),
             conv(512, 3, 3), maxpool(3, 3)),
    "EXP2": (conv(128, 3, 3), maxpool(3, 3),
             conv(512, 3, 3), maxpool(3, 3),
             conv(128, 3, 3), maxpool(3, 3)),
    "EXP3": (conv(128, 3, 3), maxpool(2, 2),
             conv(256, 3, 3), maxpool(2, 2),
             conv(128, 3, 3), maxpool(2, 2)),
    "EXP4": (conv(128, 3, 3), maxpool(2, 2),
             conv(256, 3, 3), maxpool(2, 2),
             conv(128, 3, 3),
             conv(64, 3, 3)),
    "EXP5": (conv(96, 11, 11), maxpool(3, 3),
             conv(256, 5, 5),
             conv(384, 3, 3),
             conv(384, 3, 3),
             conv(256, 3, 3), maxpool(3, 3)),
    "EXP6": (conv(96, 11, 11), maxpool(3, 3),
             conv(256, 5, 5), maxpool(3, 3),
             conv(384, 3, 3),
             conv(384, 3, 3),
             conv(256, 3, 3), maxpool(3, 3)),
    "EXP7": (conv(16, 3, 3), maxpool(3, 3),
             conv(32, 2, 2), maxpool(3, 3),
             conv(64, 2, 2),
             conv(128, 2, 2),
             conv(256, 2, 2), maxpool(3, 3),
             conv(256, 2, 2)),
}


def exp_config(n: int, input_shape=INPUT_SHAPE) -> ModelConfig:
    name = f"EXP{n}"
    if name not in _EXP_STACKS:
        raise KeyError(f"no such variant: {name}")
    return ModelConfig(name=name, input_shape=tuple(input_shape),
                       layers=_EXP_STACKS[name] + _HEAD)


def best_config(input_shape=INPUT_SHAPE,
                widths=(128, 256, 128, 64),
                block_dropout: float = 0.25,
                head_dropout: float = 0.5,
                name: str = "BEST") -> ModelConfig:
    """Four conv blocks, each conv(w, 3x3) -> maxpool(2x2) -> dropout.

    ``widths``/dropout knobs exist so tests can build reduced-width
    miniatures with the same block structure.
    """
    layers: list = []
    for w in widths:
        layers.append(conv(w, 3, 3))
        layers.append(maxpool(2, 2))
        if block_dropout > 0:
            layers.append(dropout(block_dropout))
    layers.append(flatten())
    if head_dropout > 0:
        layers.append(dropout(head_dropout))
    layers.append(dense(1, "sigmoid"))
    return ModelConfig(name=name, input_shape=tuple(input_shape),
                       layers=tuple(layers))


def preset(name: str, input_shape=INPUT_SHAPE) -> ModelConfig:
    if name == "BEST":
        return best_config(input_shape)
    if name.startswith("EXP"):
        return exp_config(int(name[3:]), input_shape)
    raise KeyError(f"unknown preset {name!r}")


PRESET_NAMES = tuple(f"EXP{i}" for i in range(1, 8)) + ("BEST",)
