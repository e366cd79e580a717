"""Binary model checkpoints.

Layout: magic 'PCGM', version, the JSON-serialized config, each parameter
tensor (name, dims, float32 data) in config order, trainable flags, an
optional Adam block, and a trailing CRC32 of everything before it.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import CacheCorrupt
from .model import Model, ModelConfig
from .optim import AdamState

MAGIC = b"PCGM"
VERSION = 1


@dataclass
class Checkpoint:
    config: ModelConfig
    params: dict[str, np.ndarray]  # float32 copies
    trainable: dict[str, bool]
    adam: AdamState | None = None

    @classmethod
    def from_model(cls, model: Model, adam: AdamState | None = None) -> "Checkpoint":
        params = {k: np.asarray(v, dtype=np.float32).copy()
                  for k, v in model.parameters().items()}
        return cls(config=model.config, params=params,
                   trainable=dict(model.trainable_flags()),
                   adam=adam.clone() if adam is not None else None)

    def to_model(self, dtype=np.float32) -> Model:
        model = Model.build(self.config, seed=0, dtype=dtype)
        model.set_parameters(self.params)
        for layer in model.layers:
            for key in layer.params:
                layer.trainable = self.trainable.get(f"{layer.name}.{key}",
                                                     layer.trainable)
        return model


def _pack_tensor(buf: bytearray, name: str, arr: np.ndarray) -> None:
    nb = name.encode("utf-8")
    buf += struct.pack("<H", len(nb)) + nb
    buf += struct.pack("<I", arr.ndim)
    buf += struct.pack(f"<{arr.ndim}I", *arr.shape)
    buf += np.ascontiguousarray(arr, dtype="<f4").tobytes()


class _Reader:
    def __init__(self, data: bytes, path):
        self.data = data
        self.off = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise CacheCorrupt(f"{self.path}: truncated checkpoint")
        out = self.data[self.off:self.off + n]
        self.off += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def tensor(self) -> tuple[str, np.ndarray]:
        (nlen,) = self.unpack("<H")
        name = self.take(nlen).decode("utf-8")
        (ndim,) = self.unpack("<I")
        dims = self.unpack(f"<{ndim}I")
        count = int(np.prod(dims)) if ndim else 1
        arr = np.frombuffer(self.take(count * 4), dtype="<f4")
        return name, arr.reshape(dims).astype(np.float32)


def checkpoint_bytes(ck: Checkpoint) -> bytes:
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<I", VERSION)
    cfg = ck.config.to_json().encode("utf-8")
    buf += struct.pack("<I", len(cfg)) + cfg
    names = list(ck.params)
    buf += struct.pack("<I", len(names))
    for name in names:
        _pack_tensor(buf, name, ck.params[name])
    for name in names:
        buf += struct.pack("<B", int(ck.trainable.get(name, True)))
    if ck.adam is None:
        buf += struct.pack("<B", 0)
    else:
        buf += struct.pack("<B", 1)
        buf += struct.pack("<Q", ck.adam.t)
        buf += struct.pack("<dddd", ck.adam.lr, ck.adam.beta1,
                           ck.adam.beta2, ck.adam.eps)
        for name in names:
            _pack_tensor(buf, name, ck.adam.m.get(
                name, np.zeros_like(ck.params[name])))
        for name in names:
            _pack_tensor(buf, name, ck.adam.v.get(
                name, np.zeros_like(ck.params[name])))
    buf += struct.pack("<I", zlib.crc32(bytes(buf)) & 0xFFFFFFFF)
    return bytes(buf)


def save_checkpoint(ck: Checkpoint, path) -> None:
    Path(path).write_bytes(checkpoint_bytes(ck))


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != MAGIC:
        raise CacheCorrupt(f"{path}: not a checkpoint file")
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    if zlib.crc32(data[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CacheCorrupt(f"{path}: CRC mismatch")
    r = _Reader(data[:-4], path)
    r.take(4)
    (version,) = r.unpack("<I")
    if version != VERSION:
        raise CacheCorrupt(f"{path}: unsupported version {version}")
    (cfg_len,) = r.unpack("<I")
    config = ModelConfig.from_json(r.take(cfg_len).decode("utf-8"))
    (n_params,) = r.unpack("<I")
    params: dict[str, np.ndarray] = {}
    for _ in range(n_params):
        name, arr = r.tensor()
        params[name] = arr
    names = list(params)
    trainable = {name: bool(r.unpack("<B")[0]) for name in names}
    (has_adam,) = r.unpack("<B")
    adam = None
    if has_adam:
        (t,) = r.unpack("<Q")
        lr, b1, b2, eps = r.unpack("<dddd")
        m = dict(r.tensor() for _ in names)
        v = dict(r.tensor() for _ in names)
        adam = AdamState(lr=lr, beta1=b1, beta2=b2, eps=eps, t=t, m=m, v=v)
    return Checkpoint(config=config, params=params, trainable=trainable, adam=adam)
