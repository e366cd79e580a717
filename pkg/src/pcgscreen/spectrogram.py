"""Hamming-windowed STFT and spectrogram image rendering.

Each 16000-sample segment becomes a 65x249 one-sided magnitude grid
(128-point FFT, 64-sample hop), rendered to the fixed 137x310 image the
classifier consumes: log power, bilinear resize, per-image min-max
normalization.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dsp import Segment
from .errors import CacheCorrupt, SegmentTooShort
from .signal_io import CANONICAL_RATE, Label

FFT_LEN = 128
HOP = 64
N_BINS = FFT_LEN // 2 + 1  # 65
BIN_HZ = CANONICAL_RATE / FFT_LEN  # 15.625
IMAGE_ROWS = 137
IMAGE_COLS = 310

HAMMING_ALPHA = 0.54
LOG_FLOOR = 1e-10

_SPC_MAGIC = b"SPCG"
_SPC_VERSION = 1


@dataclass
class HammingWindow:
    coefficients: np.ndarray
    alpha: float = HAMMING_ALPHA


def hamming(length: int = FFT_LEN) -> HammingWindow:
    """h[n] = 0.54 - 0.46 cos(2 pi n / N) with N = length - 1.

    Built mirror-symmetrically so h[n] == h[N - n] holds bitwise and the
    endpoints are exactly 0.54 - 0.46.
    """
    if length < 2:
        raise ValueError("window needs at least 2 points")
    big_n = length - 1
    n = np.arange(length, dtype=np.float64)
    coeffs = HAMMING_ALPHA - (1.0 - HAMMING_ALPHA) * np.cos(2.0 * np.pi * n / big_n)
    half = (length + 1) // 2
    coeffs[length - half:] = coeffs[:half][::-1]
    return HammingWindow(coefficients=coeffs)


@dataclass
class RawSTFT:
    """One-sided magnitude grid: N_BINS rows x frame columns."""

    magnitudes: np.ndarray
    bin_hz: float = BIN_HZ
    hop: int = HOP
    source_id: str = ""
    label: Label | None = None


def _frames(x: np.ndarray, fft_len: int, hop: int) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(x, fft_len)
    return view[::hop]


def stft_complex(samples, window: HammingWindow,
                 fft_len: int = FFT_LEN, hop: int = HOP) -> np.ndarray:
    """Windowed one-sided DFT per frame, complex, shape (bins, frames).

    Frame m covers samples [m*hop, m*hop + fft_len).
    """
    x = np.asarray(samples, dtype=np.float64)
    if len(x) < fft_len:
        raise SegmentTooShort(f"{len(x)} samples < window length {fft_len}")
    if hop <= 0:
        raise ValueError("hop must be positive")
    if len(window.coefficients) != fft_len:
        raise ValueError("window length must equal fft_len")
    frames = _frames(x, fft_len, hop) * window.coefficients
    return np.fft.rfft(frames, n=fft_len, axis=1).T


def stft(seg, window: HammingWindow | None = None,
         fft_len: int = FFT_LEN, hop: int = HOP) -> RawSTFT:
    """Magnitude STFT of a segment (or bare sample array)."""
    if window is None:
        window = hamming(fft_len)
    if isinstance(seg, Segment):
        samples, source_id, label = seg.samples, seg.segment_id, seg.label
    else:
        samples, source_id, label = seg, "", None
    mags = np.abs(stft_complex(samples, window, fft_len, hop))
    return RawSTFT(magnitudes=mags, bin_hz=CANONICAL_RATE / fft_len, hop=hop,
                   source_id=source_id, label=label)


@dataclass
class SpectrogramImage:
    """Normalized log-power image in [0, 1], IMAGE_ROWS x IMAGE_COLS."""

    pixels: np.ndarray  # float32
    source_id: str = ""
    label: Label | None = None


def bilinear_resize(grid: np.ndarray, rows: int, cols: int) -> np.ndarray:
    """Endpoint-aligned bilinear interpolation onto a rows x cols grid.

    Uses the g0 + (g1 - g0)*f lerp form, which is exact when neighbors are
    equal, so a constant grid stays bitwise constant.
    """
    g = np.asarray(grid, dtype=np.float64)
    h, w = g.shape
    r = np.linspace(0.0, h - 1.0, rows) if rows > 1 else np.zeros(1)
    c = np.linspace(0.0, w - 1.0, cols) if cols > 1 else np.zeros(1)
    r0 = np.floor(r).astype(int)
    c0 = np.floor(c).astype(int)
    r1 = np.minimum(r0 + 1, h - 1)
    c1 = np.minimum(c0 + 1, w - 1)
    fr = (r - r0)[:, None]
    fc = (c - c0)[None, :]
    top = g[np.ix_(r0, c0)]
    top = top + (g[np.ix_(r0, c1)] - top) * fc
    bot = g[np.ix_(r1, c0)]
    bot = bot + (g[np.ix_(r1, c1)] - bot) * fc
    return top + (bot - top) * fr


def to_image(s: RawSTFT, rows: int = IMAGE_ROWS, cols: int = IMAGE_COLS) -> SpectrogramImage:
    """Log power -> bilinear resize -> min-max normalize to [0, 1].

    A constant grid (no dynamic range) normalizes to all zeros.
    """
    logp = 10.0 * np.log10(s.magnitudes.astype(np.float64) ** 2 + LOG_FLOOR)
    img = bilinear_resize(logp, rows, cols)
    lo, hi = img.min(), img.max()
    if hi > lo:
        img = (img - lo) / (hi - lo)
    else:
        img = np.zeros_like(img)
    return SpectrogramImage(pixels=img.astype(np.float32),
                            source_id=s.source_id, label=s.label)


def segment_to_image(seg: Segment, window: HammingWindow | None = None) -> SpectrogramImage:
    return to_image(stft(seg, window))


# --------------------------------------------------------------------------
# Spectrogram cache
# --------------------------------------------------------------------------

def write_spectrogram(image: SpectrogramImage, path) -> None:
    """Header (magic, version, label, rows, cols), float32 pixels, then the
    length-prefixed provenance id."""
    if image.label is None:
        raise ValueError("refusing to cache an unlabeled spectrogram")
    rows, cols = image.pixels.shape
    ident = image.source_id.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_SPC_MAGIC)
        fh.write(struct.pack("<IBII", _SPC_VERSION, int(image.label), rows, cols))
        fh.write(np.asarray(image.pixels, dtype="<f4").tobytes())
        fh.write(struct.pack("<I", len(ident)))
        fh.write(ident)


def read_spectrogram(path) -> SpectrogramImage:
    path = Path(path)
    data = path.read_bytes()
    head = len(_SPC_MAGIC) + struct.calcsize("<IBII")
    if len(data) < head or data[:4] != _SPC_MAGIC:
        raise CacheCorrupt(f"{path}: bad spectrogram cache file")
    version, label, rows, cols = struct.unpack_from("<IBII", data, 4)
    if version != _SPC_VERSION:
        raise CacheCorrupt(f"{path}: unsupported version {version}")
    body = rows * cols * 4
    if len(data) < head + body + 4:
        raise CacheCorrupt(f"{path}: truncated pixel block")
    pixels = np.frombuffer(data[head:head + body], dtype="<f4").reshape(rows, cols)
    (id_len,) = struct.unpack_from("<I", data, head + body)
    ident = data[head + body + 4:head + body + 4 + id_len]
    if len(ident) != id_len:
        raise CacheCorrupt(f"{path}: truncated provenance id")
    return SpectrogramImage(pixels=pixels.astype(np.float32),
                            source_id=ident.decode("utf-8"), label=Label(label))


def write_pgm(image: SpectrogramImage, path) -> None:
    """8-bit PGM export for eyeballing spectrograms."""
    px = np.clip(np.round(image.pixels * 255.0), 0, 255).astype(np.uint8)
    rows, cols = px.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(px.tobytes())
