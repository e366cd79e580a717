"""Bandpass filtering and fixed-window segmentation.

The heart-sound band of interest is 20-400 Hz.  A 4th-order Butterworth
lowpass prototype is transformed to a bandpass and discretized with the
pre-warped bilinear transform, which pins the -3 dB points exactly on the
requested edges and puts transfer-function zeros exactly at DC and Nyquist.
Filtered recordings are then cut into non-overlapping 8-second windows.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import sosfilt

from .errors import CacheCorrupt, InvalidBand, RateMismatch
from .signal_io import (
    CANONICAL_RATE,
    AudioRecording,
    DatasetManifest,
    Label,
    load_wav,
    resample,
)

log = logging.getLogger(__name__)

SEGMENT_SECONDS = 8
SEGMENT_SAMPLES = SEGMENT_SECONDS * CANONICAL_RATE  # 16000

DEFAULT_ORDER = 4
DEFAULT_LOW_HZ = 20.0
DEFAULT_HIGH_HZ = 400.0

_SEG_MAGIC = b"PCGS"
_SEG_VERSION = 1


@dataclass
class BandpassFilter:
    """Cascaded second-order sections, each (b0, b1, b2, a1, a2), a0 == 1."""

    sections: np.ndarray  # shape (n_sections, 5)
    order: int
    low_hz: float
    high_hz: float
    fs: float

    def sos(self) -> np.ndarray:
        """Sections in scipy's (b0, b1, b2, a0, a1, a2) layout."""
        n = len(self.sections)
        out = np.empty((n, 6))
        out[:, :3] = self.sections[:, :3]
        out[:, 3] = 1.0
        out[:, 4:] = self.sections[:, 3:]
        return out

    def poles(self) -> np.ndarray:
        roots = []
        for _, _, _, a1, a2 in self.sections:
            roots.extend(np.roots([1.0, a1, a2]))
        return np.asarray(roots)

    def freq_response(self, freqs_hz) -> np.ndarray:
        """Complex H(e^{j 2 pi f / fs}) evaluated per section and multiplied."""
        f = np.atleast_1d(np.asarray(freqs_hz, dtype=np.float64))
        z1 = np.exp(-2j * np.pi * f / self.fs)
        z2 = z1 * z1
        h = np.ones_like(z1)
        for b0, b1, b2, a1, a2 in self.sections:
            h *= (b0 + b1 * z1 + b2 * z2) / (1.0 + a1 * z1 + a2 * z2)
        return h

    def magnitude(self, freqs_hz) -> np.ndarray:
        return np.abs(self.freq_response(freqs_hz))


def design_bandpass(order: int = DEFAULT_ORDER,
                    low_hz: float = DEFAULT_LOW_HZ,
                    high_hz: float = DEFAULT_HIGH_HZ,
                    fs: float = float(CANONICAL_RATE)) -> BandpassFilter:
    """Butterworth bandpass as cascaded biquads via the bilinear transform.

    ``order`` is the lowpass-prototype order; the resulting transfer
    function has order ``2 * order`` (``order`` biquad sections).
    """
    if not (0.0 < low_hz < high_hz < fs / 2.0):
        raise InvalidBand(
            f"need 0 < low < high < fs/2, got ({low_hz}, {high_hz}) at fs={fs}")

    # Lowpass prototype poles on the unit circle, strictly left half plane.
    k = np.arange(order)
    proto = np.exp(1j * np.pi * (2.0 * k + order + 1.0) / (2.0 * order))

    # Pre-warped analog band edges for the bilinear transform.
    c = 2.0 * fs
    w1 = c * np.tan(np.pi * low_hz / fs)
    w2 = c * np.tan(np.pi * high_hz / fs)
    w0 = np.sqrt(w1 * w2)
    bw = w2 - w1

    # Lowpass -> bandpass: each prototype pole yields two analog poles.
    s = 0.5 * bw * proto
    disc = np.sqrt(s * s - w0 * w0 + 0j)
    analog_poles = np.concatenate([s + disc, s - disc])

    # Bilinear transform of the poles; zeros land exactly on z = +-1.
    zpoles = (c + analog_poles) / (c - analog_poles)
    upper = np.sort_complex(zpoles[zpoles.imag > 1e-9])
    if 2 * len(upper) != len(zpoles):
        raise InvalidBand("degenerate pole configuration for the requested band")
    if np.any(np.abs(zpoles) >= 1.0):
        raise InvalidBand("designed filter is unstable for the requested band")

    sections = np.zeros((order, 5))
    for i, p in enumerate(upper):
        sections[i] = (1.0, 0.0, -1.0, -2.0 * p.real, abs(p) ** 2)

    # Unit gain at the (warped) center frequency, split evenly per section.
    f0 = fs / np.pi * np.arctan(w0 / c)
    filt = BandpassFilter(sections, order, low_hz, high_hz, fs)
    gain = 1.0 / filt.magnitude(f0)[0]
    sections[:, :3] *= gain ** (1.0 / order)
    return BandpassFilter(sections, order, low_hz, high_hz, fs)


def apply_filter(filt: BandpassFilter, rec: AudioRecording) -> AudioRecording:
    """One causal forward pass through the cascade, zero initial state."""
    if rec.sample_rate != filt.fs:
        raise RateMismatch(
            f"recording at {rec.sample_rate} Hz, filter designed for {filt.fs} Hz")
    y = sosfilt(filt.sos(), np.asarray(rec.samples, dtype=np.float64))
    return AudioRecording(samples=y, sample_rate=rec.sample_rate,
                          source_id=rec.source_id, dataset=rec.dataset,
                          label=rec.label)


# --------------------------------------------------------------------------
# Segmentation
# --------------------------------------------------------------------------

@dataclass
class Segment:
    """One 8-second, 16000-sample window of a preprocessed recording."""

    samples: np.ndarray  # float32, exactly SEGMENT_SAMPLES long
    parent_id: str
    index: int
    label: Label | None = None

    @property
    def segment_id(self) -> str:
        return f"{self.parent_id}_{self.index}"


def segment(rec: AudioRecording) -> list[Segment]:
    """Consecutive non-overlapping 16000-sample windows; the tail is dropped.

    Recordings shorter than one window yield an empty list.
    """
    if rec.sample_rate != CANONICAL_RATE:
        raise RateMismatch(
            f"segmentation expects {CANONICAL_RATE} Hz, got {rec.sample_rate}")
    n = len(rec.samples) // SEGMENT_SAMPLES
    out = []
    for i in range(n):
        chunk = rec.samples[i * SEGMENT_SAMPLES:(i + 1) * SEGMENT_SAMPLES]
        out.append(Segment(samples=np.asarray(chunk, dtype=np.float32).copy(),
                           parent_id=rec.source_id, index=i, label=rec.label))
    return out


def preprocess_recording(rec: AudioRecording,
                         filt: BandpassFilter | None = None) -> list[Segment]:
    """resample -> bandpass -> segment for one recording."""
    if filt is None:
        filt = design_bandpass()
    rec = resample(rec, CANONICAL_RATE)
    rec = apply_filter(filt, rec)
    return segment(rec)


def preprocess_dataset(manifest: DatasetManifest,
                       filt: BandpassFilter | None = None,
                       ) -> tuple[list[Segment], list[tuple[str, Exception]]]:
    """Run load -> resample -> filter -> segment over a whole manifest.

    Per-file failures are logged and collected, never fatal; the second
    return value lists (path, exception) pairs for the skipped files.
    """
    if filt is None:
        filt = design_bandpass()
    segments: list[Segment] = []
    failures: list[tuple[str, Exception]] = []
    for entry in manifest.entries:
        try:
            rec = load_wav(entry.path)
            rec.source_id = entry.source_id
            rec.dataset = entry.dataset
            rec.label = entry.label
            segments.extend(preprocess_recording(rec, filt))
        except Exception as exc:  # noqa: BLE001 - per-file isolation is the point
            log.warning("skipping %s: %s", entry.path, exc)
            failures.append((entry.path, exc))
    return segments, failures


# --------------------------------------------------------------------------
# Segment cache
# --------------------------------------------------------------------------

def write_segment(seg: Segment, directory) -> Path:
    """Binary cache: magic, version, label byte, 16000 float32 samples."""
    if seg.label is None:
        raise ValueError("refusing to cache an unlabeled segment")
    if len(seg.samples) != SEGMENT_SAMPLES:
        raise ValueError(f"segment has {len(seg.samples)} samples")
    path = Path(directory) / f"{seg.parent_id}_{seg.index}.seg"
    payload = np.asarray(seg.samples, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(_SEG_MAGIC)
        fh.write(struct.pack("<IB", _SEG_VERSION, int(seg.label)))
        fh.write(payload)
    return path


def read_segment(path) -> Segment:
    path = Path(path)
    data = path.read_bytes()
    expected = len(_SEG_MAGIC) + 5 + SEGMENT_SAMPLES * 4
    if len(data) != expected or data[:4] != _SEG_MAGIC:
        raise CacheCorrupt(f"{path}: bad segment cache file")
    version, label = struct.unpack_from("<IB", data, 4)
    if version != _SEG_VERSION:
        raise CacheCorrupt(f"{path}: unsupported version {version}")
    samples = np.frombuffer(data[9:], dtype="<f4").astype(np.float32)
    parent, _, idx = path.stem.rpartition("_")
    try:
        index = int(idx)
    except ValueError:
        raise CacheCorrupt(f"{path}: cannot parse segment index from filename")
    return Segment(samples=samples, parent_id=parent, index=index,
                   label=Label(label))
