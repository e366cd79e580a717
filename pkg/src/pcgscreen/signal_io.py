"""WAV ingestion, resampling and dataset manifests.

Recordings from the supported heart-sound collections arrive with wildly
different sample rates and directory layouts.  Everything is funnelled into
one canonical form: mono float samples in [-1, 1] at 2000 Hz, plus a flat
manifest CSV mapping each file to a binary label.
"""

from __future__ import annotations

import csv
import logging
import math
import struct
from dataclasses import dataclass, field, replace
from enum import Enum, IntEnum
from pathlib import Path

import numpy as np
from scipy.signal import upfirdn

from .errors import (
    MalformedContainer,
    MissingLabelFile,
    UnlabeledRecording,
    UnsupportedFormat,
)

log = logging.getLogger(__name__)

CANONICAL_RATE = 2000
PCM_SCALE = 32768.0

# Kaiser-windowed-sinc resampler parameters: ~80 dB alias rejection,
# 64 sinc zero crossings on each side of the main lobe.
KAISER_BETA = 8.6
ZERO_CROSSINGS = 64


class Label(IntEnum):
    NORMAL = 0
    ABNORMAL = 1


class Dataset(Enum):
    PHYSIONET = "physionet"
    PASCAL_A = "pascal-a"
    PASCAL_B = "pascal-b"


class DatasetKind(Enum):
    """Which discovery convention a directory tree follows."""

    PHYSIONET = "physionet"
    PASCAL = "pascal"


@dataclass
class AudioRecording:
    """A mono recording with float samples nominally in [-1, 1].

    ``label``/``dataset`` stay unset until the manifest join; filtering can
    push individual samples slightly past +-1, which is tolerated.
    """

    samples: np.ndarray
    sample_rate: int
    source_id: str = ""
    dataset: Dataset | None = None
    label: Label | None = None

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: Label
    dataset: Dataset
    source_id: str


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __post_init__(self):
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest contains duplicate file paths")

    def __len__(self) -> int:
        return len(self.entries)

    def counts(self) -> dict[Label, int]:
        out = {Label.NORMAL: 0, Label.ABNORMAL: 0}
        for e in self.entries:
            out[e.label] += 1
        return out


# --------------------------------------------------------------------------
# WAV parsing
# --------------------------------------------------------------------------

def load_wav(path) -> AudioRecording:
    """Parse a mono 16-bit PCM RIFF/WAVE file.

    Samples are scaled by 1/32768 so the int16 range maps onto [-1, 1).
    Raises ``MalformedContainer`` for broken RIFF framing and
    ``UnsupportedFormat`` for anything but mono 16-bit PCM.
    """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedContainer(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    off = 12
    while off + 8 <= len(data):
        chunk_id = data[off:off + 4]
        (size,) = struct.unpack_from("<I", data, off + 4)
        body = data[off + 8:off + 8 + size]
        if chunk_id == b"fmt " and fmt is None:
            fmt = body
        elif chunk_id == b"data" and payload is None:
            payload = body
        off += 8 + size + (size & 1)  # chunks are word aligned

    if fmt is None or payload is None:
        raise MalformedContainer(f"{path}: missing fmt/data chunk")
    if len(fmt) < 16:
        raise MalformedContainer(f"{path}: truncated fmt chunk")

    audio_format, channels, rate, _, _, bits = struct.unpack_from("<HHIIHH", fmt)
    if audio_format != 1:
        raise UnsupportedFormat(f"{path}: non-PCM format tag {audio_format}")
    if bits != 16:
        raise UnsupportedFormat(f"{path}: {bits}-bit samples, expected 16")
    if channels != 1:
        raise UnsupportedFormat(f"{path}: {channels} channels, expected mono")
    if rate <= 0:
        raise MalformedContainer(f"{path}: nonpositive sample rate")

    raw = np.frombuffer(payload[:len(payload) // 2 * 2], dtype="<i2")
    samples = raw.astype(np.float64) / PCM_SCALE
    return AudioRecording(samples=samples, sample_rate=int(rate),
                          source_id=path.stem)


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    """Write mono 16-bit PCM.  Inverse of ``load_wav`` for quantized values."""
    pcm = np.clip(np.round(np.asarray(samples, dtype=np.float64) * PCM_SCALE),
                  -32768, 32767).astype("<i2")
    payload = pcm.tobytes()
    byte_rate = sample_rate * 2
    hdr = b"RIFF" + struct.pack("<I", 36 + len(payload)) + b"WAVE"
    hdr += b"fmt " + struct.pack("<IHHIIHH", 16, 1, 1, sample_rate, byte_rate, 2, 16)
    hdr += b"data" + struct.pack("<I", len(payload))
    Path(path).write_bytes(hdr + payload)


# --------------------------------------------------------------------------
# Resampling
# --------------------------------------------------------------------------

def _resample_kernel(p: int, q: int) -> np.ndarray:
    """Kaiser-windowed sinc low-pass for rational resampling by p/q.

    Designed at the upsampled rate with cutoff at the lower of the two
    Nyquist frequencies; gain normalized so DC passes at unity after the
    zero-stuffing loss is compensated.
    """
    m = max(p, q)
    half = ZERO_CROSSINGS * m
    n = np.arange(-half, half + 1, dtype=np.float64)
    cutoff = 1.0 / (2.0 * m)  # cycles per sample at the upsampled rate
    h = 2.0 * cutoff * np.sinc(2.0 * cutoff * n)
    h *= np.kaiser(2 * half + 1, KAISER_BETA)
    h *= p / h.sum()
    return h


def resample(rec: AudioRecording, target_rate: int = CANONICAL_RATE) -> AudioRecording:
    """Rational-ratio resample with a linear-phase anti-aliasing filter.

    Output length is round(len * target/source).  Identical rates return an
    exact copy; an empty input yields an empty output.
    """
    if rec.sample_rate <= 0 or target_rate <= 0:
        raise ValueError("sample rates must be positive")
    if rec.sample_rate == target_rate:
        return replace(rec, samples=rec.samples.copy())

    x = np.asarray(rec.samples, dtype=np.float64)
    g = math.gcd(target_rate, rec.sample_rate)
    p, q = target_rate // g, rec.sample_rate // g
    n_out = (len(x) * p + q // 2) // q  # round-half-up of len*p/q
    if len(x) == 0:
        return replace(rec, samples=x[:0].copy(), sample_rate=int(target_rate))

    h = _resample_kernel(p, q)
    delay = (len(h) - 1) // 2
    pad = (-delay) % q  # make the group delay a whole number of output steps
    if pad:
        h = np.concatenate([np.zeros(pad), h])
        delay += pad
    y = upfirdn(h, x, up=p, down=q)
    skip = delay // q
    y = y[skip:skip + n_out]
    if len(y) < n_out:
        y = np.pad(y, (0, n_out - len(y)))
    return replace(rec, samples=y, sample_rate=int(target_rate))


# --------------------------------------------------------------------------
# Manifests
# --------------------------------------------------------------------------

def _physionet_entries(root: Path) -> list[ManifestEntry]:
    refs = sorted(root.rglob("REFERENCE.csv"))
    wavs = sorted(root.rglob("*.wav"))
    if wavs and not refs:
        raise MissingLabelFile(f"{root}: recordings present but no REFERENCE.csv")

    entries: list[ManifestEntry] = []
    labeled: set[Path] = set()
    for ref in refs:
        with open(ref, newline="") as fh:
            for row in csv.reader(fh):
                if not row or not row[0].strip():
                    continue
                name = row[0].strip()
                try:
                    raw = int(row[1])
                except (IndexError, ValueError):
                    raise MissingLabelFile(f"{ref}: unparseable line {row!r}")
                wav = ref.parent / f"{name}.wav"
                labeled.add(wav)
                if raw == 0:
                    continue  # uncertain-quality label: excluded from the binary task
                if not wav.exists():
                    log.warning("labeled recording missing on disk: %s", wav)
                    continue
                label = Label.NORMAL if raw == -1 else Label.ABNORMAL
                entries.append(ManifestEntry(str(wav), label, Dataset.PHYSIONET, name))

    for wav in wavs:
        if wav not in labeled:
            raise UnlabeledRecording(f"{wav}: not present in any REFERENCE.csv")
    return entries


_PASCAL_ABNORMAL_HINTS = ("murmur", "extra", "artifact")


def _pascal_entries(root: Path) -> list[ManifestEntry]:
    entries: list[ManifestEntry] = []
    for wav in sorted(root.rglob("*.wav")):
        folder = wav.parent.name.lower()
        if "unlabel" in folder:
            continue  # the challenge ships unlabelled test folders; skip them
        if "normal" in folder:
            label = Label.NORMAL
        elif any(h in folder for h in _PASCAL_ABNORMAL_HINTS):
            label = Label.ABNORMAL
        else:
            raise UnlabeledRecording(f"{wav}: folder {wav.parent.name!r} names no class")
        subset = Dataset.PASCAL_B if folder.startswith("b") else Dataset.PASCAL_A
        prefix = "b" if subset is Dataset.PASCAL_B else "a"
        entries.append(ManifestEntry(str(wav), label, subset, f"{prefix}_{wav.stem}"))
    return entries


def build_manifest(roots, kind: DatasetKind) -> DatasetManifest:
    """Discover labeled recordings under the given roots.

    PhysioNet layout: per-subset ``REFERENCE.csv`` files with
    ``record_name,label`` lines (-1 normal, 1 abnormal, 0 uncertain and
    excluded).  PASCAL layout: one folder per class; every non-normal class
    maps to Abnormal and unlabelled test folders are skipped.
    """
    entries: list[ManifestEntry] = []
    for root in roots:
        root = Path(root)
        if not root.is_dir():
            raise MissingLabelFile(f"{root}: not a directory")
        if kind is DatasetKind.PHYSIONET:
            entries.extend(_physionet_entries(root))
        else:
            entries.extend(_pascal_entries(root))
    return DatasetManifest(entries)


def write_manifest(manifest: DatasetManifest, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "label", "dataset", "source_id"])
        for e in manifest.entries:
            w.writerow([e.path, int(e.label), e.dataset.value, e.source_id])


def read_manifest(path) -> DatasetManifest:
    entries = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["path", "label", "dataset", "source_id"]:
            raise ValueError(f"{path}: unexpected manifest header {header!r}")
        for row in reader:
            if not row:
                continue
            entries.append(ManifestEntry(row[0], Label(int(row[1])),
                                         Dataset(row[2]), row[3]))
    return DatasetManifest(entries)
