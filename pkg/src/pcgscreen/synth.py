"""Synthetic heart-sound-like recordings for demos and pipeline checks.

Normal recordings are two short tone bursts per cardiac cycle (the lub-dub
pattern) at 60-100 bpm over a faint noise floor.  Abnormal recordings add a
band-limited 150-350 Hz noise murmur between the two bursts.  The point is
not physiological realism but a corpus whose classes are separable by the
same spectro-temporal cues the real task uses.
"""

from __future__ import annotations

import numpy as np
from scipy.signal import sosfilt

from .dsp import design_bandpass
from .signal_io import CANONICAL_RATE, AudioRecording, Label

MURMUR_LOW_HZ = 150.0
MURMUR_HIGH_HZ = 350.0


def _burst(rate: int, freq: float, seconds: float) -> np.ndarray:
    n = int(round(seconds * rate))
    t = np.arange(n) / rate
    envelope = np.sin(np.pi * np.arange(n) / max(n - 1, 1)) ** 2
    return np.sin(2.0 * np.pi * freq * t) * envelope


def synth_recording(rng: np.random.Generator, *, abnormal: bool,
                    seconds: float = 8.0,
                    rate: int = CANONICAL_RATE,
                    source_id: str = "") -> AudioRecording:
    """One labeled synthetic recording."""
    n = int(round(seconds * rate))
    x = rng.normal(0.0, 0.005, size=n)  # sensor noise floor

    bpm = rng.uniform(60.0, 100.0)
    cycle = 60.0 / bpm
    s1_freq = rng.uniform(60.0, 90.0)
    s2_freq = rng.uniform(90.0, 120.0)
    systole = 0.35 * cycle  # s1 -> s2 gap

    murmur_filt = design_bandpass(4, MURMUR_LOW_HZ, MURMUR_HIGH_HZ, rate) \
        if abnormal else None

    t0 = rng.uniform(0.0, 0.2)
    while t0 < seconds:
        for freq, dur, offset in ((s1_freq, 0.10, 0.0), (s2_freq, 0.08, systole)):
            start = int(round((t0 + offset) * rate))
            burst = 0.6 * _burst(rate, freq, dur)
            stop = min(start + len(burst), n)
            if start < n:
                x[start:stop] += burst[:stop - start]
        if abnormal:
            # murmur fills the systolic interval between the two bursts
            m_start = int(round((t0 + 0.10) * rate))
            m_stop = min(int(round((t0 + systole) * rate)), n)
            if m_stop > m_start:
                noise = rng.normal(0.0, 1.0, size=m_stop - m_start)
                band = sosfilt(murmur_filt.sos(), noise)
                taper = np.sin(np.pi * np.arange(len(band)) /
                               max(len(band) - 1, 1)) ** 2
                x[m_start:m_stop] += 0.35 * band * taper
        t0 += cycle

    peak = np.max(np.abs(x))
    if peak > 0.99:
        x *= 0.99 / peak
    return AudioRecording(samples=x, sample_rate=rate, source_id=source_id,
                          label=Label.ABNORMAL if abnormal else Label.NORMAL)


def synth_corpus(n_normal: int, n_abnormal: int, seed: int = 0,
                 seconds: float = 8.0) -> list[AudioRecording]:
    """A labeled corpus with deterministic content for a given seed."""
    rng = np.random.default_rng(seed)
    recs = []
    for i in range(n_normal):
        recs.append(synth_recording(rng, abnormal=False, seconds=seconds,
                                    source_id=f"synth_n{i:04d}"))
    for i in range(n_abnormal):
        recs.append(synth_recording(rng, abnormal=True, seconds=seconds,
                                    source_id=f"synth_a{i:04d}"))
    return recs
