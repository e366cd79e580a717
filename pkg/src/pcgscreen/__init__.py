"""pcgscreen: heart-sound screening from raw WAV to a trained classifier.

Pipeline: load -> resample to 2 kHz -> 20-400 Hz Butterworth bandpass ->
8-second segments -> Hamming-windowed STFT -> 137x310 spectrogram images ->
small CNN trained with Adam on binary cross-entropy.
"""

__version__ = "0.1.0"

from .dsp import (
    SEGMENT_SAMPLES,
    BandpassFilter,
    Segment,
    apply_filter,
    design_bandpass,
    preprocess_dataset,
    segment,
)
from .signal_io import (
    CANONICAL_RATE,
    AudioRecording,
    Dataset,
    DatasetKind,
    DatasetManifest,
    Label,
    build_manifest,
    load_wav,
    resample,
    write_wav,
)
from .spectrogram import (
    IMAGE_COLS,
    IMAGE_ROWS,
    HammingWindow,
    RawSTFT,
    SpectrogramImage,
    hamming,
    segment_to_image,
    stft,
    to_image,
)

__all__ = [
    "__version__",
    "CANONICAL_RATE", "SEGMENT_SAMPLES", "IMAGE_ROWS", "IMAGE_COLS",
    "AudioRecording", "Dataset", "DatasetKind", "DatasetManifest", "Label",
    "BandpassFilter", "Segment", "HammingWindow", "RawSTFT", "SpectrogramImage",
    "load_wav", "write_wav", "resample", "build_manifest",
    "design_bandpass", "apply_filter", "segment", "preprocess_dataset",
    "hamming", "stft", "to_image", "segment_to_image",
]
