"""Exception taxonomy shared across the package.

Two families matter to the CLI exit-code mapping: ``ConfigError`` covers
bad user input (missing files, invalid parameters, mismatched
configuration) and ``DataError`` covers violated data contracts found in
otherwise well-formed requests (corrupt files, too-short recordings).
"""


class PcgError(Exception):
    """Base class for all package errors."""


class ConfigError(PcgError):
    """Invalid input or configuration supplied by the caller."""


class DataError(PcgError):
    """A data file or value violated one of the pipeline's contracts."""


# --- signal_io -----------------------------------------------------------

class MalformedContainer(DataError):
    """Not a RIFF/WAVE file at all."""


class UnsupportedFormat(DataError):
    """Valid WAV container but not mono 16-bit PCM."""


class MissingLabelFile(ConfigError):
    """A dataset directory holds recordings but no reference labels."""


class UnlabeledRecording(DataError):
    """A recording exists on disk but in no label listing."""


# --- dsp -----------------------------------------------------------------

class InvalidBand(ConfigError):
    """Bandpass edges do not satisfy 0 < low < high < fs/2."""


class RateMismatch(DataError):
    """Operation requires a specific sample rate the input does not have."""


# --- spectrogram ---------------------------------------------------------

class SegmentTooShort(DataError):
    """Input shorter than one analysis window."""


class CacheCorrupt(DataError):
    """A cache or checkpoint file failed its header/CRC validation."""


# --- nn ------------------------------------------------------------------

class ShapeMismatch(PcgError):
    """Tensor shapes disagree with the operation's contract."""


class InvalidConfig(ConfigError):
    """A model configuration fails shape propagation or its invariants."""


# --- training ------------------------------------------------------------

class TooFewSamples(ConfigError):
    """Not enough items per class to build the requested splits."""


class DivergedLoss(PcgError):
    """Training loss became NaN/Inf."""


class ConfigMismatch(ConfigError):
    """Checkpoint and requested model configuration disagree."""


# --- metrics -------------------------------------------------------------

class LengthMismatch(PcgError):
    """Paired sequences have different lengths."""


class EmptyInput(PcgError):
    """An aggregate was requested over an empty collection."""


# --- cli -----------------------------------------------------------------

class RecordingTooShort(DataError):
    """Recording shorter than one segment after resampling."""
