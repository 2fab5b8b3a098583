"""WAV reading/writing and the in-memory audio clip type.

Supported on read: PCM 16/24-bit integer and 32-bit float, little-endian
(24-bit arrives from scipy as int32 with the low byte zero, so the int32
normalization covers it).  Samples are held as float64 in [-1, 1],
channels-first.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.io import wavfile

from .errors import FormatError, ValidationError


@dataclass
class AudioClip:
    samples: np.ndarray  # (channels, n) float64 in [-1, 1]
    sample_rate: int

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=np.float64))
        if self.sample_rate <= 0:
            raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")

    @property
    def channels(self) -> int:
        return self.samples.shape[0]

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def duration(self) -> float:
        return self.n_samples / self.sample_rate


_NORM = {
    np.dtype(np.int16): 1.0 / 32768.0,
    np.dtype(np.int32): 1.0 / 2147483648.0,
}


def read_wav(path) -> AudioClip:
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise FormatError(f"cannot read WAV file {path}: {exc}") from exc
    if data.dtype in _NORM:
        samples = data.astype(np.float64) * _NORM[data.dtype]
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise FormatError(
            f"unsupported WAV sample format {data.dtype} in {path} "
            f"(expected 16/24-bit PCM or 32-bit float)"
        )
    if samples.ndim == 1:
        samples = samples[None, :]
    else:
        samples = samples.T  # scipy gives (n, channels)
    return AudioClip(samples, int(rate))


def write_wav(path, clip: AudioClip, encoding: str = "float32") -> None:
    data = clip.samples.T
    if encoding == "float32":
        wavfile.write(path, clip.sample_rate, data.astype(np.float32))
    elif encoding == "pcm16":
        scaled = np.clip(np.round(data * 32767.0), -32768, 32767)
        wavfile.write(path, clip.sample_rate, scaled.astype(np.int16))
    else:
        raise ValidationError(f"unknown WAV encoding {encoding!r}")


def ensure_stereo(clip: AudioClip) -> AudioClip:
    """Duplicate mono to stereo (with a warning); reject >2 channels."""
    if clip.channels == 2:
        return clip
    if clip.channels == 1:
        warnings.warn("mono clip duplicated to stereo", stacklevel=2)
        return AudioClip(np.vstack([clip.samples, clip.samples]), clip.sample_rate)
    raise ValidationError(f"expected 1 or 2 channels, got {clip.channels}")
