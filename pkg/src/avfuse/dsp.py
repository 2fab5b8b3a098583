"""Audio front-ends: MEL, gammatone, and constant-Q spectrograms with
delta / delta-delta stacking.

All three front-ends share one framing grid: 80 ms Hann windows hopped
so that a 10 s clip at 32 kHz yields exactly 309 frames, 128 frequency
bins, one plane per stereo channel.  Delta stacking trims 2 frames per
order (no padding), giving the 128x305x6 training tensor.

Design notes baked into the defaults:
  * hop_samples=1030 realizes the 309-frame contract for 10 s clips
    (floor((320000 - 2560) / 1030) + 1 == 309);
  * mel filters: HTK scale, 0-16 kHz, triangular, area-normalized,
    applied to the STFT power spectrum;
  * gammatone realized as 128 fourth-order magnitude-response rows on
    ERB-spaced centers (50 Hz - 16 kHz) weighting the same STFT power;
  * CQT: 16 bins/octave from 32.7 Hz (8 octaves -> 128 bins), per-bin
    window length Q*fs/f_k with Q = 1/(2**(1/16) - 1), windows centered
    on the shared frame grid;
  * log compression log(x + log_floor) everywhere, floor 1e-10.
"""

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.signal import resample_poly

from .audio_io import AudioClip, ensure_stereo  # noqa: F401  (re-export)
from .errors import ConfigError, ValidationError

FEATURE_KINDS = ("mel", "gam", "cqt")


@dataclass(frozen=True)
class FrontEndConfig:
    target_rate: int = 32000
    n_filters: int = 128
    window_ms: int = 80
    hop_samples: int = 1030
    clip_seconds: int = 10
    log_floor: float = 1e-10
    # CQT geometry: 16 bins/octave over 8 octaves fills the 128 bins.
    cqt_fmin: float = 32.7
    cqt_bins_per_octave: int = 16
    # Gammatone centers span this range on the ERB scale.
    gam_fmin: float = 50.0
    gam_fmax: float = 16000.0

    def __post_init__(self):
        if self.target_rate <= 0 or self.n_filters <= 0 or self.hop_samples <= 0:
            raise ConfigError("front-end config values must be positive")
        if (self.target_rate * self.window_ms) % 1000 != 0:
            raise ConfigError("window_ms must be a whole number of samples")
        if self.log_floor <= 0:
            raise ConfigError("log_floor must be positive")

    @property
    def window_samples(self) -> int:
        return self.target_rate * self.window_ms // 1000

    @property
    def clip_samples(self) -> int:
        return self.target_rate * self.clip_seconds

    @property
    def n_frames(self) -> int:
        return (self.clip_samples - self.window_samples) // self.hop_samples + 1


@dataclass
class Spectrogram:
    data: np.ndarray  # (bins, frames, channels) float64
    kind: str

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 3:
            raise ValidationError(f"spectrogram data must be 3-D, got {self.data.shape}")
        if self.kind not in FEATURE_KINDS:
            raise ValidationError(f"unknown spectrogram kind {self.kind!r}")

    @property
    def bins(self) -> int:
        return self.data.shape[0]

    @property
    def frames(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited (polyphase windowed-sinc) resampling to target_rate."""
    if clip.n_samples == 0:
        raise ValidationError("cannot resample an empty clip")
    if clip.sample_rate == target_rate:
        return clip
    ratio = Fraction(target_rate, clip.sample_rate)
    out = resample_poly(clip.samples, ratio.numerator, ratio.denominator, axis=1)
    return AudioClip(out, target_rate)


def _prepare(clip: AudioClip, cfg: FrontEndConfig) -> np.ndarray:
    """Validate rate/channels; truncate or zero-pad to exactly 10 s."""
    if clip.sample_rate != cfg.target_rate:
        raise ValidationError(
            f"clip must be at {cfg.target_rate} Hz (got {clip.sample_rate}); "
            f"call resample() first"
        )
    if clip.channels != 2:
        raise ValidationError(f"expected 2 channels, got {clip.channels}")
    n = cfg.clip_samples
    x = clip.samples
    if x.shape[1] >= n:
        return x[:, :n]
    out = np.zeros((2, n), dtype=np.float64)
    out[:, : x.shape[1]] = x
    return out


def _stft_power(x: np.ndarray, cfg: FrontEndConfig) -> np.ndarray:
    """(n,) -> (frames, fft_bins) power spectrum on the shared grid."""
    win = np.hanning(cfg.window_samples)
    frames = sliding_window_view(x, cfg.window_samples)[:: cfg.hop_samples]
    frames = frames[: cfg.n_frames]
    spec = np.fft.rfft(frames * win, axis=1)
    return spec.real**2 + spec.imag**2


def hz_to_mel(f):
    """HTK mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: FrontEndConfig) -> np.ndarray:
    """(n_filters, fft_bins) triangular area-normalized filters, 0-16 kHz."""
    nyquist = cfg.target_rate / 2.0
    edges_hz = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(nyquist), cfg.n_filters + 2))
    freqs = np.fft.rfftfreq(cfg.window_samples, 1.0 / cfg.target_rate)
    fb = np.zeros((cfg.n_filters, freqs.size), dtype=np.float64)
    for i in range(cfg.n_filters):
        lo, center, hi = edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]
        rising = (freqs - lo) / (center - lo)
        falling = (hi - freqs) / (hi - center)
        fb[i] = np.clip(np.minimum(rising, falling), 0.0, None)
        fb[i] *= 2.0 / (hi - lo)  # unit-area triangles
    return fb


def mel_center_freqs(cfg: FrontEndConfig) -> np.ndarray:
    nyquist = cfg.target_rate / 2.0
    edges = mel_to_hz(np.linspace(hz_to_mel(0.0), hz_to_mel(nyquist), cfg.n_filters + 2))
    return edges[1:-1]


def hz_to_erb_number(f):
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f, dtype=np.float64))


def erb_number_to_hz(e):
    return (10.0 ** (np.asarray(e, dtype=np.float64) / 21.4) - 1.0) / 0.00437


def erb_bandwidth(f):
    return 24.7 * (1.0 + 4.37 * np.asarray(f, dtype=np.float64) / 1000.0)


def gammatone_center_freqs(cfg: FrontEndConfig) -> np.ndarray:
    return erb_number_to_hz(
        np.linspace(hz_to_erb_number(cfg.gam_fmin), hz_to_erb_number(cfg.gam_fmax), cfg.n_filters)
    )


def gammatone_filterbank(cfg: FrontEndConfig) -> np.ndarray:
    """(n_filters, fft_bins) fourth-order gammatone magnitude responses.

    Each row is peak-normalized, so its maximum sits at its own center
    bin.  |H(f)|^2 = (1 + ((f - fc)/b)^2)^-4 with b = 1.019*ERB(fc).
    """
    centers = gammatone_center_freqs(cfg)
    freqs = np.fft.rfftfreq(cfg.window_samples, 1.0 / cfg.target_rate)
    b = 1.019 * erb_bandwidth(centers)
    rel = (freqs[None, :] - centers[:, None]) / b[:, None]
    return (1.0 + rel**2) ** -4.0


def cqt_q_factor(cfg: FrontEndConfig) -> float:
    return 1.0 / (2.0 ** (1.0 / cfg.cqt_bins_per_octave) - 1.0)


def cqt_center_freqs(cfg: FrontEndConfig) -> np.ndarray:
    k = np.arange(cfg.n_filters)
    return cfg.cqt_fmin * 2.0 ** (k / cfg.cqt_bins_per_octave)


def _spectrogram_from_planes(planes, kind) -> Spectrogram:
    return Spectrogram(np.stack(planes, axis=-1), kind)


def mel_spectrogram(clip: AudioClip, cfg: FrontEndConfig = FrontEndConfig()) -> Spectrogram:
    """Log mel-power spectrogram, (128, 309, 2) for a 10 s stereo clip."""
    x = _prepare(clip, cfg)
    fb = mel_filterbank(cfg)
    planes = [np.log(_stft_power(ch, cfg) @ fb.T + cfg.log_floor).T for ch in x]
    return _spectrogram_from_planes(planes, "mel")


def gammatone_spectrogram(clip: AudioClip, cfg: FrontEndConfig = FrontEndConfig()) -> Spectrogram:
    """Log gammatone-weighted power spectrogram on ERB-spaced centers."""
    x = _prepare(clip, cfg)
    fb = gammatone_filterbank(cfg)
    planes = [np.log(_stft_power(ch, cfg) @ fb.T + cfg.log_floor).T for ch in x]
    return _spectrogram_from_planes(planes, "gam")


def _cqt_kernels(cfg: FrontEndConfig):
    q = cqt_q_factor(cfg)
    centers = cqt_center_freqs(cfg)
    kernels = []
    for fc in centers:
        n_k = max(4, int(round(q * cfg.target_rate / fc)))
        t = np.arange(n_k) - (n_k - 1) / 2.0
        win = np.hanning(n_k)
        phase = np.exp(-2j * np.pi * fc * t / cfg.target_rate)
        kernels.append(win * phase / win.sum())
    return kernels


def _cqt_magnitudes(xp: np.ndarray, kern: np.ndarray, start0: int, hop: int,
                    n_frames: int) -> np.ndarray:
    """|sum_n xp[start0 + t*hop + n] * kern[n]| for t in [0, n_frames).

    Frame starts advance by a fixed hop, so the windowed dot products are
    evaluated blockwise: one matmul of hop-sized signal blocks against the
    hop-folded kernel, then diagonal sums.  This touches each input sample
    once per kernel fold instead of once per overlapping frame.
    """
    n_k = len(kern)
    folds = -(-n_k // hop)
    folded = np.zeros((2, folds * hop), dtype=np.float64)
    folded[0, :n_k] = kern.real
    folded[1, :n_k] = kern.imag
    fold_mat = folded.reshape(2 * folds, hop)

    rows = n_frames - 1 + folds
    blocks = xp[start0 : start0 + rows * hop].reshape(rows, hop)
    c = blocks @ fold_mat.T  # (rows, 2*folds): [re folds | im folds]
    cre, cim = c[:, :folds], c[:, folds:]

    def diag_sums(m):
        view = np.lib.stride_tricks.as_strided(
            m, shape=(n_frames, folds), strides=(m.strides[0], m.strides[0] + m.strides[1])
        )
        return view.sum(axis=1)

    return np.hypot(diag_sums(cre), diag_sums(cim))


def cqt_spectrogram(clip: AudioClip, cfg: FrontEndConfig = FrontEndConfig()) -> Spectrogram:
    """Log constant-Q magnitude spectrogram on the shared 309-frame grid.

    Per-bin windows are centered on the STFT frame centers; samples
    beyond the clip edges are taken as zero.
    """
    x = _prepare(clip, cfg)
    kernels = _cqt_kernels(cfg)
    hop = cfg.hop_samples
    centers = np.arange(cfg.n_frames) * hop + cfg.window_samples // 2
    max_folds = -(-max(len(k) for k in kernels) // hop)
    # padding must cover half a window before the first center and the
    # fold overhang after the last one
    pad = max(len(k) for k in kernels) // 2 + max_folds * hop
    planes = []
    for ch in x:
        xp = np.pad(ch, pad)
        mag = np.empty((cfg.n_filters, cfg.n_frames), dtype=np.float64)
        for k, kern in enumerate(kernels):
            start0 = int(centers[0]) - len(kern) // 2 + pad
            mag[k] = _cqt_magnitudes(xp, kern, start0, hop, cfg.n_frames)
        planes.append(np.log(mag + cfg.log_floor))
    return _spectrogram_from_planes(planes, "cqt")


FRONT_ENDS = {
    "mel": mel_spectrogram,
    "gam": gammatone_spectrogram,
    "cqt": cqt_spectrogram,
}


def delta(spec: np.ndarray, half_width: int = 1) -> np.ndarray:
    """Regression delta over frames (axis 1), valid frames only.

    d_t = sum_{n=1..N} n * (c_{t+n} - c_{t-n}) / (2 * sum n^2); the
    output loses N frames at each end.
    """
    if half_width < 1:
        raise ValidationError(f"half_width must be >= 1, got {half_width}")
    t = spec.shape[1]
    n = half_width
    if t <= 2 * n:
        raise ValidationError(
            f"need more than {2 * n} frames for half_width {n}, got {t}"
        )
    out = np.zeros((spec.shape[0], t - 2 * n, spec.shape[2]), dtype=np.float64)
    for i in range(1, n + 1):
        out += i * (spec[:, n + i : t - n + i, :] - spec[:, n - i : t - n - i, :])
    out /= 2.0 * sum(i * i for i in range(1, n + 1))
    return out


def stack_deltas(spec: Spectrogram) -> Spectrogram:
    """(128, T, 2) -> (128, T-4, 6): [static_L, static_R, d_L, d_R, dd_L, dd_R].

    Delta and delta-delta use half_width 1; static and delta planes are
    center-cropped to the delta-delta frame count.
    """
    data = spec.data
    if data.shape[0] != 128 or data.shape[2] != 2:
        raise ValidationError(
            f"stack_deltas expects (128, T, 2) input, got {data.shape}"
        )
    d1 = delta(data, 1)
    d2 = delta(d1, 1)
    static = data[:, 2:-2, :]
    d1c = d1[:, 1:-1, :]
    return Spectrogram(np.concatenate([static, d1c, d2], axis=2), spec.kind)


def extract_features(clip: AudioClip, kinds=FEATURE_KINDS,
                     cfg: FrontEndConfig = FrontEndConfig()) -> dict:
    """Resample + front-ends + delta stacking for the requested kinds."""
    clip = ensure_stereo(resample(clip, cfg.target_rate))
    out = {}
    for kind in kinds:
        if kind not in FRONT_ENDS:
            raise ValidationError(f"unknown feature kind {kind!r}")
        out[kind] = stack_deltas(FRONT_ENDS[kind](clip, cfg))
    return out
