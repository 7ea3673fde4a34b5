"""Time-frequency representations: Log-Mel, CQT, Gammatone, MFCC.

All four extractors share one frame convention — frame t covers samples
[t*hop, t*hop + window), no centering or reflection padding — so a given
clip yields the same frame count T for every representation. That alignment
is what lets representations be stacked as input channels.

Internal math runs in float64; FeatureMap values are float32, matching the
on-disk SPSF payload.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from numpy.lib.stride_tricks import as_strided

import numpy as np
import scipy.fft

from .audio import AudioClip

LOG_MEL = "log_mel"
CQT = "cqt"
GAMMA = "gamma"
MFCC = "mfcc"
KINDS = (LOG_MEL, CQT, GAMMA, MFCC)

# C1 in Hz; 64 CQT bins at 8 bins/octave span 8 octaves up from here.
CQT_FMIN_DEFAULT = 32.70319566257483


@dataclass(frozen=True)
class FeatureConfig:
    """Extraction parameters. Defaults follow the 10-class task setup;
    presets below adjust band counts per task."""

    window: int = 2048
    hop: int = 512
    log_offset: float = 1e-10
    mel_bands: int = 40
    mel_fmin: float = 0.0
    mel_fmax: float | None = None  # None -> sr/2
    mfcc_coeffs: int | None = None  # None -> mel_bands
    cqt_bins: int = 64
    cqt_fmin: float = CQT_FMIN_DEFAULT
    cqt_bins_per_octave: int = 8
    gamma_bands: int = 64
    gamma_fmin: float = 50.0
    gamma_fmax: float | None = None

    def __post_init__(self):
        if not (self.window >= self.hop > 0):
            raise ValueError(f"need window >= hop > 0, got window={self.window} hop={self.hop}")
        if self.window & (self.window - 1):
            raise ValueError(f"window must be a power of two, got {self.window}")
        if self.log_offset <= 0:
            raise ValueError("log_offset must be positive")

    @staticmethod
    def task1a() -> "FeatureConfig":
        return FeatureConfig()  # 40 / 64 / 64 / 40 bands

    @staticmethod
    def task1b() -> "FeatureConfig":
        return FeatureConfig(mel_bands=64, mfcc_coeffs=64)

    def with_common_bands(self, n: int = 64) -> "FeatureConfig":
        """Equal band counts across representations (early fusion needs this)."""
        return replace(self, mel_bands=n, mfcc_coeffs=n, cqt_bins=n, gamma_bands=n)

    def bands_for(self, kind: str) -> int:
        if kind == LOG_MEL:
            return self.mel_bands
        if kind == MFCC:
            return self.mfcc_coeffs if self.mfcc_coeffs is not None else self.mel_bands
        if kind == CQT:
            return self.cqt_bins
        if kind == GAMMA:
            return self.gamma_bands
        raise ValueError(f"unknown feature kind {kind!r}")

    def to_meta(self) -> dict:
        return {
            "window": self.window, "hop": self.hop, "log_offset": self.log_offset,
            "mel_bands": self.mel_bands, "mel_fmin": self.mel_fmin, "mel_fmax": self.mel_fmax,
            "mfcc_coeffs": self.mfcc_coeffs, "cqt_bins": self.cqt_bins,
            "cqt_fmin": self.cqt_fmin, "cqt_bins_per_octave": self.cqt_bins_per_octave,
            "gamma_bands": self.gamma_bands, "gamma_fmin": self.gamma_fmin,
            "gamma_fmax": self.gamma_fmax,
        }

    @staticmethod
    def from_meta(meta: dict) -> "FeatureConfig":
        return FeatureConfig(**meta)


@dataclass
class FeatureMap:
    """A T x F grid of one representation, with its extraction geometry."""

    values: np.ndarray  # float32 [T, F]
    kind: str
    sample_rate: int
    hop: int
    window: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError("FeatureMap values must be 2-D (time x bands)")
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    @property
    def n_bands(self) -> int:
        return self.values.shape[1]


def num_frames(n_samples: int, window: int, hop: int) -> int:
    """Frames fully covered by the signal; 0 when shorter than one window."""
    if n_samples < window:
        return 0
    return 1 + (n_samples - window) // hop


def stft_power(clip: AudioClip, window: int, hop: int) -> np.ndarray:
    """Hann-windowed power spectrogram, shape [T, window/2 + 1], float64.

    No padding: a clip shorter than one window yields zero frames.
    """
    if clip.channels != 1:
        raise ValueError("stft_power expects a mono clip")
    if window & (window - 1):
        raise ValueError(f"window must be a power of two, got {window}")
    x = np.asarray(clip.samples, dtype=np.float64)
    t = num_frames(x.size, window, hop)
    if t == 0:
        return np.zeros((0, window // 2 + 1))
    frames = as_strided(
        x, shape=(t, window), strides=(hop * x.itemsize, x.itemsize)
    )
    win = np.hanning(window)
    spec = np.fft.rfft(frames * win, axis=1)
    return spec.real ** 2 + spec.imag ** 2


def hz_to_mel(f):
    """HTK mel scale."""
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(n_mels: int, n_fft: int, sr: int, fmin: float = 0.0,
                   fmax: float | None = None) -> np.ndarray:
    """Triangular filters with peaks equally spaced on the HTK mel scale.

    Returns [n_mels, n_fft/2 + 1]; rows are nonnegative and (for sane
    configurations) each touches at least one FFT bin.
    """
    if n_mels < 1:
        raise ValueError("n_mels must be >= 1")
    if fmax is None:
        fmax = sr / 2.0
    if fmax > sr / 2.0:
        raise ValueError(f"fmax={fmax} exceeds Nyquist {sr / 2.0}")
    if not fmin < fmax:
        raise ValueError(f"need fmin < fmax, got {fmin} >= {fmax}")
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    bin_freqs = np.arange(n_fft // 2 + 1) * (sr / n_fft)
    fb = np.zeros((n_mels, n_fft // 2 + 1))
    for i in range(n_mels):
        lo, mid, hi = edges[i], edges[i + 1], edges[i + 2]
        rising = (bin_freqs - lo) / (mid - lo)
        falling = (hi - bin_freqs) / (hi - mid)
        fb[i] = np.maximum(0.0, np.minimum(rising, falling))
    return fb


def _log_mel_grid(clip: AudioClip, cfg: FeatureConfig) -> np.ndarray:
    power = stft_power(clip, cfg.window, cfg.hop)
    fb = mel_filterbank(cfg.mel_bands, cfg.window, clip.sample_rate,
                        cfg.mel_fmin, cfg.mel_fmax)
    return np.log(power @ fb.T + cfg.log_offset)


def log_mel(clip: AudioClip, cfg: FeatureConfig) -> FeatureMap:
    return FeatureMap(_log_mel_grid(clip, cfg), LOG_MEL, clip.sample_rate,
                      cfg.hop, cfg.window)


def dct_matrix(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix, [n, n]; row 0 is constant 1/sqrt(n)."""
    return scipy.fft.dct(np.eye(n), type=2, norm="ortho", axis=0).T


def mfcc(clip: AudioClip, cfg: FeatureConfig) -> FeatureMap:
    """Orthonormal DCT-II across the mel axis of the log-mel grid."""
    n_coeffs = cfg.mfcc_coeffs if cfg.mfcc_coeffs is not None else cfg.mel_bands
    if n_coeffs > cfg.mel_bands:
        raise ValueError(
            f"mfcc_coeffs={n_coeffs} exceeds mel_bands={cfg.mel_bands}"
        )
    grid = _log_mel_grid(clip, cfg)
    coeffs = scipy.fft.dct(grid, type=2, norm="ortho", axis=1)[:, :n_coeffs]
    return FeatureMap(coeffs, MFCC, clip.sample_rate, cfg.hop, cfg.window)


def cqt_frequencies(cfg: FeatureConfig) -> np.ndarray:
    k = np.arange(cfg.cqt_bins)
    return cfg.cqt_fmin * 2.0 ** (k / cfg.cqt_bins_per_octave)


def cqt_kernels(cfg: FeatureConfig, sr: int) -> list[np.ndarray]:
    """Hann-windowed complex kernels, one per bin, length ceil(Q*sr/f_k),
    normalized by the window sum so a unit sine at f_k reads ~0.5."""
    freqs = cqt_frequencies(cfg)
    if freqs[-1] >= sr / 2.0:
        raise ValueError(
            f"top CQT bin {freqs[-1]:.1f} Hz reaches Nyquist {sr / 2.0:.1f} Hz"
        )
    q = 1.0 / (2.0 ** (1.0 / cfg.cqt_bins_per_octave) - 1.0)
    kernels = []
    for f in freqs:
        n = int(np.ceil(q * sr / f))
        win = np.hanning(n)
        phase = np.exp(-2j * np.pi * f * np.arange(n) / sr)
        kernels.append(win * phase / win.sum())
    return kernels


def cqt(clip: AudioClip, cfg: FeatureConfig) -> FeatureMap:
    """Direct kernel correlation at the shared frame centers t*hop + window/2.

    Frames whose kernel support reaches outside the signal see zeros, so T
    matches the STFT-based representations exactly.
    """
    if clip.channels != 1:
        raise ValueError("cqt expects a mono clip")
    sr = clip.sample_rate
    kernels = cqt_kernels(cfg, sr)
    t = num_frames(clip.samples.size, cfg.window, cfg.hop)
    out = np.empty((t, cfg.cqt_bins))
    if t == 0:
        return FeatureMap(out.reshape(0, cfg.cqt_bins), CQT, sr, cfg.hop, cfg.window)
    pad = max(k.size for k in kernels) // 2 + 1
    x = np.concatenate([np.zeros(pad), clip.samples, np.zeros(pad)])
    center0 = pad + cfg.window // 2
    for j, kern in enumerate(kernels):
        n = kern.size
        start = center0 - n // 2
        frames = as_strided(
            x[start:], shape=(t, n), strides=(cfg.hop * x.itemsize, x.itemsize)
        )
        re = frames @ kern.real
        im = frames @ kern.imag
        out[:, j] = re * re + im * im
    return FeatureMap(np.log(out + cfg.log_offset), CQT, sr, cfg.hop, cfg.window)


def erb_rate(f):
    """ERB-rate scale (Glasberg & Moore)."""
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f, dtype=np.float64))


def erb_rate_to_hz(e):
    return (10.0 ** (np.asarray(e, dtype=np.float64) / 21.4) - 1.0) / 0.00437


def erb_bandwidth(f):
    return 24.7 * (4.37 * np.asarray(f, dtype=np.float64) / 1000.0 + 1.0)


def gammatone_weights(n_bands: int, n_fft: int, sr: int, fmin: float = 50.0,
                      fmax: float | None = None) -> np.ndarray:
    """FFT-weighting matrix [n_bands, n_fft/2 + 1].

    Row k is the squared magnitude response of a 4th-order gammatone filter
    centered at the k-th ERB-spaced frequency, peak-normalized to 1.
    """
    if n_bands < 1:
        raise ValueError("n_bands must be >= 1")
    if fmax is None:
        fmax = sr / 2.0
    if fmax > sr / 2.0:
        raise ValueError(f"fmax={fmax} exceeds Nyquist {sr / 2.0}")
    if not 0 < fmin < fmax:
        raise ValueError(f"need 0 < fmin < fmax, got fmin={fmin} fmax={fmax}")
    centers = erb_rate_to_hz(np.linspace(erb_rate(fmin), erb_rate(fmax), n_bands))
    bandwidths = 1.019 * erb_bandwidth(centers)
    bin_freqs = np.arange(n_fft // 2 + 1) * (sr / n_fft)
    u = (bin_freqs[None, :] - centers[:, None]) / bandwidths[:, None]
    weights = (1.0 + u * u) ** -4.0  # |H|^2 of a 4th-order gammatone
    weights /= weights.max(axis=1, keepdims=True)
    return weights


def gammatone_center_frequencies(cfg: FeatureConfig, sr: int) -> np.ndarray:
    fmax = cfg.gamma_fmax if cfg.gamma_fmax is not None else sr / 2.0
    return erb_rate_to_hz(
        np.linspace(erb_rate(cfg.gamma_fmin), erb_rate(fmax), cfg.gamma_bands)
    )


def gammatone(clip: AudioClip, cfg: FeatureConfig) -> FeatureMap:
    power = stft_power(clip, cfg.window, cfg.hop)
    weights = gammatone_weights(cfg.gamma_bands, cfg.window, clip.sample_rate,
                                cfg.gamma_fmin, cfg.gamma_fmax)
    grid = np.log(power @ weights.T + cfg.log_offset)
    return FeatureMap(grid, GAMMA, clip.sample_rate, cfg.hop, cfg.window)


_EXTRACTORS = {LOG_MEL: log_mel, CQT: cqt, GAMMA: gammatone, MFCC: mfcc}


def extract(clip: AudioClip, kind: str, cfg: FeatureConfig) -> FeatureMap:
    """Dispatch to one of the four extractors; deterministic."""
    try:
        fn = _EXTRACTORS[kind]
    except KeyError:
        raise ValueError(f"unknown feature kind {kind!r}") from None
    return fn(clip, cfg)


def save_feature(path, fm: FeatureMap, extra_meta: dict | None = None) -> None:
    from . import spsf

    meta = {
        "kind": fm.kind, "sample_rate": fm.sample_rate, "hop": fm.hop,
        "window": fm.window, "n_bands": fm.n_bands,
    }
    if extra_meta:
        meta.update(extra_meta)
    spsf.save_array(path, fm.values, kind=fm.kind, meta=meta)


def load_feature(path) -> tuple[FeatureMap, dict]:
    from . import spsf

    values, kind, meta = spsf.load_array(path)
    fm = FeatureMap(values, kind, int(meta["sample_rate"]), int(meta["hop"]),
                    int(meta["window"]))
    return fm, meta
