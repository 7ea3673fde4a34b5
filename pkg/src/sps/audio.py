"""WAV decoding and waveform conditioning (downmix, resample, length fixing).

Everything here is a pure function of its inputs; clips are safe to process
concurrently. Amplitudes are kept in [-1, 1] as float64 until the feature
stage casts down to float32.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np
from scipy import signal


class WavError(ValueError):
    """Base error for malformed or unsupported WAV input."""


class WavHeaderError(WavError):
    """RIFF/WAVE container structure is malformed."""


class WavUnsupportedError(WavError):
    """Valid container but a codec/layout we do not decode."""


class WavTruncatedError(WavError):
    """Data chunk shorter than its declared size."""


@dataclass
class AudioClip:
    """Decoded waveform.

    samples: amplitudes in [-1, 1], interleaved when channels > 1.
    sample_rate: Hz.
    channels: channel count >= 1; len(samples) is a multiple of it.
    """

    samples: np.ndarray
    sample_rate: int
    channels: int = 1

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.channels < 1:
            raise ValueError(f"channels must be >= 1, got {self.channels}")
        if self.samples.ndim != 1:
            raise ValueError("samples must be a flat (interleaved) array")
        if self.samples.size % self.channels != 0:
            raise ValueError(
                f"sample count {self.samples.size} not a multiple of channels {self.channels}"
            )

    @property
    def num_frames(self) -> int:
        return self.samples.size // self.channels

    @property
    def duration_s(self) -> float:
        return self.num_frames / self.sample_rate


def _parse_chunks(data: bytes):
    """Yield (chunk id, payload offset, declared size) for top-level RIFF chunks."""
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack_from("<I", data, pos + 4)
        yield cid, pos + 8, size
        pos += 8 + size + (size & 1)  # chunks are word-aligned


def decode_wav(data: bytes) -> AudioClip:
    """Decode a RIFF/WAVE byte string into an AudioClip.

    Supports PCM 16/24-bit integer and IEEE float32, 1 or 2 channels.
    Amplitudes are normalized by the format's full-scale value and clipped
    to [-1, 1] (float input may exceed full scale; it is clipped, never
    wrapped). No resampling is performed.
    """
    if len(data) < 12:
        raise WavHeaderError("file too short for a RIFF header")
    if data[0:4] != b"RIFF":
        raise WavHeaderError(f"bad RIFF magic {data[0:4]!r}")
    if data[8:12] != b"WAVE":
        raise WavHeaderError(f"bad WAVE form type {data[8:12]!r}")

    fmt = None
    data_chunk = None
    for cid, off, size in _parse_chunks(data):
        if cid == b"fmt " and fmt is None:
            if size < 16 or off + 16 > len(data):
                raise WavHeaderError("fmt chunk shorter than 16 bytes")
            fmt = struct.unpack_from("<HHIIHH", data, off)
        elif cid == b"data" and data_chunk is None:
            data_chunk = (off, size)
    if fmt is None:
        raise WavHeaderError("missing fmt chunk")
    if data_chunk is None:
        raise WavHeaderError("missing data chunk")

    audio_format, channels, sample_rate, _byte_rate, block_align, bits = fmt
    if channels not in (1, 2):
        raise WavUnsupportedError(f"channels={channels} not supported (need 1 or 2)")
    if sample_rate <= 0:
        raise WavHeaderError(f"sample_rate={sample_rate} invalid")

    off, size = data_chunk
    if off + size > len(data):
        raise WavTruncatedError(
            f"data chunk declares {size} bytes but only {len(data) - off} remain"
        )
    payload = data[off:off + size]

    if audio_format == 1 and bits == 16:
        raw = np.frombuffer(payload[: size - size % 2], dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif audio_format == 1 and bits == 24:
        usable = size - size % 3
        b = np.frombuffer(payload[:usable], dtype=np.uint8).reshape(-1, 3).astype(np.int64)
        vals = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        vals = np.where(vals >= 1 << 23, vals - (1 << 24), vals)
        samples = vals.astype(np.float64) / float(1 << 23)
    elif audio_format == 3 and bits == 32:
        raw = np.frombuffer(payload[: size - size % 4], dtype="<f4")
        samples = raw.astype(np.float64)
    else:
        raise WavUnsupportedError(
            f"audio_format={audio_format} bits_per_sample={bits} not supported "
            "(need PCM16, PCM24 or float32)"
        )

    if block_align and block_align > 0:
        expected_frames = size // block_align
        if samples.size // channels < expected_frames and size % block_align != 0:
            raise WavTruncatedError(
                f"data chunk size {size} is not a whole number of {block_align}-byte frames"
            )
    samples = samples[: samples.size - samples.size % channels]
    np.clip(samples, -1.0, 1.0, out=samples)
    return AudioClip(samples=samples, sample_rate=sample_rate, channels=channels)


def encode_wav_pcm16(clip: AudioClip) -> bytes:
    """Encode a clip as a PCM 16-bit RIFF/WAVE byte string (deterministic)."""
    x = np.clip(clip.samples, -1.0, 1.0)
    ints = np.clip(np.rint(x * 32767.0), -32768, 32767).astype("<i2")
    payload = ints.tobytes()
    block_align = 2 * clip.channels
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, 1, clip.channels, clip.sample_rate,
        clip.sample_rate * block_align, block_align, 16,
        b"data", len(payload),
    )
    return header + payload


def downmix_mono(clip: AudioClip) -> AudioClip:
    """Average channels down to mono; mono input is returned unchanged."""
    if clip.channels == 1:
        return clip
    if clip.channels != 2:
        raise WavUnsupportedError(f"downmix supports 1 or 2 channels, got {clip.channels}")
    frames = clip.samples.reshape(-1, 2)
    return AudioClip(samples=frames.mean(axis=1), sample_rate=clip.sample_rate, channels=1)


# Kaiser beta 9.0 gives ~90 dB stopband in the polyphase lowpass, comfortably
# past the 60 dB the resampler promises.
_KAISER_BETA = 9.0


def resample(clip: AudioClip, target_rate: int) -> AudioClip:
    """Band-limited polyphase resampling to target_rate.

    Output length is round(n * target_rate / input_rate) exactly (half-up,
    computed in integers). Identical rates return the clip unchanged.
    """
    if clip.channels != 1:
        raise ValueError("resample expects a mono clip; downmix first")
    if target_rate <= 0:
        raise ValueError(f"target_rate must be positive, got {target_rate}")
    if target_rate == clip.sample_rate:
        return clip
    g = math.gcd(clip.sample_rate, target_rate)
    up, down = target_rate // g, clip.sample_rate // g
    out = signal.resample_poly(clip.samples, up, down, window=("kaiser", _KAISER_BETA))
    n_target = (clip.samples.size * target_rate + clip.sample_rate // 2) // clip.sample_rate
    if out.size > n_target:
        out = out[:n_target]
    elif out.size < n_target:
        out = np.concatenate([out, np.zeros(n_target - out.size)])
    return AudioClip(samples=out, sample_rate=target_rate, channels=1)


def fix_length(clip: AudioClip, duration_s: float) -> AudioClip:
    """Zero-pad or truncate at the end to exactly round(duration_s * rate) samples."""
    if clip.channels != 1:
        raise ValueError("fix_length expects a mono clip")
    if duration_s <= 0:
        raise ValueError(f"duration_s must be positive, got {duration_s}")
    n_target = int(round(duration_s * clip.sample_rate))
    x = clip.samples
    if x.size == n_target:
        return clip
    if x.size > n_target:
        out = x[:n_target]
    else:
        out = np.concatenate([x, np.zeros(n_target - x.size)])
    return AudioClip(samples=out, sample_rate=clip.sample_rate, channels=1)


def load_wav_mono(data: bytes, target_rate: int, duration_s: float | None = None) -> AudioClip:
    """decode -> downmix -> resample -> (optional) fix_length, the canonical chain."""
    clip = downmix_mono(decode_wav(data))
    clip = resample(clip, target_rate)
    if duration_s is not None:
        clip = fix_length(clip, duration_s)
    return clip
