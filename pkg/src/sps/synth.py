"""Deterministic synthetic scene corpus and manifest files.

Each class is an audibly distinct mixture of tones, an amplitude-modulated
noise band, and an impulse train; every per-clip parameter is drawn from a
generator seeded by (seed, class, clip index), so the same seed always
produces byte-identical WAV files and manifests.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .audio import AudioClip, encode_wav_pcm16

MANIFEST_FIELDS = ("path", "label", "device", "city")


@dataclass
class ManifestRow:
    path: str
    label: str
    device: str = ""
    city: str = ""


def write_manifest(path, rows: list[ManifestRow]) -> None:
    has_extra = any(r.device or r.city for r in rows)
    fields = MANIFEST_FIELDS if has_extra else MANIFEST_FIELDS[:2]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(fields)
        for r in rows:
            writer.writerow([getattr(r, f) for f in fields])


def read_manifest(path) -> list[ManifestRow]:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or reader.fieldnames[:2] != ["path", "label"]:
            raise ValueError(
                f"{path}: manifest header must start with 'path,label', "
                f"got {reader.fieldnames}"
            )
        for rec in reader:
            rows.append(ManifestRow(
                path=rec["path"], label=rec["label"],
                device=rec.get("device") or "", city=rec.get("city") or "",
            ))
    seen = set()
    for r in rows:
        if r.path in seen:
            raise ValueError(f"{path}: duplicate path {r.path}")
        seen.add(r.path)
    return rows


def label_set(rows: list[ManifestRow]) -> list[str]:
    return sorted({r.label for r in rows})


def _bandpass_noise(rng, n, sr, center, width):
    """White noise restricted to [center-width/2, center+width/2] via FFT mask."""
    noise = rng.standard_normal(n)
    spec = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    mask = (freqs >= center - width / 2) & (freqs <= center + width / 2)
    spec[~mask] = 0.0
    band = np.fft.irfft(spec, n)
    peak = np.abs(band).max()
    return band / peak if peak > 0 else band


def synth_clip(class_id: int, rng: np.random.Generator, duration_s: float = 10.0,
               sample_rate: int = 44100) -> AudioClip:
    """One clip of the class's mixture; all variation comes from `rng`."""
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate

    # tones: class register at 160*(k+1) Hz plus a weaker octave
    f0 = 160.0 * (class_id + 1) * 2.0 ** rng.uniform(-0.06, 0.06)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    x = 0.35 * np.sin(2 * np.pi * f0 * t + phase[0])
    x += 0.15 * np.sin(2 * np.pi * 2 * f0 * t + phase[1])

    # amplitude-modulated noise band in a class-specific register
    center = 1500.0 + 900.0 * class_id + rng.uniform(-100, 100)
    band = _bandpass_noise(rng, n, sample_rate, center, 400.0)
    am_rate = 0.8 + 0.5 * class_id
    am = 0.5 * (1.0 + np.sin(2 * np.pi * am_rate * t + rng.uniform(0, 2 * np.pi)))
    x += 0.30 * band * am

    # impulse train at a class-specific rate, each click a decaying burst
    rate = 2.0 + class_id
    period = int(sample_rate / rate)
    click_len = int(0.004 * sample_rate)
    click = np.exp(-np.arange(click_len) / (0.001 * sample_rate))
    offset = rng.integers(0, period)
    train = np.zeros(n)
    for start in range(offset, n - click_len, period):
        train[start:start + click_len] += click
    x += 0.22 * train

    x += 0.01 * rng.standard_normal(n)
    peak = np.abs(x).max()
    if peak > 0.9:
        x *= 0.9 / peak
    return AudioClip(samples=x, sample_rate=sample_rate, channels=1)


def gen_synth(out_dir, n_classes: int = 3, clips_per_class: int = 20, seed: int = 0,
              duration_s: float = 10.0, sample_rate: int = 44100
              ) -> tuple[str, str, int]:
    """Write the corpus plus 70/30 per-class train/test manifests.

    Returns (train manifest path, test manifest path, file count).
    """
    if n_classes < 2:
        raise ValueError(f"need at least 2 classes, got {n_classes}")
    if clips_per_class < 2:
        raise ValueError("need at least 2 clips per class")
    audio_dir = os.path.join(out_dir, "audio")
    os.makedirs(audio_dir, exist_ok=True)
    train_rows, test_rows = [], []
    n_train = (7 * clips_per_class + 5) // 10
    count = 0
    for k in range(n_classes):
        label = f"class{k:02d}"
        for i in range(clips_per_class):
            rng = np.random.Generator(np.random.PCG64(
                np.random.SeedSequence(entropy=seed, spawn_key=(k, i))
            ))
            clip = synth_clip(k, rng, duration_s, sample_rate)
            wav_path = os.path.join(audio_dir, f"{label}_{i:03d}.wav")
            with open(wav_path, "wb") as fh:
                fh.write(encode_wav_pcm16(clip))
            row = ManifestRow(path=wav_path, label=label)
            (train_rows if i < n_train else test_rows).append(row)
            count += 1
    train_path = os.path.join(out_dir, "train.csv")
    test_path = os.path.join(out_dir, "test.csv")
    write_manifest(train_path, train_rows)
    write_manifest(test_path, test_rows)
    return train_path, test_path, count
