import struct

import numpy as np
import pytest

from sps.audio import AudioClip


def make_wav(samples_int, bits=16, channels=1, sample_rate=44100, audio_format=1):
    """Hand-assemble a RIFF/WAVE byte string (independent of sps.audio)."""
    if audio_format == 3:
        payload = np.asarray(samples_int, dtype="<f4").tobytes()
        bits = 32
    elif bits == 16:
        payload = np.asarray(samples_int, dtype="<i2").tobytes()
    elif bits == 24:
        out = bytearray()
        for v in samples_int:
            out += int(v).to_bytes(3, "little", signed=True)
        payload = bytes(out)
    else:
        raise ValueError(bits)
    block_align = channels * (bits // 8)
    return struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, audio_format, channels, sample_rate,
        sample_rate * block_align, block_align, bits,
        b"data", len(payload),
    ) + payload


@pytest.fixture
def sine_clip():
    def _make(freq=1000.0, duration=1.0, sr=44100, amp=1.0):
        t = np.arange(int(round(duration * sr))) / sr
        return AudioClip(samples=amp * np.sin(2 * np.pi * freq * t),
                         sample_rate=sr, channels=1)
    return _make


@pytest.fixture(scope="session")
def big_corpus(tmp_path_factory):
    """The canonical 3-class / 20-clips-per-class seeded corpus (10 s @ 44.1k).

    Session-scoped: shared by the pipeline tests and the acceptance suite.
    """
    from sps.synth import gen_synth

    out_dir = tmp_path_factory.mktemp("corpus")
    train_manifest, test_manifest, n_files = gen_synth(
        out_dir, n_classes=3, clips_per_class=20, seed=0)
    return {"dir": out_dir, "train": train_manifest, "test": test_manifest,
            "n_files": n_files}
