"""Manifest-driven feature extraction and model evaluation."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .audio import load_wav_mono
from .features import FeatureConfig, extract, load_feature, save_feature
from .metrics import EvalReport
from .strategies import EnsembleBundle
from .synth import ManifestRow, label_set

DEFAULT_SAMPLE_RATE = 44100
DEFAULT_DURATION_S = 10.0


def _path_tag(wav_path: str) -> str:
    return hashlib.sha256(os.path.abspath(wav_path).encode()).hexdigest()[:8]


def feature_filename(wav_path: str, kind: str) -> str:
    stem = os.path.splitext(os.path.basename(wav_path))[0]
    return f"{stem}-{_path_tag(wav_path)}.{kind}.spsf"


def source_hash(audio_bytes: bytes, cfg: FeatureConfig, kind: str,
                sample_rate: int, duration_s: float) -> str:
    h = hashlib.sha256()
    h.update(audio_bytes)
    key = {"cfg": cfg.to_meta(), "kind": kind, "sample_rate": sample_rate,
           "duration_s": duration_s}
    h.update(json.dumps(key, sort_keys=True).encode())
    return h.hexdigest()


@dataclass
class ExtractResult:
    written: int = 0
    skipped: int = 0
    errors: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def extract_to_dir(rows: list[ManifestRow], kinds: list[str], cfg: FeatureConfig,
                   out_dir, sample_rate: int = DEFAULT_SAMPLE_RATE,
                   duration_s: float = DEFAULT_DURATION_S) -> ExtractResult:
    """One SPSF file per (clip, kind); reruns skip up-to-date outputs.

    Outputs are keyed by a content hash of (audio bytes, config, kind), so
    changing either the audio or the extraction settings rewrites the file.
    Per-file errors are collected, not raised.
    """
    os.makedirs(out_dir, exist_ok=True)
    result = ExtractResult()
    for row in rows:
        try:
            with open(row.path, "rb") as fh:
                audio_bytes = fh.read()
        except OSError as exc:
            result.errors.append(f"{row.path}: {exc}")
            continue
        clip = None
        for kind in kinds:
            out_path = os.path.join(out_dir, feature_filename(row.path, kind))
            want_hash = source_hash(audio_bytes, cfg, kind, sample_rate, duration_s)
            if os.path.exists(out_path):
                try:
                    _, meta = load_feature(out_path)
                    if meta.get("source_hash") == want_hash:
                        result.skipped += 1
                        continue
                except Exception:
                    pass  # unreadable cache entry: rewrite it
            try:
                if clip is None:
                    clip = load_wav_mono(audio_bytes, sample_rate, duration_s)
                fm = extract(clip, kind, cfg)
                save_feature(out_path, fm, {"source_hash": want_hash,
                                            "source_path": row.path})
                result.written += 1
            except Exception as exc:
                result.errors.append(f"{row.path} [{kind}]: {exc}")
    return result


def load_feature_arrays(rows: list[ManifestRow], kinds: list[str], feature_dir
                        ) -> tuple[dict[str, np.ndarray], np.ndarray, list[str]]:
    """Stack per-kind feature grids for a manifest.

    Returns ({kind: [n, T, F] float32}, label ids [n], sorted label names).
    """
    labels = label_set(rows)
    label_to_id = {lb: i for i, lb in enumerate(labels)}
    features: dict[str, list[np.ndarray]] = {k: [] for k in kinds}
    for row in rows:
        for kind in kinds:
            path = os.path.join(feature_dir, feature_filename(row.path, kind))
            if not os.path.exists(path):
                raise FileNotFoundError(
                    f"missing feature file {path} (run extract first)"
                )
            fm, _ = load_feature(path)
            features[kind].append(fm.values)
    stacked = {}
    for kind, grids in features.items():
        shapes = {g.shape for g in grids}
        if len(shapes) != 1:
            raise ValueError(f"inconsistent {kind} grids: {sorted(shapes)}")
        stacked[kind] = np.stack(grids)
    y = np.array([label_to_id[r.label] for r in rows], dtype=np.int64)
    return stacked, y, labels


def evaluate_bundle(bundle: EnsembleBundle, rows: list[ManifestRow], feature_dir,
                    labels: list[str] | None = None, batch_size: int = 8,
                    run_id: str = "", model: str = "") -> EvalReport:
    """Eval-mode inference over a manifest with the bundle's mean combination."""
    kinds = sorted({k for m in bundle.members for k in m.kinds})
    features, y, found_labels = load_feature_arrays(rows, kinds, feature_dir)
    use_labels = labels if labels is not None else found_labels
    if len(use_labels) != bundle.n_classes:
        raise ValueError(
            f"manifest has {len(use_labels)} classes but model outputs "
            f"{bundle.n_classes}"
        )
    n = y.size
    probs = np.zeros((n, bundle.n_classes))
    for start in range(0, n, batch_size):
        sl = slice(start, min(start + batch_size, n))
        batch = {k: v[sl] for k, v in features.items()}
        probs[sl] = bundle.predict(batch)
    return EvalReport.build(probs, y, bundle.n_classes, bundle.size_bytes(),
                            labels=use_labels, run_id=run_id, model=model)
