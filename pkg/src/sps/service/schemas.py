"""Pydantic request/response models for the service API.

The service operates on a filesystem it shares with its clients: requests
carry paths to manifests, feature directories and checkpoints; bulky
artifacts (WAVs, SPSF files, checkpoints) stay on disk and responses carry
their paths plus summary numbers.
"""

from __future__ import annotations

from pydantic import BaseModel, Field


class HealthResponse(BaseModel):
    status: str
    version: str


class FeatureSettings(BaseModel):
    """Extraction knobs; defaults are the 10-class task setup."""

    window: int = 2048
    hop: int = 512
    log_offset: float = 1e-10
    mel_bands: int = 40
    mel_fmin: float = 0.0
    mel_fmax: float | None = None
    mfcc_coeffs: int | None = None
    cqt_bins: int = 64
    cqt_fmin: float = 32.70319566257483
    cqt_bins_per_octave: int = 8
    gamma_bands: int = 64
    gamma_fmin: float = 50.0
    gamma_fmax: float | None = None


class SynthRequest(BaseModel):
    out_dir: str
    n_classes: int = 3
    clips_per_class: int = 20
    seed: int = 0
    duration_s: float = 10.0
    sample_rate: int = 44100


class SynthResponse(BaseModel):
    train_manifest: str
    test_manifest: str
    n_files: int


class ExtractRequest(BaseModel):
    manifest: str
    out_dir: str
    kinds: list[str] = Field(default_factory=lambda: ["log_mel", "cqt", "gamma", "mfcc"])
    features: FeatureSettings = Field(default_factory=FeatureSettings)
    sample_rate: int = 44100
    duration_s: float = 10.0


class ExtractResponse(BaseModel):
    written: int
    skipped: int
    errors: list[str]


class TrainSettings(BaseModel):
    task: str = "1b"
    kinds: list[str] = Field(default_factory=list)
    fusion: str | None = None
    strategies: list[str] = Field(default_factory=list)
    batch_size: int = 64
    iterations: int = 12000
    lr_initial: float = 0.001
    lr_decay: float = 0.91
    lr_decay_every: int = 200
    mixup_alpha: float = 0.2
    seed: int = 0
    subbands: int = 5
    subband_overlap: int = 0


class TrainRequest(BaseModel):
    manifest: str
    feature_dir: str
    out_dir: str
    config: TrainSettings = Field(default_factory=TrainSettings)


class TrainResponse(BaseModel):
    checkpoints: list[str]
    log_paths: list[str]
    ensemble_manifest: str
    config_path: str
    final_losses: dict[str, float]
    labels: list[str]
    resolved_config: dict


class EvaluateRequest(BaseModel):
    model: str  # checkpoint (.spsf) or ensemble manifest (.json)
    manifest: str
    feature_dir: str
    out_json: str | None = None
    out_csv: str | None = None
    run_id: str = ""


class EvaluateResponse(BaseModel):
    macro_accuracy: float
    log_loss: float
    per_class_accuracy: list[float]
    confusion: list[list[int]]
    model_size_bytes: int
    model_size: str
    n_samples: int
    labels: list[str]
    run_id: str
    model: str
    report_json: str | None = None
    report_csv: str | None = None


class FuseRequest(BaseModel):
    checkpoints: list[str]
    out_path: str
    head: str | None = None  # override every member's head if set


class FuseResponse(BaseModel):
    manifest_path: str
    n_members: int
    model_size_bytes: int
    model_size: str


class LayerRow(BaseModel):
    layer: str
    params: int


class DescribeRequest(BaseModel):
    arch: str | None = None       # task1a | task1b (build fresh), or:
    checkpoint: str | None = None  # describe a stored model, or:
    ensemble: str | None = None    # describe a stored ensemble
    n_in: int = 1
    n_classes: int | None = None
    fusion: str | None = None
    head: str = "standard"


class DescribeResponse(BaseModel):
    layers: list[LayerRow]
    param_count: int
    model_size_bytes: int
    model_size: str
    members: int = 1
