"""Training configuration, the iteration-based training loop, and run
orchestration for single networks and strategy ensembles.

Reproducibility contract: (seed, config, data) determine every output byte.
All randomness flows from PCG64 generators seeded by the master seed (or a
hash-derived per-member seed), the loop is iteration-based with
reshuffled-epoch sampling, and the learning-rate schedule is evaluated in
decimal so logged rates equal their printed decimal values exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
from dataclasses import dataclass, field, asdict
from decimal import Decimal

import numpy as np

from . import features as F
from .models import (
    HEAD_SPSMT, HEAD_STANDARD, Network, NetworkSpec, TASK1A, TASK1B,
    build_network, save_network,
)
from .nn import Adam, cross_entropy, mixup
from .pipeline import load_feature_arrays
from .strategies import (
    EnsembleBundle, EnsembleMember, MemberPlan, SPSMF, SPSMR, SPSMT,
    STRATEGIES, compose, save_ensemble_manifest,
)
from .synth import ManifestRow, label_set

TASK_ARCH = {"1a": TASK1A, "1b": TASK1B}
TASK_KINDS = {"1a": list(F.KINDS), "1b": [F.LOG_MEL, F.CQT, F.GAMMA]}


@dataclass
class TrainConfig:
    task: str = "1b"
    kinds: list[str] = field(default_factory=list)  # empty -> task default
    fusion: str | None = None                       # ef | mf | lf
    strategies: list[str] = field(default_factory=list)
    batch_size: int = 64
    iterations: int = 12000
    lr_initial: float = 0.001
    lr_decay: float = 0.91
    lr_decay_every: int = 200
    mixup_alpha: float = 0.2
    seed: int = 0
    subbands: int = 5
    subband_overlap: int = 0

    def __post_init__(self):
        if self.task not in TASK_ARCH:
            raise ValueError(f"task must be one of {sorted(TASK_ARCH)}, got {self.task!r}")
        if not self.kinds:
            self.kinds = list(TASK_KINDS[self.task])
        for k in self.kinds:
            if k not in F.KINDS:
                raise ValueError(f"unknown representation {k!r}")
        bad = set(self.strategies) - set(STRATEGIES)
        if bad:
            raise ValueError(f"unknown strategies: {sorted(bad)}")
        if self.fusion is not None:
            if self.fusion not in ("ef", "mf", "lf"):
                raise ValueError(f"unknown fusion {self.fusion!r}")
            if SPSMR in self.strategies or SPSMF in self.strategies:
                raise ValueError(
                    "invalid strategy combination: feature-level fusion "
                    "(ef/mf/lf) excludes spsmr/spsmf"
                )
            if self.fusion == "lf" and SPSMT in self.strategies:
                raise ValueError("invalid strategy combination: lf has no "
                                 "shared feature map for spsmt")
            if len(self.kinds) < 2:
                raise ValueError("fusion needs at least 2 representations")
        if SPSMR in self.strategies and len(self.kinds) < 2:
            raise ValueError("spsmr needs at least 2 representations")
        for name, v in (("batch_size", self.batch_size),
                        ("iterations", self.iterations),
                        ("lr_decay_every", self.lr_decay_every),
                        ("subbands", self.subbands)):
            if v <= 0:
                raise ValueError(f"{name} must be positive, got {v}")
        if self.lr_initial <= 0 or not 0 < self.lr_decay <= 1:
            raise ValueError("need lr_initial > 0 and 0 < lr_decay <= 1")
        if self.mixup_alpha <= 0:
            raise ValueError("mixup_alpha must be positive")
        if self.subband_overlap < 0:
            raise ValueError("subband_overlap must be >= 0")

    @property
    def arch(self) -> str:
        return TASK_ARCH[self.task]

    def resolved(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(doc: dict) -> "TrainConfig":
        return TrainConfig(**doc)


def lr_at(cfg: TrainConfig, iteration: int) -> float:
    """Stepwise exponential decay: lr * decay^(iteration // every).

    Evaluated in decimal arithmetic so that, e.g., the rate after two decay
    steps is exactly the float nearest 0.0008281 rather than a product of
    rounding errors.
    """
    k = iteration // cfg.lr_decay_every
    return float(Decimal(str(cfg.lr_initial)) * Decimal(str(cfg.lr_decay)) ** k)


def member_seed(master: int, member_id: str, purpose: str) -> int:
    digest = hashlib.sha256(f"{master}:{member_id}:{purpose}".encode()).digest()
    return int.from_bytes(digest[:8], "little") >> 1  # non-negative


def one_hot(label_ids: np.ndarray, n_classes: int, dtype=np.float32) -> np.ndarray:
    return np.eye(n_classes, dtype=dtype)[label_ids]


def train_network(net: Network, x: np.ndarray, y: np.ndarray, cfg: TrainConfig,
                  rng: np.random.Generator) -> list[tuple[int, float, float]]:
    """Run the loop on one network; returns (iteration, lr, loss) rows.

    Mini-batches are drawn from a shuffled index queue that reshuffles when
    exhausted; mixup is applied to every batch.
    """
    adam = Adam(net.params())
    n = x.shape[0]
    order = rng.permutation(n)
    pos = 0
    logs = []
    for it in range(cfg.iterations):
        lr = lr_at(cfg, it)
        if pos + cfg.batch_size > n:
            order = rng.permutation(n)
            pos = 0
        idx = order[pos:pos + cfg.batch_size]
        pos += cfg.batch_size
        bx, by = mixup(x[idx], y[idx], cfg.mixup_alpha, rng)
        probs = net.forward(bx, training=True, rng=rng)
        loss, grad = cross_entropy(probs, by)
        net.backward(grad)
        adam.step(lr)
        logs.append((it, lr, loss))
    return logs


def write_training_log(path, logs: list[tuple[int, float, float]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iteration", "lr", "loss"])
        for it, lr, loss in logs:
            writer.writerow([it, repr(lr), repr(loss)])


def read_training_log(path) -> list[tuple[int, float, float]]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        return [(int(r[0]), float(r[1]), float(r[2])) for r in reader]


def _member_plans(cfg: TrainConfig, n_bands: int) -> list[tuple[str, MemberPlan | None]]:
    """(member id, plan) pairs; plan None means a single fusion network."""
    if cfg.fusion is not None:
        return [(cfg.fusion, None)]
    if cfg.strategies:
        plans = compose(cfg.strategies, kinds=cfg.kinds, n_bands=n_bands,
                        subbands=cfg.subbands, overlap=cfg.subband_overlap)
    else:
        plans = [MemberPlan(cfg.kinds[0], None, HEAD_STANDARD)]
    out = []
    for p in plans:
        mid = p.kind if p.band_range is None else f"{p.kind}_b{p.band_range[0]}-{p.band_range[1]}"
        out.append((mid, p))
    return out


@dataclass
class TrainRunResult:
    checkpoints: list[str]
    log_paths: list[str]
    ensemble_manifest: str
    config_path: str
    final_losses: dict[str, float]
    labels: list[str]


def train_run(train_rows: list[ManifestRow], feature_dir, out_dir,
              cfg: TrainConfig) -> TrainRunResult:
    """Train every member the config implies; write checkpoints, per-member
    CSV logs, an ensemble manifest, and the fully resolved config."""
    os.makedirs(out_dir, exist_ok=True)
    labels = label_set(train_rows)
    if len(labels) < 2:
        raise ValueError("training needs at least 2 classes")
    n_classes = len(labels)
    feats, y_ids, _ = load_feature_arrays(train_rows, cfg.kinds, feature_dir)
    y = one_hot(y_ids, n_classes)
    n_bands = feats[cfg.kinds[0]].shape[2]

    head = HEAD_SPSMT if SPSMT in cfg.strategies else HEAD_STANDARD
    checkpoints, log_paths, final_losses = [], [], {}
    manifest_entries = []
    for mid, plan in _member_plans(cfg, n_bands):
        init_seed = member_seed(cfg.seed, mid, "init")
        loop_seed = member_seed(cfg.seed, mid, "train")
        if plan is None:  # fusion network over all representations
            spec = NetworkSpec(cfg.arch, n_classes, len(cfg.kinds),
                               fusion=cfg.fusion, head=head)
            member = EnsembleMember(build_network(spec, seed=init_seed),
                                    tuple(cfg.kinds), None)
        else:
            spec = NetworkSpec(cfg.arch, n_classes, 1, fusion=None, head=plan.head)
            member = EnsembleMember(build_network(spec, seed=init_seed),
                                    (plan.kind,), plan.band_range)
        x = member.input_for(feats)
        rng = np.random.Generator(np.random.PCG64(loop_seed))
        logs = train_network(member.net, x, y, cfg, rng)

        ckpt_path = os.path.join(out_dir, f"{mid}.spsf")
        save_network(ckpt_path, member.net, {
            "kinds": list(member.kinds),
            "band_range": list(member.band_range) if member.band_range else None,
            "labels": labels,
            "config": cfg.resolved(),
            "member_id": mid,
            "init_seed": init_seed,
            "loop_seed": loop_seed,
            "step": cfg.iterations,
        })
        log_path = os.path.join(out_dir, f"{mid}.log.csv")
        write_training_log(log_path, logs)
        checkpoints.append(ckpt_path)
        log_paths.append(log_path)
        final_losses[mid] = logs[-1][2]
        manifest_entries.append({
            "checkpoint": ckpt_path,
            "kinds": list(member.kinds),
            "band_range": list(member.band_range) if member.band_range else None,
            "head": member.net.spec.head,
        })

    manifest_path = os.path.join(out_dir, "ensemble.json")
    save_ensemble_manifest(manifest_path, manifest_entries)
    config_path = os.path.join(out_dir, "run_config.json")
    with open(config_path, "w", encoding="utf-8") as fh:
        json.dump(cfg.resolved(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return TrainRunResult(checkpoints, log_paths, manifest_path, config_path,
                          final_losses, labels)
