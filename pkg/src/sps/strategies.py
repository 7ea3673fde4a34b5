"""Decision-level processing strategies over trained networks.

Three axes, freely composable:

* multi-representation ("spsmr"): one independent network per
  representation; post-softmax scores averaged.
* multi-frequency-band ("spsmf"): one independent network per sub-band of
  a representation; post-softmax scores averaged. No global classifier.
* multi-temporal-frame ("spsmt"): a head policy on a single network — the
  shared classifier scores every temporal frame of the deep feature map
  and the frame scores are averaged. Adds no parameters.

Every combination rule here is an arithmetic mean of probability vectors,
so a composed system is just a flat mean over all leaf score vectors.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .features import FeatureMap, KINDS
from .models import HEAD_SPSMT, HEAD_STANDARD, Network, load_network

SPSMR = "spsmr"
SPSMF = "spsmf"
SPSMT = "spsmt"
STRATEGIES = (SPSMR, SPSMF, SPSMT)


def subband_ranges(n_bands: int, count: int, overlap: int = 0) -> list[tuple[int, int]]:
    """[lo, hi) ranges of `count` sub-bands over an F-band axis.

    Widths are floor((F + (count-1)*overlap) / count); adjacent ranges
    overlap by exactly `overlap`; the last range is widened to end at F.
    """
    if count < 1:
        raise ValueError(f"sub-band count must be >= 1, got {count}")
    if count > n_bands:
        raise ValueError(f"cannot split {n_bands} bands into {count} sub-bands")
    if overlap < 0:
        raise ValueError("overlap must be >= 0")
    width = (n_bands + (count - 1) * overlap) // count
    if width < 1:
        raise ValueError(f"computed sub-band width {width} < 1")
    if width <= overlap and count > 1:
        raise ValueError(f"overlap {overlap} must be smaller than width {width}")
    stride = width - overlap
    ranges = [(i * stride, i * stride + width) for i in range(count)]
    lo, _ = ranges[-1]
    ranges[-1] = (lo, n_bands)
    if ranges[-1][1] - ranges[-1][0] < 1:
        raise ValueError("last sub-band is empty; reduce count or overlap")
    return ranges


@dataclass(frozen=True)
class SubbandSplit:
    count: int
    overlap: int
    ranges: tuple[tuple[int, int], ...]

    @staticmethod
    def build(n_bands: int, count: int, overlap: int = 0) -> "SubbandSplit":
        return SubbandSplit(count, overlap, tuple(subband_ranges(n_bands, count, overlap)))


def split_subbands(fm: FeatureMap, count: int, overlap: int = 0) -> list[FeatureMap]:
    """Slice a feature map into sub-band maps (full T, partial F)."""
    if count == 1:
        return [fm]
    out = []
    for lo, hi in subband_ranges(fm.n_bands, count, overlap):
        out.append(FeatureMap(fm.values[:, lo:hi], fm.kind, fm.sample_rate,
                              fm.hop, fm.window))
    return out


def average_scores(scores: list[np.ndarray]) -> np.ndarray:
    """Arithmetic mean of probability vectors (the only combination rule)."""
    if not scores:
        raise ValueError("cannot average an empty score list")
    stacked = np.stack([np.asarray(s, dtype=np.float64) for s in scores])
    return stacked.mean(axis=0)


@dataclass
class EnsembleMember:
    net: Network
    kinds: tuple[str, ...]            # input representations, channel order
    band_range: tuple[int, int] | None = None

    def input_for(self, features: dict[str, np.ndarray]) -> np.ndarray:
        """Assemble [b, t, f, n] input from per-kind [b, t, F] arrays."""
        missing = [k for k in self.kinds if k not in features]
        if missing:
            raise KeyError(f"missing representation(s): {', '.join(missing)}")
        x = np.stack([features[k] for k in self.kinds], axis=-1)
        if self.band_range is not None:
            lo, hi = self.band_range
            if hi > x.shape[2]:
                raise ValueError(
                    f"band range [{lo}, {hi}) exceeds input bands {x.shape[2]}"
                )
            x = x[:, :, lo:hi, :]
        return np.ascontiguousarray(x)


class EnsembleBundle:
    """Networks whose post-softmax scores are combined by arithmetic mean."""

    def __init__(self, members: list[EnsembleMember]):
        if not members:
            raise ValueError("ensemble needs at least one member")
        n_classes = {m.net.spec.n_classes for m in members}
        if len(n_classes) != 1:
            raise ValueError(f"members disagree on class count: {sorted(n_classes)}")
        self.members = members
        self.n_classes = n_classes.pop()

    def member_scores(self, features: dict[str, np.ndarray]) -> list[np.ndarray]:
        return [m.net.forward(m.input_for(features)) for m in self.members]

    def predict(self, features: dict[str, np.ndarray]) -> np.ndarray:
        """[b, n_classes] averaged probabilities, eval mode."""
        return average_scores(self.member_scores(features))

    def size_bytes(self) -> int:
        return sum(m.net.size_bytes() for m in self.members)

    def param_count(self) -> int:
        return sum(m.net.param_count() for m in self.members)


def _batched(features: dict[str, FeatureMap]) -> dict[str, np.ndarray]:
    return {k: fm.values[None, :, :] for k, fm in features.items()}


def spsmr_predict(bundle: EnsembleBundle, features: dict[str, FeatureMap]) -> np.ndarray:
    """Average the per-representation networks' scores for one clip."""
    for m in bundle.members:
        for kind in m.kinds:
            if kind not in features:
                raise KeyError(f"missing representation: {kind}")
    return bundle.predict(_batched(features))[0]


def spsmf_predict(bundle: EnsembleBundle, fm: FeatureMap) -> np.ndarray:
    """Average the per-sub-band networks' scores for one clip."""
    for m in bundle.members:
        if m.band_range is not None and m.band_range[1] > fm.n_bands:
            raise ValueError(
                f"member band range {m.band_range} exceeds feature bands {fm.n_bands}"
            )
    return bundle.predict(_batched({m.kinds[0]: fm for m in bundle.members}))[0]


def spsmt_forward(net: Network, batch: np.ndarray) -> np.ndarray:
    """Eval-mode forward under the frame-averaging head (parameters shared
    with the standard head; nothing is copied)."""
    prev = net.spec.head
    try:
        net.with_head(HEAD_SPSMT)
        return net.forward(batch)
    finally:
        net.with_head(prev)


@dataclass(frozen=True)
class MemberPlan:
    kind: str
    band_range: tuple[int, int] | None
    head: str


def compose(strategies, kinds=KINDS, n_bands: int | None = None,
            subbands: int = 5, overlap: int = 0) -> list[MemberPlan]:
    """Expand a strategy subset into the flat member list it implies.

    The final prediction is the arithmetic mean over every member's score;
    with equal member counts per representation the nested means of the
    individual strategies collapse to this flat mean.
    """
    chosen = set(strategies)
    unknown = chosen - set(STRATEGIES)
    if unknown:
        raise ValueError(f"unknown strategies: {sorted(unknown)}")
    if not chosen:
        raise ValueError("empty strategy composition")
    use_kinds = tuple(kinds) if SPSMR in chosen else (tuple(kinds)[0],)
    head = HEAD_SPSMT if SPSMT in chosen else HEAD_STANDARD
    plans = []
    for kind in use_kinds:
        if SPSMF in chosen:
            if n_bands is None:
                raise ValueError("spsmf composition needs n_bands")
            for rng in subband_ranges(n_bands, subbands, overlap):
                plans.append(MemberPlan(kind, rng, head))
        else:
            plans.append(MemberPlan(kind, None, head))
    return plans


def save_ensemble_manifest(path, entries: list[dict]) -> None:
    """entries: [{"checkpoint": str, "kinds": [...], "band_range": [lo, hi] | None,
    "head": "standard" | "spsmt"}, ...]"""
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({"members": entries}, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_ensemble_manifest(path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    members = doc.get("members")
    if not members:
        raise ValueError(f"{path}: ensemble manifest has no members")
    return members


def load_ensemble(path) -> EnsembleBundle:
    members = []
    for entry in load_ensemble_manifest(path):
        head = entry.get("head", HEAD_STANDARD)
        net, _ = load_network(entry["checkpoint"], head=head)
        band = entry.get("band_range")
        members.append(EnsembleMember(
            net=net,
            kinds=tuple(entry["kinds"]),
            band_range=tuple(band) if band else None,
        ))
    return EnsembleBundle(members)
