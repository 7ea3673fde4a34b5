"""Network construction: the 10-class VGG-style stack, the 3-class tiny
stack, and the early/middle/late feature-fusion variants.

A Network is stems (parallel per-representation branches, possibly empty),
a trunk (shared convolutional tail), and a classifier, plus a head policy:

* "standard": global pooling (freq mean, time max) -> FC stack -> softmax.
* "spsmt":    freq mean only; the same FC stack scores every temporal frame
              and the post-softmax frame scores are averaged. No parameters
              are added or reshaped, so checkpoints swap between heads.

Model size is reported as parameter count x 4 bytes (float32 storage),
excluding batch-norm running statistics and optimizer state.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, replace

import numpy as np

from . import spsf
from .nn import (
    AvgPool, BatchNorm, Conv2d, Dense, Dropout, GlobalPool, Layer, Param,
    ReLU, Sequential, ShapeError, Softmax,
)

TASK1A = "task1a"
TASK1B = "task1b"
ARCHS = (TASK1A, TASK1B)

FUSION_EF = "ef"
FUSION_MF = "mf"
FUSION_LF = "lf"
FUSIONS = (FUSION_EF, FUSION_MF, FUSION_LF)

HEAD_STANDARD = "standard"
HEAD_SPSMT = "spsmt"

BYTES_PER_PARAM = 4


@dataclass(frozen=True)
class NetworkSpec:
    arch: str
    n_classes: int
    n_in: int = 1
    fusion: str | None = None
    head: str = HEAD_STANDARD

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown architecture {self.arch!r}")
        if self.fusion is not None and self.fusion not in FUSIONS:
            raise ValueError(f"unknown fusion {self.fusion!r}")
        if self.head not in (HEAD_STANDARD, HEAD_SPSMT):
            raise ValueError(f"unknown head {self.head!r}")
        if self.fusion == FUSION_LF and self.head == HEAD_SPSMT:
            raise ValueError("late fusion has no shared feature map; spsmt head invalid")
        if self.fusion in (FUSION_MF, FUSION_LF) and self.n_in < 2:
            raise ValueError(f"{self.fusion} fusion needs n_in >= 2")

    def to_meta(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_meta(meta: dict) -> "NetworkSpec":
        return NetworkSpec(**meta)


# (kernel, channels per conv in each stage) and classifier widths. A stage is
# the convs between pools; pools sit between stages.
_STAGES = {
    TASK1A: {"convs": [[(3, 64), (3, 64)], [(3, 128), (3, 128)],
                       [(3, 256), (3, 256)], [(3, 512), (3, 512)]],
             "pools": [(4, 2), (4, 2), (2, 2)],
             "fc": 512},
    TASK1B: {"convs": [[(7, 32)], [(7, 32)], [(3, 64)], [(3, 64)]],
             "pools": [(4, 2), (4, 2), (2, 2)],
             "fc": 200},
}


def _conv_bn_relu(c_in, c_out, k, rng, dtype):
    return [Conv2d(c_in, c_out, k, rng, dtype), BatchNorm(c_out, dtype=dtype), ReLU()]


def _build_stage(c_in, stage, rng, dtype):
    layers = []
    for k, c_out in stage:
        layers += _conv_bn_relu(c_in, c_out, k, rng, dtype)
        c_in = c_out
    return layers, c_in


class Network:
    def __init__(self, spec: NetworkSpec, stems: list[Sequential],
                 trunk: Sequential | None, classifier: Sequential,
                 embed_width: int):
        self.spec = spec
        self.stems = stems
        self.trunk = trunk
        self.classifier = classifier
        self.embed_width = embed_width  # channels entering the classifier per branch
        self.global_pool = GlobalPool()
        self._stem_pools = [GlobalPool() for _ in stems] if spec.fusion == FUSION_LF else []
        self._softmax = Softmax()
        self.last_feature_map: np.ndarray | None = None
        self._assign_names()

    # -- bookkeeping ------------------------------------------------------

    def _assign_names(self):
        for si, stem in enumerate(self.stems):
            for li, layer in enumerate(stem):
                layer.name = f"stems.{si}.{li}"
        if self.trunk is not None:
            for li, layer in enumerate(self.trunk):
                layer.name = f"trunk.{li}"
        for li, layer in enumerate(self.classifier):
            layer.name = f"classifier.{li}"

    def _layers(self) -> list[Layer]:
        out: list[Layer] = []
        for stem in self.stems:
            out.extend(stem)
        if self.trunk is not None:
            out.extend(self.trunk)
        out.extend(self.classifier)
        return out

    def named_params(self) -> list[tuple[str, Param]]:
        return [(f"{layer.name}.{p.name}", p)
                for layer in self._layers() for p in layer.params()]

    def named_buffers(self) -> list[tuple[str, np.ndarray]]:
        return [(f"{layer.name}.{name}", buf)
                for layer in self._layers() for name, buf in layer.buffers()]

    def params(self) -> list[Param]:
        return [p for _, p in self.named_params()]

    def param_count(self) -> int:
        return sum(p.size for p in self.params())

    def size_bytes(self) -> int:
        return self.param_count() * BYTES_PER_PARAM

    @property
    def head(self) -> str:
        return self.spec.head

    def with_head(self, head: str) -> "Network":
        """Same parameter tensors under the other head policy."""
        self.spec = replace(self.spec, head=head)
        return self

    # -- forward / backward ------------------------------------------------

    def _backbone_forward(self, x, training, rng):
        if self.stems:
            parts = [stem.forward(x[..., i:i + 1], training=training, rng=rng)
                     for i, stem in enumerate(self.stems)]
            if self.spec.fusion == FUSION_MF:
                merged = np.concatenate(parts, axis=3)
                return self.trunk.forward(merged, training=training, rng=rng)
            return parts  # late fusion: list of per-branch feature maps
        return self.trunk.forward(x, training=training, rng=rng)

    def forward(self, x: np.ndarray, training: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        """Class probability vectors, shape [batch, n_classes]."""
        if x.ndim != 4:
            raise ShapeError(f"expected [b, t, f, c] input, got shape {x.shape}")
        if x.shape[3] != self.spec.n_in:
            raise ShapeError(
                f"expected {self.spec.n_in} input channels, got {x.shape[3]}"
            )
        feat = self._backbone_forward(x, training, rng)

        if self.spec.fusion == FUSION_LF:
            embeds = [pool.forward(m) for pool, m in zip(self._stem_pools, feat)]
            self.last_feature_map = None
            self._lf_widths = [e.shape[1] for e in embeds]
            z = np.concatenate(embeds, axis=1)
            logits = self.classifier.forward(z, training=training, rng=rng)
            return self._softmax.forward(logits)

        self.last_feature_map = feat  # [b, t, f, c]
        b, t, f, c = feat.shape
        if t == 0:
            raise ShapeError("input shorter than the network's receptive field")
        if self.head == HEAD_SPSMT:
            frames = (feat.sum(axis=2, dtype=np.float64) / f).astype(feat.dtype)
            self._spsmt_tf = (b, t, f, c)
            logits = self.classifier.forward(frames.reshape(b * t, c),
                                             training=training, rng=rng)
            frame_probs = self._softmax.forward(logits)
            return (frame_probs.reshape(b, t, -1).sum(axis=1, dtype=np.float64) / t
                    ).astype(feat.dtype)
        z = self.global_pool.forward(feat)
        logits = self.classifier.forward(z, training=training, rng=rng)
        return self._softmax.forward(logits)

    def backward(self, grad_probs: np.ndarray) -> None:
        """Propagate loss gradient wrt output probabilities; sets param grads."""
        if self.spec.fusion == FUSION_LF:
            g = self._softmax.backward(grad_probs)
            g = self.classifier.backward(g)
            offset = 0
            for pool, stem, width in zip(self._stem_pools, self.stems, self._lf_widths):
                gm = pool.backward(np.ascontiguousarray(g[:, offset:offset + width]))
                stem.backward(gm)
                offset += width
            return

        if self.head == HEAD_SPSMT:
            b, t, f, c = self._spsmt_tf
            gframe = np.repeat(grad_probs[:, None, :] / grad_probs.dtype.type(t),
                               t, axis=1).reshape(b * t, -1)
            g = self._softmax.backward(gframe)
            g = self.classifier.backward(g)  # [b*t, c]
            gfeat = np.repeat(
                g.reshape(b, t, 1, c) / g.dtype.type(f), f, axis=2
            )
        else:
            g = self._softmax.backward(grad_probs)
            g = self.classifier.backward(g)
            gfeat = self.global_pool.backward(g)

        if self.stems:  # middle fusion
            gmerged = self.trunk.backward(gfeat)
            widths = [self.embed_width_per_stem] * len(self.stems)
            offset = 0
            for stem, width in zip(self.stems, widths):
                stem.backward(np.ascontiguousarray(gmerged[..., offset:offset + width]))
                offset += width
        else:
            self.trunk.backward(gfeat)

    def describe(self) -> list[tuple[str, int]]:
        """(layer description, parameter count) rows in architecture order."""
        rows = []
        for si, stem in enumerate(self.stems):
            for layer in stem:
                rows.append((f"branch {si}: {layer.describe()}",
                             sum(p.size for p in layer.params())))
        if self.trunk is not None:
            for layer in self.trunk:
                rows.append((layer.describe(), sum(p.size for p in layer.params())))
        if self.spec.fusion != FUSION_LF and not any(
            isinstance(l, GlobalPool) for l in self._layers()
        ):
            rows.append(("Global Pooling", 0))
        for layer in self.classifier:
            rows.append((layer.describe(), sum(p.size for p in layer.params())))
        rows.append(("softmax", 0))
        return rows


def _classifier(c_in: int, fc: int, n_classes: int, rng, dtype) -> Sequential:
    return Sequential([
        Dense(c_in, fc, rng, dtype), ReLU(), Dropout(0.5),
        Dense(fc, n_classes, rng, dtype),
    ])


def build_network(spec: NetworkSpec, seed: int = 0, dtype=np.float32) -> Network:
    """Construct any supported architecture with deterministic init."""
    rng = np.random.Generator(np.random.PCG64(seed))
    cfg = _STAGES[spec.arch]
    stages, pools, fc = cfg["convs"], cfg["pools"], cfg["fc"]

    if spec.fusion == FUSION_MF:
        # Per-representation first stage (+ its pool), shared tail on the
        # channel-concatenated maps.
        stems = []
        for _ in range(spec.n_in):
            layers, c_stem = _build_stage(1, stages[0], rng, dtype)
            layers.append(AvgPool(*pools[0]))
            layers[0].input_grad_needed = False
            stems.append(Sequential(layers))
        trunk_layers: list[Layer] = []
        c = c_stem * spec.n_in
        for si, stage in enumerate(stages[1:], start=1):
            layers, c = _build_stage(c, stage, rng, dtype)
            trunk_layers += layers
            if si < len(stages) - 1:
                trunk_layers.append(AvgPool(*pools[si]))
        net = Network(spec, stems, Sequential(trunk_layers),
                      _classifier(c, fc, spec.n_classes, rng, dtype), c)
        net.embed_width_per_stem = c_stem
        return net

    if spec.fusion == FUSION_LF:
        stems = []
        for _ in range(spec.n_in):
            layers = []
            c = 1
            for si, stage in enumerate(stages):
                stage_layers, c = _build_stage(c, stage, rng, dtype)
                layers += stage_layers
                if si < len(stages) - 1:
                    layers.append(AvgPool(*pools[si]))
            layers[0].input_grad_needed = False
            stems.append(Sequential(layers))
        classifier = _classifier(c * spec.n_in, fc, spec.n_classes, rng, dtype)
        return Network(spec, stems, None, classifier, c * spec.n_in)

    # plain single-representation network, or early fusion via n_in channels
    layers = []
    c = spec.n_in
    for si, stage in enumerate(stages):
        stage_layers, c = _build_stage(c, stage, rng, dtype)
        layers += stage_layers
        if si < len(stages) - 1:
            layers.append(AvgPool(*pools[si]))
    layers[0].input_grad_needed = False
    return Network(spec, [], Sequential(layers),
                   _classifier(c, fc, spec.n_classes, rng, dtype), c)


def build_task1a(n_in: int = 1, n_classes: int = 10, seed: int = 0,
                 dtype=np.float32) -> Network:
    fusion = FUSION_EF if n_in > 1 else None
    return build_network(NetworkSpec(TASK1A, n_classes, n_in, fusion), seed, dtype)


def build_task1b(n_in: int = 1, n_classes: int = 3, seed: int = 0,
                 dtype=np.float32) -> Network:
    fusion = FUSION_EF if n_in > 1 else None
    return build_network(NetworkSpec(TASK1B, n_classes, n_in, fusion), seed, dtype)


def build_fusion(kind: str, n_representations: int, arch: str = TASK1A,
                 n_classes: int = 10, seed: int = 0, dtype=np.float32) -> Network:
    if kind not in FUSIONS:
        raise ValueError(f"fusion kind must be one of {FUSIONS}, got {kind!r}")
    spec = NetworkSpec(arch, n_classes, n_representations, kind)
    return build_network(spec, seed, dtype)


def forward(net: Network, batch: np.ndarray, mode: str = "eval",
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Run the network; mode is 'train' or 'eval'."""
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    return net.forward(batch, training=(mode == "train"), rng=rng)


def network_tensors(net: Network) -> dict[str, np.ndarray]:
    tensors = {name: p.value for name, p in net.named_params()}
    tensors.update({name: buf for name, buf in net.named_buffers()})
    return tensors


def save_network(path, net: Network, extra_meta: dict | None = None) -> None:
    header = {"spec": net.spec.to_meta()}
    if extra_meta:
        header.update(extra_meta)
    spsf.save_checkpoint(path, network_tensors(net), header)


def load_network(path, head: str | None = None) -> tuple[Network, dict]:
    """Rebuild the architecture and load its tensors; optional head override."""
    tensors, header = spsf.load_checkpoint(path)
    spec = NetworkSpec.from_meta(header["spec"])
    if head is not None:
        spec = replace(spec, head=head)
    net = build_network(spec, seed=0)
    assign_tensors(net, tensors)
    return net, header


def assign_tensors(net: Network, tensors: dict[str, np.ndarray]) -> None:
    for name, p in net.named_params():
        if name not in tensors:
            raise KeyError(f"checkpoint missing parameter {name}")
        if tensors[name].shape != p.value.shape:
            raise ShapeError(
                f"{name}: checkpoint shape {tensors[name].shape} vs model {p.value.shape}"
            )
        p.value[...] = tensors[name].astype(p.value.dtype)
    for name, buf in net.named_buffers():
        if name in tensors:
            buf[...] = tensors[name].astype(buf.dtype)
