"""FastAPI service wrapping the core package.

Invalid inputs (bad configs, missing files, malformed formats) come back as
422 from pydantic or 400 with the underlying message; everything else is a
plain 200 with a typed response body.
"""

from __future__ import annotations

import os

from fastapi import FastAPI, HTTPException

from .. import __version__, models, strategies, synth, train as train_mod
from ..features import FeatureConfig
from ..metrics import human_size
from ..pipeline import evaluate_bundle, extract_to_dir
from ..strategies import EnsembleBundle, EnsembleMember, load_ensemble
from . import schemas


def _bad_request(exc: Exception) -> HTTPException:
    return HTTPException(status_code=400, detail=str(exc))


def _feature_config(settings: schemas.FeatureSettings) -> FeatureConfig:
    return FeatureConfig(**settings.model_dump())


def _load_model(path: str) -> EnsembleBundle:
    """A checkpoint or an ensemble manifest, as a bundle either way."""
    if path.endswith(".json"):
        return load_ensemble(path)
    net, header = models.load_network(path)
    kinds = tuple(header.get("kinds", ["log_mel"]))
    band = header.get("band_range")
    member = EnsembleMember(net, kinds, tuple(band) if band else None)
    return EnsembleBundle([member])


def create_app() -> FastAPI:
    app = FastAPI(title="sps", version=__version__)

    @app.get("/health", response_model=schemas.HealthResponse)
    def health():
        return schemas.HealthResponse(status="ok", version=__version__)

    @app.post("/synth", response_model=schemas.SynthResponse)
    def gen_synth(req: schemas.SynthRequest):
        try:
            train_path, test_path, count = synth.gen_synth(
                req.out_dir, req.n_classes, req.clips_per_class, req.seed,
                req.duration_s, req.sample_rate,
            )
        except (ValueError, OSError) as exc:
            raise _bad_request(exc)
        return schemas.SynthResponse(train_manifest=train_path,
                                     test_manifest=test_path, n_files=count)

    @app.post("/extract", response_model=schemas.ExtractResponse)
    def extract(req: schemas.ExtractRequest):
        try:
            rows = synth.read_manifest(req.manifest)
            cfg = _feature_config(req.features)
            result = extract_to_dir(rows, req.kinds, cfg, req.out_dir,
                                    req.sample_rate, req.duration_s)
        except (ValueError, OSError) as exc:
            raise _bad_request(exc)
        return schemas.ExtractResponse(written=result.written,
                                       skipped=result.skipped,
                                       errors=result.errors)

    @app.post("/train", response_model=schemas.TrainResponse)
    def train(req: schemas.TrainRequest):
        try:
            cfg = train_mod.TrainConfig(**req.config.model_dump())
            rows = synth.read_manifest(req.manifest)
            result = train_mod.train_run(rows, req.feature_dir, req.out_dir, cfg)
        except (ValueError, KeyError, FileNotFoundError) as exc:
            raise _bad_request(exc)
        return schemas.TrainResponse(
            checkpoints=result.checkpoints, log_paths=result.log_paths,
            ensemble_manifest=result.ensemble_manifest,
            config_path=result.config_path, final_losses=result.final_losses,
            labels=result.labels, resolved_config=cfg.resolved(),
        )

    @app.post("/evaluate", response_model=schemas.EvaluateResponse)
    def evaluate(req: schemas.EvaluateRequest):
        try:
            bundle = _load_model(req.model)
            rows = synth.read_manifest(req.manifest)
            report = evaluate_bundle(bundle, rows, req.feature_dir,
                                     run_id=req.run_id,
                                     model=os.path.basename(req.model))
        except (ValueError, KeyError, FileNotFoundError) as exc:
            raise _bad_request(exc)
        if req.out_json:
            with open(req.out_json, "w", encoding="utf-8") as fh:
                fh.write(report.to_json())
        if req.out_csv:
            with open(req.out_csv, "w", encoding="utf-8") as fh:
                fh.write(report.to_csv())
        return schemas.EvaluateResponse(
            macro_accuracy=report.macro_accuracy, log_loss=report.log_loss,
            per_class_accuracy=report.per_class_accuracy,
            confusion=report.confusion,
            model_size_bytes=report.model_size_bytes,
            model_size=human_size(report.model_size_bytes),
            n_samples=report.n_samples, labels=report.labels,
            run_id=report.run_id, model=report.model,
            report_json=req.out_json, report_csv=req.out_csv,
        )

    @app.post("/fuse", response_model=schemas.FuseResponse)
    def fuse(req: schemas.FuseRequest):
        try:
            entries = []
            total_bytes = 0
            for ckpt in req.checkpoints:
                net, header = models.load_network(ckpt)
                head = req.head or net.spec.head
                if head not in (models.HEAD_STANDARD, models.HEAD_SPSMT):
                    raise ValueError(f"unknown head {head!r}")
                entries.append({
                    "checkpoint": ckpt,
                    "kinds": header.get("kinds", ["log_mel"]),
                    "band_range": header.get("band_range"),
                    "head": head,
                })
                total_bytes += net.size_bytes()
            if not entries:
                raise ValueError("fuse needs at least one checkpoint")
            strategies.save_ensemble_manifest(req.out_path, entries)
        except (ValueError, KeyError, FileNotFoundError) as exc:
            raise _bad_request(exc)
        return schemas.FuseResponse(manifest_path=req.out_path,
                                    n_members=len(entries),
                                    model_size_bytes=total_bytes,
                                    model_size=human_size(total_bytes))

    @app.post("/describe", response_model=schemas.DescribeResponse)
    def describe(req: schemas.DescribeRequest):
        try:
            if req.ensemble:
                bundle = load_ensemble(req.ensemble)
                rows = []
                for i, m in enumerate(bundle.members):
                    rows += [(f"member {i}: {desc}", n)
                             for desc, n in m.net.describe()]
                count = bundle.param_count()
                members = len(bundle.members)
            else:
                if req.checkpoint:
                    net, _ = models.load_network(req.checkpoint)
                elif req.arch:
                    n_classes = req.n_classes
                    if n_classes is None:
                        n_classes = 10 if req.arch == models.TASK1A else 3
                    spec = models.NetworkSpec(req.arch, n_classes, req.n_in,
                                              req.fusion, req.head)
                    net = models.build_network(spec)
                else:
                    raise ValueError("describe needs arch, checkpoint, or ensemble")
                rows = net.describe()
                count = net.param_count()
                members = 1
        except (ValueError, KeyError, FileNotFoundError) as exc:
            raise _bad_request(exc)
        size = count * models.BYTES_PER_PARAM
        return schemas.DescribeResponse(
            layers=[schemas.LayerRow(layer=d, params=n) for d, n in rows],
            param_count=count, model_size_bytes=size,
            model_size=human_size(size), members=members,
        )

    return app


app = create_app()
