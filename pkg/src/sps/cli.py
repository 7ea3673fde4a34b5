"""Command-line client for the service.

Every subcommand builds a request model and sends it through the HTTP
layer: against a remote server when --server is given, otherwise against
an in-process instance of the same app (so the CLI works standalone while
still exercising the exact service surface). Exit code is 0 iff all
requested work succeeded.
"""

from __future__ import annotations

import json
import sys

import click

try:
    import tomllib
except ImportError:  # Python 3.10
    import tomli as tomllib


class ServiceClient:
    def __init__(self, server: str | None):
        if server:
            import httpx

            self._client = httpx.Client(base_url=server, timeout=None)
        else:
            from fastapi.testclient import TestClient

            from .service import create_app

            self._client = TestClient(create_app())

    def post(self, path: str, payload: dict) -> dict:
        resp = self._client.post(path, json=payload)
        if resp.status_code != 200:
            try:
                detail = resp.json().get("detail", resp.text)
            except Exception:
                detail = resp.text
            raise click.ClickException(f"{path} failed ({resp.status_code}): {detail}")
        return resp.json()


@click.group()
@click.option("--server", default=None, metavar="URL",
              help="Base URL of a running service; defaults to in-process.")
@click.pass_context
def main(ctx, server):
    """Spectrogram processing strategies: data, features, training, fusion."""
    ctx.obj = ServiceClient(server)


@main.command("gen-synth")
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--classes", "n_classes", default=3, show_default=True)
@click.option("--clips-per-class", default=20, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--duration", "duration_s", default=10.0, show_default=True)
@click.option("--sample-rate", default=44100, show_default=True)
@click.pass_obj
def gen_synth(client, out_dir, n_classes, clips_per_class, seed, duration_s, sample_rate):
    """Generate the deterministic synthetic corpus with 70/30 manifests."""
    doc = client.post("/synth", {
        "out_dir": out_dir, "n_classes": n_classes,
        "clips_per_class": clips_per_class, "seed": seed,
        "duration_s": duration_s, "sample_rate": sample_rate,
    })
    click.echo(f"wrote {doc['n_files']} clips")
    click.echo(f"train manifest: {doc['train_manifest']}")
    click.echo(f"test manifest:  {doc['test_manifest']}")


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    with open(path, "rb") as fh:
        if str(path).endswith(".toml"):
            return tomllib.load(fh)
        return json.load(fh)


_FEATURE_KEYS = ("window", "hop", "log_offset", "mel_bands", "mel_fmin",
                 "mel_fmax", "mfcc_coeffs", "cqt_bins", "cqt_fmin",
                 "cqt_bins_per_octave", "gamma_bands", "gamma_fmin", "gamma_fmax")


@main.command("extract")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--kinds", default="log_mel,cqt,gamma,mfcc", show_default=True,
              help="Comma-separated representation list.")
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="TOML/JSON file with a [features] table.")
@click.option("--bands", type=int, default=None,
              help="Set a common band count for every representation.")
@click.option("--sample-rate", default=44100, show_default=True)
@click.option("--duration", "duration_s", default=10.0, show_default=True)
@click.pass_obj
def extract(client, manifest, out_dir, kinds, config_path, bands, sample_rate, duration_s):
    """Extract features to SPSF files (skips up-to-date outputs)."""
    file_cfg = _load_config_file(config_path)
    features = {k: v for k, v in file_cfg.get("features", {}).items()
                if k in _FEATURE_KEYS}
    if bands is not None:
        features.update({"mel_bands": bands, "mfcc_coeffs": bands,
                         "cqt_bins": bands, "gamma_bands": bands})
    doc = client.post("/extract", {
        "manifest": manifest, "out_dir": out_dir,
        "kinds": [k.strip() for k in kinds.split(",") if k.strip()],
        "features": features, "sample_rate": sample_rate,
        "duration_s": duration_s,
    })
    click.echo(f"written {doc['written']}, skipped {doc['skipped']}")
    if doc["errors"]:
        for err in doc["errors"]:
            click.echo(f"error: {err}", err=True)
        raise click.ClickException(f"{len(doc['errors'])} file(s) failed")


_TRAIN_KEYS = ("task", "kinds", "fusion", "strategies", "batch_size",
               "iterations", "lr_initial", "lr_decay", "lr_decay_every",
               "mixup_alpha", "seed", "subbands", "subband_overlap")


@main.command("train")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--feature-dir", required=True, type=click.Path(exists=True))
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="TOML/JSON file with a [train] table; flags override it.")
@click.option("--task", type=click.Choice(["1a", "1b"]), default=None)
@click.option("--kinds", default=None, help="Comma-separated representations.")
@click.option("--fusion", type=click.Choice(["ef", "mf", "lf"]), default=None)
@click.option("--strategies", default=None,
              help="Comma-separated subset of spsmr,spsmf,spsmt.")
@click.option("--batch-size", type=int, default=None)
@click.option("--iterations", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--mixup-alpha", type=float, default=None)
@click.option("--subbands", type=int, default=None)
@click.option("--subband-overlap", type=int, default=None)
@click.pass_obj
def train(client, manifest, feature_dir, out_dir, config_path, task, kinds,
          fusion, strategies, batch_size, iterations, seed, mixup_alpha,
          subbands, subband_overlap):
    """Train the configured network(s) and write checkpoints + logs."""
    cfg = {k: v for k, v in _load_config_file(config_path).get("train", {}).items()
           if k in _TRAIN_KEYS}
    overrides = {
        "task": task,
        "kinds": [k.strip() for k in kinds.split(",")] if kinds else None,
        "fusion": fusion,
        "strategies": [s.strip() for s in strategies.split(",") if s.strip()]
        if strategies is not None else None,
        "batch_size": batch_size, "iterations": iterations, "seed": seed,
        "mixup_alpha": mixup_alpha, "subbands": subbands,
        "subband_overlap": subband_overlap,
    }
    cfg.update({k: v for k, v in overrides.items() if v is not None})
    doc = client.post("/train", {
        "manifest": manifest, "feature_dir": feature_dir,
        "out_dir": out_dir, "config": cfg,
    })
    for ckpt in doc["checkpoints"]:
        click.echo(f"checkpoint: {ckpt}")
    click.echo(f"ensemble manifest: {doc['ensemble_manifest']}")
    for mid, loss in doc["final_losses"].items():
        click.echo(f"final loss [{mid}]: {loss:.4f}")


@main.command("evaluate")
@click.option("--model", required=True, type=click.Path(exists=True),
              help="Checkpoint (.spsf) or ensemble manifest (.json).")
@click.option("--manifest", required=True, type=click.Path(exists=True))
@click.option("--feature-dir", required=True, type=click.Path(exists=True))
@click.option("--out-json", type=click.Path(), default=None)
@click.option("--out-csv", type=click.Path(), default=None)
@click.option("--run-id", default="")
@click.pass_obj
def evaluate(client, model, manifest, feature_dir, out_json, out_csv, run_id):
    """Evaluate a model or ensemble on a manifest; write the report."""
    doc = client.post("/evaluate", {
        "model": model, "manifest": manifest, "feature_dir": feature_dir,
        "out_json": out_json, "out_csv": out_csv, "run_id": run_id,
    })
    click.echo(f"macro accuracy: {doc['macro_accuracy']:.4f}")
    click.echo(f"log loss:       {doc['log_loss']:.4f}")
    click.echo(f"model size:     {doc['model_size']} ({doc['model_size_bytes']} bytes)")


@main.command("describe-model")
@click.option("--arch", type=click.Choice(["task1a", "task1b"]), default=None)
@click.option("--checkpoint", type=click.Path(exists=True), default=None)
@click.option("--ensemble", type=click.Path(exists=True), default=None)
@click.option("--n-in", default=1, show_default=True)
@click.option("--n-classes", type=int, default=None)
@click.option("--fusion", type=click.Choice(["ef", "mf", "lf"]), default=None)
@click.option("--head", type=click.Choice(["standard", "spsmt"]), default="standard")
@click.pass_obj
def describe_model(client, arch, checkpoint, ensemble, n_in, n_classes, fusion, head):
    """Print the layer table with per-layer parameter counts and total size."""
    doc = client.post("/describe", {
        "arch": arch, "checkpoint": checkpoint, "ensemble": ensemble,
        "n_in": n_in, "n_classes": n_classes, "fusion": fusion, "head": head,
    })
    width = max(len(row["layer"]) for row in doc["layers"])
    for row in doc["layers"]:
        count = f"{row['params']:,}" if row["params"] else ""
        click.echo(f"{row['layer']:<{width}}  {count}")
    click.echo(f"{'total':<{width}}  {doc['param_count']:,}")
    click.echo(f"model size: {doc['model_size']} ({doc['model_size_bytes']} bytes)")


@main.command("fuse")
@click.option("--checkpoint", "checkpoints", multiple=True, required=True,
              type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--head", type=click.Choice(["standard", "spsmt"]), default=None,
              help="Override every member's head.")
@click.pass_obj
def fuse(client, checkpoints, out_path, head):
    """Write an ensemble manifest combining trained checkpoints."""
    doc = client.post("/fuse", {
        "checkpoints": list(checkpoints), "out_path": out_path, "head": head,
    })
    click.echo(f"ensemble of {doc['n_members']}: {doc['manifest_path']}")
    click.echo(f"model size: {doc['model_size']} ({doc['model_size_bytes']} bytes)")


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
def serve(host, port):
    """Run the service with uvicorn."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


if __name__ == "__main__":
    main()
