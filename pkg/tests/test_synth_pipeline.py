import os

import numpy as np
import pytest

from sps.features import FeatureConfig, GAMMA, LOG_MEL, load_feature
from sps.models import build_task1b, save_network
from sps.pipeline import (
    extract_to_dir, feature_filename, evaluate_bundle, load_feature_arrays,
)
from sps.strategies import EnsembleBundle, EnsembleMember
from sps.synth import ManifestRow, gen_synth, label_set, read_manifest, write_manifest

# small, fast extraction geometry for unit tests
FAST = FeatureConfig(window=512, hop=256, mel_bands=16, mfcc_coeffs=16,
                     cqt_bins=16, gamma_bands=16)


@pytest.fixture(scope="module")
def small_corpus(tmp_path_factory):
    out = tmp_path_factory.mktemp("small")
    train, test, n = gen_synth(out, n_classes=2, clips_per_class=4, seed=3,
                               duration_s=1.0)
    return {"dir": out, "train": train, "test": test, "n": n}


class TestManifests:
    def test_roundtrip(self, tmp_path):
        rows = [ManifestRow("a.wav", "street"), ManifestRow("b.wav", "home", "d1", "c2")]
        path = tmp_path / "m.csv"
        write_manifest(path, rows)
        back = read_manifest(path)
        assert back == rows

    def test_minimal_header_without_extras(self, tmp_path):
        path = tmp_path / "m.csv"
        write_manifest(path, [ManifestRow("a.wav", "x")])
        assert path.read_text().splitlines()[0] == "path,label"

    def test_duplicate_paths_rejected(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("path,label\na.wav,x\na.wav,y\n")
        with pytest.raises(ValueError, match="duplicate"):
            read_manifest(path)

    def test_bad_header_rejected(self, tmp_path):
        path = tmp_path / "m.csv"
        path.write_text("file,cls\na.wav,x\n")
        with pytest.raises(ValueError, match="header"):
            read_manifest(path)


class TestGenSynth:
    def test_counts_and_split(self, big_corpus):
        assert big_corpus["n_files"] == 60
        train = read_manifest(big_corpus["train"])
        test = read_manifest(big_corpus["test"])
        assert len(train) == 42 and len(test) == 18
        for label in label_set(train):
            assert sum(r.label == label for r in train) == 14
            assert sum(r.label == label for r in test) == 6

    def test_deterministic_regeneration(self, tmp_path):
        out = tmp_path / "corpus"
        gen_synth(out, n_classes=2, clips_per_class=2, seed=11, duration_s=0.5)
        wavs = sorted((out / "audio").iterdir())
        snapshot = {p.name: p.read_bytes() for p in wavs}
        manifests = {p: (out / p).read_bytes() for p in ("train.csv", "test.csv")}
        gen_synth(out, n_classes=2, clips_per_class=2, seed=11, duration_s=0.5)
        for p in sorted((out / "audio").iterdir()):
            assert p.read_bytes() == snapshot[p.name]
        for p, data in manifests.items():
            assert (out / p).read_bytes() == data

    def test_different_seed_changes_audio(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        gen_synth(a, 2, 2, seed=1, duration_s=0.5)
        gen_synth(b, 2, 2, seed=2, duration_s=0.5)
        fa = sorted((a / "audio").iterdir())[0]
        fb = sorted((b / "audio").iterdir())[0]
        assert fa.read_bytes() != fb.read_bytes()

    def test_validation(self, tmp_path):
        with pytest.raises(ValueError, match="classes"):
            gen_synth(tmp_path / "x", n_classes=1)


class TestExtract:
    def test_file_count_and_idempotence(self, small_corpus, tmp_path):
        rows = read_manifest(small_corpus["train"]) + read_manifest(small_corpus["test"])
        feat_dir = tmp_path / "features"
        res = extract_to_dir(rows, [LOG_MEL, GAMMA], FAST, feat_dir,
                             duration_s=1.0)
        assert res.ok
        assert res.written == len(rows) * 2
        assert res.skipped == 0
        mtimes = {p.name: p.stat().st_mtime_ns for p in feat_dir.iterdir()}
        res2 = extract_to_dir(rows, [LOG_MEL, GAMMA], FAST, feat_dir,
                              duration_s=1.0)
        assert res2.written == 0 and res2.skipped == len(rows) * 2
        for p in feat_dir.iterdir():
            assert p.stat().st_mtime_ns == mtimes[p.name]  # zero files rewritten

    def test_config_change_rewrites(self, small_corpus, tmp_path):
        rows = read_manifest(small_corpus["train"])[:2]
        feat_dir = tmp_path / "features"
        extract_to_dir(rows, [LOG_MEL], FAST, feat_dir, duration_s=1.0)
        other = FeatureConfig(window=512, hop=256, mel_bands=8)
        res = extract_to_dir(rows, [LOG_MEL], other, feat_dir, duration_s=1.0)
        assert res.written == len(rows)

    def test_expected_geometry(self, small_corpus, tmp_path):
        rows = read_manifest(small_corpus["train"])[:1]
        feat_dir = tmp_path / "features"
        extract_to_dir(rows, [LOG_MEL], FAST, feat_dir, duration_s=1.0)
        fm, meta = load_feature(
            feat_dir / feature_filename(rows[0].path, LOG_MEL))
        assert fm.values.shape == (1 + (44100 - 512) // 256, 16)
        assert "source_hash" in meta

    def test_missing_audio_collected_not_raised(self, small_corpus, tmp_path):
        rows = read_manifest(small_corpus["train"])[:2]
        rows.append(ManifestRow(path=str(tmp_path / "nope.wav"), label="class00"))
        res = extract_to_dir(rows, [LOG_MEL], FAST, tmp_path / "f",
                             duration_s=1.0)
        assert len(res.errors) == 1 and "nope.wav" in res.errors[0]
        assert res.written == 2
        assert not res.ok


@pytest.fixture(scope="module")
def setup(small_corpus, tmp_path_factory):
    feat_dir = tmp_path_factory.mktemp("feats")
    rows = read_manifest(small_corpus["test"])
    extract_to_dir(read_manifest(small_corpus["train"]) + rows,
                   [LOG_MEL], FAST, feat_dir, duration_s=1.0)
    net = build_task1b(n_classes=2, seed=5)
    return {"net": net, "rows": rows, "feat_dir": feat_dir}


class TestEvaluate:
    def test_report_shape_and_size(self, setup):
        bundle = EnsembleBundle([EnsembleMember(setup["net"], (LOG_MEL,))])
        rep = evaluate_bundle(bundle, setup["rows"], setup["feat_dir"])
        assert rep.n_samples == len(setup["rows"])
        assert rep.model_size_bytes == setup["net"].size_bytes()
        assert 0.0 <= rep.macro_accuracy <= 1.0
        assert np.array(rep.confusion).sum() == rep.n_samples

    def test_bundle_of_one_identical_to_member(self, setup):
        bundle1 = EnsembleBundle([EnsembleMember(setup["net"], (LOG_MEL,))])
        rep1 = evaluate_bundle(bundle1, setup["rows"], setup["feat_dir"])
        rep2 = evaluate_bundle(bundle1, setup["rows"], setup["feat_dir"])
        assert rep1 == rep2

    def test_shuffled_manifest_same_metrics(self, setup):
        bundle = EnsembleBundle([EnsembleMember(setup["net"], (LOG_MEL,))])
        rep = evaluate_bundle(bundle, setup["rows"], setup["feat_dir"])
        shuffled = list(setup["rows"])
        np.random.default_rng(4).shuffle(shuffled)
        rep_s = evaluate_bundle(bundle, shuffled, setup["feat_dir"])
        assert rep.macro_accuracy == rep_s.macro_accuracy
        assert rep.log_loss == pytest.approx(rep_s.log_loss, abs=1e-12)

    def test_missing_features_named(self, setup, tmp_path):
        bundle = EnsembleBundle([EnsembleMember(setup["net"], (LOG_MEL,))])
        with pytest.raises(FileNotFoundError, match="extract"):
            evaluate_bundle(bundle, setup["rows"], tmp_path)

    def test_geometry_mismatch_names_shapes(self, setup):
        net40 = build_task1b(n_classes=2, seed=1)
        member = EnsembleMember(net40, (LOG_MEL,), band_range=(0, 99))
        with pytest.raises(ValueError, match=r"\[0, 99\)"):
            evaluate_bundle(EnsembleBundle([member]), setup["rows"],
                            setup["feat_dir"])
