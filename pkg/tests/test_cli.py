import json
import hashlib

import jsonschema
import numpy as np
import pytest

from tensorda.cli import REPORT_SCHEMA, main
from tensorda.data_io import TensorSet, read_model, read_set, write_set, write_tensor
from tensorda.evaluate import accuracy, train_classifier
from tensorda.tensor_ops import unfold


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def synth(out_dir, seed=7, sigma=0.05, extra=()):
    rc = main(
        [
            "synth",
            "--classes", "5",
            "--per-class", "8",
            "--dims", "6,6,32",
            "--true-dims", "3,3,8",
            "--kind", "mode_rotation",
            "--angle", "0.5",
            "--sigma", str(sigma),
            "--seed", str(seed),
            "--out-dir", str(out_dir),
            *extra,
        ]
    )
    assert rc == 0
    return out_dir / "source.tnsb", out_dir / "target.tnsb"


class TestSynth:
    def test_outputs_readable_and_labeled(self, tmp_path):
        src, tgt = synth(tmp_path / "d")
        for path in (src, tgt):
            tset = read_set(path)
            assert tset.data.shape == (6, 6, 32, 40)
            assert tset.labels is not None and len(tset.labels) == 40
        align = read_model(tmp_path / "d" / "alignment.tnsm")
        assert align["meta"]["method"] == "ground_truth"
        assert len(align["algn"]) == 3

    def test_same_seed_identical_hashes(self, tmp_path):
        s1, t1 = synth(tmp_path / "a", seed=7)
        s2, t2 = synth(tmp_path / "b", seed=7)
        assert sha(s1) == sha(s2)
        assert sha(t1) == sha(t2)
        assert sha(tmp_path / "a" / "alignment.tnsm") == sha(tmp_path / "b" / "alignment.tnsm")

    def test_different_seed_differs(self, tmp_path):
        s1, _ = synth(tmp_path / "a", seed=7)
        s2, _ = synth(tmp_path / "b", seed=8)
        assert sha(s1) != sha(s2)

    def test_invalid_kind_is_usage_error(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["synth", "--kind", "bogus", "--out-dir", str(tmp_path)])
        assert exc.value.code == 2


class TestFit:
    def test_na_model_is_identity_with_empty_trace(self, tmp_path):
        src, tgt = synth(tmp_path / "d")
        model_path = tmp_path / "na.tnsm"
        report_path = tmp_path / "na.json"
        rc = main(
            ["fit", "--source", str(src), "--target", str(tgt), "--method", "na",
             "--out", str(model_path), "--report", str(report_path)]
        )
        assert rc == 0
        model = read_model(model_path)
        assert model["meta"]["method"] == "na"
        assert "subs" not in model
        report = json.loads(report_path.read_text())
        assert report["loss_trace"] == []
        jsonschema.validate(report, REPORT_SCHEMA)

    def test_single_iteration_trace(self, tmp_path):
        src, tgt = synth(tmp_path / "d")
        rc = main(
            ["fit", "--source", str(src), "--target", str(tgt), "--method", "taisl",
             "--dims", "3,3,8", "--iters", "1",
             "--out", str(tmp_path / "m.tnsm"), "--report", str(tmp_path / "r.json")]
        )
        assert rc == 0
        report = json.loads((tmp_path / "r.json").read_text())
        assert len(report["loss_trace"]) == 1

    def test_default_dims_clamped_for_3_mode(self, tmp_path):
        src, tgt = synth(tmp_path / "d")
        rc = main(
            ["fit", "--source", str(src), "--target", str(tgt), "--method", "ntsl",
             "--out", str(tmp_path / "m.tnsm"), "--report", str(tmp_path / "r.json")]
        )
        assert rc == 0
        report = json.loads((tmp_path / "r.json").read_text())
        assert report["config"]["ranks"] == [6, 6, 32]

    def test_pca_model_sections(self, tmp_path):
        src, tgt = synth(tmp_path / "d")
        rc = main(
            ["fit", "--source", str(src), "--target", str(tgt), "--method", "pca",
             "--dims", "3,3,8",
             "--out", str(tmp_path / "m.tnsm"), "--report", str(tmp_path / "r.json")]
        )
        assert rc == 0
        model = read_model(tmp_path / "m.tnsm")
        assert model["pcac"].shape == (6 * 6 * 32, 72)
        assert model["pcam"].shape == (6 * 6 * 32,)

    def test_missing_file_is_data_error(self, tmp_path):
        rc = main(
            ["fit", "--source", str(tmp_path / "nope.tnsb"), "--target", str(tmp_path / "nope.tnsb"),
             "--out", str(tmp_path / "m.tnsm"), "--report", str(tmp_path / "r.json")]
        )
        assert rc == 3

    def test_corrupt_file_is_data_error(self, tmp_path):
        bad = tmp_path / "bad.tnsb"
        bad.write_bytes(b"XXXX corrupt")
        rc = main(
            ["fit", "--source", str(bad), "--target", str(bad),
             "--out", str(tmp_path / "m.tnsm"), "--report", str(tmp_path / "r.json")]
        )
        assert rc == 3

    def test_mismatched_domains_is_usage_error(self, tmp_path):
        rng = np.random.default_rng(0)
        a = tmp_path / "a.tnsb"
        b = tmp_path / "b.tnsb"
        write_set(a, TensorSet(rng.standard_normal((3, 4, 5, 2))))
        write_set(b, TensorSet(rng.standard_normal((3, 4, 6, 2))))
        rc = main(
            ["fit", "--source", str(a), "--target", str(b),
             "--out", str(tmp_path / "m.tnsm"), "--report", str(tmp_path / "r.json")]
        )
        assert rc == 2

    def test_report_hashes_match_files(self, tmp_path):
        src, tgt = synth(tmp_path / "d")
        rc = main(
            ["fit", "--source", str(src), "--target", str(tgt), "--method", "ntsl",
             "--dims", "3,3,8",
             "--out", str(tmp_path / "m.tnsm"), "--report", str(tmp_path / "r.json")]
        )
        assert rc == 0
        report = json.loads((tmp_path / "r.json").read_text())
        assert report["inputs"]["source"]["sha256"] == sha(src)
        assert report["outputs"]["model"]["sha256"] == sha(tmp_path / "m.tnsm")
        jsonschema.validate(report, REPORT_SCHEMA)

    def test_strict_clean_run_exits_zero(self, tmp_path):
        src, tgt = synth(tmp_path / "d")
        rc = main(
            ["fit", "--source", str(src), "--target", str(tgt), "--method", "taisl",
             "--dims", "3,3,8", "--strict",
             "--out", str(tmp_path / "m.tnsm"), "--report", str(tmp_path / "r.json")]
        )
        assert rc == 0


class TestEval:
    @pytest.fixture()
    def fitted(self, tmp_path):
        src, tgt = synth(tmp_path / "d")
        main(
            ["fit", "--source", str(src), "--target", str(tgt), "--method", "taisl",
             "--dims", "3,3,8",
             "--out", str(tmp_path / "m.tnsm"), "--report", str(tmp_path / "fit.json")]
        )
        return src, tgt, tmp_path / "m.tnsm"

    def test_reports_model_and_baseline(self, fitted, tmp_path):
        src, tgt, model = fitted
        rc = main(
            ["eval", "--model", str(model), "--source", str(src), "--target", str(tgt),
             "--report", str(tmp_path / "e.json")]
        )
        assert rc == 0
        report = json.loads((tmp_path / "e.json").read_text())
        jsonschema.validate(report, REPORT_SCHEMA)
        assert set(report["accuracies"]) == {"na", "taisl"}
        for rep in report["discrepancy"].values():
            assert 0.0 <= rep["d_a"] <= 2.0
            assert rep["j_s"] >= 0.0

    def test_missing_target_labels_omits_accuracy(self, fitted, tmp_path):
        src, tgt, model = fitted
        unlabeled = tmp_path / "unlabeled.tnsb"
        write_tensor(unlabeled, read_set(tgt).data)
        rc = main(
            ["eval", "--model", str(model), "--source", str(src), "--target", str(unlabeled),
             "--report", str(tmp_path / "e.json")]
        )
        assert rc == 0
        report = json.loads((tmp_path / "e.json").read_text())
        assert report["accuracies"] == {}
        assert set(report["discrepancy"]) == {"na", "taisl"}

    def test_unlabeled_source_rejected(self, fitted, tmp_path):
        src, tgt, model = fitted
        unlabeled = tmp_path / "us.tnsb"
        write_tensor(unlabeled, read_set(src).data)
        rc = main(
            ["eval", "--model", str(model), "--source", str(unlabeled), "--target", str(tgt),
             "--report", str(tmp_path / "e.json")]
        )
        assert rc == 2

    def test_identity_model_on_identical_domains_matches_baseline(self, tmp_path):
        src, _ = synth(tmp_path / "d", sigma=0.0)
        model_path = tmp_path / "na.tnsm"
        main(
            ["fit", "--source", str(src), "--target", str(src), "--method", "na",
             "--out", str(model_path), "--report", str(tmp_path / "f.json")]
        )
        rc = main(
            ["eval", "--model", str(model_path), "--source", str(src), "--target", str(src),
             "--report", str(tmp_path / "e.json")]
        )
        assert rc == 0
        report = json.loads((tmp_path / "e.json").read_text())
        tset = read_set(src)
        feats = unfold(tset.data, tset.data.ndim - 1)
        clf = train_classifier(feats, tset.labels)
        baseline = accuracy(clf, feats, tset.labels)
        assert abs(report["accuracies"]["na"] - baseline) <= 0.02


class TestPool:
    def test_pools_batch_and_preserves_labels(self, tmp_path):
        rng = np.random.default_rng(1)
        src = tmp_path / "raw.tnsb"
        labels = np.array([0, 1, 0, 1])
        write_set(src, TensorSet(rng.standard_normal((12, 10, 3, 4)), labels))
        rc = main(
            ["pool", "--input", str(src), "--out", str(tmp_path / "p.tnsb"),
             "--out-h", "6", "--out-w", "5"]
        )
        assert rc == 0
        pooled = read_set(tmp_path / "p.tnsb")
        assert pooled.data.shape == (6, 5, 3, 4)
        assert np.array_equal(pooled.labels, labels)

    def test_too_small_input_is_usage_error(self, tmp_path):
        rng = np.random.default_rng(2)
        src = tmp_path / "raw.tnsb"
        write_set(src, TensorSet(rng.standard_normal((4, 4, 3, 2))))
        rc = main(
            ["pool", "--input", str(src), "--out", str(tmp_path / "p.tnsb")]
        )
        assert rc == 2
