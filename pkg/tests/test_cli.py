import json

import numpy as np
import pytest

from splatseg.cli import main
from splatseg.masks import LabelMap, load_mask, save_mask
from splatseg.scene import load_scene

from conftest import make_random_scene


@pytest.fixture(scope="module")
def bundle(tmp_path_factory):
    root = tmp_path_factory.mktemp("bundle")
    rc = main([
        "synth", "--out", str(root), "--per-cluster", "40", "--views", "5",
        "--seed", "0", "--size", "48",
    ])
    assert rc == 0
    return root


@pytest.fixture(scope="module")
def trained(bundle, tmp_path_factory):
    out = tmp_path_factory.mktemp("trained")
    scene = out / "trained.ply"
    ckpt = out / "clf.ckpt"
    rc = main([
        "train", "--scene", str(bundle / "scene.ply"),
        "--cameras", str(bundle / "cameras.json"),
        "--masks", str(bundle / "masks"),
        "--out", str(scene), "--ckpt", str(ckpt),
        "--iters", "400", "--seed", "0",
    ])
    assert rc == 0
    return scene, ckpt


class TestSynth:
    def test_bundle_contents(self, bundle):
        assert (bundle / "scene.ply").exists()
        assert (bundle / "cameras.json").exists()
        assert (bundle / "truth.json").exists()
        masks = sorted((bundle / "masks").glob("*.png"))
        assert len(masks) == 5
        scene = load_scene(bundle / "scene.ply")
        assert len(scene) == 120
        assert not scene.labels.any()


class TestPreprocess:
    def test_already_clean_masks_unchanged(self, bundle, tmp_path):
        # Cleaning the output of a previous cleanup is the identity.
        once = tmp_path / "once"
        twice = tmp_path / "twice"
        for src, dst in ((bundle / "masks", once), (once, twice)):
            rc = main([
                "preprocess", "--masks", str(src), "--out", str(dst),
                "--kernel", "3", "--area-threshold", "4",
            ])
            assert rc == 0
        for path in sorted(once.glob("*.png")):
            assert np.array_equal(load_mask(path).labels, load_mask(twice / path.name).labels)

    def test_speckle_removed(self, tmp_path):
        masks_dir = tmp_path / "in"
        masks_dir.mkdir()
        labels = np.zeros((40, 40), dtype=np.uint8)
        labels[5:8, 5:8] = 9  # 9-px speckle
        save_mask(LabelMap(labels), masks_dir / "v.png")
        out = tmp_path / "out"
        rc = main([
            "preprocess", "--masks", str(masks_dir), "--out", str(out),
            "--area-threshold", "500",
        ])
        assert rc == 0
        cleaned = load_mask(out / "v.png")
        assert not cleaned.labels.any()

    def test_empty_dir_fails(self, tmp_path):
        (tmp_path / "none").mkdir()
        rc = main([
            "preprocess", "--masks", str(tmp_path / "none"), "--out", str(tmp_path / "o"),
        ])
        assert rc == 1


class TestTrainCli:
    def test_deterministic_checkpoints(self, bundle, tmp_path):
        args = lambda i: [
            "train", "--scene", str(bundle / "scene.ply"),
            "--cameras", str(bundle / "cameras.json"),
            "--masks", str(bundle / "masks"),
            "--out", str(tmp_path / f"s{i}.ply"), "--ckpt", str(tmp_path / f"c{i}.ckpt"),
            "--iters", "60", "--seed", "11",
        ]
        assert main(args(0)) == 0
        assert main(args(1)) == 0
        assert (tmp_path / "c0.ckpt").read_bytes() == (tmp_path / "c1.ckpt").read_bytes()
        assert (tmp_path / "s0.ply").read_bytes() == (tmp_path / "s1.ply").read_bytes()

    def test_missing_mask_fails(self, bundle, tmp_path):
        rc = main([
            "train", "--scene", str(bundle / "scene.ply"),
            "--cameras", str(bundle / "cameras.json"),
            "--masks", str(tmp_path),
            "--out", str(tmp_path / "s.ply"), "--ckpt", str(tmp_path / "c.ckpt"),
            "--iters", "1",
        ])
        assert rc == 1


class TestReassignEditRenderEval:
    def test_pipeline_to_report(self, bundle, trained, tmp_path):
        scene, ckpt = trained
        labeled = tmp_path / "labeled.ply"
        rc = main([
            "reassign", "--scene", str(scene), "--ckpt", str(ckpt),
            "--cameras", str(bundle / "cameras.json"),
            "--masks", str(bundle / "masks"),
            "--gamma-p", "0.2", "--out", str(labeled),
        ])
        assert rc == 0
        truth = json.loads((bundle / "truth.json").read_text())
        got = load_scene(labeled)
        accuracy = float(np.mean(got.labels == np.array(truth["gaussian_labels"])))
        assert accuracy >= 0.9

        pred = tmp_path / "pred"
        rc = main([
            "render", "--scene", str(labeled), "--cameras", str(bundle / "cameras.json"),
            "--mode", "label", "--out", str(pred),
        ])
        assert rc == 0

        report = tmp_path / "report.json"
        rc = main([
            "eval", "--pred", str(pred), "--gt", str(bundle / "masks"),
            "--out", str(report),
        ])
        assert rc == 0
        doc = json.loads(report.read_text())
        assert doc["mean_miou"] >= 0.9
        assert len(doc["files"]) == 5

    def test_edit_remove(self, bundle, trained, tmp_path):
        scene, ckpt = trained
        labeled = tmp_path / "labeled.ply"
        main([
            "reassign", "--scene", str(scene), "--ckpt", str(ckpt),
            "--cameras", str(bundle / "cameras.json"),
            "--masks", str(bundle / "masks"), "--out", str(labeled),
        ])
        out = tmp_path / "removed.ply"
        rc = main([
            "edit", "--scene", str(labeled), "--op", "remove", "--object", "2",
            "--out", str(out),
        ])
        assert rc == 0
        before = load_scene(labeled)
        after = load_scene(out)
        assert len(after) == len(before) - int((before.labels == 2).sum())

    def test_edit_recolor_requires_color(self, bundle, trained, tmp_path):
        scene, _ = trained
        rc = main([
            "edit", "--scene", str(scene), "--op", "recolor", "--object", "1",
            "--out", str(tmp_path / "x.ply"),
        ])
        assert rc == 1

    def test_eval_missing_prediction(self, bundle, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        rc = main([
            "eval", "--pred", str(empty), "--gt", str(bundle / "masks"),
            "--out", str(tmp_path / "r.json"),
        ])
        assert rc == 1


class TestUsageErrors:
    def test_no_command(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2

    def test_bad_edit_op(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["edit", "--scene", "x.ply", "--op", "explode", "--object", "1",
                  "--out", "y.ply"])
        assert exc.value.code == 2
