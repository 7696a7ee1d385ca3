import json

import numpy as np
import pytest
from click.testing import CliRunner

from conftest import sphere_labels
from scribsup.cli import main, run_pipeline, PipelineStageError
from scribsup.volume_io import LabelVolume, Volume, read_nifti, write_nifti


@pytest.fixture
def runner():
    return CliRunner()


def _phantom(tmp_path, shape=(32, 32, 8), spacing=(1.0, 1.0, 4.0)):
    """Sphere phantom: bright ball on a dark background plus its gt mask."""
    gt = sphere_labels(shape, tuple(s // 2 for s in shape), 9.0, spacing)
    rng = np.random.default_rng(99)
    img = 0.2 + 0.6 * gt.astype(np.float32) + 0.02 * rng.random(shape).astype(np.float32)
    img_path = tmp_path / "image.nii"
    gt_path = tmp_path / "gt.nii"
    write_nifti(Volume(img, spacing), img_path)
    write_nifti(LabelVolume(gt, spacing, 2), gt_path)
    return img_path, gt_path


def test_slic_command_writes_id_map(tmp_path, runner):
    img_path, _ = _phantom(tmp_path)
    out = tmp_path / "sv.nii"
    result = runner.invoke(
        main, ["slic", "--input", str(img_path), "--k", "16", "--output", str(out)]
    )
    assert result.exit_code == 0, result.output
    sv = read_nifti(out, kind="labels")
    assert sv.shape == (32, 32, 8)
    counts = np.bincount(sv.data.ravel())
    assert (counts > 0).all()


def test_simulate_propagate_edges_eval_chain(tmp_path, runner):
    img_path, gt_path = _phantom(tmp_path)
    scrib = tmp_path / "scrib.nii"
    sv = tmp_path / "sv.nii"
    mask = tmp_path / "mask.nii"
    conf = tmp_path / "conf.nii"
    edges = tmp_path / "edges.nii"
    report = tmp_path / "eval.json"

    for args in (
        ["simulate-scribbles", "--gt", str(gt_path), "--margin", "3", "--output", str(scrib)],
        ["slic", "--input", str(img_path), "--k", "24", "--output", str(sv)],
        ["propagate", "--scribbles", str(scrib), "--supervoxels", str(sv),
         "--output-mask", str(mask), "--output-conf", str(conf)],
        ["edges", "--input", str(img_path), "--threshold", "0.2", "--output", str(edges)],
        ["eval", "--pred", str(mask), "--gt", str(gt_path), "--report", str(report)],
    ):
        result = CliRunner().invoke(main, args)
        assert result.exit_code == 0, f"{args}: {result.output}"

    payload = json.loads(report.read_text())
    assert set(payload) == {"classes", "mean", "undefined"}
    assert payload["classes"][0]["class_id"] == 1
    assert 0.0 <= payload["classes"][0]["dice"] <= 1.0


def test_forward_and_loss_commands(tmp_path, runner):
    img_path, gt_path = _phantom(tmp_path, shape=(16, 16, 4))
    prefix = str(tmp_path / "run")
    result = runner.invoke(
        main,
        ["forward", "--input", str(img_path), "--classes", "2", "--seed", "3",
         "--base-filters", "2", "--out-prefix", prefix],
    )
    assert result.exit_code == 0, result.output
    summary = json.loads((tmp_path / "run_summary.json").read_text())
    assert summary["param_count"] > 0
    assert len(summary["mask_init"]) == 2

    scrib = tmp_path / "scrib.nii"
    sv = tmp_path / "sv.nii"
    mask = tmp_path / "mask.nii"
    conf = tmp_path / "conf.nii"
    edges = tmp_path / "edges.nii"
    for args in (
        ["simulate-scribbles", "--gt", str(gt_path), "--margin", "2", "--output", str(scrib)],
        ["slic", "--input", str(img_path), "--k", "8", "--output", str(sv)],
        ["propagate", "--scribbles", str(scrib), "--supervoxels", str(sv),
         "--classes", "2", "--output-mask", str(mask), "--output-conf", str(conf)],
        ["edges", "--input", str(img_path), "--output", str(edges)],
    ):
        assert CliRunner().invoke(main, args).exit_code == 0

    report = tmp_path / "loss.json"
    args = ["loss", "--boundary-pred", f"{prefix}_boundary.nii",
            "--pseudo", str(mask), "--conf", str(conf), "--edges", str(edges),
            "--image", str(img_path), "--report", str(report)]
    for c in range(2):
        args += ["--pred-init", f"{prefix}_init_c{c}.nii"]
        args += ["--pred-final", f"{prefix}_final_c{c}.nii"]
    result = runner.invoke(main, args)
    assert result.exit_code == 0, result.output
    payload = json.loads(report.read_text())
    assert {"l_bry", "l_seg_init", "l_seg_final", "l_ab", "total"} <= set(payload)
    assert payload["beta1"] == 0.3 and payload["lambda2"] == 0.1


def test_edges_precomputed_volume(tmp_path, runner):
    img_path, _ = _phantom(tmp_path, shape=(8, 8, 2))
    pre = tmp_path / "pre.nii"
    probs = np.zeros((8, 8, 2), dtype=np.float32)
    probs[4, :, :] = 0.9
    write_nifti(Volume(probs, (1, 1, 1)), pre)
    out = tmp_path / "edges.nii"
    result = runner.invoke(
        main, ["edges", "--input", str(img_path), "--edges", str(pre),
               "--threshold", "0.5", "--output", str(out)]
    )
    assert result.exit_code == 0, result.output
    edges = read_nifti(out, kind="binary")
    assert np.array_equal(np.unique(np.nonzero(edges.data)[0]), [4])


def test_pipeline_end_to_end_and_determinism(tmp_path):
    img_path, gt_path = _phantom(tmp_path)
    cfgs = []
    for run in ("a", "b"):
        cfgs.append({
            "image": str(img_path),
            "gt": str(gt_path),
            "output_dir": str(tmp_path / run),
            "slic": {"k": 24},
            "margin_vox": 3,
        })
    manifests = [run_pipeline(cfg, echo=lambda *_: None) for cfg in cfgs]
    names = [a["name"] for a in manifests[0]["artifacts"]]
    assert names == ["scribbles", "supervoxels", "pseudo_mask", "confidence", "edges", "eval"]
    for art in manifests[0]["artifacts"]:
        if art["path"].endswith(".nii"):
            assert read_nifti(art["path"]) is not None
        else:
            json.loads(open(art["path"]).read())
    hashes = [
        {a["name"]: a["sha256"] for a in m["artifacts"]} for m in manifests
    ]
    assert hashes[0] == hashes[1]
    # paper defaults echoed verbatim
    cfg = manifests[0]["config"]
    assert cfg["ab"]["lambda1"] == 1.0 and cfg["ab"]["lambda2"] == 0.1
    assert cfg["weights"]["beta1"] == 0.3 and cfg["weights"]["beta2"] == 0.3
    assert cfg["patch_shape"] == [224, 224, 32]
    assert cfg["edge_threshold"] == 0.2


def test_pipeline_missing_input_fails_with_stage(tmp_path, runner):
    cfg_path = tmp_path / "cfg.json"
    cfg_path.write_text(json.dumps({
        "image": str(tmp_path / "nope.nii"),
        "gt": None,
        "scribbles": None,
        "output_dir": str(tmp_path / "out"),
    }))
    result = runner.invoke(main, ["pipeline", "--config", str(cfg_path)])
    assert result.exit_code != 0
    assert "stage 'config'" in result.output


def test_pipeline_rejects_unknown_keys(tmp_path):
    with pytest.raises(PipelineStageError):
        run_pipeline({"image": "x.nii", "output_dir": "y", "bogus": 1})


def test_pipeline_with_forward(tmp_path):
    img_path, gt_path = _phantom(tmp_path, shape=(16, 16, 4))
    cfg = {
        "image": str(img_path),
        "gt": str(gt_path),
        "output_dir": str(tmp_path / "out"),
        "slic": {"k": 8},
        "margin_vox": 2,
        "patch_shape": [16, 16, 4],
        "forward": True,
        "forward_base_filters": 2,
    }
    manifest = run_pipeline(cfg, echo=lambda *_: None)
    names = {a["name"] for a in manifest["artifacts"]}
    assert {"boundary_pred", "loss", "eval"} <= names
    loss_art = next(a for a in manifest["artifacts"] if a["name"] == "loss")
    payload = json.loads(open(loss_art["path"]).read())
    assert np.isfinite(payload["total"])
