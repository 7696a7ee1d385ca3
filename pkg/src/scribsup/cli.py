"""Command-line interface: one subcommand per pipeline stage plus `pipeline`.

Multi-channel probability volumes cross the CLI boundary as one 3D NIfTI
file per class channel (the file format here is strictly 3D); repeatable
flags take the channel files in class order. Scribble files are label
volumes where unannotated voxels carry the sentinel value 255.
"""

from __future__ import annotations

import hashlib
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import label_propagation, losses, metrics, refnet, scribble_sim, supervoxel
from .errors import ScribsupError
from .volume_io import (
    DT_INT16,
    BinaryVolume,
    LabelVolume,
    Volume,
    crop_or_pad,
    read_nifti,
    write_nifti,
)

_MAX_INT16_IDS = 32768


@click.group()
def main():
    """Scribble-supervised volumetric segmentation toolkit."""


def _fail(stage: str, exc: Exception) -> None:
    click.echo(f"error in stage '{stage}': {exc}", err=True)
    sys.exit(1)


def _read_prob_volume(paths) -> losses.ProbVolume:
    channels = [read_nifti(p, kind="image") for p in paths]
    spacing = channels[0].spacing
    for ch in channels[1:]:
        if ch.shape != channels[0].shape:
            raise ScribsupError("prediction channel files disagree on shape")
    data = np.stack([ch.data for ch in channels], axis=-1)
    return losses.ProbVolume(data, spacing)


def _write_prob_volume(pv: losses.ProbVolume, prefix: str, tag: str) -> list:
    paths = []
    for c in range(pv.channels):
        path = f"{prefix}_{tag}_c{c}.nii"
        write_nifti(Volume(pv.data[..., c].astype(np.float32), pv.spacing), path)
        paths.append(path)
    return paths


def _supervoxels_to_labels(sv: supervoxel.SupervoxelMap) -> LabelVolume:
    if sv.count >= _MAX_INT16_IDS:
        raise ScribsupError(
            f"{sv.count} supervoxels exceed the int16 NIfTI limit ({_MAX_INT16_IDS - 1})"
        )
    return LabelVolume(sv.ids, sv.spacing, max(2, sv.count), DT_INT16)


def _supervoxels_from_labels(vol: LabelVolume) -> supervoxel.SupervoxelMap:
    return supervoxel.SupervoxelMap(
        vol.data.astype(np.int32), vol.spacing, int(vol.data.max()) + 1
    )


@main.command("slic")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--k", type=int, default=None, help="Cluster count; default voxel_count/1000.")
@click.option("--compactness", type=float, default=10.0, show_default=True)
@click.option("--iters", type=int, default=10, show_default=True)
@click.option("--output", required=True, type=click.Path())
def slic_cmd(input_path, k, compactness, iters, output):
    """Cluster a volume into supervoxels and write the ID map (int16)."""
    try:
        vol = read_nifti(input_path, kind="image")
        if k is None:
            k = max(1, vol.data.size // 1000)
        sv = supervoxel.slic3d(vol, supervoxel.SlicParams(k, compactness, iters))
        write_nifti(_supervoxels_to_labels(sv), output)
        click.echo(f"wrote {sv.count} supervoxels to {output}")
    except Exception as exc:
        _fail("slic", exc)


@main.command("simulate-scribbles")
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True))
@click.option("--margin", type=int, default=10, show_default=True)
@click.option("--output", required=True, type=click.Path())
def simulate_scribbles_cmd(gt_path, margin, output):
    """Generate foreground skeleton + background ring scribbles from a mask."""
    try:
        gt = read_nifti(gt_path, kind="labels")
        fg = scribble_sim.simulate_foreground_scribbles(gt)
        bg = scribble_sim.simulate_background_scribble(gt, margin)
        merged = scribble_sim.merge_scribbles(fg, bg)
        write_nifti(scribble_sim.scribbles_to_label_volume(merged), output)
        click.echo(f"wrote {len(merged)} scribble voxels to {output}")
    except Exception as exc:
        _fail("simulate-scribbles", exc)


@main.command("propagate")
@click.option("--scribbles", "scribbles_path", required=True, type=click.Path(exists=True))
@click.option("--supervoxels", "sv_path", required=True, type=click.Path(exists=True))
@click.option("--classes", type=int, default=0, help="Class count; default inferred.")
@click.option("--output-mask", required=True, type=click.Path())
@click.option("--output-conf", required=True, type=click.Path())
def propagate_cmd(scribbles_path, sv_path, classes, output_mask, output_conf):
    """Expand scribbles through supervoxels into pseudo labels."""
    try:
        scribbles = scribble_sim.scribbles_from_label_volume(
            read_nifti(scribbles_path, kind="labels"), classes
        )
        sv = _supervoxels_from_labels(read_nifti(sv_path, kind="labels"))
        pl = label_propagation.propagate(scribbles, sv)
        write_nifti(pl.mask, output_mask)
        write_nifti(pl.confident, output_conf)
        click.echo(f"confident voxels: {int(pl.confident.data.sum())}")
    except Exception as exc:
        _fail("propagate", exc)


@main.command("edges")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--threshold", type=float, default=0.2, show_default=True)
@click.option("--output", required=True, type=click.Path())
@click.option(
    "--edges",
    "precomputed",
    type=click.Path(exists=True),
    default=None,
    help="Precomputed edge-probability volume to threshold instead of the built-in detector.",
)
def edges_cmd(input_path, threshold, output, precomputed):
    """Compute the static boundary volume (stacked per-slice 2D edges)."""
    try:
        if precomputed is not None:
            ext = read_nifti(precomputed, kind="image")
            edge_vol = BinaryVolume((ext.data >= threshold).astype(np.uint8), ext.spacing)
        else:
            vol = read_nifti(input_path, kind="image")
            edge_vol = label_propagation.static_boundary(vol, threshold)
        write_nifti(edge_vol, output)
        click.echo(f"edge voxels: {int(edge_vol.data.sum())}")
    except Exception as exc:
        _fail("edges", exc)


@main.command("forward")
@click.option("--input", "input_path", required=True, type=click.Path(exists=True))
@click.option("--classes", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--base-filters", type=int, default=8, show_default=True)
@click.option("--patch", default=None, help="Crop/pad to X,Y,Z before the forward pass.")
@click.option("--out-prefix", required=True)
def forward_cmd(input_path, classes, seed, base_filters, patch, out_prefix):
    """Run the deterministic reference network and write its outputs."""
    try:
        vol = read_nifti(input_path, kind="image")
        if patch:
            target = tuple(int(t) for t in patch.split(","))
            vol = crop_or_pad(vol, target, origin="center")
        cfg = refnet.NetConfig(num_classes=classes, base_filters=base_filters, seed=seed)
        net = refnet.build(cfg)
        outputs = refnet.forward(net, vol)
        boundary_path = f"{out_prefix}_boundary.nii"
        write_nifti(
            Volume(outputs.boundary.data[..., 0].astype(np.float32), vol.spacing),
            boundary_path,
        )
        init_paths = _write_prob_volume(outputs.mask_init, out_prefix, "init")
        final_paths = _write_prob_volume(outputs.mask_final, out_prefix, "final")
        summary = {
            "input_shape": list(vol.shape),
            "num_classes": classes,
            "seed": seed,
            "base_filters": base_filters,
            "param_count": refnet.count_params(net),
            "boundary": boundary_path,
            "mask_init": init_paths,
            "mask_final": final_paths,
        }
        summary_path = f"{out_prefix}_summary.json"
        with open(summary_path, "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
        click.echo(f"wrote forward outputs with prefix {out_prefix}")
    except Exception as exc:
        _fail("forward", exc)


@main.command("loss")
@click.option("--pred-init", "pred_init", multiple=True, required=True, type=click.Path(exists=True))
@click.option("--pred-final", "pred_final", multiple=True, required=True, type=click.Path(exists=True))
@click.option("--boundary-pred", required=True, type=click.Path(exists=True))
@click.option("--pseudo", required=True, type=click.Path(exists=True))
@click.option("--conf", required=True, type=click.Path(exists=True))
@click.option("--edges", "edges_path", required=True, type=click.Path(exists=True))
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--beta1", type=float, default=0.3, show_default=True)
@click.option("--beta2", type=float, default=0.3, show_default=True)
@click.option("--lambda1", type=float, default=1.0, show_default=True)
@click.option("--lambda2", type=float, default=0.1, show_default=True)
@click.option("--literal-bry", is_flag=True, help="Use the one-sided boundary CE form.")
@click.option("--grad-prefix", default=None, help="Also write gradient volumes with this prefix.")
@click.option("--report", "report_path", required=True, type=click.Path())
def loss_cmd(
    pred_init, pred_final, boundary_pred, pseudo, conf, edges_path, image_path,
    beta1, beta2, lambda1, lambda2, literal_bry, grad_prefix, report_path,
):
    """Evaluate all loss terms on saved predictions; emit a JSON breakdown."""
    try:
        probs_init = _read_prob_volume(pred_init)
        probs_final = _read_prob_volume(pred_final)
        bvol = read_nifti(boundary_pred, kind="image")
        boundary = losses.ProbVolume(bvol.data[..., None], bvol.spacing)
        mask = read_nifti(pseudo, kind="labels")
        if mask.num_classes != probs_init.channels:
            mask = LabelVolume(mask.data, mask.spacing, probs_init.channels)
        pl = label_propagation.PseudoLabels(mask, read_nifti(conf, kind="binary"))
        static_edges = read_nifti(edges_path, kind="binary")
        image = read_nifti(image_path, kind="image")
        report = losses.total_loss(
            boundary, static_edges, probs_init, probs_final, pl, image,
            ab=losses.AbParams(lambda1, lambda2),
            weights=losses.TotalLossWeights(beta1, beta2),
            literal_boundary=literal_bry,
        )
        with open(report_path, "w") as fh:
            json.dump(report.terms, fh, indent=2, sort_keys=True)
        if grad_prefix:
            write_nifti(
                Volume(report.grad_boundary[..., 0].astype(np.float32), image.spacing),
                f"{grad_prefix}_grad_boundary.nii",
            )
            for name, grad in (("init", report.grad_init), ("final", report.grad_final)):
                for c in range(grad.shape[-1]):
                    write_nifti(
                        Volume(grad[..., c].astype(np.float32), image.spacing),
                        f"{grad_prefix}_grad_{name}_c{c}.nii",
                    )
        click.echo(f"total loss: {report.value:.6f}")
    except Exception as exc:
        _fail("loss", exc)


@main.command("eval")
@click.option("--pred", "pred_path", required=True, type=click.Path(exists=True))
@click.option("--gt", "gt_path", required=True, type=click.Path(exists=True))
@click.option("--report", "report_path", required=True, type=click.Path())
def eval_cmd(pred_path, gt_path, report_path):
    """Dice / HD95 / precision per class, plus foreground means."""
    try:
        pred = read_nifti(pred_path, kind="labels")
        gt = read_nifti(gt_path, kind="labels")
        n = max(pred.num_classes, gt.num_classes)
        pred = LabelVolume(pred.data, pred.spacing, n)
        gt = LabelVolume(gt.data, gt.spacing, n)
        report = metrics.evaluate(pred, gt)
        with open(report_path, "w") as fh:
            fh.write(report.to_json())
        click.echo(f"mean dice: {report.mean_dice}")
    except Exception as exc:
        _fail("eval", exc)


# ---------------------------------------------------------------------------
# pipeline


_PIPELINE_DEFAULTS = {
    "image": None,
    "scribbles": None,
    "gt": None,
    "edges_input": None,
    "output_dir": None,
    "slic": {"k": None, "compactness": 10.0, "iterations": 10},
    "edge_threshold": 0.2,
    "ab": {"lambda1": 1.0, "lambda2": 0.1, "epsilon": 1e-6},
    "weights": {"beta1": 0.3, "beta2": 0.3},
    "patch_shape": [224, 224, 32],
    "margin_vox": 10,
    "seed": 0,
    "forward": False,
    "forward_base_filters": 8,
    "num_classes": 0,
}


def _merge_config(user: dict) -> dict:
    cfg = json.loads(json.dumps(_PIPELINE_DEFAULTS))
    for key, value in user.items():
        if key not in cfg:
            raise ScribsupError(f"unknown config key {key!r}")
        if isinstance(cfg[key], dict):
            for sub, sval in value.items():
                if sub not in cfg[key]:
                    raise ScribsupError(f"unknown config key {key}.{sub}")
                cfg[key][sub] = sval
        else:
            cfg[key] = value
    return cfg


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run_pipeline(cfg: dict, echo=click.echo) -> dict:
    """Execute slic -> propagate -> edges -> (forward) -> loss/eval.

    Every intermediate lands in ``output_dir`` as NIfTI or JSON; the
    returned manifest records the full effective config and a sha256 per
    artifact. Raises ScribsupError subclasses tagged by the caller.
    """
    stage = "config"
    try:
        cfg = _merge_config(cfg)
        if not cfg["image"] or not cfg["output_dir"]:
            raise ScribsupError("config must set 'image' and 'output_dir'")
        for key in ("image", "scribbles", "gt", "edges_input"):
            if cfg[key] and not Path(cfg[key]).exists():
                raise ScribsupError(f"input path for {key!r} does not exist: {cfg[key]}")
        if not cfg["scribbles"] and not cfg["gt"]:
            raise ScribsupError("need either 'scribbles' or 'gt' (to simulate them)")
        out_dir = Path(cfg["output_dir"])
        out_dir.mkdir(parents=True, exist_ok=True)
        artifacts = []

        def emit(name: str, path: Path):
            artifacts.append({"name": name, "path": str(path)})

        stage = "read"
        image = read_nifti(cfg["image"], kind="image")
        gt = read_nifti(cfg["gt"], kind="labels") if cfg["gt"] else None

        stage = "scribbles"
        if cfg["scribbles"]:
            scribbles = scribble_sim.scribbles_from_label_volume(
                read_nifti(cfg["scribbles"], kind="labels"), cfg["num_classes"]
            )
        else:
            fg = scribble_sim.simulate_foreground_scribbles(gt)
            bg = scribble_sim.simulate_background_scribble(gt, cfg["margin_vox"])
            scribbles = scribble_sim.merge_scribbles(fg, bg)
            if cfg["num_classes"]:
                scribbles = scribble_sim.ScribbleSet(
                    scribbles.indices, scribbles.classes, cfg["num_classes"],
                    scribbles.shape, scribbles.spacing,
                )
            path = out_dir / "scribbles.nii"
            write_nifti(scribble_sim.scribbles_to_label_volume(scribbles), path)
            emit("scribbles", path)

        stage = "slic"
        k = cfg["slic"]["k"] or max(1, image.data.size // 1000)
        sv = supervoxel.slic3d(
            image,
            supervoxel.SlicParams(k, cfg["slic"]["compactness"], cfg["slic"]["iterations"]),
        )
        path = out_dir / "supervoxels.nii"
        write_nifti(_supervoxels_to_labels(sv), path)
        emit("supervoxels", path)

        stage = "propagate"
        pl = label_propagation.propagate(scribbles, sv)
        mask_path = out_dir / "pseudo_mask.nii"
        conf_path = out_dir / "confidence.nii"
        write_nifti(pl.mask, mask_path)
        write_nifti(pl.confident, conf_path)
        emit("pseudo_mask", mask_path)
        emit("confidence", conf_path)

        stage = "edges"
        if cfg["edges_input"]:
            ext = read_nifti(cfg["edges_input"], kind="image")
            edge_vol = BinaryVolume(
                (ext.data >= cfg["edge_threshold"]).astype(np.uint8), ext.spacing
            )
        else:
            edge_vol = label_propagation.static_boundary(image, cfg["edge_threshold"])
        path = out_dir / "edges.nii"
        write_nifti(edge_vol, path)
        emit("edges", path)

        if cfg["forward"]:
            stage = "forward"
            patch_shape = tuple(cfg["patch_shape"])
            patch = crop_or_pad(image, patch_shape, origin="center")
            net_cfg = refnet.NetConfig(
                num_classes=scribbles.num_classes,
                base_filters=cfg["forward_base_filters"],
                seed=cfg["seed"],
            )
            net = refnet.build(net_cfg)
            outputs = refnet.forward(net, patch)
            bpath = out_dir / "boundary_pred.nii"
            write_nifti(
                Volume(outputs.boundary.data[..., 0].astype(np.float32), patch.spacing), bpath
            )
            emit("boundary_pred", bpath)
            for tag, pv in (("init", outputs.mask_init), ("final", outputs.mask_final)):
                for p in _write_prob_volume(pv, str(out_dir / "mask"), tag):
                    emit(Path(p).stem, Path(p))

            stage = "loss"
            pl_patch = label_propagation.PseudoLabels(
                crop_or_pad(pl.mask, patch_shape, origin="center"),
                crop_or_pad(pl.confident, patch_shape, origin="center"),
            )
            edges_patch = crop_or_pad(edge_vol, patch_shape, origin="center")
            report = losses.total_loss(
                outputs.boundary, edges_patch, outputs.mask_init, outputs.mask_final,
                pl_patch, patch,
                ab=losses.AbParams(cfg["ab"]["lambda1"], cfg["ab"]["lambda2"], cfg["ab"]["epsilon"]),
                weights=losses.TotalLossWeights(cfg["weights"]["beta1"], cfg["weights"]["beta2"]),
            )
            path = out_dir / "loss.json"
            path.write_text(json.dumps(report.terms, indent=2, sort_keys=True))
            emit("loss", path)

        if gt is not None:
            stage = "eval"
            n = max(pl.mask.num_classes, gt.num_classes)
            pred = LabelVolume(pl.mask.data, pl.mask.spacing, n)
            gt_n = LabelVolume(gt.data, gt.spacing, n)
            path = out_dir / "eval.json"
            path.write_text(metrics.evaluate(pred, gt_n).to_json())
            emit("eval", path)

        stage = "manifest"
        for art in artifacts:
            art["sha256"] = _sha256(Path(art["path"]))
        manifest = {"config": cfg, "artifacts": artifacts}
        manifest_path = out_dir / "manifest.json"
        manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        echo(f"pipeline complete: {len(artifacts)} artifacts in {out_dir}")
        return manifest
    except Exception as exc:
        raise PipelineStageError(stage, exc) from exc


class PipelineStageError(ScribsupError):
    """Wraps a failure with the pipeline stage it occurred in."""

    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage '{stage}': {cause}")
        self.stage = stage
        self.cause = cause


@main.command("pipeline")
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
def pipeline_cmd(config_path):
    """Run the full pipeline from a JSON config document."""
    try:
        with open(config_path) as fh:
            cfg = json.load(fh)
        run_pipeline(cfg)
    except PipelineStageError as exc:
        click.echo(f"error in {exc}", err=True)
        sys.exit(1)
    except Exception as exc:
        _fail("config", exc)


if __name__ == "__main__":
    main()
