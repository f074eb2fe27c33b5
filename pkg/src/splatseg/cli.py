"""Command-line pipeline driver.

Subcommands cover the full workflow: cleaning supervision masks,
training object features, reassigning splat labels, applying edits,
rendering frames, scoring predictions, generating the bundled synthetic
scene, and serving the HTTP editor. Every step is deterministic given
the same inputs and seed.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .edits import EditOp, apply_edit
from .errors import ConfigError, SplatsegError
from .masks import CleanConfig, LabelMap, load_mask, preprocess, save_mask
from .metrics import miou_macc
from .rasterizer import render
from .reassign import SegmentationMatrix, compute_priors, reassign_labels
from .scene import Camera, load_cameras, load_scene, save_scene
from .training import LinearClassifier, TrainConfig, load_checkpoint, save_checkpoint, train


def _load_view_masks(cameras: list[Camera], masks_dir) -> list[LabelMap]:
    """One mask per camera, matched by `<camera id>.png`."""
    masks = []
    for cam in cameras:
        path = Path(masks_dir) / f"{cam.cam_id}.png"
        if not path.exists():
            raise ConfigError(f"no mask for camera {cam.cam_id!r}: {path} missing")
        masks.append(load_mask(path))
    return masks


def _cmd_preprocess(args) -> int:
    cfg = CleanConfig(kernel_size=args.kernel, area_threshold=args.area_threshold)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = sorted(Path(args.masks).glob("*.png"))
    if not paths:
        raise ConfigError(f"no PNG masks found in {args.masks}")
    for path in paths:
        cleaned = preprocess(load_mask(path), cfg)
        save_mask(cleaned, out_dir / path.name)
    print(f"cleaned {len(paths)} masks -> {out_dir}")
    return 0


def _cmd_train(args) -> int:
    scene = load_scene(args.scene)
    cameras = load_cameras(args.cameras)
    masks = _load_view_masks(cameras, args.masks)
    cfg = TrainConfig(
        lr_features=args.lr_feat,
        lr_linear=args.lr_linear,
        iterations=args.iters,
        gamma_obj=args.gamma_obj,
        seed=args.seed,
    )
    clf = LinearClassifier.init(seed=cfg.seed)
    trained_scene, trained_clf, history = train(scene, clf, cameras, masks, cfg)
    save_scene(trained_scene, args.out)
    save_checkpoint(args.ckpt, trained_clf, cfg)
    print(
        f"trained {cfg.iterations} iterations over {len(cameras)} views: "
        f"loss {history[0]:.4f} -> {history[-1]:.4f}"
    )
    print(f"scene -> {args.out}\ncheckpoint -> {args.ckpt}")
    return 0


def _cmd_reassign(args) -> int:
    scene = load_scene(args.scene)
    clf, _ = load_checkpoint(args.ckpt)
    cameras = load_cameras(args.cameras)
    masks = _load_view_masks(cameras, args.masks)

    from .rasterizer import accumulate_contributions

    contribs = accumulate_contributions(scene, cameras, masks)
    priors = compute_priors(scene, clf)
    seg = reassign_labels(contribs, priors, priors.argmax_labels, args.gamma_p)
    out_scene = scene.copy()
    out_scene.labels[:] = seg.labels
    save_scene(out_scene, args.out)
    labels, counts = np.unique(seg.labels, return_counts=True)
    summary = ", ".join(f"{l}:{c}" for l, c in zip(labels, counts))
    print(f"reassigned {len(scene)} splats (gamma_p={args.gamma_p}): {summary}")
    print(f"scene -> {args.out}")
    return 0


def _parse_color(text: str) -> tuple[float, float, float]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError(f"--color expects r,g,b in [0,1], got {text!r}")
    return tuple(float(p) for p in parts)  # type: ignore[return-value]


def _cmd_edit(args) -> int:
    scene = load_scene(args.scene)
    color = _parse_color(args.color) if args.color else None
    try:
        op = EditOp(kind=args.op, target=args.object, color=color)
    except ValueError as e:
        raise ConfigError(str(e)) from e
    seg = SegmentationMatrix.from_labels(scene.labels)
    mask = seg.mask(args.object)
    if not mask.any():
        raise ConfigError(f"object {args.object} has no splats in {args.scene}")
    edited = apply_edit(scene, mask, op)
    save_scene(edited, args.out)
    print(f"{args.op} object {args.object}: {len(scene)} -> {len(edited)} splats -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    pred_dir, gt_dir = Path(args.pred), Path(args.gt)
    gt_paths = sorted(gt_dir.glob("*.png"))
    if not gt_paths:
        raise ConfigError(f"no PNG label maps found in {gt_dir}")
    per_file = {}
    mious, maccs = [], []
    for gt_path in gt_paths:
        pred_path = pred_dir / gt_path.name
        if not pred_path.exists():
            raise ConfigError(f"missing prediction for {gt_path.name}")
        report = miou_macc(load_mask(pred_path), load_mask(gt_path))
        per_file[gt_path.name] = {"miou": report.miou, "macc": report.macc}
        mious.append(report.miou)
        maccs.append(report.macc)
    doc = {
        "mean_miou": float(np.mean(mious)),
        "mean_macc": float(np.mean(maccs)),
        "files": per_file,
    }
    with open(args.out, "w", encoding="utf-8") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")
    print(f"mIoU {doc['mean_miou']:.4f}  mAcc {doc['mean_macc']:.4f} over {len(gt_paths)} views")
    print(f"report -> {args.out}")
    return 0


def _cmd_render(args) -> int:
    scene = load_scene(args.scene)
    cameras = load_cameras(args.cameras)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.mode == "label":
        for cam in cameras:
            fb = render(scene, cam, color=False, label=True)
            save_mask(fb.label, out_dir / f"{cam.cam_id}.png")
    else:
        from PIL import Image

        for cam in cameras:
            fb = render(scene, cam, color=True)
            frame = (np.clip(fb.color, 0.0, 1.0) * 255.0).round().astype(np.uint8)
            Image.fromarray(frame).save(out_dir / f"{cam.cam_id}.png")
    print(f"rendered {len(cameras)} {args.mode} frames -> {out_dir}")
    return 0


def _cmd_synth(args) -> int:
    from .synthetic import write_bundle

    truth = write_bundle(
        args.out,
        n_per_cluster=args.per_cluster,
        n_views=args.views,
        seed=args.seed,
        width=args.size,
        height=args.size,
    )
    print(
        f"synthetic bundle -> {args.out} "
        f"({3 * args.per_cluster} splats, {args.views} views, labels {truth['cluster_labels']})"
    )
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .service import Session, create_app

    scene = load_scene(args.scene)
    clf, _ = load_checkpoint(args.ckpt)
    cameras = load_cameras(args.cameras) if args.cameras else None
    masks = _load_view_masks(cameras, args.masks) if cameras and args.masks else None
    session = Session(
        scene=scene, classifier=clf, gamma_p=args.gamma_p, k_neighbors=args.k,
        cameras=cameras, masks=masks,
    )
    ui_dir = args.ui_dir or _default_ui_dir()
    app = create_app(session, ui_dir=ui_dir)
    print(f"serving {len(scene)} splats on {args.host}:{args.port} (ui: {ui_dir or 'none'})")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def _default_ui_dir() -> str | None:
    candidate = Path(__file__).resolve().parents[2] / "frontend" / "dist"
    return str(candidate) if candidate.is_dir() else None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="splatseg", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="clean a directory of label masks")
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--kernel", type=int, default=3)
    p.add_argument("--area-threshold", type=int, default=500)
    p.set_defaults(func=_cmd_preprocess)

    p = sub.add_parser("train", help="train object features and the classifier")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--iters", type=int, default=30000)
    p.add_argument("--lr-feat", type=float, default=0.005)
    p.add_argument("--lr-linear", type=float, default=0.0005)
    p.add_argument("--gamma-obj", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("reassign", help="vote final splat labels and export a labeled scene")
    p.add_argument("--scene", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--masks", required=True)
    p.add_argument("--gamma-p", type=float, default=0.2)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_reassign)

    p = sub.add_parser("edit", help="remove, extract, or recolor one object")
    p.add_argument("--scene", required=True)
    p.add_argument("--op", required=True, choices=("remove", "extract", "recolor"))
    p.add_argument("--object", required=True, type=int)
    p.add_argument("--color", default=None, help="r,g,b in [0,1] (recolor only)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_edit)

    p = sub.add_parser("eval", help="score predicted label maps against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("render", help="render frames for a camera list")
    p.add_argument("--scene", required=True)
    p.add_argument("--cameras", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--mode", choices=("rgb", "label"), default="rgb")
    p.set_defaults(func=_cmd_render)

    p = sub.add_parser("synth", help="write the bundled synthetic cluster scene")
    p.add_argument("--out", required=True)
    p.add_argument("--per-cluster", type=int, default=100)
    p.add_argument("--views", type=int, default=9)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("serve", help="run the interactive editing service")
    p.add_argument("--scene", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--port", type=int, default=8080)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--cameras", default=None, help="camera JSON (enables reassignment)")
    p.add_argument("--masks", default=None, help="mask directory (enables reassignment)")
    p.add_argument("--gamma-p", type=float, default=0.2)
    p.add_argument("--k", type=int, default=16)
    p.add_argument("--ui-dir", default=None, help="static editor assets to serve at /")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (SplatsegError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
