"""Synthetic demo scenes: labeled Gaussian clusters on a camera ring.

Used by the test suite, the `synth` CLI subcommand, and the browser
editor's end-to-end fixture. The generated supervision masks are label
renders of the ground-truth scene, so the whole pipeline can run and be
scored without any external data.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .masks import save_mask
from .rasterizer import render
from .scene import Camera, Scene, logit, rgb_to_sh_dc, save_scene

CLUSTER_CENTERS = ((-2.3, 0.0, 0.0), (2.3, 0.0, 0.0), (0.0, 2.5, 0.0))
CLUSTER_LABELS = (1, 2, 3)
CLUSTER_COLORS = ((0.85, 0.25, 0.2), (0.2, 0.65, 0.85), (0.9, 0.8, 0.25))


def look_at_camera(
    eye,
    target=(0.0, 0.0, 0.0),
    up=(0.0, 1.0, 0.0),
    width: int = 64,
    height: int = 64,
    fov_deg: float = 50.0,
    cam_id: str = "",
) -> Camera:
    """Pinhole camera at ``eye`` looking at ``target``; +z forward, +y down."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    right = np.cross(forward, np.asarray(up, dtype=np.float64))
    norm = np.linalg.norm(right)
    if norm < 1e-9:  # looking straight along up; pick any lateral axis
        right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        norm = np.linalg.norm(right)
    right /= norm
    down = np.cross(forward, right)
    rot = np.stack([right, down, forward])
    w2c = np.eye(4)
    w2c[:3, :3] = rot
    w2c[:3, 3] = -rot @ eye
    f = 0.5 * width / np.tan(np.radians(fov_deg) / 2.0)
    return Camera(
        width=width, height=height, fx=f, fy=f, cx=width / 2.0, cy=height / 2.0,
        world_to_camera=w2c, cam_id=cam_id,
    )


def ring_cameras(
    n: int = 9,
    radius: float = 8.5,
    elevation: float = 1.6,
    width: int = 64,
    height: int = 64,
    fov_deg: float = 50.0,
) -> list[Camera]:
    """Equally spaced cameras on a circle, all looking at the origin."""
    cams = []
    for i in range(n):
        theta = 2.0 * np.pi * i / n
        eye = (radius * np.cos(theta), elevation, radius * np.sin(theta))
        cams.append(
            look_at_camera(eye, width=width, height=height, fov_deg=fov_deg, cam_id=f"view_{i:02d}")
        )
    return cams


def cluster_scene(
    n_per_cluster: int = 100,
    seed: int = 0,
    cluster_std: float = 0.55,
    splat_scale: tuple[float, float] = (0.10, 0.20),
    opacity_range: tuple[float, float] = (0.65, 0.95),
) -> Scene:
    """Three well-separated labeled splat clusters with distinct base colors."""
    rng = np.random.default_rng(seed)
    positions, labels, colors = [], [], []
    for center, label, color in zip(CLUSTER_CENTERS, CLUSTER_LABELS, CLUSTER_COLORS):
        positions.append(rng.normal(center, cluster_std, size=(n_per_cluster, 3)))
        labels.extend([label] * n_per_cluster)
        colors.extend([color] * n_per_cluster)
    positions = np.concatenate(positions)
    n = len(positions)

    quats = rng.normal(size=(n, 4))
    quats /= np.linalg.norm(quats, axis=1, keepdims=True)
    scales = np.log(rng.uniform(*splat_scale, size=(n, 3)))
    opacities = logit(rng.uniform(*opacity_range, size=n))
    sh = np.zeros((n, 3, 1))
    sh[:, :, 0] = rgb_to_sh_dc(np.asarray(colors))

    return Scene(
        positions=positions,
        scales=scales,
        rotations=quats,
        opacities=opacities,
        sh_coeffs=sh,
        obj_features=np.zeros((n, 16)),
        labels=np.asarray(labels, dtype=np.uint8),
        sh_degree=0,
    )


def render_label_masks(scene: Scene, cameras) -> list:
    """Ground-truth label maps: the scene's own labels rendered per view."""
    return [render(scene, cam, color=False, label=True).label for cam in cameras]


def write_bundle(
    out_dir,
    n_per_cluster: int = 100,
    n_views: int = 9,
    seed: int = 0,
    width: int = 64,
    height: int = 64,
) -> dict:
    """Write a complete synthetic pipeline bundle.

    Produces scene.ply (features and labels zeroed, ready for training),
    cameras.json, masks/<view>.png ground-truth supervision, and
    truth.json with the per-splat labels and cluster metadata.
    Returns the truth document.
    """
    out = Path(out_dir)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    truth_scene = cluster_scene(n_per_cluster=n_per_cluster, seed=seed)
    cameras = ring_cameras(n=n_views, width=width, height=height)
    masks = render_label_masks(truth_scene, cameras)
    for cam, mask in zip(cameras, masks):
        save_mask(mask, out / "masks" / f"{cam.cam_id}.png")

    train_scene = truth_scene.copy()
    train_scene.labels[:] = 0
    save_scene(train_scene, out / "scene.ply")

    from .scene import save_cameras

    save_cameras(cameras, out / "cameras.json")

    truth = {
        "seed": seed,
        "n_per_cluster": n_per_cluster,
        "cluster_centers": [list(c) for c in CLUSTER_CENTERS],
        "cluster_labels": list(CLUSTER_LABELS),
        "cluster_colors": [list(c) for c in CLUSTER_COLORS],
        "gaussian_labels": truth_scene.labels.tolist(),
    }
    with open(out / "truth.json", "w", encoding="utf-8") as f:
        json.dump(truth, f)
    return truth
