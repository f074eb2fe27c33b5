"""Tile-based splat rasterizer.

Splats are projected to 2D Gaussians (EWA approximation), binned into
16 x 16 pixel tiles by their 3-sigma bounding boxes, and composited
front to back. A single blend walker produces the per-splat, per-pixel
weights alpha_i * T_i; the forward render, the feature backward pass,
and per-label contribution accumulation all consume the same walker so
their arithmetic can never drift apart.

Compositing contract (shared with any reference renderer):

* splats blend in ascending (depth, index) order, one global sort per view;
* alpha_i = logistic(opacity_i) * exp(-0.5 d^T cov2d^{-1} d), clamped to
  0.99, using the unnormalized exponential so opacity acts as a pure
  multiplier;
* a splat contributes to a pixel only inside its own 3-sigma axis-aligned
  box, only while alpha_i >= 1/255, and only while the pixel's remaining
  transmittance T >= 1e-4; skipped splats do not attenuate T.

The box rule makes tiling unobservable: tile binning is a conservative
superset of the per-pixel footprint test.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import ShapeError
from .masks import LabelMap
from .scene import Camera, Gaussian, NEAR_PLANE, Scene, eval_sh_colors, quat_to_rotmat

TILE_SIZE = 16
ALPHA_CLAMP = 0.99
ALPHA_MIN = 1.0 / 255.0
T_MIN = 1e-4
COV2D_DILATION = 0.3
SIGMA_CUTOFF = 3.0
BACKGROUND_ALPHA = 0.5  # label channel: below this coverage a pixel is background


@dataclass
class Splat2D:
    """A projected splat: pixel-space mean, 2x2 covariance, camera depth,
    and the index of the source Gaussian."""

    mean2d: np.ndarray
    cov2d: np.ndarray
    depth: float
    gaussian_index: int

    @property
    def radius(self) -> float:
        """3-sigma extent from the largest covariance eigenvalue."""
        a, b, c = self.cov2d[0, 0], self.cov2d[0, 1], self.cov2d[1, 1]
        lam_max = 0.5 * (a + c) + np.sqrt(0.25 * (a - c) ** 2 + b * b)
        return float(SIGMA_CUTOFF * np.sqrt(lam_max))


@dataclass
class Framebuffer:
    """Per-pixel render outputs; channels not requested are None."""

    alpha_acc: np.ndarray  # (H, W)
    color: np.ndarray | None = None  # (H, W, 3)
    feature: np.ndarray | None = None  # (H, W, 16)
    label: LabelMap | None = None


class ContributionMatrix:
    """Sparse accumulation of blended mass per (mask label, Gaussian).

    Rows are materialized lazily per label actually seen, so storage is
    proportional to the number of distinct labels.
    """

    def __init__(self, n_gaussians: int):
        self.n_gaussians = n_gaussians
        self._rows: dict[int, np.ndarray] = {}

    def _row_for_update(self, label: int) -> np.ndarray:
        row = self._rows.get(label)
        if row is None:
            row = self._rows[label] = np.zeros(self.n_gaussians)
        return row

    def add(self, label: int, gaussian_index: int, weight: float) -> None:
        self._row_for_update(int(label))[gaussian_index] += weight

    def labels(self) -> list[int]:
        return sorted(self._rows)

    def row(self, label: int) -> np.ndarray:
        row = self._rows.get(int(label))
        return row.copy() if row is not None else np.zeros(self.n_gaussians)

    def get(self, label: int, gaussian_index: int) -> float:
        row = self._rows.get(int(label))
        return float(row[gaussian_index]) if row is not None else 0.0

    def total_mass(self) -> np.ndarray:
        """Per-Gaussian blended mass summed over all labels."""
        total = np.zeros(self.n_gaussians)
        for row in self._rows.values():
            total += row
        return total

    def stacked(self, labels) -> np.ndarray:
        """Dense (len(labels), N) view of the requested rows."""
        return np.stack([self.row(l) for l in labels]) if len(labels) else np.zeros((0, self.n_gaussians))


@dataclass
class _ProjectedSplats:
    """Struct-of-arrays projection output, sorted by (depth, index)."""

    indices: np.ndarray  # (M,) original Gaussian indices
    mean2d: np.ndarray  # (M, 2)
    conic: np.ndarray  # (M, 3) inverse covariance packed (a, b, c)
    depth: np.ndarray  # (M,)
    radius: np.ndarray  # (M,)
    opacity: np.ndarray  # (M,) post-logistic

    def __len__(self) -> int:
        return len(self.indices)


def _covariances_3d(scales: np.ndarray, rotations: np.ndarray) -> np.ndarray:
    """Batched R diag(exp(s))^2 R^T from log-scales and unit quaternions."""
    r = quat_to_rotmat(rotations)
    m = r * np.exp(scales.astype(np.float64))[:, None, :]
    return m @ m.transpose(0, 2, 1)


def _project_arrays(
    positions: np.ndarray,
    scales: np.ndarray,
    rotations: np.ndarray,
    opacities: np.ndarray,
    cam: Camera,
) -> _ProjectedSplats:
    n = len(positions)
    if n == 0:
        empty = np.zeros(0)
        return _ProjectedSplats(
            np.zeros(0, dtype=np.int64), np.zeros((0, 2)), np.zeros((0, 3)), empty, empty, empty
        )
    p_cam = cam.to_camera(positions)
    in_front = p_cam[:, 2] > NEAR_PLANE
    idx = np.nonzero(in_front)[0]
    p_cam = p_cam[idx]
    tx, ty, tz = p_cam[:, 0], p_cam[:, 1], p_cam[:, 2]

    mean2d = np.stack([cam.fx * tx / tz + cam.cx, cam.fy * ty / tz + cam.cy], axis=1)

    cov3d = _covariances_3d(scales[idx], rotations[idx])
    # Perspective Jacobian rows stacked into (M, 2, 3).
    zeros = np.zeros(len(idx))
    jac = np.stack(
        [
            np.stack([cam.fx / tz, zeros, -cam.fx * tx / (tz * tz)], axis=1),
            np.stack([zeros, cam.fy / tz, -cam.fy * ty / (tz * tz)], axis=1),
        ],
        axis=1,
    )
    t = jac @ cam.rotation[None, :, :]
    cov2d = t @ cov3d @ t.transpose(0, 2, 1)
    cov2d[:, 0, 0] += COV2D_DILATION
    cov2d[:, 1, 1] += COV2D_DILATION

    a, b, c = cov2d[:, 0, 0], cov2d[:, 0, 1], cov2d[:, 1, 1]
    lam_max = 0.5 * (a + c) + np.sqrt(0.25 * (a - c) ** 2 + b * b)
    radius = SIGMA_CUTOFF * np.sqrt(lam_max)

    visible = (
        (mean2d[:, 0] + radius >= 0.0)
        & (mean2d[:, 0] - radius <= cam.width - 1.0)
        & (mean2d[:, 1] + radius >= 0.0)
        & (mean2d[:, 1] - radius <= cam.height - 1.0)
    )
    idx, mean2d, tz = idx[visible], mean2d[visible], tz[visible]
    a, b, c, radius = a[visible], b[visible], c[visible], radius[visible]

    det = a * c - b * b
    conic = np.stack([c / det, -b / det, a / det], axis=1)
    opacity = 1.0 / (1.0 + np.exp(-opacities[idx].astype(np.float64)))

    order = np.lexsort((idx, tz))
    return _ProjectedSplats(
        indices=idx[order].astype(np.int64),
        mean2d=mean2d[order],
        conic=conic[order],
        depth=tz[order],
        radius=radius[order],
        opacity=opacity[order],
    )


def project_gaussian(cam: Camera, g: Gaussian, gaussian_index: int = 0) -> Splat2D | None:
    """Project one splat; None when it is behind the camera or its
    3-sigma extent misses the image."""
    proj = _project_arrays(
        np.asarray(g.position, dtype=np.float64)[None],
        np.asarray(g.scale, dtype=np.float64)[None],
        np.asarray(g.rotation, dtype=np.float64)[None],
        np.asarray([g.opacity], dtype=np.float64),
        cam,
    )
    if len(proj) == 0:
        return None
    a, b, c = proj.conic[0]
    det = a * c - b * b
    cov2d = np.array([[c / det, -b / det], [-b / det, a / det]])
    return Splat2D(
        mean2d=proj.mean2d[0], cov2d=cov2d, depth=float(proj.depth[0]),
        gaussian_index=gaussian_index,
    )


def _tile_ranges(mean2d: np.ndarray, radius: np.ndarray, width: int, height: int):
    """Inclusive tile index ranges covered by each splat's 3-sigma box."""
    tiles_x = (width + TILE_SIZE - 1) // TILE_SIZE
    tiles_y = (height + TILE_SIZE - 1) // TILE_SIZE
    x0 = np.clip(np.floor((mean2d[:, 0] - radius) / TILE_SIZE).astype(np.int64), 0, tiles_x - 1)
    x1 = np.clip(np.floor((mean2d[:, 0] + radius) / TILE_SIZE).astype(np.int64), 0, tiles_x - 1)
    y0 = np.clip(np.floor((mean2d[:, 1] - radius) / TILE_SIZE).astype(np.int64), 0, tiles_y - 1)
    y1 = np.clip(np.floor((mean2d[:, 1] + radius) / TILE_SIZE).astype(np.int64), 0, tiles_y - 1)
    return tiles_x, tiles_y, x0, x1, y0, y1


def _bin_tiles(mean2d, radius, width, height):
    """Per-tile lists of row positions, preserving the caller's order."""
    tiles_x, tiles_y, x0, x1, y0, y1 = _tile_ranges(mean2d, radius, width, height)
    bins: dict[tuple[int, int], list[int]] = {}
    for s in range(len(mean2d)):
        for ty in range(y0[s], y1[s] + 1):
            for tx in range(x0[s], x1[s] + 1):
                bins.setdefault((tx, ty), []).append(s)
    return tiles_x, tiles_y, bins


@dataclass
class TileBins:
    """Image tiling: per-tile splat lists sorted by (depth, gaussian_index)."""

    tile_size: int
    tiles_x: int
    tiles_y: int
    bins: dict[tuple[int, int], list[int]]  # values index into the input sequence


def build_tile_lists(splats, width: int, height: int) -> TileBins:
    """Bin projected splats into 16 x 16 tiles by 3-sigma bounding box."""
    splats = list(splats)
    order = sorted(range(len(splats)), key=lambda s: (splats[s].depth, splats[s].gaussian_index))
    if splats:
        mean2d = np.stack([splats[s].mean2d for s in order]).astype(np.float64)
        radius = np.array([splats[s].radius for s in order])
    else:
        mean2d = np.zeros((0, 2))
        radius = np.zeros(0)
    tiles_x, tiles_y, bins = _bin_tiles(mean2d, radius, width, height)
    remapped = {key: [order[s] for s in rows] for key, rows in bins.items()}
    return TileBins(TILE_SIZE, tiles_x, tiles_y, remapped)


class _TileWalk:
    """Front-to-back blend over one set of pixels.

    walk() yields (gaussian_index, weights) for every splat with any
    nonzero contribution; weights align with the pixel arrays. After the
    walk, ``alpha_acc`` holds the accumulated opacity and
    ``transmittance`` the remaining per-pixel T.
    """

    def __init__(self, proj: _ProjectedSplats, rows, px: np.ndarray, py: np.ndarray):
        self._proj = proj
        self._rows = rows
        self._px = px.astype(np.float64)
        self._py = py.astype(np.float64)
        self.transmittance = np.ones(len(px))
        self.alpha_acc = np.zeros(len(px))

    def walk(self):
        proj = self._proj
        t = self.transmittance
        for s in self._rows:
            dx = self._px - proj.mean2d[s, 0]
            dy = self._py - proj.mean2d[s, 1]
            r = proj.radius[s]
            footprint = (np.abs(dx) <= r) & (np.abs(dy) <= r)
            if not footprint.any():
                continue
            ca, cb, cc = proj.conic[s]
            power = -0.5 * (ca * dx * dx + 2.0 * cb * dx * dy + cc * dy * dy)
            alpha = np.minimum(proj.opacity[s] * np.exp(power), ALPHA_CLAMP)
            eff = np.where(footprint & (alpha >= ALPHA_MIN) & (t >= T_MIN), alpha, 0.0)
            if eff.any():
                w = eff * t
                self.alpha_acc += w
                yield int(proj.indices[s]), w
                t *= 1.0 - eff
                if not (t >= T_MIN).any():
                    break


def _tile_pixels(tx: int, ty: int, width: int, height: int):
    """Flattened pixel coordinate arrays for one tile, row-major."""
    x0, y0 = tx * TILE_SIZE, ty * TILE_SIZE
    x1, y1 = min(x0 + TILE_SIZE, width), min(y0 + TILE_SIZE, height)
    xs = np.arange(x0, x1)
    ys = np.arange(y0, y1)
    px = np.tile(xs, len(ys))
    py = np.repeat(ys, len(xs))
    return px, py


def _iter_tile_walks(proj: _ProjectedSplats, width: int, height: int):
    """Yield (pixel x, pixel y, walk) per non-empty tile, row-major order."""
    _, _, bins = _bin_tiles(proj.mean2d, proj.radius, width, height)
    for key in sorted(bins, key=lambda k: (k[1], k[0])):
        px, py = _tile_pixels(key[0], key[1], width, height)
        yield px, py, _TileWalk(proj, bins[key], px, py)


def _project_scene(scene: Scene, cam: Camera) -> _ProjectedSplats:
    return _project_arrays(scene.positions, scene.scales, scene.rotations, scene.opacities, cam)


def render(
    scene: Scene,
    cam: Camera,
    *,
    color: bool = True,
    feature: bool = False,
    label: bool = False,
) -> Framebuffer:
    """Composite the requested channels for one camera.

    Color blends the per-splat SH color, feature blends the 16-dim object
    feature, and the label channel emits, per pixel, the label whose
    splats carry the largest share of blended mass (ties to the smaller
    label; pixels with accumulated alpha below 0.5 are background 0).
    """
    h, w = cam.height, cam.width
    alpha_img = np.zeros(h * w)
    color_img = np.zeros((h * w, 3)) if color else None
    feat_img = np.zeros((h * w, scene.obj_features.shape[1])) if feature else None
    label_img = np.zeros(h * w, dtype=np.uint8) if label else None

    proj = _project_scene(scene, cam)
    if len(proj):
        colors = None
        if color:
            dirs = scene.positions.astype(np.float64) - cam.center
            dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
            colors = eval_sh_colors(scene.sh_coeffs, scene.sh_degree, dirs)
        features = scene.obj_features.astype(np.float64) if feature else None
        labels = scene.labels
        label_scratch = np.zeros((TILE_SIZE * TILE_SIZE, 256)) if label else None

        for px, py, tile in _iter_tile_walks(proj, w, h):
            flat = py * w + px
            if label:
                scratch = label_scratch[: len(px)]
                scratch[:] = 0.0
            for g, weights in tile.walk():
                if color:
                    color_img[flat] += weights[:, None] * colors[g]
                if feature:
                    feat_img[flat] += weights[:, None] * features[g]
                if label:
                    scratch[:, labels[g]] += weights
            alpha_img[flat] = tile.alpha_acc
            if label:
                winners = np.argmax(scratch, axis=1).astype(np.uint8)
                label_img[flat] = np.where(tile.alpha_acc >= BACKGROUND_ALPHA, winners, 0)

    return Framebuffer(
        alpha_acc=alpha_img.reshape(h, w),
        color=color_img.reshape(h, w, 3) if color else None,
        feature=feat_img.reshape(h, w, -1) if feature else None,
        label=LabelMap(label_img.reshape(h, w)) if label else None,
    )


def backward_features(scene: Scene, cam: Camera, grad_feature: np.ndarray) -> np.ndarray:
    """Per-Gaussian feature gradients for a rendered-feature cotangent.

    The feature image is linear in the per-splat features, so the
    gradient for splat i is the sum of its blend weights times the
    incoming gradient over the pixels it covers. Geometry and opacity
    receive no gradient.
    """
    h, w = cam.height, cam.width
    grad = np.asarray(grad_feature, dtype=np.float64)
    if grad.shape[:2] != (h, w):
        raise ShapeError(f"grad_feature shape {grad.shape} does not match {h}x{w} image")
    grad_flat = grad.reshape(h * w, -1)
    out = np.zeros((len(scene), grad_flat.shape[1]))
    proj = _project_scene(scene, cam)
    if len(proj):
        for px, py, tile in _iter_tile_walks(proj, w, h):
            flat = py * w + px
            block = grad_flat[flat]
            for g, weights in tile.walk():
                out[g] += weights @ block
    return out


def view_weight_matrix(scene: Scene, cam: Camera) -> sparse.csr_matrix:
    """Sparse (pixels, splats) matrix of blend weights for one view.

    Row u holds alpha_i(u) * T_i(u) per splat i; applying it to the
    feature array reproduces the rendered feature image exactly, and its
    transpose is the feature backward pass. Valid while geometry and
    opacities are unchanged.
    """
    h, w = cam.height, cam.width
    rows: list[np.ndarray] = []
    cols: list[np.ndarray] = []
    data: list[np.ndarray] = []
    proj = _project_scene(scene, cam)
    if len(proj):
        for px, py, tile in _iter_tile_walks(proj, w, h):
            flat = py * w + px
            for g, weights in tile.walk():
                nz = np.nonzero(weights)[0]
                rows.append(flat[nz])
                cols.append(np.full(len(nz), g, dtype=np.int64))
                data.append(weights[nz])
    if rows:
        coo = sparse.coo_matrix(
            (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
            shape=(h * w, len(scene)),
        )
    else:
        coo = sparse.coo_matrix((h * w, len(scene)))
    return coo.tocsr()


def pixel_contributions(scene: Scene, cam: Camera, pixel) -> tuple[np.ndarray, np.ndarray]:
    """Blend weights at a single pixel.

    Returns (gaussian indices, weights) in blend order; both empty when
    nothing covers the pixel.
    """
    x, y = float(pixel[0]), float(pixel[1])
    proj = _project_scene(scene, cam)
    covering = [
        s
        for s in range(len(proj))
        if abs(x - proj.mean2d[s, 0]) <= proj.radius[s]
        and abs(y - proj.mean2d[s, 1]) <= proj.radius[s]
    ]
    walk = _TileWalk(proj, covering, np.array([x]), np.array([y]))
    indices: list[int] = []
    weights: list[float] = []
    for g, w_arr in walk.walk():
        indices.append(g)
        weights.append(float(w_arr[0]))
    return np.array(indices, dtype=np.int64), np.array(weights)


def accumulate_contributions(scene: Scene, cameras, masks) -> ContributionMatrix:
    """Sum each splat's blended mass under every mask label across views.

    Entry (l, i) accumulates alpha_i * T_i over all pixels of all views
    whose mask value is l, with the identical blend arithmetic as
    :func:`render`.
    """
    cameras = list(cameras)
    masks = list(masks)
    if len(cameras) != len(masks):
        raise ShapeError(f"{len(cameras)} cameras but {len(masks)} masks")
    out = ContributionMatrix(len(scene))
    for v, (cam, mask) in enumerate(zip(cameras, masks)):
        mask_arr = mask.labels if isinstance(mask, LabelMap) else np.asarray(mask)
        if mask_arr.shape != (cam.height, cam.width):
            raise ShapeError(
                f"view {v}: mask shape {mask_arr.shape} does not match "
                f"camera {cam.height}x{cam.width}"
            )
        flat_mask = mask_arr.reshape(-1).astype(np.int64)
        proj = _project_scene(scene, cam)
        if not len(proj):
            continue
        for px, py, tile in _iter_tile_walks(proj, cam.width, cam.height):
            tile_labels = flat_mask[py * cam.width + px]
            for g, weights in tile.walk():
                counts = np.bincount(tile_labels, weights=weights)
                for lab in np.nonzero(counts)[0]:
                    out.add(int(lab), g, float(counts[lab]))
    return out
