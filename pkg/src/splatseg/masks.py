"""Multiview label masks: PNG I/O and noise cleanup.

Masks are H x W images of object IDs in [0, 255], stored as 8-bit
single-channel grayscale PNGs whose pixel value is the label. The
cleanup pipeline smooths jagged boundaries with a per-label
morphological closing, then merges connected components smaller than an
area threshold into the neighboring label they share the longest
boundary with.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

from .errors import FormatError, IoError


@dataclass(frozen=True)
class LabelMap:
    """H x W map of object IDs in [0, 255]."""

    labels: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise FormatError(f"label map must be 2-D, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise FormatError("label values must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        object.__setattr__(self, "labels", np.ascontiguousarray(arr))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def label_set(self) -> np.ndarray:
        return np.unique(self.labels)


@dataclass(frozen=True)
class CleanConfig:
    """Cleanup parameters: odd square closing kernel, minimum component
    area in pixels, and pixel connectivity (4 or 8)."""

    kernel_size: int = 3
    area_threshold: int = 500
    connectivity: int = 8

    def __post_init__(self):
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd and >= 1, got {self.kernel_size}")
        if self.area_threshold < 0:
            raise ValueError(f"area_threshold must be >= 0, got {self.area_threshold}")
        if self.connectivity not in (4, 8):
            raise ValueError(f"connectivity must be 4 or 8, got {self.connectivity}")


def load_mask(path) -> LabelMap:
    """Read an 8-bit grayscale PNG as a label map."""
    try:
        with Image.open(path) as img:
            if img.mode != "L":
                raise FormatError(
                    f"{path}: expected 8-bit single-channel grayscale, got mode {img.mode!r}"
                )
            return LabelMap(np.asarray(img, dtype=np.uint8))
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e


def save_mask(mask: LabelMap, path) -> None:
    try:
        Image.fromarray(mask.labels, mode="L").save(path, format="PNG")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


def _structure(connectivity: int) -> np.ndarray:
    return ndimage.generate_binary_structure(2, 1 if connectivity == 4 else 2)


def _neighbor_offsets(connectivity: int) -> list[tuple[int, int]]:
    if connectivity == 4:
        return [(-1, 0), (1, 0), (0, -1), (0, 1)]
    return [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]


def close_binary(binary: np.ndarray, kernel_size: int) -> np.ndarray:
    """Morphological closing (dilate, then erode) with a square kernel.

    The erosion treats pixels beyond the image border as set, so a
    region touching the border is not eaten away; closing is extensive
    (output is a superset of the input).
    """
    if kernel_size == 1:
        return np.asarray(binary, dtype=bool).copy()
    kernel = np.ones((kernel_size, kernel_size), dtype=bool)
    dilated = ndimage.binary_dilation(binary, kernel)
    return ndimage.binary_erosion(dilated, kernel, border_value=1)


def morphological_close(mask: LabelMap, cfg: CleanConfig = CleanConfig()) -> LabelMap:
    """Close each label's binary mask and recompose a single-label map.

    A pixel claimed by several closed masks goes to the label whose
    closed connected region at that pixel has the largest area, ties to
    the smaller label. Pixels claimed by no closed mask keep their
    original label.
    """
    labels = mask.labels
    if cfg.kernel_size == 1:
        return LabelMap(labels.copy())
    structure = _structure(cfg.connectivity)

    out = labels.copy()
    best_area = np.zeros(labels.shape, dtype=np.int64)
    for value in np.unique(labels):
        closed = close_binary(labels == value, cfg.kernel_size)
        comp, n_comp = ndimage.label(closed, structure=structure)
        if n_comp == 0:
            continue
        areas = np.bincount(comp.ravel(), minlength=n_comp + 1)
        area_map = np.where(closed, areas[comp], 0)
        # Strict > keeps the earlier (smaller) label on area ties.
        win = area_map > best_area
        out[win] = value
        best_area = np.maximum(best_area, area_map)
    return LabelMap(out)


def _components(labels: np.ndarray, structure: np.ndarray):
    """Connected equal-label components. Returns (component id map, areas)."""
    comp = np.zeros(labels.shape, dtype=np.int64)
    next_id = 1
    for value in np.unique(labels):
        ids, n = ndimage.label(labels == value, structure=structure)
        region = ids > 0
        comp[region] = ids[region] + (next_id - 1)
        next_id += n
    areas = np.bincount(comp.ravel(), minlength=next_id)
    return comp, areas


def _boundary_votes(labels: np.ndarray, region: np.ndarray, offsets) -> np.ndarray:
    """Per-label count of adjacent (inside, outside) pixel pairs along the
    region's boundary."""
    h, w = labels.shape
    votes = np.zeros(256, dtype=np.int64)
    ys, xs = np.nonzero(region)
    for dy, dx in offsets:
        ny = ys + dy
        nx = xs + dx
        ok = (ny >= 0) & (ny < h) & (nx >= 0) & (nx < w)
        ny, nx = ny[ok], nx[ok]
        outside = ~region[ny, nx]
        np.add.at(votes, labels[ny[outside], nx[outside]], 1)
    return votes


def relabel_small_components(mask: LabelMap, cfg: CleanConfig = CleanConfig()) -> LabelMap:
    """Merge components below the area threshold into their dominant neighbor.

    Dominance is shared boundary length; ties go to the smaller label.
    The smallest component merges first and the map is re-analyzed after
    every merge, so later decisions see the updated labels.
    """
    labels = mask.labels.copy()
    structure = _structure(cfg.connectivity)
    offsets = _neighbor_offsets(cfg.connectivity)

    while True:
        comp, areas = _components(labels, structure)
        small = [c for c in range(1, len(areas)) if areas[c] < cfg.area_threshold]
        if not small:
            break
        # Area ties break on first-pixel position for determinism.
        flat = comp.ravel()
        comp_values, first_index = np.unique(flat, return_index=True)
        first = dict(zip(comp_values.tolist(), first_index.tolist()))
        cid = min(small, key=lambda c: (areas[c], first[c]))
        region = comp == cid
        votes = _boundary_votes(labels, region, offsets)
        if votes.sum() == 0:
            break  # the component spans the whole image; nothing to merge into
        labels[region] = int(np.argmax(votes))  # argmax takes the smaller label on ties
    return LabelMap(labels)


def preprocess(mask: LabelMap, cfg: CleanConfig = CleanConfig()) -> LabelMap:
    """Full cleanup: morphological closing, then small-component merging."""
    return relabel_small_components(morphological_close(mask, cfg), cfg)
