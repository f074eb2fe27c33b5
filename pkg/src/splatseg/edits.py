"""Object-level scene edits driven by a per-splat binary mask.

All edits are pure: they return new scenes and never touch the input.
Removal and extraction partition the scene; recoloring rewrites only
the color coefficients of the masked splats.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .scene import Scene, rgb_to_sh_dc


@dataclass(frozen=True)
class EditOp:
    """A scene edit: remove, extract, or recolor one object."""

    kind: str
    target: int
    color: tuple[float, float, float] | None = None

    def __post_init__(self):
        if self.kind not in ("remove", "extract", "recolor"):
            raise ValueError(f"unknown edit kind {self.kind!r}")
        if not 0 <= self.target <= 255:
            raise ValueError(f"target must lie in [0, 255], got {self.target}")
        if self.kind == "recolor":
            if self.color is None:
                raise ValueError("recolor requires a color")
            object.__setattr__(self, "color", tuple(float(c) for c in self.color))
            if len(self.color) != 3 or any(not 0.0 <= c <= 1.0 for c in self.color):
                raise ValueError(f"color must be three values in [0, 1], got {self.color}")
        elif self.color is not None:
            raise ValueError(f"{self.kind} does not take a color")


def _check_mask(scene: Scene, mask) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool).reshape(-1)
    if mask.shape != (len(scene),):
        raise ValueError(f"mask length {len(mask)} != scene size {len(scene)}")
    return mask


def remove_object(scene: Scene, mask) -> Scene:
    """Drop the masked splats; everything else keeps its order. Voids are
    left unfilled."""
    return scene.subset(~_check_mask(scene, mask))


def extract_object(scene: Scene, mask) -> Scene:
    """Keep only the masked splats, order preserved."""
    return scene.subset(_check_mask(scene, mask))


def recolor_object(scene: Scene, mask, color) -> Scene:
    """Flat-recolor the masked splats.

    The base coefficients are set so the splat renders exactly the given
    color and all direction-dependent coefficients are zeroed; geometry,
    opacity, features, and labels are untouched.
    """
    mask = _check_mask(scene, mask)
    color = np.asarray(color, dtype=np.float64).reshape(3)
    if color.min() < 0.0 or color.max() > 1.0:
        raise ValueError(f"color components must lie in [0, 1], got {color}")
    out = scene.copy()
    out.sh_coeffs[mask, :, 0] = rgb_to_sh_dc(color).astype(np.float32)
    if out.sh_coeffs.shape[2] > 1:
        out.sh_coeffs[mask, :, 1:] = 0.0
    return out


def apply_edit(scene: Scene, mask, op: EditOp) -> Scene:
    """Dispatch one edit op with its pre-resolved splat mask."""
    if op.kind == "remove":
        return remove_object(scene, mask)
    if op.kind == "extract":
        return extract_object(scene, mask)
    return recolor_object(scene, mask, op.color)
