"""HTTP service for interactive scene editing.

One in-memory session per process: a scene, its classifier, the current
per-splat segmentation, and an undoable edit history. Reads (renders)
are side-effect free and may run concurrently; mutations are serialized
by a session lock and bump a monotonically increasing version. Edits
are recorded with their resolved splat masks, so replaying the history
from the base scene reproduces the served scene exactly.
"""

from __future__ import annotations

import colorsys
import io
import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Query
from fastapi.responses import FileResponse, Response
from fastapi.staticfiles import StaticFiles
from PIL import Image
from pydantic import BaseModel

from .edits import EditOp, apply_edit
from .errors import SplatsegError
from .masks import LabelMap
from .rasterizer import ALPHA_MIN, accumulate_contributions, pixel_contributions, render
from .reassign import DEFAULT_K, SegmentationMatrix, compute_priors, object_mask, query_point, reassign_labels
from .scene import Camera, Scene, camera_from_record, save_scene
from .training import LinearClassifier, class_probabilities


def label_palette() -> np.ndarray:
    """Deterministic 256-color palette; label 0 renders black."""
    palette = np.zeros((256, 3), dtype=np.uint8)
    golden = 0.6180339887498949
    for i in range(1, 256):
        hue = (i * golden) % 1.0
        sat = 0.65 if i % 2 else 0.85
        val = 0.95 if i % 3 else 0.7
        r, g, b = colorsys.hsv_to_rgb(hue, sat, val)
        palette[i] = (round(r * 255), round(g * 255), round(b * 255))
    return palette


PALETTE = label_palette()

# Confidence heat colormap control points (value, rgb), dark to bright.
_HEAT_STOPS = np.array([0.0, 0.25, 0.5, 0.75, 1.0])
_HEAT_COLORS = np.array(
    [[10, 10, 40], [70, 20, 110], [190, 55, 85], [250, 140, 40], [255, 245, 190]],
    dtype=np.float64,
)


def heat_colormap(values: np.ndarray) -> np.ndarray:
    """Map scalars in [0, 1] to an (..., 3) uint8 heat image."""
    v = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    out = np.empty(v.shape + (3,), dtype=np.uint8)
    for c in range(3):
        out[..., c] = np.interp(v, _HEAT_STOPS, _HEAT_COLORS[:, c]).round().astype(np.uint8)
    return out


@dataclass
class EditRecord:
    """An applied edit plus the splat mask it resolved to at apply time."""

    op: EditOp
    mask: np.ndarray


@dataclass
class _Snapshot:
    scene: Scene
    seg: SegmentationMatrix
    history_len: int


@dataclass
class Session:
    """Mutable single-scene editing state behind the HTTP API."""

    scene: Scene
    classifier: LinearClassifier
    gamma_p: float = 0.2
    k_neighbors: int = DEFAULT_K
    cameras: list[Camera] | None = None
    masks: list[LabelMap] | None = None
    base_scene: Scene = None  # type: ignore[assignment]
    seg: SegmentationMatrix = None  # type: ignore[assignment]
    history: list[EditRecord] = field(default_factory=list)
    version: int = 0
    _snapshots: list[_Snapshot] = field(default_factory=list)
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def __post_init__(self):
        if self.base_scene is None:
            self.base_scene = self.scene
        if self.seg is None:
            # The stored per-splat labels are the starting segmentation; a
            # freshly trained scene has all-zero labels until reassignment.
            self.seg = SegmentationMatrix.from_labels(self.scene.labels)

    @property
    def can_reassign(self) -> bool:
        return bool(self.cameras) and self.masks is not None

    def replayed_scene(self) -> Scene:
        """Apply the recorded history to the base scene."""
        scene = self.base_scene
        for record in self.history:
            scene = apply_edit(scene, record.mask, record.op)
        return scene

    def _push_snapshot(self):
        self._snapshots.append(_Snapshot(self.scene, self.seg, len(self.history)))

    def apply(self, op: EditOp) -> int:
        with self._lock:
            mask = object_mask(self.seg, op.target)
            if not mask.any():
                raise LookupError(f"object {op.target} has no splats")
            self._push_snapshot()
            self.scene = apply_edit(self.scene, mask, op)
            if op.kind in ("remove", "extract"):
                keep = ~mask if op.kind == "remove" else mask
                self.seg = SegmentationMatrix(self.seg.labels[keep])
            self.history.append(EditRecord(op, mask))
            self.version += 1
            return self.version

    def undo(self) -> int:
        with self._lock:
            if not self._snapshots:
                raise LookupError("nothing to undo")
            snap = self._snapshots.pop()
            self.scene = snap.scene
            self.seg = snap.seg
            del self.history[snap.history_len :]
            self.version += 1
            return self.version

    def reassign(self, gamma_p: float) -> int:
        if not self.can_reassign:
            raise PermissionError("serve was started without cameras and masks")
        with self._lock:
            contribs = accumulate_contributions(self.scene, self.cameras, self.masks)
            priors = compute_priors(self.scene, self.classifier)
            self._push_snapshot()
            self.seg = reassign_labels(contribs, priors, priors.argmax_labels, gamma_p)
            self.gamma_p = gamma_p
            self.version += 1
            return self.version

    def pick(self, cam: Camera, pixel, k: int | None = None) -> dict:
        x, y = float(pixel[0]), float(pixel[1])
        if not (0 <= x < cam.width and 0 <= y < cam.height):
            raise ValueError(f"pixel ({x}, {y}) outside the {cam.width}x{cam.height} image")
        scene, seg = self.scene, self.seg
        indices, weights = pixel_contributions(scene, cam, (x, y))
        if weights.sum() < ALPHA_MIN:
            raise LookupError("no splat coverage at this pixel")
        best = int(indices[int(np.argmax(weights))])
        point = scene.positions[best].astype(float)
        object_id = query_point(scene, seg, point, k or self.k_neighbors)
        return {
            "point": point.tolist(),
            "object_id": object_id,
            "color": PALETTE[object_id].tolist(),
        }

    def export_ply(self) -> bytes:
        """Current scene with the segmentation written into the labels."""
        scene = self.scene.copy()
        scene.labels[:] = self.seg.labels
        return _save_scene_bytes(scene)


def _save_scene_bytes(scene: Scene) -> bytes:
    import tempfile

    with tempfile.NamedTemporaryFile(suffix=".ply") as f:
        save_scene(scene, f.name)
        f.seek(0)
        return f.read()


class PickRequest(BaseModel):
    camera: dict
    pixel: tuple[float, float]
    k: int | None = None


class ReassignRequest(BaseModel):
    gamma_p: float


class EditRequest(BaseModel):
    kind: str
    target: int
    color: tuple[float, float, float] | None = None


def _png_response(array_u8: np.ndarray) -> Response:
    img = Image.fromarray(array_u8)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return Response(content=buf.getvalue(), media_type="image/png")


def create_app(session: Session, ui_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="splatseg", version="0.1.0")
    app.state.session = session

    @app.get("/api/scene/info")
    def scene_info():
        labels, counts = np.unique(session.seg.labels, return_counts=True)
        return {
            "version": session.version,
            "n_gaussians": len(session.scene),
            "sh_degree": session.scene.sh_degree,
            "gamma_p": session.gamma_p,
            "k": session.k_neighbors,
            "can_reassign": session.can_reassign,
            "history_length": len(session.history),
            "objects": [
                {"id": int(l), "count": int(c), "color": PALETTE[int(l)].tolist()}
                for l, c in zip(labels, counts)
            ],
        }

    def _parse_camera(cam_json: str) -> Camera:
        try:
            return camera_from_record(json.loads(cam_json))
        except (json.JSONDecodeError, SplatsegError) as e:
            raise HTTPException(status_code=400, detail=f"bad camera record: {e}") from e

    @app.get("/api/render")
    def render_frame(cam: str = Query(...), mode: str = Query("rgb")):
        camera = _parse_camera(cam)
        scene = session.scene
        if mode == "rgb":
            fb = render(scene, camera, color=True)
            frame = (np.clip(fb.color, 0.0, 1.0) * 255.0).round().astype(np.uint8)
        elif mode == "label":
            label_scene = scene.copy()
            label_scene.labels[:] = session.seg.labels
            fb = render(label_scene, camera, color=False, label=True)
            frame = PALETTE[fb.label.labels]
        elif mode == "heat":
            fb = render(scene, camera, color=False, feature=True)
            probs = class_probabilities(session.classifier, fb.feature)
            frame = heat_colormap(probs.max(axis=-1))
        else:
            raise HTTPException(status_code=400, detail=f"unknown mode {mode!r}")
        return _png_response(frame)

    @app.post("/api/pick")
    def pick(req: PickRequest):
        try:
            camera = camera_from_record(req.camera)
        except SplatsegError as e:
            raise HTTPException(status_code=400, detail=str(e)) from e
        try:
            result = session.pick(camera, req.pixel, req.k)
        except ValueError as e:
            raise HTTPException(status_code=400, detail=str(e)) from e
        except LookupError as e:
            raise HTTPException(status_code=404, detail=str(e)) from e
        result["version"] = session.version
        return result

    @app.post("/api/reassign")
    def reassign(req: ReassignRequest):
        try:
            version = session.reassign(req.gamma_p)
        except PermissionError as e:
            raise HTTPException(status_code=409, detail=str(e)) from e
        return {"version": version}

    @app.post("/api/edit")
    def edit(req: EditRequest):
        try:
            op = EditOp(kind=req.kind, target=req.target, color=req.color)
        except ValueError as e:
            raise HTTPException(status_code=400, detail=str(e)) from e
        try:
            version = session.apply(op)
        except LookupError as e:
            raise HTTPException(status_code=404, detail=str(e)) from e
        return {"version": version}

    @app.post("/api/undo")
    def undo():
        try:
            version = session.undo()
        except LookupError as e:
            raise HTTPException(status_code=409, detail=str(e)) from e
        return {"version": version}

    @app.get("/api/export")
    def export():
        return Response(
            content=session.export_ply(),
            media_type="application/octet-stream",
            headers={"Content-Disposition": 'attachment; filename="scene.ply"'},
        )

    if ui_dir is not None and Path(ui_dir).is_dir():
        ui_path = Path(ui_dir)

        @app.get("/")
        def index():
            return FileResponse(ui_path / "index.html")

        app.mount("/", StaticFiles(directory=str(ui_path)), name="ui")

    return app
