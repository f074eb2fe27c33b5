"""Scene domain model: Gaussian splats, cameras, and file I/O.

A scene is a flat, ordered collection of anisotropic 3D Gaussians. Each
splat carries geometry (position, log-scale, unit quaternion), a raw
opacity (mapped through a logistic to (0, 1) at render time), RGB
spherical-harmonics color coefficients, a 16-dimensional object feature
vector, and an integer object label in [0, 255]. Splat order is stable
across save/load because indices are used as identities downstream.

Storage is struct-of-arrays in float32 (labels uint8), matching the
on-disk PLY precision so round-trips are bit-exact. Rendering code
upcasts to float64 internally.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import BehindCamera, IoError, ParseError, SchemaError

# Real spherical-harmonics basis constants, degrees 0..3.
SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)

FEATURE_DIM = 16
NUM_LABELS = 256
NEAR_PLANE = 1e-4
_QUAT_TOL = 1e-6


@dataclass
class Gaussian:
    """One splat. ``rotation`` is a unit quaternion in (w, x, y, z) order;
    ``scale`` holds per-axis log scale factors; ``opacity`` is pre-logistic."""

    position: np.ndarray
    scale: np.ndarray
    rotation: np.ndarray
    opacity: float
    sh_coeffs: np.ndarray  # (3, n_coeffs) RGB rows
    obj_feature: np.ndarray  # (16,)
    label: int


def logistic(x):
    """Map raw opacity to (0, 1)."""
    return 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=np.float64)))


def logit(p):
    """Inverse of :func:`logistic`, for building scenes from target opacities."""
    p = np.asarray(p, dtype=np.float64)
    return np.log(p / (1.0 - p))


def _normalize_quats(q: np.ndarray) -> np.ndarray:
    # Skip rows already unit within tolerance so renormalization is
    # idempotent and save/load/save stays byte-identical.
    norms = np.linalg.norm(q.astype(np.float64), axis=1)
    bad = np.abs(norms - 1.0) > _QUAT_TOL
    if bad.any():
        if np.any(norms[bad] == 0.0):
            raise SchemaError("rot_0", "zero-norm quaternion")
        q = q.copy()
        q[bad] = (q[bad].astype(np.float64) / norms[bad, None]).astype(q.dtype)
    return q


def quat_to_rotmat(q: np.ndarray) -> np.ndarray:
    """Rotation matrices for unit quaternions, (..., 4) wxyz -> (..., 3, 3)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


@dataclass
class Scene:
    """Ordered splat collection, struct-of-arrays.

    Arrays are float32 (labels uint8); shapes are validated and
    quaternions renormalized on construction.
    """

    positions: np.ndarray  # (N, 3)
    scales: np.ndarray  # (N, 3) log scale
    rotations: np.ndarray  # (N, 4) wxyz
    opacities: np.ndarray  # (N,) pre-logistic
    sh_coeffs: np.ndarray  # (N, 3, C)
    obj_features: np.ndarray  # (N, 16)
    labels: np.ndarray  # (N,) uint8
    sh_degree: int = 3

    def __post_init__(self):
        n = len(self.positions)
        self.positions = np.ascontiguousarray(self.positions, dtype=np.float32).reshape(n, 3)
        self.scales = np.ascontiguousarray(self.scales, dtype=np.float32).reshape(n, 3)
        self.rotations = _normalize_quats(
            np.ascontiguousarray(self.rotations, dtype=np.float32).reshape(n, 4)
        )
        self.opacities = np.ascontiguousarray(self.opacities, dtype=np.float32).reshape(n)
        if not 0 <= self.sh_degree <= 3:
            raise ValueError(f"sh_degree must be in 0..3, got {self.sh_degree}")
        n_coeffs = (self.sh_degree + 1) ** 2
        self.sh_coeffs = np.ascontiguousarray(self.sh_coeffs, dtype=np.float32).reshape(
            n, 3, n_coeffs
        )
        self.obj_features = np.ascontiguousarray(self.obj_features, dtype=np.float32).reshape(
            n, FEATURE_DIM
        )
        self.labels = np.ascontiguousarray(self.labels, dtype=np.uint8).reshape(n)

    def __len__(self) -> int:
        return len(self.positions)

    def gaussian(self, i: int) -> Gaussian:
        return Gaussian(
            position=self.positions[i].copy(),
            scale=self.scales[i].copy(),
            rotation=self.rotations[i].copy(),
            opacity=float(self.opacities[i]),
            sh_coeffs=self.sh_coeffs[i].copy(),
            obj_feature=self.obj_features[i].copy(),
            label=int(self.labels[i]),
        )

    @property
    def gaussians(self):
        return (self.gaussian(i) for i in range(len(self)))

    def copy(self) -> "Scene":
        return Scene(
            self.positions.copy(),
            self.scales.copy(),
            self.rotations.copy(),
            self.opacities.copy(),
            self.sh_coeffs.copy(),
            self.obj_features.copy(),
            self.labels.copy(),
            self.sh_degree,
        )

    def subset(self, keep: np.ndarray) -> "Scene":
        """New scene with the splats selected by a boolean mask, order preserved."""
        keep = np.asarray(keep, dtype=bool)
        if keep.shape != (len(self),):
            raise ValueError(f"mask shape {keep.shape} != ({len(self)},)")
        return Scene(
            self.positions[keep],
            self.scales[keep],
            self.rotations[keep],
            self.opacities[keep],
            self.sh_coeffs[keep],
            self.obj_features[keep],
            self.labels[keep],
            self.sh_degree,
        )

    @classmethod
    def empty(cls, sh_degree: int = 3) -> "Scene":
        c = (sh_degree + 1) ** 2
        z = np.zeros
        return cls(
            z((0, 3)), z((0, 3)), z((0, 4)), z((0,)), z((0, 3, c)), z((0, FEATURE_DIM)),
            z((0,), dtype=np.uint8), sh_degree,
        )

    @classmethod
    def from_gaussians(cls, gaussians, sh_degree: int = 3) -> "Scene":
        gaussians = list(gaussians)
        if not gaussians:
            return cls.empty(sh_degree)
        return cls(
            np.stack([g.position for g in gaussians]),
            np.stack([g.scale for g in gaussians]),
            np.stack([g.rotation for g in gaussians]),
            np.array([g.opacity for g in gaussians]),
            np.stack([g.sh_coeffs for g in gaussians]),
            np.stack([g.obj_feature for g in gaussians]),
            np.array([g.label for g in gaussians], dtype=np.uint8),
            sh_degree,
        )


@dataclass(frozen=True)
class Camera:
    """Pinhole camera: intrinsics in pixels plus a rigid world-to-camera pose.

    The camera looks down +z; a world point p maps to pixel
    (fx*x/z + cx, fy*y/z + cy) after the pose transform, with +x right and
    +y down in the image.
    """

    width: int
    height: int
    fx: float
    fy: float
    cx: float
    cy: float
    world_to_camera: np.ndarray  # (4, 4)
    cam_id: str = ""

    def __post_init__(self):
        object.__setattr__(
            self, "world_to_camera",
            np.ascontiguousarray(self.world_to_camera, dtype=np.float64).reshape(4, 4),
        )
        if self.fx <= 0 or self.fy <= 0:
            raise SchemaError("fx", f"focal lengths must be positive, got ({self.fx}, {self.fy})")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise SchemaError("cx", f"principal point ({self.cx}, {self.cy}) outside image")
        m = self.world_to_camera
        r = m[:3, :3]
        if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-5:
            raise SchemaError("world_to_camera", "rotation block not orthonormal")
        if np.max(np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > 1e-9:
            raise SchemaError("world_to_camera", "bottom row must be (0, 0, 0, 1)")

    @property
    def rotation(self) -> np.ndarray:
        return self.world_to_camera[:3, :3]

    @property
    def translation(self) -> np.ndarray:
        return self.world_to_camera[:3, 3]

    @property
    def center(self) -> np.ndarray:
        """Camera center in world coordinates."""
        return -self.rotation.T @ self.translation

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        """World points (..., 3) into camera space."""
        p = np.asarray(points, dtype=np.float64)
        return p @ self.rotation.T + self.translation


def camera_project(cam: Camera, p) -> tuple[np.ndarray, float]:
    """Project a world point to (pixel, depth).

    Raises BehindCamera when the camera-space depth is at or behind the
    near plane; callers iterating over points must skip those.
    """
    q = cam.to_camera(np.asarray(p, dtype=np.float64).reshape(3))
    z = float(q[2])
    if z <= NEAR_PLANE:
        raise BehindCamera(f"depth {z:.6g} <= near plane {NEAR_PLANE}")
    pixel = np.array([cam.fx * q[0] / z + cam.cx, cam.fy * q[1] / z + cam.cy])
    return pixel, z


def camera_to_record(cam: Camera) -> dict:
    return {
        "id": cam.cam_id,
        "width": cam.width,
        "height": cam.height,
        "fx": cam.fx,
        "fy": cam.fy,
        "cx": cam.cx,
        "cy": cam.cy,
        "world_to_camera": [float(v) for v in cam.world_to_camera.reshape(16)],
    }


def camera_from_record(rec: dict) -> Camera:
    try:
        mat = np.array(rec["world_to_camera"], dtype=np.float64).reshape(4, 4)
        return Camera(
            width=int(rec["width"]),
            height=int(rec["height"]),
            fx=float(rec["fx"]),
            fy=float(rec["fy"]),
            cx=float(rec["cx"]),
            cy=float(rec["cy"]),
            world_to_camera=mat,
            cam_id=str(rec.get("id", "")),
        )
    except KeyError as e:
        raise SchemaError(str(e.args[0]), f"camera record missing field {e.args[0]}") from e
    except ValueError as e:
        raise SchemaError("world_to_camera", str(e)) from e


def load_cameras(path) -> list[Camera]:
    """Read a camera list from a JSON document (a list of camera records,
    or an object with a "cameras" key)."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            doc = json.load(f)
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise ParseError(f"invalid camera JSON in {path}: {e.msg}", offset=e.pos) from e
    records = doc.get("cameras") if isinstance(doc, dict) else doc
    if not isinstance(records, list):
        raise SchemaError("cameras", "camera document must be a list of records")
    return [camera_from_record(r) for r in records]


def save_cameras(cameras, path) -> None:
    try:
        with open(path, "w", encoding="utf-8") as f:
            json.dump([camera_to_record(c) for c in cameras], f, indent=2)
            f.write("\n")
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e


# ---------------------------------------------------------------------------
# Spherical harmonics


def eval_sh_basis(degree: int, dirs: np.ndarray) -> np.ndarray:
    """Real SH basis values for unit directions (..., 3) -> (..., (d+1)^2)."""
    dirs = np.asarray(dirs, dtype=np.float64)
    n_coeffs = (degree + 1) ** 2
    out = np.empty(dirs.shape[:-1] + (n_coeffs,))
    out[..., 0] = SH_C0
    if degree >= 1:
        x, y, z = dirs[..., 0], dirs[..., 1], dirs[..., 2]
        out[..., 1] = -SH_C1 * y
        out[..., 2] = SH_C1 * z
        out[..., 3] = -SH_C1 * x
    if degree >= 2:
        xx, yy, zz = x * x, y * y, z * z
        xy, yz, xz = x * y, y * z, x * z
        out[..., 4] = SH_C2[0] * xy
        out[..., 5] = SH_C2[1] * yz
        out[..., 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        out[..., 7] = SH_C2[3] * xz
        out[..., 8] = SH_C2[4] * (xx - yy)
    if degree >= 3:
        out[..., 9] = SH_C3[0] * y * (3.0 * xx - yy)
        out[..., 10] = SH_C3[1] * xy * z
        out[..., 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        out[..., 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        out[..., 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        out[..., 14] = SH_C3[5] * z * (xx - yy)
        out[..., 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return out


def eval_sh_colors(sh_coeffs: np.ndarray, degree: int, dirs: np.ndarray) -> np.ndarray:
    """Evaluate RGB colors for a batch of splats.

    sh_coeffs is (N, 3, C); dirs is (N, 3) unit view directions (splat
    center minus camera center). Returns (N, 3) clamped to [0, 1]: the
    SH expansion is offset by +0.5 so all-zero coefficients render as
    mid gray.
    """
    basis = eval_sh_basis(degree, dirs)  # (N, C)
    rgb = np.einsum("nck,nk->nc", np.asarray(sh_coeffs, dtype=np.float64), basis) + 0.5
    return np.clip(rgb, 0.0, 1.0)


def eval_sh_color(g: Gaussian, view_dir: np.ndarray) -> np.ndarray:
    """RGB in [0, 1] for one splat viewed along a unit direction."""
    d = np.asarray(view_dir, dtype=np.float64).reshape(3)
    if abs(np.linalg.norm(d) - 1.0) > 1e-6:
        raise ValueError("view_dir must be unit length")
    degree = int(np.sqrt(g.sh_coeffs.shape[1])) - 1
    return eval_sh_colors(g.sh_coeffs[None], degree, d[None])[0]


def rgb_to_sh_dc(rgb) -> np.ndarray:
    """Degree-0 coefficients that render exactly as the given base color."""
    return (np.asarray(rgb, dtype=np.float64) - 0.5) / SH_C0


def covariance_matrix(g: Gaussian) -> np.ndarray:
    """3D covariance R diag(exp(scale))^2 R^T for one splat."""
    r = quat_to_rotmat(g.rotation)
    s = np.exp(np.asarray(g.scale, dtype=np.float64))
    m = r * s[None, :]
    return m @ m.T


def gaussian_density(g: Gaussian, x) -> float:
    """Normalized 3D Gaussian density at a world point.

    This is the probability-density form with the (2*pi)^{3/2} |Sigma|^{1/2}
    divisor, exposed for density queries. Rendering uses the unnormalized
    exponential instead (see rasterizer).
    """
    cov = covariance_matrix(g)
    d = np.asarray(x, dtype=np.float64).reshape(3) - np.asarray(g.position, dtype=np.float64)
    det = np.linalg.det(cov)
    quad = d @ np.linalg.solve(cov, d)
    return float(np.exp(-0.5 * quad) / ((2.0 * np.pi) ** 1.5 * np.sqrt(det)))


# ---------------------------------------------------------------------------
# PLY I/O
#
# Binary little-endian PLY, property names following the common splat
# export convention (x, y, z, f_dc_*, f_rest_*, opacity, scale_*, rot_*)
# extended with f_obj_0..15 and a uchar label. Unknown properties are
# ignored on load; missing feature/label properties default to zero.

_PLY_TYPES = {
    "float": "<f4",
    "float32": "<f4",
    "double": "<f8",
    "float64": "<f8",
    "uchar": "u1",
    "uint8": "u1",
    "char": "i1",
    "int8": "i1",
    "short": "<i2",
    "int16": "<i2",
    "ushort": "<u2",
    "uint16": "<u2",
    "int": "<i4",
    "int32": "<i4",
    "uint": "<u4",
    "uint32": "<u4",
}

_REQUIRED_PROPS = (
    "x", "y", "z", "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)

_REST_COUNT_TO_DEGREE = {0: 0, 9: 1, 24: 2, 45: 3}


def _sorted_numbered(names: list[str], prefix: str) -> list[str]:
    pat = re.compile(re.escape(prefix) + r"(\d+)$")
    found = [(int(m.group(1)), n) for n in names if (m := pat.match(n))]
    found.sort()
    return [n for _, n in found]


def _parse_ply_header(data: bytes, path) -> tuple[list[tuple[str, str]], int, int]:
    """Parse the vertex element header. Returns (properties, count, body offset)."""
    end_marker = b"end_header\n"
    end = data.find(end_marker)
    if not data.startswith(b"ply\n"):
        raise ParseError(f"{path}: not a PLY file", offset=0)
    if end < 0:
        raise ParseError(f"{path}: unterminated PLY header", offset=len(data))
    header = data[:end].decode("ascii", errors="replace")
    body_offset = end + len(end_marker)

    props: list[tuple[str, str]] = []
    count = None
    in_vertex = False
    offset = 0
    for line in header.split("\n"):
        stripped = line.strip()
        tokens = stripped.split()
        if not tokens or tokens[0] == "comment":
            offset += len(line) + 1
            continue
        if tokens[0] == "format":
            if tokens[1:2] != ["binary_little_endian"]:
                raise ParseError(
                    f"{path}: unsupported format {' '.join(tokens[1:])!r}; "
                    "only binary_little_endian is accepted",
                    offset=offset,
                )
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise ParseError(f"{path}: malformed element line", offset=offset)
            in_vertex = tokens[1] == "vertex"
            if in_vertex:
                try:
                    count = int(tokens[2])
                except ValueError:
                    raise ParseError(f"{path}: bad vertex count {tokens[2]!r}", offset=offset)
            elif count is not None:
                break  # vertex element done; later elements are ignored
        elif tokens[0] == "property" and in_vertex:
            if len(tokens) != 3 or tokens[1] == "list":
                raise ParseError(f"{path}: unsupported property line {stripped!r}", offset=offset)
            if tokens[1] not in _PLY_TYPES:
                raise ParseError(f"{path}: unknown property type {tokens[1]!r}", offset=offset)
            props.append((tokens[2], _PLY_TYPES[tokens[1]]))
        offset += len(line) + 1
    if count is None:
        raise ParseError(f"{path}: no vertex element in header", offset=body_offset)
    if not props and count > 0:
        raise ParseError(f"{path}: vertex element has no properties", offset=body_offset)
    return props, count, body_offset


def load_scene(path) -> Scene:
    """Load a scene from a binary little-endian PLY file.

    Quaternions are renormalized; absent f_obj_*/label properties
    initialize features to zero and labels to 0.
    """
    try:
        with open(path, "rb") as f:
            data = f.read()
    except OSError as e:
        raise IoError(f"cannot read {path}: {e}") from e

    props, count, body_offset = _parse_ply_header(data, path)
    names = [n for n, _ in props]
    for req in _REQUIRED_PROPS:
        if req not in names:
            raise SchemaError(req)

    dtype = np.dtype([(n, t) for n, t in props])
    body = data[body_offset:]
    expected = dtype.itemsize * count
    if len(body) < expected:
        raise ParseError(
            f"{path}: body truncated, expected {expected} bytes, got {len(body)}",
            offset=body_offset + len(body),
        )
    rows = np.frombuffer(body, dtype=dtype, count=count)

    def col(name, default=None):
        if name in names:
            return np.ascontiguousarray(rows[name])
        return default

    n = count
    positions = np.stack([rows["x"], rows["y"], rows["z"]], axis=1) if n else np.zeros((0, 3))
    scales = np.stack([rows[f"scale_{i}"] for i in range(3)], axis=1) if n else np.zeros((0, 3))
    rots = np.stack([rows[f"rot_{i}"] for i in range(4)], axis=1) if n else np.zeros((0, 4))
    opacities = col("opacity") if n else np.zeros((0,))

    rest_names = _sorted_numbered(names, "f_rest_")
    if len(rest_names) not in _REST_COUNT_TO_DEGREE:
        raise SchemaError("f_rest_*", f"unsupported f_rest count {len(rest_names)}")
    degree = _REST_COUNT_TO_DEGREE[len(rest_names)]
    n_coeffs = (degree + 1) ** 2
    sh = np.zeros((n, 3, n_coeffs), dtype=np.float32)
    for c in range(3):
        dc = col(f"f_dc_{c}")
        if dc is not None:
            sh[:, c, 0] = dc
    per_channel = n_coeffs - 1
    for idx, name in enumerate(rest_names):
        sh[:, idx // per_channel, 1 + idx % per_channel] = rows[name]

    obj_names = _sorted_numbered(names, "f_obj_")
    if obj_names and len(obj_names) != FEATURE_DIM:
        raise SchemaError("f_obj_*", f"expected {FEATURE_DIM} f_obj properties, got {len(obj_names)}")
    features = np.zeros((n, FEATURE_DIM), dtype=np.float32)
    for idx, name in enumerate(obj_names):
        features[:, idx] = rows[name]

    label_col = col("label")
    labels = (
        np.clip(label_col, 0, 255).astype(np.uint8)
        if label_col is not None
        else np.zeros(n, dtype=np.uint8)
    )

    return Scene(positions, scales, rots, opacities, sh, features, labels, degree)


def _scene_property_list(scene: Scene) -> list[tuple[str, str]]:
    n_rest = 3 * ((scene.sh_degree + 1) ** 2 - 1)
    names = ["x", "y", "z", "f_dc_0", "f_dc_1", "f_dc_2"]
    names += [f"f_rest_{i}" for i in range(n_rest)]
    names += ["opacity", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3"]
    names += [f"f_obj_{i}" for i in range(FEATURE_DIM)]
    props = [(n, "<f4") for n in names]
    props.append(("label", "u1"))
    return props


def save_scene(scene: Scene, path) -> None:
    """Write the canonical binary little-endian PLY for a scene.

    The serialization is canonical: saving a reloaded file reproduces it
    byte for byte.
    """
    props = _scene_property_list(scene)
    header_lines = ["ply", "format binary_little_endian 1.0", f"element vertex {len(scene)}"]
    type_names = {"<f4": "float", "u1": "uchar"}
    header_lines += [f"property {type_names[t]} {n}" for n, t in props]
    header_lines.append("end_header")
    header = ("\n".join(header_lines) + "\n").encode("ascii")

    rows = np.empty(len(scene), dtype=np.dtype(props))
    rows["x"], rows["y"], rows["z"] = scene.positions.T
    for c in range(3):
        rows[f"f_dc_{c}"] = scene.sh_coeffs[:, c, 0]
    per_channel = (scene.sh_degree + 1) ** 2 - 1
    for c in range(3):
        for k in range(per_channel):
            rows[f"f_rest_{c * per_channel + k}"] = scene.sh_coeffs[:, c, 1 + k]
    rows["opacity"] = scene.opacities
    for i in range(3):
        rows[f"scale_{i}"] = scene.scales[:, i]
    for i in range(4):
        rows[f"rot_{i}"] = scene.rotations[:, i]
    for i in range(FEATURE_DIM):
        rows[f"f_obj_{i}"] = scene.obj_features[:, i]
    rows["label"] = scene.labels

    try:
        with open(path, "wb") as f:
            f.write(header)
            f.write(rows.tobytes())
    except OSError as e:
        raise IoError(f"cannot write {path}: {e}") from e
