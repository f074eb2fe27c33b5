/** Orbit camera: yaw/pitch/distance around a target point, converted to
 * the service's pinhole camera record (+z forward, +y down in image). */

import type { CameraRecord } from "./api.js";

export interface ViewState {
  yaw: number; // radians around the world +y axis
  pitch: number; // radians above the horizon
  distance: number;
  target: [number, number, number];
  width: number;
  height: number;
  fovDeg: number;
}

export const DEFAULT_VIEW: ViewState = {
  yaw: 0.3,
  pitch: 0.2,
  distance: 8.5,
  target: [0, 0, 0],
  width: 256,
  height: 256,
  fovDeg: 50,
};

const MIN_DISTANCE = 0.5;
const MAX_PITCH = 1.45; // keep clear of the up-vector singularity

type Vec3 = [number, number, number];

function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

function normalize(v: Vec3): Vec3 {
  const n = Math.hypot(v[0], v[1], v[2]);
  return [v[0] / n, v[1] / n, v[2] / n];
}

export function clampView(view: ViewState): ViewState {
  return {
    ...view,
    pitch: Math.min(MAX_PITCH, Math.max(-MAX_PITCH, view.pitch)),
    distance: Math.max(MIN_DISTANCE, view.distance),
  };
}

export function orbitEye(view: ViewState): Vec3 {
  const { yaw, pitch, distance, target } = view;
  const horizontal = Math.cos(pitch) * distance;
  return [
    target[0] + horizontal * Math.cos(yaw),
    target[1] + Math.sin(pitch) * distance,
    target[2] + horizontal * Math.sin(yaw),
  ];
}

/** World-to-camera look-at rows: x right, y down in image, z forward. */
export function cameraFromView(view: ViewState): CameraRecord {
  const eye = orbitEye(view);
  const forward = normalize(sub(view.target, eye));
  let right = cross(forward, [0, 1, 0]);
  if (Math.hypot(...right) < 1e-9) {
    right = cross(forward, [1, 0, 0]);
  }
  right = normalize(right);
  const down = cross(forward, right);

  const rot = [right, down, forward];
  const t = rot.map((row) => -(row[0] * eye[0] + row[1] * eye[1] + row[2] * eye[2]));
  const m = [
    ...rot[0], t[0],
    ...rot[1], t[1],
    ...rot[2], t[2],
    0, 0, 0, 1,
  ];

  const f = (0.5 * view.width) / Math.tan(((view.fovDeg / 2) * Math.PI) / 180);
  return {
    id: "orbit",
    width: view.width,
    height: view.height,
    fx: f,
    fy: f,
    cx: view.width / 2,
    cy: view.height / 2,
    world_to_camera: m,
  };
}

/** Pinhole projection of a world point; null when behind the camera. */
export function projectPoint(
  camera: CameraRecord,
  point: Vec3,
): [number, number] | null {
  const m = camera.world_to_camera;
  const x = m[0] * point[0] + m[1] * point[1] + m[2] * point[2] + m[3];
  const y = m[4] * point[0] + m[5] * point[1] + m[6] * point[2] + m[7];
  const z = m[8] * point[0] + m[9] * point[1] + m[10] * point[2] + m[11];
  if (z <= 1e-4) return null;
  return [camera.fx * (x / z) + camera.cx, camera.fy * (y / z) + camera.cy];
}
