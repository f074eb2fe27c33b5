/** Typed client for the splatseg editing service. All scene access goes
 * through these endpoints; the UI holds no scene state of its own. */

export interface CameraRecord {
  id: string;
  width: number;
  height: number;
  fx: number;
  fy: number;
  cx: number;
  cy: number;
  world_to_camera: number[];
}

export type RenderMode = "rgb" | "label" | "heat";

export interface ObjectInfo {
  id: number;
  count: number;
  color: [number, number, number];
}

export interface SceneInfo {
  version: number;
  n_gaussians: number;
  sh_degree: number;
  gamma_p: number;
  k: number;
  can_reassign: boolean;
  history_length: number;
  objects: ObjectInfo[];
}

export interface PickResult {
  point: [number, number, number];
  object_id: number;
  color: [number, number, number];
  version: number;
}

export type EditKind = "remove" | "extract" | "recolor";

async function fail(resp: Response): Promise<never> {
  let detail = `${resp.status} ${resp.statusText}`;
  try {
    const body = await resp.json();
    if (body && typeof body.detail === "string") detail = body.detail;
  } catch {
    // non-JSON error body; keep the status line
  }
  throw new Error(detail);
}

export class ApiClient {
  constructor(private readonly baseUrl: string = "") {}

  private url(path: string): string {
    return this.baseUrl + path;
  }

  async sceneInfo(): Promise<SceneInfo> {
    const resp = await fetch(this.url("/api/scene/info"));
    if (!resp.ok) return fail(resp);
    return resp.json();
  }

  /** PNG bytes for one camera and channel. */
  async renderFrame(camera: CameraRecord, mode: RenderMode): Promise<ArrayBuffer> {
    const params = new URLSearchParams({ cam: JSON.stringify(camera), mode });
    const resp = await fetch(this.url(`/api/render?${params}`));
    if (!resp.ok) return fail(resp);
    return resp.arrayBuffer();
  }

  /** Resolves to null when the pixel hits no splat. */
  async pick(
    camera: CameraRecord,
    pixel: [number, number],
    k?: number,
  ): Promise<PickResult | null> {
    const resp = await fetch(this.url("/api/pick"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ camera, pixel, k }),
    });
    if (resp.status === 404) return null;
    if (!resp.ok) return fail(resp);
    return resp.json();
  }

  async reassign(gammaP: number): Promise<number> {
    const resp = await fetch(this.url("/api/reassign"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ gamma_p: gammaP }),
    });
    if (!resp.ok) return fail(resp);
    return (await resp.json()).version;
  }

  async edit(
    kind: EditKind,
    target: number,
    color?: [number, number, number],
  ): Promise<number> {
    const resp = await fetch(this.url("/api/edit"), {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ kind, target, color }),
    });
    if (!resp.ok) return fail(resp);
    return (await resp.json()).version;
  }

  async undo(): Promise<number> {
    const resp = await fetch(this.url("/api/undo"), { method: "POST" });
    if (!resp.ok) return fail(resp);
    return (await resp.json()).version;
  }

  async exportScene(): Promise<ArrayBuffer> {
    const resp = await fetch(this.url("/api/export"));
    if (!resp.ok) return fail(resp);
    return resp.arrayBuffer();
  }
}
