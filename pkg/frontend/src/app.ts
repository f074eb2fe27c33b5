/** Editor application: wires the DOM to the editing service.
 *
 * The browser owns only view state (orbit camera, mode, selection,
 * slider values); every scene query and mutation goes through the HTTP
 * API, and a reload reproduces the server's current scene exactly.
 */

import { ApiClient, EditKind, PickResult, RenderMode, SceneInfo } from "./api.js";
import { DEFAULT_VIEW, ViewState, cameraFromView, clampView } from "./orbit.js";

interface Selection {
  objectId: number;
  color: [number, number, number];
}

function byId<T extends HTMLElement>(root: Document, id: string): T {
  const el = root.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
}

function hexToRgb(hex: string): [number, number, number] {
  const v = parseInt(hex.replace("#", ""), 16);
  return [((v >> 16) & 255) / 255, ((v >> 8) & 255) / 255, (v & 255) / 255];
}

export class EditorApp {
  readonly api: ApiClient;
  view: ViewState = { ...DEFAULT_VIEW };
  mode: RenderMode = "rgb";
  selection: Selection | null = null;
  lastFrame: ArrayBuffer | null = null;
  version = -1;

  private frameSeq = 0;
  private frameUrl: string | null = null;
  private dragging = false;
  private dragMoved = false;
  private lastPointer: [number, number] = [0, 0];

  private readonly frameEl: HTMLImageElement;
  private readonly overlayEl: HTMLCanvasElement;
  private readonly viewportEl: HTMLElement;
  private readonly modeEl: HTMLSelectElement;
  private readonly gammaEl: HTMLInputElement;
  private readonly gammaValueEl: HTMLElement;
  private readonly kEl: HTMLInputElement;
  private readonly kValueEl: HTMLElement;
  private readonly colorEl: HTMLInputElement;
  private readonly selectionEl: HTMLElement;
  private readonly objectsEl: HTMLElement;
  private readonly bannerEl: HTMLElement;
  private readonly toastEl: HTMLElement;
  private toastTimer: ReturnType<typeof setTimeout> | null = null;

  constructor(private readonly doc: Document, baseUrl = "") {
    this.api = new ApiClient(baseUrl);
    this.frameEl = byId(doc, "frame");
    this.overlayEl = byId(doc, "overlay");
    this.viewportEl = byId(doc, "viewport");
    this.modeEl = byId(doc, "mode");
    this.gammaEl = byId(doc, "gamma");
    this.gammaValueEl = byId(doc, "gamma-value");
    this.kEl = byId(doc, "k");
    this.kValueEl = byId(doc, "k-value");
    this.colorEl = byId(doc, "recolor-color");
    this.selectionEl = byId(doc, "selection");
    this.objectsEl = byId(doc, "objects");
    this.bannerEl = byId(doc, "banner");
    this.toastEl = byId(doc, "toast");
    this.bindEvents();
  }

  private bindEvents(): void {
    this.modeEl.addEventListener("change", () => {
      void this.setMode(this.modeEl.value as RenderMode);
    });
    this.gammaEl.addEventListener("input", () => {
      this.gammaValueEl.textContent = this.gammaEl.value;
    });
    this.gammaEl.addEventListener("change", () => {
      void this.setGammaP(parseFloat(this.gammaEl.value));
    });
    this.kEl.addEventListener("input", () => {
      this.kValueEl.textContent = this.kEl.value;
    });
    byId(this.doc, "btn-remove").addEventListener("click", () => {
      void this.applyEdit("remove");
    });
    byId(this.doc, "btn-extract").addEventListener("click", () => {
      void this.applyEdit("extract");
    });
    byId(this.doc, "btn-recolor").addEventListener("click", () => {
      void this.applyEdit("recolor", hexToRgb(this.colorEl.value));
    });
    byId(this.doc, "btn-undo").addEventListener("click", () => {
      void this.undo();
    });

    // Orbit: drag rotates, wheel zooms, a motionless click picks.
    this.viewportEl.addEventListener("pointerdown", (ev) => {
      this.dragging = true;
      this.dragMoved = false;
      this.lastPointer = [ev.clientX, ev.clientY];
    });
    this.viewportEl.addEventListener("pointermove", (ev) => {
      if (!this.dragging) return;
      const dx = ev.clientX - this.lastPointer[0];
      const dy = ev.clientY - this.lastPointer[1];
      if (Math.abs(dx) + Math.abs(dy) < 2 && !this.dragMoved) return;
      this.dragMoved = true;
      this.lastPointer = [ev.clientX, ev.clientY];
      this.view = clampView({
        ...this.view,
        yaw: this.view.yaw + dx * 0.01,
        pitch: this.view.pitch + dy * 0.01,
      });
      void this.refresh();
    });
    this.viewportEl.addEventListener("pointerup", (ev) => {
      const wasDrag = this.dragMoved;
      this.dragging = false;
      this.dragMoved = false;
      if (wasDrag) return;
      const pixel = this.eventToPixel(ev);
      if (pixel) void this.pickAt(pixel[0], pixel[1]);
    });
    this.viewportEl.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      this.view = clampView({
        ...this.view,
        distance: this.view.distance * (ev.deltaY > 0 ? 1.1 : 0.9),
      });
      void this.refresh();
    });
  }

  /** Map a pointer event to image pixel coordinates, or null when the
   * viewport has no layout (headless test environments pick via pickAt). */
  private eventToPixel(ev: PointerEvent): [number, number] | null {
    const rect = this.frameEl.getBoundingClientRect();
    if (rect.width <= 0 || rect.height <= 0) return null;
    const x = ((ev.clientX - rect.left) / rect.width) * this.view.width;
    const y = ((ev.clientY - rect.top) / rect.height) * this.view.height;
    return [Math.floor(x), Math.floor(y)];
  }

  async init(): Promise<void> {
    await this.reloadInfo();
    await this.refresh();
  }

  async reloadInfo(): Promise<SceneInfo> {
    const info = await this.api.sceneInfo();
    this.version = info.version;
    this.gammaEl.value = String(info.gamma_p);
    this.gammaValueEl.textContent = this.gammaEl.value;
    this.kEl.value = String(info.k);
    this.kValueEl.textContent = this.kEl.value;
    this.objectsEl.innerHTML = "";
    for (const obj of info.objects) {
      const li = this.doc.createElement("li");
      const [r, g, b] = obj.color;
      li.innerHTML =
        `<span class="swatch" style="background: rgb(${r},${g},${b})"></span>` +
        ` object ${obj.id} (${obj.count} splats)`;
      this.objectsEl.appendChild(li);
    }
    return info;
  }

  /** Fetch and display the current view; stale responses are dropped. */
  async refresh(): Promise<void> {
    const seq = ++this.frameSeq;
    const camera = cameraFromView(this.view);
    try {
      const bytes = await this.api.renderFrame(camera, this.mode);
      if (seq !== this.frameSeq) return; // superseded by a newer request
      this.lastFrame = bytes;
      this.showFrame(bytes);
      this.clearBanner();
    } catch (err) {
      if (seq !== this.frameSeq) return;
      this.showBanner(`render failed: ${(err as Error).message}`);
    }
  }

  private showFrame(bytes: ArrayBuffer): void {
    if (typeof URL === "undefined" || typeof URL.createObjectURL !== "function") {
      return; // no blob URLs outside the browser; tests read lastFrame
    }
    const url = URL.createObjectURL(new Blob([bytes], { type: "image/png" }));
    if (this.frameUrl) URL.revokeObjectURL(this.frameUrl);
    this.frameUrl = url;
    this.frameEl.src = url;
  }

  async setMode(mode: RenderMode): Promise<void> {
    this.mode = mode;
    this.modeEl.value = mode;
    await this.refresh();
  }

  /** Point-prompt selection at image pixel coordinates. */
  async pickAt(x: number, y: number): Promise<PickResult | null> {
    const camera = cameraFromView(this.view);
    try {
      const hit = await this.api.pick(camera, [x, y], parseInt(this.kEl.value, 10));
      if (!hit) {
        this.toast("no object at this pixel");
        return null;
      }
      this.selection = { objectId: hit.object_id, color: hit.color };
      this.selectionEl.textContent = `object ${hit.object_id}`;
      await this.drawOverlay();
      this.clearBanner();
      return hit;
    } catch (err) {
      this.showBanner(`pick failed: ${(err as Error).message}`);
      return null;
    }
  }

  private context2d(): CanvasRenderingContext2D | null {
    try {
      return this.overlayEl.getContext("2d");
    } catch {
      return null; // headless environments have no canvas backend
    }
  }

  /** Tint the selected object's pixels at half opacity over the frame. */
  private async drawOverlay(): Promise<void> {
    const ctx = this.context2d();
    if (!ctx || !this.selection) {
      return; // canvas unavailable (headless) or nothing selected
    }
    const camera = cameraFromView(this.view);
    const bytes = await this.api.renderFrame(camera, "label");
    const img = this.doc.createElement("img");
    const url = URL.createObjectURL(new Blob([bytes], { type: "image/png" }));
    await new Promise<void>((resolve, reject) => {
      img.onload = () => resolve();
      img.onerror = () => reject(new Error("label frame decode failed"));
      img.src = url;
    });
    this.overlayEl.width = this.view.width;
    this.overlayEl.height = this.view.height;
    ctx.clearRect(0, 0, this.view.width, this.view.height);
    ctx.drawImage(img, 0, 0);
    URL.revokeObjectURL(url);
    const data = ctx.getImageData(0, 0, this.view.width, this.view.height);
    const [sr, sg, sb] = this.selection.color;
    const px = data.data;
    for (let i = 0; i < px.length; i += 4) {
      const match = px[i] === sr && px[i + 1] === sg && px[i + 2] === sb;
      px[i] = 255;
      px[i + 1] = 255;
      px[i + 2] = 255;
      px[i + 3] = match ? 128 : 0;
    }
    ctx.putImageData(data, 0, 0);
  }

  async applyEdit(kind: EditKind, color?: [number, number, number]): Promise<void> {
    if (!this.selection) {
      this.toast("select an object first");
      return;
    }
    try {
      this.version = await this.api.edit(kind, this.selection.objectId, color);
      if (kind !== "recolor") this.selection = null;
      this.selectionEl.textContent = this.selection
        ? `object ${this.selection.objectId}`
        : "none";
      this.clearOverlay();
      await this.reloadInfo();
      await this.refresh();
    } catch (err) {
      this.showBanner(`edit failed: ${(err as Error).message}`);
    }
  }

  async undo(): Promise<void> {
    try {
      this.version = await this.api.undo();
      this.selection = null;
      this.selectionEl.textContent = "none";
      this.clearOverlay();
      await this.reloadInfo();
      await this.refresh();
    } catch (err) {
      this.showBanner(`undo failed: ${(err as Error).message}`);
    }
  }

  /** Re-vote splat labels with a new prior weight, then refresh. */
  async setGammaP(gammaP: number): Promise<void> {
    try {
      this.version = await this.api.reassign(gammaP);
      this.selection = null;
      this.selectionEl.textContent = "none";
      this.clearOverlay();
      await this.reloadInfo();
      await this.refresh();
      this.clearBanner();
    } catch (err) {
      this.showBanner(`reassign failed: ${(err as Error).message}`);
    }
  }

  private clearOverlay(): void {
    const ctx = this.context2d();
    if (ctx) ctx.clearRect(0, 0, this.overlayEl.width, this.overlayEl.height);
  }

  private showBanner(message: string): void {
    this.bannerEl.textContent = message;
    this.bannerEl.classList.add("visible");
  }

  private clearBanner(): void {
    this.bannerEl.textContent = "";
    this.bannerEl.classList.remove("visible");
  }

  private toast(message: string): void {
    this.toastEl.textContent = message;
    this.toastEl.classList.add("visible");
    if (this.toastTimer) clearTimeout(this.toastTimer);
    this.toastTimer = setTimeout(() => {
      this.toastEl.classList.remove("visible");
    }, 1800);
  }
}
