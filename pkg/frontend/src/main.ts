// DOM wiring for the promptable refinement loop: pick a sample, drag a box,
// see the refined overlay update. Pure client of the HTTP API; the server
// is chosen with a ?server=... query parameter.

import { ApiError, RefineClient, SampleInfo } from "./api.js";
import { Box, canvasToImage, clampBox, normalizeBox } from "./geometry.js";
import { OverlayState, render, tintMask } from "./overlay.js";
import { RefineSession } from "./session.js";

const REFINED_TINT: [number, number, number] = [80, 220, 120];
const COARSE_TINT: [number, number, number] = [240, 120, 80];

function serverUrl(): string {
  const fromQuery = new URLSearchParams(window.location.search).get("server");
  return (fromQuery || "http://127.0.0.1:8008").replace(/\/$/, "");
}

function chooseZoom(width: number, height: number): number {
  return Math.max(1, Math.floor(512 / Math.max(width, height)));
}

class App {
  client = new RefineClient(serverUrl());
  session = new RefineSession(this.client, {
    onResult: (_id, _box, result) => this.showResult(result),
    onError: (message, status) => this.banner(`refine failed${status ? ` (${status})` : ""}: ${message}`),
  });

  canvas = document.getElementById("view") as HTMLCanvasElement;
  samplesEl = document.getElementById("samples") as HTMLSelectElement;
  bannerEl = document.getElementById("banner") as HTMLDivElement;
  metricsEl = document.getElementById("metrics") as HTMLSpanElement;
  opacityEl = document.getElementById("opacity") as HTMLInputElement;
  showCoarseEl = document.getElementById("show-coarse") as HTMLInputElement;

  state: OverlayState = { image: null, mask: null, opacity: 0.6, box: null, zoom: 1 };
  current: SampleInfo | null = null;
  refinedMask: ImageBitmap | null = null;
  coarseMask: ImageBitmap | null = null;
  dragStart: { x: number; y: number } | null = null;

  async start() {
    this.opacityEl.addEventListener("input", () => {
      this.state.opacity = Number(this.opacityEl.value) / 100;
      this.paint();
    });
    this.showCoarseEl.addEventListener("change", () => {
      this.state.mask = this.showCoarseEl.checked ? this.coarseMask : this.refinedMask;
      this.paint();
    });
    this.canvas.addEventListener("mousedown", (e) => this.onDown(e));
    this.canvas.addEventListener("mousemove", (e) => this.onMove(e));
    this.canvas.addEventListener("mouseup", (e) => this.onUp(e));
    this.samplesEl.addEventListener("change", () => this.selectSample(this.samplesEl.value));
    try {
      const samples = await this.client.samples();
      for (const s of samples) {
        const opt = document.createElement("option");
        opt.value = s.id;
        opt.textContent = `${s.id} (${s.width}x${s.height})`;
        this.samplesEl.appendChild(opt);
      }
      (window as any).__samples = samples;
      if (samples.length) await this.selectSample(samples[0].id);
    } catch (err) {
      this.banner(`server unreachable at ${this.client.baseUrl}: ${err instanceof Error ? err.message : err}`);
    }
  }

  async selectSample(id: string) {
    const samples = (window as any).__samples as SampleInfo[];
    const info = samples.find((s) => s.id === id);
    if (!info) return;
    this.current = info;
    this.state.zoom = chooseZoom(info.width, info.height);
    this.canvas.width = info.width * this.state.zoom;
    this.canvas.height = info.height * this.state.zoom;
    this.state.box = null;
    this.refinedMask = null;
    this.state.mask = null;
    this.metricsEl.textContent = "";
    this.banner("");
    try {
      const imgResp = await fetch(this.client.imageUrl(id));
      if (!imgResp.ok) throw new ApiError(imgResp.status, `image fetch failed`);
      this.state.image = await createImageBitmap(await imgResp.blob());
      const coarseResp = await fetch(this.client.coarseUrl(id));
      this.coarseMask = coarseResp.ok
        ? await tintMask(await coarseResp.blob(), COARSE_TINT)
        : null;
    } catch (err) {
      this.banner(`failed to load sample ${id}: ${err instanceof Error ? err.message : err}`);
    }
    this.paint();
  }

  private eventImagePixel(e: MouseEvent): { x: number; y: number } {
    const rect = this.canvas.getBoundingClientRect();
    const px = ((e.clientX - rect.left) * this.canvas.width) / rect.width;
    const py = ((e.clientY - rect.top) * this.canvas.height) / rect.height;
    return canvasToImage(px, py, this.state.zoom);
  }

  onDown(e: MouseEvent) {
    if (!this.current) return;
    this.dragStart = this.eventImagePixel(e);
  }

  onMove(e: MouseEvent) {
    if (!this.dragStart || !this.current) return;
    const p = this.eventImagePixel(e);
    this.state.box = clampBox(
      normalizeBox(this.dragStart.x, this.dragStart.y, p.x, p.y),
      this.current.width,
      this.current.height,
    );
    this.paint();
  }

  async onUp(e: MouseEvent) {
    if (!this.dragStart || !this.current) return;
    const p = this.eventImagePixel(e);
    const box: Box = clampBox(
      normalizeBox(this.dragStart.x, this.dragStart.y, p.x, p.y),
      this.current.width,
      this.current.height,
    );
    this.dragStart = null;
    this.state.box = box;
    this.paint();
    await this.session.submit(this.current.id, box);
  }

  private async showResult(result: { blob: Blob; metrics: Record<string, number> | null }) {
    this.banner("");
    this.refinedMask = await tintMask(result.blob, REFINED_TINT);
    if (!this.showCoarseEl.checked) {
      this.state.mask = this.refinedMask;
    }
    this.metricsEl.textContent = result.metrics
      ? Object.entries(result.metrics)
          .map(([k, v]) => `${k}=${v.toFixed(4)}`)
          .join(" ")
      : "";
    this.paint();
  }

  banner(message: string) {
    this.bannerEl.textContent = message;
    this.bannerEl.style.display = message ? "block" : "none";
  }

  paint() {
    render(this.canvas, this.state);
  }
}

new App().start();
