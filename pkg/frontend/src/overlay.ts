// Canvas rendering: base image, mask overlay at configurable opacity, and
// the live prompt rectangle. The overlay always matches image dimensions.

import { Box, imageToCanvas } from "./geometry.js";

export interface OverlayState {
  image: ImageBitmap | null;
  mask: ImageBitmap | null;
  opacity: number; // 0..1
  box: Box | null;
  zoom: number;
}

export function render(canvas: HTMLCanvasElement, state: OverlayState): void {
  const ctx = canvas.getContext("2d");
  if (!ctx) return;
  ctx.imageSmoothingEnabled = false;
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (state.image) {
    ctx.drawImage(state.image, 0, 0, canvas.width, canvas.height);
  }
  if (state.mask) {
    ctx.save();
    ctx.globalAlpha = state.opacity;
    ctx.globalCompositeOperation = "screen";
    ctx.drawImage(state.mask, 0, 0, canvas.width, canvas.height);
    ctx.restore();
  }
  if (state.box) {
    const a = imageToCanvas(state.box.x0, state.box.y0, state.zoom);
    const b = imageToCanvas(state.box.x1 + 1, state.box.y1 + 1, state.zoom);
    ctx.lineWidth = 2;
    ctx.strokeStyle = "#ffcf40";
    ctx.strokeRect(a.x + 0.5, a.y + 0.5, b.x - a.x - 1, b.y - a.y - 1);
  }
}

/** Tint a grayscale mask PNG so it reads as an overlay. */
export async function tintMask(blob: Blob, rgb: [number, number, number]): Promise<ImageBitmap> {
  const raw = await createImageBitmap(blob);
  const work = document.createElement("canvas");
  work.width = raw.width;
  work.height = raw.height;
  const ctx = work.getContext("2d")!;
  ctx.drawImage(raw, 0, 0);
  const data = ctx.getImageData(0, 0, work.width, work.height);
  const px = data.data;
  for (let i = 0; i < px.length; i += 4) {
    const v = px[i];
    px[i] = (v * rgb[0]) / 255;
    px[i + 1] = (v * rgb[1]) / 255;
    px[i + 2] = (v * rgb[2]) / 255;
    px[i + 3] = v;
  }
  ctx.putImageData(data, 0, 0);
  return createImageBitmap(work);
}
