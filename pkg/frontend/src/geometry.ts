// Box arithmetic and canvas<->image coordinate mapping.
// The canvas renders the image at an integer zoom factor, so the mapping
// round-trips exactly: canvasToImage(imageToCanvas(p)) === p.

export interface Box {
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

/** Normalize a drag from (ax,ay) to (bx,by) so x0<=x1 and y0<=y1. */
export function normalizeBox(ax: number, ay: number, bx: number, by: number): Box {
  return {
    x0: Math.min(ax, bx),
    y0: Math.min(ay, by),
    x1: Math.max(ax, bx),
    y1: Math.max(ay, by),
  };
}

/** Clamp a box to an image extent (inclusive pixel coordinates). */
export function clampBox(box: Box, width: number, height: number): Box {
  const clamp = (v: number, hi: number) => Math.max(0, Math.min(v, hi));
  return {
    x0: clamp(box.x0, width - 1),
    y0: clamp(box.y0, height - 1),
    x1: clamp(box.x1, width - 1),
    y1: clamp(box.y1, height - 1),
  };
}

/** Canvas pixel -> image pixel at an integer zoom factor. */
export function canvasToImage(px: number, py: number, zoom: number): { x: number; y: number } {
  return { x: Math.floor(px / zoom), y: Math.floor(py / zoom) };
}

/** Top-left canvas pixel of an image pixel at an integer zoom factor. */
export function imageToCanvas(x: number, y: number, zoom: number): { x: number; y: number } {
  return { x: x * zoom, y: y * zoom };
}

export function boxToArray(box: Box): [number, number, number, number] {
  return [box.x0, box.y0, box.x1, box.y1];
}

export function sameBox(a: Box, b: Box): boolean {
  return a.x0 === b.x0 && a.y0 === b.y0 && a.x1 === b.x1 && a.y1 === b.y1;
}
