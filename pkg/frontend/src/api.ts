// Typed client for the refinement HTTP API. The UI performs no segmentation
// math itself; it only consumes these endpoints.

import { Box, boxToArray } from "./geometry.js";

export interface SampleInfo {
  id: string;
  width: number;
  height: number;
}

export interface RefineResult {
  blob: Blob;
  /** Parsed X-Metrics header ({"mae": ...}) when the server has GT. */
  metrics: Record<string, number> | null;
}

export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
  }
}

async function errorReason(resp: Response): Promise<string> {
  try {
    const payload = await resp.json();
    if (payload && typeof payload.error === "string") return payload.error;
  } catch {
    /* non-JSON body */
  }
  return `HTTP ${resp.status}`;
}

export class RefineClient {
  constructor(readonly baseUrl: string) {}

  async samples(): Promise<SampleInfo[]> {
    const resp = await fetch(`${this.baseUrl}/samples`);
    if (!resp.ok) throw new ApiError(resp.status, await errorReason(resp));
    return (await resp.json()) as SampleInfo[];
  }

  imageUrl(id: string): string {
    return `${this.baseUrl}/image/${encodeURIComponent(id)}`;
  }

  coarseUrl(id: string): string {
    return `${this.baseUrl}/coarse/${encodeURIComponent(id)}`;
  }

  async refine(id: string, box: Box, signal?: AbortSignal): Promise<RefineResult> {
    const resp = await fetch(`${this.baseUrl}/refine`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ id, box: boxToArray(box) }),
      signal,
    });
    if (!resp.ok) throw new ApiError(resp.status, await errorReason(resp));
    const header = resp.headers.get("X-Metrics");
    let metrics: Record<string, number> | null = null;
    if (header) {
      try {
        metrics = JSON.parse(header) as Record<string, number>;
      } catch {
        metrics = null;
      }
    }
    return { blob: await resp.blob(), metrics };
  }
}
