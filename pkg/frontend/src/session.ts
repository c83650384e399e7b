// One in-flight refinement per session: a newer drag aborts the pending
// request, so the overlay always reflects the latest prompt.

import { RefineClient, RefineResult, ApiError } from "./api.js";
import { Box } from "./geometry.js";

export interface SessionEvents {
  onResult: (id: string, box: Box, result: RefineResult) => void;
  onError: (message: string, status?: number) => void;
}

export class RefineSession {
  private controller: AbortController | null = null;
  private requestSeq = 0;

  constructor(private client: RefineClient, private events: SessionEvents) {}

  /** Submit a refinement; any pending request is superseded. */
  async submit(id: string, box: Box): Promise<void> {
    if (this.controller) {
      this.controller.abort();
    }
    const controller = new AbortController();
    this.controller = controller;
    const seq = ++this.requestSeq;
    try {
      const result = await this.client.refine(id, box, controller.signal);
      if (seq === this.requestSeq) {
        this.events.onResult(id, box, result);
      }
    } catch (err) {
      if (controller.signal.aborted) return; // superseded, stay quiet
      if (err instanceof ApiError) {
        this.events.onError(err.message, err.status);
      } else {
        this.events.onError(err instanceof Error ? err.message : String(err));
      }
    } finally {
      if (this.controller === controller) {
        this.controller = null;
      }
    }
  }

  get busy(): boolean {
    return this.controller !== null;
  }
}
