/** Verification screen: three-view review with single-key verdicts. */

import { AnnotationApi, ApiError, Verdict, ViewsPayload } from "./api.js";

const HOTKEYS: Record<string, Verdict> = {
  a: "Accept",
  s: "Skip",
  f: "Filter",
};

export interface VerifyEvents {
  onAdvance?: (next: string | null) => void;
  onError?: (objectId: string, message: string) => void;
  onComplete?: () => void;
}

export class VerifyQueue {
  private position = 0;
  /** Objects with a verdict already sent (or in flight) this session. */
  private issued = new Set<string>();
  private inFlight = false;

  constructor(
    private readonly api: AnnotationApi,
    private readonly queue: string[],
    private readonly reviewerId: string,
    private readonly events: VerifyEvents = {},
  ) {}

  get current(): string | null {
    return this.position < this.queue.length ? this.queue[this.position] : null;
  }

  async loadViews(): Promise<ViewsPayload | null> {
    const id = this.current;
    return id === null ? null : this.api.getViews(id);
  }

  /**
   * Handle a verdict hotkey.  Repeated presses while a request is in flight
   * (or after the verdict for this object was already issued) are dropped, so
   * a double-press sends exactly one POST.
   */
  async handleKey(key: string): Promise<void> {
    const verdict = HOTKEYS[key.toLowerCase()];
    const id = this.current;
    if (!verdict || id === null) return;
    if (this.inFlight || this.issued.has(id)) return;
    this.issued.add(id);
    this.inFlight = true;
    try {
      await this.api.postVerdict(id, verdict, this.reviewerId);
    } catch (err) {
      // 409 = already terminal server-side: surface it and move on anyway
      const message = err instanceof ApiError ? err.message : String(err);
      this.events.onError?.(id, message);
    } finally {
      this.inFlight = false;
    }
    this.advance();
  }

  private advance(): void {
    this.position += 1;
    const next = this.current;
    this.events.onAdvance?.(next);
    if (next === null) this.events.onComplete?.();
  }
}
