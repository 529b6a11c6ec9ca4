/** Debounced, stale-proof request scheduling for slider drags.
 *
 * Slider events arrive far faster than transfers complete. The scheduler
 * guarantees two things: at most one request is issued per debounce window
 * (150 ms), and a response only lands if no newer request has been issued
 * since - late responses from superseded requests are dropped, so the result
 * pane can never go backwards.
 */

export const DEBOUNCE_MS = 150;

export interface ScheduleCallbacks<T> {
  /** perform the request; receives the request's sequence number */
  run: (seq: number) => Promise<T>;
  /** called only for the newest request's response */
  apply: (value: T, seq: number) => void;
  /** called when the newest request fails */
  fail?: (error: unknown, seq: number) => void;
}

export class RequestScheduler<T> {
  private timer: ReturnType<typeof setTimeout> | null = null;
  private seq = 0;
  private applied = 0;
  issued = 0;

  constructor(
    private callbacks: ScheduleCallbacks<T>,
    private debounceMs: number = DEBOUNCE_MS,
  ) {}

  /** Request a run; coalesces anything arriving within the debounce window. */
  request(): void {
    if (this.timer !== null) clearTimeout(this.timer);
    this.timer = setTimeout(() => {
      this.timer = null;
      this.fire();
    }, this.debounceMs);
  }

  /** Issue immediately (used for explicit clicks, not drags). */
  fire(): void {
    if (this.timer !== null) {
      clearTimeout(this.timer);
      this.timer = null;
    }
    const seq = ++this.seq;
    this.issued++;
    this.callbacks.run(seq).then(
      (value) => {
        if (seq > this.applied && seq === this.seq) {
          this.applied = seq;
          this.callbacks.apply(value, seq);
        }
      },
      (error) => {
        if (seq === this.seq && this.callbacks.fail) {
          this.callbacks.fail(error, seq);
        }
      },
    );
  }

  /** True when a response for the newest request has not landed yet. */
  get pending(): boolean {
    return this.seq > this.applied;
  }
}
