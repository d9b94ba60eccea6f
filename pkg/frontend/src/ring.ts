import { FrameEvent } from './types.js';

// Bounded ring of frame events. The SSE consumer pushes, the render
// loop drains; neither ever blocks the other. Frame indices only move
// forward: anything at or below the newest seen index is discarded so
// a reconnect replaying an old frame cannot rewind the display.
export class FrameRing {
  private buf: (FrameEvent | undefined)[];
  private head = 0; // next write slot
  private count = 0;
  latestIndex = 0;

  constructor(readonly capacity = 2048) {
    if (capacity < 1) throw new Error('ring capacity must be positive');
    this.buf = new Array(capacity);
  }

  get size(): number {
    return this.count;
  }

  push(event: FrameEvent): boolean {
    if (event.frame_index <= this.latestIndex) return false;
    this.latestIndex = event.frame_index;
    this.buf[this.head] = event;
    this.head = (this.head + 1) % this.capacity;
    if (this.count < this.capacity) this.count += 1;
    return true;
  }

  // Newest n events in arrival order (oldest first).
  last(n: number): FrameEvent[] {
    const take = Math.min(n, this.count);
    const out: FrameEvent[] = [];
    for (let k = take; k > 0; k--) {
      const idx = (this.head - k + this.capacity * 2) % this.capacity;
      out.push(this.buf[idx]!);
    }
    return out;
  }

  latest(): FrameEvent | undefined {
    if (this.count === 0) return undefined;
    return this.buf[(this.head - 1 + this.capacity) % this.capacity];
  }

  // Events newer than the given index, oldest first. The render loop
  // polls with its own cursor, so a slow renderer just skips frames
  // that have already fallen off the ring.
  since(index: number): FrameEvent[] {
    const out: FrameEvent[] = [];
    for (let k = 1; k <= this.count; k++) {
      const event = this.buf[(this.head - k + this.capacity * 2) % this.capacity]!;
      if (event.frame_index <= index) break;
      out.push(event);
    }
    return out.reverse();
  }

  clear(): void {
    this.head = 0;
    this.count = 0;
    // latestIndex survives a clear on purpose: reconnects start a new
    // session at frame 1, so the display index is offset instead.
  }
}
