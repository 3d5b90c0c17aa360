type Callback = (...args: unknown[]) => void;

interface Timer {
  id: number;
  due: number;
  seq: number;
  interval: number | null;
  fn: Callback;
  args: unknown[];
}

// runaway pages (an interval re-arming at 1 ms forever) stop here per advance
const MAX_CALLBACKS_PER_ADVANCE = 100_000;

/**
 * Timers and animation frames on a virtual timeline. Time moves only inside
 * `advance`; callbacks run in (due time, scheduling order) and a frame tick
 * runs after timers due at the same instant.
 */
export class VirtualClock {
  now = 0;
  private timers = new Map<number, Timer>();
  private frames = new Map<number, FrameRequestCallback>();
  private nextId = 1;
  private seq = 0;
  private frame = 0;
  private running = false;

  constructor(
    private readonly fps: number,
    private readonly yieldTask: () => Promise<void>,
    private readonly onError: (e: unknown) => void,
  ) {}

  setTimer(fn: Callback, delay: unknown, args: unknown[], repeat: boolean): number {
    const d = Math.max(0, Math.floor(Number(delay) || 0));
    const id = this.nextId++;
    this.timers.set(id, {
      id,
      due: this.now + d,
      seq: this.seq++,
      interval: repeat ? Math.max(1, d) : null,
      fn,
      args,
    });
    return id;
  }

  clearTimer(id: unknown): void {
    this.timers.delete(Number(id));
  }

  requestFrame(cb: FrameRequestCallback): number {
    const id = this.nextId++;
    this.frames.set(id, cb);
    return id;
  }

  cancelFrame(id: unknown): void {
    this.frames.delete(Number(id));
  }

  /** Virtual time of frame `k`, in ms. */
  private frameTime(k: number): number {
    return (k * 1000) / this.fps;
  }

  private nextTimer(): Timer | undefined {
    let best: Timer | undefined;
    for (const t of this.timers.values()) {
      if (!best || t.due < best.due || (t.due === best.due && t.seq < best.seq)) best = t;
    }
    return best;
  }

  /** Run everything due up to `now + ms`, then leave the clock there. */
  async advance(ms: number): Promise<void> {
    if (this.running) return;
    this.running = true;
    const target = this.now + Math.max(0, Number(ms) || 0);
    try {
      for (let n = 0; n < MAX_CALLBACKS_PER_ADVANCE; n++) {
        const t = this.nextTimer();
        const k = this.frame + 1;
        const frameDue = this.frames.size > 0 && k * 1000 <= target * this.fps;
        if (t && t.due <= target && (!frameDue || t.due <= this.frameTime(k))) {
          this.now = Math.max(this.now, t.due);
          if (t.interval === null) {
            this.timers.delete(t.id);
          } else {
            t.due += t.interval;
            t.seq = this.seq++;
          }
          this.call(() => t.fn(...t.args));
        } else if (frameDue) {
          this.frame = k;
          this.now = Math.max(this.now, this.frameTime(k));
          const batch = [...this.frames.values()];
          this.frames.clear();
          const stamp = this.now;
          for (const cb of batch) this.call(() => cb(stamp));
        } else {
          break;
        }
        await this.yieldTask();
      }
      this.now = target;
      // frames that were not requested during this span are skipped, not owed
      this.frame = Math.max(this.frame, Math.floor((target * this.fps) / 1000));
    } finally {
      this.running = false;
    }
  }

  private call(f: () => void): void {
    try {
      f();
    } catch (e) {
      this.onError(e);
    }
  }
}
