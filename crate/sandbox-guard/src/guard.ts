import type { GuardConfig } from "./config";
import { seededRandom } from "./prng";
import { VirtualClock } from "./clock";

/** The subset of `window` the guard touches. Tests pass a plain object. */
export type GuardWindow = Record<string, any> & {
  Math: Math;
  Date: DateConstructor;
  location: { href: string };
  addEventListener(type: string, fn: (e: unknown) => void): void;
};

export interface GuardHandle {
  clock: VirtualClock;
  violations: string[];
  /** Idempotent; the first call wins. */
  signalReady(): void;
}

const LOCAL_SCHEMES = ["data:", "blob:", "about:"];

// errors thrown by stubs; a page that lets one escape still renders
const guardErrors = new WeakSet<object>();

function blockedError<E extends Error>(e: E): E {
  guardErrors.add(e);
  return e;
}

export function installGuard(win: GuardWindow, config: GuardConfig): GuardHandle {
  const blocked = new Set(config.blocked_apis);
  const allowed = new Set(config.allowed_origins);
  const violations: string[] = [];
  const record = (entry: string) => {
    violations.push(entry);
  };
  Object.defineProperty(win, config.violation_log_name, {
    value: violations,
    writable: false,
    configurable: false,
  });

  const native = {
    setTimeout: win.setTimeout as typeof setTimeout | undefined,
    MessageChannel: win.MessageChannel as typeof MessageChannel | undefined,
    Promise: (win.Promise ?? Promise) as PromiseConstructor,
    URL: (win.URL ?? URL) as typeof URL,
    console: (win.console ?? console) as Console,
  };

  // one macrotask between callbacks so promise chains settle as in a browser
  const yieldTask = (): Promise<void> => {
    if (native.MessageChannel) {
      return new native.Promise<void>((resolve) => {
        const ch = new native.MessageChannel!();
        ch.port1.onmessage = () => {
          ch.port1.close();
          resolve();
        };
        ch.port2.postMessage(null);
      });
    }
    if (native.setTimeout) {
      return new native.Promise<void>((resolve) => native.setTimeout!(resolve, 0));
    }
    return native.Promise.resolve();
  };
  const clock = new VirtualClock(config.frames_per_second, yieldTask, (e) =>
    native.console.error(e),
  );

  installRandom(win, config.random_seed);
  installTime(win, clock, config.clock_epoch_ms);
  installTimers(win, clock, blocked, record);

  const originOf = (url: unknown): string | null => {
    let u: URL;
    try {
      u = new native.URL(String(url), win.location.href);
    } catch {
      return null;
    }
    if (LOCAL_SCHEMES.includes(u.protocol)) return null;
    return u.origin;
  };
  // the origin to log, or null when the request may proceed
  const deniedOrigin = (url: unknown): string | null => {
    const o = originOf(url);
    return o !== null && !allowed.has(o) ? o : null;
  };
  installNetwork(win, blocked, deniedOrigin, record, native.Promise);
  installApis(win, blocked, record, native.Promise);

  let ready = false;
  let failed = false;
  win[config.ready_signal_name] = false;
  const signalReady = () => {
    if (ready || failed) return;
    ready = true;
    win[config.ready_signal_name] = true;
  };
  win[config.advance_fn_name] = (ms: number) => clock.advance(ms);
  win.addEventListener("error", (e) => {
    const err = (e as { error?: unknown } | null)?.error;
    if (ready || (typeof err === "object" && err !== null && guardErrors.has(err))) return;
    // the controller reads a missing signal as a failed load
    failed = true;
    delete win[config.ready_signal_name];
  });
  win.addEventListener("load", () => {
    // zero-delay work queued during load belongs to the first capture
    void clock.advance(0).then(signalReady);
  });

  return { clock, violations, signalReady };
}

function installRandom(win: GuardWindow, seed: number): void {
  const draw = seededRandom(seed);
  Object.defineProperty(win.Math, "random", {
    value: () => draw(),
    writable: true,
    configurable: true,
  });
}

function installTime(win: GuardWindow, clock: VirtualClock, epoch: number): void {
  const NativeDate = win.Date;
  const current = () => epoch + Math.floor(clock.now);
  function VirtualDate(this: unknown, ...args: unknown[]) {
    if (!new.target) return new NativeDate(current()).toString();
    return args.length === 0
      ? new NativeDate(current())
      : new (NativeDate as any)(...args);
  }
  VirtualDate.prototype = NativeDate.prototype;
  VirtualDate.now = current;
  VirtualDate.parse = NativeDate.parse;
  VirtualDate.UTC = NativeDate.UTC;
  win.Date = VirtualDate as unknown as DateConstructor;

  const perf = win.performance ?? (win.performance = {});
  Object.defineProperty(perf, "now", {
    value: () => clock.now,
    writable: true,
    configurable: true,
  });
}

function installTimers(
  win: GuardWindow,
  clock: VirtualClock,
  blocked: Set<string>,
  record: (e: string) => void,
): void {
  const timer = (repeat: boolean) =>
    function (handler: unknown, delay?: unknown, ...args: unknown[]): number {
      if (typeof handler !== "function") {
        // string handlers are eval in disguise
        if (blocked.has("eval")) record("api:eval");
        return 0;
      }
      return clock.setTimer(handler as (...a: unknown[]) => void, delay, args, repeat);
    };
  win.setTimeout = timer(false);
  win.setInterval = timer(true);
  win.clearTimeout = (id: unknown) => clock.clearTimer(id);
  win.clearInterval = (id: unknown) => clock.clearTimer(id);
  win.requestAnimationFrame = (cb: FrameRequestCallback) => clock.requestFrame(cb);
  win.cancelAnimationFrame = (id: unknown) => clock.cancelFrame(id);
}

function networkError(api: string, origin: string): Error {
  return blockedError(new TypeError(`${api} to ${origin} is blocked in the sandbox`));
}

function installNetwork(
  win: GuardWindow,
  blocked: Set<string>,
  deniedOrigin: (url: unknown) => string | null,
  record: (e: string) => void,
  P: PromiseConstructor,
): void {
  if (blocked.has("fetch") && typeof win.fetch === "function") {
    const nativeFetch = win.fetch.bind(win);
    win.fetch = (input: unknown, init?: unknown) => {
      const url = typeof input === "object" && input !== null && "url" in input ? (input as Request).url : input;
      const o = deniedOrigin(url);
      if (o !== null) {
        record(`network:${o}`);
        return P.reject(networkError("fetch", o));
      }
      return nativeFetch(input, init);
    };
  }

  if (blocked.has("XMLHttpRequest") && typeof win.XMLHttpRequest === "function") {
    const NativeXhr = win.XMLHttpRequest;
    win.XMLHttpRequest = class extends NativeXhr {
      private deniedTo: string | null = null;
      open(method: string, url: unknown, ...rest: unknown[]) {
        this.deniedTo = deniedOrigin(url);
        if (this.deniedTo !== null) record(`network:${this.deniedTo}`);
        return super.open(method, url, ...rest);
      }
      send(body?: unknown) {
        if (this.deniedTo !== null) throw networkError("XMLHttpRequest", this.deniedTo);
        return super.send(body);
      }
    };
  }

  if (blocked.has("WebSocket") && typeof win.WebSocket === "function") {
    const NativeWs = win.WebSocket;
    const Guarded = function (url: unknown, protocols?: unknown) {
      const o = deniedOrigin(String(url).replace(/^ws/, "http"));
      if (o !== null) {
        record(`network:${o}`);
        throw networkError("WebSocket", o);
      }
      return new NativeWs(url, protocols);
    };
    Guarded.prototype = NativeWs.prototype;
    win.WebSocket = Guarded;
  }
}

function installApis(
  win: GuardWindow,
  blocked: Set<string>,
  record: (e: string) => void,
  P: PromiseConstructor,
): void {
  const noop = (name: string, result: unknown) => {
    if (!blocked.has(name)) return;
    const key = name.replace(/^window\./, "");
    win[key] = () => {
      record(`api:${name}`);
      return result;
    };
  };
  noop("window.open", null);
  noop("alert", undefined);
  noop("confirm", false);
  noop("prompt", null);

  if (blocked.has("eval")) {
    win.eval = () => {
      record("api:eval");
      throw blockedError(new EvalError("eval is blocked in the sandbox"));
    };
  }
  if (blocked.has("Function") && typeof win.Function === "function") {
    const NativeFunction = win.Function;
    const Guarded = function () {
      record("api:Function");
      throw blockedError(new EvalError("Function is blocked in the sandbox"));
    };
    Guarded.prototype = NativeFunction.prototype;
    Object.defineProperty(NativeFunction.prototype, "constructor", {
      value: Guarded,
      writable: true,
      configurable: true,
    });
    win.Function = Guarded;
  }

  for (const name of ["Worker", "SharedWorker"]) {
    if (!blocked.has(name)) continue;
    win[name] = function () {
      record(`api:${name}`);
      throw blockedError(new Error(`${name} is blocked in the sandbox`));
    };
  }

  if (blocked.has("navigator.clipboard") && win.navigator) {
    const reject = () => P.reject(blockedError(new Error("clipboard is blocked in the sandbox")));
    const stub = { readText: reject, writeText: reject, read: reject, write: reject };
    Object.defineProperty(win.navigator, "clipboard", {
      get() {
        record("api:navigator.clipboard");
        return stub;
      },
      configurable: true,
    });
  }
}
