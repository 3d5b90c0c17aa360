import { DEFAULT_CONFIG, type GuardConfig } from "../src/config";
import { installGuard, type GuardHandle, type GuardWindow } from "../src/guard";

/** A window stand-in whose native network APIs record every request that reaches them. */
export interface FakeWindow extends GuardWindow {
  canary: string[];
  pageErrors: unknown[];
  natives: Record<string, any>;
  fire(type: string, error?: unknown): void;
}

export function fakeWindow(href = "http://sandbox.invalid/index.html"): FakeWindow {
  const target = new EventTarget();
  const canary: string[] = [];
  const pageErrors: unknown[] = [];
  function FakeFunction() {}
  class FakeXhr {
    url = "";
    open(_m: string, url: unknown) {
      this.url = String(url);
    }
    send() {
      canary.push(this.url);
    }
  }
  function FakeWebSocket(this: unknown, url: unknown) {
    canary.push(String(url));
  }
  const natives: Record<string, unknown> = {
    open: () => ({}),
    alert: () => {
      throw new Error("a native dialog would block the page");
    },
    confirm: () => true,
    prompt: () => "typed",
    eval: (src: string) => src,
    Function: FakeFunction,
    fetch: (input: unknown) => {
      canary.push(String(input));
      return Promise.resolve("response");
    },
    XMLHttpRequest: FakeXhr,
    WebSocket: FakeWebSocket,
    Worker: class {},
    SharedWorker: class {},
    setTimeout: globalThis.setTimeout,
    requestAnimationFrame: () => 0,
    Date,
  };
  const clipboard = { writeText: () => Promise.resolve() };
  const win: FakeWindow = {
    ...natives,
    Math: Object.create(Math),
    performance: { now: () => 123.456 },
    location: { href },
    navigator: { clipboard },
    console: { error: (e: unknown) => pageErrors.push(e) },
    Promise,
    URL,
    MessageChannel,
    addEventListener: (type: string, fn: (e: unknown) => void) => target.addEventListener(type, fn),
    canary,
    pageErrors,
    natives: { ...natives, "navigator.clipboard": clipboard, random: Math.random },
    fire(type: string, error?: unknown) {
      target.dispatchEvent(Object.assign(new Event(type), { error }));
    },
  } as unknown as FakeWindow;
  return win;
}

export function guarded(config: Partial<GuardConfig> = {}, href?: string): [FakeWindow, GuardHandle] {
  const win = fakeWindow(href);
  const handle = installGuard(win, { ...DEFAULT_CONFIG, ...config });
  return [win, handle];
}

/** Fire `load` and wait for the ready flag. */
export async function load(win: FakeWindow, name = DEFAULT_CONFIG.ready_signal_name): Promise<void> {
  win.fire("load");
  for (let i = 0; i < 100 && win[name] !== true; i++) {
    await new Promise((r) => setTimeout(r, 1));
  }
}

export const advance = (win: FakeWindow, ms: number): Promise<void> =>
  win[DEFAULT_CONFIG.advance_fn_name](ms);
