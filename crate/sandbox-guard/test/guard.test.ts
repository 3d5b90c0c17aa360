import { describe, expect, it } from "vitest";
import { DEFAULT_CONFIG } from "../src/config";
import { advance, guarded, load } from "./fakeWindow";

const READY = DEFAULT_CONFIG.ready_signal_name;
const LOG = DEFAULT_CONFIG.violation_log_name;

describe("blocked APIs", () => {
  it("logs eval, window.open, alert and an external fetch and still renders", async () => {
    const [win] = guarded();
    const page = () => {
      try {
        win.eval("1+1");
      } catch {
        // page swallows it
      }
      win.open("http://example.com/popup");
      win.alert("hello");
      void win.fetch("http://canary.example:8080/beacon").catch(() => undefined);
    };
    page();
    await load(win);
    for (const ms of [1000, 1000]) await advance(win, ms);
    expect(win[LOG]).toEqual([
      "api:eval",
      "api:window.open",
      "api:alert",
      "network:http://canary.example:8080",
    ]);
    expect(win.canary).toEqual([]);
    expect(win[READY]).toBe(true);
  });

  it("throws from eval and Function but no-ops dialogs", () => {
    const [win] = guarded();
    expect(() => win.eval("1")).toThrow(EvalError);
    expect(() => new win.Function("return 1")).toThrow(EvalError);
    expect(() => new win.natives.Function.prototype.constructor("x")).toThrow(EvalError);
    expect(win.alert("x")).toBeUndefined();
    expect(win.confirm("x")).toBe(false);
    expect(win.prompt("x")).toBeNull();
    expect(win.open("x")).toBeNull();
    expect(win[LOG].length).toBe(7);
  });

  it("leaves no listed API in its native form", () => {
    const [win] = guarded();
    for (const name of DEFAULT_CONFIG.blocked_apis) {
      const key = name.replace(/^window\./, "");
      const current = key === "navigator.clipboard" ? win.navigator.clipboard : win[key];
      expect(current, name).not.toBe(win.natives[key]);
    }
    expect(win.Math.random).not.toBe(win.natives.random);
  });

  it("logs each clipboard access once", async () => {
    const [win] = guarded();
    await expect(win.navigator.clipboard.writeText("secret")).rejects.toThrow();
    expect(win[LOG]).toEqual(["api:navigator.clipboard"]);
  });

  it("treats string timer handlers as eval", () => {
    const [win] = guarded();
    expect(win.setTimeout("alert(1)", 0)).toBe(0);
    expect(win[LOG]).toEqual(["api:eval"]);
  });

  it("blocks worker creation", () => {
    const [win] = guarded();
    expect(() => new win.Worker("w.js")).toThrow();
    expect(() => new win.SharedWorker("w.js")).toThrow();
    expect(win[LOG]).toEqual(["api:Worker", "api:SharedWorker"]);
  });

  it("only stubs what the config lists", () => {
    const [win] = guarded({ blocked_apis: ["eval"] });
    expect(win.alert).toBe(win.natives.alert);
    expect(win.fetch).toBe(win.natives.fetch);
    expect(() => win.eval("1")).toThrow();
  });
});

describe("network", () => {
  it("passes whitelisted, relative and data requests through", async () => {
    const [win] = guarded();
    await win.fetch("http://fixtures.invalid/font.woff2");
    await win.fetch("/local.json");
    await win.fetch("data:text/plain,hi");
    expect(win.canary).toEqual([
      "http://fixtures.invalid/font.woff2",
      "/local.json",
      "data:text/plain,hi",
    ]);
    expect(win[LOG]).toEqual([]);
  });

  it("fails closed for XMLHttpRequest and WebSocket", () => {
    const [win] = guarded();
    const xhr = new win.XMLHttpRequest();
    xhr.open("GET", "https://api.example.com/data");
    expect(() => xhr.send()).toThrow(TypeError);
    expect(() => new win.WebSocket("wss://live.example.com/socket")).toThrow(TypeError);
    const ok = new win.XMLHttpRequest();
    ok.open("GET", "http://fixtures.invalid/data.json");
    ok.send();
    expect(win.canary).toEqual(["http://fixtures.invalid/data.json"]);
    expect(win[LOG]).toEqual([
      "network:https://api.example.com",
      "network:https://live.example.com",
    ]);
  });

  it("checks the origin of Request-like inputs", async () => {
    const [win] = guarded();
    await expect(win.fetch({ url: "http://evil.example/x" })).rejects.toThrow(TypeError);
    expect(win[LOG]).toEqual(["network:http://evil.example"]);
  });
});

describe("ready signal", () => {
  it("is pending until load, then set", async () => {
    const [win] = guarded();
    expect(win[READY]).toBe(false);
    await load(win);
    expect(win[READY]).toBe(true);
  });

  it("is idempotent", async () => {
    const [win, handle] = guarded();
    await load(win);
    handle.signalReady();
    win.fire("load");
    await new Promise((r) => setTimeout(r, 5));
    expect(win[READY]).toBe(true);
  });

  it("never fires when a page script throws before load", async () => {
    const [win] = guarded();
    win.fire("error", new ReferenceError("x is not defined"));
    await load(win);
    expect(READY in win).toBe(false);
  });

  it("still fires when only a blocked call escaped", async () => {
    const [win] = guarded();
    let thrown: unknown;
    try {
      win.eval("1");
    } catch (e) {
      thrown = e;
    }
    win.fire("error", thrown);
    await load(win);
    expect(win[READY]).toBe(true);
  });

  it("uses the configured global names", async () => {
    const [win] = guarded({
      ready_signal_name: "__go",
      violation_log_name: "__log",
      advance_fn_name: "__step",
    });
    win.alert("x");
    await load(win, "__go");
    expect(win.__go).toBe(true);
    expect(win.__log).toEqual(["api:alert"]);
    await win.__step(1000);
    expect(win.Date.now()).toBe(DEFAULT_CONFIG.clock_epoch_ms + 1000);
  });
});

describe("determinism", () => {
  // an animated page: random colors on a timer and a frame-driven position
  const snapshots = async (seed: number) => {
    const [win] = guarded({ random_seed: seed });
    const state = { colors: [] as number[], x: 0, stamp: 0 };
    win.setInterval(() => state.colors.push(Math.floor(win.Math.random() * 0xffffff)), 250);
    const frame = (t: number) => {
      state.x += win.Math.random();
      state.stamp = t;
      win.requestAnimationFrame(frame);
    };
    win.requestAnimationFrame(frame);
    const shots: string[] = [];
    await load(win);
    for (const delta of [0, 1000, 1000]) {
      await advance(win, delta);
      shots.push(JSON.stringify({ ...state, now: win.Date.now() }));
    }
    return shots;
  };

  it("gives identical captures across three runs", async () => {
    const runs = [await snapshots(1), await snapshots(1), await snapshots(1)];
    expect(runs[1]).toEqual(runs[0]);
    expect(runs[2]).toEqual(runs[0]);
    expect(new Set(runs[0]).size).toBe(3);
  });

  it("changes with the seed", async () => {
    expect(await snapshots(2)).not.toEqual(await snapshots(3));
  });
});
