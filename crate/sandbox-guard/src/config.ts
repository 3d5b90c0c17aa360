/** Serialized by the controller and injected as `window.__SANDBOX_GUARD_CONFIG__`. */
export interface GuardConfig {
  blocked_apis: string[];
  random_seed: number;
  clock_epoch_ms: number;
  /** Origins network APIs may reach, e.g. `http://fixtures.invalid`. */
  allowed_origins: string[];
  ready_signal_name: string;
  violation_log_name: string;
  advance_fn_name: string;
  frames_per_second: number;
}

export const CONFIG_GLOBAL = "__SANDBOX_GUARD_CONFIG__";

export const DEFAULT_CONFIG: GuardConfig = {
  blocked_apis: [
    "window.open",
    "alert",
    "confirm",
    "prompt",
    "eval",
    "Function",
    "navigator.clipboard",
    "fetch",
    "XMLHttpRequest",
    "WebSocket",
    "Worker",
    "SharedWorker",
  ],
  random_seed: 0x5eed,
  clock_epoch_ms: 1_700_000_000_000,
  allowed_origins: ["http://sandbox.invalid", "http://fixtures.invalid"],
  ready_signal_name: "__sandboxReady",
  violation_log_name: "__sandboxViolations",
  advance_fn_name: "__sandboxAdvance",
  frames_per_second: 60,
};
