import { CONFIG_GLOBAL, type GuardConfig } from "./config";
import { installGuard, type GuardWindow } from "./guard";

const w = window as unknown as GuardWindow;
const config = w[CONFIG_GLOBAL] as GuardConfig | undefined;
if (config) installGuard(w, config);
