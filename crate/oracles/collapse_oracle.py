"""Reference statistics for the per-round score series experiment.

Simulates the drifting generator and the noisy quality critic directly, with
and without strict acceptance, and records what a 100-run experiment should
look like. Run once and commit the output:

    python3 oracles/collapse_oracle.py crates/core/tests/fixtures/oracles
"""

import json
import sys
from pathlib import Path

import numpy as np

ROUNDS = 8
RUNS = 100
MAX_RESAMPLES = 10
INITIAL_MEAN, INITIAL_SD = 0.5, 0.1
DRIFT, STEP_SD = -0.03, 0.1
NOISE_SD = 0.05
REPLICATES = 400


def run(rng, noise, forced):
    """One trajectory. `noise` maps a printed quality to the critic's fixed
    offset for it: the critic is deterministic in the code it sees."""
    best = -1.0
    prev = None
    series = []
    for _ in range(ROUNDS):
        kept = None
        for _ in range(MAX_RESAMPLES):
            if prev is None:
                q = rng.normal(INITIAL_MEAN, INITIAL_SD)
            else:
                q = prev + rng.normal(DRIFT, STEP_SD)
            printed = f"{min(max(q, 0.0), 1.0):.3f}"
            if printed not in noise:
                noise[printed] = rng.normal(0.0, NOISE_SD)
            score = min(max(float(printed) + noise[printed], 0.0), 1.0)
            if not forced or score > best:
                kept = (float(printed), score)
                break
        if kept is None:
            break
        prev, score = kept
        best = max(best, score)
        series.append(score)
        if forced and best >= 1.0:
            break
    series += [series[-1]] * (ROUNDS - len(series))
    return series


def experiment(rng, forced):
    noise = {}
    runs = np.array([run(rng, noise, forced) for _ in range(RUNS)])
    regressed = sum(np.any(np.diff(r) < 0) for r in runs)
    return runs.mean(axis=0), regressed / RUNS


def main(out_dir):
    rng = np.random.default_rng(31337)
    out = {}
    for name, forced in [("on", True), ("off", False)]:
        means, rates = [], []
        for _ in range(REPLICATES):
            m, r = experiment(rng, forced)
            means.append(m)
            rates.append(r)
        means, rates = np.array(means), np.array(rates)
        mean_regress = np.mean([np.any(np.diff(m) < 0) for m in means])
        out[name] = {
            "round_mean": means.mean(axis=0).tolist(),
            # spread of a whole 100-run experiment's mean, shared noise included
            "round_mean_sd": means.std(axis=0).tolist(),
            "regression_rate": float(rates.mean()),
            "regression_rate_sd": float(rates.std()),
            "experiments_with_mean_regression": float(mean_regress),
        }
    summary = {
        "rounds": ROUNDS,
        "runs": RUNS,
        "max_resamples": MAX_RESAMPLES,
        "initial": [INITIAL_MEAN, INITIAL_SD],
        "step": [DRIFT, STEP_SD],
        "noise_sd": NOISE_SD,
        "replicates": REPLICATES,
        **out,
    }
    path = Path(out_dir)
    path.mkdir(parents=True, exist_ok=True)
    (path / "collapse_oracle.json").write_text(json.dumps(summary, indent=1) + "\n")
    for k in ("on", "off"):
        print(k, np.round(out[k]["round_mean"], 3), "regression rate", round(out[k]["regression_rate"], 3))


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/fixtures/oracles")
