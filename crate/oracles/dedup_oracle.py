"""Reference values for the de-duplication tests.

Everything here is computed with scikit-learn and plain Python set
arithmetic, independently of the Rust code. Run once and commit the output:

    python3 oracles/dedup_oracle.py crates/core/tests/fixtures/oracles
"""

import json
import random
import re
import sys
from pathlib import Path

import numpy as np
from sklearn.feature_extraction.text import TfidfVectorizer

WORDS = """
page header footer button card grid column row panel modal dialog navbar sidebar
landing pricing table chart graph canvas animation slider carousel gallery image
photo icon logo banner hero section article form input field label select option
checkbox radio toggle switch menu dropdown tooltip popover badge avatar profile
user account login signup password email search filter sort list item detail view
dashboard report metric counter timer clock calendar date event schedule task todo
note editor preview markdown code snippet terminal console game board tile score
level player enemy bullet ship planet star orbit physics gravity bounce particle
color theme dark light gradient shadow border radius margin padding layout flex
responsive mobile desktop tablet screen width height scroll sticky fixed smooth
fade slide zoom rotate spin pulse hover click drag drop resize keyboard mouse touch
weather forecast temperature city map marker route travel hotel booking flight
restaurant menu recipe cooking bakery coffee shop cart checkout payment invoice
product review rating comment share like follow feed post story video audio music
playlist album artist volume progress loading spinner skeleton placeholder empty
error warning success info alert banner notification message chat inbox thread
reply send attach upload download file folder tree node edge network server data
""".split()

ALPHABET = "abcdefghijklmnopqrstuvwxyz"
THRESHOLD = 0.85
LENGTH = 500
EDIT_RATE = 0.05
CALIBRATION_RATE = 0.02


def random_text(rng, length=LENGTH):
    out = []
    while len(" ".join(out)) < length:
        out.append(rng.choice(WORDS))
    return " ".join(out)[:length]


def mutate(rng, text, rate=EDIT_RATE):
    """round(rate * len) edits at random positions; each is a substitution,
    insertion or deletion with equal probability, using lowercase letters."""
    chars = list(text)
    for _ in range(round(rate * len(text))):
        kind = rng.randrange(3)
        if kind == 0 and chars:
            chars[rng.randrange(len(chars))] = rng.choice(ALPHABET)
        elif kind == 1:
            chars.insert(rng.randrange(len(chars) + 1), rng.choice(ALPHABET))
        elif chars:
            del chars[rng.randrange(len(chars))]
    return "".join(chars)


def trigrams(text):
    if len(text) == 0:
        return []
    if len(text) < 3:
        return [text]
    return [text[i : i + 3] for i in range(len(text) - 2)]


def vectorizer():
    # smooth idf: ln((1 + n) / (1 + df)) + 1, raw counts, l2 rows
    return TfidfVectorizer(analyzer=trigrams, lowercase=False, norm="l2", use_idf=True, smooth_idf=True, sublinear_tf=False)


def cosine_matrix(rows, cols):
    v = vectorizer()
    m = v.fit_transform(rows + cols)
    a, b = m[: len(rows)], m[len(rows) :]
    return np.clip((a @ b.T).toarray(), 0.0, 1.0)


def pair_cosine(a, b):
    return float(cosine_matrix([a], [b])[0, 0])


def pair_study(seed, trials):
    rng = random.Random(seed)
    hits = 0
    examples = []
    for t in range(trials):
        a = random_text(rng)
        b = mutate(rng, a)
        c = pair_cosine(a, b)
        hits += c > THRESHOLD
        if t < 40:
            examples.append({"a": a, "b": b, "cosine": c})
    return hits / trials, examples


def build_corpus(rng, n_test=400, n_exact=50, n_near=300, n_filler=100, rate=EDIT_RATE):
    originals = [random_text(rng) for _ in range(n_test)]
    test = [{"id": f"test-{i:04d}", "prompt": t} for i, t in enumerate(originals)]
    train, exact, near, filler = [], [], [], []
    for i in range(n_exact):
        train.append({"id": f"train-exact-{i:04d}", "prompt": originals[i]})
        exact.append(train[-1]["id"])
    for i in range(n_near):
        train.append({"id": f"train-near-{i:04d}", "prompt": mutate(rng, originals[n_exact + i], rate)})
        near.append(train[-1]["id"])
    for i in range(n_filler):
        train.append({"id": f"train-fill-{i:04d}", "prompt": random_text(rng)})
        filler.append(train[-1]["id"])
    return train, test, {"exact": exact, "near": near, "filler": filler}


def lexical_removals(train, test):
    """Train ids whose best test cosine, or whose cosine with an earlier kept
    train document (by id), is above the threshold."""
    train = sorted(train, key=lambda d: d["id"])
    test = sorted(test, key=lambda d: d["id"])
    texts = [d["prompt"] for d in train] + [d["prompt"] for d in test]
    m = vectorizer().fit_transform(texts)
    tr, te = m[: len(train)], m[len(train) :]
    cross = np.clip((tr @ te.T).toarray(), 0.0, 1.0) if len(test) else np.zeros((len(train), 0))
    removed = set()
    for i in range(len(train)):
        if cross.shape[1] and cross[i].max() > THRESHOLD:
            removed.add(i)
    intra = np.clip((tr @ tr.T).toarray(), 0.0, 1.0)
    for a in range(len(train)):
        for b in range(a):
            if a not in removed and b not in removed and intra[a, b] > THRESHOLD:
                removed.add(a)
    return {train[i]["id"] for i in removed}


def best_test_cosine(train, test):
    """Highest test cosine of every train id, corpus-wide idf."""
    texts = [d["prompt"] for d in train] + [d["prompt"] for d in test]
    m = vectorizer().fit_transform(texts)
    cross = np.clip((m[: len(train)] @ m[len(train) :].T).toarray(), 0.0, 1.0)
    return {d["id"]: float(cross[i].max()) for i, d in enumerate(train)}


def corpus_study(seed, reps, rate=EDIT_RATE):
    rates = []
    filler_removed = 0
    exact_recall = []
    for r in range(reps):
        rng = random.Random(seed + r)
        train, test, planted = build_corpus(rng, rate=rate)
        removed = lexical_removals(train, test)
        rates.append(sum(i in removed for i in planted["near"]) / len(planted["near"]))
        exact_recall.append(sum(i in removed for i in planted["exact"]) / len(planted["exact"]))
        filler_removed += sum(i in removed for i in planted["filler"])
    return float(np.mean(rates)), float(np.std(rates)), float(np.mean(exact_recall)), filler_removed


def false_positive_study(seed, runs, n_train=50, n_test=50):
    clean = 0
    for r in range(runs):
        rng = random.Random(seed + r)
        train = [{"id": f"a{i:03d}", "prompt": random_text(rng)} for i in range(n_train)]
        test = [{"id": f"b{i:03d}", "prompt": random_text(rng)} for i in range(n_test)]
        clean += not lexical_removals(train, test)
    return clean / runs


IDENT_POOL = [
    "total", "count", "price", "items", "width", "height", "index", "value", "result", "buffer",
    "canvas", "context", "player", "score", "timer", "offset", "speed", "angle", "radius", "color",
    "label", "button", "header", "footer", "render", "update", "draw", "tick", "step", "frame",
]
TOKEN = re.compile(r'"(?:[^"\\]|\\.)*"|[A-Za-z0-9_$][A-Za-z0-9_$.\-]*|\S')


def code_tokens(src):
    """Minimal independent lexer for the generated snippets: they contain no
    comments and only double-quoted strings, so a regular expression is
    enough."""
    return set(TOKEN.findall(src))


def code_snippet(rng):
    names = rng.sample(IDENT_POOL, 8)
    a, b, c, d, e, f, g, h = names
    return (
        f"function {a}({b}, {c}) {{\n"
        f"  let {d} = {b} * {c};\n"
        f"  const {e} = \"{f}\";\n"
        f"  for (let {g} = 0; {g} < {d}; {g}++) {{ {h}.push({g} + {e}); }}\n"
        f"  return {h}.length > {d} ? {d} : {h}.length;\n"
        "}\n"
    ), names


def rename_identifiers(rng, src, names, fraction=0.10):
    """Rename round(fraction * identifier occurrences) occurrences, at least
    one, of randomly chosen identifiers to fresh names."""
    spans = [(m.start(), m.end()) for m in re.finditer(r"[A-Za-z_$][A-Za-z0-9_$]*", src) if m.group() in names]
    k = max(1, round(fraction * len(spans)))
    chosen = sorted(rng.sample(spans, k), reverse=True)
    out = src
    for j, (s, e) in enumerate(chosen):
        out = out[:s] + f"renamed{j}" + out[e:]
    return out


def jaccard(a, b):
    if not a and not b:
        return 1.0
    return len(a & b) / len(a | b)


def code_study(seed, n):
    rng = random.Random(seed)
    cases = []
    for _ in range(n):
        src, names = code_snippet(rng)
        mutated = rename_identifiers(rng, src, names)
        cases.append({"a": src, "b": mutated, "jaccard": jaccard(code_tokens(src), code_tokens(mutated))})
    return cases


def main(out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    pair_rate, pair_examples = pair_study(seed=20240601, trials=20000)
    mean_rate, sd_rate, exact_recall, filler_removed = corpus_study(seed=7000, reps=20)
    # a milder edit rate whose detection rate is neither 0 nor 1 at corpus scale
    cal_rate, cal_sd, _, _ = corpus_study(seed=8000, reps=20, rate=CALIBRATION_RATE)

    rng = random.Random(424242)
    train, test, planted = build_corpus(rng)
    fixture_removed = sorted(lexical_removals(train, test))
    fixture_rate = sum(i in fixture_removed for i in planted["near"]) / len(planted["near"])
    fixture_best = best_test_cosine(train, test)

    fp_clean = false_positive_study(seed=9100, runs=200)

    (out / "dedup_corpus.json").write_text(json.dumps({"train": train, "test": test, "planted": planted}) + "\n")
    summary = {
        "threshold": THRESHOLD,
        "length": LENGTH,
        "edit_rate": EDIT_RATE,
        "pair": {"trials": 20000, "detection_rate": pair_rate, "examples": pair_examples},
        "corpus": {
            "reps": 20,
            "predicted_near_rate": mean_rate,
            "near_rate_sd": sd_rate,
            "exact_recall": exact_recall,
            "filler_removed": filler_removed,
            "fixture_near_rate": fixture_rate,
            "fixture_removed": fixture_removed,
            "fixture_best_test_cosine": fixture_best,
            "calibration_edit_rate": CALIBRATION_RATE,
            "calibration_predicted_near_rate": cal_rate,
            "calibration_near_rate_sd": cal_sd,
        },
        "words": WORDS,
        "false_positive": {"runs": 200, "train": 50, "test": 50, "clean_rate": fp_clean},
        "code": code_study(seed=555, n=50),
    }
    (out / "dedup_oracle.json").write_text(json.dumps(summary, indent=1) + "\n")
    print(f"pair rate {pair_rate:.4f}  corpus rate {mean_rate:.4f} (sd {sd_rate:.4f})  calibration {cal_rate:.4f} (sd {cal_sd:.4f})  fixture {fixture_rate:.4f}  exact {exact_recall}  fp-clean {fp_clean}")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else "crates/core/tests/fixtures/oracles")
