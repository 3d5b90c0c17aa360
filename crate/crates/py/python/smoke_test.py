"""Smoke test for the compiled `relook` module.

    pip install --no-build-isolation -e crates/py
    python crates/py/python/smoke_test.py
"""

import math
import tempfile

import relook


def check_reward():
    assert relook.length_penalty(11000) == 1.0
    assert relook.length_penalty(13000) == 0.5
    assert relook.length_penalty(14001) == 0.0
    assert relook.gate(0.8, False) == 0.0
    assert relook.gate(0.8, True) == 0.8
    assert math.isclose(relook.aggregate_rounds([0.2, 0.4, 0.9]), 0.5)
    try:
        relook.gate(1.5, True)
    except ValueError:
        pass
    else:
        raise AssertionError("score above 1 accepted")


def check_advantages():
    adv = relook.group_advantages([0.0, 1.0])
    assert adv == [-1.0, 1.0], adv
    adv = relook.group_advantages([0.0, 0.0, 0.0, 1.0], clip_bound=1.0)
    assert max(adv) == 1.0
    assert relook.group_advantages([0.3, 0.3, 0.3]) == [0.0, 0.0, 0.0]


def check_parse():
    raw = (
        "Plan the page.\n<answer>\n<html><body>hi</body></html>\n</answer>\n"
        "<get_feedback>\n<mllm_feedback>Make the heading larger.</mllm_feedback>\n"
        "Bigger heading.\n<answer>\n<html><body><h1>hi</h1></body></html>\n</answer>"
    )
    rounds = relook.parse_rollout(raw)
    assert len(rounds) == 2, rounds
    assert rounds[0]["requested_feedback"]
    assert rounds[0]["feedback"] == "Make the heading larger."
    assert "<h1>" in rounds[1]["code"]


def check_dedup():
    text = "a bakery landing page with a hero image and opening hours " * 4
    assert math.isclose(relook.tfidf_cosine(text, text), 1.0)
    assert relook.code_jaccard("let a = b + 1;", "let  a=b+1; // same") == 1.0
    assert relook.code_jaccard("let a = b + 1;", "let x = y + 1;") < 1.0
    test = [{"id": "t1", "prompt": text}]
    train = [
        {"id": "a", "prompt": text},
        {"id": "b", "prompt": "a kanban board with three draggable columns"},
    ]
    m = relook.dedup_corpus(train, test)
    assert m["kept"] == ["b"], m["kept"]
    assert [r["id"] for r in m["removed"]] == ["a"]


def check_train_and_cli():
    initial, final = relook.train_demo(seed=0)
    assert final > 2 * initial, (initial, final)
    with tempfile.TemporaryDirectory() as d:
        assert relook.run_cli(["collapse-plot", "--out", f"{d}/c.tsv"]) == 0
        with open(f"{d}/c.tsv") as f:
            assert len(f.read().splitlines()) == 9
    assert relook.run_cli(["--gamma", "0.5", "train-demo", "--out", "unused"]) == 3


if __name__ == "__main__":
    check_reward()
    check_advantages()
    check_parse()
    check_dedup()
    check_train_and_cli()
    print("python smoke test ok")
