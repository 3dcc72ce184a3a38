"""Smoke test for the guidex extension module.

Build and install first, e.g. ``maturin develop -m crates/py/Cargo.toml``,
then run ``python python/smoke_test.py``.
"""

import json
import pathlib
import tempfile

import guidex

ROOT = pathlib.Path(__file__).resolve().parents[1]
T1 = ROOT / "crates" / "core" / "testdata" / "t1.json"


def main():
    tree = guidex.Tree.load(str(T1))
    assert tree.id == "t1"
    assert tree.no_action == "no-action"
    assert tree.validate()["ok"]
    assert len(tree.paths()) == 5

    r = tree.execute({"age": 60, "diabetes": False, "ldl": 200})
    assert r["output"] == "high-intensity statin", r
    partial = tree.partial_execute({"age": 30})
    assert partial["output"] is None and partial["blocking"] == ["diabetes"]

    cls = tree.abduce({"age": 55, "diabetes": True}, ["ldl"], "moderate-intensity statin")
    assert cls == [{"ldl": 80}, {"ldl": 130}], cls

    facts = tree.sample_factual(seed=3, per_path=2)
    cfs = tree.sample_counterfactual(seed=3, per_path=2)
    assert facts and all(f["label"] in tree.outputs for f in facts)
    assert all(c["y_obs"] != c["y_cf"] for c in cfs)

    parsed = guidex.parse_response("<think>x</think><answer> No-Action </answer>")
    assert parsed["format_ok"] and guidex.normalize_label(parsed["answer"]) == "no-action"
    assert guidex.parse_response("<answer>x</answer>")["format_error"] == "missing_block"

    chunks = guidex.chunk_document("g", "\n\n".join(["w " * 2000] * 9))
    assert [c["word_count"] for c in chunks] == [4000, 4000, 4000, 6000]

    with tempfile.TemporaryDirectory() as d:
        trees = pathlib.Path(d, "trees")
        trees.mkdir()
        (trees / "t1.json").write_text(tree.to_json())
        data = pathlib.Path(d, "factual.jsonl")
        data.write_text("".join(json.dumps(f) + "\n" for f in facts))
        store = guidex.RewardStore(str(trees), [str(data)])
        assert len(store) == len(facts)
        f = facts[0]
        good = store.score(f["instance_id"], f"<think>t</think><answer>{f['label']}</answer>")
        assert good["reward"] == 1, good
        assert store.score(f["instance_id"], "no tags")["reward"] == -1
        batch = store.score_batch([(f["instance_id"], "<think>t</think><answer>?</answer>"), ("missing", "")])
        assert batch[0]["reward"] == 0 and batch[1]["error"] == "unknown_instance"
        try:
            store.score("missing", "")
        except KeyError:
            pass
        else:
            raise AssertionError("unknown id accepted")

    print(f"guidex {guidex.__version__}: smoke test passed")


if __name__ == "__main__":
    main()
