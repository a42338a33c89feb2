"""Smoke test for the blindspot extension module.

Run after `pip install --no-build-isolation -e crates/python`:

    python python/smoke_test.py
"""

import math
import tempfile

import blindspot


def main():
    small = {"n_train_per_class": 120, "n_test_per_class": 60}
    bundle, truth = blindspot.synth(seed=3, config=small)
    assert bundle.validate() == []
    assert len(bundle) == 360
    assert bundle.classes == ["A", "B"]

    with tempfile.TemporaryDirectory() as d:
        bundle.write(d)
        again = blindspot.load_bundle(d)
        assert again.instance_ids == bundle.instance_ids
        assert again.instance_matrix() == bundle.instance_matrix()

    s = blindspot.Session(bundle, seed=3)
    assert s.seed == 3
    overview = s.overview()
    assert overview["confusion"]["total"] == 120
    assert 0.5 < overview["accuracy"] <= 1.0

    s.select_pair(1, 0)
    names = truth["concept_names"]
    for j, name in enumerate(names):
        segs = [sid for sid, c in truth["segment_concepts"].items() if c == j]
        info = s.create_concept(name, segs)
        assert info["member_count"] == len(segs)
    rows = s.concept_overview()
    assert [r["name"] for r in rows] == names
    assert rows[0]["disparity"] > 0, rows[0]

    curve = s.curve("c1")
    assert curve["points"][0]["rbr"] == 1.0
    assert s.curve_csv("c1").splitlines()[0] == "n,rbr,disparity_after,acc_after,subgroup_after"
    assert s.recommend("c1", t=0.0)["n"] == 0
    n = s.recommend("c1")["n"]
    run = s.evaluate("c1", n)
    ctrl = s.evaluate("c1", n, control="random")
    assert ctrl["control"] == {"kind": "random", "seed": 3}
    applied = s.apply_debias("c1", n)
    assert applied["accuracy_after"] == run["acc_after"]
    assert len(s.overview()["debias_applied"]) == 1

    ws = s.segment_workspace({"cases": ["FN", "FP"]})
    assert all(seg["case"] in ("FN", "FP") for seg in ws["segments"])

    try:
        s.concept_detail("c99")
    except KeyError:
        pass
    else:
        raise AssertionError("missing concept should raise KeyError")
    try:
        s.create_concept("empty", [])
    except ValueError:
        pass
    else:
        raise AssertionError("empty concept should raise ValueError")

    out = blindspot.debias_vector([3.0, 4.0], [1.0, 0.0])
    assert out == [0.0, 4.0]
    assert math.isclose(blindspot.precision_at_k(["a", "b", "c"], ["a", "c"], 2), 0.5)
    print("smoke test passed:", blindspot.__version__, bundle)


if __name__ == "__main__":
    main()
