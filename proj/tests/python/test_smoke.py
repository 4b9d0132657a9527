import json
import math

import pytest

import cohortlearn as cl

TINY = {
    "synthetic.n_patients": "80",
    "synthetic.visits_per_patient_mean": "2",
    "model.d": "8",
    "node_dim": "8",
    "word_dim": "8",
    "word_epochs": "3",
    "node_walks": "3",
    "model.n_cohorts": "4",
    "warmup_epochs": "1",
    "epochs": "1",
    "split": "0.6,0.2,0.2",
}


def test_metrics_match_hand_values():
    m = cl.compute_metrics([0.9, 0.8, 0.7, 0.6, 0.4, 0.3], [1, 1, 0, 1, 0, 0])
    assert m["auprc"] == pytest.approx(1 / 3 + 1 / 3 + 0.25)
    assert m["recall"] == 1.0
    assert m["n_samples"] == 6
    assert cl.average_precision([0.5] * 4, [1, 0, 1, 0]) == pytest.approx(0.5)


def test_jaccard_and_ari():
    assert cl.jaccard_similarity([1, 2, 3], [2, 3, 4]) == pytest.approx(0.5)
    assert cl.jaccard_similarity([3, 1, 1], [1, 3]) == 1.0
    assert cl.adjusted_rand_index([0, 0, 1, 1], [7, 7, 3, 3]) == pytest.approx(1.0)


def test_errors_become_value_errors():
    with pytest.raises(ValueError):
        cl.compute_metrics([], [])
    with pytest.raises(ValueError):
        cl.config_hash({"no.such.key": "1"})


def test_config_round_trip():
    text = cl.canonical_config({"model.gamma": "0.95"})
    assert "0.95" in text
    assert cl.config_hash({"gamma": "0.95"}) == cl.config_hash({"model.gamma": "0.95"})
    assert cl.config_hash() != cl.config_hash({"model.gamma": "0.95"})


def test_synthetic_summary():
    s = cl.synthetic_summary(TINY)
    assert s["n_patients"] == 80
    assert sum(s["split_sizes"]) == 80
    assert len(s["planted"]) == 80


def test_train_is_deterministic(tmp_path):
    a = cl.run(TINY, seed=3)
    b = cl.run(TINY, seed=3)
    assert a["report_json"] == b["report_json"]
    assert math.isfinite(a["test"]["auprc"])
    report = json.loads(a["report_json"])
    assert report["config_hash"] == a["config_hash"]

    out = tmp_path / "run"
    r = cl.run(TINY, out=str(out))
    assert cl.evaluate(str(out), "test")["auprc"] == r["test"]["auprc"]


def test_sweep_rows():
    rows = cl.sweep(TINY, [("model.K", ["2", "5"])])
    assert [r["status"] for r in rows] == ["ok", "ok"]
    assert rows[1]["values"] == [("model.K", "5")]
