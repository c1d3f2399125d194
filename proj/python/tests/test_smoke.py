import json
import math

import numpy as np
import pytest

import cazsl


def test_variants():
    assert cazsl.variants == ["FCN", "FCN+CC", "FCN+CM", "FCN+CM+L2Reg", "FCN+CM+NeuralReg"]


def test_kernel_matches_numpy():
    pts = np.array([0.0, 1.0, 2.0, 4.0])
    k = cazsl.rbf_kernel_matrix(pts, 2.0, 0.5)
    d = pts[:, None] - pts[None, :]
    np.testing.assert_allclose(k, 4.0 * np.exp(-d**2 / 1.0), rtol=1e-14)


def test_cholesky_reconstructs():
    a = np.array([[4.0, 2.0], [2.0, 3.0]])
    low = cazsl.cholesky(a)
    np.testing.assert_allclose(low @ low.T, a, atol=1e-12)
    assert low[0, 1] == 0.0


def test_simulated_dataset_shapes():
    d = cazsl.simulate_gp_dataset(seed=1, tasks=5, samples_per_task=20)
    assert d["x"].shape == (100, 3)
    assert d["y"].shape == (100, 1)
    assert d["contexts"].shape == (100, 2)
    assert ((d["contexts"] >= 0.1) & (d["contexts"] < 10)).all()
    again = cazsl.simulate_gp_dataset(seed=1, tasks=5, samples_per_task=20)
    assert np.array_equal(d["y"], again["y"])


def test_metrics():
    assert cazsl.rmse(np.zeros((4, 1)), np.array([[1.0], [-1.0], [2.0], [0.0]])) == pytest.approx(
        math.sqrt(1.5)
    )
    assert round(cazsl.rmse_to_mm(0.222), 2) == 4.87
    assert round(cazsl.rmse_to_mm(0.330), 2) == 7.23
    with pytest.raises(cazsl.ConfigError):
        cazsl.rmse_to_mm(-1.0)


def test_push_round_trip(tmp_path):
    path = tmp_path / "pushes.jsonl"
    cazsl.write_synthetic_push_dataset(str(path), seed=2, objects=4, pushes_per_object=3)
    d = cazsl.load_push_dataset(str(path))
    assert d["x"].shape == (12, 3)
    assert d["contexts"].shape == (12, 36)
    assert len(set(d["object_ids"])) == 4
    visual = tmp_path / "visual.jsonl"
    cazsl.write_synthetic_push_dataset(str(visual), seed=2, objects=2, pushes_per_object=2, visual=True)
    assert cazsl.load_push_dataset(str(visual))["contexts"].shape == (4, 1, 32, 32)
    assert cazsl.load_push_dataset(str(visual), context="indicator")["contexts"].shape == (4, 36)
    with pytest.raises(cazsl.DataError):
        cazsl.load_push_dataset(str(tmp_path / "missing.jsonl"))


def test_tiny_experiment_is_deterministic():
    config = {
        "experiment": "gp-regression",
        "variants": ["FCN", "FCN+CM"],
        "seeds": [0],
        "hidden": [8, 8, 8, 8],
        "train": {"epochs": 2},
        "gp": {"train_tasks": 4, "test_tasks": 2, "samples_per_task": 8},
    }
    a = cazsl.run_experiment(config)
    b = cazsl.run_experiment(json.dumps(config))
    assert a["csv"] == b["csv"]
    assert a["csv"].startswith("experiment,variant,seed,rmse,std,dist_mm\n")
    assert [r["variant"] for r in a["report"]["reports"]] == ["FCN", "FCN+CM"]
    with pytest.raises(cazsl.ConfigError):
        cazsl.run_experiment({"variants": ["FCN+XX"]})


def test_gradcheck_passes():
    r = cazsl.gradcheck(seeds=1)
    assert r["passed"], r["summary"]
    assert r["failures"] == 0
