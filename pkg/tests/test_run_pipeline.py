import json

import numpy as np
import pandas as pd
import pytest

from federation import load_checkpoint
from model_core import ModelArch, init_params
from run_pipeline import main

SMALL = {
    "scenario": {"num_nodes": 4, "intervals_per_node": 100},
    "hyper": {"rounds": 5, "batch_size": 25},
    "meta": {"tasks_per_client": 1, "support_size": 5, "query_size": 5},
    "comparison": {"holdout_size": 20, "shift_support_size": 5, "shift_query_size": 20,
                   "max_adapt_steps": 10, "adapt_steps": 2},
    "seeds": [1, 2],
}


def write_config(tmp_path, document, name="exp.json"):
    path = tmp_path / name
    path.write_text(json.dumps(document))
    return str(path)


def deep_merge(base, **sections):
    merged = json.loads(json.dumps(base))
    for key, value in sections.items():
        if isinstance(value, dict):
            merged.setdefault(key, {}).update(value)
        else:
            merged[key] = value
    return merged


def test_generate_writes_dataset(tmp_path):
    config = write_config(tmp_path, SMALL)
    assert main(["generate", "--config", config, "--seed", "42", "--out", str(tmp_path / "a")]) == 0
    assert main(["generate", "--config", config, "--seed", "42", "--out", str(tmp_path / "b")]) == 0
    first = (tmp_path / "a" / "dataset_moderate.csv").read_bytes()
    assert first == (tmp_path / "b" / "dataset_moderate.csv").read_bytes()
    assert len(first.decode().splitlines()) == 401
    assert (tmp_path / "a" / "run_manifest.json").exists()


def test_invalid_config_exits_with_2(tmp_path, capsys):
    config = write_config(tmp_path, {"scenario": {"num_nodes": 0}})
    assert main(["generate", "--config", config, "--out", str(tmp_path)]) == 2
    assert "scenario.num_nodes" in capsys.readouterr().err


def test_missing_config_file_exits_with_2(tmp_path):
    assert main(["compare", "--config", str(tmp_path / "nope.json")]) == 2


def test_report_without_cells_exits_with_1(tmp_path, capsys):
    assert main(["report", "--out", str(tmp_path), "--no-plot"]) == 1
    assert "Error" in capsys.readouterr().err
    assert not (tmp_path / "run_manifest.json").exists()


def test_train_fedavg_writes_round_log(tmp_path):
    config = write_config(tmp_path, SMALL)
    out = tmp_path / "fedavg"
    assert main(["train", "--mode", "fedavg", "--config", config, "--seed", "3",
                 "--out", str(out)]) == 0
    log = pd.read_csv(out / "round_log_fedavg.csv")
    assert log["round"].tolist() == [1, 2, 3, 4, 5]
    _, round_index = load_checkpoint(str(out / "checkpoint_fedavg.bin"))
    assert round_index == 5
    events = (out / "events_fedavg.jsonl").read_text().splitlines()
    assert len(events) == 5 * 4 * 6


def test_train_metafl_with_zero_alpha_keeps_init(tmp_path):
    config = write_config(tmp_path, deep_merge(SMALL, hyper={"alpha": 0.0}))
    out = tmp_path / "meta"
    assert main(["train", "--mode", "metafl", "--config", config, "--seed", "3",
                 "--out", str(out)]) == 0
    params, _ = load_checkpoint(str(out / "checkpoint_metafl.bin"))
    init = init_params(ModelArch(input_dim=5, hidden_width=8), 3)
    np.testing.assert_allclose(params.values, init.values, rtol=0, atol=1e-12)


def test_train_checkpoints_are_reproducible(tmp_path):
    config = write_config(tmp_path, SMALL)
    for name in ("a", "b"):
        assert main(["train", "--mode", "centralized", "--config", config, "--seed", "8",
                     "--out", str(tmp_path / name)]) == 0
    a = (tmp_path / "a" / "checkpoint_centralized.bin").read_bytes()
    assert a == (tmp_path / "b" / "checkpoint_centralized.bin").read_bytes()


def test_train_from_generated_dataset(tmp_path):
    config = write_config(tmp_path, SMALL)
    assert main(["generate", "--config", config, "--seed", "5", "--out", str(tmp_path)]) == 0
    data = str(tmp_path / "dataset_moderate.csv")
    assert main(["train", "--mode", "fedavg", "--config", config, "--seed", "5",
                 "--data", data, "--out", str(tmp_path / "trained")]) == 0
    assert (tmp_path / "trained" / "checkpoint_fedavg.bin").exists()


def test_compare_and_report(tmp_path):
    config = write_config(tmp_path, SMALL)
    out_a, out_b = tmp_path / "a", tmp_path / "b"
    assert main(["compare", "--config", config, "--out", str(out_a)]) == 0
    assert main(["compare", "--config", config, "--out", str(out_b)]) == 0

    cells = pd.read_csv(out_a / "comparison_cells.csv")
    assert len(cells) == 3 * 3 * 2
    assert sorted(cells["seed"].unique()) == [1, 2]
    for name in ("comparison_cells.csv", "comparison_summary.json", "comparison_report.txt"):
        assert (out_a / name).read_bytes() == (out_b / name).read_bytes()

    summary = json.loads((out_a / "comparison_summary.json").read_text())
    for (variant, regime), group in cells.groupby(["variant", "regime"]):
        stored = summary["metrics"][variant][regime]["accuracy"]["mean"]
        assert stored == pytest.approx(group["accuracy"].mean(), rel=1e-8)

    before = (out_a / "comparison_summary.json").read_bytes()
    manifest = (out_a / "run_manifest.json").read_bytes()
    assert main(["report", "--out", str(out_a), "--no-plot"]) == 0
    assert (out_a / "comparison_summary.json").read_bytes() == before
    assert (out_a / "run_manifest.json").read_bytes() == manifest
    assert json.loads(manifest)["seeds"] == [1, 2]


def test_manifest_reproduces_run(tmp_path):
    config = write_config(tmp_path, SMALL)
    first = tmp_path / "first"
    assert main(["train", "--mode", "fedavg", "--config", config, "--seed", "6",
                 "--out", str(first)]) == 0
    manifest = str(first / "run_manifest.json")
    with open(manifest) as f:
        assert json.load(f)["train_mode"] == "fedavg"
    second = tmp_path / "second"
    assert main(["train", "--config", manifest, "--out", str(second)]) == 0
    for name in ("checkpoint_fedavg.bin", "round_log_fedavg.csv", "events_fedavg.jsonl"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_train_manifest_records_the_dataset(tmp_path):
    config = write_config(tmp_path, SMALL)
    assert main(["generate", "--config", config, "--seed", "5", "--out", str(tmp_path)]) == 0
    data = str(tmp_path / "dataset_moderate.csv")
    first = tmp_path / "first"
    assert main(["train", "--mode", "centralized", "--config", config, "--seed", "5",
                 "--data", data, "--out", str(first)]) == 0
    recorded = json.loads((first / "run_manifest.json").read_text())
    assert recorded["train_mode"] == "centralized" and recorded["train_data"] == data

    second = tmp_path / "second"
    assert main(["train", "--config", str(first / "run_manifest.json"), "--out", str(second)]) == 0
    name = "checkpoint_centralized.bin"
    assert (first / name).read_bytes() == (second / name).read_bytes()


def test_report_keeps_the_compare_manifest(tmp_path):
    config = write_config(tmp_path, deep_merge(SMALL, seeds=[4]))
    out = tmp_path / "run"
    assert main(["compare", "--config", config, "--out", str(out)]) == 0
    manifest = (out / "run_manifest.json").read_bytes()
    assert main(["report", "--out", str(out), "--no-plot"]) == 0
    assert (out / "run_manifest.json").read_bytes() == manifest
    assert json.loads(manifest)["scenario"]["num_nodes"] == 4
