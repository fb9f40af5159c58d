import json
import os

import yaml

from cli import main


def write_config(temp_dir, manifest, **extra):
    data = {
        "name": "tiny",
        "manifest": manifest,
        "baseline_epochs": 2,
        "epochs": 2,
        "step_cap": 30,
        "trainer": {"batch_size": 8, "eval_every": 10, "hash_dim": 1024},
        "output_dir": os.path.join(temp_dir, "runs"),
    }
    data.update(extra)
    path = os.path.join(temp_dir, "experiment.yaml")
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(data, f)
    return path


def read_report(path):
    with open(path, encoding="utf-8") as f:
        report = json.load(f)
    report["metadata"].pop("created_at")
    return report


def test_synth_writes_manifest(temp_dir):
    out = os.path.join(temp_dir, "clue")
    assert main(["synth", "--preset", "clue_like", "--scale", "0.01", "--out", out]) == 0
    assert os.path.isfile(os.path.join(out, "manifest.json"))
    assert os.path.isfile(os.path.join(out, "tnews.train.jsonl"))


def test_synth_rejects_bad_settings(temp_dir):
    out = os.path.join(temp_dir, "bad")
    assert main(["synth", "--preset", "clue_like", "--scale", "0.01", "--label-noise", "0.7", "--out", out]) == 1


def test_train_writes_outputs(tiny_manifest, temp_dir):
    """report.json / tables.md / curves.csv を書き出す"""
    config = write_config(temp_dir, tiny_manifest)
    assert main(["train", "--config", config, "--method", "class_balanced"]) == 0

    run_dir = os.path.join(temp_dir, "runs", "seed_0", "class_balanced")
    for name in ("report.json", "tables.md", "curves.csv"):
        assert os.path.isfile(os.path.join(run_dir, name))
    assert os.path.isfile(os.path.join(temp_dir, "runs", "seed_0", "baselines.json"))

    report = read_report(os.path.join(run_dir, "report.json"))
    assert report["method"] == "class_balanced"
    assert [task["task_id"] for task in report["tasks"]] == ["sent", "pair", "topic"]
    with open(os.path.join(run_dir, "curves.csv"), encoding="utf-8") as f:
        assert f.readline() == "step,task_id,split,metric\n"


def test_train_is_reproducible(tiny_manifest, temp_dir):
    """作成時刻以外は再実行で同一"""
    config = write_config(temp_dir, tiny_manifest)
    report_path = os.path.join(temp_dir, "runs", "seed_0", "two_stage", "report.json")
    assert main(["train", "--config", config]) == 0
    first = read_report(report_path)
    assert main(["train", "--config", config]) == 0
    assert read_report(report_path) == first


def test_seed_override(tiny_manifest, temp_dir):
    config = write_config(temp_dir, tiny_manifest)
    assert main(["train", "--config", config, "--method", "instance_balanced", "--seed", "3"]) == 0
    report = read_report(os.path.join(temp_dir, "runs", "seed_3", "instance_balanced", "report.json"))
    assert report["seed"] == 3


def test_multiple_seeds_write_aggregate(tiny_manifest, temp_dir):
    config = write_config(temp_dir, tiny_manifest)
    assert main(["train", "--config", config, "--method", "instance_balanced", "--seeds", "0", "1"]) == 0
    with open(os.path.join(temp_dir, "runs", "instance_balanced", "aggregate.json"), encoding="utf-8") as f:
        assert json.load(f)["seeds"] == [0, 1]


def test_exit_codes(tiny_manifest, temp_dir):
    """設定エラーは1、データエラーは2"""
    assert main(["train", "--config", os.path.join(temp_dir, "missing.yaml")]) == 1
    config = write_config(temp_dir, tiny_manifest)
    assert main(["train", "--config", config, "--method", "few_shot"]) == 1
    assert main(["compare", "--config", config, "--methods", "unimax"]) == 1

    missing_data = write_config(temp_dir, os.path.join(temp_dir, "nowhere", "manifest.json"))
    assert main(["train", "--config", missing_data]) == 2


def test_baseline_command(tiny_manifest, temp_dir):
    config = write_config(temp_dir, tiny_manifest)
    assert main(["baseline", "--config", config]) == 0
    single = read_report(os.path.join(temp_dir, "runs", "seed_0", "single_task", "report.json"))
    assert single["num_models"] == 3
    assert single["overhead"] == 1.0
    assert single["metadata"]["rng"] == "numpy.PCG64"
    assert single["metadata"]["saturation_rule"] == "dev_argmax"
    assert set(single["metadata"]["saturation"]) == {"sent", "pair", "topic"}


def test_report_rerenders_table(tiny_manifest, temp_dir):
    config = write_config(temp_dir, tiny_manifest)
    assert main(["train", "--config", config, "--method", "class_balanced"]) == 0
    run_dir = os.path.join(temp_dir, "runs", "seed_0", "class_balanced")
    table = os.path.join(run_dir, "tables.md")
    with open(table, encoding="utf-8") as f:
        original = f.read()
    os.remove(table)

    assert main(["report", "--run", run_dir]) == 0
    with open(table, encoding="utf-8") as f:
        assert f.read() == original


def test_report_missing_run(temp_dir):
    assert main(["report", "--run", os.path.join(temp_dir, "nope")]) == 2


def test_compare_writes_every_method(tiny_manifest, temp_dir):
    config = write_config(temp_dir, tiny_manifest)
    assert main(["compare", "--config", config, "--methods", "instance_balanced,class_balanced"]) == 0

    seed_dir = os.path.join(temp_dir, "runs", "seed_0")
    with open(os.path.join(seed_dir, "tables.md"), encoding="utf-8") as f:
        table = f.read()
    assert "| Single-task |" in table
    assert "| Instance-balanced |" in table
    assert "| Class-balanced |" in table
    for name in ("instance_balanced", "class_balanced"):
        assert os.path.isfile(os.path.join(seed_dir, name, "report.json"))


def test_stale_baselines_are_recomputed(tiny_manifest, temp_dir):
    """別設定で書かれたbaselines.jsonは使い回さない"""
    report_path = os.path.join(temp_dir, "runs", "seed_0", "two_stage", "report.json")
    assert main(["train", "--config", write_config(temp_dir, tiny_manifest, baseline_epochs=1)]) == 0
    assert main(["train", "--config", write_config(temp_dir, tiny_manifest, baseline_epochs=3)]) == 0
    reused = read_report(report_path)

    fresh_dir = os.path.join(temp_dir, "fresh")
    fresh = write_config(temp_dir, tiny_manifest, baseline_epochs=3, output_dir=fresh_dir)
    assert main(["train", "--config", fresh]) == 0
    assert read_report(os.path.join(fresh_dir, "seed_0", "two_stage", "report.json")) == reused


def test_explicit_stale_baselines_is_a_config_error(tiny_manifest, temp_dir):
    config = write_config(temp_dir, tiny_manifest, baseline_epochs=1)
    assert main(["baseline", "--config", config]) == 0
    baselines = os.path.join(temp_dir, "runs", "seed_0", "baselines.json")
    assert main(["train", "--config", config, "--baselines", baselines]) == 0

    changed = write_config(temp_dir, tiny_manifest, baseline_epochs=3)
    assert main(["train", "--config", changed, "--baselines", baselines]) == 1
