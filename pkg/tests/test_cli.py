import csv
import json

import numpy as np
import pytest

from fedmr.cli import main

BASE = {
    "dataset": {"kind": "circles", "n_per_class": 60, "test_per_class": 30},
    "partition": {"kind": "pcdd", "clients": 4, "classes_per_client": 2},
    "model": {"hidden": [16, 3]},
    "rounds": 3,
    "local_epochs": 1,
    "batch_size": 32,
}


def write_config(tmp_path, name="c.json", **kw):
    doc = {**BASE, "algorithm": "fedavg", "output": str(tmp_path / "out"), **kw}
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return p


def run_cli(args, capsys):
    code = main([str(a) for a in args])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_run_writes_reports_and_is_deterministic(tmp_path, capsys):
    cfg = write_config(tmp_path, metrics={"eigvar": True})
    code, out, _ = run_cli(["run", cfg, "--out", tmp_path / "a"], capsys)
    assert code == 0 and json.loads(out)["rounds"] == 3
    run_cli(["run", cfg, "--out", tmp_path / "b"], capsys)
    a = (tmp_path / "a" / "rounds.jsonl").read_bytes()
    assert a == (tmp_path / "b" / "rounds.jsonl").read_bytes()
    lines = a.decode().splitlines()
    assert len(lines) == 3
    summary = json.loads((tmp_path / "a" / "summary.json").read_text())
    assert {"best_accuracy", "final_accuracy", "rounds_to_target", "total_uplink_params"} <= set(summary)


def test_fedavg_and_fedmr_share_schema(tmp_path, capsys):
    run_cli(["run", write_config(tmp_path), "--out", tmp_path / "avg"], capsys)
    run_cli(["run", write_config(tmp_path, algorithm="fedmr"), "--out", tmp_path / "mr"], capsys)

    def schema(path):
        rows = [json.loads(line) for line in path.read_text().splitlines()]
        return [(sorted(r), [sorted(c) for c in r["client_losses"]]) for r in rows]

    assert schema(tmp_path / "avg" / "rounds.jsonl") == schema(tmp_path / "mr" / "rounds.jsonl")


def test_seed_flag_changes_the_run(tmp_path, capsys):
    cfg = write_config(tmp_path)
    run_cli(["run", cfg, "--out", tmp_path / "s0"], capsys)
    run_cli(["run", cfg, "--out", tmp_path / "s1", "--seed", 1], capsys)
    assert (tmp_path / "s0" / "rounds.jsonl").read_bytes() != (tmp_path / "s1" / "rounds.jsonl").read_bytes()


def test_invalid_config_exits_2_with_json_error(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({**BASE, "algoritm": "fedavg"}))
    code, _, err = run_cli(["run", p], capsys)
    assert code == 2
    payload = json.loads(err)
    assert payload["category"] == "config" and payload["key"] == "algoritm"


def test_runtime_failure_exits_1(tmp_path, capsys):
    p = write_config(tmp_path, dataset={"kind": "csv", "path": "missing.csv"})
    code, _, err = run_cli(["run", p], capsys)
    assert code == 1 and "message" in json.loads(err)


def test_dump_features_projects_to_sphere(tmp_path, capsys):
    code, out, _ = run_cli(["dump-features", write_config(tmp_path), "--out", tmp_path / "f", "--figures"], capsys)
    assert code == 0
    info = json.loads(out)
    with open(tmp_path / "f" / "features.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["x", "y", "z", "label"]
    pts = np.array([[float(v) for v in r[:3]] for r in rows[1:]])
    assert len(pts) == info["rows"] <= 4 * 30
    assert info["rows"] + info["skipped_zero_norm"] == 4 * 30
    assert np.all(np.abs(np.linalg.norm(pts, axis=1) - 1) <= 1e-9)
    assert (tmp_path / "f" / "features.png").stat().st_size > 0


def test_partition_stats(tmp_path, capsys):
    code, _, _ = run_cli(["partition-stats", write_config(tmp_path), "--out", tmp_path / "p", "--figures"], capsys)
    assert code == 0
    with open(tmp_path / "p" / "partition.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["client", "c0", "c1", "c2", "c3"]
    counts = np.array([[int(v) for v in r[1:]] for r in rows[1:]])
    assert counts.sum(axis=0).tolist() == [60] * 4
    assert all((row > 0).sum() == 2 for row in counts)
    assert (tmp_path / "p" / "partition.png").exists()


def test_run_figures(tmp_path, capsys):
    code, _, _ = run_cli(["run", write_config(tmp_path), "--out", tmp_path / "r", "--figures"], capsys)
    assert code == 0 and (tmp_path / "r" / "accuracy.png").exists()


@pytest.mark.slow
def test_verify_passes_and_mutation_fails(capsys):
    code, out, _ = run_cli(["verify"], capsys)
    assert code == 0 and "FAIL" not in out
    code, out, err = run_cli(["verify", "--std-floor", "0"], capsys)
    assert code == 1
    assert "lemma1-degenerate-batch" in json.loads(err)["message"]
