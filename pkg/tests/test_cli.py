"""Command-line driver: exit codes, artifact determinism, and the
wiring between verbs."""

import json

import numpy as np
import pytest

from proxslim.checkpoint import load_checkpoint, save_checkpoint
from proxslim.cli import main
from proxslim.data import load_pnsd, save_pnsd
from proxslim.network import Dataset


@pytest.fixture(scope="module")
def toy(tmp_path_factory):
    d = tmp_path_factory.mktemp("toy")
    path = d / "toy.pnsd"
    rc = main(["gen-data", "--classes", "3", "--per-class", "8",
               "--dims", "2,14,14", "--seed", "3", "--out", str(path)])
    assert rc == 0
    return path


def train_args(toy, out, *extra):
    return ["train", "--data", str(toy), "--out", str(out),
            "--epochs", "2", "--widths", "3,4", "--batch-size", "8",
            "--seed", "5", *extra]


def test_gen_data_writes_loadable_file(toy):
    data = load_pnsd(toy)
    assert data.n == 24 and data.classes == 3
    assert data.x.shape == (24, 2, 14, 14)


def test_train_artifacts_are_deterministic(toy, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(train_args(toy, a)) == 0
    assert main(train_args(toy, b)) == 0
    assert (a / "checkpoint.pnsc").read_bytes() == \
        (b / "checkpoint.pnsc").read_bytes()
    assert (a / "train_log.jsonl").read_bytes() == \
        (b / "train_log.jsonl").read_bytes()
    assert (a / "train_log.txt").read_bytes() == (b / "train_log.txt").read_bytes()
    rows = [json.loads(line)
            for line in (a / "train_log.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in rows] == [0, 1]
    assert all("loss" in r and "zero_gamma" in r for r in rows)


def test_train_baseline_variant_tags_checkpoint(toy, tmp_path):
    out = tmp_path / "base"
    assert main(train_args(toy, out, "--variant", "baseline",
                           "--lambda", "0.01")) == 0
    ck = load_checkpoint(out / "checkpoint.pnsc")
    assert ck.extra["algorithm"] == "subgradient"


def test_train_fullbatch_mode_forces_batch_size(toy, tmp_path):
    out = tmp_path / "fb"
    assert main(train_args(toy, out, "--mode", "deterministic-fullbatch")) == 0
    ck = load_checkpoint(out / "checkpoint.pnsc")
    assert ck.hp.batch_size == 24
    assert ck.extra["algorithm"] == "proximal"


def test_eval_and_prune_and_finetune(toy, tmp_path, capsys):
    out = tmp_path / "run"
    assert main(train_args(toy, out)) == 0
    ck_path = str(out / "checkpoint.pnsc")

    assert main(["eval", "--checkpoint", ck_path, "--data", str(toy)]) == 0
    text = capsys.readouterr().out
    assert "accuracy" in text

    pr = tmp_path / "pruned"
    assert main(["prune", "--checkpoint", ck_path, "--data", str(toy),
                 "--out", str(pr)]) == 0
    assert (pr / "compact.pnsc").exists()
    assert (pr / "prune.jsonl").exists()
    assert (pr / "prune_layers.txt").exists()

    ft = tmp_path / "ft"
    assert main(["finetune", "--checkpoint", ck_path, "--data", str(toy),
                 "--epochs", "2", "--out", str(ft)]) == 0
    rows = [json.loads(line)
            for line in (ft / "finetune_log.jsonl").read_text().splitlines()]
    assert len(rows) == 2 and "accuracy" in rows[0]


def test_prune_refusal_exit_code(toy, tmp_path):
    out = tmp_path / "run"
    assert main(train_args(toy, out)) == 0
    ck = load_checkpoint(out / "checkpoint.pnsc")
    ck.state.gamma[:3] = 0.0  # empty the first block entirely
    dead = tmp_path / "dead.pnsc"
    save_checkpoint(dead, ck.net, ck.state, ck.hp, ck.epoch, ck.seed)
    rc = main(["prune", "--checkpoint", str(dead), "--data", str(toy),
               "--out", str(tmp_path / "nope")])
    assert rc == 4


def test_certify_requires_fullbatch_mode(toy, tmp_path):
    rc = main(["certify", "--data", str(toy), "--out", str(tmp_path / "c"),
               "--epochs", "3"])
    assert rc == 1


def test_certify_short_run(toy, tmp_path):
    out = tmp_path / "cert"
    rc = main(["certify", "--data", str(toy), "--out", str(out),
               "--mode", "deterministic-fullbatch", "--epochs", "6",
               "--min-epochs", "3", "--widths", "3,4",
               "--lipschitz-samples", "4", "--seed", "2"])
    assert rc == 0
    rows = [json.loads(line)
            for line in (out / "diagnostics.jsonl").read_text().splitlines()]
    assert len(rows) == 6
    for key in ("F_value", "decrease_lhs", "decrease_rhs", "subgrad_norm",
                "subgrad_bound", "L_estimate"):
        assert key in rows[0]
    summary = json.loads((out / "certification.jsonl").read_text())
    assert summary["decrease_violations"] == 0
    assert summary["relative_error_violations"] == 0
    assert (out / "checkpoint.pnsc").exists()


def test_sweep_runs_grid(toy, tmp_path):
    out = tmp_path / "sweep"
    rc = main(["sweep", "--data", str(toy), "--out", str(out),
               "--epochs", "1", "--widths", "3,4",
               "--grid", "lam=0.001,0.01;seed=0,1"])
    assert rc == 0
    rows = [json.loads(line)
            for line in (out / "sweep.jsonl").read_text().splitlines()]
    assert len(rows) == 4
    assert {(r["lam"], r["seed"]) for r in rows} == \
        {("0.001", "0"), ("0.001", "1"), ("0.01", "0"), ("0.01", "1")}


def test_usage_errors_exit_1(toy, tmp_path):
    assert main(["train", "--data", str(toy), "--out", str(tmp_path / "x"),
                 "--mode", "upside-down"]) == 1
    assert main(["train", "--out", str(tmp_path / "y")]) == 1  # no data
    assert main(["gen-data", "--dims", "3,4", "--out",
                 str(tmp_path / "z.pnsd")]) == 1
    assert main(["sweep", "--data", str(toy), "--out", str(tmp_path / "s"),
                 "--grid", "lam"]) == 1


def test_numeric_failure_exits_2_and_saves_progress(toy, tmp_path):
    # an inf pixel surfaces as NumericError inside the training loop
    data = load_pnsd(toy)
    x = data.x.copy()
    x[0, 0, 0, 0] = np.inf
    bad = tmp_path / "bad.pnsd"
    save_pnsd(bad, Dataset(x=x, y=data.y, classes=data.classes))

    out = tmp_path / "boom"
    rc = main(["train", "--data", str(bad), "--out", str(out),
               "--epochs", "3", "--widths", "3,4", "--seed", "0"])
    assert rc == 2
    ck = load_checkpoint(out / "checkpoint.pnsc")
    assert ck.extra.get("aborted") is True
    assert np.isfinite(ck.state.w).all()  # last good state, not the wreck
