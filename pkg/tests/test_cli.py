import dataclasses
import json
import os

import numpy as np
import pytest

from ptcomplete.cli import main
from ptcomplete.cloud_io import read_cloud, write_cloud
from ptcomplete.config import dump_config
from ptcomplete.gradcheck import tiny_model_config


def run(argv, capsys):
    """Run the CLI in-process and return (exit code, stdout, stderr)."""
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    out = capsys.readouterr()
    return code, out.out, out.err


def error_line(err):
    lines = err.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    assert main(["gen-data", "--out", str(root), "--shapes", "box,cylinder", "--count", "2",
                 "--n-partial", "64", "--n-complete", "64", "--seed", "3"]) == 0
    return root


@pytest.fixture(scope="module")
def tiny_config_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.cfg"
    path.write_text(dump_config(tiny_model_config()) + "total_steps = 4\ncheckpoint_every = 2\n")
    return path


@pytest.fixture(scope="module")
def trained(dataset, tiny_config_file, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert main(["train", "--config", str(tiny_config_file), "--data", str(dataset), "--out", str(out)]) == 0
    return out


class TestGenData:
    def test_layout(self, dataset):
        recs = [json.loads(line) for line in (dataset / "manifest.jsonl").read_text().splitlines()]
        assert [r["id"] for r in recs] == ["box-0000", "box-0001", "cylinder-0000", "cylinder-0001"]
        assert all(r["mode"] in ("easy", "median", "hard") for r in recs)
        assert read_cloud(dataset / recs[0]["partial"]).count == 64

    def test_reproducible(self, dataset, tmp_path, capsys):
        run(["gen-data", "--out", str(tmp_path), "--shapes", "box,cylinder", "--count", "2",
             "--n-partial", "64", "--n-complete", "64", "--seed", "3"], capsys)
        for name in ("manifest.jsonl", "clouds/box-0001.partial.ply", "clouds/cylinder-0000.complete.ply"):
            assert (tmp_path / name).read_bytes() == (dataset / name).read_bytes()

    def test_unknown_shape(self, tmp_path, capsys):
        code, _, err = run(["gen-data", "--out", str(tmp_path), "--shapes", "blob"], capsys)
        assert code == 1 and error_line(err)["error"] == "CliError"


class TestTrain:
    def test_outputs(self, trained):
        names = sorted(p.name for p in trained.iterdir())
        assert names == ["config.txt", "final.ckpt", "step000002.ckpt", "step000004.ckpt", "train_log.jsonl"]
        log = [json.loads(line) for line in (trained / "train_log.jsonl").read_text().splitlines()]
        assert [r["step"] for r in log] == [1, 2, 3, 4]

    def test_print_config_applies_overrides(self, tiny_config_file, capsys):
        code, out, _ = run(["train", "--config", str(tiny_config_file), "--print-config", "channels=16",
                            "--seed", "9"], capsys)
        assert code == 0
        assert "channels = 16" in out and "seed = 9" in out

    def test_unknown_key(self, tiny_config_file, capsys):
        code, _, err = run(["train", "--config", str(tiny_config_file), "--print-config", "chanels=3"], capsys)
        assert code == 1 and "chanels" in error_line(err)["message"]

    def test_resume_continues(self, dataset, tiny_config_file, trained, tmp_path, capsys):
        code, out, _ = run(["train", "--config", str(tiny_config_file), "--data", str(dataset), "--out", str(tmp_path),
                            "--resume", str(trained / "step000002.ckpt")], capsys)
        assert code == 0
        log = [json.loads(line) for line in (tmp_path / "train_log.jsonl").read_text().splitlines()]
        full = [json.loads(line) for line in (trained / "train_log.jsonl").read_text().splitlines()]
        assert log == full[2:]
        assert (tmp_path / "final.ckpt").read_bytes() == (trained / "final.ckpt").read_bytes()


class TestEval:
    def test_table_rows(self, dataset, trained, capsys):
        code, out, _ = run(["eval", "--ckpt", str(trained / "final.ckpt"), "--data", str(dataset)], capsys)
        assert code == 0
        first_cells = [line.split()[0] for line in out.strip().splitlines()[1:] if not line.startswith("-")]
        assert first_cells == ["box", "cylinder", "Avg"]

    def test_json_and_out_dir(self, dataset, trained, tmp_path, capsys):
        code, out, _ = run(["eval", "--ckpt", str(trained / "final.ckpt"), "--data", str(dataset), "--json",
                            "--out", str(tmp_path)], capsys)
        assert code == 0
        rows = [json.loads(line) for line in out.splitlines()]
        assert {"cd_l1", "cd_l2", "fscore"} <= set(rows[-1])
        assert (tmp_path / "metrics.jsonl").read_text() == out
        assert sorted(p.name for p in tmp_path.iterdir()) == ["metrics.jsonl", "metrics.txt"]

    def test_mode_without_samples(self, dataset, trained, capsys):
        recs = [json.loads(line) for line in (dataset / "manifest.jsonl").read_text().splitlines()]
        missing = {"easy", "median", "hard"} - {r["mode"] for r in recs}
        if not missing:
            pytest.skip("every mode present in this draw")
        code, _, err = run(["eval", "--ckpt", str(trained / "final.ckpt"), "--data", str(dataset),
                            "--mode", sorted(missing)[0]], capsys)
        assert code == 1 and error_line(err)["error"] == "CliError"

    def test_missing_checkpoint(self, dataset, tmp_path, capsys):
        code, _, err = run(["eval", "--ckpt", str(tmp_path / "none.ckpt"), "--data", str(dataset)], capsys)
        assert code == 1 and error_line(err)["error"] == "CheckpointError"


class TestComplete:
    @pytest.mark.parametrize("fmt", ["ply", "xyz"])
    def test_writes_dense_cloud(self, dataset, trained, tmp_path, capsys, fmt):
        target = tmp_path / f"done.{fmt}"
        code, out, _ = run(["complete", "--ckpt", str(trained / "final.ckpt"),
                            "--in", str(dataset / "clouds/box-0000.partial.ply"), "--out", str(target)], capsys)
        assert code == 0
        n_dense = tiny_model_config().validate().n_dense
        assert read_cloud(target).count == n_dense == json.loads(out)["points"]
        assert os.listdir(tmp_path) == [target.name]

    def test_normalize_restores_frame(self, trained, tmp_path, capsys):
        pts = np.random.default_rng(0).standard_normal((64, 3)) * 5 + 40
        write_cloud(pts.astype(np.float32).astype(np.float64), tmp_path / "far.xyz")
        code, _, _ = run(["complete", "--ckpt", str(trained / "final.ckpt"), "--in", str(tmp_path / "far.xyz"),
                          "--out", str(tmp_path / "o.xyz"), "--normalize"], capsys)
        assert code == 0
        assert np.abs(read_cloud(tmp_path / "o.xyz").points.mean(axis=0) - 40).max() < 10

    def test_malformed_input(self, trained, tmp_path, capsys):
        (tmp_path / "bad.ply").write_bytes(b"ply\nformat ascii 1.0\nend_header\n")
        code, _, err = run(["complete", "--ckpt", str(trained / "final.ckpt"), "--in", str(tmp_path / "bad.ply"),
                            "--out", str(tmp_path / "o.ply")], capsys)
        assert code == 1 and error_line(err)["error"] == "MalformedHeaderError"
        assert not (tmp_path / "o.ply").exists()


class TestGradCheck:
    def test_single_op(self, capsys):
        code, out, _ = run(["grad-check", "--module", "softmax", "--seeds", "2"], capsys)
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[:2] == [line for line in lines[:2] if line.startswith("PASS softmax")]
        assert lines[-1].startswith("2/2")

    def test_unknown_module(self, capsys):
        code, _, err = run(["grad-check", "--module", "nope"], capsys)
        assert code == 1 and "nope" in error_line(err)["message"]


class TestUsage:
    def test_unknown_subcommand(self, capsys):
        code, _, err = run(["frobnicate"], capsys)
        assert code == 2 and error_line(err)["error"] == "UsageError"

    def test_missing_required(self, capsys):
        code, _, err = run(["complete", "--ckpt", "x"], capsys)
        assert code == 2 and error_line(err)["error"] == "UsageError"

    def test_bad_thread_env(self, monkeypatch, capsys):
        monkeypatch.setenv("PTCOMPLETE_THREADS", "zero")
        code, _, err = run(["grad-check", "--module", "relu"], capsys)
        assert code == 1 and "PTCOMPLETE_THREADS" in error_line(err)["message"]


def test_model_config_round_trips_through_dump(tmp_path):
    from ptcomplete.config import load_config

    cfg = dataclasses.replace(tiny_model_config(), use_template=False)
    (tmp_path / "c.cfg").write_text(dump_config(cfg))
    assert load_config(tmp_path / "c.cfg")[0] == cfg
