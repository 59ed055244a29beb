import csv
import io
import json
import subprocess
import sys
from importlib import resources

import jsonschema
import pytest

from oracles import hand_param_count
from voxplan.cli import main

SCHEMA = json.loads(resources.files("voxplan").joinpath("schemas/estimate.schema.json").read_text())


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestExitCodes:
    def test_no_command(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == 2

    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["estimate", "--nope"])
        assert exc.value.code == 2

    def test_missing_dims(self, capsys):
        code, _, err = run(capsys, "estimate")
        assert code == 2 and "usage" in err and "--dims" in err

    def test_bad_dims(self, capsys):
        assert run(capsys, "estimate", "--dims", "8x8")[0] == 2

    def test_runtime_failure(self, capsys, tmp_path):
        code, _, err = run(capsys, "train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o"))
        assert code == 1 and "error" in err

    def test_console_script(self):
        proc = subprocess.run([sys.executable, "-m", "voxplan", "estimate", "--dims", "8x8x8", "--depth", "1"], capture_output=True, text=True)
        assert proc.returncode == 0 and "grand_peak_bytes" in proc.stdout


class TestEstimate:
    def test_small_param_bytes(self, capsys):
        code, out, _ = run(capsys, "estimate", "--batch", "1", "--dims", "8x8x8", "--depth", "1", "--filters", "4", "--json")
        doc = json.loads(out)
        assert code == 0
        assert doc["param_count"] == 4897 == hand_param_count(1, 1, 1, 4)
        assert doc["mem_report"]["param_bytes"] == 4897 * 4

    def test_full_scale_scenario(self, capsys):
        code, out, err = run(
            capsys, "estimate", "--batch", "16", "--dims", "240x240x155", "--depth", "4", "--filters", "64",
            "--optimizer", "adam", "--train-samples", "484", "--epochs", "25", "--seconds-per-image", "30", "--json",
        )  # fmt: skip
        assert code == 0
        doc = json.loads(out)
        jsonschema.validate(doc, SCHEMA)
        assert 100 * 10**9 <= doc["mem_report"]["grand_peak_bytes"] <= 2 * 10**12
        assert doc["time_estimate"]["seconds_total"] == 363000
        assert doc["time_estimate"]["steps_per_epoch"] == 31
        assert doc["requested_dims"] == [240, 240, 155] and doc["spec"]["input_dims"] == [240, 240, 160]
        assert "padded" in err

    def test_strict_dims(self, capsys):
        code, _, err = run(capsys, "estimate", "--dims", "10x8x8", "--depth", "2", "--strict-dims")
        assert code == 2 and "d=10" in err

    def test_partial_time_flags(self, capsys):
        assert run(capsys, "estimate", "--dims", "8x8x8", "--epochs", "3")[0] == 2

    def test_table_output(self, capsys):
        code, out, _ = run(capsys, "estimate", "--dims", "8x8x8", "--depth", "1")
        assert code == 0 and "trainable parameters" in out

    def test_dump_graph_and_manifest(self, capsys, tmp_path):
        g, m = tmp_path / "g.json", tmp_path / "m.json"
        assert run(capsys, "estimate", "--dims", "8x8x8", "--depth", "1", "--dump-graph", str(g), "--manifest", str(m))[0] == 0
        assert json.loads(g.read_text())["nodes"][0]["kind"] == "input"
        manifest = json.loads(m.read_text())
        assert manifest["command"] == "estimate" and manifest["config"]["dims"] == "8x8x8"
        assert {"tool", "version", "seed", "started_at", "finished_at"} <= set(manifest)

    def test_config_file_and_override(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"dims": "8x8x8", "depth": 1, "filters": 4, "json": True}))
        out = json.loads(run(capsys, "estimate", "--config", str(cfg))[1])
        assert out["param_count"] == 4897
        out = json.loads(run(capsys, "estimate", "--config", str(cfg), "--filters", "2")[1])
        assert out["param_count"] == hand_param_count(1, 1, 1, 2)

    def test_config_unknown_key(self, capsys, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"dims": "8x8x8", "bogus": 1}))
        with pytest.raises(SystemExit) as exc:
            main(["estimate", "--config", str(cfg)])
        assert exc.value.code == 2


class TestBenchMem:
    def test_batch_sweep(self, capsys, tmp_path):
        out = tmp_path / "mem.csv"
        code, _, _ = run(capsys, "bench-mem", "--sweep", "batch", "--values", "1,2,4", "--dims", "16x16x16", "--out", str(out), "--plot")
        assert code == 0
        r = rows(out.read_text())
        assert len(r) == 3
        a = [int(x["activation_peak_bytes"]) for x in r]
        assert a[1] == 2 * a[0] and a[2] == 4 * a[0]
        assert out.with_suffix(".png").stat().st_size > 0
        assert (tmp_path / "mem.manifest.json").exists()

    def test_measure_within_ten_percent(self, capsys):
        code, out, _ = run(capsys, "bench-mem", "--sweep", "spatial", "--values", "16x16x16", "--depth", "2", "--filters", "4", "--measure")
        assert code == 0
        (row,) = rows(out)
        assert abs(int(row["measured_peak_bytes"]) / int(row["grand_peak_bytes"]) - 1) <= 0.10

    def test_invalid_point_listed(self, capsys):
        code, out, err = run(capsys, "bench-mem", "--sweep", "spatial", "--values", "16,10", "--depth", "2")
        assert code == 1 and "10" in err
        assert len(rows(out)) == 1

    def test_empty_values(self, capsys):
        assert run(capsys, "bench-mem", "--sweep", "batch", "--values", "")[0] == 2


class TestBenchSpeed:
    def test_single_thread(self, capsys, tmp_path):
        out = tmp_path / "speed.csv"
        code, _, _ = run(capsys, "bench-speed", "--threads", "1", "--steps", "1", "--warmup", "0", "--dims", "8x8x8", "--depth", "1", "--filters", "2", "--out", str(out))
        assert code == 0
        (r,) = rows(out.read_text())
        assert list(r) == ["threads", "step_seconds_mean", "images_per_second", "speedup_vs_serial"]
        assert float(r["speedup_vs_serial"]) == 1.0

    def test_losses_identical_across_threads(self, capsys, tmp_path):
        out = tmp_path / "speed.csv"
        code, _, _ = run(capsys, "bench-speed", "--threads", "1,2,4", "--steps", "2", "--warmup", "0", "--dims", "8x8x8", "--depth", "1", "--filters", "2", "--out", str(out))
        assert code == 0
        manifest = json.loads((tmp_path / "speed.manifest.json").read_text())
        traces = manifest["loss_trace"]
        assert traces["1"] == traces["2"] == traces["4"] and manifest["losses_identical"]

    def test_bad_threads(self, capsys):
        assert run(capsys, "bench-speed", "--threads", "0")[0] == 2


class TestPhantomAndEval:
    def test_phantom_rerun_bitwise(self, capsys, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for d in (a, b):
            assert run(capsys, "phantom", "--count", "10", "--dims", "16x16x16", "--seed", "5", "--out", str(d))[0] == 0
        files = sorted(p.name for p in a.glob("*.vxv"))
        assert len(files) == 10
        assert all((a / f).read_bytes() == (b / f).read_bytes() for f in files)

    def test_phantom_from_manifest(self, capsys, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        run(capsys, "phantom", "--count", "3", "--dims", "16x16x16", "--seed", "8", "--out", str(a))
        assert run(capsys, "phantom", "--config", str(a / "manifest.json"), "--out", str(b))[0] == 0
        assert all((a / f.name).read_bytes() == f.read_bytes() for f in b.glob("*.vxv"))

    def test_phantom_bad_geometry(self, capsys, tmp_path):
        assert run(capsys, "phantom", "--dims", "8x8x8", "--out", str(tmp_path))[0] == 2

    def test_eval_identical(self, capsys, tmp_path):
        run(capsys, "phantom", "--count", "4", "--dims", "16x16x16", "--out", str(tmp_path / "p"))
        out = tmp_path / "eval.csv"
        code, _, _ = run(capsys, "eval", "--pred", str(tmp_path / "p"), "--truth", str(tmp_path / "p"), "--out", str(out))
        assert code == 0
        r = rows(out.read_text())
        assert len(r) == 4 and all(float(x["dice"]) == 1.0 and float(x["accuracy"]) == 1.0 for x in r)

    def test_eval_shape_mismatch_named(self, capsys, tmp_path):
        run(capsys, "phantom", "--count", "1", "--dims", "16x16x16", "--out", str(tmp_path / "p"))
        run(capsys, "phantom", "--count", "1", "--dims", "16x16x20", "--out", str(tmp_path / "t"))
        code, _, err = run(capsys, "eval", "--pred", str(tmp_path / "p"), "--truth", str(tmp_path / "t"))
        assert code == 1 and "phantom_000" in err


TRAIN_FLAGS = ("--dims", "8x8x8", "--depth", "1", "--filters", "2", "--phantom-count", "6", "--train-count", "4", "--test-count", "2", "--epochs", "2")


class TestTrain:
    def test_outputs(self, capsys, tmp_path):
        out = tmp_path / "run"
        code, _, _ = run(capsys, "train", *TRAIN_FLAGS, "--out", str(out), "--plot", "--save-predictions")
        assert code == 0
        r = rows((out / "metrics.csv").read_text())
        assert len(r) == 2 and list(r[0]) == ["epoch", "train_loss", "train_dice", "test_dice", "train_acc", "test_acc", "step_seconds_mean"]
        assert (out / "checkpoint.vxck").read_bytes()[:4] == b"VXCK"
        assert (out / "training.png").exists()
        assert len(list((out / "predictions").glob("*.vxv"))) == 2

    def test_zero_lr_flat(self, capsys, tmp_path):
        out = tmp_path / "run"
        assert run(capsys, "train", *TRAIN_FLAGS, "--epochs", "3", "--lr", "0", "--out", str(out))[0] == 0
        r = rows((out / "metrics.csv").read_text())
        for key in ("train_dice", "test_dice", "train_acc", "test_acc"):
            assert len({x[key] for x in r}) == 1

    def test_manifest_rerun_bitwise(self, capsys, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run(capsys, "train", *TRAIN_FLAGS, "--out", str(a))[0] == 0
        assert run(capsys, "train", "--config", str(a / "manifest.json"), "--out", str(b))[0] == 0
        assert (a / "checkpoint.vxck").read_bytes() == (b / "checkpoint.vxck").read_bytes()

        def untimed(path):
            return [{k: v for k, v in x.items() if k != "step_seconds_mean"} for x in rows(path.read_text())]

        assert untimed(a / "metrics.csv") == untimed(b / "metrics.csv")

    def test_threads_from_environment(self, capsys, tmp_path, monkeypatch):
        monkeypatch.setenv("VOXPLAN_THREADS", "2")
        out = tmp_path / "run"
        assert run(capsys, "train", *TRAIN_FLAGS, "--epochs", "1", "--out", str(out))[0] == 0
        assert json.loads((out / "manifest.json").read_text())["config"]["threads"] == 2
        monkeypatch.setenv("VOXPLAN_THREADS", "zero")
        assert run(capsys, "train", *TRAIN_FLAGS, "--out", str(out))[0] == 2

    def test_split_too_large(self, capsys, tmp_path):
        assert run(capsys, "train", *TRAIN_FLAGS, "--train-count", "10", "--out", str(tmp_path))[0] == 2

    def test_data_directory(self, capsys, tmp_path):
        run(capsys, "phantom", "--count", "4", "--dims", "8x8x8", "--radius", "1,3", "--out", str(tmp_path / "d"))
        code, _, _ = run(capsys, "train", "--data", str(tmp_path / "d"), "--depth", "1", "--filters", "2",
                         "--train-count", "2", "--test-count", "2", "--epochs", "1", "--out", str(tmp_path / "r"))  # fmt: skip
        assert code == 0
        manifest = json.loads((tmp_path / "r" / "manifest.json").read_text())
        assert sorted(manifest["train_names"] + manifest["test_names"]) == [f"phantom_00{i}" for i in range(4)]
