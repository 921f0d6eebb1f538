import csv
import json
import subprocess
import sys

import pytest

from vaecodec.cli import main, read_config, UsageError
from vaecodec.io.checkpoint import load_checkpoint, save_checkpoint
from vaecodec.io.images import save_image

TINY_FLAGS = ["--latent-channels", "4", "--hidden-channels", "8", "--patch-size", "16",
              "--batch-size", "2", "--steps", "3", "--desk-count", "2", "--desk-size", "32", "--pool", "8"]


@pytest.fixture
def workspace(tmp_path, tiny_model, desk_images):
    save_checkpoint(tiny_model, tmp_path / "m.ckpt")
    save_image(tmp_path / "a.png", desk_images[0])
    return tmp_path


class TestHappyPath:
    def test_compress_then_decompress(self, workspace, capsys):
        w = workspace
        assert main(["compress", "--model", str(w / "m.ckpt"), "--in", str(w / "a.png"), "--out", str(w / "a.nvc")]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["bpp"] > 0
        assert main(["decompress", "--model", str(w / "m.ckpt"), "--in", str(w / "a.nvc"), "--out", str(w / "b.png")]) == 0
        assert (w / "b.png").exists()

    def test_inspect_container_and_checkpoint(self, workspace, capsys):
        w = workspace
        main(["compress", "--model", str(w / "m.ckpt"), "--in", str(w / "a.png"), "--out", str(w / "a.nvc")])
        capsys.readouterr()
        assert main(["inspect", str(w / "a.nvc")]) == 0
        header = json.loads(capsys.readouterr().out)
        assert header["magic"] == "NVC1" and header["width"] == 64
        assert main(["inspect", str(w / "m.ckpt")]) == 0
        assert json.loads(capsys.readouterr().out)["architecture"]["latent_channels"] == 8

    def test_evaluate(self, workspace):
        w = workspace
        assert main(["evaluate", "--model", str(w / "m.ckpt"), "--images", str(w), "--csv", str(w / "e.csv")]) == 0
        rows = list(csv.reader((w / "e.csv").open()))
        assert [r[0] for r in rows] == ["name", "a.png", "mean"]

    def test_train_writes_checkpoint_and_telemetry_plot(self, tmp_path):
        out = tmp_path / "t.ckpt"
        tel = tmp_path / "tel.csv"
        assert main(["train", *TINY_FLAGS, "--out", str(out), "--telemetry", str(tel)]) == 0
        model, _ = load_checkpoint(out)
        assert model.spec.latent_channels == 4 and model.metadata["steps"] == 3
        assert len(list(csv.reader(tel.open()))) == 4
        assert (tmp_path / "tel.png").read_bytes()[:4] == b"\x89PNG"

    def test_sweep_writes_one_row_per_grid_point_and_plot(self, tmp_path):
        rd = tmp_path / "rd.csv"
        flags = [f for f in TINY_FLAGS]
        flags[flags.index("--hidden-channels") + 1] = "128"
        code = main(["sweep", *flags, "--grid", "4,8,16,32,64,128", "--csv", str(rd), "--eval-count", "1",
                     "--models-dir", str(tmp_path / "models")])
        assert code == 0
        rows = list(csv.DictReader(rd.open()))
        assert [int(r["latent_channels"]) for r in rows] == [4, 8, 16, 32, 64, 128]
        assert (tmp_path / "rd.png").read_bytes()[:4] == b"\x89PNG"
        assert len(list((tmp_path / "models").glob("*.ckpt"))) == 6

    def test_train_from_image_directory(self, tmp_path, desk_images):
        data = tmp_path / "data"
        data.mkdir()
        save_image(data / "x.png", desk_images[0])
        assert main(["train", *TINY_FLAGS, "--data", str(data), "--out", str(tmp_path / "t.ckpt")]) == 0


class TestConfig:
    def test_file_then_flags_override(self, tmp_path):
        cfg = tmp_path / "c.txt"
        cfg.write_text("# desk run\nlambda = 0.01\nlatent_channels = 4  # narrow\nhidden_channels=8\n"
                       "patch_size = 16\nbatch_size = 2\nsteps = 5\n")
        assert read_config(cfg)["lmbda"] == 0.01
        out = tmp_path / "t.ckpt"
        assert main(["train", "--config", str(cfg), "--steps", "2", "--desk-count", "1", "--desk-size", "32",
                     "--pool", "4", "--out", str(out)]) == 0
        model, _ = load_checkpoint(out)
        assert model.metadata["steps"] == 2 and model.metadata["lambda"] == 0.01

    @pytest.mark.parametrize("text", ["bogus = 3\n", "steps\n", "steps = many\n"])
    def test_bad_config_is_usage_error(self, tmp_path, text):
        cfg = tmp_path / "c.txt"
        cfg.write_text(text)
        with pytest.raises(UsageError):
            read_config(cfg)
        assert main(["train", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 1


class TestExitCodes:
    def test_unknown_flag(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["compress", "--frobnicate"])
        assert info.value.code == 1
        assert "usage" in capsys.readouterr().err

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as info:
            main(["explode"])
        assert info.value.code == 1

    def test_invalid_config_value(self, tmp_path):
        assert main(["train", *TINY_FLAGS, "--lambda", "-1", "--out", str(tmp_path / "x")]) == 1

    def test_bad_grid(self, tmp_path):
        assert main(["sweep", *TINY_FLAGS, "--grid", "4,x", "--csv", str(tmp_path / "r.csv")]) == 1

    def test_mismatched_model(self, workspace, tiny_dataset, capsys):
        from dataclasses import replace
        from conftest import TINY
        from vaecodec.training import train
        w = workspace
        save_checkpoint(train(replace(TINY, steps=1, seed=5), tiny_dataset, log_every=0), w / "other.ckpt")
        main(["compress", "--model", str(w / "m.ckpt"), "--in", str(w / "a.png"), "--out", str(w / "a.nvc")])
        capsys.readouterr()
        code = main(["decompress", "--model", str(w / "other.ckpt"), "--in", str(w / "a.nvc"), "--out", str(w / "b.png")])
        assert code == 2
        assert "ModelKeyError" in capsys.readouterr().err

    @pytest.mark.parametrize("target", ["missing.png", "bad.png"])
    def test_unreadable_input(self, workspace, target):
        (workspace / "bad.png").write_bytes(b"nope")
        code = main(["compress", "--model", str(workspace / "m.ckpt"), "--in", str(workspace / target),
                     "--out", str(workspace / "x.nvc")])
        assert code == 2

    def test_corrupt_checkpoint(self, workspace):
        data = bytearray((workspace / "m.ckpt").read_bytes())
        data[100] ^= 1
        (workspace / "m.ckpt").write_bytes(bytes(data))
        code = main(["compress", "--model", str(workspace / "m.ckpt"), "--in", str(workspace / "a.png"),
                     "--out", str(workspace / "x.nvc")])
        assert code == 2

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "vaecodec", "--help"], capture_output=True, text=True)
        assert proc.returncode == 0 and "compress" in proc.stdout
