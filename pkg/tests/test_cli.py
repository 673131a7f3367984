import json
import os

import pytest
from click.testing import CliRunner

from risext.cli import (DEFAULTS, EXIT_CONFIG, EXIT_DATA, ConfigError,
                        file_sha256, load_config, main)


TINY_INI = """\
[system]
m = 1
l_h = 2
l_v = 2
k = 4

[dataset]
samples = 10
base_seed = 9
rate = 1/2

[model]
arch = euler
channels = 4
blocks = 1

[training]
epochs = 2
batch_size = 4
seed = 1
"""


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def tiny_ini(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI)
    return str(path)


def invoke(runner, args):
    return runner.invoke(main, args, catch_exceptions=False)


class TestLoadConfig:
    def test_defaults_without_file(self):
        cfg = load_config(None)
        assert cfg == DEFAULTS
        assert cfg is not DEFAULTS  # a copy, never the shared dict

    def test_merge_keeps_unset_defaults(self, tiny_ini):
        cfg = load_config(tiny_ini)
        assert cfg["system"]["m"] == "1"
        assert cfg["system"]["f_c"] == "2.4e9"          # untouched default
        assert cfg["training"]["lr0"] == "0.0005"

    def test_unknown_section(self, tmp_path):
        p = tmp_path / "bad.ini"
        p.write_text("[optimizer]\nlr = 3\n")
        with pytest.raises(ConfigError):
            load_config(str(p))

    def test_unknown_key(self, tmp_path):
        p = tmp_path / "bad.ini"
        p.write_text("[training]\nmomentum = 0.9\n")
        with pytest.raises(ConfigError):
            load_config(str(p))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "nope.ini"))


class TestGenData:
    def test_writes_dataset_and_resolved_config(self, runner, tiny_ini, tmp_path):
        out = tmp_path / "ds"
        res = invoke(runner, ["gen-data", "--config", tiny_ini,
                              "--out", str(out)])
        assert res.exit_code == 0, res.output
        assert (out / "dataset.bin").exists()
        assert (out / "resolved_config.ini").exists()
        assert "train=8 test=2" in res.output
        text = (out / "resolved_config.ini").read_text()
        assert "base_seed = 9" in text

    def test_deterministic_bytes(self, runner, tiny_ini, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            res = invoke(runner, ["gen-data", "--config", tiny_ini,
                                  "--out", str(out)])
            assert res.exit_code == 0
        assert file_sha256(a / "dataset.bin") == file_sha256(b / "dataset.bin")

    def test_seed_override_changes_bytes(self, runner, tiny_ini, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        invoke(runner, ["gen-data", "--config", tiny_ini, "--out", str(a)])
        invoke(runner, ["gen-data", "--config", tiny_ini, "--out", str(b),
                        "--seed", "10"])
        assert file_sha256(a / "dataset.bin") != file_sha256(b / "dataset.bin")

    def test_distribution_keys_change_dataset(self, runner, tiny_ini, tmp_path):
        sector = tmp_path / "sector.ini"
        sector.write_text(TINY_INI.replace(
            "rate = 1/2",
            "rate = 1/2\nazimuth_lo = 1.0472\nazimuth_hi = 1.5708"))
        a, b = tmp_path / "a", tmp_path / "b"
        invoke(runner, ["gen-data", "--config", tiny_ini, "--out", str(a)])
        res = invoke(runner, ["gen-data", "--config", str(sector),
                              "--out", str(b)])
        assert res.exit_code == 0, res.output
        assert file_sha256(a / "dataset.bin") != file_sha256(b / "dataset.bin")

    def test_unsupported_rate_is_data_error(self, runner, tiny_ini, tmp_path):
        res = runner.invoke(main, ["gen-data", "--config", tiny_ini,
                                   "--out", str(tmp_path / "x"),
                                   "--rate", "1/3"])
        assert res.exit_code == EXIT_DATA

    def test_bad_config_is_config_error(self, runner, tmp_path):
        p = tmp_path / "bad.ini"
        p.write_text("[nope]\nx = 1\n")
        res = runner.invoke(main, ["gen-data", "--config", str(p),
                                   "--out", str(tmp_path / "x")])
        assert res.exit_code == EXIT_CONFIG


class TestTrain:
    def gen(self, runner, tiny_ini, tmp_path):
        out = tmp_path / "ds"
        invoke(runner, ["gen-data", "--config", tiny_ini, "--out", str(out)])
        return str(out / "dataset.bin")

    def test_train_outputs(self, runner, tiny_ini, tmp_path):
        ds = self.gen(runner, tiny_ini, tmp_path)
        out = tmp_path / "run"
        res = invoke(runner, ["train", "--config", tiny_ini, "--dataset", ds,
                              "--out", str(out)])
        assert res.exit_code == 0, res.output
        assert "final test NMSE" in res.output
        assert (out / "history.csv").exists()
        assert (out / "model.ckpt").exists()
        assert (out / "resolved_config.ini").exists()
        lines = (out / "history.csv").read_text().splitlines()
        assert lines[0] == "epoch,train_loss,test_loss,nmse_db,lr"
        assert len(lines) == 3  # header + 2 epochs

    def test_rerun_identical_history(self, runner, tiny_ini, tmp_path):
        ds = self.gen(runner, tiny_ini, tmp_path)
        a, b = tmp_path / "ra", tmp_path / "rb"
        for out in (a, b):
            invoke(runner, ["train", "--config", tiny_ini, "--dataset", ds,
                            "--out", str(out)])
        assert file_sha256(a / "history.csv") == file_sha256(b / "history.csv")
        assert file_sha256(a / "model.ckpt") == file_sha256(b / "model.ckpt")

    def test_resume_from_checkpoint(self, runner, tiny_ini, tmp_path):
        ds = self.gen(runner, tiny_ini, tmp_path)
        first = tmp_path / "first"
        invoke(runner, ["train", "--config", tiny_ini, "--dataset", ds,
                        "--out", str(first), "--epochs", "1"])
        second = tmp_path / "second"
        res = invoke(runner, ["train", "--config", tiny_ini, "--dataset", ds,
                              "--out", str(second), "--epochs", "1",
                              "--resume", str(first / "model.ckpt")])
        assert res.exit_code == 0, res.output
        assert file_sha256(first / "model.ckpt") != \
            file_sha256(second / "model.ckpt")

    def test_resume_arch_mismatch(self, runner, tiny_ini, tmp_path):
        ds = self.gen(runner, tiny_ini, tmp_path)
        first = tmp_path / "first"
        invoke(runner, ["train", "--config", tiny_ini, "--dataset", ds,
                        "--out", str(first), "--epochs", "1"])
        res = runner.invoke(main, ["train", "--config", tiny_ini,
                                   "--dataset", ds,
                                   "--out", str(tmp_path / "x"),
                                   "--arch", "rk3",
                                   "--resume", str(first / "model.ckpt")])
        assert res.exit_code == EXIT_CONFIG

    def test_missing_dataset_is_data_error(self, runner, tiny_ini, tmp_path):
        res = runner.invoke(main, ["train", "--config", tiny_ini,
                                   "--dataset", str(tmp_path / "nope.bin"),
                                   "--out", str(tmp_path / "x")])
        assert res.exit_code == EXIT_DATA


def sniff_svg(path):
    head = path.read_bytes()[:500].lstrip()
    return head.startswith(b"<?xml") or head.startswith(b"<svg")


SWEEP_INI = TINY_INI + """
[sweep]
archs = rk3,cascaded
rates = 1/2,1/4
seeds = 1
"""


class TestSweep:
    def test_sweep_outputs(self, runner, tmp_path):
        ini = tmp_path / "sweep.ini"
        ini.write_text(SWEEP_INI)
        out = tmp_path / "sweep"
        res = invoke(runner, ["sweep", "--config", str(ini),
                              "--out", str(out), "--epochs", "1"])
        assert res.exit_code == 0, res.output
        rows = (out / "sweep.csv").read_text().splitlines()
        assert rows[0] == "arch,rate,seed,epoch,train_loss,test_loss,nmse_db,lr"
        assert len(rows) == 1 + 2 * 2  # 2 archs x 2 rates x 1 seed x 1 epoch
        assert sniff_svg(out / "sweep_nmse.svg")
        summary = json.loads((out / "sweep_summary.json").read_text())
        assert len(res.output.strip().splitlines()) >= 4
        assert summary

    def test_sweep_writes_per_cell_checkpoints(self, runner, tmp_path):
        ini = tmp_path / "sweep.ini"
        ini.write_text(TINY_INI + "\n[sweep]\narchs = euler\nrates = 1/2\n"
                       "seeds = 1\n")
        out = tmp_path / "sweep"
        res = invoke(runner, ["sweep", "--config", str(ini),
                              "--out", str(out), "--epochs", "2"])
        assert res.exit_code == 0, res.output
        from risext.network import load_model
        ckpts = [d for d in os.listdir(out) if d.endswith(".ckpt")]
        assert ckpts == ["euler_r1-2_s0.ckpt"]
        model = load_model(out / ckpts[0])
        assert model.spec.arch == "euler"

    def test_sweep_csv_matches_standalone_train(self, runner, tmp_path):
        """Sweep rows equal a standalone train with the sweep's cell seeds."""
        import csv as csv_mod
        from fractions import Fraction
        from risext.channel import SystemConfig
        from risext.data import generate_dataset, mix64
        from risext.network import Model, ModelSpec
        from risext.training import TrainingConfig, train

        ini = tmp_path / "sweep.ini"
        ini.write_text(TINY_INI + "\n[sweep]\narchs = euler\nrates = 1/2\n"
                       "seeds = 1\n")
        out = tmp_path / "sweep"
        res = invoke(runner, ["sweep", "--config", str(ini),
                              "--out", str(out), "--epochs", "2"])
        assert res.exit_code == 0, res.output
        with open(out / "sweep.csv", newline="") as f:
            rows = list(csv_mod.DictReader(f))

        sys_cfg = SystemConfig(m=1, l_h=2, l_v=2, k=4, f_c=2.4e9, bandwidth=2e7)
        ds = generate_dataset(sys_cfg, Fraction(1, 2), 10, mix64(9, 1))
        model_seed = mix64(9, 10_000)
        model = Model(ModelSpec(arch="euler", channels=4, blocks=1), model_seed)
        h = train(model, ds,
                  TrainingConfig(epochs=2, batch_size=4, seed=model_seed))
        assert [float(r["train_loss"]) for r in rows] == h.train_loss
        assert [float(r["nmse_db"]) for r in rows] == h.test_nmse_db


FREQGAP_INI = TINY_INI + """
[freqgap]
archs = euler
gaps_mhz = 0,5
seeds = 1
rate = 1/2
"""


class TestFreqgap:
    def test_freqgap_outputs(self, runner, tmp_path):
        ini = tmp_path / "fg.ini"
        ini.write_text(FREQGAP_INI)
        out = tmp_path / "fg"
        res = invoke(runner, ["freqgap", "--config", str(ini),
                              "--out", str(out), "--epochs", "1"])
        assert res.exit_code == 0, res.output
        rows = (out / "freqgap.csv").read_text().splitlines()
        assert len(rows) == 1 + 2  # 1 arch x 2 gaps x 1 seed x 1 epoch
        assert sniff_svg(out / "freqgap_nmse.svg")
        assert (out / "freqgap_summary.json").exists()


class TestVerify:
    def test_pristine_passes(self, runner):
        res = runner.invoke(main, ["verify"])
        assert res.exit_code == 0, res.output
        assert "FAIL" not in res.output
        assert res.output.count("[PASS]") == 5

    def test_corrupted_backward_detected(self, runner):
        res = runner.invoke(main, ["verify", "--corrupt-backward"])
        assert res.exit_code != 0
        assert "[FAIL] gradient check" in res.output
