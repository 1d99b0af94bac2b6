import json
import math

import numpy as np
import pytest

from mimo_lab import cli
from mimo_lab.channel import save_matrix
from mimo_lab.cli import ConfigError, ExperimentConfig, main
from mimo_lab.linalg import NumericalFailure

RATE_CFG = {"channel": "rayleigh", "n_r": 2, "n_t": 2, "schemes": ["svd", "gpcbd"], "constellation": 4,
            "snr_grid_db": [0, 10], "trials": 4, "uses_per_trial": 8, "master_seed": 3}


def write_cfg(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


class TestRate:
    def test_csv_header_and_rows(self, tmp_path):
        assert main(["rate", "--config", write_cfg(tmp_path, RATE_CFG), "--out", str(tmp_path), "--threads", "1"]) == 0
        lines = (tmp_path / "rate.csv").read_text().splitlines()
        assert lines[0] == "scheme,snr_db,rate,std_err,trials,eccn_mean"
        assert [l.split(",")[:2] for l in lines[1:]] == [["SVD", "0"], ["SVD", "10"], ["GP-CBD", "0"], ["GP-CBD", "10"]]

    def test_byte_identical_reruns(self, tmp_path, monkeypatch):
        cfg = write_cfg(tmp_path, RATE_CFG)
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["rate", "--config", cfg, "--out", str(a), "--plot", "--threads", "1"]) == 0
        monkeypatch.setenv("MIMO_LAB_THREADS", "3")
        assert main(["rate", "--config", cfg, "--out", str(b), "--plot"]) == 0
        for name in ("rate.csv", "rate.svg"):
            assert (a / name).read_bytes() == (b / name).read_bytes()
        assert (a / "rate.svg").read_bytes().lstrip().startswith(b"<?xml")

    def test_seed_flag_changes_output(self, tmp_path):
        cfg = write_cfg(tmp_path, RATE_CFG)
        main(["rate", "--config", cfg, "--out", str(tmp_path / "a"), "--seed", "1", "--threads", "1"])
        main(["rate", "--config", cfg, "--out", str(tmp_path / "b"), "--seed", "2", "--threads", "1"])
        assert (tmp_path / "a/rate.csv").read_text() != (tmp_path / "b/rate.csv").read_text()

    def test_no_partial_files(self, tmp_path):
        main(["rate", "--config", write_cfg(tmp_path, RATE_CFG), "--out", str(tmp_path / "o"), "--plot", "--threads", "2"])
        assert sorted(p.name for p in (tmp_path / "o").iterdir()) == ["rate.csv", "rate.svg"]


class TestOtherCommands:
    def test_eccn(self, tmp_path):
        cfg = {"schemes": ["svd", "gmd", "gpcbd"], "n_r": 4, "n_t": 4, "snr_grid_db": [0, 20], "trials": 10}
        assert main(["eccn", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path), "--plot"]) == 0
        lines = (tmp_path / "eccn.csv").read_text().splitlines()
        assert lines[0] == "scheme,snr_db,eccn_mean,eccn_p50,eccn_p95" and len(lines) == 7
        gmd = [l for l in lines if l.startswith("GMD")]
        assert all(float(l.split(",")[2]) == pytest.approx(1.0) for l in gmd)

    def test_ber(self, tmp_path):
        cfg = {"schemes": ["gpcbd"], "n_r": 2, "n_t": 2, "constellation": 4, "snr_grid_db": [40],
               "frames": 3, "info_bits_per_frame": 100, "output": "b.csv"}
        assert main(["ber", "--config", write_cfg(tmp_path, cfg), "--out", str(tmp_path)]) == 0
        lines = (tmp_path / "b.csv").read_text().splitlines()
        assert lines[0] == "scheme,snr_db,frames,bit_errors,ber,frame_errors,fer"
        assert lines[1] == "GP-CBD,40,3,0,0,0,0"


class TestDecompose:
    def test_identity(self, tmp_path, capsys):
        path = tmp_path / "eye.txt"
        save_matrix(np.eye(2), path)
        for scheme in ("svd", "cbd", "gmd", "gpcbd"):
            assert main(["decompose", "--matrix", str(path), "--scheme", scheme, "--snr-db", "10", "--m", "16"]) == 0
            out = capsys.readouterr().out
            assert "ECCN: 1\n" in out
            resid = float(out.split("reconstruction residual: ")[1].split()[0])
            assert resid <= 1e-12

    def test_theorem2_example(self, tmp_path, capsys):
        path = tmp_path / "d.txt"
        save_matrix(np.diag([2.0, 1.0]), path)
        assert main(["decompose", "--matrix", str(path), "--scheme", "gpcbd", "--snr-db", "40", "--m", "4"]) == 0
        out = capsys.readouterr().out
        assert "pairs: (1,2)" in out
        diag = out.split("B diag: [")[1].split("]")[0].split(", ")
        np.testing.assert_allclose([float(x) for x in diag], [math.sqrt(2)] * 2, rtol=1e-9)

    def test_missing_file(self, tmp_path, capsys):
        assert main(["decompose", "--matrix", str(tmp_path / "nope.txt"), "--scheme", "svd"]) == 2
        assert "matrix_path" in capsys.readouterr().err

    def test_missing_matrix_flag(self):
        assert main(["decompose"]) == 2


class TestErrors:
    def test_unknown_scheme_names_key(self, tmp_path, capsys):
        cfg = write_cfg(tmp_path, {**RATE_CFG, "schemes": ["svd", "ucd"]})
        assert main(["rate", "--config", cfg, "--out", str(tmp_path)]) == 2
        assert "schemes" in capsys.readouterr().err
        assert not (tmp_path / "rate.csv").exists()

    def test_unknown_key(self, tmp_path, capsys):
        assert main(["rate", "--config", write_cfg(tmp_path, {"colour": 1}), "--out", str(tmp_path)]) == 2
        assert "colour" in capsys.readouterr().err

    def test_bad_json(self, tmp_path):
        p = tmp_path / "bad.json"
        p.write_text("{")
        assert main(["rate", "--config", str(p)]) == 2

    def test_bad_subcommand(self):
        assert main(["plot"]) == 2

    def test_gmd_rate_rejected(self, tmp_path):
        assert main(["rate", "--config", write_cfg(tmp_path, {"schemes": ["gmd"]})]) == 2

    def test_numerical_failure_exit_3(self, tmp_path, monkeypatch, capsys):
        def boom(cfg, threads):
            raise NumericalFailure("did not converge")
        monkeypatch.setattr(cli, "run_sweep", boom)
        assert main(["rate", "--config", write_cfg(tmp_path, RATE_CFG), "--out", str(tmp_path)]) == 3
        assert "numerical failure" in capsys.readouterr().err

    def test_bad_thread_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("MIMO_LAB_THREADS", "many")
        assert main(["rate", "--config", write_cfg(tmp_path, RATE_CFG), "--out", str(tmp_path)]) == 2


class TestConfig:
    def test_defaults(self):
        cfg = ExperimentConfig.from_dict({}, "rate")
        assert cfg.schemes == ("svd", "cbd", "gpcbd") and cfg.m == 16 and cfg.channel.n_r == 8

    def test_kron_preset(self):
        cfg = ExperimentConfig.from_dict({"channel": "kron095", "n_r": 4, "n_t": 4}, "eccn")
        assert cfg.channel.kind == "KroneckerCorrelated" and cfg.channel.rho_tx == 0.95

    @pytest.mark.parametrize("raw, key", [
        ({"trials": 0}, "trials"),
        ({"trials": True}, "trials"),
        ({"constellation": 8}, "constellation"),
        ({"power": "greedy"}, "power"),
        ({"channel": "cdl"}, "channel"),
        ({"channel": "file"}, "channel_path"),
        ({"snr_grid_db": ["a"]}, "snr_grid_db"),
        ({"command": "ber"}, "command"),
    ])
    def test_rejections(self, raw, key):
        with pytest.raises(ConfigError) as exc:
            ExperimentConfig.from_dict(raw, "rate")
        assert exc.value.key == key
