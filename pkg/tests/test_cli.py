import csv

import numpy as np
import pytest

from xicorattn.cli import main
from xicorattn.forecast.checkpoint import load_checkpoint
from xicorattn.rankstats import CorrelationMatrix

TINY = ["--set", "model_dim=16", "--set", "n_head=2", "--set", "ff_dim=16", "--lookback", "24", "--horizon", "6",
        "--set", "patch_len=8", "--set", "stride=4", "--synth", "sine_mix", "--t-total", "400", "--n-vars", "2"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_sort_and_rank_output(capsys):
    assert main(["sort", "1.2,9.3,1.7,3.6"]) == 0
    out = capsys.readouterr().out
    assert "(1-based): 2 4 3 1" in out and "ascending sort: 1.2 1.7 3.6 9.3" in out
    assert main(["rank", "3 1 2", "--epsilon", "1e-3"]) == 0
    assert "1 3 2" in capsys.readouterr().out


def test_xi_command(tmp_path, capsys):
    assert main(["synth", "monotone_coupled", "--out", str(tmp_path / "m.csv")]) == 0
    assert main(["xi", str(tmp_path / "m.csv"), "--x", "0", "--y", "monotone_coupled_1"]) == 0
    assert "= 0.997002997" in capsys.readouterr().out
    assert main(["xi", str(tmp_path / "m.csv"), "--x", "nope", "--y", "0"]) == 2


def test_corr_matrix_files(tmp_path):
    assert main(["corr-matrix", "--out-dir", str(tmp_path), "--t-total", "500"]) == 0
    p = CorrelationMatrix.from_csv(tmp_path / "pearson.csv", "pearson")
    x = CorrelationMatrix.from_csv(tmp_path / "xi.csv", "xi")
    assert p.values.shape == x.values.shape == (4, 4)
    assert x.values[0, 1] == pytest.approx(498 / 501, abs=1e-9)


def test_missing_file_exits_2(tmp_path):
    assert main(["corr-matrix", str(tmp_path / "absent.csv")]) == 2


def test_train_eval_round_trip(tmp_path):
    out = tmp_path / "run"
    assert main(["train", *TINY, "--epochs", "1", "--out", str(out)]) == 0
    for name in ("model.ckpt", "loss_curve.csv", "metrics.csv", "config.txt"):
        assert (out / name).exists()
    curve = rows(out / "loss_curve.csv")
    assert [r["epoch"] for r in curve] == ["0", "1"]
    metrics = {r["split"]: r for r in rows(out / "metrics.csv")}
    assert set(metrics) == {"valid", "test"}

    eval_csv = tmp_path / "eval.csv"
    scores = tmp_path / "scores"
    assert main(["eval", str(out / "model.ckpt"), "--config", str(out / "config.txt"),
                 "--metrics-out", str(eval_csv), "--scores-out", str(scores)]) == 0
    ev = rows(eval_csv)
    assert ev[0]["horizon"] == "all" and len(ev) == 1 + 6
    assert float(ev[0]["mse"]) == pytest.approx(float(metrics["test"]["mse"]), rel=1e-12)
    w = np.loadtxt(scores / "weights_l0_h0.csv", delimiter=",", skiprows=1, usecols=range(1, 7))
    np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-9)
    assert load_checkpoint(out / "model.ckpt").attn_cfg.model_dim == 16


def test_config_file_and_overrides(tmp_path):
    cfg = tmp_path / "exp.txt"
    cfg.write_text("kernel = dot_product\nepochs = 0\n" + "".join(
        f"{a.split('=')[0]} = {a.split('=')[1]}\n" for a in TINY[1::2] if "=" in a))
    out = tmp_path / "run"
    assert main(["train", "--config", str(cfg), "--lookback", "24", "--horizon", "6", "--synth", "sine_mix",
                 "--t-total", "400", "--n-vars", "2", "--kernel", "xicor", "--out", str(out)]) == 0
    assert "kernel = xicor" in (out / "config.txt").read_text()
    assert main(["train", "--config", str(cfg), "--set", "bogus=1", "--out", str(out)]) == 2


def test_sweep_and_bench(tmp_path):
    assert main(["sweep", *TINY, "--epochs", "0", "--dims", "4,8", "--out", str(tmp_path / "s.csv")]) == 0
    assert [r["head_dim"] for r in rows(tmp_path / "s.csv")] == ["4", "8"]
    assert main(["sweep", *TINY, "--epochs", "0", "--dims", "5", "--out", str(tmp_path / "s.csv")]) == 2
    assert main(["bench", *TINY, "--lookbacks", "24,48", "--reps", "1", "--batch-size", "2",
                 "--out", str(tmp_path / "b.csv")]) == 0
    assert len(rows(tmp_path / "b.csv")) == 4


def test_synth_round_trip(tmp_path):
    assert main(["synth", "logistic_map", "--t-total", "450", "--n-vars", "3", "--out", str(tmp_path / "l.csv")]) == 0
    header, first = (tmp_path / "l.csv").read_text().splitlines()[:2]
    assert header == "date,logistic_map_0,logistic_map_1,logistic_map_2"
    assert first.startswith("2016-07-01 00:00:00,")
    assert main(["synth", "logistic_map", "--t-total", "10", "--out", str(tmp_path / "x.csv")]) == 2
