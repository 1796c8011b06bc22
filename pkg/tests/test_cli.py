import json
import math
import struct

import numpy as np
import pytest

from sharpnorm import cli, experiment, nn, persist
from sharpnorm.experiment import DegenerateInputError, minmax, pearson
from sharpnorm.trainer import mlp

from conftest import random_params

BLOBS_CFG = {
    "network": {"type": "mlp", "sizes": [6, 12, 3]},
    "data": {"source": "blobs", "blobs": {"num_classes": 3, "per_class": 20, "dim": 6, "spread": 1.0, "seed": 0}},
    "train": {"optimizer": {"name": "adam", "lr": 0.01}, "epochs": 15, "batch_size": 16},
    "measure": {"loss": "nsce", "trace_loss": "ce", "lambda": 0.5, "probes": {"num_probes": 5}, "fisher": True},
    "ratios": [0.0, 0.5, 1.0],
    "seeds": [0, 1],
}


@pytest.fixture
def blobs_config(tmp_path):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(BLOBS_CFG))
    return path


# -- checkpoints -----------------------------------------------------------------


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    net = nn.NetworkSpec([nn.Conv2d(1, 2, 2), nn.ReLU(), nn.Flatten(), nn.Dense(8, 3)], (1, 3, 3), 3)
    params = random_params(net, 0)
    params.flat[0] = 1e-310
    params.flat[1] = -0.0
    path = tmp_path / "m.ckpt"
    persist.save_checkpoint(path, params, {"seed": 4})
    loaded, manifest = persist.load_checkpoint(path)
    assert loaded.flat.tobytes() == params.flat.tobytes()
    assert manifest["seed"] == 4
    assert persist.network_from_dict(manifest["network"]).blocks == net.blocks


def test_checkpoint_header_layout(tmp_path):
    net = mlp([2, 2])
    path = tmp_path / "m.ckpt"
    persist.save_checkpoint(path, nn.ParamStore(net))
    raw = path.read_bytes()
    assert raw[:4] == b"SHRP"
    version, head_len = struct.unpack("<II", raw[4:12])
    assert version == 1
    assert len(raw) == 12 + head_len + 8 * net.total_params


def test_checkpoint_version_rejected(tmp_path):
    path = tmp_path / "m.ckpt"
    persist.save_checkpoint(path, nn.ParamStore(mlp([2, 2])))
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 2)
    path.write_bytes(bytes(raw))
    with pytest.raises(persist.CheckpointVersionError):
        persist.load_checkpoint(path)


def test_checkpoint_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "m.ckpt"
    persist.save_checkpoint(path, nn.ParamStore(mlp([2, 2])))
    raw = path.read_bytes()
    path.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(persist.CheckpointFormatError):
        persist.load_checkpoint(path)
    path.write_bytes(raw[:-3])
    with pytest.raises(persist.CheckpointFormatError):
        persist.load_checkpoint(path)


# -- tables and correlations -------------------------------------------------------


def test_pearson_examples():
    assert pearson([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5, abs=1e-12)
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-12)
    assert pearson([1, 2, 3], [3, 2, 1]) == pytest.approx(-1.0, abs=1e-12)
    with pytest.raises(DegenerateInputError):
        pearson([1, 2], [1, 2])
    with pytest.raises(DegenerateInputError):
        pearson([1, 1, 1], [1, 2, 3])


def test_minmax():
    np.testing.assert_allclose(minmax([2.0, 4.0, 3.0]), [0.0, 1.0, 0.5])
    with pytest.raises(DegenerateInputError):
        minmax([5.0, 5.0])


def test_table_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    rows = [{"run_id": i, "x": float(v), "tag": "a"} for i, v in enumerate(rng.standard_normal(5) * 10.0 ** rng.integers(-8, 8, 5))]
    persist.write_table(tmp_path / "t.csv", ["run_id", "x", "tag"], rows)
    back = persist.read_table(tmp_path / "t.csv")
    for r, b in zip(rows, back):
        assert b["run_id"] == r["run_id"] and b["tag"] == "a"
        assert b["x"] == pytest.approx(r["x"], rel=1e-15)


def test_report_perfect_correlation(tmp_path):
    rows = [{"gap": g, **{m: 3.0 * g + 1.0 for m in experiment.METRICS}} for g in (0.1, 0.4, 0.2, 0.9)]
    out = experiment.correlation_report(rows)
    for m in experiment.METRICS:
        assert out["pearson"][m] == pytest.approx(1.0, abs=1e-12)
        assert out["pearson_minmax"][m] == pytest.approx(1.0, abs=1e-12)
    assert min(out["rescaled"]["normalized"]) == 0.0 and max(out["rescaled"]["normalized"]) == 1.0


# -- commands -------------------------------------------------------------------


def test_train_then_measure(tmp_path, blobs_config):
    ckpt, report = tmp_path / "m.ckpt", tmp_path / "r.json"
    assert cli.main(["train", "--config", str(blobs_config), "--out", str(ckpt)]) == 0
    _, manifest = persist.load_checkpoint(ckpt)
    assert manifest["gap"] == manifest["train_accuracy"] - manifest["test_accuracy"]
    assert cli.main(["measure", "--ckpt", str(ckpt), "--probes", "5", "--out", str(report)]) == 0
    out = json.loads(report.read_text())
    for key in ("trace_sharpness", "frobenius_sq_sum", "matrix_normalized", "normalized", "fisher_rao"):
        assert math.isfinite(out[key])
    assert out["loss_id"] == "nsce" and out["lam"] == 0.5


def test_sweep_is_deterministic_and_reports(tmp_path, blobs_config):
    a, b, rep = tmp_path / "a.csv", tmp_path / "b.csv", tmp_path / "rep.json"
    assert cli.main(["sweep", "--config", str(blobs_config), "--out", str(a)]) == 0
    assert cli.main(["sweep", "--config", str(blobs_config), "--out", str(b), "--jobs", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()
    rows = persist.read_table(a)
    assert [r["run_id"] for r in rows] == list(range(6))
    assert list(rows[0]) == experiment.SWEEP_COLUMNS
    assert cli.main(["report", "--in", str(a), "--out", str(rep)]) == 0
    out = json.loads(rep.read_text())
    assert -1.0 <= out["pearson"]["normalized"] <= 1.0


def test_rescale_demo_values(capsys):
    assert cli.main(["rescale-demo"]) == 0
    out = json.loads(capsys.readouterr().out)
    first, last = out["steps"][0], out["steps"][-1]
    assert first["norms"][0]["frobenius_sq"] == 30.0
    assert first["norms"][1]["frobenius_sq"] == 174.0
    assert last["norms"][0]["frobenius_sq"] == pytest.approx(2500.05, rel=1e-12)
    assert last["norms"][1]["frobenius_sq"] == pytest.approx(7401.0, rel=1e-12)
    assert last["max_output_change"] <= 1e-9
    assert last["metrics"]["normalized"] == pytest.approx(first["metrics"]["normalized"], rel=0.05)


def test_missing_file_exit_code(tmp_path, capsys):
    assert cli.main(["measure", "--ckpt", str(tmp_path / "nope"), "--out", str(tmp_path / "r.json")]) == 2
    assert capsys.readouterr().err.startswith("error:io:")


def test_format_and_version_exit_codes(tmp_path, capsys):
    path = tmp_path / "m.ckpt"
    path.write_bytes(b"JUNKJUNKJUNK")
    assert cli.main(["measure", "--ckpt", str(path), "--out", str(tmp_path / "r.json")]) == 3
    persist.save_checkpoint(path, nn.ParamStore(mlp([2, 2])))
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", 9)
    path.write_bytes(bytes(raw))
    assert cli.main(["measure", "--ckpt", str(path), "--out", str(tmp_path / "r.json")]) == 4
    assert "error:version:" in capsys.readouterr().err


def test_degenerate_report_exit_code(tmp_path):
    table = tmp_path / "t.csv"
    persist.write_table(table, ["gap", "normalized"], [{"gap": 0.1, "normalized": 1.0}, {"gap": 0.2, "normalized": 2.0}])
    assert cli.main(["report", "--in", str(table), "--out", str(tmp_path / "r.json")]) == 5


def test_numeric_exit_code(tmp_path, blobs_config):
    ckpt = tmp_path / "m.ckpt"
    assert cli.main(["train", "--config", str(blobs_config), "--out", str(ckpt)]) == 0
    params, manifest = persist.load_checkpoint(ckpt)
    params.flat[0] = np.inf
    persist.save_checkpoint(ckpt, params, manifest)
    assert cli.main(["measure", "--ckpt", str(ckpt), "--probes", "2", "--out", str(tmp_path / "r.json")]) == 6


def test_bad_argument_exit_code(tmp_path, blobs_config):
    ckpt = tmp_path / "m.ckpt"
    cli.main(["train", "--config", str(blobs_config), "--out", str(ckpt)])
    assert cli.main(["measure", "--ckpt", str(ckpt), "--lambda", "-1", "--probes", "2", "--out", str(tmp_path / "r.json")]) == 7


def test_unknown_command_is_usage_error():
    with pytest.raises(SystemExit) as exc:
        cli.main(["frobnicate"])
    assert exc.value.code == 2
