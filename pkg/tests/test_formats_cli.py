import json

import numpy as np
import pytest

from smartmeter_ad.autoencoder import AutoencoderModel, ModelConfig, Window, reconstruct
from smartmeter_ad.cli import main, run_pipeline
from smartmeter_ad.config import RunConfig, load_config
from smartmeter_ad.detector import score_series
from smartmeter_ad.errors import ChecksumError, FormatVersionError, SchemaError
from smartmeter_ad.formats import (load_bundle, load_model, load_windows, read_raw_csv, read_report_csv,
                                   read_train_report, save_model, save_windows, write_report_csv,
                                   write_train_report)
from smartmeter_ad.preprocess import NormalizationStats
from smartmeter_ad.training import TrainConfig, TrainReport

FAST = ["--households", "2", "--days", "4", "--epochs", "2"]


def model_and_windows(seed=0):
    m = AutoencoderModel.init(ModelConfig(window_length=6, encoder_hidden=3, decoder_hidden=3),
                              np.random.default_rng(seed))
    x = np.random.default_rng(seed + 1).normal(size=(3, 6, 4))
    return m, [Window(x[k], 1_609_459_200 + 5400 * k, "hh0001") for k in range(3)]


def stats():
    return NormalizationStats(np.zeros(4), np.ones(4))


def test_model_round_trip_is_bit_identical(tmp_path):
    m, ws = model_and_windows()
    path = save_model(tmp_path / "m.model", m, stats(), TrainConfig(), np.array([0.1, 0.2]))
    m2, st, meta, val = load_model(path)
    np.testing.assert_array_equal(reconstruct(m2, ws), reconstruct(m, ws))
    assert meta["architecture"]["encoder_hidden"] == 3
    assert val.tolist() == [0.1, 0.2]
    # saving the loaded model gives the same bytes
    assert save_model(tmp_path / "m2.model", m2, st, TrainConfig(), val).read_bytes() == path.read_bytes()


def test_detect_after_reload_is_byte_identical(tmp_path):
    m, ws = model_and_windows()
    path = save_model(tmp_path / "m.model", m, stats())
    m2, *_ = load_model(path)
    a = write_report_csv(tmp_path / "a.csv", score_series(m, ws, 1.0, stats()))
    b = write_report_csv(tmp_path / "b.csv", score_series(m2, ws, 1.0, stats()))
    assert a.read_bytes() == b.read_bytes()
    rep = read_report_csv(a)
    assert len(rep) == 18 and rep.theta == 1.0 and rep.model == "bilstm"


def test_checksum_and_version_errors(tmp_path):
    m, _ = model_and_windows()
    path = save_model(tmp_path / "m.model", m, stats())
    body = json.loads(path.read_text())
    body["meta"]["name"] = "tampered"
    path.write_text(json.dumps(body))
    with pytest.raises(ChecksumError):
        load_model(path)
    body["format_version"] = 2
    path.write_text(json.dumps(body))
    with pytest.raises(FormatVersionError):
        load_model(path)
    broken = tmp_path / "broken.json"
    broken.write_text("{")
    with pytest.raises(SchemaError):
        load_bundle(broken, "smartmeter-ad/model")
    with pytest.raises(SchemaError):
        load_windows(path)  # a model archive is not a windows bundle


def test_windows_round_trip(tmp_path):
    _, ws = model_and_windows()
    back, meta = load_windows(save_windows(tmp_path / "w.json", ws, {"window_length": 6}))
    assert meta["window_length"] == 6
    for a, b in zip(ws, back):
        np.testing.assert_array_equal(a.values, b.values)
        assert (a.origin, a.household_id) == (b.origin, b.household_id)


def test_train_report_round_trip(tmp_path):
    rep = TrainReport([1.0, 0.5], [1.1, 0.6])
    assert read_train_report(write_train_report(tmp_path / "t.csv", rep)).rows() == rep.rows()


def test_raw_csv_schema_error_names_line_and_field(tmp_path):
    p = tmp_path / "raw.csv"
    p.write_text("timestamp,household_id,channel,value,tag\n"
                 "2021-01-01T00:00:00Z,hh0001,water,0.1,0\n"
                 "2021-01-01T00:15:00Z,hh0001,water,abc,0\n")
    with pytest.raises(SchemaError) as exc:
        read_raw_csv(p)
    assert exc.value.line == 3 and exc.value.field == "value" and "raw.csv:3" in str(exc.value)
    p.write_text("time,household_id,channel,value,tag\n")
    with pytest.raises(SchemaError) as exc:
        read_raw_csv(p)
    assert exc.value.field == "header"


def test_config_rejects_unknown_keys(tmp_path):
    p = tmp_path / "c.json"
    p.write_text('{\n  "seed": 3,\n  "train": {\n    "epochz": 5\n  }\n}\n')
    with pytest.raises(SchemaError) as exc:
        load_config(p)
    assert exc.value.line == 4 and exc.value.field == "train.epochz"
    p.write_text('{"seed": 3, "generate": {"n_days": 2}, "detect": {"q": 0.9}}')
    cfg = load_config(p).resolved()
    assert cfg.generate.seed == cfg.train.seed == 3 and cfg.detect.q == 0.9
    assert RunConfig().to_dict()["train"]["epochs"] == 200


def test_cli_exit_codes(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"bogus": 1}')
    assert main(["generate", "--config", str(p), "--out", str(tmp_path / "g")]) == 2
    assert "bogus" in capsys.readouterr().err
    assert main(["detect", str(tmp_path / "none.model"), str(tmp_path / "w.json"), "--out",
                 str(tmp_path / "r.csv")]) == 2
    assert main(["generate", "--days", "0", "--out", str(tmp_path / "g")]) == 2


def test_cli_stages_and_huge_theta(tmp_path):
    d = tmp_path
    assert main(["generate", *FAST[:4], "--seed", "1", "--out", str(d / "data")]) == 0
    assert (d / "data" / "config.resolved.json").exists()
    assert main(["preprocess", str(d / "data" / "train_raw.csv"), "--out", str(d / "w" / "train.json")]) == 0
    assert (d / "w" / "train_rejects.csv").read_text().startswith("line,field,reason,raw")
    assert main(["preprocess", str(d / "data" / "eval_raw.csv"), "--out", str(d / "w" / "eval.json")]) == 0
    assert main(["train", str(d / "w" / "train.json"), "--epochs", "2", "--out", str(d / "m")]) == 0
    assert main(["detect", str(d / "m" / "bilstm.model"), str(d / "w" / "eval.json"), "--theta", "1e300",
                 "--out", str(d / "r" / "report.csv")]) == 0
    rep = read_report_csv(d / "r" / "report.csv")
    assert (rep.labels == 1).all() and len(rep) == 2 * 4 * 96
    assert main(["evaluate", "--report", str(d / "r" / "report.csv"), "--truth", str(d / "data" / "eval_truth.csv"),
                 "--out", str(d / "e")]) == 0
    lines = (d / "e" / "metrics.csv").read_text().splitlines()
    assert lines[1].split(",")[:2] == ["bilstm", "abnormal_positive"]
    assert "undefined" in lines[1]  # nothing predicted abnormal, so precision is undefined
    assert main(["plot", "--train-report", str(d / "m" / "bilstm_train.csv"), "--roc", str(d / "e" / "roc.csv"),
                 "--report", str(d / "r" / "report.csv"), "--out", str(d / "f")]) == 0
    names = sorted(p.name for p in (d / "f").iterdir())
    assert {"bilstm_train_loss.svg", "bilstm_train_loss.csv", "roc.svg", "roc.csv",
            "bilstm_scores.svg", "bilstm_scores.csv"} <= set(names)


def _snapshot(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


def test_pipeline_smoke_and_determinism(tmp_path):
    cfg = RunConfig(seed=2).with_overrides(generate={"n_households": 2, "n_days": 4}, train={"epochs": 2},
                                           pipeline={"baseline": True})
    a = _snapshot(run_pipeline(cfg, tmp_path / "a"))
    b = _snapshot(run_pipeline(cfg, tmp_path / "b"))
    expected = {"models/bilstm.model", "models/lstm.model", "models/bilstm_train.csv", "reports/lstm_report.csv",
                "evaluation/metrics.csv", "evaluation/auc.csv", "evaluation/roc.csv", "figures/roc.svg",
                "figures/lstm_scores.svg", "figures/bilstm_train_loss.svg", "config.resolved.json"}
    assert expected <= set(a)
    assert a == b
