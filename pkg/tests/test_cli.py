import csv
import json
import math

import pytest
from scipy.constants import c

from v2xtwin.cli import main


def run(capsys, *argv, env=None):
    code = main(list(argv), env=env or {})
    out, err = capsys.readouterr()
    return code, out, err


class TestPredict:
    def test_freespace_friis(self, capsys, tmp_path):
        code, out, _ = run(capsys, "predict", "--scenario", "freespace", "--out-dir", str(tmp_path))
        assert code == 0
        rec = json.loads(out)["links"][0]
        lam = c / 60e9
        assert rec["rssi_dbm"] == pytest.approx(10 + 20 * math.log10(lam / (40 * math.pi)), abs=1e-9)
        assert rec["tau_rt_ms"] is None
        assert {p.name for p in tmp_path.iterdir()} == {"prediction.json", "paths.csv", "manifest.json"}

    def test_stdout_deterministic(self, capsys, tmp_path):
        args = ("predict", "--scenario", "tokyo-analog", "--t", "10", "--ray-cap", "2000", "--out-dir", str(tmp_path))
        _, a, _ = run(capsys, *args)
        _, b, _ = run(capsys, *args)
        assert a == b

    def test_blocked_link_null(self, capsys, tmp_path):
        code, out, _ = run(capsys, "predict", "--scenario", "grazing-blocker", "--t", "5", "--di", "1",
                           "--out-dir", str(tmp_path))
        rec = json.loads(out)["links"][0]
        assert code == 0
        assert rec["los"] is False and rec["rssi_dbm"] is None and rec["no_signal"] is True

    def test_timing_flag(self, capsys, tmp_path):
        _, out, _ = run(capsys, "predict", "--scenario", "freespace", "--timing", "--out-dir", str(tmp_path))
        assert json.loads(out)["links"][0]["tau_rt_ms"] >= 0

    def test_poses_file(self, capsys, tmp_path):
        poses = {"scene": "freespace", "entities": [
            {"id": "a", "template": None, "pose": {"x": 0, "y": 0, "z": 1.5}},
            {"id": "b", "template": None, "pose": {"x": 100, "y": 0, "z": 1.5}}], "links": [["a", "b"]]}
        p = tmp_path / "poses.json"
        p.write_text(json.dumps(poses))
        code, out, _ = run(capsys, "predict", "--poses", str(p), "--incoherent", "--out-dir", str(tmp_path / "o"))
        rec = json.loads(out)["links"][0]
        assert code == 0 and rec["mode"] == "incoherent"
        assert rec["rssi_dbm"] == pytest.approx(-98.01, abs=0.01)

    def test_env_override(self, capsys, tmp_path):
        _, out, _ = run(capsys, "predict", "--scenario", "freespace", env={"V2XTWIN_OUT_DIR": str(tmp_path),
                                                                             "V2XTWIN_MODE": "incoherent"})
        assert json.loads(out)["links"][0]["mode"] == "incoherent"
        assert (tmp_path / "prediction.json").exists()

    @pytest.mark.parametrize("argv", [
        ("--scenario", "freespace", "--di", "9"),
        ("--scenario", "nope-not-here"),
        ("--scenario", "freespace", "--links", "a:zz"),
        (),
    ])
    def test_validation_errors_exit_2(self, capsys, tmp_path, argv):
        code, out, err = run(capsys, "predict", *argv, "--out-dir", str(tmp_path))
        assert code == 2
        assert err.startswith("error:")
        assert not list(tmp_path.iterdir())


def test_bench_mock(capsys, tmp_path):
    code, out, _ = run(capsys, "bench-di", "--scenario", "tokyo-analog", "--mock", "--repetitions", "2",
                       "--out-dir", str(tmp_path))
    assert code == 0
    summary = json.loads(out)
    assert set(summary["median_tau_rt_ms"]) == {"1", "2", "3", "4", "5"}
    rows = list(csv.DictReader(open(tmp_path / "bench_di.csv")))
    assert len(rows) == 10


def test_sweep_small(capsys, tmp_path):
    code, out, _ = run(capsys, "sweep-k", "--scenario", "grazing-blocker", "--k-grid", "0,0.5,1",
                       "--seeds", "3", "--instants", "5", "--di", "1", "--bootstrap", "200",
                       "--out-dir", str(tmp_path))
    assert code == 0
    doc = json.loads(out)
    assert [s["k"] for s in doc["summary"]] == [0.0, 0.5, 1.0]
    assert doc["summary"][0]["rmse_db"] == 0.0
    assert (tmp_path / "sweep.csv").exists() and (tmp_path / "sweep_meta.json").exists()


def test_sweep_bad_grid(capsys, tmp_path):
    code, _, _ = run(capsys, "sweep-k", "--scenario", "grazing-blocker", "--k-grid", "0,2",
                     "--seeds", "1", "--out-dir", str(tmp_path))
    assert code == 2


def test_replay_mock_engine(capsys, tmp_path):
    code, out, _ = run(capsys, "replay", "--scenario", "tokyo-analog", "--duration-s", "1",
                       "--engine", "mock", "--out-dir", str(tmp_path))
    assert code == 0
    rep = json.loads(out)
    assert rep["total"] >= 1
    assert rep["delivered"] == rep["total"]
    for name in ("events.jsonl", "predictions.csv", "latency.csv", "latency_summary.csv", "run_report.json",
                 "manifest.json"):
        assert (tmp_path / name).exists()


def test_replay_zero_duration(capsys, tmp_path):
    code, out, _ = run(capsys, "replay", "--scenario", "freespace", "--duration-s", "0", "--out-dir", str(tmp_path))
    assert code == 0
    assert json.loads(out)["total"] == 0
    assert (tmp_path / "predictions.csv").read_text().count("\n") == 1
