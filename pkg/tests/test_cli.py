import json

import numpy as np
import pytest

from conftest import random_stream
from hybridsnn.cli import main
from hybridsnn.config import RunConfig
from hybridsnn.errors import ConfigError
from hybridsnn.events import save_events
from hybridsnn.hybrid import PredictionTrace, TraceEntry
from hybridsnn.metrics import CameraModel, Pose, project, write_pose_csv


@pytest.fixture(scope="module")
def events(tmp_path_factory):
    d = tmp_path_factory.mktemp("ev")
    s = random_stream(np.random.default_rng(0), 20_000, 32, 32, 1_000_000)
    save_events(s, d / "ev.bin", "binary")
    save_events(s, d / "ev.csv", "csv")
    return d


def test_config_defaults_and_validation(tmp_path):
    cfg = RunConfig()
    assert cfg.lif.tau == 3 and cfg.lif.v_th == 1 and cfg.hybrid.decay == 0.8
    assert cfg.hybrid.snn_dt_ms == 10 and cfg.hybrid.ann_rate_hz == 10
    assert cfg.hybrid.hist_bins == 10 and cfg.hybrid.hist_count == 7500 and cfg.train.lr == 5e-5
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.from_dict({"lif": {"tau": 3, "tua": 2}})
    with pytest.raises(ConfigError, match="unknown"):
        RunConfig.from_dict({"paths": {}, "extra": 1})
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"lif": {"tau": 0.1}}).lif_params()
    with pytest.raises(ConfigError):
        RunConfig.from_dict({"hybrid": {"ann_rate_hz": 7}}).hybrid_config()
    (tmp_path / "c.json").write_text("{not json")
    with pytest.raises(ConfigError):
        RunConfig.load(tmp_path / "c.json")
    cfg = RunConfig.from_dict({"energy": {"rates_hz": [1, 2]}, "paths": {"cameras": ["a", "b"]}})
    assert cfg.energy.rates_hz == (1, 2) and cfg.paths.cameras == ("a", "b")


def test_help_lists_flags(capsys):
    with pytest.raises(SystemExit) as e:
        main(["infer", "--help"])
    assert e.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--mode", "--span", "--events", "--config", "--out", "--seed"):
        assert flag in out


def test_unknown_flag_is_an_error(capsys):
    with pytest.raises(SystemExit) as e:
        main(["infer", "--modee", "A"])
    assert e.value.code == 2


def test_exit_codes(tmp_path, events):
    (tmp_path / "bad.json").write_text('{"hybrid": {"nope": 1}}')
    assert main(["--config", str(tmp_path / "bad.json"), "infer"]) == 2
    assert main(["--out", str(tmp_path), "infer", "--events", str(tmp_path / "missing.bin"), "--format",
                 "binary"]) == 3
    (tmp_path / "broken.csv").write_text("1,2,x,0\n")
    assert main(["--out", str(tmp_path), "ingest", "--events", str(tmp_path / "broken.csv"), "--width", "4",
                 "--height", "4"]) == 3
    assert main(["--out", str(tmp_path), "infer", "--events", str(events / "ev.csv")]) == 4  # CSV needs geometry


def test_ingest_summarizes_and_converts(tmp_path, events):
    assert main(["--out", str(tmp_path), "ingest", "--events", str(events / "ev.csv"), "--width", "32",
                 "--height", "32", "--convert", "binary"]) == 0
    rows = (tmp_path / "ingest_summary.csv").read_text().splitlines()
    assert rows[1].startswith("20000,")
    assert (tmp_path / "events.bin").read_bytes() == (events / "ev.bin").read_bytes()


def test_infer_is_deterministic_and_writes_100_rows(tmp_path, events):
    args = ["infer", "--events", str(events / "ev.bin"), "--format", "binary", "--span", "0..1000000"]
    assert main(["--out", str(tmp_path / "a")] + args) == 0
    assert main(["--out", str(tmp_path / "b")] + args) == 0
    a = (tmp_path / "a" / "trace.csv").read_text()
    assert a == (tmp_path / "b" / "trace.csv").read_text()
    assert (tmp_path / "a" / "heatmaps.wgt").read_bytes() == (tmp_path / "b" / "heatmaps.wgt").read_bytes()
    rows = a.splitlines()[1:]
    assert len({r.split(",")[0] for r in rows}) == 100 and len(rows) == 100 * 13
    assert not list(tmp_path.glob("a/.tmp-*"))


def test_infer_seed_and_config_override(tmp_path, events):
    cfg = {"paths": {"events": str(events / "ev.bin"), "events_format": "binary"}, "hybrid": {"mode": "C"},
           "span": {"t_start_us": 0, "t_end_us": 200000}, "net": {"joints": 2}}
    (tmp_path / "c.json").write_text(json.dumps(cfg))
    base = ["--config", str(tmp_path / "c.json")]
    assert main(base + ["--out", str(tmp_path / "s0"), "--seed", "0", "infer"]) == 0
    assert main(base + ["--out", str(tmp_path / "s1"), "infer", "--seed", "1"]) == 0
    assert (tmp_path / "s0" / "trace.csv").read_text() != (tmp_path / "s1" / "trace.csv").read_text()
    assert main(base + ["--out", str(tmp_path / "d"), "infer", "--mode", "D"]) == 0
    assert (tmp_path / "d" / "trace.csv").read_text().splitlines()[1].split(",")[1] == "ann"


def test_energy_command(tmp_path, events):
    assert main(["--out", str(tmp_path), "energy", "--rates", "10,100"]) == 0
    table = (tmp_path / "power_table.csv").read_text().splitlines()
    assert len(table) == 10 and table[1].startswith("2200,0,3.718")
    assert len((tmp_path / "power_curve.csv").read_text().splitlines()) == 3
    assert main(["--out", str(tmp_path / "m"), "energy", "--events", str(events / "ev.bin"), "--format", "binary",
                 "--span", "0..200000"]) == 0
    report = (tmp_path / "m" / "energy_report.csv").read_text()
    assert "snn.1.conv" in report and "out.integrator" in report


def test_gradcheck_command(tmp_path, capsys):
    assert main(["--out", str(tmp_path), "gradcheck", "--count", "2"]) == 0
    assert capsys.readouterr().out.startswith("PASS 2/2")
    assert main(["--out", str(tmp_path), "gradcheck", "--size", "linear", "--tol", "1e-6"]) == 0
    # an impossible tolerance fails with the contract exit code
    assert main(["--out", str(tmp_path), "gradcheck", "--tol", "0"]) == 4


def _write_trace(path, points):
    tr = PredictionTrace()
    for t, src, step, uv in points:
        hm = np.zeros((1, 256, 256))
        hm[0, uv[1], uv[0]] = 1
        tr.append(TraceEntry(t, src, step, hm))
    path.write_text(tr.to_csv())


def test_eval_2d(tmp_path):
    _write_trace(tmp_path / "t.csv", [(0, "ann", 0, (10, 10)), (10_000, "snn", 1, (13, 14))])
    write_pose_csv(tmp_path / "gt.csv", {0: Pose([[10, 10]]), 10_000: Pose([[10, 10]])})
    assert main(["--out", str(tmp_path), "eval", "--pred", str(tmp_path / "t.csv"), "--gt",
                 str(tmp_path / "gt.csv")]) == 0
    assert (tmp_path / "eval_summary.csv").read_text().splitlines()[1] == "mpjpe_2d_px,2.5,2"
    curve = (tmp_path / "error_over_time.csv").read_text().splitlines()
    assert curve[1] == "0,0,1" and curve[2] == "1,5,1"


def test_eval_triangulated(tmp_path):
    from test_metrics import look_at

    a, b = look_at(np.array([-500.0, 0, 0]), [0, 0, 3000]), look_at(np.array([500.0, 0, 0]), [0, 0, 3000])
    a.save(tmp_path / "a.json")
    b.save(tmp_path / "b.json")
    X = np.array([0.0, 0.0, 3000.0])  # projects to integer pixels in both views
    ua, ub = project(X, a), project(X, b)
    _write_trace(tmp_path / "ta.csv", [(0, "ann", 0, tuple(int(round(c)) for c in ua))])
    _write_trace(tmp_path / "tb.csv", [(0, "ann", 0, tuple(int(round(c)) for c in ub))])
    (tmp_path / "gt.csv").write_text("t_us,joint_id,u,v,x,y,z\n0,0,0,0,0,0,3000\n")
    assert main(["--out", str(tmp_path), "eval", "--pred", str(tmp_path / "ta.csv"), str(tmp_path / "tb.csv"),
                 "--gt", str(tmp_path / "gt.csv"), "--cams", str(tmp_path / "a.json"), str(tmp_path / "b.json"),
                 "--triangulate"]) == 0
    kind, value, n = (tmp_path / "eval_summary.csv").read_text().splitlines()[1].split(",")
    assert kind == "mpjpe_3d_mm" and float(value) < 1e-6 and n == "1"
    assert main(["--out", str(tmp_path), "eval", "--pred", str(tmp_path / "ta.csv"), "--gt",
                 str(tmp_path / "gt.csv"), "--triangulate"]) == 2


def test_traintoy_zero_lr_is_flat_and_seeded(tmp_path):
    args = ["traintoy", "--steps", "3", "--lr", "0"]
    assert main(["--out", str(tmp_path / "a")] + args) == 0
    assert main(["--out", str(tmp_path / "b")] + args) == 0
    summary = (tmp_path / "a" / "toy_summary.csv").read_text()
    assert summary == (tmp_path / "b" / "toy_summary.csv").read_text()
    init, final = summary.splitlines()[1].split(",")[3:5]
    assert init == final
