import numpy as np
import pytest

from conftest import random_stream
from hybridsnn.ann import ann_forward
from hybridsnn.errors import ConfigError, ContractError
from hybridsnn.events import EventStream, build_dense_histogram, slice_spike_tensor
from hybridsnn.hybrid import (HybridConfig, HybridRunner, PredictionTrace, TraceEntry, curve_to_csv,
                              error_over_time, last_layer_only_init, read_trace_csv, required_nets, run_hybrid)
from hybridsnn.lif import LifParams
from hybridsnn.metrics import Pose
from hybridsnn.netspec import NetSpec, random_weights, zero_weights
from hybridsnn.snn import SpikeActivityRecord, snn_step


@pytest.fixture(scope="module")
def spec():
    return NetSpec.desk(32, 32, div=8, joints=2)


@pytest.fixture(scope="module")
def stream():
    return random_stream(np.random.default_rng(5), 20_000, 32, 32, 1_000_000)


def test_config_validation():
    with pytest.raises(ConfigError):
        HybridConfig(ann_rate_hz=3.0)  # 333333.33 us period
    with pytest.raises(ConfigError):
        HybridConfig(ann_rate_hz=10, snn_dt_ms=30)
    with pytest.raises(ConfigError):
        HybridConfig(mode="E")
    cfg = HybridConfig()
    assert cfg.period_us == 100_000 and cfg.dt_us == 10_000 and cfg.steps_per_period == 10
    assert HybridConfig(ann_rate_hz=50, snn_dt_ms=1).steps_per_period == 20


def test_required_nets():
    assert required_nets("A") == ("snn", "out")
    assert "init" in required_nets("B") and "init" not in required_nets("C")


def test_trace_layout_over_one_second(spec, stream):
    trace = run_hybrid(stream, 0, 1_000_000, HybridConfig(), spec, random_weights(spec, 1))
    assert len(trace) == 100
    assert [e.t for e in trace.entries[:12]] == [j * 10_000 for j in range(12)]
    assert [e.source for e in trace.entries[:11]] == ["ann"] + ["snn"] * 9 + ["ann"]
    assert [e.step for e in trace.entries[:11]] == list(range(10)) + [0]
    assert len(trace.to_csv().splitlines()) == 1 + 100 * 2


def test_tick_output_equals_dense_output_bitwise(spec, stream):
    w = random_weights(spec, 2)
    for mode in "CD":
        trace = run_hybrid(stream, 0, 300_000, HybridConfig(mode=mode), spec, w)
        for e in trace.entries:
            if e.source == "ann":
                _, o = ann_forward(build_dense_histogram(stream, e.t, 7500, 10), spec.ann, w)
                assert np.array_equal(e.heatmaps, o)


def test_mode_a_on_empty_stream_is_all_zero(spec):
    trace = run_hybrid(EventStream.empty(32, 32), 0, 200_000, HybridConfig(mode="A"), spec, random_weights(spec, 1))
    assert len(trace) == 20 and all(not e.heatmaps.any() for e in trace.entries)


def test_small_weights_silent_but_injected_states_fire(spec, stream):
    # mode A: zero state + tiny weights -> first-step output identically zero
    w = random_weights(spec, 4, scale=1e-3)
    runner_a = HybridRunner(spec, w, HybridConfig(mode="A"))
    runner_a.stream = stream
    states, integ, _ = runner_a.initialize(0)
    x = slice_spike_tensor(stream, 0, 10_000)
    rec = SpikeActivityRecord.for_spec(spec.snn)
    _, _, hm = snn_step(states, integ, x, spec.snn, w, LifParams(), rec)
    assert not hm.any() and sum(rec.counts[0][k] for k in range(1, 10)) == 0
    # mode B: same weights, heads biased above threshold -> spikes at step 1
    wb = random_weights(spec, 4, scale=1e-3)
    for h in spec.heads:
        wb.tensors[f"init.{h.layer}.bn1_beta"] = np.full(h.out_channels, 2.0)
    runner_b = HybridRunner(spec, wb, HybridConfig(mode="B"))
    runner_b.stream = stream
    states, integ, _ = runner_b.initialize(0)
    assert all((s.v > 1).all() for s in states)
    rec = SpikeActivityRecord.for_spec(spec.snn)
    snn_step(states, integ, x, spec.snn, wb, LifParams(), rec)
    assert all(rec.counts[0][k] > 0 for k in range(1, 10))


def test_zero_heads_equal_zero_init(spec, stream):
    w = random_weights(spec, 6, scale=3.0)
    zw = zero_weights(spec)
    for name in w.names("init."):
        w.tensors[name] = zw[name]
    a = run_hybrid(stream, 0, 200_000, HybridConfig(mode="A"), spec, w)
    b = run_hybrid(stream, 0, 200_000, HybridConfig(mode="B"), spec, w)
    assert all(np.array_equal(x.heatmaps, y.heatmaps) for x, y in zip(a.entries, b.entries))


def test_last_layer_only_init(spec, stream):
    cfg = last_layer_only_init(HybridConfig(mode="D"))
    assert cfg.mode == "D" and cfg.init_layers == (-1,)
    assert last_layer_only_init(HybridConfig(mode="A")).mode == "B"
    w = random_weights(spec, 7, scale=2.0)
    runner = HybridRunner(spec, w, cfg)
    assert runner.init_layers == (9,)
    runner.stream = stream
    states, _, _ = runner.initialize(100_000)
    assert sum(bool(s.v.any()) for s in states) == 1 and states[8].v.any()
    full = run_hybrid(stream, 0, 100_000, HybridConfig(mode="D"), spec, w)
    last = run_hybrid(stream, 0, 100_000, cfg, spec, w)
    assert any(not np.array_equal(x.heatmaps, y.heatmaps) for x, y in zip(full.entries, last.entries))


def test_incomplete_weights_rejected(spec):
    w = random_weights(spec, 1)
    del w.tensors["init.3.conv0_weight"]
    HybridRunner(spec, w, HybridConfig(mode="C"))
    with pytest.raises(ConfigError):
        HybridRunner(spec, w, HybridConfig(mode="D"))
    with pytest.raises(ConfigError):
        HybridRunner(spec, random_weights(spec, 1), HybridConfig(dense_input="rgb"))


def test_rgb_source_is_used(spec, stream):
    calls = []

    def frames(t):
        calls.append(t)
        return np.zeros((20, 32, 32))

    trace = HybridRunner(spec, zero_weights(spec), HybridConfig(mode="C", dense_input="rgb"), frames).run(
        stream, 0, 200_000)
    assert calls == [0, 100_000] and len(trace) == 20


def test_run_needs_positive_span(spec, stream):
    with pytest.raises(ContractError):
        run_hybrid(stream, 10, 10, HybridConfig(), spec, random_weights(spec))


def test_trace_timestamps_strictly_increase():
    tr = PredictionTrace()
    tr.append(TraceEntry(5, "ann", 0, np.zeros((1, 2, 2))))
    with pytest.raises(ContractError):
        tr.append(TraceEntry(5, "snn", 1, np.zeros((1, 2, 2))))


def _trace(points):
    tr = PredictionTrace()
    for t, src, step, (u, v) in points:
        hm = np.zeros((1, 8, 8))
        hm[0, v, u] = 1.0
        tr.append(TraceEntry(t, src, step, hm))
    return tr


def test_error_over_time_and_csv_round_trip(tmp_path):
    tr = _trace([(0, "ann", 0, (1, 1)), (10, "snn", 1, (4, 5)), (100, "ann", 0, (2, 2)), (110, "snn", 1, (2, 2))])
    labels = {0: Pose([[1, 1]]), 10: Pose([[1, 1]]), 100: Pose([[2, 2]]), 110: Pose([[2, 2]])}
    curve = error_over_time(tr, labels, 2, 0)
    assert curve == [(0, 0.0, 2), (1, 2.5, 2)]
    assert curve_to_csv(curve).splitlines()[2] == "1,2.5,2"
    p = tmp_path / "trace.csv"
    p.write_text(tr.to_csv())
    back = read_trace_csv(p)
    assert [(e.t, e.source, e.step) for e in back.entries] == [(e.t, e.source, e.step) for e in tr.entries]
    assert error_over_time(back, labels, 2, 0) == curve


def test_error_over_time_edge_cases(caplog):
    tr = _trace([(0, "ann", 0, (1, 1))])
    assert error_over_time(tr, {}, 2, 0) == []
    assert error_over_time(tr, {1000: Pose([[1, 1]])}, 2, 10) == []
    assert error_over_time(tr, {3: Pose([[1, 4]])}, 2, 5) == [(0, 3.0, 1), (1, None, 0)]


def test_flat_heatmap_round_trips_as_invisible(tmp_path):
    tr = PredictionTrace()
    tr.append(TraceEntry(0, "ann", 0, np.zeros((2, 4, 4))))
    p = tmp_path / "t.csv"
    p.write_text(tr.to_csv())
    assert not read_trace_csv(p).entries[0].pose.visible.any()
