"""Slow/fast scheduler: the dense net re-initializes the spiking net once per period.

Trace layout per period ``[t_i, t_i + period)``: one entry at ``t_i`` with
source ``ann`` (the integrator right after initialization), then one
``snn`` entry at ``t_i + j * dt`` for ``j = 1 .. steps - 1``, each produced
from the events of ``[t_i + (j - 1) dt, t_i + j dt)``. The output at
``t_i + period`` belongs to the next tick.

Modes: A pure spiking net, B state init only, C output init only, D both.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .ann import ann_forward, init_heads_forward
from .errors import ConfigError, ContractError, ParseError
from .events import build_dense_histogram, slice_spike_tensor
from .lif import LifParams, LifState, set_boundary_condition
from .metrics import Pose, decode_heatmaps, joint_errors
from .snn import OutputIntegrator, snn_step, zero_states
from .tensornet import WeightContainer

log = logging.getLogger(__name__)

MODES = ("A", "B", "C", "D")


@dataclass(frozen=True)
class HybridConfig:
    ann_rate_hz: float = 10.0
    snn_dt_ms: float = 10.0
    mode: str = "D"
    dense_input: str = "event_histogram"  # or "rgb"
    hist_count: int = 7500
    hist_bins: int = 10
    decay: float = 0.8
    lif: LifParams = field(default_factory=LifParams)
    init_layers: tuple = None  # spiking layers that receive injected states; None = all, -1 = last

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.dense_input not in ("event_histogram", "rgb"):
            raise ConfigError(f"unknown dense input {self.dense_input!r}")
        if self.ann_rate_hz <= 0 or self.snn_dt_ms <= 0:
            raise ConfigError("rates must be positive")
        p, d = self.period_us, self.dt_us
        if abs(1e6 / self.ann_rate_hz - p) > 1e-6 or abs(self.snn_dt_ms * 1000 - d) > 1e-6:
            raise ConfigError("period and step must be whole microseconds")
        if p % d:
            raise ConfigError(f"ANN period {p} us is not a whole number of {d} us spiking steps")

    @property
    def period_us(self):
        return int(round(1e6 / self.ann_rate_hz))

    @property
    def dt_us(self):
        return int(round(self.snn_dt_ms * 1000))

    @property
    def steps_per_period(self):
        return self.period_us // self.dt_us

    @property
    def state_init(self):
        return self.mode in ("B", "D")

    @property
    def output_init(self):
        return self.mode in ("C", "D")


def last_layer_only_init(config):
    """State-init variant that injects only the last spiking layer."""
    mode = {"A": "B", "C": "D"}.get(config.mode, config.mode)
    return replace(config, mode=mode, init_layers=(-1,))


@dataclass
class TraceEntry:
    t: int
    source: str
    step: int  # steps since the last initialization
    heatmaps: np.ndarray
    pose: object = None


@dataclass
class PredictionTrace:
    entries: list = field(default_factory=list)

    def append(self, entry):
        if self.entries and entry.t <= self.entries[-1].t:
            raise ContractError("trace timestamps must be strictly increasing")
        entry.pose = decode_heatmaps(entry.heatmaps)
        self.entries.append(entry)

    def __len__(self):
        return len(self.entries)

    def to_csv(self):
        lines = ["t_us,source,joint_id,u,v,visible"]
        for e in self.entries:
            for j, ((u, v), vis) in enumerate(zip(e.pose.xy, e.pose.visible)):
                lines.append(f"{e.t},{e.source},{j},{u:g},{v:g},{int(vis)}")
        return "\n".join(lines) + "\n"

    def heatmap_container(self):
        w = WeightContainer(meta={"t_us": [e.t for e in self.entries], "source": [e.source for e in self.entries]})
        for i, e in enumerate(self.entries):
            w[f"out.{i}.heatmap"] = e.heatmaps
        return w


def required_nets(mode):
    nets = ["snn", "out"]
    if mode in ("B", "C", "D"):
        nets.append("ann")
    if mode in ("B", "D"):
        nets.append("init")
    return tuple(nets)


class HybridRunner:
    """Holds spec, weights and config; one instance per stream."""

    def __init__(self, spec, weights, config, rgb_source=None):
        self.spec, self.weights, self.config = spec, weights, config
        self.rgb_source = rgb_source
        try:
            spec.check_weights(weights, required_nets(config.mode))
        except ContractError as e:
            raise ConfigError(f"weights incomplete for mode {config.mode}: {e}") from None
        if config.dense_input == "rgb" and config.mode != "A" and rgb_source is None:
            raise ConfigError("rgb dense input needs a frame source")
        n = spec.snn.n_spiking
        layers = config.init_layers or tuple(range(1, n + 1))
        self.init_layers = tuple(n if k == -1 else k for k in layers)

    def dense_input(self, t):
        if self.config.dense_input == "rgb":
            return self.rgb_source(t)
        rep = build_dense_histogram(self.stream, t, self.config.hist_count, self.config.hist_bins)
        if rep.empty:
            log.info("no events before tick %d; dense input is empty", t)
        return rep

    def initialize(self, t):
        """States and integrator at tick ``t`` according to the mode."""
        cfg, spec = self.config, self.spec
        states = zero_states(spec.snn)
        o_shape = (spec.snn.joints, spec.snn.height, spec.snn.width)
        integrator = OutputIntegrator.zeros(o_shape, cfg.decay)
        if cfg.mode == "A":
            return states, integrator, None
        features, o_init = ann_forward(self.dense_input(t), spec.ann, self.weights)
        if cfg.state_init:
            heads = [h for h in spec.heads if h.layer in self.init_layers]
            s_maps = init_heads_forward(features, heads, self.weights)
            for k, s in s_maps.items():
                states[k - 1] = set_boundary_condition(states[k - 1], s)
        if cfg.output_init:
            integrator.reset(o_init)
        return states, integrator, o_init

    def run(self, stream, t_start, t_end, recorder=None):
        if not t_end > t_start:
            raise ContractError("run_hybrid needs t_end > t_start")
        self.stream = stream
        cfg = self.config
        trace = PredictionTrace()
        t_i = t_start
        while t_i < t_end:
            states, integrator, _ = self.initialize(t_i)
            trace.append(TraceEntry(t_i, "ann", 0, integrator.o.copy()))
            for j in range(1, cfg.steps_per_period):
                t = t_i + j * cfg.dt_us
                if t >= t_end:
                    break
                window = slice_spike_tensor(stream, t - cfg.dt_us, t)
                states, integrator, hm = snn_step(states, integrator, window, self.spec.snn, self.weights,
                                                  cfg.lif, recorder)
                trace.append(TraceEntry(t, "snn", j, hm.copy()))
            t_i += cfg.period_us
        return trace


def run_hybrid(stream, t_start, t_end, config, spec, weights, recorder=None, rgb_source=None):
    return HybridRunner(spec, weights, config, rgb_source).run(stream, t_start, t_end, recorder)


def error_over_time(trace, labels, steps_per_period, max_offset_us):
    """Mean per-joint error by step index since the last initialization.

    ``labels`` maps timestamps to ground-truth poses; each trace entry uses
    the nearest label within ``max_offset_us``. Returns a list of
    ``(step, mpjpe, n_entries)``; steps without labels get ``None``.
    """
    if not labels:
        log.warning("no labels given; error curve is empty")
        return []
    lt = np.array(sorted(labels))
    sums = np.zeros(steps_per_period)
    counts = np.zeros(steps_per_period, dtype=int)
    for e in trace.entries:
        if e.step >= steps_per_period:
            continue
        i = int(np.searchsorted(lt, e.t))
        cands = [c for c in (i - 1, i) if 0 <= c < len(lt)]
        best = min(cands, key=lambda c: abs(lt[c] - e.t))
        if abs(lt[best] - e.t) > max_offset_us:
            continue
        err, mask = joint_errors(e.pose, labels[int(lt[best])])
        if not mask.any():
            continue
        sums[e.step] += err[mask].mean()
        counts[e.step] += 1
    if not counts.any():
        log.warning("no trace entry overlaps a label; error curve is empty")
        return []
    return [(s, float(sums[s] / counts[s]) if counts[s] else None, int(counts[s])) for s in range(steps_per_period)]


def curve_to_csv(curve):
    lines = ["step,mpjpe,count"]
    lines += [f"{s},{'' if m is None else f'{m:.9g}'},{n}" for s, m, n in curve]
    return "\n".join(lines) + "\n"


def read_trace_csv(path):
    """Trace CSV back to a ``PredictionTrace`` of decoded poses (no heatmaps).

    Step indices are recovered from the sources: an ``ann`` row starts a
    period, every ``snn`` row after it is one step further.
    """
    rows = {}
    with open(path) as f:
        header = f.readline()
        if not header.startswith("t_us,source"):
            raise ParseError(f"{path}: not a trace file")
        for lineno, line in enumerate(f, 2):
            parts = line.strip().split(",")
            if len(parts) != 6 or parts[1] not in ("ann", "snn"):
                raise ParseError(f"{path}:{lineno}: expected t_us,source,joint_id,u,v,visible")
            try:
                t, j, u, v, vis = int(parts[0]), int(parts[2]), float(parts[3]), float(parts[4]), int(parts[5])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad number in {line.strip()!r}") from None
            src, joints = rows.setdefault(t, (parts[1], {}))
            joints[j] = (u, v, bool(vis))
    trace = PredictionTrace()
    step = 0
    for t in sorted(rows):
        src, joints = rows[t]
        step = 0 if src == "ann" else step + 1
        cols = [joints.get(j, (np.nan, np.nan, False)) for j in range(max(joints) + 1)]
        xy = np.array([c[:2] for c in cols])
        trace.entries.append(TraceEntry(t, src, step, None, Pose(xy, [c[2] for c in cols])))
    return trace
