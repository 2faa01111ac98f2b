"""Spiking U-Net: conv -> BN -> LIF layers, residual and skip paths, leaky output integrator."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .events import SpikeTensor, slice_spike_tensor
from .lif import LifParams, LifState, lif_step
from .tensornet import batch_norm_infer, concat_channels, conv2d, upsample_bilinear2

BN_EPS = 1e-5


@dataclass
class OutputIntegrator:
    o: np.ndarray
    decay: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.decay <= 1.0:
            raise ContractError(f"integrator decay must lie in [0, 1], got {self.decay}")

    @classmethod
    def zeros(cls, shape, decay=0.8):
        return cls(np.zeros(shape), decay)

    def reset(self, o_init):
        self.o = np.array(o_init, dtype=np.float64)

    def update(self, delta):
        # decay first, then add this step's contribution
        self.o = self.decay * self.o + delta
        return self.o


@dataclass
class SpikeActivityRecord:
    """Per-step spike counts. Layer 0 is the event input; 1..n are the spiking layers."""

    neurons: dict
    counts: list = field(default_factory=list)  # one {layer: count} per step

    @classmethod
    def for_spec(cls, spec):
        neurons = {0: spec.in_channels * spec.height * spec.width}
        for k in range(1, spec.n_spiking + 1):
            neurons[k] = int(np.prod(spec.state_shape(k)))
        return cls(neurons)

    @property
    def timesteps(self):
        return len(self.counts)

    def log(self, step_counts):
        self.counts.append(dict(step_counts))

    def totals(self):
        return {k: sum(c.get(k, 0) for c in self.counts) for k in self.neurons}

    def write_dump(self, path):
        with open(path, "w") as f:
            f.write("step,layer,count\n")
            for step, c in enumerate(self.counts):
                for layer in sorted(c):
                    f.write(f"{step},{layer},{c[layer]:g}\n")

    @staticmethod
    def read_dump(path):
        """Parse a spike dump back into per-layer totals and the number of steps."""
        totals, steps = {}, set()
        with open(path) as f:
            next(f)
            for line in f:
                step, layer, count = line.strip().split(",")
                steps.add(int(step))
                totals[int(layer)] = totals.get(int(layer), 0.0) + float(count)
        return totals, len(steps)


def spike_activity(record):
    """Per-layer activity zeta_l = spikes / (neurons * timesteps), plus the per-step network average."""
    if record.timesteps == 0:
        raise ContractError("spike activity needs at least one recorded timestep")
    totals = record.totals()
    zeta = {k: totals[k] / (record.neurons[k] * record.timesteps) for k in record.neurons if k > 0}
    spiking = [k for k in record.neurons if k > 0]
    n_all = sum(record.neurons[k] for k in spiking)
    per_step = [sum(c.get(k, 0) for k in spiking) / n_all for c in record.counts]
    return zeta, per_step


def _layer_drive(k, spec, weights, x):
    name = "out" if k == len(spec.layers) else "snn"
    drive = conv2d(x, spec.conv_spec(k), weights[f"{name}.{k}.conv_weight"])
    if name == "out":
        return drive
    return batch_norm_infer(drive, weights[f"snn.{k}.bn_gamma"], weights[f"snn.{k}.bn_beta"],
                            weights[f"snn.{k}.bn_mean"], weights[f"snn.{k}.bn_var"], BN_EPS)


def snn_step(states, integrator, spike_input, spec, weights, params, recorder=None):
    """One synchronous pass through the spiking net.

    Returns ``(states, integrator, heatmaps)``; ``states`` is a new list,
    ``integrator`` is updated in place.
    """
    x = spike_input.tensor if isinstance(spike_input, SpikeTensor) else np.asarray(spike_input, dtype=np.float64)
    if x.shape != (spec.in_channels, spec.height, spec.width):
        raise ContractError(f"spike input {x.shape} != {(spec.in_channels, spec.height, spec.width)}")
    if len(states) != spec.n_spiking or any(s is None for s in states):
        raise ContractError("spiking states are not initialized")
    spikes = {0: x}
    new_states = []
    for k in range(1, spec.n_spiking + 1):
        layer = spec.layers[k - 1]
        inp = spikes[k - 1]
        if layer.kind == "decoder":
            inp = upsample_bilinear2(concat_channels(inp, spikes[layer.skip]))
        drive = _layer_drive(k, spec, weights, inp)
        if layer.kind == "residual":
            drive = drive + spikes[k - 1]
        st, s = lif_step(states[k - 1], drive, params)
        new_states.append(st)
        spikes[k] = s
    delta = _layer_drive(len(spec.layers), spec, weights, spikes[spec.n_spiking])
    heatmaps = integrator.update(delta)
    if recorder is not None:
        recorder.log({k: float(v.sum()) for k, v in spikes.items()})
    return new_states, integrator, heatmaps


def zero_states(spec):
    return [LifState.zeros(s) for s in spec.state_shapes()]


def run_sequence(states, integrator, stream, t0, steps, dt_us, spec, weights, params=None, recorder=None):
    """Feed ``steps`` consecutive windows of ``dt_us`` starting at ``t0``; returns (states, heatmaps list)."""
    if steps < 1:
        raise ContractError("run_sequence needs at least one step")
    params = params or LifParams()
    out = []
    for i in range(steps):
        window = slice_spike_tensor(stream, t0 + i * dt_us, t0 + (i + 1) * dt_us)
        states, integrator, hm = snn_step(states, integrator, window, spec, weights, params, recorder)
        out.append(hm.copy())
    return states, out
