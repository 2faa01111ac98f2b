"""Operation counting and energy/power accounting.

Dense layers cost one MAC per multiply (``k^2 W_o H_o C_i C_o``). A conv
that consumes spikes costs that same count scaled by the activity of its
input, paid in ACs. Activity-scaled counts are kept as exact fractions so
they can be compared with a recount from a spike dump without rounding.
"""

from dataclasses import dataclass, field
from fractions import Fraction

from .errors import ContractError
from .netspec import AnnNetSpec, NetSpec, SnnNetSpec
from .tensornet import count_macs


@dataclass(frozen=True)
class EnergyConstants:
    e_mac: float = 1.69e-12  # J per 32-bit MAC, 7 nm CMOS
    e_ac: float = 0.38e-12  # J per 32-bit AC

    def __post_init__(self):
        if not (self.e_mac > 0 and self.e_ac > 0):
            raise ContractError("energy constants must be positive")


def power(macs_per_s, acs_per_s, constants=EnergyConstants()):
    if macs_per_s < 0 or acs_per_s < 0:
        raise ContractError("operation rates must be non-negative")
    return macs_per_s * constants.e_mac + acs_per_s * constants.e_ac


def count_network_macs(spec):
    """Dense multiply counts per conv layer for one inference: ``({layer: macs}, total)``."""
    if isinstance(spec, (AnnNetSpec, SnnNetSpec)):
        convs = [(name, s, h, w) for name, s, h, w in spec.convs()]
    elif isinstance(spec, NetSpec):
        convs = []
        for head in spec.heads:
            h, w = spec.snn.state_shape(head.layer)[1:]
            convs += [(name, s, h, w) for name, s in head.convs()]
    else:
        raise ContractError(f"cannot count operations of {type(spec).__name__}")
    per_layer = {name: count_macs(s, h, w) for name, s, h, w in convs}
    return per_layer, sum(per_layer.values())


def snn_input_layers(spec, k):
    """Layers whose spikes feed conv layer ``k`` (0 is the event input)."""
    layer = spec.layers[k - 1]
    if layer.kind == "decoder":
        return (k - 1, layer.skip)
    return (k - 1,)


def per_spike_fanout(spec, k):
    """ACs triggered by one input spike of conv layer ``k``."""
    conv = spec.conv_spec(k)
    h_out, w_out = spec.resolutions()[k - 1]
    src = snn_input_layers(spec, k)[0]
    if src == 0:
        h_in, w_in = spec.height, spec.width
    else:
        h_in, w_in = spec.state_shape(src)[1:]
    return Fraction(conv.kernel**2 * conv.out_channels * h_out * w_out, h_in * w_in)


@dataclass
class LayerCost:
    layer: str
    macs: Fraction = Fraction(0)
    acs: Fraction = Fraction(0)
    zeta: float = None


@dataclass
class EnergyReport:
    """Per-second operation counts at the declared rates."""

    rows: list
    ann_rate: float
    snn_rate: float
    constants: EnergyConstants = field(default_factory=EnergyConstants)

    @property
    def macs(self):
        return sum(r.macs for r in self.rows)

    @property
    def acs(self):
        return sum(r.acs for r in self.rows)

    def part(self, prefix):
        rows = [r for r in self.rows if r.layer.startswith(prefix)]
        return sum(r.macs for r in rows), sum(r.acs for r in rows)

    @property
    def power_w(self):
        return power(float(self.macs), float(self.acs), self.constants)

    @property
    def snn_power_w(self):
        m1, a1 = self.part("snn.")
        m2, a2 = self.part("out.")
        return power(float(m1 + m2), float(a1 + a2), self.constants)

    def energy_pj(self, row):
        return (float(row.macs) * self.constants.e_mac + float(row.acs) * self.constants.e_ac) * 1e12

    def to_csv(self):
        lines = ["layer,macs,acs,zeta,energy_pj"]
        for r in self.rows:
            z = "" if r.zeta is None else f"{r.zeta:.9g}"
            lines.append(f"{r.layer},{float(r.macs):.6g},{float(r.acs):.6g},{z},{self.energy_pj(r):.6g}")
        lines.append("")
        lines.append("total,macs_per_s,acs_per_s,power_w,snn_power_w")
        lines.append(f"total,{float(self.macs):.6g},{float(self.acs):.6g},{self.power_w:.6g},{self.snn_power_w:.6g}")
        return "\n".join(lines) + "\n"


def measure_and_report(record, spec, ann_rate, snn_rate, constants=EnergyConstants(), include_ann=True,
                       include_heads=True):
    """Per-layer energy report from a recorded run.

    ``spec`` is a ``NetSpec``; ``record`` a ``SpikeActivityRecord`` from the
    spiking net. Dense parts run ``ann_rate`` times per second, the spiking
    net ``snn_rate`` times.
    """
    snn = spec.snn
    if record.timesteps == 0:
        raise ContractError("energy report needs a run with at least one step")
    totals = record.totals()
    for k in range(0, snn.n_spiking + 1):
        if k not in record.neurons:
            raise ContractError(f"no activity recorded for spiking layer {k}")
    steps = record.timesteps
    rate = Fraction(snn_rate).limit_denominator(10**6)
    rows = []
    if include_ann:
        per_layer, _ = count_network_macs(spec.ann)
        fr = Fraction(ann_rate).limit_denominator(10**6)
        rows += [LayerCost(n, m * fr) for n, m in per_layer.items()]
    if include_heads:
        per_layer, _ = count_network_macs(spec)
        fr = Fraction(ann_rate).limit_denominator(10**6)
        rows += [LayerCost(n, m * fr) for n, m in per_layer.items()]
    res = snn.resolutions()
    for k in range(1, len(snn.layers) + 1):
        conv = snn.conv_spec(k)
        dense = count_macs(conv, *res[k - 1])
        src = snn_input_layers(snn, k)
        zeta = Fraction(int(sum(totals[s] for s in src)), sum(record.neurons[s] for s in src) * steps)
        net = "out" if k == len(snn.layers) else "snn"
        rows.append(LayerCost(f"{net}.{k}.conv", acs=dense * zeta * rate, zeta=float(zeta)))
        if net == "snn":
            neurons = record.neurons[k]
            rows.append(LayerCost(f"snn.{k}.bn", macs=neurons * rate))
            if snn.layers[k - 1].kind == "residual":
                # identity shortcut adds the input spikes onto the drive
                rows.append(LayerCost(f"snn.{k}.shortcut", acs=Fraction(int(totals[k - 1]), steps) * rate))
    j, h, w = snn.joints, snn.height, snn.width
    rows.append(LayerCost("out.integrator", macs=j * h * w * rate))
    return EnergyReport(rows, ann_rate, snn_rate, constants)


def recount_acs_from_dump(totals, steps, spec, snn_rate):
    """Independent AC tally: every input spike costs its fixed fan-out."""
    snn = spec.snn if isinstance(spec, NetSpec) else spec
    rate = Fraction(snn_rate).limit_denominator(10**6)
    acs = Fraction(0)
    for k in range(1, len(snn.layers) + 1):
        for src in snn_input_layers(snn, k):
            acs += Fraction(int(totals.get(src, 0))) * per_spike_fanout(snn, k)
        if snn.layers[k - 1].kind == "residual":
            acs += Fraction(int(totals.get(k - 1, 0)))
    return acs / steps * rate


def hybrid_power_vs_rate(ann_macs_per_inf, snn_macs_per_step, snn_acs_per_step, ann_rate, snn_rates,
                         constants=EnergyConstants()):
    """Total power and the spiking net's share for each spiking-net rate."""
    if ann_rate < 0 or any(r <= 0 for r in snn_rates):
        raise ContractError("rates must be positive")
    ann_w = power(ann_macs_per_inf * ann_rate, 0, constants)
    curve = []
    for r in snn_rates:
        snn_w = power(snn_macs_per_step * r, snn_acs_per_step * r, constants)
        total = ann_w + snn_w
        curve.append({"rate_hz": r, "power_w": total, "snn_share": snn_w / total if total else 0.0})
    return curve


def curve_to_csv(curve):
    lines = ["rate_hz,power_w,snn_share"]
    lines += [f"{c['rate_hz']:g},{c['power_w']:.6g},{c['snn_share']:.6g}" for c in curve]
    return "\n".join(lines) + "\n"


# (G MAC/s, G AC/s, printed W, print tolerance) from the published comparison tables
PUBLISHED_POWER = (
    (2200, 0, 3.718, 0.001),
    (233, 79, 0.424, 0.001),
    (0.5, 121, 0.046, 0.001),
    (3321, 0, 5.61, 0.01),
    (2025, 0, 3.42, 0.01),
    (984, 0, 1.664, 0.001),
    (268, 79, 0.483, 0.001),
    (108, 75, 0.21, 0.01),
    (117, 70, 0.22, 0.01),
)
