"""Run configuration: one JSON file with every experiment knob; CLI flags only override.

Sections and their defaults::

    {
      "paths":  {"events": null, "events_format": "csv", "sensor_width": null, "sensor_height": null,
                 "weights": null, "netspec": null, "cameras": [], "labels": null},
      "hybrid": {"ann_rate_hz": 10, "snn_dt_ms": 10, "mode": "D", "dense_input": "event_histogram",
                 "hist_count": 7500, "hist_bins": 10, "decay": 0.8, "init_layers": null},
      "lif":    {"tau": 3, "v_th": 1, "v_rest": 0},
      "energy": {"e_mac_pj": 1.69, "e_ac_pj": 0.38, "rates_hz": [10, 25, 50, 100, 200, 500, 1000]},
      "net":    {"desk_div": 8, "joints": 13, "head_variant": "cbl_cb", "head_kernel": 1, "weight_scale": 1.0},
      "span":   {"t_start_us": 0, "t_end_us": null},
      "eval":   {"label_tolerance_us": 5000},
      "train":  {"steps": 2000, "lr": 5e-5, "batch_size": 2, "mode": "D", "eval_samples": 50},
      "out_dir": "out",
      "seed": 0
    }
"""

import json
from dataclasses import dataclass, field, fields, replace

from .energy import EnergyConstants
from .errors import ConfigError
from .hybrid import HybridConfig
from .lif import LifParams


@dataclass(frozen=True)
class Paths:
    events: str = None
    events_format: str = "csv"
    sensor_width: int = None
    sensor_height: int = None
    weights: str = None
    netspec: str = None
    cameras: tuple = ()
    labels: str = None


@dataclass(frozen=True)
class HybridSection:
    ann_rate_hz: float = 10.0
    snn_dt_ms: float = 10.0
    mode: str = "D"
    dense_input: str = "event_histogram"
    hist_count: int = 7500
    hist_bins: int = 10
    decay: float = 0.8
    init_layers: tuple = None


@dataclass(frozen=True)
class LifSection:
    tau: float = 3.0
    v_th: float = 1.0
    v_rest: float = 0.0


@dataclass(frozen=True)
class EnergySection:
    e_mac_pj: float = 1.69
    e_ac_pj: float = 0.38
    rates_hz: tuple = (10, 25, 50, 100, 200, 500, 1000)


@dataclass(frozen=True)
class NetSection:
    desk_div: int = 8
    joints: int = 13
    head_variant: str = "cbl_cb"
    head_kernel: int = 1
    weight_scale: float = 1.0


@dataclass(frozen=True)
class SpanSection:
    t_start_us: int = 0
    t_end_us: int = None


@dataclass(frozen=True)
class EvalSection:
    label_tolerance_us: int = 5000


@dataclass(frozen=True)
class TrainSection:
    steps: int = 2000
    lr: float = 5e-5
    batch_size: int = 2
    mode: str = "D"
    eval_samples: int = 50


_SECTIONS = {
    "paths": Paths,
    "hybrid": HybridSection,
    "lif": LifSection,
    "energy": EnergySection,
    "net": NetSection,
    "span": SpanSection,
    "eval": EvalSection,
    "train": TrainSection,
}


@dataclass(frozen=True)
class RunConfig:
    paths: Paths = field(default_factory=Paths)
    hybrid: HybridSection = field(default_factory=HybridSection)
    lif: LifSection = field(default_factory=LifSection)
    energy: EnergySection = field(default_factory=EnergySection)
    net: NetSection = field(default_factory=NetSection)
    span: SpanSection = field(default_factory=SpanSection)
    eval: EvalSection = field(default_factory=EvalSection)
    train: TrainSection = field(default_factory=TrainSection)
    out_dir: str = "out"
    seed: int = 0

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        unknown = set(d) - {f.name for f in fields(cls)}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        for name, value in d.items():
            if name in _SECTIONS:
                kw[name] = _section(_SECTIONS[name], name, value)
            else:
                kw[name] = value
        cfg = cls(**kw)
        if not isinstance(cfg.seed, int) or cfg.seed < 0:
            raise ConfigError("seed must be a non-negative integer")
        return cfg

    @classmethod
    def load(cls, path):
        try:
            with open(path) as f:
                d = json.load(f)
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON: {e}") from None
        return cls.from_dict(d)

    def override(self, section, **values):
        """Copy with non-None ``values`` replacing fields of ``section``."""
        values = {k: v for k, v in values.items() if v is not None}
        if not values:
            return self
        return replace(self, **{section: replace(getattr(self, section), **values)})

    def lif_params(self):
        try:
            return LifParams(self.lif.tau, self.lif.v_th, self.lif.v_rest)
        except ValueError as e:
            raise ConfigError(str(e)) from None

    def hybrid_config(self):
        h = self.hybrid
        return HybridConfig(h.ann_rate_hz, h.snn_dt_ms, h.mode, h.dense_input, h.hist_count, h.hist_bins, h.decay,
                            self.lif_params(), h.init_layers)

    def energy_constants(self):
        try:
            return EnergyConstants(self.energy.e_mac_pj * 1e-12, self.energy.e_ac_pj * 1e-12)
        except ValueError as e:
            raise ConfigError(str(e)) from None


def _section(cls, name, value):
    if not isinstance(value, dict):
        raise ConfigError(f"config section {name!r} must be an object")
    known = {f.name for f in fields(cls)}
    unknown = set(value) - known
    if unknown:
        raise ConfigError(f"unknown keys in {name!r}: {sorted(unknown)}")
    value = {k: tuple(v) if isinstance(v, list) else v for k, v in value.items()}
    try:
        return cls(**value)
    except TypeError as e:
        raise ConfigError(f"bad section {name!r}: {e}") from None
