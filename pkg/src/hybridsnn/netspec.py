"""Network topology for the dense U-Net, the spiking U-Net and the state-init heads.

Defaults reproduce the full-size architecture at 256x256 (DHP19 geometry).
``NetSpec.desk(...)`` shrinks channels and resolution for tests and toys
while keeping the same layer graph.
"""

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .errors import ConfigError, ContractError
from .tensornet import ConvLayerSpec, WeightContainer

HEAD_VARIANTS = ("cbl_cb", "cbl_cbl", "cbl_cbs", "cbl_c", "cbl")


@dataclass(frozen=True)
class AnnNetSpec:
    in_channels: int = 20
    height: int = 256
    width: int = 256
    enc_channels: tuple = (32, 64, 128, 256, 512, 512)
    enc_kernels: tuple = (7, 5, 3, 3, 3, 3)
    dec_channels: tuple = (512, 256, 128, 64, 32)
    dec_kernel: int = 3
    joints: int = 13
    pred_kernel: int = 3

    def __post_init__(self):
        if len(self.enc_channels) != 6 or len(self.enc_kernels) != 6 or len(self.dec_channels) != 5:
            raise ContractError("dense U-Net has 6 encoder and 5 decoder groups")
        if self.height % 32 or self.width % 32:
            raise ContractError(f"dense U-Net input must be divisible by 32, got {self.height}x{self.width}")
        for j, c in enumerate(self.dec_channels):
            if c != self.enc_channels[4 - j]:
                raise ContractError("decoder widths must mirror the encoder widths they skip to")

    def resolution(self, layer):
        """Output (H, W) of layer group 1..12."""
        if layer <= 6:
            f = 2 ** (layer - 1)
        elif layer <= 11:
            f = 2 ** (11 - layer)
        else:
            f = 1
        return self.height // f, self.width // f

    def channels(self, layer):
        if layer <= 6:
            return self.enc_channels[layer - 1]
        if layer <= 11:
            return self.dec_channels[layer - 7]
        return self.joints

    def convs(self):
        """All conv layers as ``(weight_prefix, ConvLayerSpec, out_h, out_w)`` in execution order."""
        out = []
        cin = self.in_channels
        for i in range(1, 7):
            c, k = self.enc_channels[i - 1], self.enc_kernels[i - 1]
            h, w = self.resolution(i)
            out.append((f"ann.{i}.conv_a", ConvLayerSpec(k, cin, c), h, w))
            out.append((f"ann.{i}.conv_b", ConvLayerSpec(k, c, c), h, w))
            cin = c
        for i in range(7, 12):
            c = self.dec_channels[i - 7]
            skip = self.enc_channels[11 - i]
            h, w = self.resolution(i)
            out.append((f"ann.{i}.conv_a", ConvLayerSpec(self.dec_kernel, cin, c), h, w))
            out.append((f"ann.{i}.conv_b", ConvLayerSpec(self.dec_kernel, c + skip, c), h, w))
            cin = c
        h, w = self.resolution(12)
        out.append(("ann.12.conv", ConvLayerSpec(self.pred_kernel, cin, self.joints), h, w))
        return out


@dataclass(frozen=True)
class SnnLayer:
    kind: str  # encoder | residual | decoder | predict
    kernel: int
    stride: int
    out_channels: int
    skip: int = 0  # decoders: index of the encoder layer whose spikes are concatenated


def _default_snn_layers():
    return (
        SnnLayer("encoder", 5, 1, 32),
        SnnLayer("encoder", 5, 2, 64),
        SnnLayer("encoder", 5, 2, 128),
        SnnLayer("encoder", 5, 2, 256),
        SnnLayer("residual", 3, 1, 256),
        SnnLayer("residual", 3, 1, 256),
        SnnLayer("decoder", 5, 1, 128, skip=4),
        SnnLayer("decoder", 5, 1, 64, skip=3),
        SnnLayer("decoder", 5, 1, 32, skip=2),
        SnnLayer("predict", 1, 1, 13),
    )


@dataclass(frozen=True)
class SnnNetSpec:
    in_channels: int = 2
    height: int = 256
    width: int = 256
    layers: tuple = field(default_factory=_default_snn_layers)

    def __post_init__(self):
        if self.layers[-1].kind != "predict":
            raise ContractError("last spiking-net layer must be the prediction conv")
        hs = self.resolutions()
        for i, layer in enumerate(self.layers, 1):
            if layer.kind == "decoder" and hs[layer.skip - 1] != hs[i - 2]:
                raise ContractError(f"decoder {i} skip layer {layer.skip} is at a different resolution")

    @property
    def n_spiking(self):
        return len(self.layers) - 1

    @property
    def joints(self):
        return self.layers[-1].out_channels

    def resolutions(self):
        h, w = self.height, self.width
        out = []
        for layer in self.layers:
            if layer.kind == "decoder":
                h, w = 2 * h, 2 * w
            h, w = -(-h // layer.stride), -(-w // layer.stride)
            out.append((h, w))
        return out

    def in_channels_of(self, k):
        """Input channels of layer k (1-based)."""
        if k == 1:
            return self.in_channels
        prev = self.layers[k - 2].out_channels
        layer = self.layers[k - 1]
        if layer.kind == "decoder":
            return prev + self.layers[layer.skip - 1].out_channels
        return prev

    def conv_spec(self, k):
        layer = self.layers[k - 1]
        return ConvLayerSpec(layer.kernel, self.in_channels_of(k), layer.out_channels, layer.stride, bias=False)

    def state_shape(self, k):
        h, w = self.resolutions()[k - 1]
        return (self.layers[k - 1].out_channels, h, w)

    def state_shapes(self):
        return [self.state_shape(k) for k in range(1, self.n_spiking + 1)]

    def convs(self):
        """All conv layers as ``(weight_prefix, ConvLayerSpec, out_h, out_w)``."""
        res = self.resolutions()
        out = []
        for k in range(1, len(self.layers) + 1):
            net = "out" if k == len(self.layers) else "snn"
            out.append((f"{net}.{k}.conv", self.conv_spec(k), *res[k - 1]))
        return out


@dataclass(frozen=True)
class InitHeadSpec:
    """State-init head for one spiking layer: ANN feature at ``tap`` -> membrane potentials."""

    layer: int
    tap: int  # dense U-Net layer group whose output feeds the head
    in_channels: int
    out_channels: int
    variant: str = "cbl_cb"
    kernel: int = 1

    def __post_init__(self):
        if self.variant not in HEAD_VARIANTS:
            raise ConfigError(f"unknown init-head variant {self.variant!r}; choose from {HEAD_VARIANTS}")

    def convs(self):
        second_bias = self.variant == "cbl_c"
        out = [(f"init.{self.layer}.conv0", ConvLayerSpec(self.kernel, self.in_channels, self.out_channels, bias=False))]
        if self.variant != "cbl":
            out.append((f"init.{self.layer}.conv1",
                        ConvLayerSpec(self.kernel, self.out_channels, self.out_channels, bias=second_bias)))
        return out

    def bns(self):
        names = [f"init.{self.layer}.bn0"]
        if self.variant in ("cbl_cb", "cbl_cbl", "cbl_cbs"):
            names.append(f"init.{self.layer}.bn1")
        return names


def default_heads(ann, snn, variant="cbl_cb", kernel=1, taps=None):
    """One head per spiking layer, tapping the decoder output at the same resolution."""
    by_res = {ann.resolution(i): i for i in range(7, 12)}
    heads = []
    for k in range(1, snn.n_spiking + 1):
        shape = snn.state_shape(k)
        tap = (taps or {}).get(k) or by_res.get(shape[1:])
        if tap is None:
            raise ContractError(f"no dense-net feature at resolution {shape[1:]} for spiking layer {k}")
        if ann.resolution(tap) != shape[1:]:
            raise ContractError(f"tap {tap} resolution {ann.resolution(tap)} != layer {k} state {shape[1:]}")
        heads.append(InitHeadSpec(k, tap, ann.channels(tap), shape[0], variant, kernel))
    return tuple(heads)


@dataclass(frozen=True)
class NetSpec:
    ann: AnnNetSpec = field(default_factory=AnnNetSpec)
    snn: SnnNetSpec = field(default_factory=SnnNetSpec)
    heads: tuple = None

    def __post_init__(self):
        if self.heads is None:
            object.__setattr__(self, "heads", default_heads(self.ann, self.snn))
        if (self.ann.height, self.ann.width) != (self.snn.height, self.snn.width):
            raise ContractError("dense and spiking nets must share the sensor resolution")
        if self.ann.joints != self.snn.joints:
            raise ContractError("dense and spiking nets must predict the same joints")
        for h in self.heads:
            if h.out_channels != self.snn.state_shape(h.layer)[0]:
                raise ContractError(f"init head {h.layer} emits {h.out_channels} channels, state needs "
                                    f"{self.snn.state_shape(h.layer)[0]}")
            if self.ann.resolution(h.tap) != self.snn.state_shape(h.layer)[1:]:
                raise ContractError(f"init head {h.layer} taps a feature at the wrong resolution")

    @classmethod
    def desk(cls, height=64, width=64, div=8, joints=13, in_channels=20, variant="cbl_cb", head_kernel=1):
        """Same graph as the full network with channel widths divided by ``div``."""
        full_ann, full_snn = AnnNetSpec(), SnnNetSpec()
        ann = replace(full_ann, in_channels=in_channels, height=height, width=width, joints=joints,
                      enc_channels=tuple(max(1, c // div) for c in full_ann.enc_channels),
                      dec_channels=tuple(max(1, c // div) for c in full_ann.dec_channels))
        layers = tuple(replace(l, out_channels=joints if l.kind == "predict" else max(1, l.out_channels // div))
                       for l in full_snn.layers)
        snn = SnnNetSpec(2, height, width, layers)
        return cls(ann, snn, default_heads(ann, snn, variant, head_kernel))

    def with_heads(self, variant=None, kernel=None):
        heads = tuple(replace(h, variant=variant or h.variant, kernel=kernel or h.kernel) for h in self.heads)
        return replace(self, heads=heads)

    def to_json(self):
        d = {"ann": asdict(self.ann), "snn": asdict(self.snn), "heads": [asdict(h) for h in self.heads]}
        return json.dumps(d, indent=2)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        try:
            ann = AnnNetSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in d["ann"].items()})
            s = dict(d["snn"])
            s["layers"] = tuple(SnnLayer(**l) for l in s["layers"])
            snn = SnnNetSpec(**s)
            heads = tuple(InitHeadSpec(**h) for h in d["heads"]) if d.get("heads") is not None else None
        except (KeyError, TypeError) as e:
            raise ConfigError(f"malformed net spec: {e}") from None
        return cls(ann, snn, heads)

    def parameter_shapes(self):
        """Every weight name this net spec requires, mapped to its shape."""
        shapes = {}
        for name, spec, _, _ in self.ann.convs():
            shapes[name + "_weight"] = spec.weight_shape
            shapes[name + "_bias"] = (spec.out_channels,)
        for name, spec, _, _ in self.snn.convs():
            shapes[name + "_weight"] = spec.weight_shape
            if name.startswith("snn."):
                for p in ("gamma", "beta", "mean", "var"):
                    shapes[name.replace(".conv", ".bn_") + p] = (spec.out_channels,)
        for h in self.heads:
            for name, spec in h.convs():
                shapes[name + "_weight"] = spec.weight_shape
                if spec.bias:
                    shapes[name + "_bias"] = (spec.out_channels,)
            for bn in h.bns():
                for p in ("gamma", "beta", "mean", "var"):
                    shapes[f"{bn}_{p}"] = (h.out_channels,)
        return shapes

    def check_weights(self, weights, nets=("ann", "snn", "out", "init")):
        """Raise unless every required tensor of the listed nets is present with the right shape."""
        for name, shape in self.parameter_shapes().items():
            if name.split(".", 1)[0] not in nets:
                continue
            if name not in weights:
                raise ContractError(f"weight {name!r} missing")
            if tuple(weights[name].shape) != tuple(shape):
                raise ContractError(f"weight {name!r} has shape {weights[name].shape}, spec needs {shape}")


def random_weights(spec, seed=0, scale=1.0):
    """He-style random weights with identity-ish batch-norm statistics."""
    rng = np.random.default_rng(seed)
    w = WeightContainer()
    for name, shape in sorted(spec.parameter_shapes().items()):
        if name.endswith("_weight"):
            fan_in = int(np.prod(shape[1:]))
            w[name] = rng.normal(0.0, scale * np.sqrt(2.0 / fan_in), size=shape)
        elif name.endswith("_bias") or name.endswith("_beta") or name.endswith("_mean"):
            w[name] = rng.normal(0.0, 0.05 * scale, size=shape)
        elif name.endswith("_gamma"):
            w[name] = 1.0 + rng.normal(0.0, 0.1, size=shape)
        elif name.endswith("_var"):
            w[name] = rng.uniform(0.5, 1.5, size=shape)
    return w.quantized()


def zero_weights(spec):
    """All conv weights and shifts zero; batch-norm statistics at identity."""
    w = WeightContainer()
    for name, shape in spec.parameter_shapes().items():
        w[name] = np.ones(shape) if name.endswith("_gamma") or name.endswith("_var") else np.zeros(shape)
    return w
