"""Minimal dense tensor runtime over (C, H, W) float64 arrays.

Also holds ``ConvLayerSpec``, the MAC counter and the weight container file
format::

    b"WGT0" | u32 manifest_len | UTF-8 JSON manifest | raw little-endian f32 blob

Manifest entries carry ``name``, ``dtype`` ("f32"), ``shape``, ``offset`` and
``length`` (bytes, relative to the blob start).
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ContractError, ParseError

WEIGHT_MAGIC = b"WGT0"


@dataclass(frozen=True)
class ConvLayerSpec:
    kernel: int
    in_channels: int
    out_channels: int
    stride: int = 1
    bias: bool = True

    def __post_init__(self):
        if self.kernel % 2 != 1:
            raise ContractError(f"kernel must be odd, got {self.kernel}")
        if self.stride < 1:
            raise ContractError("stride must be >= 1")

    @property
    def padding(self):
        return self.kernel // 2

    def out_size(self, h, w):
        return -(-h // self.stride), -(-w // self.stride)

    @property
    def weight_shape(self):
        return (self.out_channels, self.in_channels, self.kernel, self.kernel)


def conv2d(x, spec, weight, bias=None):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 3 or x.shape[0] != spec.in_channels:
        raise ContractError(f"conv input {x.shape} does not have {spec.in_channels} channels")
    if tuple(np.shape(weight)) != spec.weight_shape:
        raise ContractError(f"weight shape {np.shape(weight)} != {spec.weight_shape}")
    out = kernels.conv2d(x, weight, spec.stride, spec.padding)
    if bias is not None:
        out += np.asarray(bias, dtype=np.float64)[:, None, None]
    return out


def batch_norm_infer(x, gamma, beta, mean, var, eps=1e-5):
    var = np.asarray(var, dtype=np.float64)
    if (var < 0).any():
        raise ContractError("batch-norm variance must be non-negative")
    c = x.shape[0]
    for name, p in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        if np.shape(p) != (c,):
            raise ContractError(f"batch-norm {name} has shape {np.shape(p)}, expected ({c},)")
    scale = np.asarray(gamma, dtype=np.float64) / np.sqrt(var + eps)
    shift = np.asarray(beta, dtype=np.float64) - np.asarray(mean, dtype=np.float64) * scale
    return x * scale[:, None, None] + shift[:, None, None]


def leaky_relu(x, slope=0.1):
    return np.where(x >= 0, x, slope * x)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def avg_pool2(x):
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ContractError(f"avg_pool2 needs even spatial dims, got {h}x{w}")
    return x.reshape(c, h // 2, 2, w // 2, 2).mean(axis=(2, 4))


def _upsample_axis(x, axis):
    n = x.shape[axis]
    # half-pixel centers: dst i samples src (i + 0.5) / 2 - 0.5, clamped to the edge
    src = np.clip((np.arange(2 * n) + 0.5) / 2 - 0.5, 0, n - 1)
    i0 = np.floor(src).astype(int)
    i1 = np.minimum(i0 + 1, n - 1)
    frac = src - i0
    shape = [1] * x.ndim
    shape[axis] = 2 * n
    frac = frac.reshape(shape)
    return np.take(x, i0, axis=axis) * (1 - frac) + np.take(x, i1, axis=axis) * frac


def upsample_bilinear2(x):
    return _upsample_axis(_upsample_axis(x, 1), 2)


def concat_channels(a, b):
    if a.shape[1:] != b.shape[1:]:
        raise ContractError(f"cannot concat {a.shape} with {b.shape}: spatial mismatch")
    return np.concatenate([a, b], axis=0)


def count_macs(spec, out_h, out_w):
    return spec.kernel**2 * out_w * out_h * spec.in_channels * spec.out_channels


class WeightContainer:
    """Named float tensors plus free-form metadata, serializable to a single file."""

    def __init__(self, tensors=None, meta=None):
        self.tensors = dict(tensors or {})
        self.meta = {"align_corners": False}
        self.meta.update(meta or {})

    def __getitem__(self, name):
        try:
            return self.tensors[name]
        except KeyError:
            raise ContractError(f"weight {name!r} missing from container") from None

    def __setitem__(self, name, value):
        self.tensors[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name):
        return name in self.tensors

    def get(self, name, default=None):
        return self.tensors.get(name, default)

    def names(self, prefix=""):
        return sorted(n for n in self.tensors if n.startswith(prefix))

    def manifest(self):
        entries, offset = [], 0
        for name in sorted(self.tensors):
            arr = self.tensors[name]
            length = arr.size * 4
            entries.append({"name": name, "dtype": "f32", "shape": list(arr.shape), "offset": offset, "length": length})
            offset += length
        return {"entries": entries, "meta": self.meta}

    def to_bytes(self):
        manifest = json.dumps(self.manifest(), sort_keys=True).encode("utf-8")
        blob = b"".join(self.tensors[e["name"]].astype("<f4").tobytes() for e in self.manifest()["entries"])
        return WEIGHT_MAGIC + struct.pack("<I", len(manifest)) + manifest + blob

    def save(self, path):
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def from_bytes(cls, raw):
        if raw[:4] != WEIGHT_MAGIC:
            raise ParseError(f"bad weight container magic {raw[:4]!r}")
        (mlen,) = struct.unpack_from("<I", raw, 4)
        try:
            manifest = json.loads(raw[8:8 + mlen].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise ParseError(f"unreadable weight manifest: {e}") from None
        blob = raw[8 + mlen:]
        tensors = {}
        for e in manifest["entries"]:
            if e["dtype"] != "f32":
                raise ParseError(f"unsupported dtype {e['dtype']!r} for {e['name']}")
            n = int(np.prod(e["shape"], dtype=np.int64))
            if e["length"] != 4 * n or e["offset"] + e["length"] > len(blob):
                raise ParseError(f"entry {e['name']} overruns the blob")
            arr = np.frombuffer(blob, dtype="<f4", count=n, offset=e["offset"])
            tensors[e["name"]] = arr.reshape(e["shape"]).astype(np.float64)
        return cls(tensors, manifest.get("meta"))

    @classmethod
    def load(cls, path):
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())

    def quantized(self):
        """Copy with every tensor rounded through float32, i.e. what a save/load round trip yields."""
        return WeightContainer({k: v.astype(np.float32).astype(np.float64) for k, v in self.tensors.items()}, self.meta)
