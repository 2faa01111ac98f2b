"""Dense U-Net forward pass and the state-initialization heads."""

import numpy as np

from .errors import ContractError
from .events import DenseRepresentation
from .tensornet import (avg_pool2, batch_norm_infer, concat_channels, conv2d, leaky_relu, sigmoid,
                        upsample_bilinear2)

BN_EPS = 1e-5


def _conv(x, weights, name, spec):
    return conv2d(x, spec, weights[name + "_weight"], weights.get(name + "_bias") if spec.bias else None)


def _bn(x, weights, name):
    return batch_norm_infer(x, weights[name + "_gamma"], weights[name + "_beta"],
                            weights[name + "_mean"], weights[name + "_var"], BN_EPS)


def ann_forward(dense, spec, weights):
    """Run the dense U-Net.

    Returns ``(features, o_init)``: ``features[i]`` is the output of layer
    group ``i`` (1..11) and ``o_init`` the J x H x W prediction heatmaps.
    """
    x = dense.tensor if isinstance(dense, DenseRepresentation) else np.asarray(dense, dtype=np.float64)
    if x.shape != (spec.in_channels, spec.height, spec.width):
        raise ContractError(f"dense input {x.shape} != expected {(spec.in_channels, spec.height, spec.width)}")
    w_in = weights["ann.1.conv_a_weight"].shape[1]
    if w_in != spec.in_channels:
        raise ContractError(f"loaded weights expect {w_in} input channels, input has {spec.in_channels}")
    convs = {name: s for name, s, _, _ in spec.convs()}
    features = {}
    for i in range(1, 7):
        if i > 1:
            x = avg_pool2(x)
        x = leaky_relu(_conv(x, weights, f"ann.{i}.conv_a", convs[f"ann.{i}.conv_a"]))
        x = leaky_relu(_conv(x, weights, f"ann.{i}.conv_b", convs[f"ann.{i}.conv_b"]))
        features[i] = x
    for i in range(7, 12):
        x = upsample_bilinear2(x)
        x = leaky_relu(_conv(x, weights, f"ann.{i}.conv_a", convs[f"ann.{i}.conv_a"]))
        x = concat_channels(x, features[12 - i])
        x = leaky_relu(_conv(x, weights, f"ann.{i}.conv_b", convs[f"ann.{i}.conv_b"]))
        features[i] = x
    o_init = _conv(x, weights, "ann.12.conv", convs["ann.12.conv"])
    return features, o_init


def init_head_forward(head, feature, weights):
    convs = head.convs()
    x = _conv(feature, weights, *convs[0])
    x = leaky_relu(_bn(x, weights, f"init.{head.layer}.bn0"))
    if head.variant == "cbl":
        return x
    x = _conv(x, weights, *convs[1])
    if head.variant == "cbl_c":
        return x
    x = _bn(x, weights, f"init.{head.layer}.bn1")
    if head.variant == "cbl_cbl":
        return leaky_relu(x)
    if head.variant == "cbl_cbs":
        return sigmoid(x)
    return x


def init_heads_forward(features, heads, weights):
    """Membrane-potential maps ``{layer: s_k}`` for every spiking layer with a head."""
    out = {}
    for head in heads:
        if head.tap not in features:
            raise ContractError(f"init head for layer {head.layer} needs dense feature {head.tap}, not computed")
        feat = features[head.tap]
        if feat.shape[0] != head.in_channels:
            raise ContractError(f"feature {head.tap} has {feat.shape[0]} channels, head expects {head.in_channels}")
        out[head.layer] = init_head_forward(head, feat, weights)
    return out


GROUPS = {"encoder": (1, 2, 3, 4), "residual": (5, 6), "decoder": (7, 8), "last": (9,)}


def state_distribution_report(s_maps, v_th=1.0, quantiles=(0.05, 0.25, 0.5, 0.75, 0.95), groups=None):
    """Summary statistics of initialized membrane potentials, grouped by network stage."""
    groups = groups or GROUPS
    report = {}
    for name, layers in groups.items():
        vals = [np.ravel(s_maps[k]) for k in layers if k in s_maps]
        if not vals:
            continue
        v = np.concatenate(vals)
        report[name] = {
            "count": int(v.size),
            "mean": float(v.mean()),
            "quantiles": {q: float(np.quantile(v, q)) for q in quantiles},
            "frac_firing": float((v >= v_th).mean()),
            "frac_negative": float((v < 0).mean()),
        }
    return report
