"""Reverse-mode training through unrolled LIF dynamics.

``SpikingNet`` is a small stack of spiking convolutions (conv -> per-channel
affine -> LIF) with a conv readout into a leaky output integrator, and
optional state-init heads that map a fixed feature map to each layer's
initial membrane potential. ``bptt_grad`` differentiates the averaged
heatmap loss through every Euler step by hand.

The spike nonlinearity has two forward modes: ``"heaviside"`` (the real
network; the backward pass substitutes the surrogate derivative) and
``"smooth"`` (forward uses the arctan companion whose exact derivative *is*
the surrogate, so finite differences can check the backward pass).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ContractError
from .metrics import decode_heatmaps

LEAKY_SLOPE = 0.1


def surrogate_grad(x):
    """Stand-in for the Heaviside derivative: 1 / (1 + (pi x)^2)."""
    return 1.0 / (1.0 + (np.pi * np.asarray(x, dtype=np.float64)) ** 2)


def smooth_heaviside(x):
    """Smooth step whose derivative equals ``surrogate_grad``."""
    return 0.5 + np.arctan(np.pi * np.asarray(x, dtype=np.float64)) / np.pi


def _spike(x, mode):
    if mode == "smooth":
        return smooth_heaviside(x)
    return (x >= 0).astype(np.float64)


# -- heatmap targets and loss ------------------------------------------------

TARGET_KERNEL = 11
TARGET_SIGMA = 2.0


def gaussian_kernel(size=TARGET_KERNEL, sigma=TARGET_SIGMA):
    """Separable 2D Gaussian sampled on the pixel grid, normalized over the full plane (not the window)."""
    r = np.arange(size) - size // 2
    g = np.exp(-(r**2) / (2 * sigma**2)) / (math.sqrt(2 * math.pi) * sigma)
    return np.outer(g, g)


def make_heatmap_target(joint, height, width, size=TARGET_KERNEL, sigma=TARGET_SIGMA):
    """Blurred one-hot heatmap for a joint at pixel (u, v). Returns ``(channel, visible)``."""
    u, v = (int(round(c)) for c in joint)
    out = np.zeros((height, width))
    if not (0 <= u < width and 0 <= v < height):
        return out, False
    k = gaussian_kernel(size, sigma)
    r = size // 2
    y0, y1 = max(0, v - r), min(height, v + r + 1)
    x0, x1 = max(0, u - r), min(width, u + r + 1)
    out[y0:y1, x0:x1] = k[y0 - v + r:y1 - v + r, x0 - u + r:x1 - u + r]
    return out, True


def make_pose_targets(joints, height, width):
    chans, vis = zip(*(make_heatmap_target(j, height, width) for j in joints))
    return np.stack(chans), np.array(vis)


def heatmap_loss(pred, target, visible=None):
    """Average squared heatmap error over steps and visible joints (pixel mean per joint).

    ``pred``/``target`` have shape (T, J, H, W); ``visible`` (T, J) or (J,).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    per = ((pred - target) ** 2).mean(axis=(2, 3))
    if visible is None:
        return float(per.mean())
    m = np.broadcast_to(np.asarray(visible, dtype=bool), per.shape)
    return float(per[m].mean()) if m.any() else 0.0


# -- differentiable network --------------------------------------------------


@dataclass
class SpikingNet:
    """Spiking conv stack + readout + integrator; all tensors in ``params``.

    Layer ``k`` (1-based) has ``w{k}`` (Co, Ci, k, k), ``scale{k}``/``shift{k}``
    (Co,); the readout is ``w_out`` (J, C_last, k, k). Heads (optional) map a
    feature map to layer ``k``'s initial potential: ``h{k}.w0``, ``h{k}.scale0``,
    ``h{k}.shift0``, ``h{k}.w1``, ``h{k}.scale1``, ``h{k}.shift1``.
    """

    params: dict
    n_layers: int
    tau: float = 3.0
    v_th: float = 1.0
    v_rest: float = 0.0
    decay: float = 0.8
    spike_mode: str = "heaviside"
    detach_reset: bool = False
    heads: bool = False

    @classmethod
    def build(cls, in_channels, channels, joints=1, kernel=3, out_kernel=1, seed=0, weight_scale=1.0,
              readout_scale=None, head_features=0, head_kernel=1, **kw):
        rng = np.random.default_rng(seed)
        p = {}
        cin = in_channels
        for k, c in enumerate(channels, 1):
            p[f"w{k}"] = rng.normal(0, weight_scale * math.sqrt(2.0 / (cin * kernel * kernel)), (c, cin, kernel, kernel))
            p[f"scale{k}"] = np.ones(c)
            p[f"shift{k}"] = np.zeros(c)
            cin = c
        if readout_scale is None:
            readout_scale = weight_scale * math.sqrt(1.0 / (cin * out_kernel**2))
        p["w_out"] = rng.normal(0, readout_scale, (joints, cin, out_kernel, out_kernel))
        if head_features:
            for k, c in enumerate(channels, 1):
                p[f"h{k}.w0"] = rng.normal(0, math.sqrt(2.0 / (head_features * head_kernel**2)), (c, head_features, head_kernel, head_kernel))
                p[f"h{k}.scale0"] = np.ones(c)
                p[f"h{k}.shift0"] = np.zeros(c)
                p[f"h{k}.w1"] = rng.normal(0, math.sqrt(1.0 / (c * head_kernel**2)), (c, c, head_kernel, head_kernel))
                p[f"h{k}.scale1"] = np.full(c, 0.1)
                p[f"h{k}.shift1"] = np.zeros(c)
        return cls(p, len(channels), heads=bool(head_features), **kw)

    @property
    def gain(self):
        return 1.0 / self.tau

    def copy(self):
        return SpikingNet({k: v.copy() for k, v in self.params.items()}, self.n_layers, self.tau, self.v_th,
                          self.v_rest, self.decay, self.spike_mode, self.detach_reset, self.heads)

    def state_shape(self, k, hw):
        return (self.params[f"w{k}"].shape[0], *hw)


def _conv(x, w):
    return kernels.conv2d(x, w, 1, w.shape[2] // 2)


def _conv_back(x, w, gy):
    pad = w.shape[2] // 2
    return (kernels.conv2d_grad_weight(x, gy, w.shape[2], 1, pad),
            kernels.conv2d_grad_input(gy, w, x.shape, 1, pad))


def head_forward(net, k, feat):
    p = net.params
    c0 = _conv(feat, p[f"h{k}.w0"])
    a0 = c0 * p[f"h{k}.scale0"][:, None, None] + p[f"h{k}.shift0"][:, None, None]
    r0 = np.where(a0 >= 0, a0, LEAKY_SLOPE * a0)
    c1 = _conv(r0, p[f"h{k}.w1"])
    s = c1 * p[f"h{k}.scale1"][:, None, None] + p[f"h{k}.shift1"][:, None, None]
    return s, (c0, a0, r0, c1)


def head_backward(net, k, feat, cache, gs, grads):
    p = net.params
    c0, a0, r0, c1 = cache
    grads[f"h{k}.shift1"] += gs.sum(axis=(1, 2))
    grads[f"h{k}.scale1"] += (gs * c1).sum(axis=(1, 2))
    gw1, gr0 = _conv_back(r0, p[f"h{k}.w1"], gs * p[f"h{k}.scale1"][:, None, None])
    grads[f"h{k}.w1"] += gw1
    ga0 = np.where(a0 >= 0, gr0, LEAKY_SLOPE * gr0)
    grads[f"h{k}.shift0"] += ga0.sum(axis=(1, 2))
    grads[f"h{k}.scale0"] += (ga0 * c0).sum(axis=(1, 2))
    gw0, _ = _conv_back(feat, p[f"h{k}.w0"], ga0 * p[f"h{k}.scale0"][:, None, None])
    grads[f"h{k}.w0"] += gw0


@dataclass
class Rollout:
    outputs: np.ndarray  # (T, J, H, W)
    spikes: list  # per step, per layer
    cache: list = field(repr=False, default=None)


def initial_states(net, hw, states=None, features=None):
    """Layer-wise initial potentials: explicit ``states`` win, then heads, then zeros."""
    out, head_cache = [], {}
    for k in range(1, net.n_layers + 1):
        if states is not None and states.get(k) is not None:
            out.append(np.asarray(states[k], dtype=np.float64))
        elif net.heads and features is not None:
            s, head_cache[k] = head_forward(net, k, features)
            out.append(s)
        else:
            out.append(np.zeros(net.state_shape(k, hw)))
    return out, head_cache


def forward(net, inputs, states=None, o0=None, features=None, keep_cache=True):
    """Unroll the network over ``inputs`` (T, C, H, W)."""
    inputs = np.asarray(inputs, dtype=np.float64)
    T, _, H, W = inputs.shape
    p, g, vth = net.params, net.gain, net.v_th
    v, head_cache = initial_states(net, (H, W), states, features)
    J = p["w_out"].shape[0]
    o = np.zeros((J, H, W)) if o0 is None else np.array(o0, dtype=np.float64)
    outs, spikes, cache = [], [], []
    for t in range(T):
        inp = inputs[t]
        step = []
        s_t = []
        for k in range(1, net.n_layers + 1):
            c = _conv(inp, p[f"w{k}"])
            u = c * p[f"scale{k}"][:, None, None] + p[f"shift{k}"][:, None, None]
            vprev = v[k - 1]
            vpre = vprev + g * (u - (vprev - net.v_rest))
            s = _spike(vpre - vth, net.spike_mode)
            v[k - 1] = vpre - vth * s
            if keep_cache:
                step.append((inp, c, vpre))
            s_t.append(s)
            inp = s
        o = net.decay * o + _conv(inp, p["w_out"])
        if keep_cache:
            step.append(inp)
            cache.append(step)
        outs.append(o)
        spikes.append(s_t)
    r = Rollout(np.array(outs), spikes, cache if keep_cache else None)
    r.head_cache = head_cache
    return r


def bptt_grad(net, inputs, targets, states=None, o0=None, features=None, visible=None):
    """Loss and exact reverse-mode gradients through all steps.

    Returns ``(loss, grads)`` where ``grads`` holds one entry per tensor in
    ``net.params`` plus ``state{k}`` (initial potentials of layer k) and
    ``o0`` (initial integrator contents).
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    T = inputs.shape[0]
    if targets.shape[0] != T:
        raise ContractError("targets and inputs differ in length")
    roll = forward(net, inputs, states, o0, features)
    J, H, W = roll.outputs.shape[1:]
    vis = np.ones((T, J), dtype=bool) if visible is None else np.broadcast_to(np.asarray(visible, bool), (T, J))
    n_terms = vis.sum()
    diff = (roll.outputs - targets) * vis[:, :, None, None]
    loss = float((diff**2).sum() / (H * W * n_terms)) if n_terms else 0.0
    gout = 2.0 * diff / (H * W * n_terms) if n_terms else np.zeros_like(diff)

    p, g, vth = net.params, net.gain, net.v_th
    grads = {name: np.zeros_like(val) for name, val in p.items()}
    gv = [np.zeros(net.state_shape(k, (H, W))) for k in range(1, net.n_layers + 1)]
    go = np.zeros((J, H, W))
    for t in range(T - 1, -1, -1):
        step = roll.cache[t]
        go = net.decay * go + gout[t]
        last = step[-1]
        gw, gs = _conv_back(last, p["w_out"], go)
        grads["w_out"] += gw
        for k in range(net.n_layers, 0, -1):
            inp, c, vpre = step[k - 1]
            hp = surrogate_grad(vpre - vth)
            keep = 1.0 if net.detach_reset else 1.0 - vth * hp
            gvpre = gv[k - 1] * keep + gs * hp
            gu = g * gvpre
            gv[k - 1] = (1.0 - g) * gvpre
            grads[f"shift{k}"] += gu.sum(axis=(1, 2))
            grads[f"scale{k}"] += (gu * c).sum(axis=(1, 2))
            gw, gs = _conv_back(inp, p[f"w{k}"], gu * p[f"scale{k}"][:, None, None])
            grads[f"w{k}"] += gw
    for k in range(1, net.n_layers + 1):
        grads[f"state{k}"] = gv[k - 1]
        if k in roll.head_cache:
            head_backward(net, k, features, roll.head_cache[k], gv[k - 1], grads)
    grads["o0"] = go * net.decay
    return loss, grads


def loss_only(net, inputs, targets, states=None, o0=None, features=None, visible=None):
    roll = forward(net, inputs, states, o0, features, keep_cache=False)
    T, J = roll.outputs.shape[:2]
    vis = np.ones((T, J), dtype=bool) if visible is None else np.broadcast_to(np.asarray(visible, bool), (T, J))
    return heatmap_loss(roll.outputs, targets, vis)


def finite_diff_check(net, inputs, targets, states=None, o0=None, features=None, eps=1e-4, names=None):
    """Max relative deviation between reverse-mode and central-difference gradients.

    Both sides use the smooth spike companion. Checks every scalar of every
    parameter in ``names`` (default: all params, initial states and ``o0``).
    """
    smooth = net.copy()
    smooth.spike_mode = "smooth"
    hw = np.shape(inputs)[2:]
    states = dict(states) if states is not None else None
    J = net.params["w_out"].shape[0]
    o0 = np.zeros((J, *hw)) if o0 is None else np.array(o0, dtype=np.float64)
    _, grads = bptt_grad(smooth, inputs, targets, states, o0, features)

    # initial states are only checkable when given explicitly (heads otherwise produce them)
    if states is None and not (net.heads and features is not None):
        states = {k: np.zeros(smooth.state_shape(k, hw)) for k in range(1, net.n_layers + 1)}
    tensors = dict(smooth.params)
    if states is not None:
        tensors.update({f"state{k}": v for k, v in states.items()})
    tensors["o0"] = o0
    worst = 0.0
    for name in names or sorted(tensors):
        arr = tensors[name]
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + eps
            fp = loss_only(smooth, inputs, targets, states, o0, features)
            arr[idx] = orig - eps
            fm = loss_only(smooth, inputs, targets, states, o0, features)
            arr[idx] = orig
            g_fd = (fp - fm) / (2 * eps)
            dev = abs(grads[name][idx] - g_fd) / max(abs(g_fd), 1e-8)
            worst = max(worst, dev)
    return worst


@dataclass
class CheckCase:
    net: SpikingNet
    inputs: np.ndarray
    targets: np.ndarray
    states: dict
    o0: np.ndarray
    features: np.ndarray

    @property
    def n_params(self):
        return sum(v.size for v in self.net.params.values())

    def run(self, eps=1e-4):
        return finite_diff_check(self.net, self.inputs, self.targets, self.states, self.o0, self.features, eps)


def random_check_case(seed, size="small"):
    """Seeded small unrolled net for gradient checking.

    ``size="linear"`` has no spiking layer (the loss is quadratic in every
    checked tensor); ``"small"`` draws 1-3 spiking layers, T in [2, 8] and,
    for half of the seeds, state-init heads.
    """
    rng = np.random.default_rng(seed)
    if size == "linear":
        channels, hw, T, heads = [], (4, 4), int(rng.integers(2, 6)), False
    elif size == "small":
        channels = [int(c) for c in rng.integers(1, 5, size=int(rng.integers(1, 4)))]
        hw = tuple(int(n) for n in rng.integers(3, 7, size=2))
        T, heads = int(rng.integers(2, 9)), bool(rng.integers(0, 2))
    else:
        raise ContractError(f"unknown gradcheck size {size!r}")
    cin, J = 2, int(rng.integers(1, 3))
    n_feat = 3 if heads else 0
    net = SpikingNet.build(cin, channels, joints=J, kernel=int(rng.choice([1, 3])), out_kernel=int(rng.choice([1, 3])),
                           seed=int(rng.integers(2**31)), weight_scale=2.0, head_features=n_feat,
                           tau=float(rng.uniform(1.5, 4.0)), decay=float(rng.uniform(0.5, 0.95)),
                           )
    for name in net.params:
        if "shift" in name:
            net.params[name] = rng.normal(0, 0.3, net.params[name].shape)
    inputs = (rng.random((T, cin, *hw)) < 0.3).astype(np.float64)
    targets = rng.random((T, J, *hw)) * 0.1
    features = rng.normal(0, 1, (n_feat, *hw)) if heads else None
    if heads:
        # keep head pre-activations clear of the LeakyReLU kink so central differences are valid
        for k in range(1, len(channels) + 1):
            a0 = head_forward(net, k, features)[1][1]
            near = np.abs(a0).min(axis=(1, 2)) < 1e-2
            while near.any():
                net.params[f"h{k}.shift0"][near] += rng.uniform(0.02, 0.05, near.sum())
                a0 = head_forward(net, k, features)[1][1]
                near = np.abs(a0).min(axis=(1, 2)) < 1e-2
    states = None if heads else {k: rng.normal(0.5, 0.5, net.state_shape(k, hw)) for k in range(1, len(channels) + 1)}
    o0 = rng.normal(0, 0.05, (J, *hw))
    return CheckCase(net, inputs, targets, states, o0, features)


# -- optimizer and toy training ----------------------------------------------


class Adam:
    def __init__(self, params, lr=5e-5, betas=(0.9, 0.999), eps=1e-8):
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        b1, b2 = self.betas
        c1, c2 = 1 - b1**self.t, 1 - b2**self.t
        for k in params:
            g = grads[k]
            self.m[k] = b1 * self.m[k] + (1 - b1) * g
            self.v[k] = b2 * self.v[k] + (1 - b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


@dataclass
class TrainResult:
    losses: list
    diverged: bool
    net: SpikingNet


def train(net, sampler, steps, lr=5e-5, batch_size=2, seed=0, mode="D", callback=None):
    """Adam on the averaged heatmap loss. ``sampler(rng)`` returns a training period (see ``toy``)."""
    rng = np.random.default_rng(seed)
    net = net.copy()
    opt = Adam(net.params, lr)
    losses = []
    diverged = False
    for it in range(steps):
        total = {k: np.zeros_like(v) for k, v in net.params.items()}
        batch_loss = 0.0
        for _ in range(batch_size):
            sample = sampler(rng)
            o0 = sample.o_init if mode in ("C", "D") else None
            feats = sample.features if mode in ("B", "D") else None
            loss, grads = bptt_grad(net, sample.inputs, sample.targets, None, o0, feats, sample.visible)
            batch_loss += loss / batch_size
            for k in total:
                total[k] += grads[k] / batch_size
        losses.append(batch_loss)
        if not np.isfinite(batch_loss) or (losses and batch_loss > 10 * losses[0]):
            diverged = True
            break
        opt.step(net.params, total)
        if callback is not None:
            callback(it, batch_loss)
    return TrainResult(losses, diverged, net)


def pose_error_curve(net, samples, mode="D"):
    """Mean 2D joint error per step index over evaluation periods; index 0 is the init output."""
    steps = samples[0].inputs.shape[0] + 1
    err = np.zeros(steps)
    for s in samples:
        o0 = s.o_init if mode in ("C", "D") else np.zeros_like(s.o_init)
        feats = s.features if mode in ("B", "D") else None
        roll = forward(net, s.inputs, None, o0, feats, keep_cache=False)
        maps = np.concatenate([o0[None], roll.outputs])
        for t in range(steps):
            pose = decode_heatmaps(maps[t])
            err[t] += np.linalg.norm(pose.xy - s.joints[t], axis=1).mean()
    return err / len(samples)
