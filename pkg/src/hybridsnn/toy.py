"""Synthetic moving-blob task for desk-scale training.

A bright disc drifts across a small sensor and bounces off the borders.
Events come from a contrast-threshold emulator on the anti-aliased
intensity, sampled every millisecond. The "dense net" for this task is a
fixed centroid tracker: at each tick it reports a target heatmap at the
centroid of the most recent events, which lags the true position the way a
slow frame-rate estimator does.
"""

from dataclasses import dataclass

import numpy as np

from .events import EventStream, build_dense_histogram, slice_spike_tensor
from .grad import SpikingNet, loss_only, make_pose_targets


@dataclass(frozen=True)
class BlobTask:
    size: int = 16
    radius: float = 2.5
    speed: tuple = (0.04, 0.08)  # px per ms
    contrast: float = 0.2
    dt_us: int = 10_000
    steps: int = 10  # spiking-net steps per dense-net period, including the tick itself
    history_us: int = 30_000
    hist_count: int = 400
    hist_bins: int = 2
    supersample: int = 4


# two 8-channel spiking layers; weights large enough that about 5% of neurons fire,
# readout small enough that the initial output stays near the 0.04-peak targets
TOY_NET = {"channels": (8, 8), "kernel": 3, "out_kernel": 3, "weight_scale": 4.0, "readout_scale": 0.01}


@dataclass
class Period:
    inputs: np.ndarray  # (T, 2, H, W) event counts per spiking step
    targets: np.ndarray  # (T, 1, H, W)
    visible: np.ndarray  # (T, 1)
    o_init: np.ndarray  # (1, H, W) tracker heatmap at the tick
    features: np.ndarray  # (2 * bins + 1, H, W) dense histogram + tracker heatmap
    joints: np.ndarray  # (T + 1, 1, 2) true (u, v) at the tick and after each step


def trajectory(task, rng, duration_ms):
    """Blob centers (u, v) at every millisecond, bouncing inside a margin."""
    lo, hi = task.radius + 0.5, task.size - 1 - task.radius - 0.5
    pos = rng.uniform(lo, hi, size=2)
    ang = rng.uniform(0, 2 * np.pi)
    vel = rng.uniform(*task.speed) * np.array([np.cos(ang), np.sin(ang)])
    out = np.empty((duration_ms + 1, 2))
    for i in range(duration_ms + 1):
        out[i] = pos
        pos = pos + vel
        for d in range(2):
            if pos[d] < lo or pos[d] > hi:
                vel[d] = -vel[d]
                pos[d] = np.clip(pos[d], lo, hi)
    return out


def render(task, centers):
    """Anti-aliased intensity of the disc for one center or an array of centers."""
    c = np.asarray(centers, dtype=np.float64)
    single = c.ndim == 1
    c = np.atleast_2d(c)
    s = task.supersample
    g = (np.arange(task.size * s) + 0.5) / s - 0.5
    dx = (g[None, :] - c[:, :1]) ** 2  # (N, W*s)
    dy = (g[None, :] - c[:, 1:]) ** 2  # (N, H*s)
    inside = (dy[:, :, None] + dx[:, None, :] <= task.radius**2).astype(np.float64)
    out = inside.reshape(len(c), task.size, s, task.size, s).mean(axis=(2, 4))
    return out[0] if single else out


def emulate_events(task, centers, t0_us=0):
    """Contrast-threshold events for intensity frames rendered every millisecond."""
    frames = render(task, centers)
    ref = frames[0].copy()
    ts, xs, ys, ps = [], [], [], []
    for i in range(1, len(frames)):
        d = frames[i] - ref
        n = np.floor(np.abs(d) / task.contrast + 1e-9).astype(np.int64)
        for pol, mask in ((1, d > 0), (0, d < 0)):
            yy, xx = np.nonzero(mask & (n > 0))
            reps = n[yy, xx]
            xs.append(np.repeat(xx, reps))
            ys.append(np.repeat(yy, reps))
            ps.append(np.full(reps.sum(), pol))
            ts.append(np.full(reps.sum(), t0_us + i * 1000, dtype=np.int64))
        ref += np.sign(d) * n * task.contrast
    cat = lambda a, dt: np.concatenate(a).astype(dt) if a else np.zeros(0, dt)
    return EventStream(cat(ts, np.int64), cat(xs, np.int64), cat(ys, np.int64), cat(ps, np.int64), task.size, task.size)


def tracker_heatmap(task, stream, t):
    """The toy dense net: target heatmap at the centroid of the last events before ``t``."""
    lo, hi = stream.window(t - task.history_us, t)
    lo = max(lo, hi - task.hist_count)
    if hi == lo:
        c = np.array([task.size / 2, task.size / 2])
    else:
        c = np.array([stream.x[lo:hi].mean(), stream.y[lo:hi].mean()])
    hm, _ = make_pose_targets([c], task.size, task.size)
    return hm


def sample_period(task, rng):
    """One dense-net period: history before the tick, then ``steps - 1`` spiking windows."""
    hist_ms = task.history_us // 1000
    period_ms = task.steps * task.dt_us // 1000
    centers = trajectory(task, rng, hist_ms + period_ms)
    stream = emulate_events(task, centers)
    tick = task.history_us
    o_init = tracker_heatmap(task, stream, tick)
    rep = build_dense_histogram(stream, tick, task.hist_count, task.hist_bins)
    features = np.concatenate([rep.tensor, o_init])
    T = task.steps - 1
    inputs = np.stack([slice_spike_tensor(stream, tick + j * task.dt_us, tick + (j + 1) * task.dt_us).tensor for j in range(T)])
    joints = np.array([[centers[hist_ms + j * task.dt_us // 1000]] for j in range(T + 1)])
    tg = [make_pose_targets(joints[j + 1], task.size, task.size) for j in range(T)]
    targets = np.stack([t for t, _ in tg])
    visible = np.stack([v for _, v in tg])
    return Period(inputs, targets, visible, o_init, features, joints)


def make_sampler(task):
    return lambda rng: sample_period(task, rng)


def fixed_samples(task, n, seed):
    rng = np.random.default_rng(seed)
    return [sample_period(task, rng) for _ in range(n)]


def build_toy_net(task, mode="D", seed=0, **kw):
    """Spiking net sized for ``task``; modes B and D get init heads fed by the dense features."""
    cfg = dict(TOY_NET, **{k: kw.pop(k) for k in list(kw) if k in TOY_NET})
    head_features = 2 * task.hist_bins + 1 if mode in ("B", "D") else 0
    return SpikingNet.build(2, list(cfg["channels"]), joints=1, kernel=cfg["kernel"], out_kernel=cfg["out_kernel"],
                            seed=seed, weight_scale=cfg["weight_scale"], readout_scale=cfg["readout_scale"],
                            head_features=head_features, **kw)


def mean_loss(net, samples, mode="D"):
    """Average heatmap loss over fixed periods, with the inputs the mode allows."""
    total = 0.0
    for s in samples:
        o0 = s.o_init if mode in ("C", "D") else None
        feats = s.features if mode in ("B", "D") else None
        total += loss_only(net, s.inputs, s.targets, None, o0, feats, s.visible)
    return total / len(samples)
