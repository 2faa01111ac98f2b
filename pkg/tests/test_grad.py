import math

import numpy as np
import pytest

from hybridsnn.errors import ContractError
from hybridsnn.grad import (Adam, SpikingNet, bptt_grad, finite_diff_check, forward, gaussian_kernel, heatmap_loss,
                            make_heatmap_target, make_pose_targets, random_check_case, smooth_heaviside,
                            surrogate_grad, train)
from hybridsnn.metrics import decode_heatmaps


def test_surrogate_values():
    assert surrogate_grad(0.0) == 1.0
    assert surrogate_grad(1.0) == pytest.approx(1 / (1 + math.pi**2))
    assert surrogate_grad(-2.0) == surrogate_grad(2.0)


def test_smooth_companion_derivative_is_surrogate():
    x = np.linspace(-2, 2, 41)
    h = 1e-6
    np.testing.assert_allclose((smooth_heaviside(x + h) - smooth_heaviside(x - h)) / (2 * h), surrogate_grad(x),
                               rtol=1e-7)
    assert smooth_heaviside(0.0) == 0.5


def test_target_heatmap_peak_and_mass():
    k = gaussian_kernel()
    assert k.shape == (11, 11)
    assert k.max() == pytest.approx(1 / (2 * math.pi * 4))
    assert 0.98 < k.sum() < 1.0  # not renormalized inside the 11x11 window
    hm, vis = make_heatmap_target((20, 10), 32, 40)
    assert vis and hm.max() == k.max() and np.unravel_index(hm.argmax(), hm.shape) == (10, 20)


def test_target_clipped_at_border_and_invisible_outside():
    hm, vis = make_heatmap_target((0, 0), 16, 16)
    assert vis and hm.sum() < gaussian_kernel().sum()
    hm, vis = make_heatmap_target((16, 3), 16, 16)
    assert not vis and not hm.any()


def test_decode_round_trip_every_interior_pixel():
    h, w = 12, 9
    for v in range(h):
        for u in range(w):
            hm, _ = make_pose_targets([(u, v)], h, w)
            assert tuple(decode_heatmaps(hm).xy[0]) == (u, v)


def test_loss_masks_invisible_joints():
    pred = np.zeros((2, 2, 3, 3))
    target = np.zeros((2, 2, 3, 3))
    target[:, 1] = 1.0
    assert heatmap_loss(pred, target) == pytest.approx(0.5)
    assert heatmap_loss(pred, target, np.array([True, False])) == 0.0
    assert heatmap_loss(pred, target, np.array([False, True])) == pytest.approx(1.0)
    assert heatmap_loss(pred, target, np.zeros(2, bool)) == 0.0


def test_forward_pure_decay_without_layers():
    net = SpikingNet.build(2, [], joints=1, seed=0)
    net.params["w_out"][:] = 0
    roll = forward(net, np.zeros((3, 2, 4, 4)), o0=np.ones((1, 4, 4)))
    np.testing.assert_allclose(roll.outputs[:, 0, 0, 0], [0.8, 0.64, 0.512])


def test_forward_matches_lif_definition():
    # 1x1 single-channel layer, identity readout: check the hand recursion
    net = SpikingNet.build(1, [1], joints=1, kernel=1, out_kernel=1, seed=0)
    net.params["w1"][:] = 1.0
    net.params["w_out"][:] = 1.0
    x = np.array([3.0, 3.0, 0.0, 3.0]).reshape(4, 1, 1, 1)
    roll = forward(net, x)
    v, o, spikes = 0.0, 0.0, []
    for xt in x.ravel():
        v = v + (xt - v) / 3
        s = float(v >= 1)
        v -= s
        o = 0.8 * o + s
        spikes.append(s)
    assert [float(s[0].item()) for s in roll.spikes] == spikes
    assert roll.outputs[-1].item() == pytest.approx(o)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_reverse_mode_matches_finite_differences(seed):
    assert random_check_case(seed).run() <= 1e-3


def test_linear_path_is_exact():
    for seed in range(3):
        assert random_check_case(seed, "linear").run() <= 1e-6


def test_detached_reset_changes_the_gradient():
    case = random_check_case(5)
    a = bptt_grad(case.net, case.inputs, case.targets, case.states, case.o0, case.features)[1]
    det = case.net.copy()
    det.detach_reset = True
    b = bptt_grad(det, case.inputs, case.targets, case.states, case.o0, case.features)[1]
    assert any(not np.allclose(a[k], b[k]) for k in a if k.startswith("w"))


def test_gradients_reach_states_and_integrator():
    case = random_check_case(2)
    _, g = bptt_grad(case.net, case.inputs, case.targets, case.states, case.o0, case.features)
    assert g["o0"].shape == case.o0.shape and np.abs(g["o0"]).sum() > 0
    for k in range(1, case.net.n_layers + 1):
        assert g[f"state{k}"].shape == case.net.state_shape(k, case.inputs.shape[2:])


def test_gradcheck_catches_a_wrong_gradient(monkeypatch):
    import hybridsnn.grad as g

    case = random_check_case(1, "linear")
    real = g.bptt_grad

    def broken(*a, **kw):
        loss, grads = real(*a, **kw)
        grads["w_out"] = grads["w_out"] * 1.01
        return loss, grads

    monkeypatch.setattr(g, "bptt_grad", broken)
    assert finite_diff_check(case.net, case.inputs, case.targets, case.states, case.o0, case.features) > 1e-3


def test_mismatched_targets_rejected():
    net = SpikingNet.build(2, [2], seed=0)
    with pytest.raises(ContractError):
        bptt_grad(net, np.zeros((3, 2, 4, 4)), np.zeros((2, 1, 4, 4)))
    with pytest.raises(ContractError):
        random_check_case(0, "huge")


def test_adam_minimizes_quadratic():
    p = {"x": np.array([3.0, -2.0])}
    opt = Adam(p, lr=0.1)
    for _ in range(300):
        opt.step(p, {"x": 2 * p["x"]})
    assert np.abs(p["x"]).max() < 1e-2


def _sampler(T=3, hw=(4, 4)):
    class P:
        pass

    def draw(rng):
        s = P()
        s.inputs = (rng.random((T, 2, *hw)) < 0.3).astype(float)
        s.targets = rng.random((T, 1, *hw)) * 0.05
        s.visible = np.ones((T, 1), bool)
        s.o_init = np.zeros((1, *hw))
        s.features = np.zeros((1, *hw))
        return s

    return draw


def test_train_zero_lr_keeps_params_and_is_seeded():
    net = SpikingNet.build(2, [2], seed=0, weight_scale=3.0)
    r1 = train(net, _sampler(), 5, lr=0.0, mode="A", seed=4)
    for k in net.params:
        assert np.array_equal(r1.net.params[k], net.params[k])
    r2 = train(net, _sampler(), 5, lr=1e-2, mode="A", seed=4)
    r3 = train(net, _sampler(), 5, lr=1e-2, mode="A", seed=4)
    assert r2.losses == r3.losses and not r2.diverged


def test_train_flags_divergence():
    net = SpikingNet.build(2, [2], seed=0, weight_scale=3.0)
    assert train(net, _sampler(), 30, lr=1e3, mode="A").diverged
