import numpy as np

from hybridsnn import toy
from hybridsnn.grad import pose_error_curve


def test_render_conserves_disc_area():
    task = toy.BlobTask(size=32, radius=4.0, supersample=8)
    img = toy.render(task, (16.0, 16.0))
    assert abs(img.sum() - np.pi * 16) < 0.5
    both = toy.render(task, np.array([[16.0, 16.0], [10.0, 10.0]]))
    np.testing.assert_array_equal(both[0], img)


def test_static_blob_emits_no_events():
    task = toy.BlobTask()
    centers = np.tile([8.0, 8.0], (20, 1))
    assert len(toy.emulate_events(task, centers)) == 0


def test_moving_blob_emits_both_polarities():
    task = toy.BlobTask()
    centers = np.stack([np.linspace(5, 10, 50), np.full(50, 8.0)], axis=1)
    s = toy.emulate_events(task, centers)
    assert len(s) > 0 and 0 < s.p.mean() < 1
    # ON events ahead of the disc (larger x), OFF events behind it
    assert s.x[s.p == 1].mean() > s.x[s.p == 0].mean()


def test_sample_period_layout():
    task = toy.BlobTask()
    s = toy.sample_period(task, np.random.default_rng(0))
    T = task.steps - 1
    assert s.inputs.shape == (T, 2, 16, 16) and s.targets.shape == (T, 1, 16, 16)
    assert s.features.shape == (2 * task.hist_bins + 1, 16, 16) and s.joints.shape == (T + 1, 1, 2)
    np.testing.assert_array_equal(s.features[-1], s.o_init[0])
    assert s.inputs.sum() > 0


def test_samples_are_seeded():
    task = toy.BlobTask()
    a, b = toy.fixed_samples(task, 2, 5), toy.fixed_samples(task, 2, 5)
    assert all(np.array_equal(x.inputs, y.inputs) for x, y in zip(a, b))


def test_toy_net_and_tracker_baseline():
    task = toy.BlobTask()
    samples = toy.fixed_samples(task, 10, 1)
    net_c, net_d = toy.build_toy_net(task, "C"), toy.build_toy_net(task, "D")
    assert not net_c.heads and net_d.heads
    curve = pose_error_curve(net_c, samples, "C")
    assert curve.shape == (task.steps,)
    # the tracker output at the tick is a sensible estimate, a few pixels at most
    assert curve[0] < 3.0
    assert toy.mean_loss(net_d, samples, "D") > 0
