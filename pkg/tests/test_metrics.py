import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hybridsnn.errors import ContractError, ParseError, ProjectionError, TriangulationError
from hybridsnn.metrics import (CameraModel, Pose, decode_heatmaps, joint_errors, mpjpe, project, read_pose_csv,
                               triangulate, triangulate_pose, write_pose_csv)


def look_at(center, target, f=500.0, c=(128, 128)):
    z = np.asarray(target, float) - center
    z /= np.linalg.norm(z)
    x = np.cross([0, 1, 0], z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    R = np.stack([x, y, z])
    K = np.array([[f, 0, c[0]], [0, f, c[1]], [0, 0, 1]])
    return CameraModel.from_krt(K, R, -R @ center, 256, 256)


def test_decode_exhaustive_ties_and_flat():
    hm = np.zeros((3, 4, 5))
    hm[0, 2, 3] = 1
    hm[1, 1, 4] = hm[1, 3, 0] = 2  # tie: smaller (v, u) wins
    pose = decode_heatmaps(hm)
    assert tuple(pose.xy[0]) == (3, 2) and tuple(pose.xy[1]) == (4, 1)
    assert list(pose.visible) == [True, True, False]


def test_mpjpe_examples():
    assert mpjpe(Pose([[0, 0]]), Pose([[3, 4]])) == 5.0
    assert mpjpe(Pose([[0, 0], [0, 0]]), Pose([[0, 0], [6, 8]])) == 5.0
    assert mpjpe(Pose([[1, 1]], [False]), Pose([[1, 1]])) is None
    assert mpjpe(Pose([[0, 0], [9, 9]], [True, False]), Pose([[3, 4], [0, 0]])) == 5.0
    with pytest.raises(ContractError):
        joint_errors(Pose([[0, 0]]), Pose([[0, 0], [1, 1]]))


poses = st.lists(st.tuples(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3)), min_size=1,
                 max_size=6)


@given(poses, st.data())
def test_mpjpe_metric_axioms(a, data):
    n = len(a)
    b = data.draw(st.lists(st.tuples(*[st.floats(-1e3, 1e3)] * 3), min_size=n, max_size=n))
    c = data.draw(st.lists(st.tuples(*[st.floats(-1e3, 1e3)] * 3), min_size=n, max_size=n))
    A, B, C = Pose(a), Pose(b), Pose(c)
    assert mpjpe(A, A) == 0
    assert mpjpe(A, B) >= 0 and mpjpe(A, B) == pytest.approx(mpjpe(B, A))
    ab, _ = joint_errors(A, B)
    bc, _ = joint_errors(B, C)
    ac, _ = joint_errors(A, C)
    assert (ac <= ab + bc + 1e-9).all()
    if mpjpe(A, B) == 0:
        np.testing.assert_array_equal(A.xy, B.xy)


def test_projection_basics():
    cam = CameraModel(np.hstack([np.eye(3), np.zeros((3, 1))]))
    assert tuple(project([0, 0, 5], cam)) == (0, 0)
    k = look_at(np.zeros(3), [0, 0, 1])
    np.testing.assert_allclose(project([0, 0, 2], k), project([0, 0, 9], k))
    with pytest.raises(ProjectionError):
        project([1, 1, 0], cam)
    with pytest.raises(ContractError):
        CameraModel(np.zeros((3, 4)))


def test_camera_center_and_file_round_trip(tmp_path):
    cam = look_at(np.array([100.0, -50, 20]), [0, 0, 3000])
    np.testing.assert_allclose(cam.center, [100, -50, 20], atol=1e-9)
    cam.name = "left"
    cam.save(tmp_path / "c.json")
    back = CameraModel.load(tmp_path / "c.json")
    np.testing.assert_allclose(back.P, cam.P)
    assert back.name == "left" and len(json.loads((tmp_path / "c.json").read_text())["P"]) == 12
    (tmp_path / "bad.json").write_text('{"Q": 1}')
    with pytest.raises(ParseError):
        CameraModel.load(tmp_path / "bad.json")


def test_triangulation_noiseless_and_symmetric():
    a, b = look_at(np.array([-500.0, 0, 0]), [0, 0, 3000]), look_at(np.array([500.0, 0, 0]), [0, 0, 3000])
    X = np.array([0.0, 120.0, 2800.0])
    got = triangulate([(project(X, a), a), (project(X, b), b)])
    np.testing.assert_allclose(got, X, atol=1e-8)
    assert got[0] == pytest.approx(0, abs=1e-6)


def test_triangulation_error_grows_with_depth():
    a, b = look_at(np.array([-300.0, 0, 0]), [0, 0, 3000]), look_at(np.array([300.0, 0, 0]), [0, 0, 3000])
    errs = []
    for z in (1000.0, 3000.0, 6000.0):
        X = np.array([10.0, 20.0, z])
        uv = project(X, a) + np.array([1.0, 0])
        errs.append(np.linalg.norm(triangulate([(uv, a), (project(X, b), b)]) - X))
    assert errs[0] < errs[1] < errs[2]


def test_degenerate_geometry():
    a = look_at(np.array([0.0, 0, 0]), [0, 0, 3000])
    X = np.array([50.0, 10.0, 2000.0])
    with pytest.raises(TriangulationError):
        triangulate([(project(X, a), a), (project(X, a), a)])
    with pytest.raises(ContractError):
        triangulate([(project(X, a), a)])


def test_triangulate_pose_respects_visibility():
    a, b = look_at(np.array([-500.0, 0, 0]), [0, 0, 3000]), look_at(np.array([500.0, 0, 0]), [0, 0, 3000])
    pts = np.array([[0.0, 0, 3000], [100.0, 50, 2500]])
    pa = Pose([project(p, a) for p in pts], [True, False])
    pb = Pose([project(p, b) for p in pts])
    out = triangulate_pose(pa, a, pb, b)
    assert list(out.visible) == [True, False]
    np.testing.assert_allclose(out.xy[0], pts[0], atol=1e-8)


def test_pose_csv_round_trip(tmp_path):
    poses = {0: Pose([[1.5, 2.0], [3.0, 4.0]]), 10: Pose([[5.0, 6.0], [0.0, 0.0]], [True, False])}
    write_pose_csv(tmp_path / "p.csv", poses)
    back = read_pose_csv(tmp_path / "p.csv")
    np.testing.assert_allclose(back[0].xy, poses[0].xy)
    assert back[10].joints == 1  # trailing invisible joint is not written
    (tmp_path / "q.csv").write_text("t_us,joint_id,u,v,x,y,z\n0,0,1,2,10,20,30\n0,1,1,2,11,21,31\n")
    q = read_pose_csv(tmp_path / "q.csv")
    np.testing.assert_allclose(q[0].xy, [[10, 20, 30], [11, 21, 31]])
    (tmp_path / "r.csv").write_text("0,0,1\n")
    with pytest.raises(ParseError):
        read_pose_csv(tmp_path / "r.csv")
