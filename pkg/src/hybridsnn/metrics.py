"""Heatmap decoding, MPJPE, pinhole projection and two-view DLT triangulation."""

import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, ParseError, ProjectionError, TriangulationError


@dataclass
class Pose:
    """J joint positions (pixels for 2D, millimeters for 3D) and a visibility mask."""

    xy: np.ndarray
    visible: np.ndarray = None

    def __post_init__(self):
        self.xy = np.asarray(self.xy, dtype=np.float64)
        if self.visible is None:
            self.visible = np.ones(len(self.xy), dtype=bool)
        self.visible = np.asarray(self.visible, dtype=bool)

    @property
    def joints(self):
        return len(self.xy)


def decode_heatmaps(heatmaps):
    """Argmax per channel as (u, v); ties go to the smallest (v, u); flat channels are invisible."""
    hm = np.asarray(heatmaps)
    j, h, w = hm.shape
    flat = hm.reshape(j, -1)
    idx = flat.argmax(axis=1)  # first maximum in row-major order
    v, u = np.divmod(idx, w)
    visible = flat.max(axis=1) > flat.min(axis=1)
    return Pose(np.stack([u, v], axis=1).astype(np.float64), visible)


def joint_errors(pred, gt):
    if pred.joints != gt.joints:
        raise ContractError(f"joint count mismatch: {pred.joints} vs {gt.joints}")
    mask = pred.visible & gt.visible
    return np.linalg.norm(pred.xy - gt.xy, axis=1), mask


def mpjpe(pred, gt):
    """Mean Euclidean joint error over joints visible in both poses; None if none are."""
    err, mask = joint_errors(pred, gt)
    if not mask.any():
        return None
    return float(err[mask].mean())


@dataclass
class CameraModel:
    P: np.ndarray
    width: int = 0
    height: int = 0
    name: str = ""

    def __post_init__(self):
        self.P = np.asarray(self.P, dtype=np.float64).reshape(3, 4)
        if np.linalg.matrix_rank(self.P) != 3:
            raise ContractError(f"camera {self.name!r}: projection matrix must have rank 3")

    @property
    def center(self):
        # right null vector of P
        _, _, vt = np.linalg.svd(self.P)
        c = vt[-1]
        return c[:3] / c[3] if abs(c[3]) > 1e-12 else c[:3] * np.inf

    @classmethod
    def from_krt(cls, K, R, t, width=0, height=0, name=""):
        return cls(np.asarray(K) @ np.hstack([np.asarray(R), np.reshape(t, (3, 1))]), width, height, name)

    @classmethod
    def load(cls, path):
        with open(path) as f:
            try:
                d = json.load(f)
                return cls(np.array(d["P"], dtype=np.float64), d.get("width", 0), d.get("height", 0), d.get("name", ""))
            except (json.JSONDecodeError, KeyError, ValueError) as e:
                raise ParseError(f"{path}: bad camera file: {e}") from None

    def save(self, path):
        with open(path, "w") as f:
            json.dump({"P": self.P.ravel().tolist(), "width": self.width, "height": self.height, "name": self.name}, f)


def project(point, cam):
    X = np.append(np.asarray(point, dtype=np.float64), 1.0)
    x = cam.P @ X
    if abs(x[2]) < 1e-12:
        raise ProjectionError(f"point {point} lies on the camera plane")
    return x[:2] / x[2]


def triangulate(observations):
    """Linear (DLT) triangulation of one point from two ``((u, v), CameraModel)`` observations."""
    if len(observations) != 2:
        raise ContractError("triangulate takes exactly two views")
    (uv1, c1), (uv2, c2) = observations
    if np.allclose(c1.center, c2.center):
        raise TriangulationError("camera centers coincide")
    rows = []
    for (u, v), cam in observations:
        P = cam.P / np.linalg.norm(cam.P)
        rows.append(u * P[2] - P[0])
        rows.append(v * P[2] - P[1])
    A = np.array(rows)
    _, s, vt = np.linalg.svd(A)
    X = vt[-1]
    # a rank-2 system means the rays are parallel or the point is not constrained
    if s[2] < 1e-12 * s[0] or abs(X[3]) < 1e-12 * np.abs(X).max():
        raise TriangulationError("degenerate geometry: rays do not intersect at a finite point")
    return X[:3] / X[3]


def triangulate_pose(pose_a, cam_a, pose_b, cam_b):
    pts = np.full((pose_a.joints, 3), np.nan)
    vis = pose_a.visible & pose_b.visible
    for j in np.flatnonzero(vis):
        pts[j] = triangulate([(pose_a.xy[j], cam_a), (pose_b.xy[j], cam_b)])
    return Pose(pts, vis)


def read_pose_csv(path):
    """Pose file ``t_us,joint_id,u,v[,x,y,z]`` -> {t_us: Pose}. 3D columns win when present."""
    rows = {}
    with open(path) as f:
        for lineno, line in enumerate(f, 1):
            line = line.strip()
            if not line or (lineno == 1 and not line[0].isdigit()):
                continue
            parts = line.split(",")
            if len(parts) not in (4, 7):
                raise ParseError(f"{path}:{lineno}: expected 4 or 7 fields")
            try:
                t, j = int(parts[0]), int(parts[1])
                vals = [float(p) for p in parts[2:]]
            except ValueError:
                raise ParseError(f"{path}:{lineno}: bad number in {line!r}") from None
            rows.setdefault(t, {})[j] = vals
    poses = {}
    for t, joints in rows.items():
        n = max(joints) + 1
        dim = 3 if all(len(v) == 5 for v in joints.values()) else 2
        xy = np.full((n, dim), np.nan)
        vis = np.zeros(n, dtype=bool)
        for j, v in joints.items():
            xy[j] = v[2:] if dim == 3 else v[:2]
            vis[j] = np.isfinite(xy[j]).all()
        poses[t] = Pose(xy, vis)
    return poses


def write_pose_csv(path, poses):
    with open(path, "w") as f:
        f.write("t_us,joint_id,u,v\n")
        for t in sorted(poses):
            p = poses[t]
            for j in range(p.joints):
                if p.visible[j]:
                    f.write(f"{t},{j},{p.xy[j, 0]:.6g},{p.xy[j, 1]:.6g}\n")
