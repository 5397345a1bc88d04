"""Rigid transforms, rotation symmetry groups, cameras and point clouds.

Quaternions are stored in (w, x, y, z) order and canonicalized to a
non-negative scalar part so that equal rotations compare equal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

WORLD_FRAME = "world"
CAMERA_FRAME = "camera"


def quat_multiply(q1, q2):
    """Hamilton product of (..., 4) wxyz quaternion arrays."""
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    w1, x1, y1, z1 = np.moveaxis(q1, -1, 0)
    w2, x2, y2, z2 = np.moveaxis(q2, -1, 0)
    return np.stack(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ],
        axis=-1,
    )


def quat_conjugate(q):
    q = np.asarray(q, dtype=float)
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_canonical(q):
    """Normalize and flip sign so the scalar part is non-negative."""
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=-1, keepdims=True)
    sign = np.where(q[..., :1] < 0.0, -1.0, 1.0)
    return q * sign


def quat_from_axis_angle(axis, angle):
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * float(angle)
    return np.concatenate([[math.cos(half)], math.sin(half) * axis])


def quat_to_matrix(q):
    w, x, y, z = np.asarray(q, dtype=float)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_from_matrix(m):
    """Rotation matrix to wxyz quaternion (Shepperd's method)."""
    m = np.asarray(m, dtype=float)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0:
        s = math.sqrt(tr + 1.0) * 2.0
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] >= m[1, 1] and m[0, 0] >= m[2, 2]:
        s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] >= m[2, 2]:
        s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_canonical(np.array(q))


def quat_angle(q):
    """Rotation angle in radians of a unit wxyz quaternion (stable near 0)."""
    q = np.asarray(q, dtype=float)
    vec = np.linalg.norm(q[..., 1:], axis=-1)
    return 2.0 * np.arctan2(vec, np.abs(q[..., 0]))


def random_quaternion(rng):
    """Uniform random rotation (wxyz)."""
    q = rng.normal(size=4)
    return quat_canonical(q)


class RigidTransform:
    """SE(3) pose: rotation as a unit wxyz quaternion plus a translation in meters."""

    __slots__ = ("q", "t")

    def __init__(self, q=(1.0, 0.0, 0.0, 0.0), t=(0.0, 0.0, 0.0)):
        q = np.asarray(q, dtype=float).reshape(4)
        n = np.linalg.norm(q)
        if not np.isfinite(n) or abs(n - 1.0) > 1e-6:
            raise ValueError(f"quaternion norm {n} not within 1e-6 of 1")
        self.q = quat_canonical(q)
        self.t = np.asarray(t, dtype=float).reshape(3).copy()
        if not np.all(np.isfinite(self.t)):
            raise ValueError("non-finite translation")
        self.q.flags.writeable = False
        self.t.flags.writeable = False

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_axis_angle(cls, axis, angle, t=(0.0, 0.0, 0.0)):
        return cls(quat_from_axis_angle(axis, angle), t)

    @classmethod
    def from_matrix(cls, m):
        m = np.asarray(m, dtype=float)
        return cls(quat_from_matrix(m[:3, :3]), m[:3, 3])

    @classmethod
    def from_rotation_translation(cls, r, t):
        return cls(quat_from_matrix(r), t)

    def rotation_matrix(self):
        return quat_to_matrix(self.q)

    def matrix(self):
        m = np.eye(4)
        m[:3, :3] = self.rotation_matrix()
        m[:3, 3] = self.t
        return m

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """self then applied after other: (self ∘ other)(x) = self(other(x))."""
        q = quat_canonical(quat_multiply(self.q, other.q))
        t = self.apply(other.t)
        return RigidTransform(q, t)

    def inverse(self) -> "RigidTransform":
        qc = quat_conjugate(self.q)
        return RigidTransform(qc, -(quat_to_matrix(qc) @ self.t))

    def apply(self, points):
        """Transform a 3-vector or an (N, 3) array of points."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation_matrix().T + self.t

    def rotation_angle_to(self, other: "RigidTransform") -> float:
        """Geodesic angle in radians between the two rotations."""
        rel = quat_multiply(quat_conjugate(self.q), other.q)
        return float(quat_angle(rel))

    def translation_distance_to(self, other: "RigidTransform") -> float:
        return float(np.linalg.norm(self.t - other.t))

    def almost_equal(self, other, angle_tol=1e-9, trans_tol=1e-9):
        return (
            self.rotation_angle_to(other) <= angle_tol
            and self.translation_distance_to(other) <= trans_tol
        )

    def __eq__(self, other):
        if not isinstance(other, RigidTransform):
            return NotImplemented
        return np.array_equal(self.q, other.q) and np.array_equal(self.t, other.t)

    def __hash__(self):
        return hash((self.q.tobytes(), self.t.tobytes()))

    def __repr__(self):
        return f"RigidTransform(q={self.q.tolist()}, t={self.t.tolist()})"

    def to_dict(self):
        return {"q": self.q.tolist(), "t": self.t.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(d["q"], d["t"])


def compose(a: RigidTransform, b: RigidTransform) -> RigidTransform:
    return a.compose(b)


def invert(a: RigidTransform) -> RigidTransform:
    return a.inverse()


@dataclass(frozen=True)
class SymmetryGroup:
    """Rotational symmetries of a model: a discrete set of wxyz quaternions
    (always containing the identity) plus optional continuous revolution axes."""

    discrete: np.ndarray = field(
        default_factory=lambda: np.array([[1.0, 0.0, 0.0, 0.0]])
    )
    continuous_axes: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    def __post_init__(self):
        disc = quat_canonical(np.asarray(self.discrete, dtype=float).reshape(-1, 4))
        if not np.any(quat_angle(disc) < 1e-9):
            disc = np.vstack([[1.0, 0.0, 0.0, 0.0], disc])
        axes = np.asarray(self.continuous_axes, dtype=float).reshape(-1, 3)
        if len(axes):
            axes = axes / np.linalg.norm(axes, axis=1, keepdims=True)
        object.__setattr__(self, "discrete", disc)
        object.__setattr__(self, "continuous_axes", axes)

    @classmethod
    def trivial(cls):
        return cls()

    @classmethod
    def cyclic(cls, axis, order):
        """Discrete n-fold rotation symmetry about an axis."""
        quats = [quat_from_axis_angle(axis, 2.0 * math.pi * k / order) for k in range(order)]
        return cls(np.array(quats))

    @classmethod
    def revolution(cls, axis, flip_axis=None):
        """Continuous symmetry of revolution, optionally with a 180-degree flip."""
        disc = [[1.0, 0.0, 0.0, 0.0]]
        if flip_axis is not None:
            disc.append(quat_from_axis_angle(flip_axis, math.pi))
        return cls(np.array(disc), np.asarray(axis, dtype=float).reshape(1, 3))

    def is_closed(self, angle_tol=1e-6):
        """Check closure of the discrete part under pairwise products."""
        disc = self.discrete
        for qa in disc:
            prods = quat_canonical(quat_multiply(qa[None, :], disc))
            # each product must match some listed element up to angle_tol
            dots = np.clip(np.abs(prods @ disc.T), 0.0, 1.0)
            if np.any(2.0 * np.arccos(dots.max(axis=1)) > angle_tol):
                return False
        return True

    def to_dict(self):
        return {
            "discrete": [q.tolist() for q in self.discrete],
            "axes": [a.tolist() for a in self.continuous_axes],
        }

    @classmethod
    def from_dict(cls, d):
        axes = np.asarray(d.get("axes", []), dtype=float).reshape(-1, 3)
        return cls(np.asarray(d["discrete"], dtype=float), axes)


def symmetric_rotation_distance(q1, q2, group: SymmetryGroup | None = None) -> float:
    """Geodesic rotation distance modulo the symmetry group of the model.

    Minimizes over the discrete elements; spins about continuous axes are
    minimized in closed form from the axis component of the relative rotation.
    """
    q1 = np.asarray(q1, dtype=float).reshape(4)
    q2 = np.asarray(q2, dtype=float).reshape(4)
    if group is None:
        group = SymmetryGroup.trivial()
    # relative rotation in the model frame for every discrete element: (q2 s)^-1 q1
    q2s = quat_multiply(q2[None, :], group.discrete)
    rel = quat_multiply(quat_conjugate(q2s), q1[None, :])
    w = np.abs(rel[:, 0])
    vnorm2 = np.einsum("ij,ij->i", rel[:, 1:], rel[:, 1:])
    best = float(np.min(2.0 * np.arctan2(np.sqrt(vnorm2), w)))
    for axis in group.continuous_axes:
        # optimal spin leaves scalar sqrt(w^2 + (a.v)^2), residual the rest
        av = rel[:, 1:] @ axis
        scal = np.sqrt(w**2 + av**2)
        resid = np.sqrt(np.maximum(0.0, vnorm2 - av**2))
        best = min(best, float(np.min(2.0 * np.arctan2(resid, scal))))
    return best


def pairwise_symmetric_rotation_distance(quats_a, quats_b, group: SymmetryGroup | None = None):
    """(N, M) matrix of symmetric rotation distances between two quaternion sets."""
    qa = np.asarray(quats_a, dtype=float).reshape(-1, 4)
    qb = np.asarray(quats_b, dtype=float).reshape(-1, 4)
    if group is None:
        group = SymmetryGroup.trivial()
    best = np.full((len(qa), len(qb)), np.inf)
    for s in group.discrete:
        qbs = quat_multiply(qb, s[None, :])
        w = np.abs(qa @ qbs.T)  # |q1 . (q2 s)| = |scalar part of (q2 s)^-1 q1|
        rel_vec = _relative_vector_parts(qa, qbs)
        vnorm2 = np.einsum("nmk,nmk->nm", rel_vec, rel_vec)
        cand = 2.0 * np.arctan2(np.sqrt(vnorm2), w)
        for axis in group.continuous_axes:
            av = np.einsum("nmk,k->nm", rel_vec, axis)
            scal = np.sqrt(w**2 + av**2)
            resid = np.sqrt(np.maximum(0.0, vnorm2 - av**2))
            cand = np.minimum(cand, 2.0 * np.arctan2(resid, scal))
        best = np.minimum(best, cand)
    return best


def _relative_vector_parts(qa, qb):
    """Vector parts of conj(qb_m) * qa_n as an (N, M, 3) array."""
    w1, v1 = qa[:, :1], qa[:, 1:]
    w2, v2 = qb[:, :1], qb[:, 1:]
    # conj(q2) * q1 = (w2 w1 + v2 . v1, w2 v1 - w1 v2 - v2 x v1)
    term1 = w2[None, :, :] * v1[:, None, :]
    term2 = w1[:, None, :] * v2[None, :, :]
    cross = np.cross(np.broadcast_to(v2[None, :, :], term1.shape), np.broadcast_to(v1[:, None, :], term1.shape))
    return term1 - term2 - cross


@dataclass
class PointCloud:
    """Points in meters tagged with the frame they live in."""

    points: np.ndarray
    frame: str = CAMERA_FRAME

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        self.points = pts

    def __len__(self):
        return len(self.points)

    def transformed(self, transform: RigidTransform, frame: str | None = None):
        return PointCloud(transform.apply(self.points), frame or self.frame)

    def centroid(self):
        return self.points.mean(axis=0)


@dataclass
class CameraModel:
    """Pinhole camera; extrinsic maps world coordinates into the camera frame.

    Pixel (i, j) covers the continuous coordinate square [i, i+1) x [j, j+1)
    and is sampled at its center (i + 0.5, j + 0.5).
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    extrinsic: RigidTransform = field(default_factory=RigidTransform.identity)

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point outside image")

    def project(self, points_cam):
        """Camera-frame points to continuous pixel coordinates (u, v)."""
        pts = np.asarray(points_cam, dtype=float).reshape(-1, 3)
        z = pts[:, 2]
        u = self.fx * pts[:, 0] / z + self.cx
        v = self.fy * pts[:, 1] / z + self.cy
        return np.stack([u, v], axis=1)

    def world_to_camera(self, points_world):
        return self.extrinsic.apply(points_world)

    def camera_to_world(self, points_cam):
        return self.extrinsic.inverse().apply(points_cam)

    def to_dict(self):
        return {
            "fx": self.fx,
            "fy": self.fy,
            "cx": self.cx,
            "cy": self.cy,
            "width": self.width,
            "height": self.height,
            "extrinsic": self.extrinsic.to_dict(),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            fx=d["fx"],
            fy=d["fy"],
            cx=d["cx"],
            cy=d["cy"],
            width=d["width"],
            height=d["height"],
            extrinsic=RigidTransform.from_dict(d["extrinsic"]),
        )


def look_at_camera(fx, fy, cx, cy, width, height, eye, target, up=(0.0, 0.0, 1.0)):
    """Camera at `eye` looking toward `target` with +z along the view direction."""
    eye = np.asarray(eye, dtype=float)
    fwd = np.asarray(target, dtype=float) - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.asarray(up, dtype=float)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(fwd, np.array([0.0, 1.0, 0.0]))
    right = right / np.linalg.norm(right)
    down = np.cross(fwd, right)
    r_wc = np.stack([right, down, fwd], axis=0)  # world -> camera rows
    extrinsic = RigidTransform(quat_from_matrix(r_wc), -r_wc @ eye)
    return CameraModel(fx, fy, cx, cy, width, height, extrinsic)
