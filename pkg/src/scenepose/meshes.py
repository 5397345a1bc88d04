"""Triangle meshes: OBJ ingestion, sampling, distances and primitive shapes."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .geometry import SymmetryGroup

DEGENERATE_AREA = 1e-12


@dataclass(eq=False)
class TriangleMesh:
    """Triangulated surface in meters with an optional rotation symmetry group."""

    vertices: np.ndarray
    triangles: np.ndarray
    symmetry: SymmetryGroup = field(default_factory=SymmetryGroup.trivial)
    name: str = "mesh"

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 3)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(t) and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle index out of range")
        areas = triangle_areas(v, t)
        if np.any(areas <= DEGENERATE_AREA):
            raise ValueError("degenerate triangle (area below tolerance)")
        self.vertices = v
        self.triangles = t

    def triangle_corners(self):
        """(T, 3, 3) array of triangle corner coordinates."""
        return self.vertices[self.triangles]

    def areas(self):
        return triangle_areas(self.vertices, self.triangles)

    def diameter(self):
        lo = self.vertices.min(axis=0)
        hi = self.vertices.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def sample_surface(self, count, seed=0, return_normals=False):
        """Area-weighted uniform surface samples, deterministic for a seed."""
        rng = np.random.default_rng(seed)
        areas = self.areas()
        probs = areas / areas.sum()
        tri_idx = rng.choice(len(areas), size=count, p=probs)
        u = rng.random(count)
        v = rng.random(count)
        flip = u + v > 1.0
        u[flip] = 1.0 - u[flip]
        v[flip] = 1.0 - v[flip]
        corners = self.vertices[self.triangles[tri_idx]]
        pts = (
            corners[:, 0]
            + u[:, None] * (corners[:, 1] - corners[:, 0])
            + v[:, None] * (corners[:, 2] - corners[:, 0])
        )
        if not return_normals:
            return pts
        n = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
        n = n / np.linalg.norm(n, axis=1, keepdims=True)
        return pts, n

    def volume_centroid(self):
        """Center of mass assuming uniform density (signed tetrahedra about the origin).

        Falls back to the vertex mean when the mesh is not watertight enough
        for the signed volume to be meaningful.
        """
        corners = self.triangle_corners()
        a, b, c = corners[:, 0], corners[:, 1], corners[:, 2]
        signed = np.einsum("ij,ij->i", a, np.cross(b, c)) / 6.0
        total = signed.sum()
        if abs(total) < 1e-12:
            return self.vertices.mean(axis=0)
        centroids = (a + b + c) / 4.0  # tetrahedron centroid with apex at origin
        return (signed[:, None] * centroids).sum(axis=0) / total


def triangle_areas(vertices, triangles):
    corners = vertices[triangles]
    return 0.5 * np.linalg.norm(
        np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0]), axis=1
    )


def point_triangle_distances(points, corners):
    """Distance from each point to the nearest of the given triangles.

    points: (P, 3); corners: (T, 3, 3). Returns (P,) distances. Takes the
    minimum over candidate closest points: the in-plane projection when it
    falls inside the triangle, plus the three clamped edge projections.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    a = corners[:, 0][None, :, :]
    b = corners[:, 1][None, :, :]
    c = corners[:, 2][None, :, :]
    p = points[:, None, :]

    best = np.full((len(points), len(corners)), np.inf)
    for e0, e1 in ((a, b), (a, c), (b, c)):
        edge = e1 - e0
        t = np.einsum("ptk,ptk->pt", p - e0, edge) / np.einsum("ptk,ptk->pt", edge, edge)
        t = np.clip(t, 0.0, 1.0)
        cand = e0 + t[..., None] * edge
        best = np.minimum(best, np.linalg.norm(p - cand, axis=2))

    ab = b - a
    ac = c - a
    n = np.cross(ab, ac)
    nn = np.einsum("ptk,ptk->pt", n, n)
    ap = p - a
    dist_plane = np.einsum("ptk,ptk->pt", ap, n) / np.sqrt(nn)
    proj = p - dist_plane[..., None] * (n / np.sqrt(nn)[..., None])
    # barycentric test for the projection
    d00 = np.einsum("ptk,ptk->pt", ab, ab)
    d01 = np.einsum("ptk,ptk->pt", ab, ac)
    d11 = np.einsum("ptk,ptk->pt", ac, ac)
    pv = proj - a
    d20 = np.einsum("ptk,ptk->pt", pv, ab)
    d21 = np.einsum("ptk,ptk->pt", pv, ac)
    denom = d00 * d11 - d01 * d01
    denom = np.where(denom == 0, 1.0, denom)
    v = (d11 * d20 - d01 * d21) / denom
    w = (d00 * d21 - d01 * d20) / denom
    inside = (v >= 0) & (w >= 0) & (v + w <= 1)
    best = np.where(inside, np.minimum(best, np.abs(dist_plane)), best)
    return best.min(axis=1)


# slightly irrational direction dodges axis-aligned edge-grazing rays
_RAY_DIR = np.array([0.5773502691896258, 0.2113248654051871, 0.7886751345948129])
_RAY_DIR = _RAY_DIR / np.linalg.norm(_RAY_DIR)


def points_inside_mesh(points, corners, ray_dir=_RAY_DIR):
    """Parity ray-cast inside test for a watertight mesh.

    points: (P, 3); corners: (T, 3, 3). Returns a (P,) bool mask.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if not len(points) or not len(corners):
        return np.zeros(len(points), dtype=bool)
    a = corners[:, 0][None, :, :]
    e1 = (corners[:, 1] - corners[:, 0])[None, :, :]
    e2 = (corners[:, 2] - corners[:, 0])[None, :, :]
    d = ray_dir[None, None, :]
    pvec = np.cross(d, e2)
    det = np.einsum("ptk,ptk->pt", e1, pvec)
    ok = np.abs(det) > 1e-14
    inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = points[:, None, :] - a
    u = np.einsum("ptk,ptk->pt", tvec, pvec) * inv_det
    qvec = np.cross(tvec, e1)
    v = np.einsum("ptk,ptk->pt", qvec, np.broadcast_to(d, qvec.shape)) * inv_det
    t = np.einsum("ptk,ptk->pt", e2, qvec) * inv_det
    hits = ok & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > 1e-12)
    return hits.sum(axis=1) % 2 == 1


def load_obj(path, symmetry=None, name=None):
    """Load an ASCII OBJ (v / f records); faces are fan-triangulated."""
    path = Path(path)
    vertices = []
    triangles = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                vertices.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(tok.split("/")[0]) - 1 for tok in parts[1:]]
                for k in range(1, len(idx) - 1):
                    triangles.append([idx[0], idx[k], idx[k + 1]])
    if symmetry is None:
        sidecar = path.with_suffix(path.suffix + ".sym.json")
        alt = path.with_suffix(".sym.json")
        for candidate in (sidecar, alt):
            if candidate.exists():
                with open(candidate, "r", encoding="utf-8") as fh:
                    symmetry = SymmetryGroup.from_dict(json.load(fh))
                break
    return TriangleMesh(
        np.asarray(vertices, dtype=float),
        np.asarray(triangles, dtype=np.int64),
        symmetry or SymmetryGroup.trivial(),
        name=name or path.stem,
    )


def save_obj(mesh: TriangleMesh, path, with_symmetry=True):
    path = Path(path)
    lines = []
    for v in mesh.vertices:
        lines.append(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}")
    for t in mesh.triangles:
        lines.append(f"f {t[0] + 1} {t[1] + 1} {t[2] + 1}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    if with_symmetry:
        sidecar = path.with_suffix(".sym.json")
        sidecar.write_text(
            json.dumps(mesh.symmetry.to_dict(), sort_keys=True), encoding="utf-8"
        )


def _quad(a, b, c, d):
    return [[a, b, c], [a, c, d]]


def make_box(sx, sy, sz, symmetry=None, name="box"):
    """Axis-aligned box centered at the origin with outward-facing triangles."""
    hx, hy, hz = sx / 2.0, sy / 2.0, sz / 2.0
    v = np.array(
        [
            [-hx, -hy, -hz],
            [hx, -hy, -hz],
            [hx, hy, -hz],
            [-hx, hy, -hz],
            [-hx, -hy, hz],
            [hx, -hy, hz],
            [hx, hy, hz],
            [-hx, hy, hz],
        ]
    )
    t = (
        _quad(0, 3, 2, 1)  # bottom (z-)
        + _quad(4, 5, 6, 7)  # top (z+)
        + _quad(0, 1, 5, 4)  # y-
        + _quad(2, 3, 7, 6)  # y+
        + _quad(1, 2, 6, 5)  # x+
        + _quad(3, 0, 4, 7)  # x-
    )
    if symmetry is None:
        if abs(sx - sy) < 1e-12 and abs(sy - sz) < 1e-12:
            symmetry = cube_symmetry()
        elif abs(sx - sy) < 1e-12:
            symmetry = square_prism_symmetry()
        else:
            symmetry = box_symmetry()
    return TriangleMesh(v, np.array(t), symmetry, name=name)


def make_tetrahedron(size, name="tetra"):
    """Regular tetrahedron (edge length `size`) centered at its centroid."""
    s = size / math.sqrt(8.0)
    v = np.array([[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=float) * s
    t = np.array([[0, 1, 2], [0, 3, 1], [0, 2, 3], [1, 3, 2]])
    return TriangleMesh(v, t, SymmetryGroup.trivial(), name=name)


def make_wedge(sx, sy, sz, name="wedge"):
    """Right triangular prism: box halved along the x-z diagonal."""
    hx, hy, hz = sx / 2.0, sy / 2.0, sz / 2.0
    v = np.array(
        [
            [-hx, -hy, -hz],
            [hx, -hy, -hz],
            [hx, -hy, hz],
            [-hx, hy, -hz],
            [hx, hy, -hz],
            [hx, hy, hz],
        ]
    )
    t = (
        [[0, 1, 2], [3, 5, 4]]  # triangular caps
        + _quad(0, 3, 4, 1)  # bottom
        + _quad(1, 4, 5, 2)  # vertical back
        + _quad(0, 2, 5, 3)  # slope
    )
    return TriangleMesh(v, np.array(t), SymmetryGroup.trivial(), name=name)


def make_cylinder(radius, height, segments=24, name="cylinder"):
    """Closed cylinder about +z with a continuous revolution symmetry."""
    angles = np.linspace(0.0, 2.0 * math.pi, segments, endpoint=False)
    ring = np.stack([radius * np.cos(angles), radius * np.sin(angles)], axis=1)
    bottom = np.column_stack([ring, np.full(segments, -height / 2.0)])
    top = np.column_stack([ring, np.full(segments, height / 2.0)])
    v = np.vstack([bottom, top, [[0.0, 0.0, -height / 2.0]], [[0.0, 0.0, height / 2.0]]])
    cb, ct = 2 * segments, 2 * segments + 1
    t = []
    for i in range(segments):
        j = (i + 1) % segments
        t += [[i, j, segments + j], [i, segments + j, segments + i]]
        t += [[cb, j, i], [ct, segments + i, segments + j]]
    sym = SymmetryGroup.revolution(axis=(0.0, 0.0, 1.0), flip_axis=(1.0, 0.0, 0.0))
    return TriangleMesh(v, np.array(t), sym, name=name)


def box_symmetry():
    """180-degree flips about each axis (rectangular box)."""
    import itertools

    quats = [[1.0, 0.0, 0.0, 0.0]]
    for axis in np.eye(3):
        quats.append(np.concatenate([[0.0], axis]))
    return SymmetryGroup(np.array(quats))


def square_prism_symmetry():
    """Square-base prism: 4-fold about z plus a flip about x."""
    from .geometry import quat_from_axis_angle, quat_multiply, quat_canonical

    base = [quat_from_axis_angle((0, 0, 1), math.pi / 2 * k) for k in range(4)]
    flip = quat_from_axis_angle((1, 0, 0), math.pi)
    quats = base + [quat_canonical(quat_multiply(flip, b)) for b in base]
    return SymmetryGroup(np.array(quats))


def cube_symmetry():
    """Full rotational octahedral group (24 elements), generated by closure."""
    from .geometry import quat_from_axis_angle, quat_multiply, quat_canonical

    gens = [
        quat_from_axis_angle((1, 0, 0), math.pi / 2),
        quat_from_axis_angle((0, 1, 0), math.pi / 2),
        quat_from_axis_angle((0, 0, 1), math.pi / 2),
    ]
    elements = [np.array([1.0, 0.0, 0.0, 0.0])]
    frontier = list(elements)
    while frontier:
        q = frontier.pop()
        for g in gens:
            cand = quat_canonical(quat_multiply(q, g))
            if all(abs(float(np.dot(cand, e))) < 1.0 - 1e-9 for e in elements):
                elements.append(cand)
                frontier.append(cand)
    return SymmetryGroup(np.array(elements))


PRIMITIVES = {
    "box": lambda: make_box(0.06, 0.10, 0.16, name="box"),
    "cube": lambda: make_box(0.08, 0.08, 0.08, name="cube"),
    "slab": lambda: make_box(0.14, 0.10, 0.04, name="slab"),
    "prism": lambda: make_box(0.05, 0.05, 0.14, name="prism"),
    "wedge": lambda: make_wedge(0.10, 0.08, 0.06, name="wedge"),
    "tetra": lambda: make_tetrahedron(0.10, name="tetra"),
    "cylinder": lambda: make_cylinder(0.035, 0.12, name="cylinder"),
}


def make_primitive(kind):
    try:
        return PRIMITIVES[kind]()
    except KeyError:
        raise ValueError(f"unknown primitive '{kind}' (have {sorted(PRIMITIVES)})") from None
