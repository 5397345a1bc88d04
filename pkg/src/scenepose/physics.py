"""Quasi-static settling under gravity against a planar resting surface and
previously placed objects.

The procedure per object: translate out of any penetration along the mean
exit direction of the penetrating surface samples, drop along -z to first
contact (binary search at 0.1 mm resolution against placed objects, analytic
against the plane), then tip about the nearest support-polygon edge in one
degree steps until the gravity line through the center of mass falls inside
the support polygon. No dynamics: only the statics fixpoint matters here.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError
from shapely.geometry import MultiPoint, Point

from .errors import NoSupport
from .geometry import RigidTransform
from .meshes import TriangleMesh, make_box, point_triangle_distances, points_inside_mesh

PENETRATION_SAMPLES = 2000
SAMPLE_SEED = 421
PENETRATION_TOL = 5e-4  # accepted residual penetration, well under the 1 mm contract
CONTACT_TOL = 8e-4  # distance at which a sample counts as a contact
DROP_RESOLUTION = 1e-4
TILT_STEP = math.radians(1.0)
MAX_TILT_STEPS = 90
STABILITY_MARGIN = 1e-3

_SAMPLE_CACHE: "weakref.WeakKeyDictionary[TriangleMesh, np.ndarray]" = weakref.WeakKeyDictionary()
_COM_CACHE: "weakref.WeakKeyDictionary[TriangleMesh, np.ndarray]" = weakref.WeakKeyDictionary()


def _surface_samples(mesh: TriangleMesh) -> np.ndarray:
    pts = _SAMPLE_CACHE.get(mesh)
    if pts is None:
        pts = mesh.sample_surface(PENETRATION_SAMPLES, seed=SAMPLE_SEED)
        _SAMPLE_CACHE[mesh] = pts
    return pts


def _center_of_mass(mesh: TriangleMesh) -> np.ndarray:
    com = _COM_CACHE.get(mesh)
    if com is None:
        com = mesh.volume_centroid()
        _COM_CACHE[mesh] = com
    return com


@dataclass
class RestingSurface:
    """Planar support region: local z = 0 plane over a centered rectangle."""

    pose: RigidTransform = field(default_factory=RigidTransform.identity)
    bounds: tuple[float, float] = (0.6, 0.6)  # full x/y extents, meters

    def __post_init__(self):
        up = self.pose.rotation_matrix() @ np.array([0.0, 0.0, 1.0])
        if math.acos(min(1.0, float(up[2]))) > math.radians(1.0):
            raise ValueError("resting surface normal must be within 1 degree of world +z")

    @property
    def height(self) -> float:
        return float(self.pose.t[2])

    def contains_xy(self, xy, margin=0.0) -> bool:
        local = np.asarray(xy, dtype=float) - self.pose.t[:2]
        return bool(
            abs(local[0]) <= self.bounds[0] / 2.0 - margin
            and abs(local[1]) <= self.bounds[1] / 2.0 - margin
        )

    def clamp_xy(self, xy):
        local = np.asarray(xy, dtype=float) - self.pose.t[:2]
        local[0] = np.clip(local[0], -self.bounds[0] / 2.0, self.bounds[0] / 2.0)
        local[1] = np.clip(local[1], -self.bounds[1] / 2.0, self.bounds[1] / 2.0)
        return local + self.pose.t[:2]

    def make_mesh(self) -> TriangleMesh:
        """Flat rectangle for rendering the support plane."""
        bx, by = self.bounds[0] / 2.0, self.bounds[1] / 2.0
        v = np.array([[-bx, -by, 0.0], [bx, -by, 0.0], [bx, by, 0.0], [-bx, by, 0.0]])
        return TriangleMesh(v, np.array([[0, 1, 2], [0, 2, 3]]), name="surface")


def _directed_penetration(pts_a, mesh_b: TriangleMesh, pose_b: RigidTransform):
    """Max interior depth of points inside mesh_b, plus per-point exit vectors."""
    local = pose_b.inverse().apply(pts_a)
    corners = mesh_b.triangle_corners()
    inside = points_inside_mesh(local, corners)
    if not inside.any():
        return 0.0, None
    depths = point_triangle_distances(local[inside], corners)
    # exit direction approximated from the centroid of penetrating samples
    return float(depths.max()), (inside, depths)


def penetration_depth(a, b, return_details=False):
    """Approximate max penetration between (mesh, pose) pairs, symmetric."""
    mesh_a, pose_a = a
    mesh_b, pose_b = b
    pts_a = pose_a.apply(_surface_samples(mesh_a))
    pts_b = pose_b.apply(_surface_samples(mesh_b))
    d_ab, det_ab = _directed_penetration(pts_a, mesh_b, pose_b)
    d_ba, det_ba = _directed_penetration(pts_b, mesh_a, pose_a)
    depth = max(d_ab, d_ba)
    if not return_details:
        return depth
    return depth, (pts_a, det_ab), (pts_b, det_ba)


def _surface_penetration(pts, rs: RestingSurface):
    below = rs.height - pts[:, 2]
    return float(max(0.0, below.max()))


def _exit_direction(mesh_other: TriangleMesh, pose_other: RigidTransform, pts, inside_mask):
    """Mean direction pushing the penetrating points out of the other mesh."""
    inner = pts[inside_mask]
    centroid_other = pose_other.apply(_center_of_mass(mesh_other))
    vecs = inner.mean(axis=0) - centroid_other
    n = np.linalg.norm(vecs)
    if n < 1e-9:
        return np.array([0.0, 0.0, 1.0])
    return vecs / n


def _resolve_penetration(mesh, pose, placed, rs):
    """Translate the object until it penetrates nothing by more than the tolerance."""
    for _ in range(64):
        pts = pose.apply(_surface_samples(mesh))
        worst_depth = _surface_penetration(pts, rs)
        worst_dir = np.array([0.0, 0.0, 1.0])
        for other_mesh, other_pose in placed:
            local = other_pose.inverse().apply(pts)
            corners = other_mesh.triangle_corners()
            inside = points_inside_mesh(local, corners)
            if not inside.any():
                continue
            depth = float(point_triangle_distances(local[inside], corners).max())
            if depth > worst_depth:
                worst_depth = depth
                worst_dir = _exit_direction(other_mesh, other_pose, pts, inside)
        if worst_depth <= PENETRATION_TOL:
            return pose
        pose = RigidTransform(pose.q, pose.t + worst_dir * (worst_depth + 2e-4))
    return pose


def _penetrates_any(mesh, pose, placed, tol=PENETRATION_TOL):
    pts = pose.apply(_surface_samples(mesh))
    for other_mesh, other_pose in placed:
        local = other_pose.inverse().apply(pts)
        corners = other_mesh.triangle_corners()
        inside = points_inside_mesh(local, corners)
        if not inside.any():
            continue
        if point_triangle_distances(local[inside], corners).max() > tol:
            return True
        # also check the reverse direction for thin features
        other_pts = other_pose.apply(_surface_samples(other_mesh))
        local_b = pose.inverse().apply(other_pts)
        corners_a = mesh.triangle_corners()
        inside_b = points_inside_mesh(local_b, corners_a)
        if inside_b.any() and point_triangle_distances(local_b[inside_b], corners_a).max() > tol:
            return True
    return False


def _xy_overlaps(mesh, pose, other_mesh, other_pose, pad=0.01):
    a = pose.apply(mesh.vertices)
    b = other_pose.apply(other_mesh.vertices)
    return not (
        a[:, 0].max() + pad < b[:, 0].min()
        or b[:, 0].max() + pad < a[:, 0].min()
        or a[:, 1].max() + pad < b[:, 1].min()
        or b[:, 1].max() + pad < a[:, 1].min()
    )


def _drop_to_contact(mesh, pose, placed, rs):
    """Largest -z translation that keeps the object penetration-free."""
    pts = pose.apply(_surface_samples(mesh))
    plane_drop = max(0.0, float(pts[:, 2].min()) - rs.height)
    blockers = [
        (m, p) for m, p in placed if _xy_overlaps(mesh, pose, m, p)
    ]
    if not blockers or plane_drop <= 0:
        drop = plane_drop
    else:
        at = lambda d: RigidTransform(pose.q, pose.t - [0.0, 0.0, d])
        if not _penetrates_any(mesh, at(plane_drop), blockers):
            drop = plane_drop
        else:
            lo, hi = 0.0, plane_drop
            while hi - lo > DROP_RESOLUTION:
                mid = 0.5 * (lo + hi)
                if _penetrates_any(mesh, at(mid), blockers):
                    hi = mid
                else:
                    lo = mid
            drop = lo
    return RigidTransform(pose.q, pose.t - [0.0, 0.0, drop])


def _contact_points(mesh, pose, placed, rs, tol=CONTACT_TOL):
    pts = pose.apply(_surface_samples(mesh))
    masks = [np.abs(pts[:, 2] - rs.height) < tol]
    for other_mesh, other_pose in placed:
        if not _xy_overlaps(mesh, pose, other_mesh, other_pose):
            continue
        local = other_pose.inverse().apply(pts)
        d = point_triangle_distances(local, other_mesh.triangle_corners())
        masks.append(d < tol)
    mask = np.logical_or.reduce(masks)
    return pts[mask]


def support_polygon(contacts):
    """Convex hull (in xy) of the contact points; may be degenerate."""
    if not len(contacts):
        return None
    xy = contacts[:, :2]
    if len(xy) >= 3:
        try:
            hull = ConvexHull(xy)
            return contacts[hull.vertices]
        except QhullError:
            pass
    return contacts


def gravity_line_inside(contacts, com_xy, margin=STABILITY_MARGIN):
    """Is the gravity line through the center of mass inside the support polygon?"""
    if contacts is None or not len(contacts):
        return False
    shape = MultiPoint([tuple(p) for p in contacts[:, :2]]).convex_hull
    shrunk = shape.buffer(-margin)
    return bool(shrunk.covers(Point(float(com_xy[0]), float(com_xy[1]))))


def _nearest_polygon_edge(poly_contacts, com_xy):
    """Tipping axis (3D direction plus pivot) nearest to the gravity line."""
    xy = poly_contacts[:, :2]
    n = len(poly_contacts)
    if n == 1:
        pivot = poly_contacts[0]
        out = com_xy - xy[0]
        nrm = np.linalg.norm(out)
        if nrm < 1e-12:
            out = np.array([1.0, 0.0])
        else:
            out = out / nrm
        axis = np.array([-out[1], out[0], 0.0])
        return axis, pivot
    best = None
    for i in range(n):
        j = (i + 1) % n if n > 2 else 1
        if n == 2 and i == 1:
            break
        a, b = xy[i], xy[j]
        e = b - a
        ee = float(e @ e)
        t = 0.0 if ee < 1e-18 else float(np.clip((com_xy - a) @ e / ee, 0.0, 1.0))
        closest = a + t * e
        dist = float(np.linalg.norm(com_xy - closest))
        if best is None or dist < best[0]:
            axis3 = poly_contacts[j] - poly_contacts[i]
            nrm = np.linalg.norm(axis3[:2])
            if nrm < 1e-12:
                continue
            best = (dist, axis3 / np.linalg.norm(axis3), poly_contacts[i])
    if best is None:
        return None
    return best[1], best[2]


def _rotate_about(pose, axis, pivot, angle):
    rot = RigidTransform.from_axis_angle(axis, angle)
    t = np.asarray(pivot) + rot.apply(pose.t - np.asarray(pivot))
    return RigidTransform(rot.compose(pose).q, t)


def settle_object(placed, mesh: TriangleMesh, pose: RigidTransform, rs: RestingSurface) -> RigidTransform:
    """Settle one object against the surface and already-placed objects.

    `placed` is a sequence of (mesh, pose) pairs. Raises NoSupport (carrying
    the boundary-projected pose) when the object comes to rest outside the
    surface bounds.
    """
    if not np.all(np.isfinite(pose.t)):
        raise ValueError("non-finite initial pose")
    placed = list(placed)
    pose = _resolve_penetration(mesh, pose, placed, rs)
    pose = _drop_to_contact(mesh, pose, placed, rs)

    for _ in range(MAX_TILT_STEPS):
        contacts = _contact_points(mesh, pose, placed, rs)
        com = pose.apply(_center_of_mass(mesh))
        poly = support_polygon(contacts)
        if poly is not None and gravity_line_inside(poly, com[:2]):
            break
        if poly is None:
            break
        edge = _nearest_polygon_edge(poly, com[:2])
        if edge is None:
            break
        axis, pivot = edge
        tipped = _rotate_about(pose, axis, pivot, TILT_STEP)
        if tipped.apply(_center_of_mass(mesh))[2] > com[2]:
            tipped = _rotate_about(pose, axis, pivot, -TILT_STEP)
        pose = _resolve_penetration(mesh, tipped, placed, rs)
        pose = _drop_to_contact(mesh, pose, placed, rs)

    com = pose.apply(_center_of_mass(mesh))
    if not rs.contains_xy(com[:2]):
        clamped = rs.clamp_xy(com[:2])
        shifted = RigidTransform(pose.q, [pose.t[0] + clamped[0] - com[0], pose.t[1] + clamped[1] - com[1], pose.t[2]])
        raise NoSupport("object rests outside the surface bounds", pose=shifted)
    return pose


def simulate_scene_settle(meshes, initial_poses, rs: RestingSurface):
    """Settle a scene: objects in order of initial height, lowest first."""
    if len(meshes) != len(initial_poses):
        raise ValueError("meshes and poses must have the same length")
    order = sorted(range(len(meshes)), key=lambda i: (initial_poses[i].t[2], i))
    placed = []
    result = [None] * len(meshes)
    for i in order:
        settled = settle_object(placed, meshes[i], initial_poses[i], rs)
        placed.append((meshes[i], settled))
        result[i] = settled
    return result


def max_scene_penetration(meshes, poses, rs: RestingSurface) -> float:
    """Worst pairwise or surface penetration in a settled scene."""
    worst = 0.0
    for i in range(len(meshes)):
        pts = poses[i].apply(_surface_samples(meshes[i]))
        worst = max(worst, _surface_penetration(pts, rs))
        for j in range(i + 1, len(meshes)):
            worst = max(worst, penetration_depth((meshes[i], poses[i]), (meshes[j], poses[j])))
    return worst


def is_stable(mesh, pose, placed, rs: RestingSurface, margin=STABILITY_MARGIN) -> bool:
    """Support-polygon stability check for a settled object."""
    contacts = _contact_points(mesh, pose, placed, rs)
    com = pose.apply(_center_of_mass(mesh))
    return gravity_line_inside(support_polygon(contacts), com[:2], margin)
