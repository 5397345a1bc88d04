"""Software pinhole z-buffer rasterizer for depth images.

Conventions: pixel index (i, j) is sampled at continuous image coordinates
(i + 0.5, j + 0.5); depth is the camera-frame z of the nearest surface, 0
marks missing. Back faces are rendered: a depth sensor reports any oriented
surface it sees. Triangles are clipped against a near plane at 1e-3 m.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AllBehindCamera, EmptySegment
from .geometry import CAMERA_FRAME, CameraModel, PointCloud, RigidTransform

NEAR_PLANE = 1e-3


@dataclass
class DepthImage:
    """Row-major range map in meters; 0 means missing."""

    data: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.data, dtype=float)
        if d.ndim != 2:
            raise ValueError("depth data must be 2-D")
        if not np.all(np.isfinite(d)) or d.min() < 0:
            raise ValueError("depth values must be finite and non-negative")
        self.data = d

    @property
    def height(self):
        return self.data.shape[0]

    @property
    def width(self):
        return self.data.shape[1]

    @classmethod
    def zeros(cls, width, height):
        return cls(np.zeros((height, width)))

    def copy(self):
        return DepthImage(self.data.copy())


@dataclass
class BBox2D:
    """Inclusive pixel-index bounds, clipped to the image."""

    xmin: int
    ymin: int
    xmax: int
    ymax: int

    def __post_init__(self):
        if self.xmin > self.xmax or self.ymin > self.ymax:
            raise ValueError("empty bounding box")

    def clipped(self, width, height):
        return BBox2D(
            max(0, min(self.xmin, width - 1)),
            max(0, min(self.ymin, height - 1)),
            max(0, min(self.xmax, width - 1)),
            max(0, min(self.ymax, height - 1)),
        )

    def intersects(self, other: "BBox2D"):
        return not (
            self.xmax < other.xmin
            or other.xmax < self.xmin
            or self.ymax < other.ymin
            or other.ymax < self.ymin
        )

    def to_list(self):
        return [int(self.xmin), int(self.ymin), int(self.xmax), int(self.ymax)]

    @classmethod
    def from_list(cls, lst):
        return cls(*[int(x) for x in lst])


def _clip_polygon_near(poly, near):
    """Sutherland-Hodgman clip of a camera-frame polygon against z >= near."""
    out = []
    n = len(poly)
    for i in range(n):
        cur, nxt = poly[i], poly[(i + 1) % n]
        cin, nin = cur[2] >= near, nxt[2] >= near
        if cin:
            out.append(cur)
        if cin != nin:
            t = (near - cur[2]) / (nxt[2] - cur[2])
            out.append(cur + t * (nxt - cur))
    return out


def _rasterize_triangle(zbuf, cam: CameraModel, p0, p1, p2):
    """Min-merge one camera-frame triangle into the z-buffer."""
    pts = np.stack([p0, p1, p2])
    u = cam.fx * pts[:, 0] / pts[:, 2] + cam.cx
    v = cam.fy * pts[:, 1] / pts[:, 2] + cam.cy
    iz = 1.0 / pts[:, 2]

    # pixel index range whose centers can fall inside the projection
    x0 = max(0, int(np.ceil(u.min() - 0.5)))
    x1 = min(cam.width - 1, int(np.floor(u.max() - 0.5)))
    y0 = max(0, int(np.ceil(v.min() - 0.5)))
    y1 = min(cam.height - 1, int(np.floor(v.max() - 0.5)))
    if x0 > x1 or y0 > y1:
        return

    denom = (u[1] - u[0]) * (v[2] - v[0]) - (v[1] - v[0]) * (u[2] - u[0])
    if abs(denom) < 1e-12:
        return

    xs = np.arange(x0, x1 + 1) + 0.5
    ys = np.arange(y0, y1 + 1) + 0.5
    px, py = np.meshgrid(xs, ys)

    w0 = ((u[1] - px) * (v[2] - py) - (v[1] - py) * (u[2] - px)) / denom
    w1 = ((u[2] - px) * (v[0] - py) - (v[2] - py) * (u[0] - px)) / denom
    w2 = 1.0 - w0 - w1
    inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
    if not inside.any():
        return

    # 1/z is affine in screen space: perspective-correct depth
    interp_iz = w0 * iz[0] + w1 * iz[1] + w2 * iz[2]
    depth = np.where(inside & (interp_iz > 0), 1.0 / np.where(interp_iz > 0, interp_iz, 1.0), np.inf)
    region = zbuf[y0 : y1 + 1, x0 : x1 + 1]
    np.minimum(region, depth, out=region)


def render_object_depth(mesh, pose: RigidTransform, camera: CameraModel, near=NEAR_PLANE):
    """Depth buffer (inf = empty) of a single object; building block for scenes."""
    zbuf = np.full((camera.height, camera.width), np.inf)
    to_cam = camera.extrinsic.compose(pose)
    verts = to_cam.apply(mesh.vertices)
    tris = verts[mesh.triangles]
    for corner in tris:
        if np.all(corner[:, 2] >= near):
            _rasterize_triangle(zbuf, camera, corner[0], corner[1], corner[2])
            continue
        if np.all(corner[:, 2] < near):
            continue
        poly = _clip_polygon_near(list(corner), near)
        for k in range(1, len(poly) - 1):
            _rasterize_triangle(zbuf, camera, poly[0], poly[k], poly[k + 1])
    return zbuf


def render_depth(objects, camera: CameraModel, near=NEAR_PLANE) -> DepthImage:
    """Render (mesh, pose) pairs to the nearest-surface depth image."""
    zbuf = np.full((camera.height, camera.width), np.inf)
    for mesh, pose in objects:
        np.minimum(zbuf, render_object_depth(mesh, pose, camera, near), out=zbuf)
    return DepthImage(np.where(np.isinf(zbuf), 0.0, zbuf))


def render_with_ids(objects, camera: CameraModel, near=NEAR_PLANE):
    """Depth image plus per-pixel owning object index (-1 = background).

    Ties go to the earlier object in the list, deterministically.
    """
    zbuf = np.full((camera.height, camera.width), np.inf)
    ids = np.full((camera.height, camera.width), -1, dtype=np.int32)
    for idx, (mesh, pose) in enumerate(objects):
        obj = render_object_depth(mesh, pose, camera, near)
        closer = obj < zbuf
        zbuf[closer] = obj[closer]
        ids[closer] = idx
    return DepthImage(np.where(np.isinf(zbuf), 0.0, zbuf)), ids


def project_bbox(mesh, pose: RigidTransform, camera: CameraModel, near=NEAR_PLANE) -> BBox2D:
    """Tight pixel box over the projected vertices in front of the near plane."""
    verts = camera.extrinsic.compose(pose).apply(mesh.vertices)
    front = verts[verts[:, 2] > near]
    if not len(front):
        raise AllBehindCamera(f"no vertex of '{mesh.name}' projects in front of the camera")
    uv = camera.project(front)
    # pixel index containing continuous coordinate xi is floor(xi)
    xmin = int(np.floor(uv[:, 0].min()))
    xmax = int(np.floor(uv[:, 0].max()))
    ymin = int(np.floor(uv[:, 1].min()))
    ymax = int(np.floor(uv[:, 1].max()))
    box = BBox2D(
        min(max(xmin, 0), camera.width - 1),
        min(max(ymin, 0), camera.height - 1),
        min(max(xmax, 0), camera.width - 1),
        min(max(ymax, 0), camera.height - 1),
    )
    return box


def backproject_segment(depth: DepthImage, bbox: BBox2D, camera: CameraModel) -> PointCloud:
    """Inverse-pinhole points (camera frame) for non-zero depth pixels in bbox."""
    if (
        bbox.xmin < 0
        or bbox.ymin < 0
        or bbox.xmax >= camera.width
        or bbox.ymax >= camera.height
    ):
        raise ValueError("bbox outside image bounds")
    crop = depth.data[bbox.ymin : bbox.ymax + 1, bbox.xmin : bbox.xmax + 1]
    js, is_ = np.nonzero(crop > 0)
    if not len(js):
        raise EmptySegment("no valid depth pixel inside bbox")
    z = crop[js, is_]
    u = is_ + bbox.xmin + 0.5
    v = js + bbox.ymin + 0.5
    x = (u - camera.cx) * z / camera.fx
    y = (v - camera.cy) * z / camera.fy
    return PointCloud(np.stack([x, y, z], axis=1), CAMERA_FRAME)


def bbox_of_mask(mask) -> BBox2D | None:
    """Tight pixel bbox of a boolean mask, None when empty."""
    ys, xs = np.nonzero(mask)
    if not len(ys):
        return None
    return BBox2D(int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))


def write_pgm(depth: DepthImage, path):
    """16-bit binary PGM, value = round(depth meters * 1000) millimeters."""
    mm = np.round(depth.data * 1000.0)
    if mm.max() > 65535:
        raise ValueError("depth exceeds 65.535 m; not representable in 16-bit PGM")
    arr = mm.astype(">u2")
    header = f"P5\n{depth.width} {depth.height}\n65535\n".encode("ascii")
    Path(path).write_bytes(header + arr.tobytes())


def read_pgm(path) -> DepthImage:
    raw = Path(path).read_bytes()
    # header: magic, dims, maxval separated by whitespace
    parts = []
    pos = 0
    while len(parts) < 4:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if raw[pos : pos + 1] == b"#":
            while raw[pos : pos + 1] not in (b"\n", b""):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        parts.append(raw[start:pos])
    pos += 1  # single whitespace after maxval
    magic, width, height, maxval = parts[0], int(parts[1]), int(parts[2]), int(parts[3])
    if magic != b"P5" or maxval != 65535:
        raise ValueError("expected 16-bit binary PGM")
    arr = np.frombuffer(raw[pos:], dtype=">u2", count=width * height)
    return DepthImage(arr.reshape(height, width).astype(float) / 1000.0)
