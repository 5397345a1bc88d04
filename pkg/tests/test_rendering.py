import math

import numpy as np
import pytest

from scenepose.errors import AllBehindCamera, EmptySegment
from scenepose.geometry import CameraModel, RigidTransform
from scenepose.meshes import TriangleMesh, make_box, point_triangle_distances
from scenepose.rendering import (
    BBox2D,
    DepthImage,
    backproject_segment,
    bbox_of_mask,
    project_bbox,
    read_pgm,
    render_depth,
    render_object_depth,
    render_with_ids,
    write_pgm,
)


def square_mesh(side, z, name="square"):
    h = side / 2.0
    v = np.array([[-h, -h, z], [h, -h, z], [h, h, z], [-h, h, z]])
    t = np.array([[0, 1, 2], [0, 2, 3]])
    return TriangleMesh(v, t, name=name)


def simple_camera(width=64, height=48, f=80.0):
    return CameraModel(f, f, width / 2.0, height / 2.0, width, height)


class TestRenderDepth:
    def test_facing_square_reads_its_depth(self):
        cam = simple_camera()
        img = render_depth([(square_mesh(1.0, 1.0), RigidTransform.identity())], cam)
        assert img.data[24, 32] == pytest.approx(1.0, abs=1e-12)

    def test_empty_scene_is_all_zero(self):
        cam = simple_camera()
        img = render_depth([], cam)
        assert not img.data.any()

    def test_zbuffer_nearest_wins(self):
        cam = simple_camera()
        near_sq = square_mesh(0.5, 1.0)
        far_sq = square_mesh(0.5, 2.0)
        img = render_depth(
            [(far_sq, RigidTransform.identity()), (near_sq, RigidTransform.identity())], cam
        )
        overlap = img.data[img.data > 0]
        assert np.all(np.abs(overlap - 1.0) < 1e-12)

    def test_behind_camera_not_rendered(self):
        cam = simple_camera()
        img = render_depth([(square_mesh(0.5, -1.0), RigidTransform.identity())], cam)
        assert not img.data.any()

    def test_backface_still_rendered(self):
        cam = simple_camera()
        # flip the square to face away from the camera
        flipped = RigidTransform.from_axis_angle((1, 0, 0), math.pi, t=(0, 0, 2.0))
        img = render_depth([(square_mesh(0.5, 0.0), flipped)], cam)
        assert img.data.max() > 0

    def test_deterministic(self):
        cam = simple_camera()
        box = make_box(0.3, 0.2, 0.25)
        pose = RigidTransform.from_axis_angle((1, 1, 0), 0.7, t=(0.05, -0.02, 1.2))
        a = render_depth([(box, pose)], cam)
        b = render_depth([(box, pose)], cam)
        assert np.array_equal(a.data, b.data)

    def test_pose_equivariance_bit_identical(self):
        # dyadic translations and exact-norm quaternions make the algebra exact
        cam_rot = RigidTransform((0.5, 0.5, 0.5, 0.5), (0.25, 0.125, 1.5))
        cam = CameraModel(80.0, 80.0, 32.0, 24.0, 64, 48, extrinsic=cam_rot)
        box = make_box(0.25, 0.25, 0.25)
        pose = RigidTransform((0.5, -0.5, 0.5, -0.5), (1.5, 0.5, -0.25))
        img_direct = render_depth([(box, pose)], cam)

        g = RigidTransform((1.0, 0.0, 0.0, 0.0), (0.25, -0.5, 0.125))
        moved_pose = g.compose(pose)
        moved_cam = CameraModel(
            80.0, 80.0, 32.0, 24.0, 64, 48, extrinsic=cam_rot.compose(g.inverse())
        )
        img_moved = render_depth([(box, moved_pose)], moved_cam)
        assert np.array_equal(img_direct.data, img_moved.data)

    def test_slanted_surface_perspective_correct(self):
        cam = simple_camera()
        sq = square_mesh(1.0, 0.0)
        pose = RigidTransform.from_axis_angle((0, 1, 0), 0.5, t=(0.0, 0.0, 1.5))
        img = render_depth([(sq, pose)], cam)
        seg = backproject_segment(img, BBox2D(0, 0, 63, 47), cam)
        world = pose.inverse().apply(seg.points)
        # every backprojected point must land back on the square's plane
        assert np.abs(world[:, 2]).max() < 1e-9


class TestProjectBBox:
    def test_cube_width_oracle(self):
        # project all 8 corners analytically: nearest face at z=0.9 dominates
        cam = CameraModel(500.0, 500.0, 320.0, 240.0, 640, 480)
        cube = make_box(0.2, 0.2, 0.2)
        pose = RigidTransform(t=(0.0, 0.0, 1.0))
        corners = pose.apply(cube.vertices)
        us = 500.0 * corners[:, 0] / corners[:, 2] + 320.0
        expected_w = math.floor(us.max()) - math.floor(us.min())
        box = project_bbox(cube, pose, cam)
        assert box.xmax - box.xmin == expected_w
        assert abs((box.xmax - box.xmin) - 111) <= 1

    def test_all_behind_camera(self):
        cam = simple_camera()
        with pytest.raises(AllBehindCamera):
            project_bbox(make_box(0.1, 0.1, 0.1), RigidTransform(t=(0, 0, -1.0)), cam)

    def test_point_projection_degenerate_box(self):
        cam = CameraModel(80.0, 80.0, 32.0, 24.0, 64, 48)
        # micro-triangle straddling the principal ray projects into one pixel
        v = np.array([[0, 0, 1.0], [1e-5, 0, 1.0], [0, 1e-5, 1.0]])
        mesh = TriangleMesh(v, np.array([[0, 1, 2]]))
        box = project_bbox(mesh, RigidTransform.identity(), cam)
        assert (box.xmin, box.ymin, box.xmax, box.ymax) == (32, 24, 32, 24)

    def test_contains_all_rendered_pixels(self):
        cam = simple_camera()
        box_mesh = make_box(0.3, 0.2, 0.25)
        rng = np.random.default_rng(3)
        for _ in range(10):
            q = rng.normal(size=4)
            q /= np.linalg.norm(q)
            pose = RigidTransform(q, (rng.uniform(-0.2, 0.2), rng.uniform(-0.2, 0.2), 1.5))
            img = render_object_depth(box_mesh, pose, cam)
            mask = np.isfinite(img)
            if not mask.any():
                continue
            rendered = bbox_of_mask(mask)
            bbox = project_bbox(box_mesh, pose, cam)
            assert bbox.xmin <= rendered.xmin and bbox.xmax >= rendered.xmax
            assert bbox.ymin <= rendered.ymin and bbox.ymax >= rendered.ymax


class TestBackproject:
    def test_principal_pixel(self):
        cam = CameraModel(80.0, 80.0, 16.5, 12.5, 32, 24)
        depth = DepthImage.zeros(32, 24)
        depth.data[12, 16] = 2.5  # pixel center exactly at the principal point
        cloud = backproject_segment(depth, BBox2D(0, 0, 31, 23), cam)
        assert np.allclose(cloud.points, [[0.0, 0.0, 2.5]])

    def test_inverse_pinhole_arithmetic(self):
        # pixel one focal length right of the principal point at depth 2 -> x = 2
        cam = CameraModel(8.0, 8.0, 8.5, 8.5, 32, 24)
        depth = DepthImage.zeros(32, 24)
        depth.data[8, 16] = 2.0  # u + 0.5 - cx = 8 = fx
        cloud = backproject_segment(depth, BBox2D(0, 0, 31, 23), cam)
        assert np.allclose(cloud.points, [[2.0, 0.0, 2.0]])

    def test_empty_segment(self):
        cam = simple_camera()
        with pytest.raises(EmptySegment):
            backproject_segment(DepthImage.zeros(64, 48), BBox2D(0, 0, 10, 10), cam)

    def test_render_backproject_round_trip(self):
        cam = simple_camera(f=120.0)
        box = make_box(0.3, 0.25, 0.2)
        pose = RigidTransform.from_axis_angle((1, 0.5, 0.2), 0.8, t=(0.0, 0.05, 1.2))
        img = render_depth([(box, pose)], cam)
        seg = backproject_segment(img, BBox2D(0, 0, 63, 47), cam)
        local = pose.inverse().apply(seg.points)
        d = point_triangle_distances(local, box.triangle_corners())
        assert d.max() < 1e-6


class TestIdBuffer:
    def test_ids_match_nearest_object(self):
        cam = simple_camera()
        near_sq = square_mesh(0.4, 1.0)
        far_sq = square_mesh(1.0, 2.0)
        img, ids = render_with_ids(
            [(near_sq, RigidTransform.identity()), (far_sq, RigidTransform.identity())], cam
        )
        assert set(np.unique(ids)) == {-1, 0, 1}
        assert np.all(img.data[ids == 0] == pytest.approx(1.0))
        assert np.all(img.data[ids == 1] == pytest.approx(2.0))


class TestPgmIO:
    def test_round_trip_at_mm_precision(self, tmp_path):
        rng = np.random.default_rng(0)
        data = np.round(rng.uniform(0.2, 3.0, size=(24, 32)) * 1000) / 1000.0
        data[rng.random((24, 32)) < 0.3] = 0.0
        img = DepthImage(data)
        path = tmp_path / "d.pgm"
        write_pgm(img, path)
        back = read_pgm(path)
        assert np.array_equal(back.data, img.data)

    def test_write_deterministic(self, tmp_path):
        img = DepthImage(np.full((8, 8), 1.234))
        write_pgm(img, tmp_path / "a.pgm")
        write_pgm(img, tmp_path / "b.pgm")
        assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()

    def test_rejects_out_of_range(self, tmp_path):
        with pytest.raises(ValueError):
            write_pgm(DepthImage(np.full((4, 4), 70.0)), tmp_path / "x.pgm")
