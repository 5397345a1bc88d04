import math

import numpy as np
import pytest

from scenepose.clustering import cluster_pose_indices, cluster_poses, cluster_scored
from scenepose.geometry import (
    RigidTransform,
    SymmetryGroup,
    random_quaternion,
    symmetric_rotation_distance,
)
from scenepose.registration import ScoredPose


def jittered_pose(rng, center_t, base_q, t_scale=0.005, angle_scale=0.05):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    wobble = RigidTransform.from_axis_angle(axis, rng.normal() * angle_scale)
    q = wobble.compose(RigidTransform(base_q)).q
    return RigidTransform(q, np.asarray(center_t) + rng.normal(scale=t_scale, size=3))


def test_underfull_inputs_returned_verbatim():
    rng = np.random.default_rng(0)
    poses = [RigidTransform(random_quaternion(rng), rng.normal(size=3)) for _ in range(10)]
    out = cluster_poses(poses, k_t=5, k_r=5)
    assert out == poses


def test_identical_inputs_collapse_to_one():
    pose = RigidTransform.from_axis_angle((0, 0, 1), 0.3, t=(0.1, 0.2, 0.0))
    out = cluster_poses([pose] * 40, k_t=3, k_r=3)
    assert out == [pose]


def test_two_translation_bundles_get_one_representative_each():
    rng = np.random.default_rng(1)
    base_q = random_quaternion(rng)
    bundle_a = [jittered_pose(rng, (0.0, 0.0, 0.0), base_q) for _ in range(30)]
    bundle_b = [jittered_pose(rng, (0.1, 0.0, 0.0), base_q) for _ in range(30)]
    out = cluster_poses(bundle_a + bundle_b, k_t=2, k_r=1)
    assert len(out) == 2
    dists_to_a = [np.linalg.norm(p.t - [0, 0, 0]) for p in out]
    dists_to_b = [np.linalg.norm(p.t - [0.1, 0, 0]) for p in out]
    # one representative within each bundle
    assert min(dists_to_a) < 0.03 and min(dists_to_b) < 0.03


def test_medoid_property_exact_membership():
    rng = np.random.default_rng(2)
    poses = [RigidTransform(random_quaternion(rng), rng.normal(scale=0.05, size=3)) for _ in range(200)]
    out = cluster_poses(poses, k_t=4, k_r=3)
    assert len(out) <= 12
    pose_set = {(p.q.tobytes(), p.t.tobytes()) for p in poses}
    for rep in out:
        assert (rep.q.tobytes(), rep.t.tobytes()) in pose_set


def test_deterministic():
    rng = np.random.default_rng(3)
    poses = [RigidTransform(random_quaternion(rng), rng.normal(scale=0.05, size=3)) for _ in range(120)]
    a = cluster_poses(poses, k_t=5, k_r=5, seed=11)
    b = cluster_poses(poses, k_t=5, k_r=5, seed=11)
    assert a == b


def test_rotation_level_separates_distinct_orientations():
    rng = np.random.default_rng(4)
    qa = np.array([1.0, 0.0, 0.0, 0.0])
    qb = RigidTransform.from_axis_angle((0, 0, 1), math.pi / 2).q
    poses = [jittered_pose(rng, (0, 0, 0), qa, angle_scale=0.02) for _ in range(40)]
    poses += [jittered_pose(rng, (0, 0, 0), qb, angle_scale=0.02) for _ in range(40)]
    out = cluster_poses(poses, k_t=1, k_r=2)
    assert len(out) == 2
    angs_a = [symmetric_rotation_distance(p.q, qa, None) for p in out]
    angs_b = [symmetric_rotation_distance(p.q, qb, None) for p in out]
    assert min(angs_a) < math.radians(10)
    assert min(angs_b) < math.radians(10)


def test_symmetry_merges_equivalent_orientations():
    # under a 4-fold z symmetry the two orientation bundles are the same
    rng = np.random.default_rng(5)
    group = SymmetryGroup.cyclic((0, 0, 1), 4)
    qa = np.array([1.0, 0.0, 0.0, 0.0])
    qb = RigidTransform.from_axis_angle((0, 0, 1), math.pi / 2).q
    poses = [jittered_pose(rng, (0, 0, 0), qa, angle_scale=0.02) for _ in range(30)]
    poses += [jittered_pose(rng, (0, 0, 0), qb, angle_scale=0.02) for _ in range(30)]
    out_sym = cluster_poses(poses, k_t=1, k_r=2, group=group)
    # both representatives are equivalent modulo symmetry
    for rep in out_sym:
        assert symmetric_rotation_distance(rep.q, qa, group) < math.radians(10)


def test_representative_quality_close_to_full_set():
    # best representative rotation error within 5 degrees of best full-set error
    rng = np.random.default_rng(6)
    truth_q = random_quaternion(rng)
    poses = []
    for _ in range(300):
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        err = RigidTransform.from_axis_angle(axis, abs(rng.normal()) * 0.12)
        poses.append(RigidTransform(err.compose(RigidTransform(truth_q)).q, rng.normal(scale=0.01, size=3)))
    reps = cluster_poses(poses, k_t=5, k_r=5)
    assert len(reps) <= 25
    full_best = min(symmetric_rotation_distance(p.q, truth_q, None) for p in poses)
    rep_best = min(symmetric_rotation_distance(p.q, truth_q, None) for p in reps)
    assert rep_best <= full_best + math.radians(5.0)


def test_cluster_scored_keeps_lcp():
    rng = np.random.default_rng(7)
    hyps = [
        ScoredPose(RigidTransform(random_quaternion(rng), rng.normal(scale=0.02, size=3)), float(rng.random()))
        for _ in range(80)
    ]
    reps = cluster_scored(hyps, k_t=3, k_r=3)
    originals = {(h.pose.q.tobytes(), h.pose.t.tobytes()): h.lcp for h in hyps}
    for rep in reps:
        assert originals[(rep.pose.q.tobytes(), rep.pose.t.tobytes())] == rep.lcp


def test_validation_errors():
    with pytest.raises(ValueError):
        cluster_poses([], 5, 5)
    with pytest.raises(ValueError):
        cluster_pose_indices([RigidTransform.identity()], 0, 5)
