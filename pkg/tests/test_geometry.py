import math

import numpy as np
import pytest

from scenepose.geometry import (
    RigidTransform,
    SymmetryGroup,
    pairwise_symmetric_rotation_distance,
    quat_canonical,
    quat_from_axis_angle,
    random_quaternion,
    symmetric_rotation_distance,
)


def random_transform(rng, scale=1.0):
    return RigidTransform(random_quaternion(rng), rng.uniform(-scale, scale, 3))


class TestTransformAlgebra:
    def test_identity_compose(self):
        rng = np.random.default_rng(0)
        t = random_transform(rng)
        assert RigidTransform.identity().compose(t).almost_equal(t)
        assert t.compose(RigidTransform.identity()).almost_equal(t)

    def test_inverse_is_group_inverse(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            t = random_transform(rng)
            ident = t.compose(t.inverse())
            assert ident.rotation_angle_to(RigidTransform.identity()) < 1e-9
            assert np.linalg.norm(ident.t) < 1e-9

    def test_double_rotation_flips_x(self):
        rz90 = RigidTransform.from_axis_angle((0, 0, 1), math.pi / 2)
        p = rz90.apply(rz90.apply(np.array([1.0, 0.0, 0.0])))
        assert np.allclose(p, [-1.0, 0.0, 0.0], atol=1e-12)

    def test_associativity(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            a, b, c = (random_transform(rng) for _ in range(3))
            lhs = a.compose(b).compose(c)
            rhs = a.compose(b.compose(c))
            assert lhs.almost_equal(rhs, angle_tol=1e-9, trans_tol=1e-9)

    def test_double_invert(self):
        rng = np.random.default_rng(3)
        for _ in range(50):
            t = random_transform(rng)
            assert t.inverse().inverse().almost_equal(t, angle_tol=1e-9, trans_tol=1e-9)

    def test_apply_distributes_over_compose(self):
        rng = np.random.default_rng(4)
        a, b = random_transform(rng), random_transform(rng)
        pts = rng.normal(size=(10, 3))
        assert np.allclose(a.compose(b).apply(pts), a.apply(b.apply(pts)), atol=1e-12)

    def test_canonical_quaternion_sign(self):
        t = RigidTransform([-1.0, 0.0, 0.0, 0.0])
        assert t.q[0] == 1.0

    def test_rejects_non_unit_quaternion(self):
        with pytest.raises(ValueError):
            RigidTransform([1.0, 1.0, 0.0, 0.0])

    def test_matrix_round_trip(self):
        rng = np.random.default_rng(5)
        t = random_transform(rng)
        assert RigidTransform.from_matrix(t.matrix()).almost_equal(t, 1e-12, 1e-12)


class TestSymmetricRotationDistance:
    def test_zero_for_equal(self):
        rng = np.random.default_rng(6)
        q = random_quaternion(rng)
        assert symmetric_rotation_distance(q, q, SymmetryGroup.trivial()) < 1e-12

    def test_zero_at_symmetry_element(self):
        g = SymmetryGroup.cyclic((0, 0, 1), 4)
        q1 = np.array([1.0, 0.0, 0.0, 0.0])
        q2 = quat_from_axis_angle((0, 0, 1), math.pi / 2)
        assert symmetric_rotation_distance(q1, q2, g) < 1e-12

    def test_45_degrees_under_4fold(self):
        # oracle: brute-force minimum over all four group elements
        g = SymmetryGroup.cyclic((0, 0, 1), 4)
        q1 = np.array([1.0, 0.0, 0.0, 0.0])
        q2 = quat_from_axis_angle((0, 0, 1), math.pi / 4)
        brute = min(
            2.0
            * math.acos(
                min(1.0, abs(float(np.dot(q1, quat_canonical(_qmul(q2, s))))))
            )
            for s in g.discrete
        )
        assert abs(brute - math.pi / 4) < 1e-12
        assert abs(symmetric_rotation_distance(q1, q2, g) - math.pi / 4) < 1e-12

    def test_matches_plain_geodesic_without_symmetry(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            q1, q2 = random_quaternion(rng), random_quaternion(rng)
            plain = 2.0 * math.acos(min(1.0, abs(float(np.dot(q1, q2)))))
            assert abs(symmetric_rotation_distance(q1, q2, None) - plain) < 1e-12

    def test_symmetric_in_arguments(self):
        rng = np.random.default_rng(8)
        g = SymmetryGroup.cyclic((0, 0, 1), 4)
        for _ in range(50):
            q1, q2 = random_quaternion(rng), random_quaternion(rng)
            d12 = symmetric_rotation_distance(q1, q2, g)
            d21 = symmetric_rotation_distance(q2, q1, g)
            assert abs(d12 - d21) < 1e-9

    def test_continuous_axis_spin_is_free(self):
        g = SymmetryGroup.revolution((0, 0, 1))
        rng = np.random.default_rng(9)
        base = random_quaternion(rng)
        for angle in (0.3, 1.2, 2.9):
            spun = quat_canonical(_qmul(base, quat_from_axis_angle((0, 0, 1), angle)))
            assert symmetric_rotation_distance(base, spun, g) < 1e-9

    def test_continuous_axis_against_sampled_minimum(self):
        g = SymmetryGroup.revolution((0, 0, 1))
        rng = np.random.default_rng(10)
        for _ in range(20):
            q1, q2 = random_quaternion(rng), random_quaternion(rng)
            sampled = min(
                2.0
                * math.acos(
                    min(
                        1.0,
                        abs(
                            float(
                                np.dot(
                                    q1,
                                    quat_canonical(
                                        _qmul(q2, quat_from_axis_angle((0, 0, 1), th))
                                    ),
                                )
                            )
                        ),
                    )
                )
                for th in np.linspace(0, 2 * math.pi, 3600, endpoint=False)
            )
            analytic = symmetric_rotation_distance(q1, q2, g)
            assert analytic <= sampled + 1e-9
            assert abs(analytic - sampled) < 2e-3

    def test_triangle_inequality(self):
        rng = np.random.default_rng(11)
        g = SymmetryGroup.cyclic((0, 0, 1), 4)
        for _ in range(1000):
            qa, qb, qc = (random_quaternion(rng) for _ in range(3))
            dab = symmetric_rotation_distance(qa, qb, g)
            dbc = symmetric_rotation_distance(qb, qc, g)
            dac = symmetric_rotation_distance(qa, qc, g)
            assert dac <= dab + dbc + 1e-6

    def test_pairwise_matches_scalar(self):
        rng = np.random.default_rng(12)
        g = SymmetryGroup.revolution((0, 0, 1), flip_axis=(1, 0, 0))
        qa = np.array([random_quaternion(rng) for _ in range(6)])
        qb = np.array([random_quaternion(rng) for _ in range(5)])
        mat = pairwise_symmetric_rotation_distance(qa, qb, g)
        for i in range(6):
            for j in range(5):
                assert abs(mat[i, j] - symmetric_rotation_distance(qa[i], qb[j], g)) < 1e-9

    def test_group_closure_check(self):
        assert SymmetryGroup.cyclic((0, 0, 1), 4).is_closed()
        broken = SymmetryGroup(
            np.array([[1.0, 0, 0, 0], quat_from_axis_angle((0, 0, 1), 2.0)])
        )
        assert not broken.is_closed()


def _qmul(q1, q2):
    from scenepose.geometry import quat_multiply

    return quat_multiply(q1, q2)
