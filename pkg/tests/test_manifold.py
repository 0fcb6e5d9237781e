import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tetherquad.manifold import (E1, E3, exp_so3, hat, is_rotation, log_so3, orthonormalize,
                                 project_tangent, rotate_unit, rotate_vector, unit, vee)

finite = st.floats(-10.0, 10.0, allow_nan=False, allow_infinity=False)
vec3 = arrays(np.float64, 3, elements=finite)
# rotation vectors strictly inside the principal ball
small_vec = arrays(np.float64, 3, elements=st.floats(-1.7, 1.7))


class TestHatVee:
    def test_cross_product(self):
        a, b = np.array([1.0, -2.0, 0.5]), np.array([0.3, 0.7, -1.1])
        np.testing.assert_allclose(hat(a) @ b, np.cross(a, b), atol=1e-15)

    def test_batched(self, rng):
        v = rng.normal(size=(4, 5, 3))
        np.testing.assert_allclose(vee(hat(v)), v)

    def test_vee_rejects_non_skew(self):
        with pytest.raises(ValueError):
            vee(np.eye(3))

    @given(vec3)
    def test_hat_skew(self, v):
        S = hat(v)
        np.testing.assert_allclose(S, -S.T)
        np.testing.assert_allclose(vee(S), v)


class TestExpLog:
    def test_quarter_turn(self):
        R = exp_so3(np.pi / 2 * E3)
        np.testing.assert_allclose(R @ E1, [0.0, 1.0, 0.0], atol=1e-15)

    def test_small_angle_branch_continuous(self):
        v = np.array([1.0, 2.0, -1.0]) / np.sqrt(6.0)
        below, above = exp_so3(0.99e-6 * v), exp_so3(1.01e-6 * v)
        np.testing.assert_allclose(below, above, atol=1e-7)
        np.testing.assert_allclose(log_so3(exp_so3(1e-9 * v)), 1e-9 * v, rtol=1e-6)

    def test_log_near_pi(self):
        axis = unit(np.array([0.3, -0.4, 0.86]))
        for theta in (np.pi - 1e-6, np.pi - 1e-3):
            np.testing.assert_allclose(log_so3(exp_so3(theta * axis)), theta * axis, atol=1e-6)

    @given(small_vec)
    @settings(max_examples=200)
    def test_roundtrip(self, v):
        np.testing.assert_allclose(log_so3(exp_so3(v)), v, atol=1e-9)

    @given(vec3)
    def test_exp_is_rotation(self, v):
        assert is_rotation(exp_so3(v), tol=1e-9)

    @given(vec3, vec3)
    def test_rotate_vector_matches_matrix(self, v, x):
        np.testing.assert_allclose(rotate_vector(v, x), exp_so3(v) @ x, atol=1e-9)


class TestSphere:
    @given(vec3, vec3)
    def test_projection_is_tangent(self, q, v):
        if np.linalg.norm(q) < 1e-3:
            return
        q = unit(q)
        p = project_tangent(q, v)
        assert abs(p @ q) < 1e-9 * (1 + np.linalg.norm(v))

    def test_rotate_unit_stays_unit(self, rng):
        q = unit(rng.normal(size=(10, 3)))
        out = rotate_unit(q, rng.normal(size=(10, 3)), 0.3)
        np.testing.assert_allclose(np.linalg.norm(out, axis=-1), 1.0, atol=1e-15)

    def test_unit_zero_raises(self):
        with pytest.raises(ValueError):
            unit(np.zeros(3))


class TestOrthonormalize:
    def test_recovers_rotation(self, rng):
        R = exp_so3(rng.normal(size=3))
        np.testing.assert_allclose(orthonormalize(R + 1e-6 * rng.normal(size=(3, 3))), R,
                                   atol=1e-5)

    def test_reflection_flipped(self):
        assert is_rotation(orthonormalize(np.diag([1.0, 1.0, -1.0])))
