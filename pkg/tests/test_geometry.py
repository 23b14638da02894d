import numpy as np
import pytest

from hwq.geometry import (
    GeometryMap,
    affine_map,
    identity_map,
    make_geometry,
    polar2d_map,
    polar3d_map,
)


def fd_jacobian_det(geo, x, eps=1e-6):
    d = x.shape[1]
    out = np.empty(x.shape[0])
    for q in range(x.shape[0]):
        J = np.empty((d, d))
        for k in range(d):
            e = np.zeros(d)
            e[k] = eps
            J[:, k] = (geo.forward(x[q] + e)[0] - geo.forward(x[q] - e)[0]) / (2 * eps)
        out[q] = abs(np.linalg.det(J))
    return out


class TestDeterminant:
    @pytest.mark.parametrize("geo", [polar2d_map(), polar3d_map(), affine_map(2), affine_map(3),
                                     identity_map(1)])
    def test_finite_differences(self, geo):
        x = np.random.default_rng(0).uniform(0.01, 0.99, size=(50, geo.dim))
        np.testing.assert_allclose(geo.jacobian_det(x), fd_jacobian_det(geo, x), rtol=1e-6)

    def test_polar_is_scaled_radius(self):
        x = np.random.default_rng(1).random((20, 2))
        np.testing.assert_allclose(polar2d_map().jacobian_det(x), (1 + x[:, 0]) * np.pi / 2)

    def test_identity(self):
        np.testing.assert_array_equal(identity_map(3).jacobian_det(np.random.rand(5, 3)), 1.0)

    @pytest.mark.parametrize("geo", [polar2d_map(), polar3d_map()])
    def test_positive_inside(self, geo):
        x = np.random.default_rng(2).uniform(1e-6, 1 - 1e-6, size=(200, geo.dim))
        assert np.all(geo.jacobian_det(x) > 0)

    @pytest.mark.filterwarnings("ignore:overflow encountered")
    def test_non_finite(self):
        geo = affine_map(2, [[1e308, 0], [0, 1e308]])
        with pytest.raises(ValueError):
            geo.jacobian_det(np.zeros((1, 2)))


class TestForward:
    def test_polar_ring(self):
        y = polar2d_map().forward(np.array([[0.0, 0.5], [1.0, 0.0]]))
        np.testing.assert_allclose(y[0], [0.0, 1.0], atol=1e-15)
        np.testing.assert_allclose(np.linalg.norm(y[1]), 2.0)

    def test_polar3d_radius(self):
        x = np.random.default_rng(3).random((30, 3))
        np.testing.assert_allclose(np.linalg.norm(polar3d_map().forward(x), axis=1), 1 + x[:, 0])

    def test_affine(self):
        geo = affine_map(2, [[2, 1], [0, 3]], [1, -1])
        np.testing.assert_allclose(geo.forward(np.array([[1.0, 1.0]])), [[4.0, 2.0]])
        assert geo.jacobian_det(np.zeros((1, 2)))[0] == pytest.approx(6.0)


class TestConstruction:
    @pytest.mark.parametrize("kind,d", [("identity", 1), ("affine", 3), ("polar2d", 2),
                                        ("polar3d", 3)])
    def test_by_name(self, kind, d):
        geo = make_geometry(kind, d)
        assert geo.kind == kind and geo.dim == d

    @pytest.mark.parametrize("kind,d", [("polar2d", 3), ("polar3d", 2), ("torus", 2)])
    def test_rejects(self, kind, d):
        with pytest.raises(ValueError):
            make_geometry(kind, d)

    def test_singular_affine(self):
        with pytest.raises(ValueError):
            affine_map(2, [[1, 2], [2, 4]])

    def test_direct_validation(self):
        with pytest.raises(ValueError):
            GeometryMap("polar2d", 3, (0, 0, 0), (1, 1, 1))
