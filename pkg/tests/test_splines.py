import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hwq.splines import (
    TensorSpace,
    cross_mass_1d,
    dyadic_refine,
    eval_all_basis,
    eval_basis,
    eval_basis_batch,
    exact_mass_1d,
    gauss_legendre,
    make_open_uniform_knots,
    mass_matrix_1d,
    refinement_coefficients,
    refinement_matrix,
)
from oracles import basis_matrix, cross_integrals_1d


def boehm_insert(knots, coeffs, p, x):
    """Insert knot ``x`` once into the spline with control coefficients ``coeffs``."""
    k = int(np.searchsorted(knots, x, side="right") - 1)
    new = np.zeros(len(coeffs) + 1)
    for i in range(len(new)):
        if i <= k - p:
            new[i] = coeffs[i]
        elif i > k:
            new[i] = coeffs[i - 1]
        else:
            a = (x - knots[i]) / (knots[i + p] - knots[i])
            new[i] = a * coeffs[i] + (1 - a) * coeffs[i - 1]
    return np.insert(knots, k + 1, x), new


class TestKnotVector:
    def test_hat_functions(self):
        kv = make_open_uniform_knots(1, 2)
        np.testing.assert_array_equal(kv.knots, [0, 0, 0.5, 1, 1])
        assert kv.n_functions == 3

    @pytest.mark.parametrize("p,n,count", [(0, 4, 4), (3, 8, 11), (2, 5, 7)])
    def test_function_count(self, p, n, count):
        assert make_open_uniform_knots(p, n).n_functions == count

    @pytest.mark.parametrize("p,n", [(0, 0), (2, -1), (-1, 3)])
    def test_rejects_invalid(self, p, n):
        with pytest.raises(ValueError):
            make_open_uniform_knots(p, n)

    @pytest.mark.parametrize("p", [0, 1, 2, 5])
    def test_multiplicities(self, p):
        kv = make_open_uniform_knots(p, 6)
        t = kv.knots
        assert np.all(np.diff(t) >= 0)
        assert np.sum(t == 0.0) == p + 1 and np.sum(t == 1.0) == p + 1
        _, counts = np.unique(t[p + 1 : -p - 1], return_counts=True)
        assert np.all(counts == 1)
        assert t.size - p - 1 == kv.n_functions

    def test_dyadic_refine_hats(self):
        fine = dyadic_refine(make_open_uniform_knots(1, 2))
        np.testing.assert_array_equal(fine.knots, [0, 0, 0.25, 0.5, 0.75, 1, 1])
        assert fine.level == 1

    @pytest.mark.parametrize("p,n", [(1, 3), (2, 5), (4, 7)])
    def test_refine_doubles_spans(self, p, n):
        kv = make_open_uniform_knots(p, n)
        fine = dyadic_refine(kv)
        assert fine.n_functions == 2 * n + p
        assert set(kv.breakpoints.tolist()) <= set(fine.breakpoints.tolist())

    def test_support(self):
        kv = make_open_uniform_knots(2, 5)
        assert kv.support(0) == (0, 0)
        assert kv.support(3) == (1, 3)
        assert kv.support(6) == (4, 4)

    def test_tensor_space_dims(self):
        sp = TensorSpace(1, (make_open_uniform_knots(2, 8), make_open_uniform_knots(2, 4)))
        assert sp.dims == (10, 6)
        assert sp.n_functions == 60


class TestEvaluation:
    def test_hat_values(self):
        first, vals = eval_basis(make_open_uniform_knots(1, 2), 0.25)
        assert first == 0
        np.testing.assert_allclose(vals, [0.5, 0.5], atol=1e-15)

    @pytest.mark.parametrize("p,n,x", [(2, 4, 0.3), (3, 7, 0.91), (4, 5, 0.0), (2, 4, 1.0)])
    def test_matches_scipy_design_matrix(self, p, n, x):
        dense = eval_all_basis(make_open_uniform_knots(p, n), np.array([x]))
        np.testing.assert_allclose(dense, basis_matrix(p, n, np.array([x])), atol=1e-14)

    @pytest.mark.parametrize("x", [-1e-9, 1.0 + 1e-9, np.nan])
    def test_rejects_outside(self, x):
        with pytest.raises(ValueError):
            eval_basis(make_open_uniform_knots(2, 4), x)

    @pytest.mark.parametrize("p", [0, 1, 2, 3, 4])
    def test_partition_of_unity(self, p):
        x = np.random.default_rng(p).random(1000)
        _, vals = eval_basis_batch(make_open_uniform_knots(p, 9), x)
        np.testing.assert_allclose(vals.sum(axis=1), 1.0, atol=1e-13)
        assert vals.min() >= -1e-14

    @settings(max_examples=50, deadline=None)
    @given(p=st.integers(0, 5), n=st.integers(1, 20),
           x=st.floats(0.0, 1.0, allow_nan=False))
    def test_random_against_scipy(self, p, n, x):
        kv = make_open_uniform_knots(p, n)
        np.testing.assert_allclose(eval_all_basis(kv, np.array([x])),
                                   basis_matrix(p, n, np.array([x])), atol=1e-13)


class TestRefinement:
    def test_identity(self):
        kv = make_open_uniform_knots(3, 5)
        row = refinement_coefficients(kv, kv, 4)
        np.testing.assert_array_equal(row.fine_indices, [4])
        np.testing.assert_array_equal(row.coefficients, [1.0])

    def test_indicator_split(self):
        coarse = make_open_uniform_knots(0, 4)
        row = refinement_coefficients(coarse, dyadic_refine(coarse), 2)
        np.testing.assert_array_equal(row.fine_indices, [4, 5])
        np.testing.assert_array_equal(row.coefficients, [1.0, 1.0])

    def test_hat_interior(self):
        coarse = make_open_uniform_knots(1, 4)
        row = refinement_coefficients(coarse, dyadic_refine(coarse), 2)
        np.testing.assert_array_equal(row.fine_indices, [3, 4, 5])
        np.testing.assert_allclose(row.coefficients, [0.5, 1.0, 0.5], atol=1e-15)

    @pytest.mark.parametrize("p", [1, 2, 3, 4])
    @pytest.mark.parametrize("gap", [1, 2])
    def test_matches_boehm_insertion(self, p, gap):
        coarse = make_open_uniform_knots(p, 3)
        fine = coarse
        for _ in range(gap):
            fine = dyadic_refine(fine)
        T = refinement_matrix(coarse, fine).toarray()
        new_knots = sorted(set(fine.breakpoints.tolist()) - set(coarse.breakpoints.tolist()))
        for i in range(coarse.n_functions):
            t, c = coarse.knots.copy(), np.eye(coarse.n_functions)[i]
            for x in new_knots:
                t, c = boehm_insert(t, c, p, x)
            np.testing.assert_allclose(T[:, i], c, atol=1e-14)

    @pytest.mark.parametrize("p", [0, 1, 2, 3, 4])
    def test_pointwise_reconstruction(self, p):
        coarse = make_open_uniform_knots(p, 5)
        fine = dyadic_refine(dyadic_refine(coarse))
        x = np.random.default_rng(7).random(100)
        Bc = basis_matrix(p, 5, x)
        Bf = basis_matrix(p, 20, x)
        for i in range(coarse.n_functions):
            row = refinement_coefficients(coarse, fine, i)
            assert np.all(row.coefficients > 0)
            recon = Bf[:, row.fine_indices] @ row.coefficients
            np.testing.assert_allclose(recon, Bc[:, i], atol=1e-12)

    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_positive_implies_support_inclusion(self, p):
        coarse = make_open_uniform_knots(p, 4)
        fine = dyadic_refine(coarse)
        T = refinement_matrix(coarse, fine).toarray()
        for i in range(coarse.n_functions):
            a, b = coarse.support(i)
            for j in range(fine.n_functions):
                fa, fb = fine.support(j)
                inside = fa >= 2 * a and fb <= 2 * b + 1
                if T[j, i] > 0:
                    assert inside
                else:
                    assert T[j, i] == 0.0
        # a boundary fine function can sit inside a coarse support with a zero coefficient
        assert T[0, 1] == 0.0 and fine.support(0)[1] <= 2 * coarse.support(1)[1] + 1

    def test_rejects_non_nested(self):
        with pytest.raises(ValueError):
            refinement_coefficients(make_open_uniform_knots(2, 4), make_open_uniform_knots(2, 12), 0)
        with pytest.raises(ValueError):
            refinement_coefficients(make_open_uniform_knots(2, 4), make_open_uniform_knots(3, 8), 0)


class TestGauss:
    def test_one_point(self):
        x, w = gauss_legendre(1)
        np.testing.assert_allclose(x, [0.0], atol=1e-16)
        np.testing.assert_allclose(w, [2.0])

    def test_two_points(self):
        x, w = gauss_legendre(2)
        np.testing.assert_allclose(np.sort(x), [-1 / np.sqrt(3), 1 / np.sqrt(3)], atol=1e-15)
        np.testing.assert_allclose(w, [1.0, 1.0], atol=1e-15)

    def test_five_points_x8(self):
        x, w = gauss_legendre(5)
        assert abs(np.dot(w, x**8) - 2 / 9) < 1e-14

    @pytest.mark.parametrize("n", range(1, 17))
    def test_monomial_exactness(self, n):
        x, w = gauss_legendre(n)
        assert abs(w.sum() - 2.0) < 1e-13
        for k in range(2 * n):
            exact = 0.0 if k % 2 else 2.0 / (k + 1)
            assert abs(np.dot(w, x**k) - exact) < 1e-13

    @pytest.mark.parametrize("n", [0, 17])
    def test_range(self, n):
        with pytest.raises(ValueError):
            gauss_legendre(n)


class TestExactMass:
    def test_disjoint(self):
        assert exact_mass_1d(make_open_uniform_knots(2, 8), 0, 5) == 0.0

    def test_indicator(self):
        assert exact_mass_1d(make_open_uniform_knots(0, 4), 2, 2) == pytest.approx(0.25, abs=1e-15)

    @pytest.mark.parametrize("p,n", [(2, 8), (1, 3), (4, 6)])
    def test_full_matrix(self, p, n):
        kv = make_open_uniform_knots(p, n)
        M = mass_matrix_1d(kv).toarray()
        np.testing.assert_allclose(M, M.T, atol=1e-16)
        np.testing.assert_allclose(M, cross_integrals_1d(p, n, n), atol=1e-14)
        t = kv.knots
        integrals = (t[p + 1 :] - t[: -p - 1]) / (p + 1)
        np.testing.assert_allclose(M.sum(axis=1), integrals, atol=1e-14)
        assert exact_mass_1d(kv, 1, 2) == pytest.approx(M[1, 2], abs=1e-15)

    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_cross_levels(self, p):
        coarse = make_open_uniform_knots(p, 3)
        fine = dyadic_refine(dyadic_refine(coarse))
        np.testing.assert_allclose(cross_mass_1d(coarse, fine), cross_integrals_1d(p, 3, 12),
                                   atol=1e-14)
