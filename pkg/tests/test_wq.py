import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hwq.hierarchy import build_hierarchy, compute_active_basis, mesh_from_domains
from hwq.splines import (
    dyadic_refine,
    eval_all_basis,
    exact_mass_1d,
    make_open_uniform_knots,
    refinement_coefficients,
)
from hwq.wq import (
    WeightSolveError,
    combine_weights,
    compute_1d_weights,
    preprocessing,
    quadrature_points_1d,
    rule,
    weights_to_json,
    wq_rule_apply,
)
from oracles import (
    basis_matrix,
    cross_integrals_1d,
    integral_oracle,
    mass_oracle,
    overlap_matrix,
    random_basis,
    tensor_values,
)


def univariate_residual(kv, table, pts, trial_kv):
    """Exactness defects of a weight table against every trial of ``trial_kv``."""
    x = pts.coords[table.points]
    vals = eval_all_basis(trial_kv, x)
    return table.weights @ vals


def fine_tables(kv, pts):
    return {j: compute_1d_weights(kv, j, pts) for j in range(kv.n_functions)}


def nested_middle_basis():
    """1D, p=2: level 2 refines the middle of level 1, which refines the middle of level 0."""
    h = build_hierarchy(2, 1, 8, 2)
    doms = [np.arange(8), np.arange(4, 12), np.arange(12, 20)]
    return compute_active_basis(mesh_from_domains((8,), doms, 2), h)


class TestQuadraturePoints:
    def test_hats_four_spans(self):
        pts = quadrature_points_1d(make_open_uniform_knots(1, 4))
        np.testing.assert_array_equal(pts.coords, [0, 0.25, 0.375, 0.5, 0.625, 0.75, 1])
        assert pts.count == 7

    @pytest.mark.parametrize("p", [2, 3, 4])
    def test_boundary_and_interior_counts(self, p):
        pts = quadrature_points_1d(make_open_uniform_knots(p, 8))
        per = pts.points_per_element()
        assert per[0] == per[-1] == p + 1
        # interior spans carry their two endpoints and the midpoint
        np.testing.assert_array_equal(per[1:-1], 3)
        # 9 endpoints, 6 interior midpoints and p - 1 inner points per boundary span
        assert pts.count == 9 + 6 + 2 * (p - 1)

    def test_p2_two_points_per_element(self):
        pts = quadrature_points_1d(make_open_uniform_knots(2, 8))
        half_open = np.searchsorted(pts.numerators, np.arange(9) * pts.span_scale)
        np.testing.assert_array_equal(np.diff(half_open), 2)
        assert pts.points_per_element()[0] == 3

    @pytest.mark.parametrize("p,n", [(1, 3), (2, 5), (3, 8), (5, 16)])
    def test_rule(self, p, n):
        pts = quadrature_points_1d(make_open_uniform_knots(p, n))
        got = {Fraction(int(a), pts.denominator) for a in pts.numerators}
        expect = {Fraction(e, n) for e in range(n + 1)}
        expect |= {Fraction(2 * e + 1, 2 * n) for e in range(1, n - 1)}
        expect |= {Fraction(q, p * n) for q in range(p + 1)}
        expect |= {1 - Fraction(q, p * n) for q in range(p + 1)}
        assert got == expect
        assert np.all(np.diff(pts.numerators) > 0)

    def test_midpoints_for_constants(self):
        pts = quadrature_points_1d(make_open_uniform_knots(0, 4))
        np.testing.assert_array_equal(pts.coords, [0.125, 0.375, 0.625, 0.875])

    @pytest.mark.parametrize("p,n", [(1, 1), (2, 1), (3, 1)])
    def test_rejects_coarse_mesh(self, p, n):
        with pytest.raises(ValueError, match="finer level-0"):
            quadrature_points_1d(make_open_uniform_knots(p, n))

    @pytest.mark.parametrize("p", [2, 3])
    def test_two_spans_are_rejected_for_higher_degree(self, p):
        with pytest.raises(ValueError):
            quadrature_points_1d(make_open_uniform_knots(p, 2))

    @pytest.mark.parametrize("p", [1, 2, 4])
    def test_nested_breakpoints(self, p):
        coarse = make_open_uniform_knots(p, 4)
        fine = quadrature_points_1d(dyadic_refine(coarse))
        assert set(coarse.breakpoints.tolist()) <= set(fine.coords.tolist())


class TestUnivariateWeights:
    def test_constant_degree(self):
        kv = make_open_uniform_knots(0, 4)
        pts = quadrature_points_1d(kv)
        for j in range(4):
            t = compute_1d_weights(kv, j, pts)
            np.testing.assert_array_equal(t.points, [j])
            assert t.weights[0] == pytest.approx(0.25, abs=1e-15)

    @pytest.mark.parametrize("p,n", [(1, 4), (2, 8), (3, 9), (4, 12), (5, 16)])
    def test_exactness(self, p, n):
        kv = make_open_uniform_knots(p, n)
        pts = quadrature_points_1d(kv)
        exact = cross_integrals_1d(p, n, n)
        for j in range(kv.n_functions):
            t = compute_1d_weights(kv, j, pts)
            got = univariate_residual(kv, t, pts, kv)
            np.testing.assert_allclose(got, exact[j], atol=1e-13)
            assert t.weights.sum() == pytest.approx(exact[j].sum(), abs=1e-13)

    def test_interior_system_size(self):
        kv = make_open_uniform_knots(2, 8)
        pts = quadrature_points_1d(kv)
        t = compute_1d_weights(kv, 4, pts)
        trials = [k for k in range(kv.n_functions) if exact_mass_1d(kv, 4, k) > 0]
        assert len(trials) == 5
        assert t.weights.size in (6, 7)

    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_locality(self, p):
        kv = make_open_uniform_knots(p, 10)
        pts = quadrature_points_1d(kv)
        for j in range(kv.n_functions):
            t = compute_1d_weights(kv, j, pts)
            a, b = kv.support(j)
            x = pts.coords[t.points]
            assert x.min() >= kv.breakpoints[a] and x.max() <= kv.breakpoints[b + 1]
            # every point of the closed support carries a weight slot
            lo, hi = pts.closed_range(a, b + 1)
            assert (t.start, t.start + t.weights.size) == (lo, hi)

    def test_index_checks(self):
        kv = make_open_uniform_knots(2, 6)
        pts = quadrature_points_1d(kv)
        with pytest.raises(IndexError):
            compute_1d_weights(kv, kv.n_functions, pts)
        with pytest.raises(ValueError):
            compute_1d_weights(make_open_uniform_knots(2, 12), 0, pts)

    def test_error_type(self):
        assert issubclass(WeightSolveError, ArithmeticError)

    @settings(max_examples=30, deadline=None)
    @given(p=st.integers(1, 5), n=st.integers(4, 24), data=st.data())
    def test_random_function(self, p, n, data):
        kv = make_open_uniform_knots(p, n)
        j = data.draw(st.integers(0, kv.n_functions - 1))
        pts = quadrature_points_1d(kv)
        t = compute_1d_weights(kv, j, pts)
        x = pts.coords[t.points]
        got = t.weights @ basis_matrix(p, n, x)
        np.testing.assert_allclose(got, cross_integrals_1d(p, n, n)[j], atol=1e-13)


class TestCombineWeights:
    def test_same_level_is_identity(self):
        kv = make_open_uniform_knots(2, 8)
        pts = quadrature_points_1d(kv)
        tables = fine_tables(kv, pts)
        out = combine_weights(refinement_coefficients(kv, kv, 3), tables)
        assert out.start == tables[3].start
        np.testing.assert_array_equal(out.weights, tables[3].weights)

    @pytest.mark.parametrize("p,gap", [(1, 1), (2, 1), (3, 2), (4, 1)])
    def test_coarse_exactness(self, p, gap):
        coarse = make_open_uniform_knots(p, 4)
        fine = coarse
        for _ in range(gap):
            fine = dyadic_refine(fine)
        pts = quadrature_points_1d(fine)
        tables = fine_tables(fine, pts)
        exact = cross_integrals_1d(p, 4, 4 << gap)
        for i in range(coarse.n_functions):
            out = combine_weights(refinement_coefficients(coarse, fine, i), tables)
            got = univariate_residual(fine, out, pts, fine)
            np.testing.assert_allclose(got, exact[i], atol=1e-13)
            assert out.weights.sum() == pytest.approx(exact[i].sum(), abs=1e-13)
            a, b = coarse.support(i)
            x = pts.coords[out.points]
            assert x.min() >= coarse.breakpoints[a] and x.max() <= coarse.breakpoints[b + 1]

    def test_missing_table(self):
        coarse = make_open_uniform_knots(2, 4)
        fine = dyadic_refine(coarse)
        pts = quadrature_points_1d(fine)
        tables = fine_tables(fine, pts)
        row = refinement_coefficients(coarse, fine, 2)
        del tables[int(row.fine_indices[0])]
        with pytest.raises(KeyError):
            combine_weights(row, tables)


class TestPreprocessing:
    def test_single_level_is_tensor_rule(self):
        h = build_hierarchy(2, 2, 6, 0)
        basis = compute_active_basis(mesh_from_domains((6, 6), [np.arange(36)]), h)
        data = preprocessing(basis)
        assert list(data.levels) == [0]
        kv = make_open_uniform_knots(2, 6)
        pts = quadrature_points_1d(kv)
        for g in (0, 7, 20, 63):
            xs, ws = rule(data, g)
            for k in range(2):
                t = compute_1d_weights(kv, int(basis.multi[g, k]), pts)
                np.testing.assert_array_equal(ws[k], t.weights)
                np.testing.assert_array_equal(xs[k], pts.coords[t.points])

    def test_coarse_function_gets_finer_points(self):
        basis = nested_middle_basis()
        data = preprocessing(basis)
        nu = data.classification.nu
        sel = np.nonzero((basis.levels == 1) & (nu == 2))[0]
        assert sel.size > 0
        fine = quadrature_points_1d(make_open_uniform_knots(2, 32))
        kv1 = make_open_uniform_knots(2, 16)
        for g in sel:
            xs, _ = rule(data, int(g))
            a, b = kv1.support(int(basis.multi[g, 0]))
            lo, hi = kv1.breakpoints[a], kv1.breakpoints[b + 1]
            expect = fine.coords[(fine.coords >= lo) & (fine.coords <= hi)]
            np.testing.assert_array_equal(xs[0], expect)

    @pytest.mark.parametrize("seed", range(6))
    def test_point_set_identity(self, seed):
        d = 1 + seed % 2
        basis = random_basis(200 + seed, d, 2 + seed % 2, 2 + seed % 2)
        data = preprocessing(basis)
        h = basis.hierarchy
        for g in range(basis.size):
            n = int(data.classification.nu[g])
            lev = int(basis.levels[g])
            xs, _ = rule(data, g)
            for k in range(d):
                kv_l = h.knot_vector(lev, k)
                pts = quadrature_points_1d(h.knot_vector(n, k))
                a, b = kv_l.support(int(basis.multi[g, k]))
                lo, hi = kv_l.breakpoints[a], kv_l.breakpoints[b + 1]
                expect = pts.coords[(pts.coords >= lo) & (pts.coords <= hi)]
                np.testing.assert_array_equal(xs[k], expect)

    @pytest.mark.parametrize("seed", range(4))
    def test_restricted_grid(self, seed):
        basis = random_basis(300 + seed, 2, 2, 2)
        data = preprocessing(basis)
        for n, ld in data.levels.items():
            x = ld.point_coords()
            inside = np.zeros(x.shape[0], dtype=bool)
            for lev, gids in ld.tests.items():
                for g in gids:
                    box = np.ones(x.shape[0], dtype=bool)
                    xs, _ = rule(data, int(g))
                    for k in range(2):
                        box &= (x[:, k] >= xs[k][0]) & (x[:, k] <= xs[k][-1])
                    inside |= box
            assert inside.all()

    def test_union_points(self):
        basis = random_basis(11, 2, 2, 2)
        data = preprocessing(basis)
        uniq, member = data.union_points
        top = max(data.levels)
        den = None
        for n, ld in data.levels.items():
            x = ld.point_coords()
            den = ld.points[0].denominator << (top - n)
            np.testing.assert_array_equal(uniq[member[n]] / den, x)
        assert len({tuple(r) for r in uniq}) == uniq.shape[0]
        assert uniq.shape[0] <= sum(ld.psi_points.size for ld in data.levels.values())

    def test_weights_json(self):
        basis = nested_middle_basis()
        data = preprocessing(basis)
        doc = json.loads(json.dumps(weights_to_json(data)))
        assert doc["format"] == "hwq-weights"
        first = doc["tables"][0]
        assert first["direction"] >= 1 and first["index"] >= 1 and first["first_point"] >= 1
        total = sum(len(data.levels[n].g_sets[(lev, 0)])
                    for n in data.levels for lev in data.levels[n].tests)
        assert len(doc["tables"]) == total


class TestRuleApply:
    def test_zero(self):
        data = preprocessing(random_basis(1, 2, 2, 2))
        assert wq_rule_apply(data, 0, lambda x: np.zeros(x.shape[0])) == 0.0

    def test_identifier_forms(self):
        basis = nested_middle_basis()
        data = preprocessing(basis)
        ident = basis.identifiers()[5]
        f = lambda x: np.cos(x[:, 0])
        assert wq_rule_apply(data, ident, f) == wq_rule_apply(data, 5, f)
        with pytest.raises(KeyError):
            wq_rule_apply(data, (2, (0,)), f)

    @pytest.mark.parametrize("seed", range(8))
    def test_hierarchical_exactness(self, seed):
        d = 1 + seed % 2
        basis = random_basis(400 + seed, d, 2 + seed % 3, 2 + seed % 2)
        data = preprocessing(basis)
        exact = mass_oracle(basis)
        ov = overlap_matrix(basis)
        for g in range(basis.size):
            trials = np.nonzero(ov[g])[0]
            got = wq_rule_apply(data, g, lambda x: tensor_values(basis, x, trials))
            np.testing.assert_allclose(got, exact[g, trials], rtol=0, atol=1e-11)

    @pytest.mark.parametrize("seed", range(4))
    def test_constant_reproduction(self, seed):
        basis = random_basis(500 + seed, 2, 3, 2)
        data = preprocessing(basis)
        ints = integral_oracle(basis)
        for g in range(basis.size):
            got = wq_rule_apply(data, g, lambda x: np.ones(x.shape[0]))
            assert abs(got - ints[g]) <= 1e-11

    def test_refinement_identity(self):
        """A coarse rule equals the combination of the finer tensor rules it refines into."""
        basis = random_basis(43, 2, 2, 2)
        data = preprocessing(basis)
        h = basis.hierarchy
        rng = np.random.default_rng(0)
        funcs = []
        for _ in range(20):
            a, b, c = rng.normal(size=3)
            funcs.append(lambda x, a=a, b=b, c=c: np.sin(a * x[:, 0] + b * x[:, 1]) + c * x[:, 0] ** 3)
        coarse = np.nonzero(basis.levels < data.classification.nu)[0]
        assert coarse.size > 0
        for g in coarse[:10]:
            n = int(data.classification.nu[g])
            lev = int(basis.levels[g])
            rows = []
            for k in range(2):
                kv_l, kv_n = h.knot_vector(lev, k), h.knot_vector(n, k)
                pts = quadrature_points_1d(kv_n)
                row = refinement_coefficients(kv_l, kv_n, int(basis.multi[g, k]))
                rows.append([(a, compute_1d_weights(kv_n, int(j), pts), pts)
                             for a, j in zip(row.coefficients, row.fine_indices)])
            for f in funcs:
                total = 0.0
                for a0, t0, p0 in rows[0]:
                    for a1, t1, p1 in rows[1]:
                        x0, x1 = p0.coords[t0.points], p1.coords[t1.points]
                        X = np.stack(np.meshgrid(x0, x1, indexing="ij"), axis=-1).reshape(-1, 2)
                        w = np.multiply.outer(t0.weights, t1.weights).ravel()
                        total += a0 * a1 * (w @ f(X))
                assert wq_rule_apply(data, int(g), f) == pytest.approx(total, abs=1e-12)

    def test_vector_integrands(self):
        basis = random_basis(3, 2, 2, 2)
        data = preprocessing(basis)
        f = lambda x: np.stack([np.ones(x.shape[0]), x[:, 0], x[:, 1] ** 2], axis=1)
        got = wq_rule_apply(data, 4, f)
        assert got.shape == (3,)
        for t in range(3):
            assert got[t] == pytest.approx(wq_rule_apply(data, 4, lambda x: f(x)[:, t]), abs=1e-15)


class TestWeightCache:
    @pytest.mark.parametrize("p,n", [(2, 20), (3, 25), (4, 30)])
    def test_cached_patterns_match_direct_solves(self, p, n):
        from hwq.wq import _solve_weights

        kv = make_open_uniform_knots(p, n)
        pts = quadrature_points_1d(kv)
        for j in range(kv.n_functions):
            np.testing.assert_allclose(compute_1d_weights(kv, j, pts).weights,
                                       _solve_weights(kv, j, pts), rtol=0, atol=1e-15)
