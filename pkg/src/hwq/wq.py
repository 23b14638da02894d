"""Weighted-quadrature rules for hierarchical B-spline mass matrices.

For every level ``n`` the quadrature points in each direction are the span
endpoints, the midpoints of interior spans and ``p + 1`` uniform points on
the two boundary spans. Point coordinates are stored as integer numerators
over a common denominator, which makes nested-level comparisons exact.

A test function of level ``l`` whose interaction level is ``n`` integrates
with level-``n`` points. Its univariate weights are two-scale combinations of
level-``n`` weights obtained from local exactness conditions.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, Mapping

import numpy as np
import scipy.linalg

from . import _topology as topo
from .hierarchy import (
    Classification,
    HierarchicalBasis,
    SpaceHierarchy,
    classify_basis_functions,
)
from .splines import (
    KnotVector,
    TwoScaleRow,
    eval_all_basis,
    exact_mass_1d,
    make_open_uniform_knots,
    refinement_matrix,
)

EXACTNESS_RTOL = 1e-12


class WeightSolveError(ArithmeticError):
    """Raised when a local exactness system cannot be satisfied."""


@dataclass(frozen=True, eq=False)
class QuadPoints1D:
    """Quadrature points of one level and direction.

    Attributes:
        level: Level ``n`` of the knot vector.
        direction: Parametric direction.
        degree: Spline degree.
        n_elements: Number of spans.
        numerators: Point coordinates times ``denominator`` (sorted, unique).
        denominator: Common denominator of all points.
    """

    level: int
    direction: int
    degree: int
    n_elements: int
    numerators: np.ndarray
    denominator: int

    @cached_property
    def coords(self) -> np.ndarray:
        """Point coordinates (each a correctly rounded fraction)."""
        return self.numerators / self.denominator

    @property
    def count(self) -> int:
        return int(self.numerators.size)

    @property
    def span_scale(self) -> int:
        """Numerator length of one span."""
        return self.denominator // self.n_elements

    def closed_range(self, first: int, stop: int) -> tuple[int, int]:
        """Point index range ``[start, end)`` inside the closed spans ``first..stop-1``."""
        s = self.span_scale
        lo = int(np.searchsorted(self.numerators, first * s, side="left"))
        hi = int(np.searchsorted(self.numerators, stop * s, side="right"))
        return lo, hi

    @cached_property
    def element_ranges(self) -> np.ndarray:
        """Per-span ``[start, end)`` point ranges over the closed span, shape ``(n_el, 2)``."""
        s = self.span_scale
        e = np.arange(self.n_elements)
        lo = np.searchsorted(self.numerators, e * s, side="left")
        hi = np.searchsorted(self.numerators, (e + 1) * s, side="right")
        return np.stack([lo, hi], axis=1).astype(np.int64)

    def points_per_element(self) -> np.ndarray:
        """Number of points inside each closed span."""
        r = self.element_ranges
        return r[:, 1] - r[:, 0]


def quadrature_points_1d(kv: KnotVector, direction: int = 0) -> QuadPoints1D:
    """Quadrature point layout of one level.

    Args:
        kv: Knot vector of the level.
        direction: Direction tag stored on the result.

    Returns:
        The point set. For ``p = 0`` the layout is the span midpoints.

    Raises:
        ValueError: If fewer than ``2 (p + 1)`` points result; the level-0
            mesh must then be refined.
    """
    p, ne = kv.degree, kv.n_elements
    if p == 0:
        den = 2 * ne
        num = 2 * np.arange(ne, dtype=np.int64) + 1
    else:
        den = 2 * p * ne
        ends = 2 * p * np.arange(ne + 1, dtype=np.int64)
        mids = p * (2 * np.arange(1, ne - 1, dtype=np.int64) + 1)
        first = 2 * np.arange(p + 1, dtype=np.int64)
        num = np.unique(np.concatenate([ends, mids, first, den - first]))
    if num.size < 2 * (p + 1):
        raise ValueError(
            f"{ne} span(s) give only {num.size} quadrature points for degree {p} "
            f"(need at least {2 * (p + 1)}); use a finer level-0 mesh"
        )
    return QuadPoints1D(kv.level, direction, p, ne, num, den)


@dataclass(frozen=True, eq=False)
class WeightTable1D:
    """Univariate weights of one test function on a quadrature level.

    Attributes:
        index: Test function index on its own level.
        start: Index of the first quadrature point carrying a weight.
        weights: Weights of the consecutive points ``start, start + 1, ...``.
    """

    index: int
    start: int
    weights: np.ndarray

    @property
    def points(self) -> np.ndarray:
        return np.arange(self.start, self.start + self.weights.size)


def _support_elements(kv: KnotVector, j: int) -> tuple[int, int]:
    first, last = kv.support(j)
    return first, last + 1


@lru_cache(maxsize=4096)
def _pattern_weights(p: int, n_elements: int, cl: int, cr: int) -> np.ndarray:
    """Solve the exactness system of a representative function of a pattern."""
    kv = make_open_uniform_knots(p, n_elements)
    n = kv.n_functions
    cap = 2 * p + 2
    if cl < cap:
        j = cl
    elif cr < cap:
        j = n - 1 - cr
    else:
        j = cap
    return _solve_weights(kv, j, quadrature_points_1d(kv))


def _solve_weights(kv: KnotVector, j: int, pts: QuadPoints1D) -> np.ndarray:
    p, n = kv.degree, kv.n_functions
    lo, hi = pts.closed_range(*_support_elements(kv, j))
    x = pts.coords[lo:hi]
    trials = np.arange(max(0, j - p), min(n - 1, j + p) + 1)
    mat = eval_all_basis(kv, x)[:, trials].T
    rhs = np.array([exact_mass_1d(kv, j, int(t)) for t in trials])
    w, *_ = scipy.linalg.lstsq(mat, rhs, lapack_driver="gelsy", cond=1e-13)
    norms = np.sqrt([exact_mass_1d(kv, int(t), int(t)) for t in trials])
    res = np.abs(mat @ w - rhs)
    if not np.all(res <= EXACTNESS_RTOL * norms):
        raise WeightSolveError(
            f"exactness system for function {j} (degree {p}, {kv.n_elements} spans) "
            f"has residual {res.max():.3e}"
        )
    return w


def compute_1d_weights(kv: KnotVector, j: int, pts: QuadPoints1D) -> WeightTable1D:
    """Weights of function ``j`` from the univariate exactness conditions.

    The unknowns are the weights of the points in the closed support of ``j``;
    one equation is imposed for every function overlapping ``j``. The
    minimum-norm solution of this underdetermined system is used. Solutions
    are shared between functions with the same distance to both boundaries
    (up to a cap beyond which the local configuration no longer changes).

    Args:
        kv: Knot vector of level ``n``.
        j: Function index.
        pts: Quadrature points of the same level.

    Returns:
        The weight table.

    Raises:
        WeightSolveError: If the residual exceeds the tolerance.
    """
    if pts.n_elements != kv.n_elements or pts.degree != kv.degree:
        raise ValueError("points and knot vector belong to different levels")
    n = kv.n_functions
    if not 0 <= j < n:
        raise IndexError(f"function index {j} out of range")
    cap = 2 * kv.degree + 2
    w = _pattern_weights(kv.degree, kv.n_elements, min(j, cap), min(n - 1 - j, cap))
    lo, hi = pts.closed_range(*_support_elements(kv, j))
    if hi - lo != w.size:
        raise WeightSolveError("cached weight pattern does not match the point layout")
    return WeightTable1D(j, lo, w.copy())


def combine_weights(
    coarse_row: TwoScaleRow, fine_tables: Mapping[int, WeightTable1D]
) -> WeightTable1D:
    """Weights of a coarse function as a two-scale combination of fine weights.

    Args:
        coarse_row: Expansion of the coarse function in the fine basis.
        fine_tables: Fine weight tables keyed by fine index.

    Returns:
        Weight table of the coarse function on the fine quadrature level.

    Raises:
        KeyError: If a table is missing for some fine index of the row.
    """
    tables = []
    for j in coarse_row.fine_indices:
        if int(j) not in fine_tables:
            raise KeyError(f"missing weight table for fine index {int(j)}")
        tables.append(fine_tables[int(j)])
    start = min(t.start for t in tables)
    stop = max(t.start + t.weights.size for t in tables)
    out = np.zeros(stop - start)
    for a, t in zip(coarse_row.coefficients, tables):
        out[t.start - start : t.start - start + t.weights.size] += a * t.weights
    return WeightTable1D(coarse_row.index, start, out)


@dataclass(frozen=True, eq=False)
class WeightBand:
    """Weight tables of all level-``l`` indices of one direction on level ``n``.

    Rows of indices that no test function uses have length 0.

    Attributes:
        level: Test level ``l``.
        qlevel: Quadrature level ``n``.
        direction: Direction.
        start: First point index per level-``l`` index.
        length: Number of weights per index.
        values: Padded weights, shape ``(n_functions_l, width)``.
    """

    level: int
    qlevel: int
    direction: int
    start: np.ndarray
    length: np.ndarray
    values: np.ndarray

    def table(self, i: int) -> WeightTable1D:
        n = int(self.length[i])
        if n == 0:
            raise KeyError(f"no weight table for index {i}")
        return WeightTable1D(i, int(self.start[i]), self.values[i, :n].copy())


def _fine_band(kv: KnotVector, pts: QuadPoints1D, js: np.ndarray, direction: int) -> WeightBand:
    n = kv.n_functions
    start = np.zeros(n, dtype=np.int64)
    length = np.zeros(n, dtype=np.int64)
    rows = {}
    for j in js:
        t = compute_1d_weights(kv, int(j), pts)
        start[j] = t.start
        length[j] = t.weights.size
        rows[int(j)] = t.weights
    width = int(length.max()) if n else 0
    values = np.zeros((n, max(width, 1)))
    for j, w in rows.items():
        values[j, : w.size] = w
    return WeightBand(kv.level, kv.level, direction, start, length, values)


@lru_cache(maxsize=256)
def _two_scale(p: int, n_coarse: int, gap: int):
    coarse = make_open_uniform_knots(p, n_coarse)
    fine = make_open_uniform_knots(p, n_coarse << gap)
    return refinement_matrix(coarse, fine).tocsc()


def _combined_band(
    kv_l: KnotVector,
    fine: WeightBand,
    pts: QuadPoints1D,
    rows_i: np.ndarray,
    gap: int,
    direction: int,
) -> WeightBand:
    """Vectorized :func:`combine_weights` for many coarse indices."""
    p = kv_l.degree
    nl = kv_l.n_functions
    t = _two_scale(p, kv_l.n_elements, gap)
    s = 1 << gap
    a = np.maximum(rows_i - p, 0)
    b = np.minimum(rows_i, kv_l.n_elements - 1) + 1
    sc = pts.span_scale
    lo = np.searchsorted(pts.numerators, a * s * sc, side="left")
    hi = np.searchsorted(pts.numerators, b * s * sc, side="right")
    start = np.zeros(nl, dtype=np.int64)
    length = np.zeros(nl, dtype=np.int64)
    start[rows_i] = lo
    length[rows_i] = hi - lo
    width = int(length.max()) if rows_i.size else 1
    values = np.zeros((nl, max(width, 1)))
    sub = t[:, rows_i].tocoo()
    ci = rows_i[sub.col]
    fj = sub.row
    if np.any(fine.length[fj] == 0):
        raise KeyError("missing fine weight table")
    fw = fine.values.shape[1]
    off = fine.start[fj] - start[ci]
    acol = np.arange(fw)[None, :]
    mask = acol < fine.length[fj][:, None]
    contrib = sub.data[:, None] * fine.values[fj]
    flat = ci[:, None] * values.shape[1] + off[:, None] + acol
    np.add.at(values.reshape(-1), flat[mask], contrib[mask])
    return WeightBand(kv_l.level, kv_l.level + gap, direction, start, length, values)


@dataclass(frozen=True, eq=False)
class LevelData:
    """Everything a quadrature level ``n`` needs for assembly.

    Attributes:
        level: Quadrature level ``n``.
        points: Point layout per direction.
        tests: Global ids of ``F^n`` split by test level.
        test_multi: Multi-indices of the same test functions.
        g_sets: Indices ``G^{l,n}_k`` used by the tests, keyed by ``(l, k)``.
        d_sets: Fine indices ``D^n_k`` needing level-``n`` weights, per direction.
        fine_bands: Level-``n`` weights per direction.
        bands: Combined weights keyed by ``(l, k)``.
        psi_elements: Keys of the level-``n`` elements in ``Psi^n``.
        psi_points: Keys of the points of ``X^n`` inside ``Psi^n``.
    """

    level: int
    points: tuple[QuadPoints1D, ...]
    tests: dict[int, np.ndarray]
    test_multi: dict[int, np.ndarray]
    g_sets: dict[tuple[int, int], np.ndarray]
    d_sets: tuple[np.ndarray, ...]
    fine_bands: tuple[WeightBand, ...]
    bands: dict[tuple[int, int], WeightBand]
    psi_elements: np.ndarray
    psi_points: np.ndarray

    @property
    def point_dims(self) -> tuple[int, ...]:
        return tuple(p.count for p in self.points)

    def point_coords(self, keys: np.ndarray | None = None) -> np.ndarray:
        """Coordinates of points given by linear keys (default: ``X^n_Psi``)."""
        keys = self.psi_points if keys is None else keys
        multi = np.unravel_index(keys, self.point_dims)
        return np.stack([p.coords[m] for p, m in zip(self.points, multi)], axis=1)

    def rule_size(self, level: int) -> np.ndarray:
        """Number of tensor points used by each test function of ``level``."""
        m = self.test_multi[level]
        out = np.ones(m.shape[0], dtype=np.int64)
        for k in range(m.shape[1]):
            out *= self.bands[(level, k)].length[m[:, k]]
        return out


@dataclass(frozen=True, eq=False)
class WQData:
    """Output of :func:`preprocessing`.

    Attributes:
        basis: Hierarchical basis.
        classification: Partition of the basis by interaction level.
        levels: Per quadrature level data, only for nonempty ``F^n``.
    """

    basis: HierarchicalBasis
    classification: Classification
    levels: dict[int, LevelData]

    @cached_property
    def union_points(self) -> tuple[np.ndarray, dict[int, np.ndarray]]:
        """Union of all restricted grids and the position of each level's points in it.

        Returns:
            ``(numerators, membership)``: numerators of the union points over the
            finest common denominator, shape ``(M, d)``, and for every level the
            index into the union of each point of ``X^n_Psi``.
        """
        if not self.levels:
            return np.zeros((0, self.basis.dim), np.int64), {}
        top = max(self.levels)
        per_level = {}
        for n, ld in self.levels.items():
            multi = np.unravel_index(ld.psi_points, ld.point_dims)
            num = np.stack(
                [pt.numerators[m] << (top - n) for pt, m in zip(ld.points, multi)], axis=1
            )
            per_level[n] = num
        allnum = np.concatenate(list(per_level.values()))
        uniq, inv = np.unique(allnum, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        membership = {}
        pos = 0
        for n, num in per_level.items():
            membership[n] = inv[pos : pos + num.shape[0]]
            pos += num.shape[0]
        return uniq, membership

    def total_points(self) -> int:
        """Sum over test functions of the number of points in their rules."""
        total = 0
        for ld in self.levels.values():
            for lev in ld.tests:
                total += int(ld.rule_size(lev).sum())
        return total


def _level_data(
    basis: HierarchicalBasis, cls: Classification, n: int
) -> LevelData:
    h = basis.hierarchy
    p, d = h.degree, h.dim
    ids = cls.sets[n]
    levs = basis.levels[ids]
    points = tuple(quadrature_points_1d(h.knot_vector(n, k), k) for k in range(d))
    tests, test_multi, g_sets = {}, {}, {}
    for lev in np.unique(levs):
        lev = int(lev)
        g = ids[levs == lev]
        tests[lev] = g
        test_multi[lev] = basis.multi[g]
        for k in range(d):
            g_sets[(lev, k)] = np.unique(test_multi[lev][:, k])
    d_sets = []
    fine_bands = []
    for k in range(d):
        kv_n = h.knot_vector(n, k)
        parts = []
        for lev in tests:
            gi = g_sets[(lev, k)]
            if lev == n:
                parts.append(gi)
            else:
                t = _two_scale(p, h.base[k] << lev, n - lev)
                parts.append(t[:, gi].tocoo().row.astype(np.int64))
        dk = np.unique(np.concatenate(parts))
        d_sets.append(dk)
        fine_bands.append(_fine_band(kv_n, points[k], dk, k))
    bands = {}
    for lev in tests:
        for k in range(d):
            if lev == n:
                fb = fine_bands[k]
                bands[(lev, k)] = fb
            else:
                bands[(lev, k)] = _combined_band(
                    h.knot_vector(lev, k), fine_bands[k], points[k],
                    g_sets[(lev, k)], n - lev, k,
                )
    # Psi^n as level-n elements, then the points inside its closure
    edims_n = h.element_dims(n)
    lo_all, hi_all = [], []
    for lev, m in test_multi.items():
        s = 1 << (n - lev)
        ne_l = np.asarray(h.element_dims(lev))[None, :]
        lo_all.append(np.maximum(m - p, 0) * s)
        hi_all.append((np.minimum(m, ne_l - 1) + 1) * s)
    psi_el = topo.expand_boxes(np.concatenate(lo_all), np.concatenate(hi_all), edims_n)
    em = np.stack(np.unravel_index(psi_el, edims_n), axis=1)
    plo = np.stack([points[k].element_ranges[em[:, k], 0] for k in range(d)], axis=1)
    phi = np.stack([points[k].element_ranges[em[:, k], 1] for k in range(d)], axis=1)
    psi_pts = topo.expand_boxes(plo, phi, tuple(pt.count for pt in points))
    return LevelData(
        level=n,
        points=points,
        tests=tests,
        test_multi=test_multi,
        g_sets=g_sets,
        d_sets=tuple(d_sets),
        fine_bands=tuple(fine_bands),
        bands=bands,
        psi_elements=psi_el,
        psi_points=psi_pts,
    )


def preprocessing(
    basis: HierarchicalBasis,
    hierarchy: SpaceHierarchy | None = None,
    classification: Classification | None = None,
) -> WQData:
    """Build all weighted-quadrature data needed to assemble the mass matrix.

    Args:
        basis: Active hierarchical basis.
        hierarchy: Space hierarchy; defaults to the one of ``basis``.
        classification: Precomputed classification; computed when omitted.

    Returns:
        Per-level points, weights, restricted point grids and the classification.
    """
    if hierarchy is not None and hierarchy.base != basis.hierarchy.base:
        raise ValueError("hierarchy does not match the basis")
    cls = classify_basis_functions(basis) if classification is None else classification
    levels = {n: _level_data(basis, cls, n) for n in cls.levels_present()}
    return WQData(basis, cls, levels)


def rule(data: WQData, ident: tuple[int, tuple[int, ...]] | int) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Per-direction point coordinates and weights of a test function's rule."""
    basis = data.basis
    g = ident if isinstance(ident, (int, np.integer)) else basis.index_of(ident[0], ident[1])
    if g < 0:
        raise KeyError(f"{ident} is not an active function")
    n = int(data.classification.nu[g])
    lev = int(basis.levels[g])
    ld = data.levels[n]
    xs, ws = [], []
    for k in range(basis.dim):
        t = ld.bands[(lev, k)].table(int(basis.multi[g, k]))
        xs.append(ld.points[k].coords[t.points])
        ws.append(t.weights)
    return xs, ws


def wq_rule_apply(
    data: WQData,
    ident: tuple[int, tuple[int, ...]] | int,
    v: Callable[[np.ndarray], np.ndarray],
) -> float | np.ndarray:
    """Apply the quadrature rule of a test function to ``v`` by direct summation.

    Args:
        data: Preprocessed data.
        ident: ``(level, multi-index)`` or global index of an active function.
        v: Vectorized callable mapping an ``(M, d)`` array of points to ``M``
            values, or to an ``(M, T)`` array to apply the rule to ``T``
            integrands at once.

    Returns:
        ``sum_q (prod_k w_k(q_k)) v(x_q)`` over the tensor grid of the rule,
        one value per integrand.
    """
    xs, ws = rule(data, ident)
    grids = np.meshgrid(*xs, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=1)
    w = ws[0]
    for wk in ws[1:]:
        w = np.multiply.outer(w, wk)
    vals = np.asarray(v(pts), dtype=np.float64)
    if vals.ndim == 2:
        return w.ravel() @ vals
    return float(np.dot(w.ravel(), vals.reshape(-1)))


def weights_to_json(data: WQData) -> dict:
    """Debug dump of all combined weight tables (1-based indices)."""
    out = []
    for n, ld in sorted(data.levels.items()):
        for (lev, k), band in sorted(ld.bands.items()):
            for i in ld.g_sets[(lev, k)]:
                t = band.table(int(i))
                out.append(
                    {
                        "quadrature_level": n,
                        "test_level": lev,
                        "direction": k + 1,
                        "index": int(i) + 1,
                        "first_point": t.start + 1,
                        "weights": t.weights.tolist(),
                    }
                )
    return {"format": "hwq-weights", "version": 1, "tables": out}
