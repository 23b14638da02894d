"""Weighted-quadrature assembly of hierarchical mass matrices by sum factorization."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from . import _cascade as kern
from . import _topology as topo
from .geometry import GeometryMap
from .hierarchy import Classification, HierarchicalBasis
from .splines import eval_basis_batch
from .wq import LevelData, WQData


class AssemblyError(RuntimeError):
    """Internal consistency violation during assembly."""


@dataclass(frozen=True, eq=False)
class CoefficientGrid:
    """Coefficient ``c`` on the restricted point grid of one level.

    Only the points of ``X^n_Psi`` are stored (sorted linear keys on the full
    tensor grid); every other grid entry is zero.

    Attributes:
        level: Quadrature level ``n``.
        shape: Full tensor grid shape.
        keys: Sorted linear keys of the stored points.
        values: Coefficient values at those points.
    """

    level: int
    shape: tuple[int, ...]
    keys: np.ndarray
    values: np.ndarray

    @property
    def evaluations(self) -> int:
        return int(self.keys.size)

    def to_dense(self) -> np.ndarray:
        """Dense array over the full grid (small grids only)."""
        out = np.zeros(int(np.prod(self.shape)))
        out[self.keys] = self.values
        return out.reshape(self.shape)


def eval_coefficients(geometry: GeometryMap, data: WQData, n: int) -> CoefficientGrid:
    """Evaluate ``c = |det J|`` at the points of ``X^n_Psi``.

    Raises:
        KeyError: If ``F^n`` is empty.
        ValueError: If a determinant is not finite.
    """
    ld = data.levels[n]
    vals = geometry.jacobian_det(ld.point_coords())
    return CoefficientGrid(n, ld.point_dims, ld.psi_points, vals)


def _overlap_ranges(idx, p, lev, nel_l, k, nel_k, nfun_k):
    """Vectorized level-``k`` index ranges overlapping level-``lev`` functions ``idx``."""
    a = np.maximum(idx - p, 0)
    b = np.minimum(idx, nel_l - 1)
    if k >= lev:
        s = 1 << (k - lev)
        lo = a * s
        hi = (b + 1) * s + p - 1
    else:
        s = 1 << (lev - k)
        lo = a // s
        hi = -(-(b + 1) // s) + p - 1
    return lo.astype(np.int64), np.minimum(hi, nfun_k - 1).astype(np.int64)


def overlap_pattern(
    basis: HierarchicalBasis, classification: Classification
) -> tuple[np.ndarray, np.ndarray]:
    """CSR pattern ``(indptr, indices)`` of all overlapping pairs of active functions."""
    t = basis.topology_arrays()
    n = basis.size
    indptr = np.zeros(n + 1, dtype=np.int64)
    args = (t["flev"], t["fmulti"], classification.mu, classification.nu, t["degs"],
            t["edims"], t["fdims"], t["fkeys"], t["foff"])
    topo.overlap_pattern_kernel(*args, False, indptr, np.zeros(0, np.int32))
    indices = np.empty(indptr[-1], dtype=np.int32)
    topo.overlap_pattern_kernel(*args, True, indptr, indices)
    return indptr, indices


@dataclass(frozen=True, eq=False)
class Connectivity:
    """Overlapping test/trial pairs of one assembly block.

    Attributes:
        qlevel: Quadrature level ``n``.
        test_level: Test level ``l``.
        trial_level: Trial level ``m``.
        tests: Test multi-indices of the pairs, shape ``(K, d)``.
        trials: Trial multi-indices of the pairs, shape ``(K, d)``.
        projections: ``projections[k-1]`` holds the distinct prefix pairs
            ``(i_1..i_k, j_1..j_k)``, shape ``(P_k, 2k)``.
    """

    qlevel: int
    test_level: int
    trial_level: int
    tests: np.ndarray
    trials: np.ndarray
    projections: tuple[np.ndarray, ...]

    @property
    def size(self) -> int:
        return int(self.tests.shape[0])


def compute_connectivity(
    basis: HierarchicalBasis, classification: Classification, n: int, l: int, m: int
) -> Connectivity:
    """Pairs of a test in ``F^n`` of level ``l`` and an active level-``m`` trial that overlap."""
    h = basis.hierarchy
    p, d = h.degree, h.dim
    g = classification.sets[n]
    g = g[basis.levels[g] == l]
    ti = basis.multi[g]
    tests, trials = [], []
    act = basis.active[m]
    fd = h.function_dims(m)
    for row in ti:
        lo, hi = [], []
        for k in range(d):
            a, b = _overlap_ranges(np.array([row[k]]), p, l, h.element_dims(l)[k], m,
                                   h.element_dims(m)[k], fd[k])
            lo.append(int(a[0]))
            hi.append(int(b[0]) + 1)
        keys = topo.expand_boxes(np.array([lo]), np.array([hi]), fd)
        keys = keys[np.isin(keys, act, assume_unique=True)]
        if keys.size:
            tests.append(np.repeat(row[None, :], keys.size, axis=0))
            trials.append(np.stack(np.unravel_index(keys, fd), axis=1))
    if tests:
        tests_a = np.concatenate(tests).astype(np.int64)
        trials_a = np.concatenate(trials).astype(np.int64)
    else:
        tests_a = np.zeros((0, d), np.int64)
        trials_a = np.zeros((0, d), np.int64)
    proj = tuple(
        np.unique(np.concatenate([tests_a[:, :k], trials_a[:, :k]], axis=1), axis=0)
        for k in range(1, d + 1)
    )
    return Connectivity(n, l, m, tests_a, trials_a, proj)


@dataclass
class AssemblyStats:
    """Counters and timings of one assembly.

    Attributes:
        flops: Floating-point operations in cascade inner loops (2 per multiply-add).
        quad_evals: Number of coefficient evaluations.
        t_coeff: Seconds spent evaluating coefficients.
        t_formation: Seconds spent forming the matrix (excluding coefficients).
    """

    flops: int = 0
    quad_evals: int = 0
    t_coeff: float = 0.0
    t_formation: float = 0.0
    blocks: list[tuple[int, int, int, int]] = field(default_factory=list)


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Matrix indexed by hierarchical identifiers in (level, lexicographic) order.

    Attributes:
        csr: Values in compressed-row storage.
        levels: Level of each row/column identifier.
        multi: Multi-index of each row/column identifier.
    """

    csr: sp.csr_matrix
    levels: np.ndarray
    multi: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.csr.shape

    @property
    def nnz(self) -> int:
        return int(self.csr.nnz)

    def identifier(self, index: int) -> tuple[int, tuple[int, ...]]:
        return int(self.levels[index]), tuple(int(v) for v in self.multi[index])

    def toarray(self) -> np.ndarray:
        return self.csr.toarray()

    def to_matrix_market(self, path: str | Path) -> None:
        """Write a real general coordinate Matrix Market file (1-based)."""
        scipy.io.mmwrite(str(path), self.csr.tocoo(), field="real", symmetry="general",
                         precision=17)


def write_vector(vec: np.ndarray, path: str | Path) -> None:
    """Write one value per line."""
    np.savetxt(str(path), np.asarray(vec, dtype=np.float64), fmt="%.17g")


def read_vector(path: str | Path) -> np.ndarray:
    return np.loadtxt(str(path), dtype=np.float64, ndmin=1)


def _trial_tables(basis: HierarchicalBasis, ld: LevelData, m: int):
    h = basis.hierarchy
    out = []
    for k in range(h.dim):
        first, vals = eval_basis_batch(h.knot_vector(m, k), ld.points[k].coords)
        out.append((first, np.ascontiguousarray(vals)))
    return out


def _run_block(
    basis: HierarchicalBasis,
    ld: LevelData,
    coeffs: CoefficientGrid,
    lev: int,
    m: int,
    gids: np.ndarray,
    tables,
    indptr: np.ndarray,
    indices: np.ndarray,
    values: np.ndarray,
    written: np.ndarray,
) -> np.ndarray:
    h = basis.hierarchy
    p, d = h.degree, h.dim
    tests = np.ascontiguousarray(basis.multi[gids])
    stats = np.zeros(3, dtype=np.int64)
    if tests.shape[0] == 0:
        return stats
    w_args, t_args, r_args = [], [], []
    for k in range(d):
        band = ld.bands[(lev, k)]
        w_args += [band.start, band.length, band.values]
        t_args += list(tables[k])
        idx = np.arange(h.function_dims(lev)[k], dtype=np.int64)
        r_args += list(_overlap_ranges(idx, p, lev, h.element_dims(lev)[k], m,
                                       h.element_dims(m)[k], h.function_dims(m)[k]))
    mkeys = basis.active[m]
    moff = int(basis.offsets[m])
    common = (tests, gids.astype(np.int64), indptr, indices, values, written)
    if d == 1:
        kern.cascade_1d(*common, *w_args, *t_args, *r_args, coeffs.keys, coeffs.values,
                        mkeys, moff, stats)
    else:
        R = np.asarray(ld.point_dims, dtype=np.int64)
        M = np.asarray(h.function_dims(m), dtype=np.int64)
        fn = kern.cascade_2d if d == 2 else kern.cascade_3d
        fn(*common, *w_args, *t_args, *r_args, coeffs.keys, coeffs.values, R, mkeys, moff,
           M, stats)
    return stats


def sum_factorization(
    data: WQData,
    coeffs: CoefficientGrid,
    test_level: int,
    trial_level: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Entries of one block ``(n, l, m)`` computed by the memoized cascade.

    Args:
        data: Preprocessed data.
        coeffs: Coefficients of quadrature level ``n = coeffs.level``.
        test_level: Level ``l`` of the tests (taken from ``F^n``).
        trial_level: Level ``m`` of the trials.

    Returns:
        ``(rows, cols, values)`` with global test ids, global trial ids and the
        values ``Q^l_i(c B^m_j)`` for every overlapping pair.
    """
    basis = data.basis
    ld = data.levels[coeffs.level]
    gids = ld.tests.get(test_level, np.zeros(0, np.int64))
    indptr, indices = overlap_pattern(basis, data.classification)
    values = np.zeros(indices.size)
    written = np.zeros(indices.size, dtype=np.uint8)
    tables = _trial_tables(basis, ld, trial_level)
    stats = _run_block(basis, ld, coeffs, test_level, trial_level, gids, tables,
                       indptr, indices, values, written)
    if stats[2]:
        raise AssemblyError(f"{stats[2]} inconsistent writes in block")
    rows = np.repeat(np.arange(basis.size), np.diff(indptr))
    sel = written.astype(bool)
    return rows[sel], indices[sel].astype(np.int64), values[sel]


def compute_matrix(
    basis: HierarchicalBasis,
    data: WQData,
    geometry: GeometryMap,
    stats: AssemblyStats | None = None,
) -> SparseMatrix:
    """Assemble the weighted-quadrature mass matrix.

    Every quadrature level ``n`` with nonempty ``F^n`` evaluates its
    coefficients once; then each test level ``l`` and trial level ``m`` block
    runs the cascade and writes its rows into a shared CSR pattern.

    Args:
        basis: Hierarchical basis.
        data: Output of :func:`hwq.wq.preprocessing` for ``basis``.
        geometry: Geometry map providing ``c = |det J|``.
        stats: Optional counters, updated in place.

    Returns:
        The (generally nonsymmetric) mass matrix.

    Raises:
        AssemblyError: If a row is produced by more than one block, an entry is
            written twice, or some pattern entry is never written.
    """
    stats = AssemblyStats() if stats is None else stats
    t0 = time.perf_counter()
    cls = data.classification
    indptr, indices = overlap_pattern(basis, cls)
    values = np.zeros(indices.size)
    written = np.zeros(indices.size, dtype=np.uint8)
    row_blocks = np.zeros(basis.size, dtype=np.int64)
    t_coeff = 0.0
    for n, ld in sorted(data.levels.items()):
        tc = time.perf_counter()
        coeffs = eval_coefficients(geometry, data, n)
        t_coeff += time.perf_counter() - tc
        stats.quad_evals += coeffs.evaluations
        for lev, gids in sorted(ld.tests.items()):
            row_blocks[gids] += 1
            mu = cls.mu[gids]
            for m in range(int(mu.min()), n + 1):
                sel = gids[mu <= m]
                if sel.size == 0 or basis.active[m].size == 0:
                    continue
                tables = _trial_tables(basis, ld, m)
                st = _run_block(basis, ld, coeffs, lev, m, sel, tables, indptr, indices,
                                values, written)
                stats.flops += int(st[0])
                stats.blocks.append((n, lev, m, int(st[0])))
                if st[2]:
                    raise AssemblyError(f"{st[2]} inconsistent writes in block {(n, lev, m)}")
    if np.any(row_blocks != 1):
        raise AssemblyError("a matrix row was produced by several blocks or by none")
    if not np.all(written):
        raise AssemblyError(f"{int((written == 0).sum())} pattern entries were never computed")
    csr = sp.csr_matrix((values, indices, indptr), shape=(basis.size, basis.size))
    total = time.perf_counter() - t0
    stats.t_coeff += t_coeff
    stats.t_formation += total - t_coeff
    return SparseMatrix(csr, basis.levels, basis.multi)
