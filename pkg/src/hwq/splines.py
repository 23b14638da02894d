"""Univariate and tensor-product B-spline primitives.

All knot vectors are open and uniform on ``[0, 1]`` with simple interior
knots. Function and span indices are 0-based in the Python API; external
file formats convert to 1-based indices.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class KnotVector:
    """Open uniform knot vector of degree ``degree`` with ``n_elements`` spans.

    Breakpoints are computed as ``k / n_elements`` with a single correctly
    rounded division, so the breakpoints of a coarse level are bit-identical
    to the corresponding breakpoints of any dyadic refinement.

    Attributes:
        degree: Polynomial degree ``p >= 0``.
        n_elements: Number of knot spans.
        level: Refinement level the knot vector belongs to (metadata only).
    """

    degree: int
    n_elements: int
    level: int = 0

    def __post_init__(self) -> None:
        if self.degree < 0:
            raise ValueError(f"degree must be non-negative, got {self.degree}")
        if self.n_elements < 1:
            raise ValueError(f"n_elements must be >= 1, got {self.n_elements}")

    @cached_property
    def breakpoints(self) -> np.ndarray:
        """Distinct knot values, shape ``(n_elements + 1,)``."""
        return np.arange(self.n_elements + 1, dtype=np.float64) / self.n_elements

    @cached_property
    def knots(self) -> np.ndarray:
        """Full open knot vector with end knots repeated ``p + 1`` times."""
        p = self.degree
        return np.concatenate(
            [np.zeros(p), self.breakpoints, np.ones(p)]
        )

    @property
    def n_functions(self) -> int:
        """Number of basis functions, ``n_elements + degree``."""
        return self.n_elements + self.degree

    @property
    def h(self) -> float:
        """Uniform span length."""
        return 1.0 / self.n_elements

    def support(self, i: int) -> tuple[int, int]:
        """Span range ``[first, last]`` (inclusive) where function ``i`` is nonzero."""
        if not 0 <= i < self.n_functions:
            raise IndexError(f"function index {i} out of range")
        return max(0, i - self.degree), min(self.n_elements - 1, i)

    def function(self, i: int, direction: int = 0) -> Basis1DFunction:
        """Descriptor of basis function ``i``."""
        first, last = self.support(i)
        return Basis1DFunction(
            level=self.level,
            direction=direction,
            index=i,
            support=(float(self.breakpoints[first]), float(self.breakpoints[last + 1])),
        )


@dataclass(frozen=True)
class Basis1DFunction:
    """A single univariate B-spline identified by level, direction and index."""

    level: int
    direction: int
    index: int
    support: tuple[float, float]


@dataclass(frozen=True)
class TwoScaleRow:
    """Expansion of a coarse B-spline in the basis of a finer nested level.

    Attributes:
        coarse_level: Level of the coarse function.
        fine_level: Level of the fine basis.
        direction: Parametric direction.
        index: Coarse function index.
        fine_indices: Indices of fine functions with positive coefficient.
        coefficients: The positive two-scale coefficients.
    """

    coarse_level: int
    fine_level: int
    direction: int
    index: int
    fine_indices: np.ndarray
    coefficients: np.ndarray


@dataclass(frozen=True)
class TensorSpace:
    """Tensor-product spline space of one level."""

    level: int
    knot_vectors: tuple[KnotVector, ...]

    @property
    def dim(self) -> int:
        return len(self.knot_vectors)

    @property
    def dims(self) -> tuple[int, ...]:
        """Per-direction function counts."""
        return tuple(kv.n_functions for kv in self.knot_vectors)

    @property
    def element_dims(self) -> tuple[int, ...]:
        """Per-direction element counts."""
        return tuple(kv.n_elements for kv in self.knot_vectors)

    @property
    def n_functions(self) -> int:
        return int(np.prod(self.dims))


def make_open_uniform_knots(p: int, n_elements: int, level: int = 0) -> KnotVector:
    """Build an open uniform knot vector on ``[0, 1]``.

    Args:
        p: Degree.
        n_elements: Number of uniform spans.
        level: Level tag stored on the result.

    Returns:
        The knot vector; it carries ``n_elements + p`` basis functions.

    Raises:
        ValueError: If ``n_elements < 1`` or ``p < 0``.
    """
    return KnotVector(degree=p, n_elements=n_elements, level=level)


def dyadic_refine(kv: KnotVector) -> KnotVector:
    """Bisect every span of ``kv``."""
    return KnotVector(degree=kv.degree, n_elements=2 * kv.n_elements, level=kv.level + 1)


def find_span(kv: KnotVector, x: np.ndarray) -> np.ndarray:
    """Span index containing each ``x``; the right end belongs to the last span."""
    s = np.searchsorted(kv.breakpoints, x, side="right") - 1
    return np.clip(s, 0, kv.n_elements - 1)


def eval_basis_batch(kv: KnotVector, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Evaluate the nonzero basis functions at many points.

    Args:
        kv: Knot vector.
        x: Points in ``[0, 1]``.

    Returns:
        ``(first, values)`` where ``first[q]`` is the index of the first
        function nonzero at ``x[q]`` and ``values[q, a]`` is the value of
        function ``first[q] + a`` for ``a = 0..p``.

    Raises:
        ValueError: If any point lies outside ``[0, 1]``.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size and (np.any(x < 0.0) or np.any(x > 1.0) or not np.all(np.isfinite(x))):
        raise ValueError("evaluation points must lie in [0, 1]")
    p = kv.degree
    t = kv.knots
    span = find_span(kv, x)
    k = span + p  # knot index with t[k] <= x < t[k+1]
    vals = np.zeros((x.size, p + 1))
    vals[:, 0] = 1.0
    left = np.empty((x.size, p + 1))
    right = np.empty((x.size, p + 1))
    for j in range(1, p + 1):
        left[:, j] = x - t[k + 1 - j]
        right[:, j] = t[k + j] - x
        saved = np.zeros(x.size)
        for r in range(j):
            temp = vals[:, r] / (right[:, r + 1] + left[:, j - r])
            vals[:, r] = saved + right[:, r + 1] * temp
            saved = left[:, j - r] * temp
        vals[:, j] = saved
    return span.astype(np.int64), vals


def eval_basis(kv: KnotVector, x: float) -> tuple[int, np.ndarray]:
    """Evaluate the ``p + 1`` basis functions that may be nonzero at ``x``.

    Args:
        kv: Knot vector.
        x: Point in ``[0, 1]``.

    Returns:
        Index of the first function and its ``p + 1`` values.

    Raises:
        ValueError: If ``x`` lies outside ``[0, 1]``.
    """
    first, vals = eval_basis_batch(kv, np.array([x]))
    return int(first[0]), vals[0]


def eval_all_basis(kv: KnotVector, x: np.ndarray) -> np.ndarray:
    """Dense matrix ``B[q, i] = b_i(x_q)`` of all basis functions."""
    first, vals = eval_basis_batch(kv, x)
    out = np.zeros((first.size, kv.n_functions))
    rows = np.arange(first.size)
    for a in range(kv.degree + 1):
        out[rows, first + a] = vals[:, a]
    return out


def oslo_matrix(coarse_knots: np.ndarray, fine_knots: np.ndarray, p: int) -> np.ndarray:
    """Dense knot-insertion matrix between two nested open knot vectors.

    Column ``i`` holds the coefficients of coarse function ``i`` in the fine
    basis, computed with the discrete B-spline recurrence.

    Args:
        coarse_knots: Coarse open knot vector.
        fine_knots: Fine open knot vector containing all coarse knots.
        p: Degree.

    Returns:
        Array of shape ``(n_fine, n_coarse)``.
    """
    t = np.asarray(coarse_knots, dtype=np.float64)
    tau = np.asarray(fine_knots, dtype=np.float64)
    nc = t.size - p - 1
    nf = tau.size - p - 1
    out = np.zeros((nf, nc))
    for j in range(nf):
        # coarse knot interval containing tau_j, restricted to non-empty spans
        mu = int(np.searchsorted(t, tau[j], side="right") - 1)
        mu = min(max(mu, p), nc - 1)
        b = np.array([1.0])
        for k in range(1, p + 1):
            x = tau[j + k]
            nb = np.zeros(k + 1)
            for r in range(k + 1):
                i = mu - k + r
                val = 0.0
                if r >= 1:  # term from alpha_{i, k-1}
                    den = t[i + k] - t[i]
                    if den > 0.0:
                        val += (x - t[i]) / den * b[r - 1]
                if r <= k - 1:  # term from alpha_{i+1, k-1}
                    den = t[i + k + 1] - t[i + 1]
                    if den > 0.0:
                        val += (t[i + k + 1] - x) / den * b[r]
                nb[r] = val
            b = nb
        out[j, mu - p : mu + 1] = b
    return out


def _check_nested(coarse: KnotVector, fine: KnotVector) -> int:
    if coarse.degree != fine.degree:
        raise ValueError("knot vectors have different degrees")
    ratio, rem = divmod(fine.n_elements, coarse.n_elements)
    if rem or ratio < 1 or ratio & (ratio - 1):
        raise ValueError("fine knot vector is not a dyadic refinement of the coarse one")
    return ratio.bit_length() - 1


def refinement_matrix(coarse: KnotVector, fine: KnotVector) -> sp.csc_matrix:
    """Sparse two-scale matrix ``T`` with ``b_coarse = T.T @ b_fine``.

    Raises:
        ValueError: If ``fine`` is not a dyadic refinement of ``coarse``.
    """
    _check_nested(coarse, fine)
    dense = oslo_matrix(coarse.knots, fine.knots, coarse.degree)
    dense[dense < 0.0] = 0.0
    return sp.csc_matrix(dense)


def refinement_coefficients(
    coarse: KnotVector, fine: KnotVector, i: int, direction: int = 0
) -> TwoScaleRow:
    """Coefficients of coarse function ``i`` in the fine basis.

    Args:
        coarse: Coarse knot vector.
        fine: Fine knot vector, a repeated dyadic refinement of ``coarse``.
        i: Coarse function index (0-based).
        direction: Direction tag stored on the result.

    Returns:
        The row of strictly positive coefficients.

    Raises:
        ValueError: If the inputs are not nested.
        IndexError: If ``i`` is out of range.
    """
    gap = _check_nested(coarse, fine)
    if not 0 <= i < coarse.n_functions:
        raise IndexError(f"coarse index {i} out of range")
    col = refinement_matrix(coarse, fine)[:, i].toarray().ravel()
    idx = np.flatnonzero(col > 0.0)
    return TwoScaleRow(
        coarse_level=coarse.level,
        fine_level=coarse.level + gap,
        direction=direction,
        index=i,
        fine_indices=idx.astype(np.int64),
        coefficients=col[idx],
    )


def gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss–Legendre nodes and weights on ``[-1, 1]``.

    Raises:
        ValueError: If ``n`` is not in ``1..16``.
    """
    if not 1 <= n <= 16:
        raise ValueError(f"number of Gauss points must be in 1..16, got {n}")
    return np.polynomial.legendre.leggauss(n)


def gauss_on_spans(kv: KnotVector, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss rule mapped to every span; arrays of shape ``(n_elements, n)``."""
    xg, wg = gauss_legendre(n)
    a = kv.breakpoints[:-1, None]
    b = kv.breakpoints[1:, None]
    pts = 0.5 * (a + b) + 0.5 * (b - a) * xg[None, :]
    wts = 0.5 * (b - a) * wg[None, :]
    return np.clip(pts, 0.0, 1.0), wts


def exact_mass_1d(kv: KnotVector, i: int, j: int) -> float:
    """``∫ b_i b_j`` over ``[0, 1]`` with a ``(p+1)``-point Gauss rule per span."""
    fi, li = kv.support(i)
    fj, lj = kv.support(j)
    lo, hi = max(fi, fj), min(li, lj)
    if lo > hi:
        return 0.0
    xg, wg = gauss_legendre(kv.degree + 1)
    total = 0.0
    for s in range(lo, hi + 1):
        a, b = kv.breakpoints[s], kv.breakpoints[s + 1]
        x = 0.5 * (a + b) + 0.5 * (b - a) * xg
        first, vals = eval_basis_batch(kv, x)
        vi = vals[:, i - first[0]]
        vj = vals[:, j - first[0]]
        total += 0.5 * (b - a) * float(np.dot(wg, vi * vj))
    return total


def mass_matrix_1d(kv: KnotVector) -> sp.csr_matrix:
    """Full univariate mass matrix assembled span by span."""
    p = kv.degree
    pts, wts = gauss_on_spans(kv, p + 1)
    first, vals = eval_basis_batch(kv, pts.ravel())
    vals = vals.reshape(kv.n_elements, p + 1, p + 1)  # (span, gauss, local fn)
    local = np.einsum("eg,ega,egb->eab", wts, vals, vals)
    span = np.arange(kv.n_elements)
    rows = (span[:, None, None] + np.arange(p + 1)[None, :, None]).repeat(p + 1, axis=2)
    cols = (span[:, None, None] + np.arange(p + 1)[None, None, :]).repeat(p + 1, axis=1)
    n = kv.n_functions
    return sp.csr_matrix((local.ravel(), (rows.ravel(), cols.ravel())), shape=(n, n))


def cross_mass_1d(coarse: KnotVector, fine: KnotVector) -> np.ndarray:
    """Dense ``∫ b^coarse_i b^fine_j`` computed on the spans of ``fine``.

    Both knot vectors must be nested; the integrand is a polynomial of degree
    ``2p`` on every fine span, so ``p + 1`` Gauss points per span are exact.
    """
    p = fine.degree
    pts, wts = gauss_on_spans(fine, p + 1)
    x = pts.ravel()
    bc = eval_all_basis(coarse, x)
    bf = eval_all_basis(fine, x)
    return (bc * wts.ravel()[:, None]).T @ bf
