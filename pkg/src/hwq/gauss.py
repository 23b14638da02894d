"""Element-based tensor Gauss assembly: mass matrix, right-hand side and L2 error."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable

import numba as nb
import numpy as np
import scipy.sparse as sp

from ._topology import _lower_bound
from .assembly import SparseMatrix, overlap_pattern
from .geometry import GeometryMap
from .hierarchy import (
    ElementIncidence,
    HierarchicalBasis,
    classify_basis_functions,
    element_incidence,
)
from .splines import eval_basis_batch, gauss_legendre

TargetFunction = Callable[[np.ndarray], np.ndarray]

_CHUNK_POINTS = 2_000_000


@dataclass
class GaussStats:
    """Counters and timings of one Gauss assembly.

    Attributes:
        flops: Floating-point operations in local matrix products (2 per multiply-add).
        quad_evals: Number of coefficient evaluations.
        t_formation: Seconds spent forming the matrix, topology included.
    """

    flops: int = 0
    quad_evals: int = 0
    t_formation: float = 0.0


@dataclass(frozen=True, eq=False)
class ElementQuadrature:
    """Tensor Gauss rule of one active element with the basis values it needs.

    Attributes:
        element: ``(level, multi-index)`` of the element.
        nodes: Parametric nodes, shape ``(G, d)``.
        weights: Parametric weights, shape ``(G,)``; they sum to the element measure.
        functions: Global ids of the active functions nonzero on the element.
        values: Values of those functions at the nodes, shape ``(len(functions), G)``.
    """

    element: tuple[int, tuple[int, ...]]
    nodes: np.ndarray
    weights: np.ndarray
    functions: np.ndarray
    values: np.ndarray


class _Tables:
    """Univariate basis values at the Gauss nodes of every element, flattened.

    The table of element level ``q``, function level ``k`` and direction ``dd``
    has shape ``(nel_q, p+1, ng)``: entry ``[e, s, g]`` is the value of the
    level-``k`` function ``(e >> (q - k)) + s`` at node ``g`` of element ``e``.
    Padded directions hold a single value 1.
    """

    def __init__(self, basis: HierarchicalBasis, ng: int):
        h = basis.hierarchy
        nl = basis.n_levels
        d = h.dim
        xi, wi = gauss_legendre(ng)
        self.xi = 0.5 * (xi + 1.0)
        self.wi = 0.5 * wi
        self.ngs = np.array([ng if k < d else 1 for k in range(3)], dtype=np.int64)
        self.pps = np.array([h.degree + 1 if k < d else 1 for k in range(3)], dtype=np.int64)
        self.nel = np.ones((nl, 3), dtype=np.int64)
        for q in range(nl):
            self.nel[q, :d] = h.element_dims(q)
        parts, offs = [], np.zeros(nl * nl * 3 + 1, dtype=np.int64)
        pos = 0
        for q in range(nl):
            for k in range(nl):
                for dd in range(3):
                    t = (q * nl + k) * 3 + dd
                    offs[t] = pos
                    if k > q:
                        continue
                    if dd >= d:
                        arr = np.ones(int(self.nel[q, dd]))
                    else:
                        ne = int(self.nel[q, dd])
                        x = ((np.arange(ne)[:, None] + self.xi[None, :]) / ne).ravel()
                        _, vals = eval_basis_batch(h.knot_vector(k, dd), x)
                        arr = vals.reshape(ne, ng, -1).transpose(0, 2, 1).ravel()
                    parts.append(arr)
                    pos += arr.size
        offs[-1] = pos
        self.data = np.concatenate(parts) if parts else np.zeros(0)
        self.offs = offs
        self.nl = nl


@nb.njit(cache=True, inline="always")
def _local_values(e, lq, em, eptr, egid, eloc, flev, tdat, toff, nl, ngs, pps, B):
    g0n = ngs[0]
    g1n = ngs[1]
    g2n = ngs[2]
    for a in range(eptr[e], eptr[e + 1]):
        r = a - eptr[e]
        k = flev[egid[a]]
        o0 = toff[(lq * nl + k) * 3 + 0] + (em[0] * pps[0] + eloc[a, 0]) * g0n
        o1 = toff[(lq * nl + k) * 3 + 1] + (em[1] * pps[1] + eloc[a, 1]) * g1n
        o2 = toff[(lq * nl + k) * 3 + 2] + (em[2] * pps[2] + eloc[a, 2]) * g2n
        g = 0
        for i0 in range(g0n):
            v0 = tdat[o0 + i0]
            for i1 in range(g1n):
                v01 = v0 * tdat[o1 + i1]
                for i2 in range(g2n):
                    B[r, g] = v01 * tdat[o2 + i2]
                    g += 1


@nb.njit(cache=True)
def _mass_kernel(e0, e1, elev, emulti, eptr, egid, eloc, flev, tdat, toff, nl, ngs, pps,
                 cw, indptr, indices, values, stats):
    G = ngs[0] * ngs[1] * ngs[2]
    maxl = 0
    for e in range(e0, e1):
        if eptr[e + 1] - eptr[e] > maxl:
            maxl = eptr[e + 1] - eptr[e]
    B = np.empty((maxl, G))
    Bw = np.empty((maxl, G))
    for e in range(e0, e1):
        nloc = eptr[e + 1] - eptr[e]
        _local_values(e, elev[e], emulti[e], eptr, egid, eloc, flev, tdat, toff, nl, ngs,
                      pps, B)
        for a in range(nloc):
            for g in range(G):
                Bw[a, g] = B[a, g] * cw[e - e0, g]
        for a in range(nloc):
            ra = egid[eptr[e] + a]
            for b in range(a, nloc):
                s = 0.0
                for g in range(G):
                    s += Bw[a, g] * B[b, g]
                rb = egid[eptr[e] + b]
                p = _lower_bound(indices, indptr[ra], indptr[ra + 1], rb)
                values[p] += s
                if b != a:
                    p = _lower_bound(indices, indptr[rb], indptr[rb + 1], ra)
                    values[p] += s
            stats[0] += 2 * G * (nloc - a)


@nb.njit(cache=True)
def _rhs_kernel(e0, e1, elev, emulti, eptr, egid, eloc, flev, tdat, toff, nl, ngs, pps,
                cwf, out):
    G = ngs[0] * ngs[1] * ngs[2]
    maxl = 0
    for e in range(e0, e1):
        if eptr[e + 1] - eptr[e] > maxl:
            maxl = eptr[e + 1] - eptr[e]
    B = np.empty((maxl, G))
    for e in range(e0, e1):
        _local_values(e, elev[e], emulti[e], eptr, egid, eloc, flev, tdat, toff, nl, ngs,
                      pps, B)
        for a in range(eptr[e + 1] - eptr[e]):
            s = 0.0
            for g in range(G):
                s += cwf[e - e0, g] * B[a, g]
            out[egid[eptr[e] + a]] += s


@nb.njit(cache=True)
def _error_kernel(e0, e1, elev, emulti, eptr, egid, eloc, flev, tdat, toff, nl, ngs, pps,
                  cw, fv, coef, out):
    G = ngs[0] * ngs[1] * ngs[2]
    maxl = 0
    for e in range(e0, e1):
        if eptr[e + 1] - eptr[e] > maxl:
            maxl = eptr[e + 1] - eptr[e]
    B = np.empty((maxl, G))
    u = np.empty(G)
    for e in range(e0, e1):
        _local_values(e, elev[e], emulti[e], eptr, egid, eloc, flev, tdat, toff, nl, ngs,
                      pps, B)
        for g in range(G):
            u[g] = 0.0
        for a in range(eptr[e + 1] - eptr[e]):
            c = coef[egid[eptr[e] + a]]
            for g in range(G):
                u[g] += c * B[a, g]
        s = 0.0
        for g in range(G):
            r = u[g] - fv[e - e0, g]
            s += cw[e - e0, g] * r * r
        out[e] = s


def _element_points(basis: HierarchicalBasis, tabs: _Tables, e0: int, e1: int):
    """Parametric nodes and tensor weights (including element measure) of elements ``e0:e1``."""
    mesh = basis.mesh
    d = basis.dim
    lev = mesh.element_levels[e0:e1]
    em = mesh.element_multi[e0:e1]
    ng = len(tabs.xi)
    grids = np.meshgrid(*([np.arange(ng)] * d), indexing="ij")
    gidx = np.stack([g.ravel() for g in grids], axis=1)
    wref = np.prod(tabs.wi[gidx], axis=1)
    nel = tabs.nel[lev, :d].astype(np.float64)
    x = (em[:, None, :] + tabs.xi[gidx][None, :, :]) / nel[:, None, :]
    w = wref[None, :] / np.prod(nel, axis=1)[:, None]
    return x, w


def _chunks(basis: HierarchicalBasis, ng: int):
    ne = basis.mesh.n_active
    step = max(1, _CHUNK_POINTS // (ng**basis.dim))
    for e0 in range(0, ne, step):
        yield e0, min(ne, e0 + step)


def _common(basis: HierarchicalBasis, inc: ElementIncidence, tabs: _Tables, e0: int, e1: int):
    mesh = basis.mesh
    em = np.zeros((mesh.n_active, 3), dtype=np.int64)
    em[:, : basis.dim] = mesh.element_multi
    return (e0, e1, mesh.element_levels, em, inc.ptr, inc.gid, inc.loc, basis.levels,
            tabs.data, tabs.offs, tabs.nl, tabs.ngs, tabs.pps)


def assemble_mass_gauss(
    basis: HierarchicalBasis,
    geometry: GeometryMap,
    stats: GaussStats | None = None,
) -> SparseMatrix:
    """Mass matrix by tensor Gauss quadrature with ``p+1`` nodes per direction on every element.

    Args:
        basis: Hierarchical basis (its mesh provides the elements).
        geometry: Geometry map providing ``c = |det J|``.
        stats: Optional counters, updated in place.

    Returns:
        Symmetric mass matrix in the same ordering as the weighted-quadrature one.
    """
    stats = GaussStats() if stats is None else stats
    t0 = time.perf_counter()
    inc = element_incidence(basis)
    cls = classify_basis_functions(basis)
    indptr, indices = overlap_pattern(basis, cls)
    values = np.zeros(indices.size)
    tabs = _Tables(basis, basis.degree + 1)
    counters = np.zeros(1, dtype=np.int64)
    base = _common(basis, inc, tabs, 0, 0)
    for e0, e1 in _chunks(basis, basis.degree + 1):
        x, w = _element_points(basis, tabs, e0, e1)
        c = geometry.jacobian_det(x.reshape(-1, basis.dim)).reshape(w.shape)
        stats.quad_evals += c.size
        _mass_kernel(e0, e1, *base[2:], np.ascontiguousarray(w * c), indptr, indices, values,
                     counters)
    stats.flops += int(counters[0])
    csr = sp.csr_matrix((values, indices, indptr), shape=(basis.size, basis.size))
    stats.t_formation += time.perf_counter() - t0
    return SparseMatrix(csr, basis.levels, basis.multi)


def assemble_rhs(
    basis: HierarchicalBasis,
    geometry: GeometryMap,
    f: TargetFunction,
    incidence: ElementIncidence | None = None,
) -> np.ndarray:
    """Load vector ``b_i = int f(F(x)) B_i(x) c(x) dx`` by element Gauss with ``p+1`` nodes.

    Args:
        basis: Hierarchical basis.
        geometry: Geometry map.
        f: Target function of physical points, shape ``(M, d) -> (M,)``.
        incidence: Precomputed element incidence.
    """
    inc = element_incidence(basis) if incidence is None else incidence
    tabs = _Tables(basis, basis.degree + 1)
    out = np.zeros(basis.size)
    base = _common(basis, inc, tabs, 0, 0)
    for e0, e1 in _chunks(basis, basis.degree + 1):
        x, w = _element_points(basis, tabs, e0, e1)
        flat = x.reshape(-1, basis.dim)
        c = geometry.jacobian_det(flat).reshape(w.shape)
        fv = np.asarray(f(geometry.forward(flat)), dtype=np.float64).reshape(w.shape)
        _rhs_kernel(e0, e1, *base[2:], np.ascontiguousarray(w * c * fv), out)
    return out


def l2_error_indicators(
    basis: HierarchicalBasis,
    geometry: GeometryMap,
    coefficients: np.ndarray,
    f: TargetFunction,
    incidence: ElementIncidence | None = None,
) -> np.ndarray:
    """Elementwise L2 errors ``eta_Q`` of ``u_h - f`` with ``p+2`` Gauss nodes per direction.

    Returns:
        One value per active element in canonical order; the squares sum to the
        squared global error.
    """
    inc = element_incidence(basis) if incidence is None else incidence
    ng = basis.degree + 2
    tabs = _Tables(basis, ng)
    coef = np.ascontiguousarray(coefficients, dtype=np.float64)
    if coef.shape != (basis.size,):
        raise ValueError(f"expected {basis.size} coefficients, got {coef.shape}")
    sq = np.zeros(basis.mesh.n_active)
    base = _common(basis, inc, tabs, 0, 0)
    for e0, e1 in _chunks(basis, ng):
        x, w = _element_points(basis, tabs, e0, e1)
        flat = x.reshape(-1, basis.dim)
        c = geometry.jacobian_det(flat).reshape(w.shape)
        fv = np.asarray(f(geometry.forward(flat)), dtype=np.float64).reshape(w.shape)
        _error_kernel(e0, e1, *base[2:], np.ascontiguousarray(w * c), fv, coef, sq)
    return np.sqrt(sq)


def l2_error(
    basis: HierarchicalBasis,
    geometry: GeometryMap,
    coefficients: np.ndarray,
    f: TargetFunction,
) -> float:
    """Global L2 error ``||u_h - f||`` on the physical domain."""
    eta = l2_error_indicators(basis, geometry, coefficients, f)
    return float(np.sqrt(np.sum(eta**2)))


def element_quadrature(
    basis: HierarchicalBasis, element: int, incidence: ElementIncidence | None = None
) -> ElementQuadrature:
    """Gauss rule and basis values of one active element (canonical position ``element``)."""
    inc = element_incidence(basis) if incidence is None else incidence
    tabs = _Tables(basis, basis.degree + 1)
    x, w = _element_points(basis, tabs, element, element + 1)
    nloc = int(inc.ptr[element + 1] - inc.ptr[element])
    G = int(np.prod(tabs.ngs))
    B = np.empty((nloc, G))
    base = _common(basis, inc, tabs, 0, 0)
    _local_values(element, base[2][element], base[3][element], *base[4:], B)
    mesh = basis.mesh
    ident = (int(mesh.element_levels[element]),
             tuple(int(v) for v in mesh.element_multi[element]))
    gids = inc.gid[inc.ptr[element]:inc.ptr[element + 1]].copy()
    return ElementQuadrature(ident, x[0], w[0], gids, B)
