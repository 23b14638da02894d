"""Compiled kernels for hierarchical mesh topology.

Every kernel works on three directions. Spaces of lower dimension are padded
with trailing directions that have one element, one function and degree 0,
which leaves linear keys unchanged.
"""

from __future__ import annotations

import numba as nb
import numpy as np


@nb.njit(cache=True, inline="always")
def _lower_bound(a, lo, hi, value):
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < value:
            lo = mid + 1
        else:
            hi = mid
    return lo


@nb.njit(cache=True)
def element_incidence_kernel(elev, emulti, degs, fdims, fkeys, foff, fill,
                             eptr, egid, eloc):
    """Active functions nonzero on every active element.

    Args:
        elev: Level of each active element.
        emulti: Element multi-indices, shape ``(Ne, 3)``.
        degs: Per-direction degree (0 for padded directions).
        fdims: Function counts per level and direction, shape ``(L+1, 3)``.
        fkeys: Sorted active function keys, concatenated over levels.
        foff: Offsets of each level inside ``fkeys``.
        fill: If false, only ``eptr`` is filled with per-element counts.
        eptr: Row pointer, length ``Ne + 1``.
        egid: Output global function ids (only when ``fill``).
        eloc: Output local offsets of the function inside the ancestor span.
    """
    ne = elev.shape[0]
    cnt = 0
    for e in range(ne):
        if fill:
            cnt = eptr[e]
        else:
            eptr[e] = cnt
        lq = elev[e]
        for k in range(lq + 1):
            sh = lq - k
            a0 = emulti[e, 0] >> sh
            a1 = emulti[e, 1] >> sh
            a2 = emulti[e, 2] >> sh
            f1 = fdims[k, 1]
            f2 = fdims[k, 2]
            lo = foff[k]
            hi = foff[k + 1]
            for j0 in range(a0, a0 + degs[0] + 1):
                for j1 in range(a1, a1 + degs[1] + 1):
                    key0 = (j0 * f1 + j1) * f2 + a2
                    pos = _lower_bound(fkeys, lo, hi, key0)
                    while pos < hi and fkeys[pos] <= key0 + degs[2]:
                        if fill:
                            egid[cnt] = pos
                            eloc[cnt, 0] = j0 - a0
                            eloc[cnt, 1] = j1 - a1
                            eloc[cnt, 2] = fkeys[pos] - key0
                        cnt += 1
                        pos += 1
    if not fill:
        eptr[ne] = cnt


@nb.njit(cache=True)
def level_bounds_kernel(elev, eptr, egid, flev, nfun, emin, emax, fmin, fmax):
    """Per-element level range and per-function interaction levels.

    ``emin/emax`` receive the lowest and highest level of functions nonzero on
    each element. ``fmax[g]`` receives the highest ``emax`` over the active
    elements in the support of ``g`` and ``fmin[g]`` the lowest ``emin``.
    """
    ne = elev.shape[0]
    for g in range(nfun):
        fmin[g] = 1 << 30
        fmax[g] = -1
    for e in range(ne):
        lo = 1 << 30
        hi = -1
        for t in range(eptr[e], eptr[e + 1]):
            lv = flev[egid[t]]
            if lv < lo:
                lo = lv
            if lv > hi:
                hi = lv
        emin[e] = lo
        emax[e] = hi
        for t in range(eptr[e], eptr[e + 1]):
            g = egid[t]
            if hi > fmax[g]:
                fmax[g] = hi
            if lo < fmin[g]:
                fmin[g] = lo


@nb.njit(cache=True, inline="always")
def overlap_range(i, p, lev, nel_l, k, nel_k, nfun_k):
    """Level-``k`` indices whose support overlaps the level-``lev`` function ``i``.

    Overlap means an intersection of positive measure. Returns an inclusive
    ``(lo, hi)`` pair.
    """
    a = i - p
    if a < 0:
        a = 0
    b = i
    if b > nel_l - 1:
        b = nel_l - 1
    if k >= lev:
        s = 1 << (k - lev)
        lo = a * s
        hi = (b + 1) * s + p - 1
    else:
        s = 1 << (lev - k)
        lo = a // s
        hi = (b + 1 + s - 1) // s + p - 1
    if hi > nfun_k - 1:
        hi = nfun_k - 1
    return lo, hi


@nb.njit(cache=True)
def overlap_pattern_kernel(flev, fmulti, fmin, fmax, degs, edims, fdims, fkeys,
                           foff, fill, indptr, indices):
    """Sparsity pattern of all pairs of active functions with overlapping supports.

    Rows are global function ids. Columns come out sorted because levels are
    visited in increasing order and keys in increasing lexicographic order.
    """
    n = flev.shape[0]
    cnt = 0
    for g in range(n):
        if fill:
            cnt = indptr[g]
        else:
            indptr[g] = cnt
        lev = flev[g]
        for k in range(fmin[g], fmax[g] + 1):
            lo0, hi0 = overlap_range(fmulti[g, 0], degs[0], lev, edims[lev, 0],
                                     k, edims[k, 0], fdims[k, 0])
            lo1, hi1 = overlap_range(fmulti[g, 1], degs[1], lev, edims[lev, 1],
                                     k, edims[k, 1], fdims[k, 1])
            lo2, hi2 = overlap_range(fmulti[g, 2], degs[2], lev, edims[lev, 2],
                                     k, edims[k, 2], fdims[k, 2])
            f1 = fdims[k, 1]
            f2 = fdims[k, 2]
            lo = foff[k]
            hi = foff[k + 1]
            for j0 in range(lo0, hi0 + 1):
                for j1 in range(lo1, hi1 + 1):
                    key0 = (j0 * f1 + j1) * f2 + lo2
                    pos = _lower_bound(fkeys, lo, hi, key0)
                    while pos < hi and fkeys[pos] <= key0 + (hi2 - lo2):
                        if fill:
                            indices[cnt] = pos
                        cnt += 1
                        pos += 1
    if not fill:
        indptr[n] = cnt


@nb.njit(cache=True)
def expand_boxes_kernel(lo, hi, dims, out_count, out):
    """Linear keys of all cells in a list of boxes (``hi`` exclusive, 3 directions)."""
    cnt = 0
    for b in range(lo.shape[0]):
        for a0 in range(lo[b, 0], hi[b, 0]):
            for a1 in range(lo[b, 1], hi[b, 1]):
                base = (a0 * dims[1] + a1) * dims[2]
                for a2 in range(lo[b, 2], hi[b, 2]):
                    if out_count:
                        cnt += 1
                    else:
                        out[cnt] = base + a2
                        cnt += 1
    return cnt


def pad3(a: np.ndarray, fill: int) -> np.ndarray:
    """Pad the trailing axis of an integer array to length 3."""
    a = np.asarray(a, dtype=np.int64)
    d = a.shape[-1]
    if d == 3:
        return np.ascontiguousarray(a)
    pad = np.full(a.shape[:-1] + (3 - d,), fill, dtype=np.int64)
    return np.ascontiguousarray(np.concatenate([a, pad], axis=-1))


def expand_boxes(lo: np.ndarray, hi: np.ndarray, dims) -> np.ndarray:
    """Sorted unique linear keys of the union of boxes ``[lo, hi)``.

    Args:
        lo: Lower corners, shape ``(B, d)``.
        hi: Exclusive upper corners, shape ``(B, d)``.
        dims: Grid extent per direction.

    Returns:
        Sorted unique keys in C order.
    """
    lo3 = pad3(lo, 0)
    hi3 = pad3(hi, 1)
    dims3 = pad3(np.asarray(dims)[None, :], 1)[0]
    n = expand_boxes_kernel(lo3, hi3, dims3, True, np.empty(0, np.int64))
    out = np.empty(n, dtype=np.int64)
    expand_boxes_kernel(lo3, hi3, dims3, False, out)
    return np.unique(out)
