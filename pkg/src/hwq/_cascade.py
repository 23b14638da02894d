"""Compiled sum-factorization kernels.

Each kernel handles one block: test functions of level ``l`` in ``F^n``
against active trial functions of level ``m``, on the level-``n`` points.
Tests are sorted lexicographically, so tests that share their leading
indices are contiguous. The partial sums of a shared prefix are computed
once, over the union of the point ranges its tests need, and reused by every
test of the group.

Results are written straight into the values array of a precomputed CSR
pattern. ``stats`` collects ``[flops, writes, errors]``; an error is a
candidate entry missing from the pattern or written twice.
"""

from __future__ import annotations

import numba as nb
import numpy as np

from ._topology import _lower_bound


@nb.njit(cache=True, inline="always")
def _emit(row, key0, vals, mkeys, moff, indptr, indices, data, written, stats):
    """Store ``vals[t]`` at the entry of trial key ``key0 + t`` if that trial is active."""
    nm = mkeys.shape[0]
    nlast = vals.shape[0]
    pos = _lower_bound(mkeys, 0, nm, key0)
    rs = indptr[row]
    re = indptr[row + 1]
    rp = -1
    while pos < nm and mkeys[pos] < key0 + nlast:
        gid = moff + pos
        if rp < 0:
            rp = _lower_bound(indices, rs, re, gid)
        else:
            while rp < re and indices[rp] < gid:
                rp += 1
        if rp >= re or indices[rp] != gid:
            stats[2] += 1
        else:
            if written[rp]:
                stats[2] += 1
            data[rp] = vals[mkeys[pos] - key0]
            written[rp] = 1
            stats[1] += 1
        pos += 1


@nb.njit(cache=True)
def cascade_1d(tests, rows, indptr, indices, data, written,
               W1s, W1l, W1v, tf1, tv1, lo1, hi1,
               ckeys, cvals, mkeys, moff, stats):
    nt = tests.shape[0]
    np1 = tv1.shape[1]
    nck = ckeys.shape[0]
    for t in range(nt):
        i1 = tests[t, 0]
        qs = W1s[i1]
        nq = W1l[i1]
        l1 = lo1[i1]
        n1 = hi1[i1] - l1 + 1
        acc = np.zeros(n1)
        pos = _lower_bound(ckeys, 0, nck, qs)
        for a in range(nq):
            q = qs + a
            c = 0.0
            if pos < nck and ckeys[pos] == q:
                c = cvals[pos]
                pos += 1
            wc = W1v[i1, a] * c
            f0 = tf1[q]
            for s in range(np1):
                jj = f0 + s - l1
                if jj >= 0 and jj < n1:
                    acc[jj] += wc * tv1[q, s]
                    stats[0] += 2
        _emit(rows[t], l1, acc, mkeys, moff, indptr, indices, data, written, stats)


@nb.njit(cache=True)
def cascade_2d(tests, rows, indptr, indices, data, written,
               W1s, W1l, W1v, W2s, W2l, W2v,
               tf1, tv1, tf2, tv2, lo1, hi1, lo2, hi2,
               ckeys, cvals, R, mkeys, moff, M, stats):
    nt = tests.shape[0]
    np1 = tv1.shape[1]
    np2 = tv2.shape[1]
    nck = ckeys.shape[0]
    R2 = R[1]
    M2 = M[1]
    a = 0
    while a < nt:
        i1 = tests[a, 0]
        h0 = W2s[tests[a, 1]]
        h1 = h0 + W2l[tests[a, 1]]
        b = a + 1
        while b < nt and tests[b, 0] == i1:
            s = W2s[tests[b, 1]]
            if s > h1:
                break
            e = s + W2l[tests[b, 1]]
            if e > h1:
                h1 = e
            b += 1
        H = h1 - h0
        qs1 = W1s[i1]
        nq1 = W1l[i1]
        l1 = lo1[i1]
        n1 = hi1[i1] - l1 + 1
        cb = np.zeros((nq1, H))
        for a1 in range(nq1):
            base = (qs1 + a1) * R2
            pos = _lower_bound(ckeys, 0, nck, base + h0)
            while pos < nck and ckeys[pos] < base + h1:
                cb[a1, ckeys[pos] - base - h0] = cvals[pos]
                pos += 1
        i1buf = np.zeros((n1, H))
        for a1 in range(nq1):
            q1 = qs1 + a1
            w = W1v[i1, a1]
            f0 = tf1[q1]
            for s in range(np1):
                jj = f0 + s - l1
                if jj >= 0 and jj < n1:
                    c = w * tv1[q1, s]
                    for h in range(H):
                        i1buf[jj, h] += c * cb[a1, h]
                    stats[0] += 2 * H
        for t in range(a, b):
            i2 = tests[t, 1]
            qs2 = W2s[i2]
            nq2 = W2l[i2]
            l2 = lo2[i2]
            n2 = hi2[i2] - l2 + 1
            i2buf = np.zeros((n1, n2))
            for a2 in range(nq2):
                q2 = qs2 + a2
                w = W2v[i2, a2]
                f0 = tf2[q2]
                hq = q2 - h0
                for s in range(np2):
                    jj2 = f0 + s - l2
                    if jj2 >= 0 and jj2 < n2:
                        c = w * tv2[q2, s]
                        for jj1 in range(n1):
                            i2buf[jj1, jj2] += c * i1buf[jj1, hq]
                        stats[0] += 2 * n1
            for jj1 in range(n1):
                key0 = (l1 + jj1) * M2 + l2
                _emit(rows[t], key0, i2buf[jj1], mkeys, moff, indptr, indices, data,
                      written, stats)
        a = b


@nb.njit(cache=True)
def cascade_3d(tests, rows, indptr, indices, data, written,
               W1s, W1l, W1v, W2s, W2l, W2v, W3s, W3l, W3v,
               tf1, tv1, tf2, tv2, tf3, tv3,
               lo1, hi1, lo2, hi2, lo3, hi3,
               ckeys, cvals, R, mkeys, moff, M, stats):
    nt = tests.shape[0]
    np1 = tv1.shape[1]
    np2 = tv2.shape[1]
    np3 = tv3.shape[1]
    nck = ckeys.shape[0]
    R2 = R[1]
    R3 = R[2]
    M2 = M[1]
    M3 = M[2]
    big = 1 << 60
    a = 0
    while a < nt:
        i1 = tests[a, 0]
        b = a
        while b < nt and tests[b, 0] == i1:
            b += 1
        # rows over q2, each with the q3 interval needed by some test
        q2lo = big
        q2hi = -1
        for t in range(a, b):
            s = W2s[tests[t, 1]]
            e = s + W2l[tests[t, 1]]
            if s < q2lo:
                q2lo = s
            if e > q2hi:
                q2hi = e
        H2 = q2hi - q2lo
        rlo = np.full(H2, big, dtype=np.int64)
        rhi = np.full(H2, -1, dtype=np.int64)
        for t in range(a, b):
            i2 = tests[t, 1]
            i3 = tests[t, 2]
            s3 = W3s[i3]
            e3 = s3 + W3l[i3]
            for q2 in range(W2s[i2], W2s[i2] + W2l[i2]):
                h = q2 - q2lo
                if s3 < rlo[h]:
                    rlo[h] = s3
                if e3 > rhi[h]:
                    rhi[h] = e3
        off = np.zeros(H2 + 1, dtype=np.int64)
        for h in range(H2):
            ln = rhi[h] - rlo[h]
            if ln < 0:
                ln = 0
            off[h + 1] = off[h] + ln
        tot = off[H2]
        qs1 = W1s[i1]
        nq1 = W1l[i1]
        l1 = lo1[i1]
        n1 = hi1[i1] - l1 + 1
        cb = np.zeros((nq1, tot))
        for a1 in range(nq1):
            q1 = qs1 + a1
            for h in range(H2):
                if off[h + 1] > off[h]:
                    base = (q1 * R2 + q2lo + h) * R3
                    pos = _lower_bound(ckeys, 0, nck, base + rlo[h])
                    while pos < nck and ckeys[pos] < base + rhi[h]:
                        cb[a1, off[h] + ckeys[pos] - base - rlo[h]] = cvals[pos]
                        pos += 1
        i1buf = np.zeros((n1, tot))
        for a1 in range(nq1):
            q1 = qs1 + a1
            w = W1v[i1, a1]
            f0 = tf1[q1]
            for s in range(np1):
                jj = f0 + s - l1
                if jj >= 0 and jj < n1:
                    c = w * tv1[q1, s]
                    for x in range(tot):
                        i1buf[jj, x] += c * cb[a1, x]
                    stats[0] += 2 * tot
        c0 = a
        while c0 < b:
            i2 = tests[c0, 1]
            e0 = c0
            while e0 < b and tests[e0, 1] == i2:
                e0 += 1
            qs2 = W2s[i2]
            nq2 = W2l[i2]
            l2 = lo2[i2]
            n2 = hi2[i2] - l2 + 1
            u = c0
            while u < e0:
                h3lo = W3s[tests[u, 2]]
                h3hi = h3lo + W3l[tests[u, 2]]
                v = u + 1
                while v < e0:
                    s = W3s[tests[v, 2]]
                    if s > h3hi:
                        break
                    e3 = s + W3l[tests[v, 2]]
                    if e3 > h3hi:
                        h3hi = e3
                    v += 1
                H3 = h3hi - h3lo
                i2buf = np.zeros((n1, n2, H3))
                for a2 in range(nq2):
                    q2 = qs2 + a2
                    w = W2v[i2, a2]
                    f0 = tf2[q2]
                    h = q2 - q2lo
                    col0 = off[h] - rlo[h] + h3lo
                    for s in range(np2):
                        jj2 = f0 + s - l2
                        if jj2 >= 0 and jj2 < n2:
                            c = w * tv2[q2, s]
                            for jj1 in range(n1):
                                for x in range(H3):
                                    i2buf[jj1, jj2, x] += c * i1buf[jj1, col0 + x]
                            stats[0] += 2 * n1 * H3
                for t in range(u, v):
                    i3 = tests[t, 2]
                    qs3 = W3s[i3]
                    nq3 = W3l[i3]
                    l3 = lo3[i3]
                    n3 = hi3[i3] - l3 + 1
                    i3buf = np.zeros((n1, n2, n3))
                    for a3 in range(nq3):
                        q3 = qs3 + a3
                        w = W3v[i3, a3]
                        f0 = tf3[q3]
                        x = q3 - h3lo
                        for s in range(np3):
                            jj3 = f0 + s - l3
                            if jj3 >= 0 and jj3 < n3:
                                c = w * tv3[q3, s]
                                for jj1 in range(n1):
                                    for jj2 in range(n2):
                                        i3buf[jj1, jj2, jj3] += c * i2buf[jj1, jj2, x]
                                stats[0] += 2 * n1 * n2
                    for jj1 in range(n1):
                        for jj2 in range(n2):
                            key0 = ((l1 + jj1) * M2 + l2 + jj2) * M3 + l3
                            _emit(rows[t], key0, i3buf[jj1, jj2], mkeys, moff, indptr,
                                  indices, data, written, stats)
                u = v
            c0 = e0
        a = b
