# Compiled implementations of the hot kernels. Contracts are documented
# in bloomseg._pykernels; arithmetic here mirrors the numpy fallback
# operation-for-operation (compiled with -ffp-contract=off) so both paths
# produce bit-identical results.

import numpy as np

cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

IMPLEMENTATION = "native"


def resample_affine(src, src_valid, double a, double b, double tx,
                    double c, double d, double ty,
                    Py_ssize_t out_h, Py_ssize_t out_w, bint bilinear):
    cdef cnp.ndarray[cnp.float64_t, ndim=3, mode="c"] s = \
        np.ascontiguousarray(src, dtype=np.float64)
    cdef Py_ssize_t h = s.shape[0]
    cdef Py_ssize_t w = s.shape[1]
    cdef Py_ssize_t nc = s.shape[2]

    cdef cnp.ndarray[cnp.uint8_t, ndim=2, mode="c"] sv
    cdef bint has_valid = src_valid is not None
    if has_valid:
        sv = np.ascontiguousarray(src_valid, dtype=np.uint8)
    else:
        sv = np.empty((0, 0), dtype=np.uint8)

    cdef cnp.ndarray[cnp.float64_t, ndim=3, mode="c"] out = \
        np.zeros((out_h, out_w, nc), dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=2, mode="c"] valid = \
        np.zeros((out_h, out_w), dtype=np.uint8)

    cdef Py_ssize_t yo, xo, k, x0i, y0i, x1i, y1i, xn, yn
    cdef double xs, ys, fx, fy, gx, gy, w00, w01, w10, w11
    cdef bint ok

    for yo in range(out_h):
        for xo in range(out_w):
            xs = a * (<double>xo) + b * (<double>yo) + tx
            ys = c * (<double>xo) + d * (<double>yo) + ty
            if xs < 0.0 or xs > (<double>(w - 1)) or ys < 0.0 or ys > (<double>(h - 1)):
                continue
            if bilinear:
                fx = xs - floor(xs)
                fy = ys - floor(ys)
                x0i = <Py_ssize_t>floor(xs)
                y0i = <Py_ssize_t>floor(ys)
                if x0i > w - 1:
                    x0i = w - 1
                if y0i > h - 1:
                    y0i = h - 1
                x1i = x0i + 1
                y1i = y0i + 1
                if x1i > w - 1:
                    x1i = w - 1
                if y1i > h - 1:
                    y1i = h - 1
                gx = 1.0 - fx
                gy = 1.0 - fy
                w00 = gx * gy
                w01 = fx * gy
                w10 = gx * fy
                w11 = fx * fy
                for k in range(nc):
                    out[yo, xo, k] = (s[y0i, x0i, k] * w00
                                      + s[y0i, x1i, k] * w01
                                      + s[y1i, x0i, k] * w10
                                      + s[y1i, x1i, k] * w11)
                ok = True
                if has_valid:
                    if w00 > 0.0 and sv[y0i, x0i] == 0:
                        ok = False
                    if w01 > 0.0 and sv[y0i, x1i] == 0:
                        ok = False
                    if w10 > 0.0 and sv[y1i, x0i] == 0:
                        ok = False
                    if w11 > 0.0 and sv[y1i, x1i] == 0:
                        ok = False
                valid[yo, xo] = 1 if ok else 0
            else:
                xn = <Py_ssize_t>floor(xs + 0.5)
                yn = <Py_ssize_t>floor(ys + 0.5)
                if xn > w - 1:
                    xn = w - 1
                if yn > h - 1:
                    yn = h - 1
                for k in range(nc):
                    out[yo, xo, k] = s[yn, xn, k]
                if has_valid:
                    valid[yo, xo] = 1 if sv[yn, xn] != 0 else 0
                else:
                    valid[yo, xo] = 1

    return out, valid.astype(bool)


def nearest_seed(colors, coords, seed_colors, seed_coords, double wsp):
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] col = \
        np.ascontiguousarray(colors, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] pos = \
        np.ascontiguousarray(coords, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] scol = \
        np.ascontiguousarray(seed_colors, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] spos = \
        np.ascontiguousarray(seed_coords, dtype=np.float64)

    cdef Py_ssize_t n = col.shape[0]
    cdef Py_ssize_t nc = col.shape[1]
    cdef Py_ssize_t ns = scol.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1, mode="c"] out = \
        np.empty(n, dtype=np.int64)

    cdef Py_ssize_t i, j, k, best
    cdef double cd2, sd2, dist, best_dist, diff, dx, dy

    for i in range(n):
        best = 0
        best_dist = 0.0
        for j in range(ns):
            diff = col[i, 0] - scol[j, 0]
            cd2 = diff * diff
            for k in range(1, nc):
                diff = col[i, k] - scol[j, k]
                cd2 = cd2 + diff * diff
            dx = pos[i, 0] - spos[j, 0]
            dy = pos[i, 1] - spos[j, 1]
            sd2 = dx * dx + dy * dy
            dist = cd2 + wsp * sd2
            if j == 0 or dist < best_dist:
                best_dist = dist
                best = j
        out[i] = best
    return out


def label_components(mask, int connectivity):
    cdef cnp.ndarray[cnp.uint8_t, ndim=2, mode="c"] m = \
        np.ascontiguousarray(np.asarray(mask, dtype=bool), dtype=np.uint8)
    cdef Py_ssize_t h = m.shape[0]
    cdef Py_ssize_t w = m.shape[1]
    cdef cnp.ndarray[cnp.int32_t, ndim=2, mode="c"] labels = \
        np.zeros((h, w), dtype=np.int32)
    # Union-find over provisional labels; capacity bound: one provisional
    # label per foreground pixel in the worst case, plus the 0 sentinel.
    cdef cnp.ndarray[cnp.int32_t, ndim=1, mode="c"] parent = \
        np.zeros(h * w + 1, dtype=np.int32)

    cdef cnp.int32_t* par = &parent[0]
    cdef Py_ssize_t y, x
    cdef int nxt = 0
    cdef int cur
    cdef bint eight = connectivity == 8

    for y in range(h):
        for x in range(w):
            if m[y, x] == 0:
                continue
            cur = 0
            # already-scanned neighbors: left, and the previous row
            if x > 0 and m[y, x - 1] != 0:
                cur = _merge(par, cur, labels[y, x - 1])
            if y > 0:
                if m[y - 1, x] != 0:
                    cur = _merge(par, cur, labels[y - 1, x])
                if eight:
                    if x > 0 and m[y - 1, x - 1] != 0:
                        cur = _merge(par, cur, labels[y - 1, x - 1])
                    if x < w - 1 and m[y - 1, x + 1] != 0:
                        cur = _merge(par, cur, labels[y - 1, x + 1])
            if cur == 0:
                nxt += 1
                par[nxt] = nxt
                cur = nxt
            labels[y, x] = cur

    # flatten and compact
    cdef cnp.ndarray[cnp.int32_t, ndim=1, mode="c"] remap = \
        np.zeros(nxt + 1, dtype=np.int32)
    cdef int count = 0
    cdef int i, r
    for i in range(1, nxt + 1):
        r = _find(par, i)
        if remap[r] == 0:
            count += 1
            remap[r] = count
        remap[i] = remap[r]
    for y in range(h):
        for x in range(w):
            if labels[y, x] != 0:
                labels[y, x] = remap[labels[y, x]]
    return labels, count


cdef inline int _find(cnp.int32_t* parent, int i):
    cdef int root = i
    while parent[root] != root:
        root = parent[root]
    cdef int j = i
    cdef int nxt
    while parent[j] != root:
        nxt = parent[j]
        parent[j] = root
        j = nxt
    return root


cdef inline int _merge(cnp.int32_t* parent, int cur, int neighbor):
    # cur == 0 means no label chosen yet for this pixel
    cdef int rn, rc
    if neighbor == 0:
        return cur
    rn = _find(parent, neighbor)
    if cur == 0:
        return rn
    rc = _find(parent, cur)
    if rc == rn:
        return rc
    if rc < rn:
        parent[rn] = rc
        return rc
    parent[rc] = rn
    return rn
