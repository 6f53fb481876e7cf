"""numba-compiled kernels; same contracts as :mod:`numpy_backend`."""

import numpy as np
from numba import njit

NAME = "numba"


@njit(cache=True)
def _fps(pts, m, start):
    n = pts.shape[0]
    idx = np.empty(m, dtype=np.int64)
    mind = np.full(n, np.inf)
    cur = start
    for i in range(m):
        idx[i] = cur
        cx, cy, cz = pts[cur, 0], pts[cur, 1], pts[cur, 2]
        best = -np.inf
        nxt = 0
        for j in range(n):
            dx = pts[j, 0] - cx
            dy = pts[j, 1] - cy
            dz = pts[j, 2] - cz
            d = dx * dx + dy * dy + dz * dz
            if d < mind[j]:
                mind[j] = d
            if j == cur:
                mind[j] = -1.0
            if mind[j] > best:
                best = mind[j]
                nxt = j
        cur = nxt
    return idx


def fps(points, m, start):
    return _fps(np.ascontiguousarray(points, dtype=np.float64), m, start)


@njit(cache=True)
def _topk_rows(dist, k):
    q, r = dist.shape
    out = np.empty((q, k), dtype=np.int64)
    bd = np.empty(k, dtype=np.float64)
    bi = np.empty(k, dtype=np.int64)
    for i in range(q):
        filled = 0
        for j in range(r):
            d = dist[i, j]
            if filled == k and not d < bd[k - 1]:
                continue
            pos = filled if filled < k else k - 1
            # strict comparison keeps earlier (lower) indices ahead of ties
            while pos > 0 and d < bd[pos - 1]:
                if pos < k:
                    bd[pos] = bd[pos - 1]
                    bi[pos] = bi[pos - 1]
                pos -= 1
            bd[pos] = d
            bi[pos] = j
            if filled < k:
                filled += 1
        for t in range(k):
            out[i, t] = bi[t]
    return out


def topk_rows(dist, k):
    return _topk_rows(np.ascontiguousarray(dist, dtype=np.float64), k)


@njit(cache=True)
def _sqdist_direct(q, r):
    nq, nr, dim = q.shape[0], r.shape[0], q.shape[1]
    out = np.zeros((nq, nr), dtype=np.float64)
    for i in range(nq):
        for j in range(nr):
            acc = 0.0
            for d in range(dim):
                diff = q[i, d] - r[j, d]
                acc += diff * diff
            out[i, j] = acc
    return out


def knn_direct(queries, refs, k):
    q = np.ascontiguousarray(queries, dtype=np.float64)
    r = np.ascontiguousarray(refs, dtype=np.float64)
    return _topk_rows(_sqdist_direct(q, r), k)


@njit(cache=True)
def _nn_search(p, g):
    n, m = p.shape[0], g.shape[0]
    idx = np.empty(n, dtype=np.int64)
    sq = np.empty(n, dtype=np.float64)
    for i in range(n):
        best = np.inf
        bj = 0
        px, py, pz = p[i, 0], p[i, 1], p[i, 2]
        for j in range(m):
            dx = px - g[j, 0]
            dy = py - g[j, 1]
            dz = pz - g[j, 2]
            d = dx * dx + dy * dy + dz * dz
            if d < best:
                best = d
                bj = j
        idx[i] = bj
        sq[i] = best
    return idx, sq


def nn_search(points, refs):
    return _nn_search(
        np.ascontiguousarray(points, dtype=np.float64), np.ascontiguousarray(refs, dtype=np.float64)
    )


@njit(cache=True)
def _gather_max(values, neighbors):
    B, Q, K = neighbors.shape
    C = values.shape[2]
    out = np.empty((B, Q, C), dtype=values.dtype)
    arg = np.empty((B, Q, C), dtype=np.int64)
    for b in range(B):
        for q in range(Q):
            j0 = neighbors[b, q, 0]
            for c in range(C):
                out[b, q, c] = values[b, j0, c]
                arg[b, q, c] = j0
            for t in range(1, K):
                j = neighbors[b, q, t]
                for c in range(C):
                    v = values[b, j, c]
                    if v > out[b, q, c]:
                        out[b, q, c] = v
                        arg[b, q, c] = j
    return out, arg


def gather_max(values, neighbors):
    return _gather_max(values, neighbors)


@njit(cache=True)
def _scatter_max_grad(grad, arg, n):
    B, Q, C = grad.shape
    out = np.zeros((B, n, C), dtype=grad.dtype)
    for b in range(B):
        for q in range(Q):
            for c in range(C):
                out[b, arg[b, q, c], c] += grad[b, q, c]
    return out


def scatter_max_grad(grad, arg, n):
    return _scatter_max_grad(grad, arg, n)


@njit(cache=True)
def _scatter_add_rows(target, idx, src):
    w = target.shape[1]
    for i in range(idx.shape[0]):
        r = idx[i]
        for c in range(w):
            target[r, c] += src[i, c]


def scatter_add_rows(target, idx, src):
    _scatter_add_rows(target, np.ascontiguousarray(idx, dtype=np.int64), np.ascontiguousarray(src))
