"""Pure-numpy reference kernels.

Selected when ``PTCOMPLETE_DISABLE_NUMBA=1``. Results are index-identical to
the numba kernels: squared distances are formed as ``dx*dx + dy*dy + dz*dz``
in float64 in both backends, and every tie goes to the lowest index.
"""

import numpy as np

NAME = "numpy"


def _sqdist_direct(queries, refs):
    q = np.asarray(queries, dtype=np.float64)
    r = np.asarray(refs, dtype=np.float64)
    out = np.zeros((q.shape[0], r.shape[0]), dtype=np.float64)
    for d in range(q.shape[1]):
        diff = q[:, d, None] - r[None, :, d]
        out += diff * diff
    return out


def fps(points, m, start):
    pts = np.asarray(points, dtype=np.float64)
    n = pts.shape[0]
    idx = np.empty(m, dtype=np.int64)
    mind = np.full(n, np.inf)
    cur = start
    for i in range(m):
        idx[i] = cur
        diff = pts - pts[cur]
        d = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1] + diff[:, 2] * diff[:, 2]
        np.minimum(mind, d, out=mind)
        mind[cur] = -1.0
        cur = int(np.argmax(mind))
    return idx


def topk_rows(dist, k):
    return np.argsort(dist, axis=1, kind="stable")[:, :k].astype(np.int64)


def knn_direct(queries, refs, k):
    return topk_rows(_sqdist_direct(queries, refs), k)


def nn_search(points, refs):
    """Nearest reference per point; returns (index, squared distance)."""
    n = points.shape[0]
    idx = np.empty(n, dtype=np.int64)
    sq = np.empty(n, dtype=np.float64)
    chunk = max(1, 2_000_000 // max(1, refs.shape[0]))
    for s in range(0, n, chunk):
        d = _sqdist_direct(points[s:s + chunk], refs)
        j = np.argmin(d, axis=1)
        idx[s:s + chunk] = j
        sq[s:s + chunk] = d[np.arange(d.shape[0]), j]
    return idx, sq


def gather_max(values, neighbors):
    B = values.shape[0]
    g = values[np.arange(B)[:, None, None], neighbors]  # B,Q,k,C
    j = np.argmax(g, axis=2)
    out = np.take_along_axis(g, j[:, :, None, :], axis=2)[:, :, 0, :]
    arg = np.take_along_axis(neighbors, j, axis=2)
    return np.ascontiguousarray(out), arg.astype(np.int64)


def scatter_max_grad(grad, arg, n):
    B, Q, C = grad.shape
    out = np.zeros((B, n, C), dtype=grad.dtype)
    np.add.at(out, (np.arange(B)[:, None, None], arg, np.arange(C)[None, None, :]), grad)
    return out


def scatter_add_rows(target, idx, src):
    np.add.at(target, idx, src)
