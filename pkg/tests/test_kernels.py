"""Both kernel backends must agree index-for-index."""

import numpy as np
import pytest

from ptcomplete import kernels
from ptcomplete.kernels import BACKENDS

pytestmark = pytest.mark.skipif("numba" not in BACKENDS, reason="numba backend unavailable")


@pytest.fixture(params=range(5))
def cloud(request):
    r = np.random.default_rng(request.param)
    return r.standard_normal((int(r.integers(5, 120)), 3))


def test_active_backend_is_listed():
    assert kernels.BACKEND in BACKENDS


def test_fps(cloud):
    m = min(len(cloud), 17)
    a = BACKENDS["numpy"].fps(cloud, m, 2)
    b = BACKENDS["numba"].fps(cloud, m, 2)
    np.testing.assert_array_equal(a, b)


def test_knn_direct(cloud, rng):
    q = rng.standard_normal((9, 3))
    k = min(6, len(cloud))
    np.testing.assert_array_equal(BACKENDS["numpy"].knn_direct(q, cloud, k), BACKENDS["numba"].knn_direct(q, cloud, k))


def test_topk_rows_ties(rng):
    d = rng.integers(0, 4, size=(10, 12)).astype(np.float64)
    np.testing.assert_array_equal(BACKENDS["numpy"].topk_rows(d, 5), BACKENDS["numba"].topk_rows(d, 5))


def test_nn_search(cloud, rng):
    g = rng.standard_normal((33, 3))
    ia, da = BACKENDS["numpy"].nn_search(cloud, g)
    ib, db = BACKENDS["numba"].nn_search(cloud, g)
    np.testing.assert_array_equal(ia, ib)
    np.testing.assert_array_equal(da, db)


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_gather_max_and_scatter(rng, dtype):
    vals = rng.standard_normal((2, 11, 5)).astype(dtype)
    nbrs = rng.integers(0, 11, size=(2, 7, 3))
    oa, aa = BACKENDS["numpy"].gather_max(vals, nbrs)
    ob, ab = BACKENDS["numba"].gather_max(vals, nbrs)
    np.testing.assert_array_equal(oa, ob)
    np.testing.assert_array_equal(aa, ab)
    g = rng.standard_normal((2, 7, 5)).astype(dtype)
    np.testing.assert_allclose(
        BACKENDS["numpy"].scatter_max_grad(g, aa, 11), BACKENDS["numba"].scatter_max_grad(g, ab, 11), rtol=1e-6
    )


def test_scatter_add_rows(rng):
    idx = rng.integers(0, 6, size=20)
    src = rng.standard_normal((20, 4))
    ta, tb = np.zeros((6, 4)), np.zeros((6, 4))
    BACKENDS["numpy"].scatter_add_rows(ta, idx, src)
    BACKENDS["numba"].scatter_add_rows(tb, idx, src)
    np.testing.assert_allclose(ta, tb, rtol=1e-12)


def test_disable_flag_selects_numpy(tmp_path):
    import subprocess
    import sys

    env = {"PTCOMPLETE_DISABLE_NUMBA": "1", "PATH": "/usr/bin:/bin"}
    out = subprocess.run(
        [sys.executable, "-c", "from ptcomplete import kernels; print(kernels.BACKEND)"],
        env=env, capture_output=True, text=True, cwd=tmp_path, check=True,
    )
    assert out.stdout.strip() == "numpy"
