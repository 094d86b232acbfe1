import os
import subprocess
import sys

import numpy as np
import pytest
import scipy.linalg as sl

from pseudolab import _kernels as K


def _banded(n, kl, ku, seed=0):
    rng = np.random.default_rng(seed)
    A = np.zeros((n, n), complex)
    for d in range(-kl, ku + 1):
        A += np.diag(rng.standard_normal(n - abs(d)) + 1j * rng.standard_normal(n - abs(d)), d)
    return A


def test_to_band_layout():
    A = _banded(7, 2, 1)
    ab = K.to_band(A, 2, 1)
    assert ab.shape == (2 * 2 + 1 + 1, 7)
    assert np.allclose(ab[2 + 1], np.diag(A))
    assert K.dense_bandwidth(A) == (2, 1)


@pytest.mark.parametrize("backend", ["numpy", K.BACKEND])
def test_smin_band_matches_svd(backend):
    A = _banded(120, 1, 2, seed=3)
    s, v, _ = K.smin_band(K.to_band(A, 1, 2), 1, 2, backend=backend)
    ref = sl.svdvals(A)[-1]
    assert s == pytest.approx(ref, rel=1e-8)
    assert np.linalg.norm(A @ v) == pytest.approx(ref, rel=1e-6)


def test_smin_band_dd_matches_double_on_tame_matrix():
    A = _banded(80, 1, 1, seed=5) + 4 * np.eye(80)
    ab = K.to_band(A, 1, 1)
    abd = np.stack([ab.real, 0 * ab.real, ab.imag, 0 * ab.imag], -1)
    s, _, _ = K.smin_band_dd(abd, 1, 1)
    assert s == pytest.approx(sl.svdvals(A)[-1], rel=1e-9)


def test_legendre_log_series_small():
    from scipy.special import eval_legendre
    x = 1.7
    got = K.legendre_log_series(30, x)
    ref = np.log(eval_legendre(np.arange(31), x))
    assert np.allclose(got, ref, rtol=1e-12, atol=1e-12)


def test_marching_squares_circle():
    x = np.linspace(-2, 2, 81)
    X, Y = np.meshgrid(x, x)
    F = np.hypot(X, Y)
    seg, _ = K.marching_squares(F, 1.0)
    assert len(seg) > 0


def test_no_numba_env_selects_numpy():
    env = dict(os.environ, PSEUDOLAB_NO_NUMBA="1")
    out = subprocess.run([sys.executable, "-c", "from pseudolab import _kernels; print(_kernels.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    assert out.stdout.strip() == "numpy"
