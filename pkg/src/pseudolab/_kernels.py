"""Low-level kernels with an optional numba backend.

Every kernel here is written as a plain Python loop.  When numba is
importable and ``PSEUDOLAB_NO_NUMBA`` is unset, the loops are compiled with
``numba.njit``.  Otherwise the double-precision banded solver is routed to
LAPACK (``zgbtrf``/``zgbtrs``) and the remaining kernels run interpreted.

The double-double arithmetic follows the classical Dekker/Knuth error-free
transformations; a complex double-double number is carried as four floats
``(re_hi, re_lo, im_hi, im_lo)``.
"""
import logging
import os

import numpy as np
from scipy.linalg import lapack

logger = logging.getLogger(__name__)

_DISABLE = os.environ.get("PSEUDOLAB_NO_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLE:
        raise ImportError("numba disabled by PSEUDOLAB_NO_NUMBA")
    import numba

    njit = numba.njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised through the env flag
    HAVE_NUMBA = False

    def njit(pyfunc=None, **kwargs):
        """Null decorator used when numba is unavailable or disabled."""
        def wrap(func):
            return func
        return wrap if pyfunc is None else wrap(pyfunc)


BACKEND = "numba" if HAVE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# band storage helpers

def dense_bandwidth(A, tol=0.0):
    """Return (kl, ku) for a dense matrix, treating |a_ij| <= tol as zero."""
    nz = np.nonzero(np.abs(A) > tol)
    if len(nz[0]) == 0:
        return 0, 0
    d = nz[1] - nz[0]
    return int(max(0, -d.min())), int(max(0, d.max()))


def to_band(A, kl, ku):
    """LAPACK general band storage with kl extra rows for pivoting fill."""
    n = A.shape[0]
    ab = np.zeros((2 * kl + ku + 1, n), dtype=complex)
    for off in range(-kl, ku + 1):
        diag = np.diagonal(A, off)
        if off >= 0:
            ab[kl + ku - off, off:] = diag
        else:
            ab[kl + ku - off, :n + off] = diag
    return ab


# ---------------------------------------------------------------------------
# complex banded LU with partial pivoting (double precision)
#
# Storage is LAPACK's: A[i, j] lives at ab[kl + ku + i - j, j].

@njit(cache=True, nogil=True)
def _band_lu_nb(ab, kl, ku):
    n = ab.shape[1]
    kv = kl + ku
    piv = np.empty(n, np.int64)
    for k in range(n):
        last = min(k + kl, n - 1)
        p = k
        best = abs(ab[kv, k])
        for r in range(k + 1, last + 1):
            v = abs(ab[kv + r - k, k])
            if v > best:
                best = v
                p = r
        piv[k] = p
        jend = min(k + kv, n - 1)
        if p != k:
            for j in range(k, jend + 1):
                t = ab[kv + k - j, j]
                ab[kv + k - j, j] = ab[kv + p - j, j]
                ab[kv + p - j, j] = t
        pivot = ab[kv, k]
        if pivot == 0:
            continue
        for r in range(k + 1, last + 1):
            m = ab[kv + r - k, k] / pivot
            ab[kv + r - k, k] = m
            if m != 0:
                for j in range(k + 1, jend + 1):
                    ab[kv + r - j, j] -= m * ab[kv + k - j, j]
    return piv


@njit(cache=True, nogil=True)
def _band_solve_nb(ab, kl, ku, piv, b, adjoint):
    n = ab.shape[1]
    kv = kl + ku
    x = b.copy()
    if not adjoint:
        for k in range(n):
            p = piv[k]
            if p != k:
                t = x[k]
                x[k] = x[p]
                x[p] = t
            for r in range(k + 1, min(k + kl, n - 1) + 1):
                x[r] -= ab[kv + r - k, k] * x[k]
        for k in range(n - 1, -1, -1):
            s = x[k]
            for j in range(k + 1, min(k + kv, n - 1) + 1):
                s -= ab[kv + k - j, j] * x[j]
            x[k] = s / ab[kv, k]
    else:
        # U^H y = b (forward), then undo the elimination steps in reverse
        for k in range(n):
            s = x[k]
            for i in range(max(0, k - kv), k):
                s -= np.conj(ab[kv + i - k, k]) * x[i]
            x[k] = s / np.conj(ab[kv, k])
        for k in range(n - 1, -1, -1):
            s = x[k]
            for r in range(k + 1, min(k + kl, n - 1) + 1):
                s -= np.conj(ab[kv + r - k, k]) * x[r]
            x[k] = s
            p = piv[k]
            if p != k:
                t = x[k]
                x[k] = x[p]
                x[p] = t
    return x


@njit(cache=True, nogil=True)
def _smin_band_nb(ab, kl, ku, x0, tol, maxit):
    """Inverse iteration on (A^H A)^{-1} from a factored band matrix.

    Returns (sigma_min, right singular vector estimate, iterations).
    """
    piv = _band_lu_nb(ab, kl, ku)
    n = ab.shape[1]
    kv = kl + ku
    for k in range(n):
        if ab[kv, k] == 0:
            return 0.0, x0, 0
    x = x0 / np.sqrt(np.sum(np.abs(x0) ** 2))
    est_old = 0.0
    est = 0.0
    it = 0
    for it in range(1, maxit + 1):
        y = _band_solve_nb(ab, kl, ku, piv, x, True)
        est = np.sqrt(np.sum(np.abs(y) ** 2))
        w = _band_solve_nb(ab, kl, ku, piv, y, False)
        x = w / np.sqrt(np.sum(np.abs(w) ** 2))
        if abs(est - est_old) <= tol * est:
            break
        est_old = est
    return 1.0 / est, x, it


def _smin_band_lapack(ab, kl, ku, x0, tol, maxit):
    lu, ipiv, info = lapack.zgbtrf(ab, kl, ku)
    if info > 0:
        return 0.0, x0, 0
    x = x0 / np.linalg.norm(x0)
    est_old = 0.0
    est = 0.0
    it = 0
    for it in range(1, maxit + 1):
        y, _ = lapack.zgbtrs(lu, kl, ku, x, ipiv, trans=2)
        est = np.linalg.norm(y)
        w, _ = lapack.zgbtrs(lu, kl, ku, y, ipiv, trans=0)
        x = w / np.linalg.norm(w)
        if abs(est - est_old) <= tol * est:
            break
        est_old = est
    return 1.0 / est, x, it


def band_lu(ab, kl, ku):
    """Factor a band matrix in place (numba path); returns pivots."""
    return _band_lu_nb(ab, kl, ku)


def band_solve(ab, kl, ku, piv, b, adjoint=False):
    return _band_solve_nb(ab, kl, ku, piv, np.asarray(b, dtype=complex), adjoint)


def smin_band(ab, kl, ku, x0=None, tol=1e-10, maxit=300, backend=None):
    """Smallest singular value of a band matrix by inverse iteration.

    ``ab`` is consumed (factored in place on the numba path).
    """
    backend = backend or BACKEND
    n = ab.shape[1]
    if x0 is None:
        x0 = np.random.default_rng(12345).standard_normal(n) + 0j
    x0 = np.asarray(x0, dtype=complex)
    if backend == "numba" and HAVE_NUMBA:
        return _smin_band_nb(ab, kl, ku, x0, tol, maxit)
    return _smin_band_lapack(ab, kl, ku, x0, tol, maxit)


# ---------------------------------------------------------------------------
# double-double arithmetic

@njit(cache=True, inline="always")
def _two_sum(a, b):
    s = a + b
    bb = s - a
    return s, (a - (s - bb)) + (b - bb)


@njit(cache=True, inline="always")
def _fast_two_sum(a, b):
    s = a + b
    return s, b - (s - a)


@njit(cache=True, inline="always")
def _split(a):
    t = 134217729.0 * a
    hi = t - (t - a)
    return hi, a - hi


@njit(cache=True, inline="always")
def _two_prod(a, b):
    p = a * b
    ah, al = _split(a)
    bh, bl = _split(b)
    return p, ((ah * bh - p) + ah * bl + al * bh) + al * bl


@njit(cache=True, inline="always")
def dd_add(ah, al, bh, bl):
    s, e = _two_sum(ah, bh)
    t, f = _two_sum(al, bl)
    e += t
    s, e = _fast_two_sum(s, e)
    e += f
    return _fast_two_sum(s, e)


@njit(cache=True, inline="always")
def dd_mul(ah, al, bh, bl):
    p, e = _two_prod(ah, bh)
    e += ah * bl + al * bh
    return _fast_two_sum(p, e)


@njit(cache=True, inline="always")
def dd_div(ah, al, bh, bl):
    q1 = ah / bh
    ph, pl = dd_mul(q1, 0.0, bh, bl)
    rh, rl = dd_add(ah, al, -ph, -pl)
    q2 = rh / bh
    ph, pl = dd_mul(q2, 0.0, bh, bl)
    rh, rl = dd_add(rh, rl, -ph, -pl)
    q3 = rh / bh
    qh, ql = _fast_two_sum(q1, q2)
    return dd_add(qh, ql, q3, 0.0)


@njit(cache=True, inline="always")
def _cdd_mul(a, b):
    # a, b: 4-tuples (rh, rl, ih, il)
    t1h, t1l = dd_mul(a[0], a[1], b[0], b[1])
    t2h, t2l = dd_mul(a[2], a[3], b[2], b[3])
    t3h, t3l = dd_mul(a[0], a[1], b[2], b[3])
    t4h, t4l = dd_mul(a[2], a[3], b[0], b[1])
    rh, rl = dd_add(t1h, t1l, -t2h, -t2l)
    ih, il = dd_add(t3h, t3l, t4h, t4l)
    return rh, rl, ih, il


@njit(cache=True, inline="always")
def _cdd_sub(a, b):
    rh, rl = dd_add(a[0], a[1], -b[0], -b[1])
    ih, il = dd_add(a[2], a[3], -b[2], -b[3])
    return rh, rl, ih, il


@njit(cache=True, inline="always")
def _cdd_div(a, b):
    nh, nl = dd_mul(b[0], b[1], b[0], b[1])
    mh, ml = dd_mul(b[2], b[3], b[2], b[3])
    dh, dl = dd_add(nh, nl, mh, ml)
    num = _cdd_mul(a, (b[0], b[1], -b[2], -b[3]))
    rh, rl = dd_div(num[0], num[1], dh, dl)
    ih, il = dd_div(num[2], num[3], dh, dl)
    return rh, rl, ih, il


@njit(cache=True, inline="always")
def _ld(M, i, j):
    return (M[i, j, 0], M[i, j, 1], M[i, j, 2], M[i, j, 3])


@njit(cache=True, inline="always")
def _st(M, i, j, v):
    M[i, j, 0] = v[0]
    M[i, j, 1] = v[1]
    M[i, j, 2] = v[2]
    M[i, j, 3] = v[3]


@njit(cache=True, inline="always")
def _ldv(x, i):
    return (x[i, 0], x[i, 1], x[i, 2], x[i, 3])


@njit(cache=True, inline="always")
def _stv(x, i, v):
    x[i, 0] = v[0]
    x[i, 1] = v[1]
    x[i, 2] = v[2]
    x[i, 3] = v[3]


@njit(cache=True, nogil=True)
def _band_lu_dd(ab, kl, ku):
    """Same algorithm as the double kernel with entries of shape (..., 4)."""
    n = ab.shape[1]
    kv = kl + ku
    piv = np.empty(n, np.int64)
    for k in range(n):
        last = min(k + kl, n - 1)
        p = k
        best = abs(ab[kv, k, 0]) + abs(ab[kv, k, 2])
        for r in range(k + 1, last + 1):
            v = abs(ab[kv + r - k, k, 0]) + abs(ab[kv + r - k, k, 2])
            if v > best:
                best = v
                p = r
        piv[k] = p
        jend = min(k + kv, n - 1)
        if p != k:
            for j in range(k, jend + 1):
                for c in range(4):
                    t = ab[kv + k - j, j, c]
                    ab[kv + k - j, j, c] = ab[kv + p - j, j, c]
                    ab[kv + p - j, j, c] = t
        pivot = _ld(ab, kv, k)
        if pivot[0] == 0.0 and pivot[2] == 0.0:
            continue
        for r in range(k + 1, last + 1):
            m = _cdd_div(_ld(ab, kv + r - k, k), pivot)
            _st(ab, kv + r - k, k, m)
            if m[0] != 0.0 or m[2] != 0.0:
                for j in range(k + 1, jend + 1):
                    upd = _cdd_mul(m, _ld(ab, kv + k - j, j))
                    _st(ab, kv + r - j, j, _cdd_sub(_ld(ab, kv + r - j, j), upd))
    return piv


@njit(cache=True, nogil=True)
def _band_solve_dd(ab, kl, ku, piv, b, adjoint):
    n = ab.shape[1]
    kv = kl + ku
    x = b.copy()
    if not adjoint:
        for k in range(n):
            p = piv[k]
            if p != k:
                for c in range(4):
                    t = x[k, c]
                    x[k, c] = x[p, c]
                    x[p, c] = t
            xk = _ldv(x, k)
            for r in range(k + 1, min(k + kl, n - 1) + 1):
                _stv(x, r, _cdd_sub(_ldv(x, r), _cdd_mul(_ld(ab, kv + r - k, k), xk)))
        for k in range(n - 1, -1, -1):
            s = _ldv(x, k)
            for j in range(k + 1, min(k + kv, n - 1) + 1):
                s = _cdd_sub(s, _cdd_mul(_ld(ab, kv + k - j, j), _ldv(x, j)))
            _stv(x, k, _cdd_div(s, _ld(ab, kv, k)))
    else:
        for k in range(n):
            s = _ldv(x, k)
            for i in range(max(0, k - kv), k):
                a = _ld(ab, kv + i - k, k)
                s = _cdd_sub(s, _cdd_mul((a[0], a[1], -a[2], -a[3]), _ldv(x, i)))
            d = _ld(ab, kv, k)
            _stv(x, k, _cdd_div(s, (d[0], d[1], -d[2], -d[3])))
        for k in range(n - 1, -1, -1):
            s = _ldv(x, k)
            for r in range(k + 1, min(k + kl, n - 1) + 1):
                a = _ld(ab, kv + r - k, k)
                s = _cdd_sub(s, _cdd_mul((a[0], a[1], -a[2], -a[3]), _ldv(x, r)))
            _stv(x, k, s)
            p = piv[k]
            if p != k:
                for c in range(4):
                    t = x[k, c]
                    x[k, c] = x[p, c]
                    x[p, c] = t
    return x


@njit(cache=True, nogil=True)
def _dd_norm(x):
    # norm from the leading parts is accurate to double precision
    s = 0.0
    for i in range(x.shape[0]):
        s += (x[i, 0] + x[i, 1]) ** 2 + (x[i, 2] + x[i, 3]) ** 2
    return np.sqrt(s)


@njit(cache=True, nogil=True)
def _dd_scale(x, c):
    y = np.empty_like(x)
    for i in range(x.shape[0]):
        y[i, 0], y[i, 1] = dd_mul(x[i, 0], x[i, 1], c, 0.0)
        y[i, 2], y[i, 3] = dd_mul(x[i, 2], x[i, 3], c, 0.0)
    return y


@njit(cache=True, nogil=True)
def _smin_band_dd_impl(ab, kl, ku, x0, tol, maxit):
    piv = _band_lu_dd(ab, kl, ku)
    n = ab.shape[1]
    x = np.zeros((n, 4))
    nx = np.sqrt(np.sum(np.abs(x0) ** 2))
    for i in range(n):
        x[i, 0] = x0[i].real / nx
        x[i, 2] = x0[i].imag / nx
    est_old = 0.0
    est = 0.0
    it = 0
    for it in range(1, maxit + 1):
        y = _band_solve_dd(ab, kl, ku, piv, x, True)
        est = _dd_norm(y)
        w = _band_solve_dd(ab, kl, ku, piv, y, False)
        x = _dd_scale(w, 1.0 / _dd_norm(w))
        if abs(est - est_old) <= tol * est:
            break
        est_old = est
    out = np.empty(n, np.complex128)
    for i in range(n):
        out[i] = complex(x[i, 0] + x[i, 1], x[i, 2] + x[i, 3])
    return 1.0 / est, out, it


def smin_band_dd(ab_dd, kl, ku, x0=None, tol=1e-12, maxit=300):
    """Double-double variant of :func:`smin_band`.

    ``ab_dd`` has shape ``(2*kl+ku+1, n, 4)`` holding (re_hi, re_lo, im_hi,
    im_lo) in LAPACK band layout.
    """
    n = ab_dd.shape[1]
    if x0 is None:
        x0 = np.random.default_rng(12345).standard_normal(n) + 0j
    return _smin_band_dd_impl(ab_dd, kl, ku, np.asarray(x0, dtype=complex), tol, maxit)


def dd_from_float(a):
    """Split a float array into (hi, lo) pairs with lo = 0."""
    a = np.asarray(a, dtype=float)
    return np.stack([a, np.zeros_like(a)], axis=-1)


@njit(cache=True)
def dd_linspace_interior(a, b, n):
    """Interior nodes a + (k+1)(b-a)/(n+1), k < n, as (hi, lo) pairs."""
    out = np.empty((n, 2))
    wh, wl = dd_add(b, 0.0, -a, 0.0)
    dh, dl = dd_div(wh, wl, float(n + 1), 0.0)
    for k in range(n):
        th, tl = dd_mul(dh, dl, float(k + 1), 0.0)
        out[k, 0], out[k, 1] = dd_add(a, 0.0, th, tl)
    return out


@njit(cache=True)
def dd_poly_eval(coef_re, coef_im, xs):
    """Evaluate sum c_k x^k with double coefficients at dd points xs.

    Returns an (n, 4) complex double-double array.
    """
    n = xs.shape[0]
    out = np.zeros((n, 4))
    m = coef_re.shape[0]
    for i in range(n):
        rh, rl, ih, il = 0.0, 0.0, 0.0, 0.0
        for k in range(m - 1, -1, -1):
            rh, rl = dd_mul(rh, rl, xs[i, 0], xs[i, 1])
            ih, il = dd_mul(ih, il, xs[i, 0], xs[i, 1])
            rh, rl = dd_add(rh, rl, coef_re[k], 0.0)
            ih, il = dd_add(ih, il, coef_im[k], 0.0)
        out[i, 0], out[i, 1], out[i, 2], out[i, 3] = rh, rl, ih, il
    return out


# ---------------------------------------------------------------------------
# scaled Legendre recurrence

@njit(cache=True)
def legendre_log_series(kmax, x):
    """log P_k(x) for k = 0..kmax and x >= 1, renormalizing above 1e100."""
    out = np.empty(kmax + 1)
    out[0] = 0.0
    if kmax == 0:
        return out
    big = 1e100
    logbig = np.log(big)
    acc = 0.0
    pm1 = 1.0
    p = x
    out[1] = np.log(x)
    for k in range(1, kmax):
        pn = ((2 * k + 1) * x * p - k * pm1) / (k + 1)
        pm1 = p
        p = pn
        if p > big:
            p /= big
            pm1 /= big
            acc += logbig
        out[k + 1] = np.log(p) + acc
    return out


# ---------------------------------------------------------------------------
# marching squares

@njit(cache=True)
def _edge_point(v0, v1, level):
    d = v1 - v0
    if d == 0:
        return 0.5
    t = (level - v0) / d
    return min(max(t, 0.0), 1.0)


@njit(cache=True)
def marching_squares(F, level):
    """Contour segments of a 2-D field at ``level``.

    ``F[i, j]`` is sampled at row i (imaginary axis) and column j (real
    axis).  Returns ``seg`` of shape (m, 4) holding (j0, i0, j1, i1) in
    fractional index coordinates, and ``eid`` of shape (m, 2) with integer
    edge identifiers used to join segments into polylines.  Saddle cells are
    resolved with the cell-centre average.
    """
    ni, nj = F.shape
    nh = ni * (nj - 1)  # horizontal edges come first
    seg = np.empty((4 * ni * nj, 4))
    eid = np.empty((4 * ni * nj, 2), np.int64)
    m = 0
    for i in range(ni - 1):
        for j in range(nj - 1):
            a = F[i, j]
            b = F[i, j + 1]
            c = F[i + 1, j + 1]
            d = F[i + 1, j]
            code = 0
            if a >= level:
                code |= 1
            if b >= level:
                code |= 2
            if c >= level:
                code |= 4
            if d >= level:
                code |= 8
            if code == 0 or code == 15:
                continue
            # edges: 0 bottom (a-b), 1 right (b-c), 2 top (d-c), 3 left (a-d)
            px = np.empty(4)
            py = np.empty(4)
            ids = np.empty(4, np.int64)
            px[0] = j + _edge_point(a, b, level)
            py[0] = i
            ids[0] = i * (nj - 1) + j
            px[1] = j + 1
            py[1] = i + _edge_point(b, c, level)
            ids[1] = nh + i * nj + j + 1
            px[2] = j + _edge_point(d, c, level)
            py[2] = i + 1
            ids[2] = (i + 1) * (nj - 1) + j
            px[3] = j
            py[3] = i + _edge_point(a, d, level)
            ids[3] = nh + i * nj + j
            pairs = np.empty((2, 2), np.int64)
            npairs = 1
            if code == 1 or code == 14:
                pairs[0, 0], pairs[0, 1] = 3, 0
            elif code == 2 or code == 13:
                pairs[0, 0], pairs[0, 1] = 0, 1
            elif code == 3 or code == 12:
                pairs[0, 0], pairs[0, 1] = 3, 1
            elif code == 4 or code == 11:
                pairs[0, 0], pairs[0, 1] = 1, 2
            elif code == 6 or code == 9:
                pairs[0, 0], pairs[0, 1] = 0, 2
            elif code == 7 or code == 8:
                pairs[0, 0], pairs[0, 1] = 3, 2
            else:
                centre = 0.25 * (a + b + c + d)
                npairs = 2
                if (code == 5) == (centre >= level):
                    pairs[0, 0], pairs[0, 1] = 3, 2
                    pairs[1, 0], pairs[1, 1] = 0, 1
                else:
                    pairs[0, 0], pairs[0, 1] = 3, 0
                    pairs[1, 0], pairs[1, 1] = 1, 2
            for q in range(npairs):
                e0 = pairs[q, 0]
                e1 = pairs[q, 1]
                seg[m, 0] = px[e0]
                seg[m, 1] = py[e0]
                seg[m, 2] = px[e1]
                seg[m, 3] = py[e1]
                eid[m, 0] = ids[e0]
                eid[m, 1] = ids[e1]
                m += 1
    return seg[:m], eid[:m]
