"""Resolvent norms, pseudospectrum grids, contours and eigensystems."""
from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sl
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import brentq
from scipy.spatial.distance import directed_hausdorff

from . import _kernels
from .discretize import DiscretizedOperator, UnsupportedCoefficients, grid_band_dd

DEFAULT_CEILING = 1e16
EXTENDED_CEILING = 1e28
DENSE_LIMIT = 600
SMALL_LIMIT = 64
DEFAULT_LEVELS = tuple(10.0 ** -k for k in range(1, 9))


class ResolventError(RuntimeError):
    pass


class EmptyLevel(ResolventError):
    pass


class ConvergenceFailure(ResolventError):
    pass


class InsufficientData(ValueError):
    pass


def _hnorm(op: DiscretizedOperator) -> float:
    cached = getattr(op, "_hnorm_cache", None)
    if cached is None:
        cached = op.norm_estimate
        object.__setattr__(op, "_hnorm_cache", cached)
    return cached


def _band_storage(op):
    cached = getattr(op, "_band_cache", None)
    if cached is None:
        kl, ku = op.band
        cached = _kernels.to_band(op.matrix, kl, ku)
        object.__setattr__(op, "_band_cache", cached)
    return cached


def _choose_method(op, method):
    if method != "auto":
        return method
    kl, ku = op.band
    if op.N <= SMALL_LIMIT:
        return "svd"
    if kl + ku <= 16:
        return "band"
    if op.N <= DENSE_LIMIT:
        return "svd"
    return "lu"


def smallest_singular(op: DiscretizedOperator, z: complex, *, method: str = "auto",
                      x0=None, tol: float = 1e-10, maxit: int = 300):
    """sigma_min(H - z I) and a right singular vector estimate.

    Methods: ``svd`` (dense), ``band`` (banded LU + inverse iteration on the
    Gram matrix), ``lu`` (dense LU + inverse iteration), ``extended``
    (double-double banded inverse iteration, grid models only).
    """
    z = complex(z)
    method = _choose_method(op, method)
    N = op.N
    if method == "svd":
        A = op.matrix - z * np.eye(N)
        try:
            U, s, Vh = sl.svd(A, lapack_driver="gesdd")
        except (np.linalg.LinAlgError, ValueError):
            U, s, Vh = sl.svd(A, lapack_driver="gesvd")
        return float(s[-1]), Vh[-1].conj()
    if method == "band":
        kl, ku = op.band
        ab = _band_storage(op).copy()
        ab[kl + ku] -= z
        s, v, _ = _kernels.smin_band(ab, kl, ku, x0, tol, maxit)
        return float(s), v
    if method == "extended":
        ab = grid_band_dd(op, z)
        s, v, _ = _kernels.smin_band_dd(ab, 1, 1, x0, min(tol, 1e-12), maxit)
        return float(s), v
    if method == "lu":
        A = op.matrix - z * np.eye(N)
        lu, piv = sl.lu_factor(A, check_finite=False)
        x = np.random.default_rng(12345).standard_normal(N) + 0j if x0 is None else np.asarray(x0, complex)
        x = x / np.linalg.norm(x)
        est_old = 0.0
        for _ in range(maxit):
            y = sl.lu_solve((lu, piv), x, trans=2)
            est = np.linalg.norm(y)
            w = sl.lu_solve((lu, piv), y)
            x = w / np.linalg.norm(w)
            if abs(est - est_old) <= tol * est:
                break
            est_old = est
        return float(1.0 / est), x
    raise ValueError(f"unknown method {method!r}")


def resolvent_norm(op: DiscretizedOperator, z: complex, *, ceiling: float | None = None,
                   precision: str = "double", method: str = "auto", return_vector: bool = False,
                   x0=None):
    """||(H - z)^{-1}|| = 1 / sigma_min(H - z).

    Parameters
    ----------
    precision : {'double', 'extended', 'auto'}
        ``extended`` factors the shifted grid matrix in double-double
        arithmetic; its default ceiling is 1e28 instead of 1e16.  ``auto``
        switches to extended when the double result is within 1e4 of the
        double-precision floor and the operator supports it.
    ceiling : float, optional
        Returned when sigma_min falls below ||H|| / ceiling.
    """
    hn = _hnorm(op)
    if precision == "extended":
        ceil = EXTENDED_CEILING if ceiling is None else ceiling
        s, v = smallest_singular(op, z, method="extended", x0=x0)
        floor = hn * 1e-30
    else:
        ceil = DEFAULT_CEILING if ceiling is None else ceiling
        s, v = smallest_singular(op, z, method=method, x0=x0)
        floor = hn * 1e-16
        if precision == "auto" and s < hn * 1e-12:
            try:
                return resolvent_norm(op, z, ceiling=ceiling, precision="extended",
                                      return_vector=return_vector, x0=v)
            except UnsupportedCoefficients:
                pass
    if s <= floor or s <= 0 or 1.0 / s > ceil:
        val = float(ceil)
    else:
        val = 1.0 / s
    return (val, v) if return_vector else val


# ---------------------------------------------------------------------------
# grids

@dataclass
class PseudospectrumGrid:
    """log10 resolvent norms on a rectangle of the complex plane.

    ``values[i, j]`` belongs to ``re[j] + 1j * im[i]``.
    """
    region: tuple
    resolution: tuple
    values: np.ndarray
    eigenvalues: np.ndarray | None
    ceiling: float = DEFAULT_CEILING
    meta: dict = field(default_factory=dict)

    @property
    def re(self):
        return np.linspace(self.region[0], self.region[1], self.resolution[0])

    @property
    def im(self):
        return np.linspace(self.region[2], self.region[3], self.resolution[1])

    @property
    def nodes(self):
        R, I = np.meshgrid(self.re, self.im)
        return R + 1j * I

    def interpolate(self, z):
        """Bilinear interpolation of log10 ||R(z)|| inside the region."""
        f = RegularGridInterpolator((self.im, self.re), self.values, method="linear",
                                    bounds_error=False, fill_value=np.nan)
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        return f(np.column_stack([z.imag, z.real]))

    def to_csv(self, path):
        Z = self.nodes
        data = np.column_stack([Z.real.ravel(), Z.imag.ravel(), self.values.ravel()])
        np.savetxt(path, data, delimiter=",", header="re,im,log10_resnorm", comments="",
                   fmt="%.17g")
        return str(path)

    def metadata(self):
        meta = dict(self.meta)
        meta.update({"region": list(self.region), "resolution": list(self.resolution),
                     "ceiling": self.ceiling,
                     "eigenvalues": None if self.eigenvalues is None else
                     [[float(e.real), float(e.imag)] for e in self.eigenvalues]})
        return meta

    def write_metadata(self, path):
        with open(path, "w") as fh:
            json.dump(self.metadata(), fh, indent=1)
        return str(path)


def _row_sweep(op, re, y, ceiling, precision, method):
    out = np.empty(len(re))
    v = None
    warm = _choose_method(op, method) in ("band", "lu") or precision == "extended"
    for j, x in enumerate(re):
        val, vec = resolvent_norm(op, complex(x, y), ceiling=ceiling, precision=precision,
                                  method=method, return_vector=True, x0=v if warm else None)
        out[j] = math.log10(val)
        v = vec
    return out


def pseudospectrum_grid(op: DiscretizedOperator, region, resolution, *, ceiling=None,
                        precision="double", method="auto", workers=None,
                        eigenvalues=True) -> PseudospectrumGrid:
    """Evaluate log10 ||(H - z)^{-1}|| on a rectangular grid.

    Rows of constant imaginary part are swept left to right with the
    singular vector of the previous node as the starting guess; rows are
    distributed over a thread pool and reassembled in order.
    """
    re_min, re_max, im_min, im_max = map(float, region)
    n_re, n_im = map(int, resolution)
    if n_re < 2 or n_im < 2:
        raise ValueError("resolution must be at least 2 x 2")
    if not (re_max > re_min and im_max > im_min):
        raise ValueError("degenerate region")
    re = np.linspace(re_min, re_max, n_re)
    im = np.linspace(im_min, im_max, n_im)
    workers = workers or os.cpu_count() or 1
    ceil = ceiling if ceiling is not None else (EXTENDED_CEILING if precision == "extended"
                                                else DEFAULT_CEILING)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(lambda y: _row_sweep(op, re, y, ceil, precision, method), im))
    else:
        rows = [_row_sweep(op, re, y, ceil, precision, method) for y in im]
    ev = np.linalg.eigvals(op.matrix) if eigenvalues else None
    meta = {"basis": op.basis, "N": op.N, "model": op.model_id, "precision": precision,
            "method": _choose_method(op, method) if precision != "extended" else "extended"}
    if op.interval is not None:
        meta["interval"] = list(op.interval)
    return PseudospectrumGrid((re_min, re_max, im_min, im_max), (n_re, n_im), np.array(rows),
                              ev, ceil, meta)


def grid_from_function(f, region, resolution, eigenvalues=None):
    """Grid from an explicit function of z returning log10 norms (for tests)."""
    re = np.linspace(region[0], region[1], resolution[0])
    im = np.linspace(region[2], region[3], resolution[1])
    R, I = np.meshgrid(re, im)
    return PseudospectrumGrid(tuple(region), tuple(resolution), np.vectorize(f)(R + 1j * I),
                              eigenvalues)


# ---------------------------------------------------------------------------
# contours

def _join_segments(seg, eid):
    """Chain marching-squares segments sharing edge ids into polylines."""
    from collections import defaultdict
    adj = defaultdict(list)
    for k, (a, b) in enumerate(eid):
        adj[a].append(k)
        adj[b].append(k)
    used = np.zeros(len(seg), bool)
    lines = []

    def walk(k, start_edge):
        pts_e = [start_edge]
        pts = []
        cur, edge = k, start_edge
        while True:
            used[cur] = True
            a, b = eid[cur]
            if edge == a:
                pts.append((seg[cur, 0], seg[cur, 1]))
                nxt_edge = b
                endpoint = (seg[cur, 2], seg[cur, 3])
            else:
                pts.append((seg[cur, 2], seg[cur, 3]))
                nxt_edge = a
                endpoint = (seg[cur, 0], seg[cur, 1])
            cand = [c for c in adj[nxt_edge] if not used[c]]
            if not cand:
                pts.append(endpoint)
                return pts, nxt_edge
            cur, edge = cand[0], nxt_edge
    # open chains first: start at edges used by a single segment
    for e, ks in adj.items():
        if len(ks) == 1 and not used[ks[0]]:
            pts, _ = walk(ks[0], e)
            lines.append(np.array(pts))
    for k in range(len(seg)):
        if not used[k]:
            pts, _ = walk(k, eid[k, 0])
            lines.append(np.array(pts))
    return lines


def contour_extract(grid: PseudospectrumGrid, levels=DEFAULT_LEVELS, *, strict=True):
    """Polylines of the boundaries of sigma_eps for each eps in ``levels``.

    Returns a dict mapping eps to a list of complex arrays.  Each polyline is
    closed (first point repeated) or ends on the grid boundary.
    """
    out = {}
    re, im = grid.re, grid.im
    dre = (re[-1] - re[0]) / (len(re) - 1)
    dim = (im[-1] - im[0]) / (len(im) - 1)
    F = np.ascontiguousarray(grid.values, dtype=float)
    for eps in levels:
        lev = -math.log10(eps)
        seg, eid = _kernels.marching_squares(F, lev)
        if len(seg) == 0:
            if strict:
                raise EmptyLevel(f"level eps = {eps:g} meets no grid cell")
            out[eps] = []
            continue
        lines = _join_segments(seg, eid)
        out[eps] = [re[0] + dre * L[:, 0] + 1j * (im[0] + dim * L[:, 1]) for L in lines]
    return out


def contour_real_axis_crossing(polylines):
    """Largest real part where any polyline meets the real axis, or None."""
    best = None
    for line in polylines:
        y = line.imag
        x = line.real
        for k in range(len(line) - 1):
            y0, y1 = y[k], y[k + 1]
            if y0 == 0 and y1 == 0:
                cand = max(x[k], x[k + 1])
            elif (y0 <= 0 <= y1) or (y1 <= 0 <= y0):
                t = y0 / (y0 - y1)
                cand = x[k] + t * (x[k + 1] - x[k])
            else:
                continue
            best = cand if best is None else max(best, cand)
    return best


def real_axis_crossings(op: DiscretizedOperator, levels, re_range, *, n_scan=400,
                        precision="auto", imag=0.0):
    """Largest-Re crossing of each level along a horizontal line.

    The line is scanned at ``n_scan`` points, the last sub-level node is
    located and the crossing refined by Brent's method.  Returns an array
    with NaN where a level is never crossed inside ``re_range``.
    """
    xs = np.linspace(re_range[0], re_range[1], n_scan)

    def f(x):
        return math.log10(resolvent_norm(op, complex(x, imag), precision=precision))
    vals = np.array([f(x) for x in xs])
    out = []
    for eps in levels:
        L = -math.log10(eps)
        below = np.nonzero(vals < L)[0]
        if len(below) == 0 or below[-1] == len(xs) - 1:
            out.append(np.nan)
            continue
        i = below[-1]
        out.append(brentq(lambda x: f(x) - L, xs[i], xs[i + 1], xtol=1e-10))
    return np.array(out)


def hausdorff_distance(a, b):
    """Symmetric Hausdorff distance between two complex point sets.

    Either argument may be a list of polylines (as returned per level by
    :func:`contour_extract`), which is flattened.
    """
    def pts(p):
        if isinstance(p, (list, tuple)):
            p = np.concatenate([np.atleast_1d(np.asarray(q, dtype=complex)) for q in p]) if p else []
        p = np.asarray(p, dtype=complex).ravel()
        if p.size == 0:
            raise InsufficientData("empty point set")
        return np.column_stack([p.real, p.imag])
    A, B = pts(a), pts(b)
    return float(max(directed_hausdorff(A, B)[0], directed_hausdorff(B, A)[0]))


def growth_exponent_fit(eps_levels, crossings, *, full=False):
    """Fit crossing ~ C (log 1/eps)^p and return (p, R^2).

    Least squares on log(crossing) against log(log(1/eps)).
    """
    eps = np.asarray(eps_levels, dtype=float)
    c = np.asarray(crossings, dtype=float)
    ok = np.isfinite(c) & (c > 0) & (eps > 0) & (eps < 1)
    eps, c = eps[ok], c[ok]
    if len(eps) < 4:
        raise InsufficientData("need at least 4 levels with finite crossings")
    if np.log10(eps.max() / eps.min()) < 3 - 1e-12:
        raise InsufficientData("levels must span at least 3 decades")
    X = np.log(np.log(1.0 / eps))
    Y = np.log(c)
    A = np.column_stack([X, np.ones_like(X)])
    coef, res, *_ = np.linalg.lstsq(A, Y, rcond=None)
    fit = A @ coef
    ss_res = float(np.sum((Y - fit) ** 2))
    ss_tot = float(np.sum((Y - Y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    if full:
        dof = max(len(X) - 2, 1)
        se = math.sqrt(ss_res / dof / np.sum((X - X.mean()) ** 2))
        return {"exponent": float(coef[0]), "intercept": float(coef[1]), "r2": r2, "stderr": se}
    return float(coef[0]), r2


# ---------------------------------------------------------------------------
# numerical range

def _top_eig_tridiag(d, e):
    """Largest eigenpair of a Hermitian tridiagonal matrix (diag d, superdiag e)."""
    # a diagonal unitary makes the off-diagonal real and nonnegative
    ph = np.ones(len(d), dtype=complex)
    ae = np.abs(e)
    for k in range(len(e)):
        ph[k + 1] = ph[k] * (e[k] / ae[k] if ae[k] > 0 else 1.0)
    w, v = sl.eigh_tridiagonal(d.real, ae, select="i", select_range=(len(d) - 1, len(d) - 1))
    return w[0], ph * v[:, 0]


def numerical_range_boundary(op: DiscretizedOperator, n_angles: int = 256):
    """Support points of the field of values for ``n_angles`` directions.

    For each angle phi the top eigenvector v of the Hermitian part of
    e^{-i phi} H gives the boundary point v* H v.
    """
    if n_angles < 8:
        raise ValueError("n_angles >= 8 required")
    A = op.matrix
    N = op.N
    phis = np.linspace(0, 2 * np.pi, n_angles, endpoint=False)
    pts = np.empty(n_angles, dtype=complex)
    tri = op.band == (1, 1)
    for k, phi in enumerate(phis):
        B = np.exp(-1j * phi) * A
        if tri:
            d = np.diagonal(B).real.copy()
            e = (np.diagonal(B, 1) + np.conj(np.diagonal(B, -1))) / 2
            _, v = _top_eig_tridiag(d, e)
        else:
            Hm = (B + B.conj().T) / 2
            _, V = sl.eigh(Hm, subset_by_index=(N - 1, N - 1))
            v = V[:, 0]
        pts[k] = np.vdot(v, A @ v) / np.vdot(v, v)
    return pts


def point_in_polygon(z, poly):
    """Even-odd rule test for complex points against a closed polygon."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    x, y = poly.real, poly.imag
    xj, yj = np.roll(x, 1), np.roll(y, 1)
    inside = np.zeros(z.shape, bool)
    for k in range(len(poly)):
        cond = ((y[k] > z.imag) != (yj[k] > z.imag))
        with np.errstate(divide="ignore", invalid="ignore"):
            xc = (xj[k] - x[k]) * (z.imag - y[k]) / (yj[k] - y[k]) + x[k]
        inside ^= cond & (z.real < xc)
    return inside


def distance_to_polygon(z, poly):
    """Distance from points to a closed polygon (0 inside)."""
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    a = poly
    b = np.roll(poly, -1)
    ab = b - a
    L2 = np.abs(ab) ** 2
    t = np.clip(((z[:, None] - a[None]) * np.conj(ab)[None]).real / np.where(L2 > 0, L2, 1), 0, 1)
    d = np.abs(z[:, None] - (a[None] + t * ab[None])).min(axis=1)
    d[point_in_polygon(z, poly)] = 0.0
    return d


# ---------------------------------------------------------------------------
# eigensystems

@dataclass
class EigenSystem:
    values: np.ndarray
    right: np.ndarray
    left: np.ndarray
    pairing: np.ndarray
    defective: np.ndarray

    def projection_norms(self, weights=None):
        """||P_k|| = ||psi_k|| ||phi_k|| / |<phi_k, psi_k>|."""
        w = np.ones(self.right.shape[0]) if weights is None else np.asarray(weights)
        nr = np.sqrt(np.sum(w[:, None] * np.abs(self.right) ** 2, axis=0))
        nl = np.sqrt(np.sum(np.abs(self.left) ** 2 / w[:, None], axis=0))
        ip = np.abs(np.sum(np.conj(self.left) * self.right, axis=0))
        with np.errstate(divide="ignore"):
            return nr * nl / ip


def eigen(op: DiscretizedOperator, *, defect_tol: float = 1e-10, sort: str = "real") -> EigenSystem:
    """Eigenvalues with right and left eigenvectors.

    Left vectors satisfy phi_k^* H = lambda_k phi_k^*.  The pairing
    |<phi_k, psi_k>| / (||phi_k|| ||psi_k||) is reported and pairs below
    ``defect_tol`` are flagged as near-defective.
    """
    A = op.matrix if isinstance(op, DiscretizedOperator) else np.asarray(op, dtype=complex)
    try:
        w, vl, vr = sl.eig(A, left=True, right=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ConvergenceFailure(str(exc)) from exc
    if not np.all(np.isfinite(w)):
        raise ConvergenceFailure("non-finite eigenvalues")
    if sort == "real":
        order = np.lexsort((w.imag, w.real))
    elif sort == "abs":
        order = np.argsort(np.abs(w), kind="stable")
    else:
        order = np.arange(len(w))
    w, vl, vr = w[order], vl[:, order], vr[:, order]
    ip = np.abs(np.sum(np.conj(vl) * vr, axis=0))
    pairing = ip / (np.linalg.norm(vl, axis=0) * np.linalg.norm(vr, axis=0))
    return EigenSystem(w, vr, vl, pairing, pairing < defect_tol)


# ---------------------------------------------------------------------------
# export

def write_polylines(contours, path):
    """Plain-text polylines: a header line per polyline, then 're im' rows."""
    with open(path, "w") as fh:
        for eps in sorted(contours, reverse=True):
            for k, line in enumerate(contours[eps]):
                fh.write(f"# eps={eps:.6g} polyline={k} points={len(line)}\n")
                for p in line:
                    fh.write(f"{p.real:.12g} {p.imag:.12g}\n")
    return str(path)


_SVG_COLORS = ("#1f4e9c", "#2a7fb8", "#3aa0c0", "#4cb39a", "#7cbf5a", "#b7c04a", "#d99a3a", "#c0504d")


def write_svg(grid: PseudospectrumGrid, contours, path, *, width=640, height=480):
    """Standalone SVG with one path per eps level and eigenvalue markers."""
    re0, re1, im0, im1 = grid.region
    sx = width / (re1 - re0)
    sy = height / (im1 - im0)

    def P(z):
        return f"{(z.real - re0) * sx:.2f},{(im1 - z.imag) * sy:.2f}"
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
             f'viewBox="0 0 {width} {height}">',
             f'<rect x="0" y="0" width="{width}" height="{height}" fill="white" stroke="black"/>']
    for k, eps in enumerate(sorted(contours, reverse=True)):
        d = " ".join("M " + " L ".join(P(p) for p in line) for line in contours[eps] if len(line) > 1)
        color = _SVG_COLORS[k % len(_SVG_COLORS)]
        parts.append(f'<path d="{d}" fill="none" stroke="{color}" stroke-width="1" '
                     f'data-eps="{eps:.3g}"><title>eps = {eps:.3g}</title></path>')
    if grid.eigenvalues is not None:
        for e in grid.eigenvalues:
            if re0 <= e.real <= re1 and im0 <= e.imag <= im1:
                x, y = P(e).split(",")
                parts.append(f'<circle cx="{x}" cy="{y}" r="2.5" fill="#d62728"/>')
    parts.append("</svg>")
    with open(path, "w") as fh:
        fh.write("\n".join(parts) + "\n")
    return str(path)
