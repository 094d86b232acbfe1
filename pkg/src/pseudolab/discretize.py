"""Finite matrices for operator models.

Two assembly paths are provided: Hermite functions through ladder-operator
algebra (spectrally accurate for polynomial coefficients on the line) and a
uniform finite-difference grid with Dirichlet ends (interval problems).
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.io
from scipy.special import roots_hermite, roots_legendre

from . import _kernels
from .model import OperatorModel


class DiscretizationError(ValueError):
    pass


class UnsupportedCoefficients(DiscretizationError):
    pass


class SingularNode(DiscretizationError):
    pass


class QuadratureFailure(DiscretizationError):
    pass


@dataclass(frozen=True, eq=False)
class DiscretizedOperator:
    """Dense matrix realization of an operator model.

    ``weights`` define the L^2 inner product of represented functions,
    ``<u, v> = sum(weights * conj(u) * v)``.  Hermite coefficients are
    orthonormal so their weights are ones.
    """
    matrix: np.ndarray
    basis: str
    N: int
    model: OperatorModel | None = None
    nodes: np.ndarray | None = None
    weights: np.ndarray | None = None
    interval: tuple | None = None
    band: tuple = field(default=None)
    scale: float = 1.0

    def __post_init__(self):
        self.matrix.setflags(write=False)
        if self.band is None:
            object.__setattr__(self, "band", _kernels.dense_bandwidth(self.matrix))

    @property
    def model_id(self):
        return self.model.to_dict() if self.model is not None else None

    @property
    def norm_estimate(self):
        # cheap upper bound for ||H||_2 used by ceilings: sqrt(||H||_1 ||H||_inf)
        A = np.abs(self.matrix)
        return float(math.sqrt(A.sum(axis=0).max() * A.sum(axis=1).max()))

    def inner(self, u, v):
        w = np.ones(self.N) if self.weights is None else self.weights
        return complex(np.sum(w * np.conj(u) * v))

    def norm(self, u):
        return math.sqrt(max(self.inner(u, u).real, 0.0))

    def metadata(self):
        meta = {"basis": self.basis, "N": self.N, "model": self.model_id,
                "bandwidth": list(self.band)}
        if self.interval is not None:
            meta["interval"] = list(self.interval)
        if self.scale != 1.0:
            meta["scale"] = self.scale
        return meta

    def adjoint(self):
        return DiscretizedOperator(self.matrix.conj().T.copy(), self.basis, self.N, self.model,
                                   self.nodes, self.weights, self.interval,
                                   band=self.band[::-1], scale=self.scale)

    def with_matrix(self, M):
        return DiscretizedOperator(np.array(M, dtype=complex), self.basis, self.N, self.model,
                                   self.nodes, self.weights, self.interval, scale=self.scale)


def from_matrix(M, basis="matrix"):
    """Wrap a plain matrix (for tests and ad-hoc experiments)."""
    M = np.array(M, dtype=complex)
    return DiscretizedOperator(M, basis, M.shape[0])


# ---------------------------------------------------------------------------
# Hermite ladder algebra

def ladder_matrices(N):
    """Position and derivative matrices x = (a + a*)/sqrt 2, d/dx = (a - a*)/sqrt 2."""
    a = np.diag(np.sqrt(np.arange(1, N, dtype=float)), 1)
    X = (a + a.T) / math.sqrt(2)
    D = (a - a.T) / math.sqrt(2)
    return X, D


def _poly_operator(poly, h, M, scale=1.0):
    X, D = ladder_matrices(M)
    X, D = scale * X, D / scale
    out = np.zeros((M, M), dtype=complex)
    Dj = np.eye(M)
    for j, c in enumerate(poly):
        if j:
            Dj = Dj @ D
        if not np.any(c):
            continue
        Xp = np.eye(M)
        term = np.zeros((M, M), dtype=complex)
        for p, cp in enumerate(c):
            if p:
                Xp = Xp @ X
            if cp != 0:
                term += cp * Xp
        out += (h ** j) * (term @ Dj)
    return out


def hermite_assemble(model: OperatorModel, N: int, scale: float = 1.0) -> DiscretizedOperator:
    """Matrix of the model in the first N Hermite functions.

    Products are formed on N + pad modes and truncated, so every entry is
    the exact ladder-algebra image.  With ``scale`` s the basis is the
    dilated family s^{-1/2} h_n(x/s); s = sqrt(h) resolves semiclassical
    problems with N independent of h.
    """
    if not scale > 0:
        raise DiscretizationError("scale > 0 required")
    if N < 4:
        raise DiscretizationError("N >= 4 required")
    if model.poly is None:
        raise UnsupportedCoefficients(
            f"{model.kind} has non-polynomial coefficients; use potential_matrix_elements or grid_assemble")
    if model.kind == "advection_diffusion" and "L" in model.params:
        raise UnsupportedCoefficients("interval advection-diffusion needs grid_assemble")
    pad = max(len(c) - 1 + j for j, c in enumerate(model.poly)) + 1
    M = _poly_operator(model.poly, model.h, N + pad, float(scale))[:N, :N]
    return DiscretizedOperator(np.ascontiguousarray(M), "hermite", N, model,
                               nodes=np.arange(N, dtype=float), weights=np.ones(N),
                               scale=float(scale))


def ladder_word_matrix(word: str, N: int, pad: int | None = None):
    """Matrix of a product of 'x', 'd', 'a', 'c' (a*) letters, left to right."""
    pad = len(word) + 1 if pad is None else pad
    M = N + pad
    X, D = ladder_matrices(M)
    a = np.diag(np.sqrt(np.arange(1, M, dtype=float)), 1)
    letters = {"x": X, "d": D, "a": a, "c": a.T}
    out = np.eye(M)
    for ch in word:
        out = out @ letters[ch]
    return out[:N, :N]


def swanson_ladder_form(omega, alpha, beta, N):
    """omega a*a + alpha a^2 + beta (a*)^2 + omega with a = d/dx + x.

    Here a = sqrt(2) a_std, so a*a = 2 a_std* a_std and a^2 = 2 a_std^2.
    """
    return (2 * omega * ladder_word_matrix("ca", N) + 2 * alpha * ladder_word_matrix("aa", N)
            + 2 * beta * ladder_word_matrix("cc", N) + omega * np.eye(N))


# ---------------------------------------------------------------------------
# finite differences

def grid_assemble(model: OperatorModel, a: float, b: float, N: int) -> DiscretizedOperator:
    """Second-order centred differences on N interior nodes, Dirichlet ends."""
    if not a < b:
        raise DiscretizationError("a < b required")
    if N < 8:
        raise DiscretizationError("N >= 8 required")
    if model.n > 2:
        raise UnsupportedCoefficients("grid assembly supports operators of order <= 2")
    x = a + (b - a) * np.arange(1, N + 1) / (N + 1)
    dx = (b - a) / (N + 1)
    h = model.h
    coef = []
    for j, f in enumerate(model.coefficients):
        with np.errstate(all="ignore"):
            v = np.broadcast_to(np.asarray(f(x), dtype=complex), x.shape)
        if not np.all(np.isfinite(v)):
            bad = x[~np.isfinite(v)][0]
            raise SingularNode(f"coefficient a_{j} is not finite at node x = {bad:.6g}")
        coef.append(v * h ** j)
    while len(coef) < 3:
        coef.append(np.zeros(N, dtype=complex))
    a0, a1, a2 = coef
    main = a0 - 2 * a2 / dx ** 2
    upper = a2[:-1] / dx ** 2 + a1[:-1] / (2 * dx)
    lower = a2[1:] / dx ** 2 - a1[1:] / (2 * dx)
    M = np.diag(main) + np.diag(upper, 1) + np.diag(lower, -1)
    return DiscretizedOperator(M, "grid", N, model, nodes=x, weights=np.full(N, dx),
                               interval=(float(a), float(b)), band=(1, 1))


def grid_band_dd(op: DiscretizedOperator, z: complex):
    """Double-double LAPACK band storage of op - z for a polynomial grid model.

    Node positions and potential values are formed in double-double so the
    shifted matrix is accurate far below double rounding of its entries.
    """
    model = op.model
    if op.basis != "grid" or model is None or model.poly is None:
        raise UnsupportedCoefficients("extended precision needs a polynomial model on a grid")
    if any(len(c) > 1 for c in model.poly[1:]):
        raise UnsupportedCoefficients("extended precision needs constant derivative coefficients")
    a, b = op.interval
    N = op.N
    h = model.h
    xs = _kernels.dd_linspace_interior(float(a), float(b), N)
    c0 = np.asarray(model.poly[0], dtype=complex)
    diag = _kernels.dd_poly_eval(c0.real.copy(), c0.imag.copy(), xs)
    a1 = complex(model.poly[1][0]) * h if len(model.poly) > 1 else 0j
    a2 = complex(model.poly[2][0]) * h * h if len(model.poly) > 2 else 0j
    # 1/dx and 1/dx^2 in double-double
    wh, wl = _kernels.dd_add(float(b), 0.0, -float(a), 0.0)
    dxh, dxl = _kernels.dd_div(wh, wl, float(N + 1), 0.0)
    ih, il = _kernels.dd_div(1.0, 0.0, dxh, dxl)
    i2h, i2l = _kernels.dd_mul(ih, il, ih, il)

    def cdd(c, sh, sl):
        rh, rl = _kernels.dd_mul(c.real, 0.0, sh, sl)
        qh, ql = _kernels.dd_mul(c.imag, 0.0, sh, sl)
        return np.array([rh, rl, qh, ql])

    off2 = cdd(a2, i2h, i2l)
    off1 = cdd(a1, *_kernels.dd_mul(ih, il, 0.5, 0.0))
    up = np.array([*_kernels.dd_add(off2[0], off2[1], off1[0], off1[1]),
                   *_kernels.dd_add(off2[2], off2[3], off1[2], off1[3])])
    lo = np.array([*_kernels.dd_add(off2[0], off2[1], -off1[0], -off1[1]),
                   *_kernels.dd_add(off2[2], off2[3], -off1[2], -off1[3])])
    d2 = cdd(a2, *_kernels.dd_mul(i2h, i2l, -2.0, 0.0))
    z = complex(z)
    main = np.empty((N, 4))
    for k in range(N):
        rh, rl = _kernels.dd_add(diag[k, 0], diag[k, 1], d2[0], d2[1])
        qh, ql = _kernels.dd_add(diag[k, 2], diag[k, 3], d2[2], d2[3])
        rh, rl = _kernels.dd_add(rh, rl, -z.real, 0.0)
        qh, ql = _kernels.dd_add(qh, ql, -z.imag, 0.0)
        main[k] = (rh, rl, qh, ql)
    kl = ku = 1
    ab = np.zeros((2 * kl + ku + 1, N, 4))
    # A[i, j] at row kl + ku + i - j
    ab[kl + ku, :, :] = main
    ab[kl + ku - 1, 1:, :] = up      # A[i, i+1]
    ab[kl + ku + 1, :-1, :] = lo     # A[i+1, i]
    return ab


# ---------------------------------------------------------------------------
# potential matrix elements

def hermite_functions(N, x):
    """Orthonormal Hermite functions psi_0..psi_{N-1} at points x, shape (N, len(x))."""
    x = np.asarray(x, dtype=float)
    out = np.empty((N, x.size))
    out[0] = math.pi ** -0.25 * np.exp(-x ** 2 / 2)
    if N > 1:
        out[1] = math.sqrt(2.0) * x * out[0]
    for k in range(1, N - 1):
        out[k + 1] = math.sqrt(2.0 / (k + 1)) * x * out[k] - math.sqrt(k / (k + 1)) * out[k - 1]
    return out


def _hermite_scaled(N, x):
    # psi_k(x) * exp(x^2/2), safe at Gauss-Hermite nodes
    out = np.empty((N, x.size))
    out[0] = math.pi ** -0.25
    if N > 1:
        out[1] = math.sqrt(2.0) * x * out[0]
    for k in range(1, N - 1):
        out[k + 1] = math.sqrt(2.0 / (k + 1)) * x * out[k] - math.sqrt(k / (k + 1)) * out[k - 1]
    return out


def _panel_rule(lo, hi, width, npts):
    if hi <= lo:
        return np.empty(0), np.empty(0)
    m = max(1, int(math.ceil((hi - lo) / width)))
    t, w = roots_legendre(npts)
    edges = np.linspace(lo, hi, m + 1)
    xs = ((edges[:-1] + edges[1:])[:, None] + (edges[1:] - edges[:-1])[:, None] * t) / 2
    ws = (edges[1:] - edges[:-1])[:, None] / 2 * w
    return xs.ravel(), ws.ravel()


def _singular_rule(N, singular_points, half_width, npts, panel_pts):
    R = math.sqrt(2 * N + 1) + 14.0
    pts = sorted(float(c) for c in singular_points)
    for c0, c1 in zip(pts[:-1], pts[1:]):
        if c1 - c0 < 2 * half_width:
            raise QuadratureFailure("singular windows overlap")
    # regular pieces between windows
    cuts = [-R]
    for c in pts:
        cuts += [c - half_width, c + half_width]
    cuts.append(R)
    xs, ws = [], []
    for lo, hi in zip(cuts[0::2], cuts[1::2]):
        x, w = _panel_rule(lo, hi, 0.5, panel_pts)
        xs.append(x)
        ws.append(w)
    # windows: x = c +- u^2, dx = 2u du, u in (0, sqrt(half_width))
    t, w = roots_legendre(npts)
    ub = math.sqrt(half_width)
    u = (t + 1) * ub / 2
    wu = w * ub / 2
    for c in pts:
        for sgn in (-1.0, 1.0):
            xs.append(c + sgn * u ** 2)
            ws.append(2 * u * wu)
    return np.concatenate(xs), np.concatenate(ws)


def potential_matrix_elements(V: Callable, N: int, singular_points: Sequence[float] = (),
                              *, half_width: float = 0.5, window_points: int = 64,
                              tol: float = 1e-10, max_refine: int = 3) -> np.ndarray:
    """Matrix <psi_m, V psi_n> in the Hermite-function basis.

    Without singular points Gauss-Hermite quadrature is used.  Around each
    point c with an |x - c|^{-1/2} singularity a window of the given
    half-width is integrated after the substitution u^2 = |x - c|, and the
    remainder of the line by composite Gauss-Legendre panels.  The rule is
    refined until two successive results agree to ``tol``.
    """
    if not singular_points:
        prev = None
        nq = N + 40
        for _ in range(max_refine + 1):
            x, w = roots_hermite(nq)
            vals = np.asarray(V(x), dtype=complex) * np.ones_like(x)
            Hs = _hermite_scaled(N, x)
            M = (Hs * (w * vals)) @ Hs.T
            if prev is not None and np.max(np.abs(M - prev)) < tol:
                return M
            prev = M
            nq *= 2
        raise QuadratureFailure("Gauss-Hermite refinement budget exceeded")
    prev = None
    npts, ppts = window_points, 24
    for _ in range(max_refine + 1):
        x, w = _singular_rule(N, singular_points, half_width, npts, ppts)
        with np.errstate(all="ignore"):
            vals = np.asarray(V(x), dtype=complex) * np.ones_like(x)
        if not np.all(np.isfinite(vals)):
            raise QuadratureFailure("potential not finite at a quadrature node")
        Hf = hermite_functions(N, x)
        M = (Hf * (w * vals)) @ Hf.T
        if prev is not None and np.max(np.abs(M - prev)) < tol:
            return M
        prev = M
        npts *= 2
        ppts *= 2
    raise QuadratureFailure("singular quadrature refinement budget exceeded")


def perturbed_assemble(model: OperatorModel, N: int) -> DiscretizedOperator:
    """Harmonic oscillator by ladder algebra plus the singular perturbation by quadrature."""
    from .model import make_model, _perturbation
    ho = hermite_assemble(make_model("rotated_ho", {"theta": 0.0}), N).matrix
    V, _, _ = _perturbation(float(model.params["epsilon"]))
    M = ho + potential_matrix_elements(V, N, model.singular_points)
    return DiscretizedOperator(np.ascontiguousarray(M), "hermite", N, model,
                               nodes=np.arange(N, dtype=float), weights=np.ones(N))


def assemble(model: OperatorModel, N: int, basis: str = "auto", interval=None) -> DiscretizedOperator:
    """Dispatch on the documented selection rule.

    Polynomial coefficients on the line go to Hermite, interval problems to
    the grid, singular potentials to the quadrature path.
    """
    if basis == "auto":
        if model.kind == "perturbed_ho":
            basis = "quadrature"
        elif interval is not None or model.kind == "advection_diffusion":
            basis = "grid"
        else:
            basis = "hermite"
    if basis == "hermite":
        return hermite_assemble(model, N)
    if basis == "quadrature":
        return perturbed_assemble(model, N)
    if basis == "grid":
        if interval is None:
            if model.kind == "advection_diffusion":
                interval = (0.0, float(model.params.get("L", math.pi)))
            else:
                interval = (-40.0, 40.0)
        return grid_assemble(model, interval[0], interval[1], N)
    raise DiscretizationError(f"unknown basis {basis!r}")


# ---------------------------------------------------------------------------
# convergence diagnostics

def _quantity(desc):
    if callable(desc):
        return desc
    kind, arg = desc
    if kind == "eigenvalue":
        def f(op, k=int(arg)):
            ev = np.linalg.eigvals(op.matrix)
            ev = ev[np.lexsort((ev.imag, ev.real))]
            return complex(ev[k])
        return f
    if kind == "resolvent_norm":
        from .resolvent import resolvent_norm

        def f(op, z=complex(arg)):
            return resolvent_norm(op, z)
        return f
    raise DiscretizationError(f"unknown quantity {kind!r}")


def convergence_check(model: OperatorModel, quantity, N_sequence, *, tol: float = 1e-10,
                      basis: str = "auto", interval=None, relative: bool = False) -> dict:
    """Successive differences of a quantity along increasing N.

    ``quantity`` is ``("eigenvalue", k)``, ``("resolvent_norm", z)`` or a
    callable taking a DiscretizedOperator.
    """
    Ns = [int(n) for n in N_sequence]
    if len(Ns) < 3 or any(b <= a for a, b in zip(Ns[:-1], Ns[1:])):
        raise DiscretizationError("N_sequence must be strictly increasing with length >= 3")
    f = _quantity(quantity)
    vals = [f(assemble(model, n, basis, interval)) for n in Ns]
    diffs = [abs(b - a) for a, b in zip(vals[:-1], vals[1:])]
    if relative:
        diffs = [d / max(abs(v), 1e-300) for d, v in zip(diffs, vals[1:])]
    return {"N": Ns, "values": vals, "differences": diffs, "converged": bool(diffs[-1] < tol),
            "tol": tol}


# ---------------------------------------------------------------------------
# export

def export_matrix(op: DiscretizedOperator, path, meta_path=None):
    """Matrix Market (complex general) plus a JSON quadrature sidecar."""
    scipy.io.mmwrite(str(path), op.matrix, field="complex", symmetry="general",
                     comment=f"pseudolab {op.basis} N={op.N}")
    meta_path = meta_path or str(path) + ".json"
    meta = op.metadata()
    meta["nodes"] = None if op.nodes is None else np.asarray(op.nodes).tolist()
    meta["weights"] = None if op.weights is None else np.asarray(op.weights).tolist()
    with open(meta_path, "w") as fh:
        json.dump(meta, fh)
    return str(path), meta_path
