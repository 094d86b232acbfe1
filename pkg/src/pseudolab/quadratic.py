"""Quadratic symbols q(x, xi) = alpha x^2 + 2 beta x xi + gamma xi^2 and the Swanson reduction."""
from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import eval_hermite, gammaln

from .model import ConstraintViolated


class NotElliptic(ValueError):
    pass


class NormalizationFailure(RuntimeError):
    pass


class GridTooSmall(RuntimeError):
    pass


ELLIPTIC = "elliptic"
DEGENERATE_RANGE = "degenerate_range"
NONELLIPTIC = "nonelliptic"


@dataclass(frozen=True)
class QuadraticSymbol:
    alpha: complex
    beta: complex
    gamma: complex

    def __call__(self, x, xi):
        return self.alpha * x * x + 2 * self.beta * x * xi + self.gamma * xi * xi

    def scaled(self, c):
        return QuadraticSymbol(c * self.alpha, c * self.beta, c * self.gamma)

    @property
    def scale(self):
        return max(abs(self.alpha), abs(self.beta), abs(self.gamma))


def _real_null_directions(a, b, c):
    """Unit vectors (x, xi) where the real form a x^2 + 2b x xi + c xi^2 vanishes."""
    out = []
    if a == 0 and b == 0 and c == 0:
        return None
    if abs(c) > 1e-14 * max(abs(a), abs(b)):
        disc = b * b - a * c
        if disc < 0:
            return out
        for sgn in (1.0, -1.0):
            s = (-b + sgn * math.sqrt(disc)) / c
            out.append(np.array([1.0, s]) / math.hypot(1.0, s))
    else:
        out.append(np.array([0.0, 1.0]))
        if a != 0 or b != 0:
            m = max(abs(a), abs(b))
            v = np.array([2 * b / m, -a / m])
            out.append(v / np.linalg.norm(v))
    return out


def classify(q: QuadraticSymbol, *, tol=1e-12, samples=4096) -> str:
    """Ellipticity class of q.

    ``elliptic`` when q has no real zero besides the origin and its image
    omits part of the plane; ``degenerate_range`` when only the second
    condition fails; ``nonelliptic`` when q vanishes on a real line.
    """
    sc = q.scale
    if sc == 0:
        return NONELLIPTIC
    al, be, ga = complex(q.alpha), complex(q.beta), complex(q.gamma)
    # a common real zero of Re q and Im q: test the null directions of one part
    dirs = _real_null_directions(al.real, be.real, ga.real)
    if dirs is None:
        dirs = _real_null_directions(al.imag, be.imag, ga.imag)
    for v in dirs:
        if abs(q(v[0], v[1])) <= tol * sc:
            return NONELLIPTIC
    # the image is the cone over the closed curve t -> q(cos t, sin t); it
    # is the whole plane iff the arguments sweep an angle of at least pi
    t = np.linspace(0, np.pi, samples, endpoint=False)
    vals = q(np.cos(t), np.sin(t))
    ang = np.unwrap(np.angle(np.append(vals, vals[0])))
    if ang.max() - ang.min() >= np.pi - 1e-9:
        return DEGENERATE_RANGE
    return ELLIPTIC


def swanson_to_weyl(omega, alpha, beta) -> QuadraticSymbol:
    """Weyl symbol of -(w+a+b) d^2 + (w-a-b) x^2 + (a-b)(x d + d x)."""
    if not omega - abs(alpha + beta) > 0:
        raise ConstraintViolated(f"omega - |alpha + beta| > 0 violated: "
                                 f"{omega - abs(alpha + beta):.6g} <= 0")
    return QuadraticSymbol(complex(omega - alpha - beta), 1j * (alpha - beta),
                           complex(omega + alpha + beta))


def rotated_symbol(theta, scale=1.0) -> QuadraticSymbol:
    """Symbol of scale * (-e^{-i theta} d^2 + e^{i theta} x^2)."""
    return QuadraticSymbol(scale * cmath.exp(1j * theta), 0j, scale * cmath.exp(-1j * theta))


def fundamental_matrix(q: QuadraticSymbol) -> np.ndarray:
    return np.array([[q.beta, q.gamma], [-q.alpha, -q.beta]], dtype=complex)


@dataclass
class FundamentalData:
    F: np.ndarray
    lam: complex
    a_plus: complex
    a_minus: complex
    theta: float
    scale: complex
    chart: str = "(1,a)"

    def to_dict(self):
        c = lambda v: [float(v.real), float(v.imag)]  # noqa: E731
        return {"F": [[c(v) for v in row] for row in self.F], "lambda": c(self.lam),
                "a_plus": c(self.a_plus), "a_minus": c(self.a_minus), "theta": self.theta,
                "scale": c(self.scale), "chart": self.chart}


def _slopes(F):
    """Eigenvalues and eigenvector slopes a in the (1, a) chart, or None where infinite."""
    w, V = np.linalg.eig(F)
    out = []
    for k in range(2):
        v = V[:, k]
        if abs(v[0]) > 1e-14 * np.linalg.norm(v):
            out.append((w[k], v[1] / v[0]))
        else:
            out.append((w[k], None))
    return out


def fundamental(q: QuadraticSymbol) -> FundamentalData:
    """Eigensystem of F = [[beta, gamma], [-alpha, -beta]] with the +- slope labelling.

    The eigenvector (1, a_+) with Im a_+ > 0 belongs to lambda, (1, a_-)
    with Im a_- < 0 to -lambda.  When an eigenvector has a vanishing first
    component the (b, 1) chart is used and converted with a = 1/b, which
    flips the sign of Im; such a vector cannot occur for elliptic symbols.
    """
    if classify(q) != ELLIPTIC:
        raise NotElliptic(f"symbol {q} is not elliptic")
    F = fundamental_matrix(q)
    pairs = _slopes(F)
    chart = "(1,a)"
    if any(a is None for _, a in pairs):
        chart = "(b,1)"
        w, V = np.linalg.eig(F)
        pairs = []
        for k in range(2):
            b = V[0, k] / V[1, k]
            if b == 0:
                raise NormalizationFailure("eigenvector (0, 1) has infinite slope in both charts")
            pairs.append((w[k], 1 / b))
    pos = [p for p in pairs if p[1].imag > 0]
    neg = [p for p in pairs if p[1].imag < 0]
    if len(pos) != 1 or len(neg) != 1:
        raise NormalizationFailure("slopes do not split into Im a > 0 and Im a < 0")
    lam, ap = pos[0]
    am = neg[0][1]
    s = abs((ap - np.conj(am)) / (ap - am))
    theta = math.asin(min(s, 1.0))
    return FundamentalData(F, complex(lam), complex(ap), complex(am), theta, -1j * complex(lam),
                           chart)


def spectrum(q: QuadraticSymbol, count: int):
    """-i lambda (2k + 1), k = 0..count-1."""
    fd = fundamental(q)
    return -1j * fd.lam * (2 * np.arange(count) + 1)


def identify_rotated(q: QuadraticSymbol):
    """(theta, scale) with q^w unitarily equivalent to scale * (-e^{-i theta} d^2 + e^{i theta} x^2)."""
    fd = fundamental(q)
    return fd.theta, fd.scale


def report(q: QuadraticSymbol) -> dict:
    """JSON-ready summary of classification and fundamental data."""
    c = lambda v: [float(complex(v).real), float(complex(v).imag)]  # noqa: E731
    out = {"alpha": c(q.alpha), "beta": c(q.beta), "gamma": c(q.gamma),
           "classification": classify(q)}
    if out["classification"] == ELLIPTIC:
        fd = fundamental(q)
        out.update({"lambda": c(fd.lam), "a_plus": c(fd.a_plus), "a_minus": c(fd.a_minus),
                    "theta": fd.theta, "scale": c(fd.scale)})
    else:
        out.update({"lambda": None, "a_plus": None, "a_minus": None, "theta": None,
                    "scale": None})
    return out


def write_report(q: QuadraticSymbol, path):
    with open(path, "w") as fh:
        json.dump(report(q), fh, indent=1)
    return str(path)


# ---------------------------------------------------------------------------
# Swanson unitary reduction

def hermite_function(n):
    """Normalized Hermite function h_n as a callable."""
    lognorm = -0.5 * (n * math.log(2) + gammaln(n + 1) + 0.5 * math.log(math.pi))

    def f(y):
        y = np.asarray(y, dtype=float)
        return eval_hermite(n, y) * np.exp(-y * y / 2 + lognorm)
    return f


def swanson_delta(omega, alpha, beta, convention="consistent"):
    """Dilation parameter of the reduction.

    ``consistent`` is sqrt((w - a - b)/(w + a + b)), the value for which the
    composed map intertwines the two operators; ``reciprocal`` is its
    reciprocal, kept to demonstrate that it fails the check.
    """
    r = (omega - alpha - beta) / (omega + alpha + beta)
    if convention == "consistent":
        return math.sqrt(r)
    if convention == "reciprocal":
        return math.sqrt(1 / r)
    raise ValueError(f"unknown convention {convention!r}")


class _FourierGrid:
    """Uniform grid with quadrature Fourier pairs evaluated by FFT.

    The Riemann sums (2 pi)^{-1/2} sum_j e^{-i xi_k x_j} f_j dx over the
    grid and its reciprocal grid are computed exactly via FFT with phase
    factors.
    """

    def __init__(self, L, n):
        self.x = np.linspace(-L, L, n, endpoint=False)
        self.dx = self.x[1] - self.x[0]
        self.xi = 2 * np.pi * np.fft.fftfreq(n, self.dx)
        self.n = n
        self.phase = np.exp(-1j * self.xi * self.x[0])

    def fwd(self, f):
        return self.phase * np.fft.fft(f) * self.dx / math.sqrt(2 * math.pi)

    def inv(self, g):
        dxi = 2 * np.pi / (self.n * self.dx)
        return np.fft.ifft(g / self.phase) * self.n * dxi / math.sqrt(2 * math.pi)

    def deriv(self, f, k):
        return self.inv((1j * self.xi) ** k * self.fwd(f))

    def norm(self, f):
        return math.sqrt(np.sum(np.abs(f) ** 2) * self.dx)

    def tail(self, f):
        m = np.abs(f).max()
        edge = max(1, self.n // 40)
        g = np.abs(self.fwd(f))
        kedge = np.argsort(np.abs(self.xi))[-2 * edge:]
        return max(np.abs(f[:edge]).max(), np.abs(f[-edge:]).max()) / m, g[kedge].max() / g.max()


def swanson_unitary_check(omega, alpha, beta, samples=None, *, L=30.0, n=4096,
                          convention="consistent", alias_tol=1e-10):
    """Maximum relative L^2 deviation between H U f and U R f over sample functions.

    H = -(w+a+b) d^2 + (w-a-b) x^2 + (a-b)(2x d + 1),
    R = zeta (-d^2 + (conj(zeta)/zeta) x^2), zeta = sqrt(w^2 - (a+b)^2) + i(a - b),
    U = U1 U2 U3 with U3 f(x) = (2 delta)^{1/4} f(sqrt(2 delta) x), U2 the
    Fourier multiplier e^{-i xi^2/(4 delta)} and U1 multiplication by
    e^{-i delta x^2/2}.

    Returns a dict with ``deviation``, ``unitarity`` (max | ||Uf|| - ||f|| |
    relative), ``delta``, ``zeta`` and per-sample values.
    """
    if not omega - abs(alpha + beta) > 0:
        raise ConstraintViolated(f"omega - |alpha + beta| > 0 violated: "
                                 f"{omega - abs(alpha + beta):.6g} <= 0")
    if samples is None:
        samples = [hermite_function(k) for k in range(5)]
    d = swanson_delta(omega, alpha, beta, convention)
    zeta = math.sqrt(omega ** 2 - (alpha + beta) ** 2) + 1j * (alpha - beta)
    G = _FourierGrid(L, n)
    x = G.x
    wp, wm, ab = omega + alpha + beta, omega - alpha - beta, alpha - beta

    def U(vals_fn):
        g = (2 * d) ** 0.25 * vals_fn(math.sqrt(2 * d) * x)
        g = G.inv(np.exp(-1j * G.xi ** 2 / (4 * d)) * G.fwd(g))
        return np.exp(-1j * d * x ** 2 / 2) * g

    def H(g):
        return -wp * G.deriv(g, 2) + wm * x ** 2 * g + ab * (2 * x * G.deriv(g, 1) + g)

    devs, unit = [], []
    for f in samples:
        f0 = np.asarray(f(x), dtype=complex)
        t1, t2 = G.tail(f0)
        if max(t1, t2) > alias_tol:
            raise GridTooSmall(f"sample not resolved on [-{L}, {L}] with {n} points "
                               f"(tail {max(t1, t2):.1e})")
        Uf = U(lambda y: np.asarray(f(y), dtype=complex))
        UR = U(lambda y, f=f: _apply_R(G, f, y, zeta))
        HU = H(Uf)
        t1, t2 = G.tail(Uf)
        if max(t1, t2) > 1e3 * alias_tol:
            raise GridTooSmall(f"transformed sample reaches the grid edge (tail {max(t1, t2):.1e})")
        devs.append(G.norm(HU - UR) / G.norm(UR))
        unit.append(abs(G.norm(Uf) - G.norm(f0)) / G.norm(f0))
    return {"deviation": float(max(devs)), "unitarity": float(max(unit)), "delta": d,
            "zeta": [zeta.real, zeta.imag], "per_sample": [float(v) for v in devs],
            "convention": convention, "grid": {"L": L, "n": n}}


def _apply_R(G, f, y, zeta):
    """(R f)(y) on the uniform grid y (a dilation of G.x), spectral second derivative."""
    y = np.asarray(y, dtype=float)
    dy = y[1] - y[0]
    fy = np.asarray(f(y), dtype=complex)
    k = 2 * np.pi * np.fft.fftfreq(len(y), dy)
    d2 = np.fft.ifft(-(k ** 2) * np.fft.fft(fy))
    return zeta * (-d2 + (np.conj(zeta) / zeta) * y ** 2 * fy)
