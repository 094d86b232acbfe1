"""JWKB pseudomodes: eikonal phase, transport amplitudes, cutoffs, certified residuals.

A pseudomode for ``-h^2 d^2/dx^2 + V(x)`` at target ``z`` is

    u(x; h) = chi(x) exp(i phi(x) / h) sum_{j<=J} h^j a_j(x),

with phi' = -sgn(Im V'(x0)) sqrt(z - V), a_0 = sqrt(phi'(x0) / phi'(x)) and the
higher amplitudes from the transport recursion.  Everything lives on a
working interval as adaptively truncated Chebyshev series.

The residual ``||(H - z) u|| / ||u||`` is evaluated from the exact conjugation
identity

    e^{-i phi/h} (H - z) e^{i phi/h} chi A
        = chi (-h^{J+2} a_J'' - 2i sum_j h^{j+1} d_j)
          - h^2 (chi'' A + 2 chi' (A' + i phi' A / h)),

where ``d_j`` are the (tiny) defects left by the Chebyshev fits in the transport
equations.  No cancellation-prone numerical differentiation of ``u`` is
involved, so residuals far below double precision relative to ``|u|`` are
meaningful.
"""
from __future__ import annotations

import cmath
import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import Chebyshev
from scipy.special import roots_legendre

from .model import OperatorModel, make_model, semiclassical_witness

CENTER_TOL = 1e-10
EIKONAL_TOL = 1e-10
TRANSPORT_TOL = 1e-8
FIT_NMAX = 2 ** 13
AUTO_TERMS_MAX = 60
MAX_QUAD_NODES = 2 ** 16


class PseudomodeError(RuntimeError):
    pass


class BranchFailure(PseudomodeError):
    pass


class CenterMismatch(PseudomodeError):
    pass


class DecayViolated(PseudomodeError):
    pass


class ResolutionExceeded(PseudomodeError):
    pass


class UnderResolved(PseudomodeError):
    pass


class OrderingViolated(ValueError):
    pass


class OutsideParabola(ValueError):
    pass


# ---------------------------------------------------------------------------
# Chebyshev technology

def standard_chop(coeffs, tol=2.2e-16):
    """Index at which a Chebyshev coefficient sequence has converged.

    Plateau detection on the monotone envelope of ``|coeffs|`` followed by a
    tilted-ruler cut, after Aurentz and Trefethen (2017).  Returns the number
    of coefficients to keep; ``len(coeffs)`` means not converged.
    """
    b = np.abs(np.asarray(coeffs))
    n = len(b)
    if n < 17:
        return n
    m = np.maximum.accumulate(b[::-1])[::-1]
    if m[0] == 0:
        return 1
    env = m / m[0]
    plateau = None
    for j in range(2, n + 1):
        j2 = int(round(1.25 * j + 5))
        if j2 > n:
            return n
        e1, e2 = env[j - 1], env[j2 - 1]
        r = 3 * (1 - math.log(e1) / math.log(tol)) if e1 > 0 else 0
        if e1 == 0 or e2 / e1 > r:
            plateau = j - 1
            break
    if env[plateau - 1] == 0:
        return plateau
    j3 = int((env >= tol ** (7 / 6)).sum())
    if j3 < j2:
        j2 = j3 + 1
        env[j2 - 1] = tol ** (7 / 6)
    cc = np.log10(env[:j2]) + np.linspace(0, (-1 / 3) * math.log10(tol), j2)
    d = int(np.argmin(cc)) + 1
    return max(d - 1, 1)


def _values_to_coeffs(v):
    # values at cos(pi k/(n-1)), k = 0..n-1  ->  Chebyshev coefficients
    n = len(v)
    ext = np.concatenate([v, v[-2:0:-1]])
    F = np.fft.fft(ext) / (n - 1)
    c = F[:n].copy()
    c[0] /= 2
    c[-1] /= 2
    return c if np.iscomplexobj(v) else c.real


def cheb_fit(f, a, b, *, tol=2.2e-16, nmax=FIT_NMAX, name="function"):
    """Adaptive Chebyshev interpolant of ``f`` on [a, b].

    Grid sizes 17, 33, 65, ... until :func:`standard_chop` detects
    convergence.  Raises ResolutionExceeded past ``nmax`` points.
    """
    n = 17
    while True:
        t = np.cos(np.pi * np.arange(n) / (n - 1))
        v = np.asarray(f(a + (b - a) * (t + 1) / 2), dtype=complex)
        if not np.all(np.isfinite(v)):
            raise ResolutionExceeded(f"{name}: non-finite samples")
        c = _values_to_coeffs(v)
        k = standard_chop(c, tol)
        if k < n:
            return Chebyshev(c[:k], domain=[a, b])
        if n >= nmax:
            noise = float(np.abs(c[-8:]).max() / max(np.abs(c).max(), 1e-300))
            raise ResolutionExceeded(f"{name}: no convergence with {n} points "
                                     f"(relative tail {noise:.2e})")
        n = 2 * n - 1


# ---------------------------------------------------------------------------
# phase

def _num_derivs(V):
    def d(x, V=V):
        x = np.asarray(x, dtype=float)
        s = 1e-5 * np.maximum(1.0, np.abs(x))
        return (V(x + s) - V(x - s)) / (2 * s), (V(x + s) - 2 * V(x) + V(x - s)) / s ** 2
    return d


@dataclass
class PhaseRecord:
    """Eikonal phase data on ``interval``.

    ``sign`` is -sgn(Im V'(x0)); ``dphi`` and ``phi`` are Chebyshev series
    of phi' and phi with phi(x0) = 0.
    """
    V: object
    dV: object
    d2V: object
    z: complex
    x0: float
    interval: tuple
    sign: float
    dphi: Chebyshev
    phi: Chebyshev
    ddphi0: complex
    min_abs_dphi: float
    eikonal_residual: float

    def dphi_exact(self, x):
        return self.sign * np.sqrt(self.z - self.V(x))

    def r(self, x):
        """sqrt(phi') on the continuous branch through x0."""
        return cmath.sqrt(self.sign) * (self.z - self.V(x)) ** 0.25

    def log_derivs(self, x):
        """r'/r and its derivative, for r = sqrt(phi')."""
        w = self.z - self.V(x)
        v1 = self.dV(x)
        q = -v1 / (4 * w)
        dq = -self.d2V(x) / (4 * w) - v1 ** 2 / (4 * w ** 2)
        return q, dq


def _branch_ok(V, z, xs, margin):
    w = z - V(xs)
    if np.any(np.abs(w) < margin):
        return False
    neg = w.real < 0
    cross = neg[:-1] & neg[1:] & (np.sign(w.imag[:-1]) != np.sign(w.imag[1:]))
    return not np.any(cross) and not np.any(neg & (w.imag == 0))


def default_interval(V, z, x0, half_width=0.8, samples=2001, *, strict=False, margin=1e-3):
    """x0 +- half_width, shrunk where sqrt(z - V) would leave its branch.

    By default the interval stops before z - V touches the closed negative
    half-line or comes within ``margin * |z - V(x0)|`` of zero.  With
    ``strict`` it stops where Re(z - V) < 0.1 |z - V(x0)|.
    """
    w0 = abs(z - V(np.array([x0]))[0])
    ends = []
    for direction in (-1.0, 1.0):
        xs = x0 + direction * np.linspace(0, half_width, samples)
        w = z - V(xs)
        if strict:
            bad = w.real < 0.1 * w0
        else:
            bad = np.abs(w) < margin * w0
            neg = w.real < 0
            bad[1:] |= neg[1:] & ((np.sign(w.imag[1:]) != np.sign(w.imag[:-1])) | (w.imag[1:] == 0))
        stop = np.nonzero(bad)[0]
        k = samples - 1 if len(stop) == 0 else max(stop[0] - 1, 1)
        ends.append(xs[k])
    return (float(ends[0]), float(ends[1]))


def phase_build(V, z, x0, interval=None, *, dV=None, d2V=None, sign=None,
                strict=False) -> PhaseRecord:
    """Eikonal phase phi with phi'^2 + V = z and phi(x0) = 0.

    Parameters
    ----------
    V, dV, d2V : callables
        Potential and its first two derivatives (finite differences if
        omitted).
    sign : {+1, -1}, optional
        Branch sign of phi'; defaults to -sgn(Im V'(x0)).
    strict : bool
        Require Re(z - V) > 0 on the interval.  By default only continuity
        of the principal square root is required.
    """
    z = complex(z)
    x0 = float(x0)
    if dV is None or d2V is None:
        nd = _num_derivs(V)
        dV = dV or (lambda x: nd(x)[0])
        d2V = d2V or (lambda x: nd(x)[1])
    Vv = lambda x: np.asarray(V(np.asarray(x)) + 0j, dtype=complex)  # noqa: E731
    w0 = z - Vv(np.array([x0]))[0]
    if abs(w0.imag) > CENTER_TOL * max(1.0, abs(z)):
        raise CenterMismatch(f"Im(z - V(x0)) = {w0.imag:.3e} exceeds {CENTER_TOL:g}")
    if w0.real <= 0:
        raise BranchFailure(f"Re(z - V(x0)) = {w0.real:.3e} <= 0")
    dv0 = complex(np.asarray(dV(np.array([x0])))[0])
    if sign is None:
        if dv0.imag == 0:
            raise DecayViolated("Im V'(x0) = 0; supply the branch sign explicitly")
        sign = -math.copysign(1.0, dv0.imag)
    if interval is None:
        interval = default_interval(Vv, z, x0, strict=strict)
    a, b = map(float, interval)
    if not a < x0 < b:
        raise ValueError("x0 must lie inside the interval")
    xs = np.linspace(a, b, 4001)
    if strict:
        if np.any((z - Vv(xs)).real <= 0):
            raise BranchFailure("Re(z - V) <= 0 on the interval")
    elif not _branch_ok(Vv, z, xs, 0.0):
        raise BranchFailure("z - V meets the branch cut of the square root on the interval")
    dphi0 = sign * cmath.sqrt(w0)
    ddphi0 = -dv0 / (2 * dphi0)
    if not ddphi0.imag > 0:
        raise DecayViolated(f"Im phi''(x0) = {ddphi0.imag:.3e} is not positive")
    dphi = cheb_fit(lambda x: sign * np.sqrt(z - Vv(x)), a, b, name="phi'")
    phi = dphi.integ(lbnd=x0)
    exact = sign * np.sqrt(z - Vv(xs))
    eik = float(np.max(np.abs(dphi(xs) ** 2 + Vv(xs) - z)))
    return PhaseRecord(Vv, lambda x: np.asarray(dV(x), dtype=complex),
                       lambda x: np.asarray(d2V(x), dtype=complex) + 0 * np.asarray(x), z, x0,
                       (a, b), float(sign), dphi, phi, ddphi0, float(np.min(np.abs(exact))), eik)


# ---------------------------------------------------------------------------
# transport

@dataclass
class AmplitudeRecord:
    """Amplitudes a_0..a_J with a_j = I_j / r for j >= 1, I_j' = g_{j-1}."""
    phase: PhaseRecord
    g: list
    dg: list
    I: list
    transport_residuals: list = field(default_factory=list)

    @property
    def J(self):
        return len(self.I)

    def amp(self, j, x, der=0):
        """a_j or its first/second derivative at x."""
        ph = self.phase
        q, dq = ph.log_derivs(x)
        r = ph.r(x)
        if j == 0:
            r0 = ph.r(np.array([ph.x0]))[0]
            a = r0 / r
            if der == 0:
                return a
            a1 = -q * a
            return a1 if der == 1 else -dq * a - q * a1
        g = self.g[j - 1](x)
        a = self.I[j - 1](x) / r
        if der == 0:
            return a
        a1 = g / r - q * a
        if der == 1:
            return a1
        return self.dg[j - 1](x) / r - q * g / r - dq * a - q * a1

    def defect(self, j, x):
        """r (g_{j-1} - i a_{j-1}'' / (2 r)): half the transport-equation residual."""
        r = self.phase.r(x)
        return r * self.g[j - 1](x) - 0.5j * self.amp(j - 1, x, 2)

    def extend(self, J):
        ph = self.phase
        a, b = ph.interval
        while len(self.I) < J:
            j = len(self.I)
            g = cheb_fit(lambda x, j=j: 0.5j * self.amp(j, x, 2) / ph.r(x), a, b, name=f"a_{j + 1}")
            self.g.append(g)
            self.dg.append(g.deriv())
            self.I.append(g.integ(lbnd=ph.x0))
        return self


def transport_amplitudes(phase: PhaseRecord, J: int, *, check=True) -> AmplitudeRecord:
    """Amplitudes a_0..a_J from the transport recursion.

    a_0 = sqrt(phi'(x0)/phi'(x)) and
    a_{j+1}(x) = phi'(x)^{-1/2} int_{x0}^x i a_j''(y) / (2 sqrt(phi'(y))) dy.

    With ``check`` each a_j is substituted back into
    2 phi' a_j' + phi'' a_j = i a_{j-1}'' and the residual relative to
    max|a_j| must be at most 1e-8.
    """
    if J < 0:
        raise ValueError("J >= 0 required")
    rec = AmplitudeRecord(phase, [], [], [])
    rec.extend(J)
    if check:
        rec.transport_residuals = transport_check(rec)
        bad = [(j, r) for j, r in enumerate(rec.transport_residuals) if r > TRANSPORT_TOL]
        if bad:
            j, r = bad[0]
            raise ResolutionExceeded(f"transport residual of a_{j} is {r:.2e} "
                                     f"(differentiation noise)")
    return rec


def transport_check(rec: AmplitudeRecord, samples=2001):
    """Relative transport-equation residuals of a_0..a_J on the interval."""
    ph = rec.phase
    x = np.linspace(*ph.interval, samples)
    dphi = ph.dphi_exact(x)
    ddphi = -ph.dV(x) / (2 * dphi)
    out = []
    for j in range(rec.J + 1):
        a = rec.amp(j, x)
        lhs = 2 * dphi * rec.amp(j, x, 1) + ddphi * a
        rhs = 0 if j == 0 else 1j * rec.amp(j - 1, x, 2)
        scale = max(np.abs(a).max(), np.abs(rhs).max() / max(np.abs(dphi).max(), 1e-300), 1e-300)
        out.append(float(np.abs(lhs - rhs).max() / scale))
    return out


def truncation_order(phase: PhaseRecord, h: float, R0: float | None = None, *,
                     C1: float | None = None, samples: int = 256) -> int:
    """N(h) = floor(1 / (e C1 h)).

    C1 = max(max|a_0|, (2/R0) max|1/phi'|) over the circle of radius R0
    around x0 (maximum principle), using the analytic continuations of a_0
    and 1/phi'.  R0 defaults to half the distance from x0 to the nearer
    interval end.
    """
    if C1 is None:
        a, b = phase.interval
        if R0 is None:
            R0 = 0.5 * min(phase.x0 - a, b - phase.x0)
        zs = phase.x0 + R0 * np.exp(2j * np.pi * np.arange(samples) / samples)
        w = phase.z - np.asarray(phase.V(zs), dtype=complex)
        dphi = phase.sign * np.sqrt(w)
        dphi0 = phase.sign * cmath.sqrt(phase.z - phase.V(np.array([phase.x0]))[0])
        a0 = np.sqrt(dphi0 / dphi)
        C1 = max(np.abs(a0).max(), 2 / R0 * np.abs(1 / dphi).max())
    return int(math.floor(1.0 / (math.e * C1 * h)))


# ---------------------------------------------------------------------------
# cutoff

def _smooth_step(t):
    """S(t) = e^{-1/t} / (e^{-1/t} + e^{-1/(1-t)}) with two derivatives."""
    t = np.asarray(t, dtype=float)
    out = np.zeros((3,) + t.shape)
    inside = (t > 0) & (t < 1)
    tt = t[inside]
    u = 1 / tt - 1 / (1 - tt)
    du = -1 / tt ** 2 - 1 / (1 - tt) ** 2
    d2u = 2 / tt ** 3 - 2 / (1 - tt) ** 3
    with np.errstate(over="ignore"):
        s = 1 / (1 + np.exp(u))
    ds = -s * (1 - s)
    d2s = -ds * (1 - 2 * s)
    out[0][inside] = s
    out[1][inside] = ds * du
    out[2][inside] = d2s * du ** 2 + ds * d2u
    out[0][t >= 1] = 1.0
    return out


@dataclass(frozen=True)
class Cutoff:
    """Smooth bump: 1 on [p1, p2], 0 outside [s1, s2]."""
    p1: float
    p2: float
    s1: float
    s2: float

    @property
    def plateau(self):
        return (self.p1, self.p2)

    @property
    def support(self):
        return (self.s1, self.s2)

    def derivs(self, x):
        """(chi, chi', chi'') at x."""
        x = np.asarray(x, dtype=float)
        res = np.zeros((3,) + x.shape)
        left = (x < self.p1) & (x > self.s1)
        right = (x > self.p2) & (x < self.s2)
        mid = (x >= self.p1) & (x <= self.p2)
        k = 1 / (self.p1 - self.s1)
        sl = _smooth_step((x[left] - self.s1) * k)
        res[0][left], res[1][left], res[2][left] = sl[0], sl[1] * k, sl[2] * k * k
        k = 1 / (self.s2 - self.p2)
        sr = _smooth_step((self.s2 - x[right]) * k)
        res[0][right], res[1][right], res[2][right] = sr[0], -sr[1] * k, sr[2] * k * k
        res[0][mid] = 1.0
        return res

    def __call__(self, x):
        return self.derivs(x)[0]


def cutoff_build(plateau, support) -> Cutoff:
    """Cutoff equal to one on ``plateau`` and supported in ``support``."""
    p1, p2 = map(float, plateau)
    s1, s2 = map(float, support)
    if not (s1 < p1 < p2 < s2):
        raise OrderingViolated(f"need s1 < p1 < p2 < s2, got {s1}, {p1}, {p2}, {s2}")
    return Cutoff(p1, p2, s1, s2)


def default_cutoff(x0, interval, ratio=0.75):
    """Support = interval, plateau the inner ``ratio`` of each half around x0."""
    a, b = interval
    return cutoff_build((x0 - ratio * (x0 - a), x0 + ratio * (b - x0)), (a, b))


# ---------------------------------------------------------------------------
# assembly and certification

def _gl_nodes(breaks, n):
    t, w = roots_legendre(n)
    xs, ws = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        if b > a:
            xs.append((a + b) / 2 + (b - a) / 2 * t)
            ws.append((b - a) / 2 * w)
    return np.concatenate(xs), np.concatenate(ws)


def _residual_row(amps: AmplitudeRecord, cut: Cutoff, h, Jmax, x, w):
    """Residual ratios for J = 0..Jmax on quadrature nodes (x, w)."""
    ph = amps.phase
    E = np.exp(1j * ph.phi(x) / h)
    dphi = ph.dphi_exact(x)
    ch = cut.derivs(x)
    a0 = [amps.amp(j, x, 0) for j in range(Jmax + 1)]
    a1 = [amps.amp(j, x, 1) for j in range(Jmax + 1)]
    a2 = [amps.amp(j, x, 2) for j in range(Jmax + 1)]
    A = np.zeros_like(E)
    A1 = np.zeros_like(E)
    D = np.zeros_like(E)
    out = np.empty(Jmax + 1)
    for J in range(Jmax + 1):
        A = A + h ** J * a0[J]
        A1 = A1 + h ** J * a1[J]
        if J >= 1:
            D = D - 2j * h ** (J + 1) * amps.defect(J, x)
        brk = -h ** (J + 2) * a2[J] + D
        Hu = E * (ch[0] * brk - h ** 2 * (ch[2] * A + 2 * ch[1] * (A1 + 1j * dphi * A / h)))
        u = E * ch[0] * A
        out[J] = math.sqrt(np.sum(w * np.abs(Hu) ** 2) / np.sum(w * np.abs(u) ** 2))
    return out


@dataclass
class Pseudomode:
    """A certified JWKB pseudomode.

    ``residual`` is ||(H - z) u|| / ||u|| for the operator the mode was
    built for (including any scalar prefactor of the model).
    """
    h: float
    z: complex
    x0: float
    interval: tuple
    phase: PhaseRecord
    amplitudes: AmplitudeRecord
    cutoff: Cutoff
    terms: int
    residual: float
    prefactor: complex = 1.0
    quad_points: int = 0
    model: OperatorModel | None = None
    residual_by_terms: np.ndarray | None = None
    min_abs_dphi: float = 0.0
    stability: float = 0.0

    @property
    def reduced_target(self):
        return self.phase.z

    def sample(self, x):
        """u(x) and (H - z) u(x) at real points x (zero outside the support)."""
        x = np.asarray(x, dtype=float)
        u = np.zeros(x.shape, complex)
        Hu = np.zeros(x.shape, complex)
        inside = (x > self.cutoff.s1) & (x < self.cutoff.s2)
        xi = x[inside]
        if len(xi):
            amps, h, J = self.amplitudes, self.h, self.terms - 1
            ph = self.phase
            E = np.exp(1j * ph.phi(xi) / h)
            ch = self.cutoff.derivs(xi)
            A = sum(h ** j * amps.amp(j, xi) for j in range(J + 1))
            A1 = sum(h ** j * amps.amp(j, xi, 1) for j in range(J + 1))
            D = sum(-2j * h ** (j + 1) * amps.defect(j, xi) for j in range(1, J + 1))
            brk = -h ** (J + 2) * amps.amp(J, xi, 2) + D
            dphi = ph.dphi_exact(xi)
            u[inside] = E * ch[0] * A
            Hu[inside] = self.prefactor * E * (
                ch[0] * brk - h ** 2 * (ch[2] * A + 2 * ch[1] * (A1 + 1j * dphi * A / h)))
        return u, Hu

    def summary(self):
        return {"h": self.h, "z": [self.z.real, self.z.imag], "x0": self.x0,
                "terms": self.terms, "residual": self.residual,
                "cutoff": {"plateau": list(self.cutoff.plateau),
                           "support": list(self.cutoff.support)},
                "interval": list(self.interval),
                "reduced_target": [self.phase.z.real, self.phase.z.imag],
                "prefactor": [self.prefactor.real, self.prefactor.imag],
                "quad_points": self.quad_points, "stability": self.stability,
                "model": None if self.model is None else self.model.to_dict()}

    def write_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=1)
        return str(path)

    def write_csv(self, path, n=2001):
        x = np.linspace(self.cutoff.s1, self.cutoff.s2, n)
        u, Hu = self.sample(x)
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["x", "re_u", "im_u", "re_image", "im_image"])
            for row in zip(x, u.real, u.imag, Hu.real, Hu.imag):
                wr.writerow([f"{v:.17g}" for v in row])
        return str(path)


def assemble_and_certify(phase: PhaseRecord, amplitudes: AmplitudeRecord, cutoff: Cutoff,
                         h: float, *, terms="auto", prefactor=1.0, z=None, model=None,
                         n_start=64, rtol=5e-4, max_terms=AUTO_TERMS_MAX) -> Pseudomode:
    """Certified residual ratio of chi e^{i phi/h} sum h^j a_j.

    Quadrature: Gauss-Legendre panels split at the cutoff breakpoints and
    x0, doubled until the residual is stable to ``rtol`` (3 significant
    digits) or the node count exceeds twice the oscillation limit of 10
    nodes per wavelength 2 pi h / |phi'|.  The last relative change is kept
    as ``stability``.

    ``terms`` is the number of amplitudes J + 1, or ``"auto"`` for the
    optimal truncation (smallest residual over J <= ``max_terms``).
    """
    a, b = phase.interval
    if cutoff.s1 < a - 1e-12 or cutoff.s2 > b + 1e-12:
        raise ValueError("cutoff support must lie inside the phase interval")
    auto = terms == "auto"
    Jmax = max_terms if auto else int(terms) - 1
    if Jmax < 0:
        raise ValueError("terms >= 1 required")
    amplitudes.extend(Jmax)
    breaks = sorted({cutoff.s1, cutoff.p1, phase.x0, cutoff.p2, cutoff.s2})
    xs = np.linspace(cutoff.s1, cutoff.s2, 2001)
    kmax = float(np.max(np.abs(phase.dphi_exact(xs)))) / h
    width = cutoff.s2 - cutoff.s1
    n_osc = int(10 * kmax * width / (2 * np.pi)) + 1
    n = n_start
    prev = None
    stability = np.inf
    while True:
        x, w = _gl_nodes(breaks, n)
        row = _residual_row(amplitudes, cutoff, h, Jmax, x, w)
        if not np.all(np.isfinite(row)):
            raise UnderResolved(f"non-finite residual with {len(x)} nodes")
        J = int(np.argmin(row)) if auto else Jmax
        val = row[J]
        if prev is not None:
            stability = abs(val - prev) / abs(val)
            if stability <= rtol or len(x) >= 2 * n_osc:
                break
        if len(x) > MAX_QUAD_NODES:
            raise UnderResolved(f"residual not stable with {len(x)} nodes "
                                f"(oscillation limit {n_osc})")
        prev = val
        n *= 2
    pre = complex(prefactor)
    z = phase.z * pre if z is None else complex(z)
    return Pseudomode(h=float(h), z=z, x0=phase.x0, interval=phase.interval, phase=phase,
                      amplitudes=amplitudes, cutoff=cutoff, terms=J + 1,
                      residual=abs(pre) * float(val), prefactor=pre, quad_points=len(x),
                      model=model, residual_by_terms=abs(pre) * row,
                      min_abs_dphi=phase.min_abs_dphi, stability=float(stability))


def build_pseudomode(model: OperatorModel, z: complex, *, terms=7, x0=None, interval=None,
                     cutoff=None, amplitudes: AmplitudeRecord | None = None,
                     strict=False) -> Pseudomode:
    """Pseudomode of a Schroedinger-type model at the (unreduced) target z.

    The target is divided by the model's prefactor, the base point is the
    semiclassical witness unless given, and the default interval/cutoff is
    x0 +- 0.8 with plateau x0 +- 0.6 (clipped to the square-root branch).  A
    given cutoff without an interval works on the cutoff's support.
    """
    if model.potential is None:
        raise PseudomodeError(f"{model.kind} has no Schroedinger form")
    w = model.reduce_target(z)
    if x0 is None:
        wit = semiclassical_witness(model, z)
        if wit is None:
            raise PseudomodeError(f"no semiclassical witness for z = {complex(z)}")
        x0 = wit[0]
    V = model.potential
    d = model.potential_derivs
    if interval is None and cutoff is not None:
        interval = cutoff.support
    if amplitudes is not None:
        phase = amplitudes.phase
    else:
        phase = phase_build(V, w, x0, interval,
                            dV=lambda x: d(x)[1], d2V=lambda x: d(x)[2], strict=strict)
    if cutoff is None:
        cutoff = default_cutoff(phase.x0, phase.interval)
    if amplitudes is None:
        J = AUTO_TERMS_MAX if terms == "auto" else int(terms) - 1
        amplitudes = transport_amplitudes(phase, J)
    return assemble_and_certify(phase, amplitudes, cutoff, model.h, terms=terms,
                                prefactor=model.prefactor, z=z, model=model)


# ---------------------------------------------------------------------------
# shifted oscillator

def shifted_pseudomode(z: complex, eps_margin: float = 0.1, terms=3, **kw) -> Pseudomode:
    """Pseudomode of -d^2/dx^2 + (x + i)^2 inside the parabola |Im z| <= 2 sqrt(Re z).

    With h = 1/Re z and t = Im z / Re z the problem becomes
    -h^2 d^2 + (y + i h^{1/2})^2 at target 1 + i t; the returned residual is
    converted back to the unscaled operator (factor 1/h), ``z`` is the
    unscaled target and ``h``/``x0`` refer to the scaled problem.
    """
    z = complex(z)
    if not 0 < eps_margin < 1:
        raise OutsideParabola("eps_margin must lie in (0, 1)")
    if z.real <= 0 or abs(z.imag) > 2 * (1 - eps_margin) * math.sqrt(z.real):
        raise OutsideParabola(f"|Im z| <= 2(1 - eps) sqrt(Re z) violated for z = {z}")
    h = 1.0 / z.real
    t = z.imag / z.real
    model = make_model("shifted_ho", {"h": h})
    pm = build_pseudomode(model, 1 + 1j * t, terms=terms, **kw)
    pm.residual = pm.residual / h
    if pm.residual_by_terms is not None:
        pm.residual_by_terms = pm.residual_by_terms / h
    pm.prefactor = pm.prefactor / h
    pm.z = z
    return pm


# ---------------------------------------------------------------------------
# scans

def fit_log_law(X, res):
    """Least squares of log(res) against X: (slope, intercept, R^2)."""
    X = np.asarray(X, dtype=float)
    y = np.log(np.asarray(res, dtype=float))
    A = np.column_stack([X, np.ones_like(X)])
    c, *_ = np.linalg.lstsq(A, y, rcond=None)
    ss = float(np.sum((y - A @ c) ** 2))
    st = float(np.sum((y - y.mean()) ** 2))
    return float(c[0]), float(c[1]), (1 - ss / st) if st > 0 else 1.0


@dataclass
class ResidualScan:
    h: np.ndarray
    residual: np.ndarray
    terms: np.ndarray
    fits: dict
    law: str

    def rows(self):
        return [{"h": float(h), "inv_h": 1 / float(h), "inv_sqrt_h": float(h) ** -0.5,
                 "residual": float(r), "terms": int(t)}
                for h, r, t in zip(self.h, self.residual, self.terms)]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["h", "inv_h", "inv_sqrt_h", "residual", "terms"])
            for r in self.rows():
                wr.writerow([f"{r['h']:.17g}", f"{r['inv_h']:.17g}", f"{r['inv_sqrt_h']:.17g}",
                             f"{r['residual']:.17g}", r["terms"]])
        return str(path)

    def to_dict(self):
        return {"law": self.law, "fits": self.fits, "rows": self.rows()}


_H_INDEPENDENT = ("airy", "cubic", "rotated_ho")


def residual_scan(kind: str, params: dict, z_of_h, h_list, terms=7, *, law="1/h",
                  x0=None, interval=None, cutoff=None, workers=None) -> ResidualScan:
    """Certified residuals over a list of h with log-linear fits.

    ``z_of_h(h)`` gives the (unreduced) target.  Both the 1/h and 1/sqrt(h)
    laws are fitted whenever at least three h values are given; ``law``
    names the one reported as primary.  For models whose reduced potential
    does not depend on h and a fixed target, phase and amplitudes are built
    once and reused.
    """
    hs = np.asarray(h_list, dtype=float)
    if np.any(hs <= 0) or np.any(np.diff(hs) >= 0):
        raise ValueError("h_list must be positive and decreasing")
    zs = [complex(z_of_h(h)) for h in hs]
    models = [make_model(kind, {**params, "h": float(h)}) for h in hs]
    shared = None
    if kind in _H_INDEPENDENT and len(set(zs)) == 1:
        m0 = models[0]
        w = m0.reduce_target(zs[0])
        xx = x0
        if xx is None:
            wit = semiclassical_witness(m0, zs[0])
            if wit is None:
                raise PseudomodeError(f"no semiclassical witness for z = {zs[0]}")
            xx = wit[0]
        d = m0.potential_derivs
        ph = phase_build(m0.potential, w, xx, interval, dV=lambda x: d(x)[1],
                         d2V=lambda x: d(x)[2])
        J = AUTO_TERMS_MAX if terms == "auto" else int(terms) - 1
        shared = transport_amplitudes(ph, J)

    def one(k):
        return build_pseudomode(models[k], zs[k], terms=terms, x0=x0, interval=interval,
                                cutoff=cutoff, amplitudes=shared)
    if workers and workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            modes = list(ex.map(one, range(len(hs))))
    else:
        modes = [one(k) for k in range(len(hs))]
    res = np.array([m.residual for m in modes])
    fits = {}
    if len(hs) >= 3:
        for name, X in (("1/h", 1 / hs), ("1/sqrt(h)", hs ** -0.5)):
            s, c, r2 = fit_log_law(X, res)
            fits[name] = {"slope": s, "intercept": c, "r2": r2}
    return ResidualScan(hs, res, np.array([m.terms for m in modes]), fits, law)


# ---------------------------------------------------------------------------
# matrix realizations

def project_to_grid(pm: Pseudomode, op):
    """Samples of u at the grid nodes of a grid discretization."""
    if op.basis != "grid":
        raise ValueError("grid discretization required")
    u, _ = pm.sample(op.nodes)
    return u


def project_to_hermite(pm: Pseudomode, N: int, n_quad: int = 4000, scale: float = 1.0):
    """Hermite coefficients <h_n, u> by Gauss-Legendre quadrature on the support.

    ``scale`` selects the dilated basis s^{-1/2} h_n(x/s).
    """
    from .discretize import hermite_functions
    x, w = _gl_nodes(np.linspace(pm.cutoff.s1, pm.cutoff.s2, 9), max(n_quad // 8, 64))
    u, _ = pm.sample(x)
    Hf = hermite_functions(N, x / scale) / math.sqrt(scale)
    return Hf @ (w * u)


def matrix_residual(pm: Pseudomode, op):
    """||(H_N - z) c|| / ||c|| for the projection c of u onto ``op``'s basis."""
    if op.basis == "grid":
        c = project_to_grid(pm, op)
    else:
        c = project_to_hermite(pm, op.N, scale=getattr(op, "scale", 1.0))
    r = op.matrix @ c - pm.z * c
    return op.norm(r) / op.norm(c), c
