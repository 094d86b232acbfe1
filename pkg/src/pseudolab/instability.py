"""Spectral instability experiments.

Random eigenvalue clouds against computed pseudospectra, rank-one
perturbations built from pseudomodes, eigenvalue collision sweeps for the
perturbed oscillator, semigroup norms and translation diagnostics for the
Airy operator.
"""
from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import scipy.linalg as sl
import scipy.sparse.linalg as sla
from scipy.optimize import linear_sum_assignment

from .discretize import DiscretizedOperator, grid_assemble, perturbed_assemble
from .model import make_model
from .resolvent import (DEFAULT_LEVELS, PseudospectrumGrid, growth_exponent_fit,
                        numerical_range_boundary, real_axis_crossings, resolvent_norm)


class ResidualTooLarge(ValueError):
    pass


class NotAccretive(UserWarning):
    pass


def _weights(op):
    return np.ones(op.N) if op.weights is None else np.asarray(op.weights, dtype=float)


def _workers(workers):
    return 1 if workers is None else max(int(workers), 1)


# ---------------------------------------------------------------------------
# random clouds

@dataclass
class PerturbationExperiment:
    """Eigenvalues of base + V over seeded random V with ||V|| = 0.99 epsilon.

    ``cloud`` holds all perturbed eigenvalues, ``sample_index`` the sample
    each came from and ``norms`` the realized operator norm of every V.
    """
    base: DiscretizedOperator
    epsilon: float
    samples: int
    cloud: np.ndarray
    seed: int
    sample_index: np.ndarray
    norms: np.ndarray
    base_eigenvalues: np.ndarray = field(default=None, repr=False)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["re", "im", "sample_index"])
            for z, k in zip(self.cloud, self.sample_index):
                wr.writerow([f"{z.real:.17g}", f"{z.imag:.17g}", int(k)])
        return str(path)

    def metadata(self):
        return {"epsilon": self.epsilon, "samples": self.samples, "seed": self.seed,
                "points": int(len(self.cloud)), "max_norm": float(self.norms.max()),
                "base": self.base.metadata()}

    def default_region(self, margin=0.05):
        """Bounding box of cloud and base spectrum, padded by ``margin``."""
        pts = np.concatenate([self.cloud, self.base_eigenvalues])
        x0, x1 = pts.real.min(), pts.real.max()
        y0, y1 = pts.imag.min(), pts.imag.max()
        dx = max(x1 - x0, 1.0) * margin
        dy = max(y1 - y0, 1.0) * margin
        return (float(x0 - dx), float(x1 + dx), float(y0 - dy), float(y1 + dy))

    def containment(self, grid: PseudospectrumGrid, *, slack=0.1, refine_depth=14,
                    precision="auto"):
        """Check that every cloud point lies in the computed sigma_eps region.

        A point passes when the value of the log10 resolvent-norm grid,
        bilinearly interpolated, reaches log10(1/epsilon) - slack.  Three
        figures are reported:

        ``interpolated``
            fraction passing on the grid as given;
        ``with_floor``
            the same with the interpolant raised to the exact lower bound
            ||R(z)|| >= 1/(dist(z, sigma) + backward error);
        ``refined``
            after local dyadic refinement of the grid cell holding each
            failing point, up to ``refine_depth`` halvings, with new corner
            values from direct resolvent evaluations.

        Near well-conditioned eigenvalues the sigma_eps components are
        disks of radius about eps, far below any practical grid spacing,
        so only the refined figure can resolve them.
        """
        target = math.log10(1.0 / self.epsilon) - slack
        z = self.cloud
        interp = np.asarray(grid.interpolate(z), dtype=float)
        ok_interp = np.isfinite(interp) & (interp >= target)
        lam = self.base_eigenvalues
        back = np.finfo(float).eps * self.base.norm_estimate * self.base.N
        dist = np.abs(z[:, None] - lam[None, :]).min(axis=1) + back
        floor = -np.log10(dist)
        val = np.where(np.isfinite(interp), np.maximum(interp, floor), floor)
        ok_floor = val >= target
        refined = ok_floor.copy()
        depth_used = np.zeros(len(z), dtype=int)
        x, y = grid.re, grid.im
        dx, dy = x[1] - x[0], y[1] - y[0]
        cache = {}

        def value(p):
            if p not in cache:
                cache[p] = math.log10(resolvent_norm(self.base, p, precision=precision))
            return cache[p]

        for k in np.nonzero(~ok_floor)[0]:
            p = complex(z[k])
            i = min(max(int((p.real - x[0]) // dx), 0), len(x) - 2)
            j = min(max(int((p.imag - y[0]) // dy), 0), len(y) - 2)
            ax, ay, wx, wy = x[i], y[j], dx, dy
            for d in range(1, refine_depth + 1):
                wx, wy = wx / 2, wy / 2
                ax += wx * min(max(math.floor((p.real - ax) / wx), 0), 1)
                ay += wy * min(max(math.floor((p.imag - ay) / wy), 0), 1)
                tx = (p.real - ax) / wx
                ty = (p.imag - ay) / wy
                c = [value(complex(ax + a * wx, ay + b * wy)) for b in (0, 1) for a in (0, 1)]
                v = ((1 - tx) * (1 - ty) * c[0] + tx * (1 - ty) * c[1]
                     + (1 - tx) * ty * c[2] + tx * ty * c[3])
                depth_used[k] = d
                if max(v, floor[k]) >= target:
                    refined[k] = True
                    break
        n = len(z)
        return {"points": n, "target_log10": target, "slack": slack,
                "interpolated": float(ok_interp.mean()) if n else 1.0,
                "with_floor": float(ok_floor.mean()) if n else 1.0,
                "refined": float(refined.mean()) if n else 1.0,
                "refined_points": int((~ok_floor).sum()),
                "max_depth": int(depth_used.max()) if n else 0,
                "direct_evaluations": len(cache),
                "failures": [complex(v) for v in z[~refined]]}


def _draw(base, epsilon, seed, i):
    rng = np.random.default_rng([int(seed), int(i)])
    n = base.N
    G = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / math.sqrt(2)
    G *= 0.99 * epsilon / np.linalg.norm(G, 2)
    s = np.sqrt(_weights(base))
    # G is drawn in orthonormal coordinates; map to the weighted ones
    V = G / s[:, None] * s[None, :]
    lam = sl.eigvals(base.matrix + V)
    return lam, float(np.linalg.norm(s[:, None] * V / s[None, :], 2))


def random_cloud(base: DiscretizedOperator, epsilon: float, samples: int, seed: int, *,
                 workers=None) -> PerturbationExperiment:
    """Seeded Ginibre perturbations rescaled to norm 0.99 epsilon.

    Sample i uses the generator ``default_rng([seed, i])``, so results do
    not depend on the number of workers.
    """
    if not epsilon > 0:
        raise ValueError("epsilon > 0 required")
    if samples < 1:
        raise ValueError("samples >= 1 required")
    if seed is None:
        raise ValueError("a seed is required")
    with ThreadPoolExecutor(_workers(workers)) as ex:
        res = list(ex.map(lambda i: _draw(base, epsilon, seed, i), range(samples)))
    cloud = np.concatenate([r[0] for r in res])
    idx = np.repeat(np.arange(samples), [len(r[0]) for r in res])
    norms = np.array([r[1] for r in res])
    return PerturbationExperiment(base, float(epsilon), int(samples), cloud, int(seed), idx,
                                  norms, base_eigenvalues=sl.eigvals(base.matrix))


# ---------------------------------------------------------------------------
# rank-one perturbations

@dataclass
class RankOne:
    """V = -((H - z) psi) <psi, .> / ||psi||^2 and its verification data."""
    V: np.ndarray
    z: complex
    psi: np.ndarray
    norm: float
    identity_error: float
    eigenvalue: complex
    eigenvalue_error: float
    base_distance: float

    def summary(self):
        return {"z": [self.z.real, self.z.imag], "norm": self.norm,
                "identity_error": self.identity_error,
                "eigenvalue": [self.eigenvalue.real, self.eigenvalue.imag],
                "eigenvalue_error": self.eigenvalue_error,
                "base_distance": self.base_distance}


def rank_one_from_pseudomode(base: DiscretizedOperator, z: complex, psi, *, epsilon=None,
                             rtol=1e-8) -> RankOne:
    """Rank-one V with (base + V) psi = z psi.

    ``psi`` is a coordinate vector in the base's basis.  ||V|| equals
    ||(H - z) psi|| / ||psi||; ``ResidualTooLarge`` is raised when this is
    not below ``epsilon``.  The eigenvalue z of base + V is confirmed by an
    eigen-solve to ``rtol`` relative.
    """
    z = complex(z)
    psi = np.asarray(psi, dtype=complex)
    w = _weights(base)
    H = base.matrix
    r = H @ psi - z * psi
    npsi2 = float(np.sum(w * np.abs(psi) ** 2))
    if npsi2 == 0:
        raise ValueError("psi = 0")
    nrm = math.sqrt(float(np.sum(w * np.abs(r) ** 2)) / npsi2)
    if epsilon is not None and not nrm < epsilon:
        raise ResidualTooLarge(f"||(H - z) psi|| / ||psi|| = {nrm:.3e} >= {epsilon:.3e}")
    V = -np.outer(r, np.conj(psi) * w) / npsi2
    M = H + V
    ident = float(np.linalg.norm(M @ psi - z * psi) / (np.linalg.norm(H, 1) * np.linalg.norm(psi)))
    lam = sl.eigvals(M)
    k = int(np.argmin(np.abs(lam - z)))
    err = abs(lam[k] - z) / max(abs(z), 1.0)
    if not err <= rtol:
        raise ResidualTooLarge(f"eigenvalue {z} not reproduced: nearest {lam[k]} "
                               f"(relative error {err:.2e})")
    dist = float(np.abs(sl.eigvals(H) - z).min())
    return RankOne(V, z, psi, nrm, ident, complex(lam[k]), float(err), dist)


# ---------------------------------------------------------------------------
# collision sweep for the perturbed oscillator

@dataclass
class JordanSweep:
    """Lowest eigenvalues along an epsilon sweep and the collision bracket."""
    epsilon: np.ndarray
    eigenvalues: np.ndarray        # (len(epsilon), count)
    pairing: np.ndarray            # (len(epsilon), count) biorthogonal defect
    bracket: tuple | None
    N: int

    @property
    def defect_minimum(self):
        k = int(np.argmin(self.pairing[:, 0]))
        return float(self.epsilon[k]), float(self.pairing[k, 0])

    def minimum_in_bracket(self):
        if self.bracket is None:
            return False
        e, _ = self.defect_minimum
        return self.bracket[0] <= e <= self.bracket[1]

    def report(self):
        e, d = self.defect_minimum
        return {"N": self.N, "bracket": None if self.bracket is None else list(self.bracket),
                "width": None if self.bracket is None else self.bracket[1] - self.bracket[0],
                "defect_minimum": {"epsilon": e, "pairing": d},
                "minimum_in_bracket": self.minimum_in_bracket()}

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["epsilon", "k", "re_lambda", "im_lambda", "pairing_defect"])
            for i, e in enumerate(self.epsilon):
                for k, lam in enumerate(self.eigenvalues[i]):
                    wr.writerow([f"{e:.17g}", k, f"{lam.real:.17g}", f"{lam.imag:.17g}",
                                 f"{self.pairing[i, k]:.17g}"])
        return str(path)


def _lowest(op, count):
    wr, vr = sl.eig(op.matrix)
    wl, vl = sl.eig(op.matrix.conj().T)
    order = np.lexsort((wr.imag, wr.real))[:count]
    lam = wr[order]
    wlc = np.conj(wl)
    pair = np.empty(count)
    for k, j in enumerate(order):
        m = int(np.argmin(np.abs(wlc - wr[j])))
        psi, phi = vr[:, j], vl[:, m]
        pair[k] = abs(np.vdot(phi, psi)) / (np.linalg.norm(phi) * np.linalg.norm(psi))
    return lam, pair


def jordan_sweep(epsilon_list, N: int = 200, *, count=6, imag_tol=1e-8, workers=None) -> JordanSweep:
    """Track the ``count`` lowest eigenvalues of the perturbed oscillator.

    The collision bracket is [last epsilon where the two lowest are real,
    first epsilon where one of them is complex]; realness means
    |Im lambda| <= imag_tol * max(1, |lambda|).  No refinement is done, so
    the bracket width is the sweep spacing.
    """
    eps = np.asarray(epsilon_list, dtype=float)
    if len(eps) < 2 or np.any(eps < 0) or np.any(np.diff(eps) <= 0):
        raise ValueError("epsilon_list must be increasing and non-negative")

    def one(e):
        return _lowest(perturbed_assemble(make_model("perturbed_ho", {"epsilon": float(e)}), N),
                       count)
    with ThreadPoolExecutor(_workers(workers)) as ex:
        res = list(ex.map(one, eps))
    lam = np.array([r[0] for r in res])
    pair = np.array([r[1] for r in res])
    low = lam[:, :2]
    cplx = np.any(np.abs(low.imag) > imag_tol * np.maximum(1.0, np.abs(low)), axis=1)
    bracket = None
    first = np.nonzero(cplx)[0]
    if len(first) and first[0] > 0:
        bracket = (float(eps[first[0] - 1]), float(eps[first[0]]))
    return JordanSweep(eps, lam, pair, bracket, int(N))


# ---------------------------------------------------------------------------
# semigroup

@dataclass
class SemigroupNorms:
    t: np.ndarray
    norm: np.ndarray
    reference: np.ndarray | None
    accretive: bool
    step: float | None

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["t", "norm", "reference"])
            for i, t in enumerate(self.t):
                ref = "" if self.reference is None else f"{self.reference[i]:.17g}"
                wr.writerow([f"{t:.17g}", f"{self.norm[i]:.17g}", ref])
        return str(path)

    def submultiplicative(self, rtol=1e-8):
        """||e^{-(t+s)H}|| <= ||e^{-tH}|| ||e^{-sH}|| on computed pairs."""
        d = {round(float(t), 12): float(n) for t, n in zip(self.t, self.norm)}
        for a in d:
            for b in d:
                c = round(a + b, 12)
                if c in d and d[c] > d[a] * d[b] * (1 + rtol):
                    return False
        return True


def _common_step(ts, max_den=64):
    fr = [Fraction(float(t)).limit_denominator(max_den) for t in ts if t > 0]
    if not fr or any(abs(float(f) - t) > 1e-12 * max(t, 1) for f, t in zip(fr, [t for t in ts if t > 0])):
        return None
    g = fr[0]
    for f in fr[1:]:
        g = Fraction(math.gcd(g.numerator * f.denominator, f.numerator * g.denominator),
                     g.denominator * f.denominator)
    return g


def _smax(E):
    if E.shape[0] <= 200:
        return float(np.linalg.norm(E, 2))
    return float(sla.svds(E, k=1, return_singular_vectors=False, tol=1e-12)[0])


def semigroup_norm(base: DiscretizedOperator, t_list, *, reference=None, max_powers=64,
                   workers=None) -> SemigroupNorms:
    """||exp(-tH)|| by Pade scaling-and-squaring and the largest singular value.

    When all times are integer multiples of a common step d (with at most
    ``max_powers`` multiples) exp(-dH) is formed once and the others follow
    as its powers, which is the squaring phase shared across times.
    A ``NotAccretive`` warning is issued when the numerical range leaves
    the closed right half-plane.  ``reference`` is an optional callable
    t -> expected norm.
    """
    ts = np.asarray(t_list, dtype=float)
    if np.any(ts < 0):
        raise ValueError("t >= 0 required")
    wmin = float(numerical_range_boundary(base, 128).real.min())
    accretive = wmin >= -1e-10 * base.norm_estimate
    if not accretive:
        warnings.warn(f"numerical range reaches Re = {wmin:.3e} < 0", NotAccretive)
    s = np.sqrt(_weights(base))
    A = s[:, None] * base.matrix / s[None, :]
    out = np.empty(len(ts))
    step = _common_step(ts)
    if step is not None and max(ts) / float(step) <= max_powers:
        d = float(step)
        E = sl.expm(-d * A)
        need = sorted({int(round(t / d)) for t in ts})
        powers = {0: np.eye(base.N, dtype=complex)}
        P = powers[0]
        for m in range(1, need[-1] + 1):
            P = P @ E if m > 1 else E
            if m in need:
                powers[m] = P
        vals = {m: (1.0 if m == 0 else _smax(powers[m])) for m in need}
        for i, t in enumerate(ts):
            out[i] = vals[int(round(t / d))]
        used = d
    else:
        def one(t):
            return 1.0 if t == 0 else _smax(sl.expm(-t * A))
        with ThreadPoolExecutor(_workers(workers)) as ex:
            out[:] = list(ex.map(one, ts))
        used = None
    ref = None if reference is None else np.array([reference(t) for t in ts])
    return SemigroupNorms(ts, out, ref, bool(accretive), used)


def airy_semigroup_reference(t):
    """Full-line Airy semigroup norm exp(-t^3/12)."""
    return math.exp(-t ** 3 / 12)


# ---------------------------------------------------------------------------
# Airy diagnostics

def airy_diagnostics(N: int = 1500, window=(-40.0, 40.0), *, shift=1.0, z_list=(6.0, 8.0, 10.0),
                     dz=3.0, levels=None, re_range=(0.0, 12.0), n_scan=200,
                     match_count=20) -> dict:
    """Translation, resolvent-invariance and growth diagnostics for -d^2 + ix.

    (i) The window is translated as psi -> psi(. + c), i.e. to
    (a - c, b - c); eigenvalues move by -ic.  The mean shift (trace) is
    exact; the ``match_count`` eigenvalues of smallest modulus are matched
    to the translated spectrum by optimal assignment.
    (ii) ||R(z)|| and ||R(z + i dz)|| are compared at each z in ``z_list``.
    (iii) Real-axis crossings of the levels are fitted to (log 1/eps)^p.
    """
    a, b = map(float, window)
    if abs(a + b) > 1e-12:
        raise ValueError("window must be symmetric")
    if N < 500:
        raise ValueError("N >= 500 required")
    m = make_model("airy", {})
    op = grid_assemble(m, a, b, N)
    rep = {"N": N, "window": [a, b], "shift": shift}
    w0 = sl.eigvals(op.matrix)
    if shift:
        op1 = grid_assemble(m, a - shift, b - shift, N)
        w1 = sl.eigvals(op1.matrix)
        idx = np.argsort(np.abs(w0))[:match_count]
        C = np.abs(w1[None, :] - (w0[idx, None] - 1j * shift))
        _, col = linear_sum_assignment(C)
        d = w1[col] - w0[idx]
        near = np.abs(w1[None, :] - w0[idx, None]).min(axis=1)
        med = complex(np.median(d.real), np.median(d.imag))
        rep["translation"] = {
            "trace_shift": complex(w1.mean() - w0.mean()),
            "median_matched_shift": med,
            "min_matched_modulus": float(np.abs(d).min()),
            "min_nearest_distance": float(near.min()),
            "median_nearest_distance": float(np.median(near)),
        }
    else:
        rep["translation"] = {"trace_shift": 0j, "median_matched_shift": 0j,
                              "min_matched_modulus": 0.0, "min_nearest_distance": 0.0,
                              "median_nearest_distance": 0.0}
    inv = []
    for z in z_list:
        r0 = resolvent_norm(op, complex(z), precision="extended")
        r1 = resolvent_norm(op, complex(z, dz), precision="extended")
        inv.append({"z": float(z), "norm": r0, "norm_shifted": r1, "rel_diff": abs(r1 / r0 - 1)})
    rep["invariance"] = inv
    lv = np.array(DEFAULT_LEVELS if levels is None else levels, dtype=float)
    cr = real_axis_crossings(op, lv, re_range, n_scan=n_scan)
    p, r2 = growth_exponent_fit(lv, cr)
    rep["growth"] = {"levels": lv.tolist(), "crossings": cr.tolist(), "exponent": p, "r2": r2,
                     "expected": 2 / 3}
    return rep
