"""Spectral-projection norms: exact (rotated oscillator), asymptotic and numeric."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sl

from . import _kernels
from .discretize import DiscretizedOperator
from .resolvent import ConvergenceFailure, InsufficientData


class DomainError(ValueError):
    pass


class DefectivePair(RuntimeError):
    pass


class AmbiguousPairing(RuntimeError):
    pass


@dataclass
class ProjectionSeries:
    """(k, log||P_k||) pairs with their origin.

    ``source`` is one of ``exact_rotated``, ``asymptotic_rotated`` or
    ``numeric``; ``params`` records theta or the discretization.
    """
    source: str
    k: np.ndarray
    log_norm: np.ndarray
    params: dict = field(default_factory=dict)
    eigenvalues: np.ndarray | None = None
    pairing: np.ndarray | None = None

    @property
    def entries(self):
        return list(zip(self.k.tolist(), self.log_norm.tolist()))

    def __len__(self):
        return len(self.k)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["k", "log_norm", "source"])
            for k, v in zip(self.k, self.log_norm):
                wr.writerow([int(k), f"{v:.17g}", self.source])
        return str(path)


# ---------------------------------------------------------------------------
# exact and asymptotic norms for the rotated oscillator

def legendre_log_series(kmax: int, x: float) -> np.ndarray:
    """log P_k(x), k = 0..kmax, by the scaled three-term recurrence."""
    x = float(x)
    if not x >= 1:
        raise DomainError(f"x = {x} < 1")
    return _kernels.legendre_log_series(int(kmax), x)


def legendre_log(k: int, x: float) -> float:
    """log P_k(x) for x >= 1."""
    if k < 0:
        raise DomainError("k >= 0 required")
    return float(legendre_log_series(k, x)[k])


def _check_theta(theta):
    if not abs(theta) < math.pi / 2:
        raise DomainError(f"|theta| < pi/2 required, got {theta}")


def rotated_norm_exact(theta: float, k):
    """log||P_k|| = -1/2 log cos(theta) + log P_k(1/cos(theta)).

    ``k`` may be an integer or an array of integers.
    """
    _check_theta(theta)
    c = math.cos(theta)
    ks = np.atleast_1d(np.asarray(k, dtype=int))
    if np.any(ks < 0):
        raise DomainError("k >= 0 required")
    series = legendre_log_series(int(ks.max()), 1.0 / c)
    out = -0.5 * math.log(c) + series[ks]
    return float(out[0]) if np.ndim(k) == 0 else out


def rotated_norm_asymptotic(theta: float, k):
    """Leading large-k term: ((1 + |sin|)/cos)^{k+1/2} / sqrt(2 pi k |sin|), in log form."""
    _check_theta(theta)
    s = abs(math.sin(theta))
    if s == 0:
        raise DomainError("asymptotic form undefined at theta = 0")
    k = np.asarray(k, dtype=float)
    if np.any(k < 1):
        raise DomainError("k >= 1 required")
    out = (k + 0.5) * math.log((1 + s) / math.cos(theta)) - 0.5 * np.log(2 * math.pi * k * s)
    return float(out) if out.ndim == 0 else out


def rate_limit(theta: float) -> float:
    """lim log||P_k|| / k = 1/2 log((1 + |sin|)/(1 - |sin|))."""
    _check_theta(theta)
    s = abs(math.sin(theta))
    return 0.5 * math.log((1 + s) / (1 - s))


def exact_series(theta: float, kmax: int, kmin: int = 0) -> ProjectionSeries:
    ks = np.arange(kmin, kmax + 1)
    return ProjectionSeries("exact_rotated", ks, rotated_norm_exact(theta, ks), {"theta": theta})


def asymptotic_series(theta: float, kmax: int, kmin: int = 1) -> ProjectionSeries:
    ks = np.arange(max(kmin, 1), kmax + 1)
    return ProjectionSeries("asymptotic_rotated", ks, rotated_norm_asymptotic(theta, ks),
                            {"theta": theta})


# ---------------------------------------------------------------------------
# numeric norms

@dataclass
class Biorthogonal:
    """Eigenvalues with paired right (psi) and left (phi) vectors, sorted by real part."""
    values: np.ndarray
    right: np.ndarray
    left: np.ndarray
    weights: np.ndarray

    @property
    def pairing(self):
        ip = np.abs(np.sum(np.conj(self.left) * self.right, axis=0))
        return ip / (np.linalg.norm(self.left, axis=0) * np.linalg.norm(self.right, axis=0))

    def norms(self):
        w = self.weights[:, None]
        nr = np.sqrt(np.sum(w * np.abs(self.right) ** 2, axis=0))
        nl = np.sqrt(np.sum(np.abs(self.left) ** 2 / w, axis=0))
        ip = np.abs(np.sum(np.conj(self.left) * self.right, axis=0))
        return nr * nl / ip

    def projection(self, k):
        """Matrix of P_k = psi_k <phi_k, .> / <phi_k, psi_k> in coordinates."""
        psi, phi = self.right[:, k], self.left[:, k]
        return np.outer(psi, phi.conj()) / np.vdot(phi, psi)

    def operator_norm(self, M):
        """L^2 norm of a coordinate matrix under the quadrature weights."""
        s = np.sqrt(self.weights)
        return float(np.linalg.norm(s[:, None] * M / s[None, :], 2))

    def partial_sum_norms(self, K):
        """||sum_{k<K'} P_k|| for K' = 1..K."""
        S = np.zeros((self.right.shape[0],) * 2, dtype=complex)
        out = []
        for k in range(K):
            S += self.projection(k)
            out.append(self.operator_norm(S))
        return np.array(out)


def biorthogonal_system(op: DiscretizedOperator, *, count=None, match_tol=1e-6) -> Biorthogonal:
    """Right and left eigensystems computed separately and matched by eigenvalue.

    The left system comes from the eigenvectors of H^*, whose eigenvalues are
    conjugated and matched to those of H.  A match is accepted only when a
    unique candidate lies within ``match_tol`` times the spectral range
    (checked for the first ``count`` eigenvalues by real part).
    """
    A = op.matrix
    try:
        wr, vr = sl.eig(A)
        wl, vl = sl.eig(A.conj().T)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise ConvergenceFailure(str(exc)) from exc
    order = np.lexsort((wr.imag, wr.real))
    wr, vr = wr[order], vr[:, order]
    wl = np.conj(wl)
    n = len(wr) if count is None else min(int(count), len(wr))
    span = float(np.ptp(wr.real) + np.ptp(wr.imag)) or 1.0
    thr = match_tol * span
    idx = np.empty(n, dtype=int)
    for k in range(n):
        d = np.abs(wl - wr[k])
        cand = np.nonzero(d <= thr)[0]
        if len(cand) != 1:
            if len(cand) == 0:
                raise AmbiguousPairing(f"no left eigenvalue within {thr:.2e} of {wr[k]:.6g}")
            raise AmbiguousPairing(f"{len(cand)} left eigenvalues within {thr:.2e} of "
                                   f"{wr[k]:.6g}; refusing to guess")
        idx[k] = cand[0]
    if len(set(idx.tolist())) != n:
        raise AmbiguousPairing("two right eigenvalues matched the same left eigenvalue")
    w = np.ones(op.N) if op.weights is None else np.asarray(op.weights, dtype=float)
    # left vectors act through the weighted inner product: phi_coord = W^{-1} phi
    return Biorthogonal(wr[:n], vr[:, :n], vl[:, idx], w)


def numeric_projection_norms(op: DiscretizedOperator, count: int, *, defect_tol=1e-10,
                             match_tol=1e-6, allow_untrusted=False) -> ProjectionSeries:
    """log||P_k|| for the ``count`` eigenvalues of smallest real part.

    ||P_k|| = ||psi_k|| ||phi_k|| / |<phi_k, psi_k>| with weighted norms.
    ``count`` must not exceed N/4 (the trusted part of the spectrum) unless
    ``allow_untrusted`` is set.
    """
    if count < 1:
        raise ValueError("count >= 1 required")
    if count > op.N / 4 and not allow_untrusted:
        raise ValueError(f"count {count} exceeds the trust region N/4 = {op.N / 4:g}")
    bio = biorthogonal_system(op, count=count, match_tol=match_tol)
    pairing = bio.pairing
    bad = np.nonzero(pairing < defect_tol)[0]
    if len(bad):
        k = int(bad[0])
        raise DefectivePair(f"pairing {pairing[k]:.2e} at k = {k} "
                            f"(lambda = {bio.values[k]:.6g}); Jordan block proximity")
    norms = bio.norms()
    return ProjectionSeries("numeric", np.arange(count), np.log(norms),
                            {"N": op.N, "basis": op.basis, "model": op.model_id},
                            eigenvalues=bio.values, pairing=pairing)


# ---------------------------------------------------------------------------
# rate fits

LAWS = ("linear_in_k", "linear_in_sqrt_k")


def rate_fit(series: ProjectionSeries, law: str = "linear_in_k", *, kmin=None, kmax=None,
             full=False):
    """Least-squares slope of log||P_k|| against k or sqrt(k).

    Returns (rate, R^2), or a dict with intercept, stderr and max residual
    when ``full``.
    """
    if law not in LAWS:
        raise ValueError(f"law must be one of {LAWS}")
    k = np.asarray(series.k, dtype=float)
    y = np.asarray(series.log_norm, dtype=float)
    sel = np.isfinite(y)
    if kmin is not None:
        sel &= k >= kmin
    if kmax is not None:
        sel &= k <= kmax
    k, y = k[sel], y[sel]
    if len(k) < 6:
        raise InsufficientData("rate fit needs at least 6 entries")
    X = k if law == "linear_in_k" else np.sqrt(k)
    A = np.column_stack([X, np.ones_like(X)])
    c, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ c
    ss = float(np.sum(res ** 2))
    st = float(np.sum((y - y.mean()) ** 2))
    r2 = 1 - ss / st if st > 0 else 1.0
    if not full:
        return float(c[0]), r2
    se = math.sqrt(ss / max(len(X) - 2, 1) / np.sum((X - X.mean()) ** 2))
    return {"law": law, "rate": float(c[0]), "intercept": float(c[1]), "r2": r2,
            "stderr": se, "max_residual": float(np.abs(res).max()), "n": int(len(X)),
            "k_range": [float(k.min()), float(k.max())], "source": series.source}


def write_rate_report(report: dict, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1)
    return str(path)
