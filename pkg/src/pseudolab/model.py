"""Operator models as symbolic data.

A model describes the semiclassical differential operator

    H_h = sum_j a_j(x) (h d/dx)^j,

with symbol f(x, xi) = sum_j a_j(x) (-i xi)^j.  Catalog models carry
closed-form coefficient derivatives; custom models fall back to central
differences.
"""
from __future__ import annotations

import cmath
import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Mapping, Sequence

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.optimize import brentq

KINDS = ("airy", "cubic", "rotated_ho", "shifted_ho", "swanson",
         "advection_diffusion", "perturbed_ho", "custom")

PT_SYMMETRIC = ("airy", "cubic", "shifted_ho", "swanson", "perturbed_ho")

WITNESS_RANGE = 50.0
WITNESS_TOL = 1e-12


class ModelError(ValueError):
    pass


class MissingParam(ModelError):
    pass


class ConstraintViolated(ModelError):
    pass


class EvaluationFailure(ModelError):
    pass


# parameters each kind requires (h is always optional, default 1)
_REQUIRED = {
    "airy": (),
    "cubic": (),
    "rotated_ho": ("theta",),
    "shifted_ho": (),
    "swanson": ("omega", "alpha", "beta"),
    "advection_diffusion": (),
    "perturbed_ho": ("epsilon",),
    "custom": ("coefficients",),
}

_SCALING = {
    "airy": (Fraction(3, 2), Fraction(1)),
    "cubic": (Fraction(5, 2), Fraction(3)),
    "rotated_ho": (Fraction(2), Fraction(2)),
    "shifted_ho": (Fraction(2), Fraction(2)),
    "swanson": (Fraction(2), Fraction(2)),
}


@dataclass(frozen=True)
class SymbolPoint:
    x: float
    xi: float
    value: complex
    bracket: float


@dataclass(frozen=True)
class OperatorModel:
    """Immutable description of a 1D differential operator.

    Attributes
    ----------
    kind : str
        One of :data:`KINDS`.
    params : mapping
        Named parameters; ``h`` is the semiclassical parameter.
    poly : tuple or None
        Coefficient polynomials in x (ascending powers), one per derivative
        order, when every coefficient is polynomial.
    prefactor : complex
        Scalar factored out of a Schroedinger form, ``H = prefactor*(-h^2 d^2 + V)``.
    """
    kind: str
    params: Mapping[str, object]
    coefficients: tuple
    coefficient_derivs: tuple
    scaling_exponent: Fraction | None = None
    scaling_prefactor: Fraction | None = None
    potential: Callable | None = None
    potential_derivs: Callable | None = None
    prefactor: complex = 1.0
    poly: tuple | None = None
    singular_points: tuple = ()
    notes: str = ""
    closed_form: bool = True

    @property
    def n(self) -> int:
        return len(self.coefficients) - 1

    @property
    def h(self) -> float:
        return float(self.params.get("h", 1.0))

    def coefficient(self, j, x):
        return self.coefficients[j](x)

    def reduce_target(self, z):
        """Map a target z for H to the target of the normal form -h^2 d^2 + V."""
        return complex(z) / self.prefactor

    def to_dict(self):
        params = {k: v for k, v in self.params.items() if k != "coefficients"}
        return {"kind": self.kind, "params": params, "n": self.n, "notes": self.notes}

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), **kw)


def _polyfun(c):
    c = np.asarray(c, dtype=complex)
    if len(c) == 0:
        c = np.zeros(1, dtype=complex)

    def f(x, c=c):
        x = np.asarray(x)
        val = P.polyval(x, c)
        return val if val.ndim else complex(val)
    return f


def _poly_model(kind, params, poly, *, prefactor=1.0, potential_poly=None, notes=""):
    poly = tuple(np.asarray(p, dtype=complex) for p in poly)
    coeffs = tuple(_polyfun(p) for p in poly)
    derivs = tuple(_polyfun(P.polyder(p)) if len(p) > 1 else _polyfun([0.0]) for p in poly)
    s, p = _SCALING.get(kind, (None, None))
    pot = potd = None
    if potential_poly is not None:
        vp = np.asarray(potential_poly, dtype=complex)
        v0, v1 = _polyfun(vp), _polyfun(P.polyder(vp) if len(vp) > 1 else [0.0])
        v2 = _polyfun(P.polyder(vp, 2) if len(vp) > 2 else [0.0])
        pot = v0

        def potd(x, v0=v0, v1=v1, v2=v2):
            return v0(x), v1(x), v2(x)
    return OperatorModel(kind=kind, params=dict(params), coefficients=coeffs,
                         coefficient_derivs=derivs, scaling_exponent=s, scaling_prefactor=p,
                         potential=pot, potential_derivs=potd, prefactor=complex(prefactor),
                         poly=poly, notes=notes)


def _perturbation(eps):
    def V(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return 1j * eps * (np.abs(x + 1) ** -0.5 - np.abs(x - 1) ** -0.5)

    def dV(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return 1j * eps * (-0.5 * np.sign(x + 1) * np.abs(x + 1) ** -1.5
                               + 0.5 * np.sign(x - 1) * np.abs(x - 1) ** -1.5)

    def d2V(x):
        x = np.asarray(x, dtype=float)
        with np.errstate(divide="ignore"):
            return 1j * eps * (0.75 * np.abs(x + 1) ** -2.5 - 0.75 * np.abs(x - 1) ** -2.5)
    return V, dV, d2V


def make_model(kind: str, params: Mapping | None = None) -> OperatorModel:
    """Build a catalog or custom operator model.

    Parameters
    ----------
    kind : str
        Model name, see :data:`KINDS`.
    params : mapping, optional
        Model parameters.  Every kind accepts ``h`` (default 1).

    Raises
    ------
    MissingParam, ConstraintViolated
    """
    params = dict(params or {})
    if kind not in KINDS:
        raise ModelError(f"unknown model kind {kind!r}")
    for name in _REQUIRED[kind]:
        if name not in params:
            raise MissingParam(f"{kind} requires parameter {name!r}")
    h = float(params.setdefault("h", 1.0))
    if not h > 0:
        raise ConstraintViolated("h must be positive")

    if kind == "airy":
        return _poly_model(kind, params, ([0, 1j], [0], [-1]), potential_poly=[0, 1j],
                           notes="-h^2 d^2 + i x")
    if kind == "cubic":
        return _poly_model(kind, params, ([0, 0, 0, 1j], [0], [-1]),
                           potential_poly=[0, 0, 0, 1j], notes="-h^2 d^2 + i x^3")
    if kind == "rotated_ho":
        th = float(params["theta"])
        if not abs(th) < math.pi / 2:
            raise ConstraintViolated(f"|theta| < pi/2 violated: |theta| = {abs(th)}")
        em, ep = cmath.exp(-1j * th), cmath.exp(1j * th)
        return _poly_model(kind, params, ([0, 0, ep], [0], [-em]), prefactor=em,
                           potential_poly=[0, 0, cmath.exp(2j * th)],
                           notes="e^{-i theta}(-h^2 d^2) + e^{i theta} x^2; "
                                 "reduction: divide by e^{-i theta}, potential e^{2 i theta} x^2")
    if kind == "shifted_ho":
        s = math.sqrt(h)
        vp = [-h, 2j * s, 1.0]  # (x + i sqrt(h))^2
        return _poly_model(kind, params, (vp, [0], [-1]), potential_poly=vp,
                           notes="-h^2 d^2 + (x + i h^{1/2})^2")
    if kind == "swanson":
        w, a, b = (float(params[k]) for k in ("omega", "alpha", "beta"))
        margin = w - abs(a + b)
        if not margin > 0:
            raise ConstraintViolated(f"omega - |alpha + beta| > 0 violated: {margin:.6g} <= 0")
        # -(w+a+b) d^2 + (w-a-b) x^2 + (a-b)(d x + x d), with d x = x d + 1
        return _poly_model(kind, params, ([(a - b) * h, 0, w - a - b], [0, 2 * (a - b)],
                                          [-(w + a + b)]),
                           notes="-(w+a+b) d^2 + (w-a-b) x^2 + (a-b)(d x + x d)")
    if kind == "advection_diffusion":
        if "L" in params and not float(params["L"]) > 0:
            raise ConstraintViolated("interval length L must be positive")
        return _poly_model(kind, params, ([0], [1.0], [-1]), notes="-d^2 + d on (0, L)")
    if kind == "perturbed_ho":
        eps = float(params["epsilon"])
        V, dV, d2V = _perturbation(eps)

        def pot(x, V=V):
            x = np.asarray(x, dtype=float)
            return x ** 2 + V(x)

        def potd(x, V=V, dV=dV, d2V=d2V):
            x = np.asarray(x, dtype=float)
            return x ** 2 + V(x), 2 * x + dV(x), 2 + d2V(x)
        zero = _polyfun([0.0])
        return OperatorModel(kind=kind, params=params,
                             coefficients=(pot, zero, _polyfun([-1.0])),
                             coefficient_derivs=(lambda x: potd(x)[1], zero, zero),
                             potential=pot, potential_derivs=potd, poly=None,
                             singular_points=(-1.0, 1.0),
                             notes="-d^2 + x^2 + i eps(|x+1|^{-1/2} - |x-1|^{-1/2})")
    # custom
    coeffs = tuple(params["coefficients"])
    if len(coeffs) < 2:
        raise ConstraintViolated("custom model needs n >= 1 (at least two coefficients)")
    lead = coeffs[-1]
    try:
        vals = np.array([complex(lead(t)) for t in np.linspace(-10, 10, 41)])
    except Exception as exc:  # noqa: BLE001 - user callable
        raise EvaluationFailure(f"leading coefficient failed: {exc}") from exc
    if np.any(np.abs(vals) == 0):
        raise ConstraintViolated("leading coefficient vanishes on the real line")
    derivs = tuple(_fd_derivative(c) for c in coeffs)
    pot = params.get("potential")
    potd = None
    if pot is not None:
        d1 = _fd_derivative(pot)
        d2 = _fd_derivative(d1)

        def potd(x, pot=pot, d1=d1, d2=d2):
            return pot(x), d1(x), d2(x)
    sc = params.get("scaling")
    s, p = (Fraction(sc[0]), Fraction(sc[1])) if sc else (None, None)
    return OperatorModel(kind=kind, params=params, coefficients=coeffs,
                         coefficient_derivs=derivs, scaling_exponent=s, scaling_prefactor=p,
                         potential=pot, potential_derivs=potd, closed_form=False,
                         notes=str(params.get("notes", "custom")))


def _fd_derivative(f):
    def df(x):
        x = np.asarray(x)
        step = 1e-6 * np.maximum(1.0, np.abs(x))
        return (np.asarray(f(x + step)) - np.asarray(f(x - step))) / (2 * step)
    return df


def model_from_dict(d: Mapping) -> OperatorModel:
    return make_model(d["kind"], dict(d.get("params", {})))


def model_from_json(text: str) -> OperatorModel:
    return model_from_dict(json.loads(text))


# ---------------------------------------------------------------------------
# symbols

def _eval(f, x, kind):
    try:
        return complex(f(x))
    except Exception as exc:  # noqa: BLE001 - user callable
        raise EvaluationFailure(f"{kind} coefficient failed at x={x}: {exc}") from exc


def symbol_value(model: OperatorModel, x, xi) -> complex:
    return sum(_eval(a, x, model.kind) * (-1j * xi) ** j for j, a in enumerate(model.coefficients))


def symbol_eval(model: OperatorModel, x: float, xi: float) -> SymbolPoint:
    """Symbol value and (1/2i){f, conj f} at a phase-space point.

    With f_xi = sum_j j a_j (-i)^j xi^(j-1) and f_x = sum_j a_j' (-i xi)^j the
    bracket reduces to Im(f_xi conj(f_x)).
    """
    x, xi = float(x), float(xi)
    val = 0j
    fxi = 0j
    fx = 0j
    for j, (a, da) in enumerate(zip(model.coefficients, model.coefficient_derivs)):
        aj = _eval(a, x, model.kind)
        daj = _eval(da, x, model.kind)
        val += aj * (-1j * xi) ** j
        fx += daj * (-1j * xi) ** j
        if j:
            fxi += aj * j * (-1j) ** j * xi ** (j - 1)
    # (1/2i)(f_xi conj(f)_x - f_x conj(f)_xi) = Im(f_xi * conj(f_x))
    bracket = (fxi * np.conj(fx)).imag
    return SymbolPoint(x=x, xi=xi, value=complex(val), bracket=float(bracket))


def _real_roots(g, lo, hi, n=20001):
    xs = np.linspace(lo, hi, n)
    vals = np.array([g(t) for t in xs])
    roots = list(xs[vals == 0])
    s = np.sign(vals)
    idx = np.nonzero(s[:-1] * s[1:] < 0)[0]
    for i in idx:
        roots.append(brentq(g, xs[i], xs[i + 1], xtol=WITNESS_TOL, rtol=4 * np.finfo(float).eps))
    return sorted(set(roots))


def semiclassical_witness(model: OperatorModel, z: complex):
    """A real point (x0, xi0) with f(x0, xi0) = z and positive bracket.

    Returns None when no such point exists.  Among several valid x0 the
    smallest |x0| wins, then the positive one.
    """
    z = complex(z)
    if model.potential is not None:
        w = model.reduce_target(z)
        V = model.potential
        dV = model.potential_derivs

        def g(t):
            return complex(V(t)).imag - w.imag
        cands = []
        for x0 in _real_roots(g, -WITNESS_RANGE, WITNESS_RANGE):
            v, v1, _ = dV(x0)
            re = (w - complex(v)).real
            if re > 0 and complex(v1).imag != 0:
                xi0 = -math.copysign(math.sqrt(re), complex(v1).imag)
                cands.append((abs(x0), -np.sign(x0), float(x0), xi0))
        if not cands:
            return None
        cands.sort()
        return cands[0][2], cands[0][3]
    if model.poly is not None and model.kind == "swanson":
        return _quadratic_witness(model, z)
    return _generic_witness(model, z)


def _quadratic_witness(model, z):
    # f(x, xi) = q(x, xi) + c with q homogeneous of degree 2 in (x, xi)
    c = complex(model.poly[0][0])
    target = z - c
    if target == 0:
        return None

    def q(t):
        return symbol_value(model, math.cos(t), math.sin(t)) - c

    def g(t):
        return (q(t) / target).imag
    cands = []
    for t in _real_roots(g, 0.0, 2 * math.pi, 4001):
        qt = q(t)
        if (qt / target).real <= 0:
            continue
        r = math.sqrt(abs(target) / abs(qt))
        x0, xi0 = r * math.cos(t), r * math.sin(t)
        if symbol_eval(model, x0, xi0).bracket > 0:
            cands.append((round(abs(x0), 12), -np.sign(x0), x0, xi0))
    if not cands:
        return None
    cands.sort()
    return cands[0][2], cands[0][3]


def _generic_witness(model, z):
    # scan the real-xi momentum for x-independent symbols is all we support
    if model.poly is not None and all(len(p) <= 1 for p in model.poly):
        return None  # symbol independent of x: bracket identically zero
    raise ModelError(f"witness search needs a potential or quadratic symbol ({model.kind})")


def semiclassical_rescale(model: OperatorModel, tau: float):
    """Return (model with h = tau^-s, prefactor tau^p).

    Pseudoeigenvalues z of the scaled operator correspond to tau^p z for the
    original one.
    """
    if tau < 1:
        raise ModelError("tau must be >= 1")
    if model.scaling_exponent is None:
        raise ModelError(f"{model.kind} has no power-law scaling")
    s, p = model.scaling_exponent, model.scaling_prefactor
    h = float(tau) ** (-float(s))
    params = dict(model.params)
    params["h"] = h * float(params.get("h", 1.0))
    return make_model(model.kind, params), float(tau) ** float(p)
