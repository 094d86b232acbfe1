import cmath
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pseudolab.model import (ConstraintViolated, MissingParam, ModelError, PT_SYMMETRIC,
                             make_model, model_from_json, semiclassical_rescale,
                             semiclassical_witness, symbol_eval, symbol_value)

finite = st.floats(-5, 5, allow_nan=False)


def test_airy_coefficients_and_scaling():
    m = make_model("airy", {})
    assert m.coefficient(2, 0.3) == -1
    assert m.coefficient(1, 0.3) == 0
    assert m.coefficient(0, 0.3) == pytest.approx(0.3j)
    assert float(m.scaling_exponent) == 1.5


def test_rotated_theta_zero_is_harmonic_oscillator():
    m = make_model("rotated_ho", {"theta": 0.0})
    assert m.coefficient(0, 2.0) == pytest.approx(4.0)
    assert m.coefficient(2, 2.0) == pytest.approx(-1.0)
    assert m.prefactor == 1


def test_constraints():
    with pytest.raises(ConstraintViolated):
        make_model("swanson", {"omega": 1, "alpha": 0.6, "beta": 0.5})
    with pytest.raises(ConstraintViolated):
        make_model("rotated_ho", {"theta": 2.0})
    with pytest.raises(MissingParam):
        make_model("rotated_ho", {})
    with pytest.raises(ModelError):
        make_model("nope", {})


def test_symbol_examples():
    a = make_model("airy", {})
    p = symbol_eval(a, 0.0, 1.0)
    assert p.value == pytest.approx(1.0)
    assert p.bracket == pytest.approx(-2.0)
    assert symbol_eval(a, 0.0, -1.0).bracket == pytest.approx(2.0)
    c = symbol_eval(make_model("cubic", {}), 1.0, 0.0)
    assert c.value == pytest.approx(1j) and c.bracket == 0
    r = symbol_eval(make_model("rotated_ho", {"theta": 0.0}), 0.7, -1.3)
    assert r.bracket == pytest.approx(0.0, abs=1e-14)


def test_witness_examples():
    x0, xi0 = semiclassical_witness(make_model("airy", {}), 1.0)
    assert x0 == pytest.approx(0.0, abs=1e-12) and xi0 == pytest.approx(-1.0)
    m = make_model("rotated_ho", {"theta": math.pi / 4})
    x0, xi0 = semiclassical_witness(m, cmath.exp(-1j * math.pi / 4) * (0.5 + 1j))
    assert x0 == pytest.approx(1.0) and xi0 ** 2 == pytest.approx(0.5)
    assert semiclassical_witness(make_model("cubic", {}), -1.0) is None


def test_rescale_examples():
    m, p = semiclassical_rescale(make_model("airy", {}), 100.0)
    assert m.h == pytest.approx(1e-3) and p == pytest.approx(100.0)
    m, p = semiclassical_rescale(make_model("cubic", {}), 4.0)
    assert m.h == pytest.approx(1 / 32) and p == pytest.approx(64.0)
    m, p = semiclassical_rescale(make_model("rotated_ho", {"theta": 0.3}), 1.0)
    assert m.h == 1.0 and p == 1.0


def test_json_round_trip():
    m = make_model("swanson", {"omega": 2, "alpha": 0.5, "beta": 0.25})
    m2 = model_from_json(m.to_json())
    assert m2.to_dict() == m.to_dict()
    assert symbol_value(m2, 0.3, 0.4) == symbol_value(m, 0.3, 0.4)


@settings(max_examples=60, deadline=None)
@given(finite, finite)
def test_symbol_matches_polynomial(x, xi):
    for kind, params in [("airy", {}), ("cubic", {}), ("rotated_ho", {"theta": 0.4}),
                         ("shifted_ho", {}), ("swanson", {"omega": 2, "alpha": 0.5, "beta": 0.25})]:
        m = make_model(kind, params)
        direct = sum(complex(np.polynomial.polynomial.polyval(x, c)) * (-1j * xi) ** j
                     for j, c in enumerate(m.poly))
        assert symbol_eval(m, x, xi).value == pytest.approx(direct, abs=1e-12 * (1 + abs(direct)))


@settings(max_examples=60, deadline=None)
@given(finite, finite)
def test_bracket_odd_in_xi(x, xi):
    for kind, params in [("airy", {}), ("cubic", {}), ("rotated_ho", {"theta": 0.4}), ("shifted_ho", {})]:
        m = make_model(kind, params)
        b1, b2 = symbol_eval(m, x, xi).bracket, symbol_eval(m, x, -xi).bracket
        assert b1 == pytest.approx(-b2, abs=1e-10 * (1 + abs(b1)))


@settings(max_examples=60, deadline=None)
@given(finite, finite)
def test_pt_symmetry_of_symbols(x, xi):
    # [H, PT] = 0 maps the symbol to conj f(-x, xi) in this convention
    for kind in PT_SYMMETRIC:
        params = {"swanson": {"omega": 2, "alpha": 0.5, "beta": 0.25},
                  "perturbed_ho": {"epsilon": 0.3}}.get(kind, {})
        m = make_model(kind, params)
        if kind == "perturbed_ho" and (abs(abs(x) - 1) < 1e-3):
            continue
        a, b = symbol_value(m, -x, xi), np.conj(symbol_value(m, x, xi))
        assert a == pytest.approx(b, abs=1e-10 * (1 + abs(a)))
        if kind != "swanson":
            # Schroedinger forms are even in xi, so the (-x, -xi) form agrees
            assert symbol_value(m, -x, -xi) == pytest.approx(b, abs=1e-10 * (1 + abs(a)))


@settings(max_examples=15, deadline=None)
@given(st.floats(-50, -1e-3), st.floats(-20, 20))
def test_no_witness_left_half_plane(re, im):
    z = complex(re, im)
    for kind, params in [("airy", {}), ("cubic", {}), ("rotated_ho", {"theta": 0.5}),
                         ("swanson", {"omega": 2, "alpha": 0.5, "beta": 0.25})]:
        assert semiclassical_witness(make_model(kind, params), z) is None
