import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pseudolab.discretize import from_matrix, grid_assemble, hermite_assemble
from pseudolab.model import make_model
from pseudolab.resolvent import (EmptyLevel, InsufficientData, contour_extract,
                                 contour_real_axis_crossing, distance_to_polygon, eigen,
                                 grid_from_function, growth_exponent_fit, hausdorff_distance,
                                 numerical_range_boundary, pseudospectrum_grid, resolvent_norm,
                                 smallest_singular)


def test_diagonal_resolvent():
    op = from_matrix(np.diag([1.0, 2.0]))
    assert resolvent_norm(op, 0) == pytest.approx(1.0, rel=1e-13)
    assert resolvent_norm(op, 1.5 + 0.5j) == pytest.approx(2 / math.sqrt(2), rel=1e-13)


def test_jordan_2x2_closed_form():
    # ||(J - z)^{-1}|| for J = [[0, 1], [0, 0]] has a closed form in |z|
    op = from_matrix([[0, 1], [0, 0]])
    for r in (0.1, 0.5, 2.0):
        a = r * r
        smin2 = (1 + 2 * a - math.sqrt(1 + 4 * a)) / 2
        assert resolvent_norm(op, r) == pytest.approx(1 / math.sqrt(smin2), rel=1e-12)


def test_methods_agree():
    op = grid_assemble(make_model("airy", {}), -10, 10, 300)
    z = 3 + 1j
    ref, _ = smallest_singular(op, z, method="svd")
    for m in ("band", "lu", "extended"):
        s, _ = smallest_singular(op, z, method=m)
        assert s == pytest.approx(ref, rel=1e-8)


def test_ceiling_at_eigenvalue():
    op = from_matrix(np.diag([1.0, 2.0]))
    assert resolvent_norm(op, 1.0) == 1e16
    assert resolvent_norm(op, 1.0, ceiling=1e10) == 1e10


def test_normal_operator_grid_is_distance():
    lam = np.array([0, 1 + 1j, -1 + 0.5j, 2])
    op = from_matrix(np.diag(lam))
    g = pseudospectrum_grid(op, (-2.05, 3.05, -1.05, 2.05), (21, 13), workers=1)
    Z = g.nodes
    d = np.abs(Z[..., None] - lam).min(axis=-1)
    assert np.abs(g.values - np.log10(1 / d)).max() < 1e-12


def test_grid_threads_match_serial():
    op = hermite_assemble(make_model("rotated_ho", {"theta": math.pi / 4}), 60)
    a = pseudospectrum_grid(op, (0, 10, -3, 3), (9, 7), workers=1)
    b = pseudospectrum_grid(op, (0, 10, -3, 3), (9, 7), workers=4)
    assert np.array_equal(a.values, b.values)


def test_adjoint_and_pt_mirrors():
    op = hermite_assemble(make_model("shifted_ho", {}), 80)
    adj = op.adjoint()
    for z in (2 + 1j, 5 - 2j, 0.5 + 3j):
        r = resolvent_norm(op, z)
        assert resolvent_norm(adj, np.conj(z)) == pytest.approx(r, rel=1e-10)
        # PT symmetry mirrors the pseudospectrum across the real axis
        assert resolvent_norm(op, np.conj(z)) == pytest.approx(r, rel=1e-8)


def test_airy_translation_invariance():
    op = grid_assemble(make_model("airy", {}), -40, 40, 1500)
    for z in (6, 8):
        a = resolvent_norm(op, z, precision="extended")
        b = resolvent_norm(op, z + 3j, precision="extended")
        assert abs(a - b) / a < 1e-10
    # double precision loses about log10 ||R|| digits but still agrees at z = 6
    a = resolvent_norm(op, 6, precision="extended")
    assert abs(resolvent_norm(op, 6) - a) / a < 1e-4


def test_contours_of_scalar_are_circles():
    g = grid_from_function(lambda z: -math.log10(abs(z) + 1e-300), (-1, 1, -1, 1), (161, 161))
    cs = contour_extract(g, [0.5, 0.25])
    for eps, lines in cs.items():
        assert len(lines) == 1
        line = lines[0]
        assert line[0] == line[-1]
        assert np.abs(np.abs(line) - eps).max() < 2e-3


def test_empty_level_strict_and_lenient():
    g = grid_from_function(lambda z: 0.0 * abs(z), (0, 1, 0, 1), (5, 5))
    with pytest.raises(EmptyLevel):
        contour_extract(g, [1e-3])
    assert contour_extract(g, [1e-3], strict=False)[1e-3] == []


def test_pseudospectral_inclusions():
    # sigma(H) + D(eps) is inside sigma_eps(H); sigma_eps(H) lies within eps of W(H)
    rng = np.random.default_rng(0)
    A = rng.standard_normal((12, 12)) + 1j * rng.standard_normal((12, 12))
    op = from_matrix(A)
    lam = np.linalg.eigvals(A)
    W = numerical_range_boundary(op, 256)
    eps = 0.3
    for l in lam:
        for t in np.linspace(0, 2 * np.pi, 7):
            z = l + 0.999 * eps * np.exp(1j * t)
            assert 1 / resolvent_norm(op, z) < eps
    g = pseudospectrum_grid(op, (-12, 12, -12, 12), (41, 41), workers=1)
    inside = g.values > -math.log10(eps)
    d = distance_to_polygon(g.nodes[inside], W)
    assert d.max() <= eps * 1.05 + 24 / 40


def test_numerical_range_sector():
    theta = 0.4
    op = hermite_assemble(make_model("rotated_ho", {"theta": theta}), 60)
    W = numerical_range_boundary(op, 128)
    arg = np.angle(W)
    assert np.all(np.abs(arg) <= theta + 1e-8)


def test_numerical_range_tridiagonal_path_matches_dense():
    op = grid_assemble(make_model("airy", {}), -5, 5, 60)
    a = numerical_range_boundary(op, 64)
    dense = from_matrix(op.matrix + 1e-300 * np.ones((60, 60)))
    assert dense.band != (1, 1)
    b = numerical_range_boundary(dense, 64)
    assert np.abs(a - b).max() < 1e-10


@settings(max_examples=20, deadline=None)
@given(st.floats(0.3, 2.0), st.floats(0.5, 10.0))
def test_growth_fit_recovers_exponent(p, C):
    eps = 10.0 ** -np.arange(1, 9)
    c = C * np.log(1 / eps) ** p
    q, r2 = growth_exponent_fit(eps, c)
    assert q == pytest.approx(p, abs=1e-10)
    assert r2 > 1 - 1e-12


def test_growth_fit_insufficient():
    with pytest.raises(InsufficientData):
        growth_exponent_fit([1e-1, 1e-2, 1e-3], [1, 2, 3])
    with pytest.raises(InsufficientData):
        growth_exponent_fit([1e-1, 2e-1, 3e-1, 4e-1, 5e-2], [1, 2, 3, 4, 5])


def test_real_axis_crossing_of_polyline():
    line = np.array([1 + 1j, 3 - 1j, 5 + 1j])
    assert contour_real_axis_crossing([line]) == pytest.approx(4.0)
    assert contour_real_axis_crossing([np.array([1 + 1j, 2 + 1j])]) is None


def test_hausdorff():
    a = np.array([0, 1, 2], dtype=complex)
    b = np.array([0, 1, 2, 2 + 3j])
    assert hausdorff_distance(a, b) == pytest.approx(3.0)
    assert hausdorff_distance([a[:1], a[1:]], a) == 0.0
    with pytest.raises(InsufficientData):
        hausdorff_distance([], a)


def test_eigen_pairing_and_sort():
    es = eigen(from_matrix(np.diag([3.0, -1j, 1.0])), sort="abs")
    assert np.allclose(es.values, [-1j, 1, 3])
    assert np.allclose(es.pairing, 1)
    es = eigen(from_matrix([[0, 1], [1e-24, 0]]))
    assert es.defective.any()
