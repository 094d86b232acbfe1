import math

import numpy as np
import pytest
from scipy.special import eval_legendre

from pseudolab.discretize import from_matrix, hermite_assemble
from pseudolab.model import make_model
from pseudolab.projections import (AmbiguousPairing, DefectivePair, DomainError, ProjectionSeries,
                                   asymptotic_series, biorthogonal_system, exact_series,
                                   legendre_log, legendre_log_series, numeric_projection_norms,
                                   rate_fit, rate_limit, rotated_norm_asymptotic,
                                   rotated_norm_exact)
from pseudolab.resolvent import InsufficientData


def test_legendre_examples():
    assert legendre_log(0, 3.0) == 0.0
    assert legendre_log(1, 2.0) == pytest.approx(math.log(2))
    with pytest.raises(DomainError):
        legendre_log(3, 0.5)


def test_legendre_against_scipy_and_laplace_heine():
    x = 1.3
    ks = np.arange(0, 60)
    assert np.allclose(legendre_log_series(59, x), np.log(eval_legendre(ks, x)), rtol=1e-12)
    k, x = 500, math.sqrt(2)
    lh = (k + 0.5) * math.log(x + math.sqrt(x * x - 1)) - 0.5 * math.log(2 * math.pi * k) \
        - 0.25 * math.log(x * x - 1)
    assert abs(legendre_log(k, x) / lh - 1) < 5e-3


def test_recurrence_does_not_overflow():
    v = legendre_log(100000, 1 / math.cos(math.pi / 4))
    assert np.isfinite(v) and v > 8e4


def test_rotated_exact_examples():
    assert np.all(rotated_norm_exact(0.0, np.arange(20)) == 0)
    assert rotated_norm_exact(math.pi / 3, 1) == pytest.approx(math.log(2 * math.sqrt(2)))
    assert rotated_norm_exact(math.pi / 4, 0) == pytest.approx(0.25 * math.log(2))
    assert np.all(rotated_norm_exact(0.7, np.arange(50)) >= 0)
    with pytest.raises(DomainError):
        rotated_norm_exact(math.pi / 2, 1)


def test_asymptotic():
    t = math.pi / 4
    r = rotated_norm_exact(t, 200) - rotated_norm_asymptotic(t, 200)
    assert abs(math.expm1(r)) < 0.02
    with pytest.raises(DomainError):
        rotated_norm_asymptotic(0.0, 5)
    assert len(asymptotic_series(t, 10)) == 10


def test_rate_limit_values():
    assert rate_limit(0.0) == 0.0
    assert rate_limit(math.pi / 4) == pytest.approx(math.log(1 + math.sqrt(2)), rel=1e-14)
    assert rate_limit(math.pi / 3) == pytest.approx(0.5 * math.log((2 + math.sqrt(3)) / (2 - math.sqrt(3))))


def test_rate_fit_exact_series():
    s = exact_series(math.pi / 4, 1000)
    rate, r2 = rate_fit(s, kmin=500)
    assert rate == pytest.approx(math.log(1 + math.sqrt(2)), rel=1e-3)
    with pytest.raises(InsufficientData):
        rate_fit(exact_series(0.3, 4))
    with pytest.raises(ValueError):
        rate_fit(s, "quadratic")


def test_numeric_theta_zero_all_ones():
    op = hermite_assemble(make_model("rotated_ho", {"theta": 0.0}), 80)
    s = numeric_projection_norms(op, 20)
    assert np.abs(s.log_norm).max() < 1e-10


def test_numeric_vs_exact_rotated():
    op = hermite_assemble(make_model("rotated_ho", {"theta": math.pi / 4}), 400)
    s = numeric_projection_norms(op, 11)
    ex = np.exp(rotated_norm_exact(math.pi / 4, np.arange(11)))
    assert np.abs(np.exp(s.log_norm) / ex - 1).max() < 1e-4


def test_trust_region_and_defect():
    op = hermite_assemble(make_model("rotated_ho", {"theta": 0.3}), 40)
    with pytest.raises(ValueError):
        numeric_projection_norms(op, 11)
    J = from_matrix(np.array([[1, 1, 0, 0], [0, 1, 0, 0], [0, 0, 3, 0], [0, 0, 0, 4]]) +
                    np.diag([0, 1e-13, 0, 0]))
    with pytest.raises((DefectivePair, AmbiguousPairing)):
        numeric_projection_norms(J, 1)


def test_projection_algebra():
    op = hermite_assemble(make_model("rotated_ho", {"theta": math.pi / 4}), 200)
    bio = biorthogonal_system(op, count=12)
    P = [bio.projection(k) for k in range(12)]
    for k in range(12):
        assert np.abs(P[k] @ P[k] - P[k]).max() <= 1e-8 * max(1, np.abs(P[k]).max())
        for l in range(12):
            if l != k:
                assert np.abs(P[k] @ P[l]).max() <= 1e-8 * max(1, np.abs(P[k]).max())
    # operator norms of P_k equal the biorthogonal formula
    for k in (0, 5, 11):
        assert bio.operator_norm(P[k]) == pytest.approx(bio.norms()[k], rel=1e-8)


def test_partial_sums_grow():
    op = hermite_assemble(make_model("rotated_ho", {"theta": math.pi / 4}), 200)
    bio = biorthogonal_system(op, count=30)
    s = bio.partial_sum_norms(30)
    assert s[-1] > 1e3
    assert np.all(np.diff(s[::5]) > 0)


def test_csv(tmp_path):
    s = exact_series(0.5, 5)
    p = s.write_csv(tmp_path / "p.csv")
    lines = open(p).read().splitlines()
    assert lines[0] == "k,log_norm,source" and len(lines) == 7
    assert isinstance(s, ProjectionSeries) and s.entries[0][0] == 0
