import cmath
import math

import numpy as np
import pytest

from pseudolab.discretize import hermite_assemble
from pseudolab.model import make_model
from pseudolab.pseudomode import (BranchFailure, CenterMismatch, DecayViolated, OrderingViolated,
                                  OutsideParabola, build_pseudomode, cutoff_build, matrix_residual,
                                  phase_build, residual_scan, shifted_pseudomode, transport_amplitudes,
                                  truncation_order)

ROT = cmath.exp(-1j * math.pi / 4)


def airy_phase():
    return phase_build(lambda x: 1j * x, 1.0, 0.0, (-0.5, 0.5),
                       dV=lambda x: 1j + 0 * x, d2V=lambda x: 0 * x)


def test_airy_phase_second_derivative():
    ph = airy_phase()
    assert ph.ddphi0 == pytest.approx(0.5j, abs=1e-14)
    assert ph.dphi(0.0) == pytest.approx(-1.0, abs=1e-13)
    assert ph.phi(0.0) == pytest.approx(0.0, abs=1e-14)
    assert ph.eikonal_residual <= 1e-10


def test_rotated_phase_center():
    ph = phase_build(lambda x: 1j * x ** 2, 0.5 + 1j, 1.0, (0.2, 1.8),
                     dV=lambda x: 2j * x, d2V=lambda x: 2j + 0 * x)
    assert ph.sign == -1
    assert ph.dphi(1.0) == pytest.approx(-math.sqrt(0.5), abs=1e-13)


def test_real_potential_rejected():
    with pytest.raises(DecayViolated):
        phase_build(lambda x: x ** 2, 2.0, 0.0, (-0.5, 0.5), dV=lambda x: 2 * x,
                    d2V=lambda x: 2 + 0 * x, sign=1.0)


def test_phase_errors():
    with pytest.raises(CenterMismatch):
        phase_build(lambda x: 1j * x, 1.0 + 0.1j, 0.0, (-0.5, 0.5))
    with pytest.raises(BranchFailure):
        phase_build(lambda x: x ** 2 + 1j * x, 0.01, 0.0, (-1, 1), strict=True)


def test_linear_phase_trivial_amplitudes():
    # V' = 0 gives constant phi' and the amplitudes reduce to a_0 = 1
    # a constant potential has no decay, so reuse the airy record with V replaced
    ph = airy_phase()
    ph.dV = lambda x: 0j * np.asarray(x)
    ph.d2V = lambda x: 0j * np.asarray(x)
    ph.V = lambda x: 0j * np.asarray(x)
    ph.dphi = ph.dphi * 0 - 1
    rec = transport_amplitudes(ph, 3, check=False)
    x = np.linspace(-0.4, 0.4, 9)
    assert np.allclose(rec.amp(0, x), 1)
    for j in (1, 2, 3):
        assert np.abs(rec.amp(j, x)).max() < 1e-14


def test_airy_amplitudes():
    rec = transport_amplitudes(airy_phase(), 2)
    x0 = np.array([0.0])
    assert rec.amp(0, x0)[0] == pytest.approx(1.0, abs=1e-14)
    assert abs(rec.amp(1, x0)[0]) < 1e-14
    assert abs(rec.amp(2, x0)[0]) < 1e-14
    assert abs(rec.amp(1, np.array([0.3]))[0]) > 1e-3
    assert max(rec.transport_residuals) <= 1e-8


def test_truncation_order():
    ph = airy_phase()
    assert truncation_order(ph, 1 / 27, C1=1.0) == 9
    n1 = truncation_order(ph, 1e-2, R0=0.25)
    n2 = truncation_order(ph, 2e-2, R0=0.25)
    assert n1 > 0 and abs(n1 / 2 - n2) <= 1


def test_cutoff_examples():
    c = cutoff_build((0.4, 1.6), (0.2, 1.8))
    assert c(np.array([1.0]))[0] == 1.0
    assert c(np.array([0.1, 1.9, 0.2, 1.8])).tolist() == [0, 0, 0, 0]
    x = np.linspace(0, 2, 2001)
    d = c.derivs(x)[1]
    grad = x[np.abs(d) > 0]
    assert np.all(((grad > 0.2) & (grad < 0.4)) | ((grad > 1.6) & (grad < 1.8)))
    # derivatives agree with finite differences
    xs = np.linspace(0.25, 0.35, 5)
    fd = (c(xs + 1e-6) - c(xs - 1e-6)) / 2e-6
    assert np.allclose(fd, c.derivs(xs)[1], rtol=1e-6)
    with pytest.raises(OrderingViolated):
        cutoff_build((0.4, 1.6), (0.5, 1.8))


def test_ground_state_residual():
    # h = 1 oscillator: the Gaussian is the first basis vector and an exact eigenfunction
    op = hermite_assemble(make_model("rotated_ho", {"theta": 0.0}), 20)
    c = np.zeros(20, complex)
    c[0] = 1
    assert np.linalg.norm(op.matrix @ c - c) <= 1e-12


def rotated_mode(h=2 ** -5, z=0.5 + 1j):
    m = make_model("rotated_ho", {"theta": math.pi / 4, "h": h})
    return build_pseudomode(m, ROT * z, terms=7, x0=1.0, interval=(0.2, 1.8),
                            cutoff=cutoff_build((0.4, 1.6), (0.2, 1.8)))


def test_rotated_reference_residual():
    pm = rotated_mode()
    assert pm.residual == pytest.approx(2.5041e-4, rel=0.01)
    assert pm.amplitudes.phase.eikonal_residual <= 1e-10


def test_conjugation_identity_against_differentiation():
    # (H - z) u from the identity matches a direct finite-difference image on the plateau
    pm = rotated_mode(h=2 ** -3)
    x = np.linspace(0.6, 1.4, 41)
    u, Hu = pm.sample(x)
    d = 1e-3
    up, _ = pm.sample(x + d)
    um, _ = pm.sample(x - d)
    up2, _ = pm.sample(x + 2 * d)
    um2, _ = pm.sample(x - 2 * d)
    u2 = (-up2 + 16 * up - 30 * u + 16 * um - um2) / (12 * d * d)
    h = pm.h
    direct = pm.prefactor * (-h ** 2 * u2 + 1j * x ** 2 * u) - pm.z * u
    assert np.abs(direct - Hu).max() <= 1e-6 * np.abs(u).max()


def test_matrix_cross_check():
    pm = rotated_mode()
    h = pm.h
    op = hermite_assemble(make_model("rotated_ho", {"theta": math.pi / 4, "h": h}), 400,
                          scale=math.sqrt(h))
    r, _ = matrix_residual(pm, op)
    assert abs(r / pm.residual - 1) < 0.1


def test_shifted_reference_residual():
    h = 2 ** -8
    # rescaled operator -h^2 d^2 + y^2 + 2i h^{1/2} y - h, centre y0 = 1
    m = make_model("shifted_ho", {"h": h})
    pm = build_pseudomode(m, 2 - h + 2j * math.sqrt(h), terms=3)
    assert pm.x0 == pytest.approx(1.0)
    assert 2.0290e-3 / 3 <= pm.residual <= 3 * 2.0290e-3


def test_shifted_real_target_center():
    pm = shifted_pseudomode(50.0)
    assert abs(pm.x0) < 1e-12


def test_outside_parabola():
    with pytest.raises(OutsideParabola):
        shifted_pseudomode(4 + 4j)
    with pytest.raises(OutsideParabola):
        shifted_pseudomode(-1.0)


def test_rotated_scan_linear_in_inverse_h():
    hs = 2.0 ** -np.arange(3, 8)
    scan = residual_scan("rotated_ho", {"theta": math.pi / 4}, lambda h: ROT * (1 + 4j), hs,
                         terms="auto")
    fit = scan.fits["1/h"]
    assert fit["slope"] < 0 and fit["r2"] > 0.99
    assert np.all(np.diff(scan.residual) < 0)


def test_single_h_scan_has_no_fit():
    scan = residual_scan("rotated_ho", {"theta": math.pi / 4}, lambda h: ROT * (1 + 4j), [0.1])
    assert len(scan.residual) == 1 and scan.fits == {}
