import math

import numpy as np
import pytest
import scipy.io
import scipy.linalg as sl

from pseudolab.discretize import (DiscretizationError, SingularNode, UnsupportedCoefficients,
                                  assemble, convergence_check, export_matrix, from_matrix,
                                  grid_assemble, hermite_assemble, hermite_functions,
                                  ladder_matrices, ladder_word_matrix, perturbed_assemble,
                                  potential_matrix_elements, swanson_ladder_form)
from pseudolab.model import make_model


def test_position_matrix_n2():
    X, _ = ladder_matrices(2)
    assert np.allclose(X, [[0, 1 / math.sqrt(2)], [1 / math.sqrt(2), 0]])


def test_commutator_identity():
    X, D = ladder_matrices(40)
    C = D @ X - X @ D
    assert np.allclose(C[:38, :38], np.eye(38), atol=1e-13)


def test_harmonic_oscillator_diagonal():
    op = hermite_assemble(make_model("rotated_ho", {"theta": 0.0}), 5)
    assert np.allclose(np.diag(op.matrix)[:4], [1, 3, 5, 7])
    off = op.matrix - np.diag(np.diag(op.matrix))
    assert np.abs(off[:3, :3]).max() < 1e-14
    assert np.allclose(op.matrix, op.matrix.conj().T)


def test_shifted_expansion():
    N = 30
    ho = hermite_assemble(make_model("rotated_ho", {"theta": 0.0}), N).matrix
    X, _ = ladder_matrices(N)
    sh = hermite_assemble(make_model("shifted_ho", {}), N).matrix
    assert np.abs(sh - (ho + 2j * X - np.eye(N))).max() < 1e-13


def test_bandwidth_bound():
    op = hermite_assemble(make_model("cubic", {}), 50)
    assert max(op.band) <= 3 + 2


def test_swanson_real_and_ladder_consistent():
    w, a, b = 2.0, 0.5, 0.25
    M = hermite_assemble(make_model("swanson", {"omega": w, "alpha": a, "beta": b}), 60).matrix
    assert np.abs(M.imag).max() < 1e-13
    # the ladder form with (alpha, beta) -> (-beta, -alpha) is the same operator
    L = swanson_ladder_form(w, -b, -a, 60)
    assert np.abs(M[:55, :55] - L[:55, :55]).max() < 1e-12


def test_pt_symmetry_matrix_level():
    N = 40
    P = np.diag((-1.0) ** np.arange(N))
    for kind, params in [("airy", {}), ("shifted_ho", {}), ("cubic", {}),
                         ("swanson", {"omega": 2, "alpha": 0.5, "beta": 0.25})]:
        M = hermite_assemble(make_model(kind, params), N).matrix
        assert np.abs(P @ M.conj() @ P - M).max() < 1e-12


def test_scaled_basis_is_dilation():
    # H_h in the basis s^{-1/2} h_n(x/s), s = sqrt(h), equals h times H_1
    h = 1 / 16
    m = make_model("rotated_ho", {"theta": 0.5, "h": h})
    A = hermite_assemble(m, 30, scale=math.sqrt(h)).matrix
    B = hermite_assemble(make_model("rotated_ho", {"theta": 0.5}), 30).matrix
    assert np.abs(A - h * B).max() < 1e-13


def test_dirichlet_laplacian():
    m = make_model("custom", {"coefficients": (lambda x: 0 * x, lambda x: 0 * x, lambda x: -1 + 0 * x)})
    op = grid_assemble(m, 0.0, math.pi, 8)
    dx = math.pi / 9
    ref = (2 * np.eye(8) - np.eye(8, k=1) - np.eye(8, k=-1)) / dx ** 2
    assert np.allclose(op.matrix, ref)
    op = grid_assemble(m, 0.0, math.pi, 400)
    assert np.sort(np.linalg.eigvals(op.matrix).real)[0] == pytest.approx(1.0, rel=1e-5)


def test_advection_interval_second_order():
    m = make_model("advection_diffusion", {"L": math.pi})
    errs = []
    for N in (199, 399):
        lam = np.sort(np.linalg.eigvals(grid_assemble(m, 0, math.pi, N).matrix).real)[:3]
        errs.append(np.abs(lam - (np.arange(1, 4) ** 2 + 0.25)))
    ratio = errs[0] / errs[1]
    assert np.all((ratio > 3.8) & (ratio < 4.2))


def test_potential_matrix_elements_consistency():
    N = 30
    assert np.abs(potential_matrix_elements(lambda x: 0 * x, N)).max() == 0
    V = potential_matrix_elements(lambda x: x ** 2, N)
    X, _ = ladder_matrices(N + 2)
    X2 = (X @ X)[:N, :N]
    assert np.abs(V - X2).max() < 1e-10


def test_hermite_functions_orthonormal():
    x, w = np.polynomial.legendre.leggauss(400)
    x, w = 12 * x, 12 * w
    H = hermite_functions(20, x)
    G = (H * w) @ H.T
    assert np.abs(G - np.eye(20)).max() < 1e-12


def test_perturbed_epsilon_zero_and_symmetry():
    op = perturbed_assemble(make_model("perturbed_ho", {"epsilon": 0.0}), 60)
    assert np.allclose(np.sort(np.linalg.eigvals(op.matrix).real)[:5], [1, 3, 5, 7, 9], atol=1e-10)
    op = perturbed_assemble(make_model("perturbed_ho", {"epsilon": 0.3}), 60)
    P = np.diag((-1.0) ** np.arange(60))
    assert np.abs(P @ op.matrix.conj() @ P - op.matrix).max() < 1e-10


def test_errors():
    with pytest.raises(UnsupportedCoefficients):
        hermite_assemble(make_model("perturbed_ho", {"epsilon": 0.1}), 20)
    with pytest.raises(SingularNode):
        grid_assemble(make_model("perturbed_ho", {"epsilon": 0.1}), -2, 2, 19)
    with pytest.raises(DiscretizationError):
        grid_assemble(make_model("airy", {}), 1, 0, 20)


def test_convergence_examples():
    rep = convergence_check(make_model("rotated_ho", {"theta": math.pi / 4}), ("eigenvalue", 0),
                            [50, 100, 200])
    assert rep["converged"]
    rep = convergence_check(make_model("airy", {}), ("eigenvalue", 0), [200, 400, 800])
    assert not rep["converged"]
    rep = convergence_check(make_model("rotated_ho", {"theta": 0.0}), lambda o: 1.0, [10, 20, 30])
    assert rep["differences"] == [0.0, 0.0]


def test_assemble_dispatch_and_export(tmp_path):
    op = assemble(make_model("advection_diffusion", {"L": 3.0}), 50)
    assert op.basis == "grid" and op.interval == (0.0, 3.0)
    op = assemble(make_model("rotated_ho", {"theta": 0.2}), 20)
    assert op.basis == "hermite"
    path, meta = export_matrix(op, tmp_path / "m.mtx")
    M = scipy.io.mmread(path)
    assert np.allclose(np.asarray(M.todense() if hasattr(M, "todense") else M), op.matrix)


def test_ladder_words():
    N = 20
    a = ladder_word_matrix("a", N)
    c = ladder_word_matrix("c", N)
    assert np.allclose((a @ c - c @ a)[:N - 1, :N - 1], np.eye(N - 1))
