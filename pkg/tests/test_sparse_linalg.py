import numpy as np
import pytest

from traction_split.fem import assemble_operators, build_spaces, restrict_to_gauge
from traction_split.mesh import build_rect_mesh
from traction_split.sparse_linalg import (
    SolverConfig,
    SolverFailure,
    SparseMatrix,
    matvec,
    smallest_generalized_eigenvalue,
    solve_general,
    solve_spd,
)


def test_solver_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(method="gmres")
    with pytest.raises(ValueError):
        SolverConfig(rtol=2.0)
    with pytest.raises(ValueError):
        SolverConfig(max_iterations=0)


def test_csr_invariants():
    a = SparseMatrix.from_coo([0, 0, 1, 0], [1, 0, 1, 1], [1.0, 2.0, 3.0, 4.0], (2, 2))
    # duplicates summed, indices sorted within rows
    assert np.allclose(a.toarray(), [[2.0, 5.0], [0.0, 3.0]])
    for r in range(2):
        row = a.column_indices[a.row_offsets[r] : a.row_offsets[r + 1]]
        assert np.all(np.diff(row) > 0)


def test_matvec_identity_and_zero():
    x = np.arange(5.0)
    eye = SparseMatrix.identity(5)
    assert np.array_equal(matvec(eye, x), x)
    zero = SparseMatrix.from_coo([], [], [], (5, 5))
    assert np.array_equal(matvec(zero, x), np.zeros(5))


def test_matvec_dense_oracle():
    rng = np.random.default_rng(3)
    dense = rng.standard_normal((5, 5))
    dense[np.abs(dense) < 0.7] = 0.0
    a = SparseMatrix(dense)
    x = rng.standard_normal(5)
    assert np.allclose(matvec(a, x), dense @ x, atol=1e-14)


def test_matvec_dimension_mismatch():
    with pytest.raises(ValueError):
        matvec(SparseMatrix.identity(3), np.ones(4))


@pytest.mark.parametrize("method", ["direct-factorization", "conjugate-gradient"])
def test_solve_spd_trivial(method):
    cfg = SolverConfig(method=method)
    eye = SparseMatrix.identity(4)
    b = np.array([1.0, -2.0, 3.0, 0.5])
    assert np.allclose(solve_spd(eye, b, cfg), b, atol=1e-12)
    diag = SparseMatrix(np.diag([2.0, 4.0]))
    assert np.allclose(solve_spd(diag, np.array([2.0, 8.0]), cfg), [1.0, 2.0])


@pytest.mark.parametrize("method", ["direct-factorization", "conjugate-gradient"])
def test_solve_spd_dirichlet_laplacian_vs_dense(method):
    mesh = build_rect_mesh(4, 4)
    spaces = build_spaces(mesh)
    ops = assemble_operators(mesh, spaces)
    a = restrict_to_gauge(ops.l_p, spaces)
    rng = np.random.default_rng(11)
    b = rng.standard_normal(a.shape[0])
    x = solve_spd(a, b, SolverConfig(method=method, rtol=1e-12))
    x_dense = np.linalg.solve(a.toarray(), b)
    assert np.linalg.norm(x - x_dense) <= 1e-10 * np.linalg.norm(x_dense)


def test_solve_spd_residual_contract_failure():
    # 1 iteration of CG cannot solve this well-conditioned but coupled system
    mesh = build_rect_mesh(4, 4)
    spaces = build_spaces(mesh)
    ops = assemble_operators(mesh, spaces)
    a = restrict_to_gauge(ops.l_p, spaces)
    b = np.ones(a.shape[0])
    with pytest.raises(SolverFailure) as info:
        solve_spd(a, b, SolverConfig(method="conjugate-gradient", max_iterations=1))
    assert info.value.residual is not None


def test_solve_general_trivial_and_permutation():
    assert np.allclose(solve_general(SparseMatrix.identity(3), np.array([1.0, 2.0, 3.0])),
                       [1.0, 2.0, 3.0])
    a = SparseMatrix(np.array([[0.0, 1.0], [1.0, 0.0]]))
    assert np.allclose(solve_general(a, np.array([3.0, 5.0])), [5.0, 3.0])


def test_solve_general_random_vs_dense():
    rng = np.random.default_rng(5)
    dense = rng.standard_normal((8, 8)) + 8.0 * np.eye(8)
    a = SparseMatrix(dense)
    b = rng.standard_normal(8)
    assert np.allclose(solve_general(a, b), np.linalg.solve(dense, b), atol=1e-10)


def test_solve_general_singular_raises():
    a = SparseMatrix(np.array([[1.0, 1.0], [1.0, 1.0]]))
    with pytest.raises(SolverFailure):
        solve_general(a, np.array([1.0, 2.0]))


def test_solvers_deterministic():
    mesh = build_rect_mesh(4, 4)
    spaces = build_spaces(mesh)
    ops = assemble_operators(mesh, spaces)
    a = restrict_to_gauge(ops.l_p, spaces)
    b = np.sin(np.arange(a.shape[0], dtype=float))
    for cfg in (SolverConfig(), SolverConfig(method="conjugate-gradient")):
        x1 = solve_spd(a, b, cfg)
        x2 = solve_spd(a, b, cfg)
        assert np.array_equal(x1, x2)


def test_eigenvalue_trivial_cases():
    eye = SparseMatrix.identity(6)
    assert smallest_generalized_eigenvalue(eye, eye) == pytest.approx(1.0, abs=1e-12)
    a = SparseMatrix(np.diag([2.0, 3.0]))
    b = SparseMatrix.identity(2)
    assert smallest_generalized_eigenvalue(a, b) == pytest.approx(2.0, abs=1e-10)


def test_eigenvalue_fem_pencil_vs_dense_oracle():
    import scipy.linalg

    mesh = build_rect_mesh(4, 4)
    spaces = build_spaces(mesh)
    ops = assemble_operators(mesh, spaces)
    a = ops.m_u + 2.0 * ops.k_eps
    b = ops.m_u + ops.k_grad
    lam = smallest_generalized_eigenvalue(a, b, tol=1e-12)
    dense = scipy.linalg.eigh(a.toarray(), b.toarray(), eigvals_only=True)
    assert lam == pytest.approx(dense[0], abs=1e-8)
