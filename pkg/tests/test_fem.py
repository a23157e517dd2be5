import numpy as np
import pytest

from traction_split.fem import (
    assemble_boundary_load,
    assemble_load,
    assemble_operators,
    build_spaces,
    l2_project,
    prolong_from_gauge,
    restrict_to_gauge,
)
from traction_split.mesh import build_rect_mesh
from traction_split.verification import ExactSolution, make_boundary_traction

import oracles


@pytest.fixture(scope="module")
def setup4():
    mesh = build_rect_mesh(4, 4)
    spaces = build_spaces(mesh)
    return mesh, spaces, assemble_operators(mesh, spaces)


def test_space_dimensions_single_cell():
    spaces = build_spaces(build_rect_mesh(1, 1))
    assert spaces.dim_velocity == 18  # 2 * (4 vertices + 5 edges)
    assert spaces.dim_pressure == 4


def test_space_dimensions_gauge():
    spaces = build_spaces(build_rect_mesh(2, 2))
    assert spaces.dim_pressure == 9
    assert len(spaces.gauge_free) == 1
    spaces = build_spaces(build_rect_mesh(64, 64))
    assert len(spaces.gauge_free) == 63 * 63


def test_velocity_boundary_mask():
    mesh = build_rect_mesh(2, 2)
    spaces = build_spaces(mesh)
    # boundary P2 nodes: 8 boundary vertices + 8 boundary edge midpoints
    assert int(spaces.velocity_boundary_mask.sum()) == 16


def test_laplacian_kills_constants(setup4):
    _, spaces, ops = setup4
    one = np.ones(spaces.dim_pressure)
    assert np.abs(ops.l_p @ one).max() <= 1e-13
    # componentwise constants are in the nullspace of the velocity stiffness
    const = np.concatenate([np.ones(spaces.n_p2), -2.0 * np.ones(spaces.n_p2)])
    assert np.abs(ops.k_grad @ const).max() <= 1e-12
    assert np.abs(ops.k_eps @ const).max() <= 1e-12


def test_graddiv_energy_of_linear_field(setup4):
    _, spaces, ops = setup4
    v = np.concatenate([spaces.p2_coords[:, 0], spaces.p2_coords[:, 1]])
    assert v @ (ops.g_div @ v) == pytest.approx(4.0, rel=1e-12)


def test_divergence_pairing_unit(setup4):
    _, spaces, ops = setup4
    v = np.concatenate([spaces.p2_coords[:, 0], np.zeros(spaces.n_p2)])
    one = np.ones(spaces.dim_pressure)
    assert one @ (ops.b_div @ v) == pytest.approx(1.0, rel=1e-12)


def test_symmetry_invariants(setup4):
    _, _, ops = setup4
    for name in ("m_u", "m_p", "k_grad", "k_eps", "g_div", "l_p", "h_p"):
        assert getattr(ops, name).max_asymmetry() <= 1e-13, name


def test_korn_form_ordering(setup4):
    _, spaces, ops = setup4
    rng = np.random.default_rng(2024)
    for _ in range(100):
        v = rng.standard_normal(spaces.dim_velocity)
        eps_e = v @ (ops.k_eps @ v)
        grad_e = v @ (ops.k_grad @ v)
        assert eps_e <= grad_e * (1.0 + 1e-12)


def test_graddiv_matches_direct_quadrature(setup4):
    _, spaces, ops = setup4
    rng = np.random.default_rng(7)
    for _ in range(5):
        v = rng.standard_normal(spaces.dim_velocity)
        vx, vy = spaces.split_velocity(v)
        div_qp = np.einsum("ti,tqi->tq", vx[spaces.tri_p2], spaces.p2_grads[..., 0])
        div_qp += np.einsum("ti,tqi->tq", vy[spaces.tri_p2], spaces.p2_grads[..., 1])
        direct = float(np.sum(spaces.wdet * div_qp**2))
        assert v @ (ops.g_div @ v) == pytest.approx(direct, rel=1e-12)


def test_gradient_divergence_adjointness(setup4):
    _, spaces, ops = setup4
    rng = np.random.default_rng(17)
    for _ in range(20):
        psi = np.zeros(spaces.dim_pressure)
        psi[spaces.gauge_free] = rng.standard_normal(len(spaces.gauge_free))
        v = rng.standard_normal(spaces.dim_velocity)
        lhs = v @ (ops.c_v.T @ psi)
        rhs = -(psi @ (ops.b_div @ v))
        assert lhs == pytest.approx(rhs, abs=1e-12)


def test_surface_divergence_vs_oracle():
    mesh = build_rect_mesh(2, 2)
    spaces = build_spaces(mesh)
    ops = assemble_operators(mesh, spaces)
    oracle = oracles.surface_divergence_matrix_oracle(mesh, spaces)
    assert np.abs(ops.s_bnd.toarray() - oracle).max() <= 1e-12
    # interior hat of the center vertex couples to the boundary
    center = 4
    assert np.abs(oracle[:, center]).max() > 0.0


def test_zero_loads(setup4):
    _, spaces, _ = setup4
    assert np.all(assemble_load(None, 0.0, spaces) == 0.0)
    assert np.all(assemble_boundary_load(None, 0.0, spaces) == 0.0)
    zero = lambda t, pts: np.zeros(pts.shape)
    assert np.abs(assemble_load(zero, 0.0, spaces)).max() == 0.0
    assert np.abs(assemble_boundary_load(zero, 0.0, spaces)).max() == 0.0


def test_constant_load_partition_of_unity(setup4):
    _, spaces, _ = setup4
    ex = lambda t, pts: np.stack([np.ones(pts.shape[:-1]), np.zeros(pts.shape[:-1])], axis=-1)
    load = assemble_load(ex, 0.0, spaces)
    assert np.sum(load[: spaces.n_p2]) == pytest.approx(1.0, rel=1e-12)
    assert np.abs(load[spaces.n_p2 :]).max() == 0.0


def test_constant_boundary_load_perimeter(setup4):
    _, spaces, _ = setup4
    ey = lambda t, pts: np.stack([np.zeros(pts.shape[:-1]), np.ones(pts.shape[:-1])], axis=-1)
    load = assemble_boundary_load(ey, 0.0, spaces)
    assert np.sum(load[spaces.n_p2 :]) == pytest.approx(4.0, rel=1e-12)
    assert np.abs(load[: spaces.n_p2]).max() == 0.0


@pytest.mark.parametrize("form,re", [("traction", 1.0), ("open", 100.0)])
def test_manufactured_load_vs_fd_oracle(setup4, form, re):
    _, spaces, _ = setup4
    exact = ExactSolution(form, re)
    load = assemble_load(exact.forcing, 0.0, spaces)
    load_fd = assemble_load(lambda t, pts: oracles.fd_forcing(exact, t, pts), 0.0, spaces)
    assert np.abs(load - load_fd).max() <= 1e-10


@pytest.mark.parametrize("form", ["traction", "open"])
def test_manufactured_boundary_load_vs_oracle(setup4, form):
    _, spaces, _ = setup4
    exact = ExactSolution(form, 2.0)
    g = make_boundary_traction(exact, spaces)
    load = assemble_boundary_load(g, 0.5, spaces)
    normals = spaces.facet_normals[:, None, :]
    g_fd = lambda t, pts: oracles.fd_traction(exact, t, pts, normals)
    load_fd = assemble_boundary_load(g_fd, 0.5, spaces)
    assert np.abs(load - load_fd).max() <= 1e-10


def test_projection_is_identity_on_the_space(setup4):
    _, spaces, ops = setup4
    func = lambda pts: np.stack(
        [pts[..., 0] ** 2 + pts[..., 1], pts[..., 0] - pts[..., 1] ** 2], axis=-1
    )
    proj = l2_project(func, spaces, ops, "velocity")
    x, y = spaces.p2_coords[:, 0], spaces.p2_coords[:, 1]
    nodal = np.concatenate([x**2 + y, x - y**2])
    assert np.abs(proj.coeffs - nodal).max() <= 1e-12


def test_projection_of_constant_pressure(setup4):
    _, spaces, ops = setup4
    proj = l2_project(lambda pts: np.ones(pts.shape[:-1]), spaces, ops, "pressure")
    assert np.abs(proj.coeffs - 1.0).max() <= 1e-12


def test_projection_interpolation_rate():
    exact = ExactSolution("traction", 1.0)
    errors = []
    for nx in (8, 16, 32):
        mesh = build_rect_mesh(nx, nx)
        spaces = build_spaces(mesh)
        ops = assemble_operators(mesh, spaces)
        proj = l2_project(lambda pts: exact.velocity(0.0, pts), spaces, ops, "velocity")
        ux, uy = spaces.split_velocity(proj.coeffs)
        vals_x = np.einsum("ti,qi->tq", ux[spaces.tri_p2], spaces.p2_at_qp)
        vals_y = np.einsum("ti,qi->tq", uy[spaces.tri_p2], spaces.p2_at_qp)
        ex = exact.velocity(0.0, spaces.qp_phys)
        err = np.sqrt(
            np.sum(spaces.wdet * ((vals_x - ex[..., 0]) ** 2 + (vals_y - ex[..., 1]) ** 2))
        )
        errors.append(err)
    rates = [np.log2(errors[i] / errors[i + 1]) for i in range(2)]
    assert all(rate > 2.7 for rate in rates), rates


def test_restrict_prolong_roundtrip(setup4):
    _, spaces, ops = setup4
    rng = np.random.default_rng(5)
    vec = np.zeros(spaces.dim_pressure)
    vec[spaces.gauge_free] = rng.standard_normal(len(spaces.gauge_free))
    assert np.array_equal(prolong_from_gauge(restrict_to_gauge(vec, spaces), spaces), vec)


def test_restricted_laplacian_single_interior_vertex():
    mesh = build_rect_mesh(2, 2)
    spaces = build_spaces(mesh)
    ops = assemble_operators(mesh, spaces)
    restricted = restrict_to_gauge(ops.l_p, spaces)
    assert restricted.shape == (1, 1)
    assert restricted.toarray()[0, 0] > 0.0


def test_restricted_laplacian_spd(setup4):
    _, spaces, ops = setup4
    restricted = restrict_to_gauge(ops.l_p, spaces)
    eigs = np.linalg.eigvalsh(restricted.toarray())
    assert eigs.min() > 0.0
    assert restricted.max_asymmetry() <= 1e-13
