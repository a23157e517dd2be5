"""Triangular Taylor-Hood (P2/P1) spaces and assembly of the scheme operators.

Velocity degrees of freedom are component-major: dof(c, node) = c * n_p2 + node
with scalar P2 nodes numbered vertices first, then edge midpoints.  The gauge
space is the pressure space with boundary vertices constrained to zero.

All integrands arising from the P2/P1 pair are polynomial of degree <= 4 on
triangles and <= 5 on edges, so the quadrature rules in use are exact.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .quadrature import edge_rule, triangle_rule
from .sparse_linalg import (
    SolverConfig,
    SparseMatrix,
    smallest_generalized_eigenvalue,
    solve_spd,
)

P1_REF_GRADS = np.array([[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]])

_PROJECTION_CONFIG = SolverConfig(rtol=1e-12)


def p2_values(points):
    """P2 shape functions at reference points (xi, eta); shape (nq, 6)."""
    xi, eta = points[:, 0], points[:, 1]
    lam0 = 1.0 - xi - eta
    return np.column_stack(
        [
            lam0 * (2.0 * lam0 - 1.0),
            xi * (2.0 * xi - 1.0),
            eta * (2.0 * eta - 1.0),
            4.0 * xi * eta,
            4.0 * eta * lam0,
            4.0 * lam0 * xi,
        ]
    )


def p2_ref_grads(points):
    """Reference gradients of the P2 shape functions; shape (nq, 6, 2)."""
    xi, eta = points[:, 0], points[:, 1]
    lam0 = 1.0 - xi - eta
    nq = points.shape[0]
    g = np.zeros((nq, 6, 2))
    g[:, 0, 0] = 1.0 - 4.0 * lam0
    g[:, 0, 1] = 1.0 - 4.0 * lam0
    g[:, 1, 0] = 4.0 * xi - 1.0
    g[:, 2, 1] = 4.0 * eta - 1.0
    g[:, 3, 0] = 4.0 * eta
    g[:, 3, 1] = 4.0 * xi
    g[:, 4, 0] = -4.0 * eta
    g[:, 4, 1] = 4.0 * (lam0 - eta)
    g[:, 5, 0] = 4.0 * (lam0 - xi)
    g[:, 5, 1] = -4.0 * xi
    return g


def p1_values(points):
    xi, eta = points[:, 0], points[:, 1]
    return np.column_stack([1.0 - xi - eta, xi, eta])


@dataclass
class SpacePair:
    """P2 vector velocity space, P1 pressure space and the zero-trace gauge mask.

    Carries the per-element quadrature cache reused by assembly, projection
    and error evaluation.
    """

    mesh: object
    n_p2: int
    n_pressure: int
    tri_p2: np.ndarray                  # (nt, 6) global P2 nodes per triangle
    p2_coords: np.ndarray               # (n_p2, 2)
    velocity_boundary_mask: np.ndarray  # (n_p2,) bool
    pressure_boundary_mask: np.ndarray  # (n_pressure,) bool
    areas: np.ndarray                   # (nt,)
    qp_phys: np.ndarray                 # (nt, nq, 2)
    wdet: np.ndarray                    # (nt, nq) quadrature weight * area
    p2_at_qp: np.ndarray                # (nq, 6)
    p1_at_qp: np.ndarray                # (nq, 3)
    p2_grads: np.ndarray                # (nt, nq, 6, 2) physical gradients
    p1_grads: np.ndarray                # (nt, 3, 2) physical gradients
    inv_jt: np.ndarray                  # (nt, 2, 2)
    facet_qp: np.ndarray                # (nf, 3, 2)
    facet_w: np.ndarray                 # (nf, 3) weight * length
    facet_nodes: np.ndarray             # (nf, 3) P2 nodes [start, end, midpoint]
    facet_normals: np.ndarray           # (nf, 2) unit outward normals
    edge_basis: np.ndarray              # (3, 3) 1D P2 values at edge parameters

    @property
    def dim_velocity(self):
        return 2 * self.n_p2

    @property
    def dim_pressure(self):
        return self.n_pressure

    @property
    def gauge_free(self):
        return np.flatnonzero(~self.pressure_boundary_mask)

    def velocity_dofs(self, nodes):
        """Stack (x-component, y-component) dof indices for the given nodes."""
        nodes = np.asarray(nodes)
        return np.concatenate([nodes, nodes + self.n_p2])

    def split_velocity(self, coeffs):
        return coeffs[: self.n_p2], coeffs[self.n_p2 :]


@dataclass
class DiscreteField:
    space: SpacePair
    kind: str  # "velocity" or "pressure"
    coeffs: np.ndarray

    def __post_init__(self):
        dim = self.space.dim_velocity if self.kind == "velocity" else self.space.dim_pressure
        if self.coeffs.shape != (dim,):
            raise ValueError(
                f"coefficient length {self.coeffs.shape} does not match {self.kind} space ({dim})"
            )


def build_spaces(mesh):
    """Generate dof maps, boundary masks and the quadrature cache for a mesh."""
    nv = mesh.n_vertices
    nt = mesh.n_triangles
    n_p2 = nv + mesh.n_edges

    tri_p2 = np.hstack([mesh.triangles, nv + mesh.tri_to_edge])
    midpoints = 0.5 * (mesh.vertices[mesh.edges[:, 0]] + mesh.vertices[mesh.edges[:, 1]])
    p2_coords = np.vstack([mesh.vertices, midpoints])

    pressure_boundary_mask = mesh.boundary_vertex_mask()
    velocity_boundary_mask = np.zeros(n_p2, dtype=bool)
    velocity_boundary_mask[:nv] = pressure_boundary_mask
    velocity_boundary_mask[nv:] = mesh.boundary_edge_mask()

    qp, qw = triangle_rule()
    nq = qp.shape[0]

    p = mesh.vertices[mesh.triangles]          # (nt, 3, 2)
    jac = np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=2)  # (nt, 2, 2) columns
    det = jac[:, 0, 0] * jac[:, 1, 1] - jac[:, 0, 1] * jac[:, 1, 0]
    areas = 0.5 * det
    inv_j = np.empty_like(jac)
    inv_j[:, 0, 0] = jac[:, 1, 1]
    inv_j[:, 0, 1] = -jac[:, 0, 1]
    inv_j[:, 1, 0] = -jac[:, 1, 0]
    inv_j[:, 1, 1] = jac[:, 0, 0]
    inv_j /= det[:, None, None]
    inv_jt = np.transpose(inv_j, (0, 2, 1))

    qp_phys = p[:, None, 0, :] + np.einsum("tab,qb->tqa", jac, qp)
    wdet = qw[None, :] * areas[:, None]

    ref_g = p2_ref_grads(qp)                   # (nq, 6, 2)
    p2_grads = np.einsum("tab,qib->tqia", inv_jt, ref_g)
    p1_grads = np.einsum("tab,ib->tia", inv_jt, P1_REF_GRADS)

    es, ew = edge_rule()
    facets = mesh.boundary_facets
    nf = len(facets)
    facet_qp = np.zeros((nf, es.size, 2))
    facet_w = np.zeros((nf, es.size))
    facet_nodes = np.zeros((nf, 3), dtype=np.int64)
    facet_normals = np.zeros((nf, 2))
    for fi, facet in enumerate(facets):
        a = mesh.vertices[facet.edge[0]]
        b = mesh.vertices[facet.edge[1]]
        length = float(np.hypot(*(b - a)))
        facet_qp[fi] = a[None, :] + es[:, None] * (b - a)[None, :]
        facet_w[fi] = ew * length
        facet_nodes[fi] = (facet.edge[0], facet.edge[1], nv + facet.edge_id)
        facet_normals[fi] = facet.outward_normal
    edge_basis = np.column_stack(
        [(1.0 - es) * (1.0 - 2.0 * es), es * (2.0 * es - 1.0), 4.0 * es * (1.0 - es)]
    )

    return SpacePair(
        mesh=mesh,
        n_p2=n_p2,
        n_pressure=nv,
        tri_p2=tri_p2,
        p2_coords=p2_coords,
        velocity_boundary_mask=velocity_boundary_mask,
        pressure_boundary_mask=pressure_boundary_mask,
        areas=areas,
        qp_phys=qp_phys,
        wdet=wdet,
        p2_at_qp=p2_values(qp),
        p1_at_qp=p1_values(qp),
        p2_grads=p2_grads,
        p1_grads=p1_grads,
        inv_jt=inv_jt,
        facet_qp=facet_qp,
        facet_w=facet_w,
        facet_nodes=facet_nodes,
        facet_normals=facet_normals,
        edge_basis=edge_basis,
    )


@dataclass
class OperatorSet:
    """Assembled sparse forms; immutable once built.

    m_u        velocity mass                       (2n x 2n)
    k_grad     (grad v, grad w)                    (2n x 2n)
    k_eps      (eps(v), eps(w)), eps symmetric     (2n x 2n)
    g_div      (div v, div w)                      (2n x 2n)
    b_div      (q_j, div v_i), pressure rows       (np x 2n)
    l_p        scalar Laplacian on Q_h             (np x np)
    m_p        scalar mass on Q_h                  (np x np)
    h_p        m_p + l_p                           (np x np)
    s_bnd      <dn(phi_j), div_G v_i> on boundary  (2n x np)
    c_v        (v_j, grad z_i), pressure rows      (np x 2n)
    m_u_scalar scalar P2 mass (projection helper)  (n x n)
    """

    m_u: SparseMatrix
    k_grad: SparseMatrix
    k_eps: SparseMatrix
    g_div: SparseMatrix
    b_div: SparseMatrix
    l_p: SparseMatrix
    m_p: SparseMatrix
    h_p: SparseMatrix
    s_bnd: SparseMatrix
    c_v: SparseMatrix
    m_u_scalar: SparseMatrix


def _scatter(local, rows_map, cols_map, shape):
    nt, r, c = local.shape
    rows = np.repeat(rows_map, c, axis=1).ravel()
    cols = np.tile(cols_map, (1, r)).ravel()
    return SparseMatrix.from_coo(rows, cols, local.reshape(-1), shape)


def assemble_operators(mesh, spaces):
    """Assemble every bilinear form used by the schemes."""
    n = spaces.n_p2
    npr = spaces.n_pressure
    tri_p2 = spaces.tri_p2
    wd = spaces.wdet
    phi = spaces.p2_at_qp
    chi = spaces.p1_at_qp
    gx = spaces.p2_grads[..., 0]
    gy = spaces.p2_grads[..., 1]

    ms = np.einsum("tq,qi,qj->tij", wd, phi, phi)
    axx = np.einsum("tq,tqi,tqj->tij", wd, gx, gx)
    ayy = np.einsum("tq,tqi,tqj->tij", wd, gy, gy)
    axy = np.einsum("tq,tqi,tqj->tij", wd, gx, gy)
    ayx = np.transpose(axy, (0, 2, 1))
    ks = axx + ayy

    lg12 = np.hstack([tri_p2, tri_p2 + n])
    shape_uu = (2 * n, 2 * n)

    def vec_blocks(bxx, bxy, byx, byy):
        loc = np.empty((mesh.n_triangles, 12, 12))
        loc[:, :6, :6] = bxx
        loc[:, :6, 6:] = bxy
        loc[:, 6:, :6] = byx
        loc[:, 6:, 6:] = byy
        return _scatter(loc, lg12, lg12, shape_uu)

    zero6 = np.zeros_like(ms)
    m_u = vec_blocks(ms, zero6, zero6, ms)
    k_grad = vec_blocks(ks, zero6, zero6, ks)
    k_eps = vec_blocks(axx + 0.5 * ayy, 0.5 * ayx, 0.5 * axy, ayy + 0.5 * axx)
    g_div = vec_blocks(axx, axy, ayx, ayy)

    bx = np.einsum("tq,qj,tqi->tji", wd, chi, gx)
    by = np.einsum("tq,qj,tqi->tji", wd, chi, gy)
    b_loc = np.concatenate([bx, by], axis=2)
    b_div = _scatter(b_loc, mesh.triangles, lg12, (npr, 2 * n))

    m_p_loc = np.einsum("tq,qi,qj->tij", wd, chi, chi)
    l_p_loc = np.einsum("t,tia,tja->tij", spaces.areas, spaces.p1_grads, spaces.p1_grads)
    m_p = _scatter(m_p_loc, mesh.triangles, mesh.triangles, (npr, npr))
    l_p = _scatter(l_p_loc, mesh.triangles, mesh.triangles, (npr, npr))

    phi_int = np.einsum("tq,qj->tj", wd, phi)  # integral of each P2 basis per element
    cx = np.einsum("ti,tj->tij", spaces.p1_grads[:, :, 0], phi_int)
    cy = np.einsum("ti,tj->tij", spaces.p1_grads[:, :, 1], phi_int)
    c_loc = np.concatenate([cx, cy], axis=2)
    c_v = _scatter(c_loc, mesh.triangles, lg12, (npr, 2 * n))

    s_bnd = _assemble_surface_divergence(mesh, spaces)

    m_u_scalar = _scatter(ms, tri_p2, tri_p2, (n, n))

    return OperatorSet(
        m_u=m_u,
        k_grad=k_grad,
        k_eps=k_eps,
        g_div=g_div,
        b_div=b_div,
        l_p=l_p,
        m_p=m_p,
        h_p=m_p + l_p,
        s_bnd=s_bnd,
        c_v=c_v,
        m_u_scalar=m_u_scalar,
    )


def _assemble_surface_divergence(mesh, spaces):
    """S[i, j] = sum over facets of int (n . grad chi_j)(t^T grad(v_i) t) ds.

    Gradients are one-sided traces from the owning triangle; in 2D the surface
    divergence of the velocity basis function phi_i e_c is t_c (t . grad phi_i).
    """
    n = spaces.n_p2
    rows, cols, vals = [], [], []
    for fi, facet in enumerate(mesh.boundary_facets):
        tri = facet.owning_triangle
        tang = facet.tangent
        nrm = facet.outward_normal
        x0 = mesh.vertices[mesh.triangles[tri, 0]]
        inv_j = spaces.inv_jt[tri].T
        ref_pts = (spaces.facet_qp[fi] - x0[None, :]) @ inv_j.T
        ref_g = p2_ref_grads(ref_pts)                       # (3, 6, 2)
        phys_g = np.einsum("ab,qib->qia", spaces.inv_jt[tri], ref_g)
        t_dot_g = np.einsum("qia,a->qi", phys_g, tang)      # (3, 6)
        dn_chi = spaces.p1_grads[tri] @ nrm                 # (3,)
        base = np.einsum("q,qi,j->ij", spaces.facet_w[fi], t_dot_g, dn_chi)  # (6, 3)
        for c, tc in enumerate(tang):
            if tc == 0.0:
                continue
            block = tc * base
            r = np.repeat(spaces.tri_p2[tri] + c * n, 3)
            cjs = np.tile(mesh.triangles[tri], 6)
            rows.append(r)
            cols.append(cjs)
            vals.append(block.reshape(-1))
    if rows:
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
    else:  # pragma: no cover - rectangles always have boundary facets
        rows = cols = vals = np.zeros(0)
    return SparseMatrix.from_coo(rows, cols, vals, (2 * n, spaces.n_pressure))


def _volume_velocity_load(values, spaces):
    """Load vector from velocity-valued data sampled at the volume quadrature."""
    contrib_x = np.einsum("tq,qi->ti", spaces.wdet * values[..., 0], spaces.p2_at_qp)
    contrib_y = np.einsum("tq,qi->ti", spaces.wdet * values[..., 1], spaces.p2_at_qp)
    vec = np.zeros(spaces.dim_velocity)
    np.add.at(vec, spaces.tri_p2, contrib_x)
    np.add.at(vec, spaces.tri_p2 + spaces.n_p2, contrib_y)
    return vec


def _volume_pressure_load(values, spaces):
    contrib = np.einsum("tq,qi->ti", spaces.wdet * values, spaces.p1_at_qp)
    vec = np.zeros(spaces.dim_pressure)
    np.add.at(vec, spaces.mesh.triangles, contrib)
    return vec


def assemble_load(f, t, spaces):
    """Entries int f(t, .) . v_i dx using the volume quadrature rule."""
    if f is None:
        return np.zeros(spaces.dim_velocity)
    values = np.asarray(f(t, spaces.qp_phys), dtype=float)
    return _volume_velocity_load(values, spaces)


def assemble_boundary_load(g, t, spaces):
    """Entries int_Gamma g(t, .) . v_i ds over all boundary facets."""
    vec = np.zeros(spaces.dim_velocity)
    if g is None or spaces.facet_qp.shape[0] == 0:
        return vec
    values = np.asarray(g(t, spaces.facet_qp), dtype=float)  # (nf, 3, 2)
    contrib_x = np.einsum("fq,qi->fi", spaces.facet_w * values[..., 0], spaces.edge_basis)
    contrib_y = np.einsum("fq,qi->fi", spaces.facet_w * values[..., 1], spaces.edge_basis)
    np.add.at(vec, spaces.facet_nodes, contrib_x)
    np.add.at(vec, spaces.facet_nodes + spaces.n_p2, contrib_y)
    return vec


def l2_project(func, spaces, operators, kind):
    """L2 projection of a pointwise-evaluable field onto velocity or pressure.

    func maps points of shape (..., 2) to field values; solves the mass-matrix
    system to a 1e-12 relative residual.
    """
    values = np.asarray(func(spaces.qp_phys), dtype=float)
    if kind == "velocity":
        coeffs = np.concatenate(
            [
                solve_spd(
                    operators.m_u_scalar,
                    _volume_velocity_load(values, spaces)[: spaces.n_p2],
                    _PROJECTION_CONFIG,
                ),
                solve_spd(
                    operators.m_u_scalar,
                    _volume_velocity_load(values, spaces)[spaces.n_p2 :],
                    _PROJECTION_CONFIG,
                ),
            ]
        )
    elif kind == "pressure":
        coeffs = solve_spd(
            operators.m_p, _volume_pressure_load(values, spaces), _PROJECTION_CONFIG
        )
    else:
        raise ValueError(f"unknown space kind: {kind!r}")
    return DiscreteField(spaces, kind, coeffs)


def restrict_to_gauge(obj, spaces):
    """Drop boundary-vertex rows/columns (entries) of a Q_h matrix or vector."""
    free = spaces.gauge_free
    if isinstance(obj, SparseMatrix):
        return obj.submatrix(free)
    vec = np.asarray(obj)
    return vec[free]


def prolong_from_gauge(vec, spaces):
    """Extend a gauge-space vector by zero to the full pressure space."""
    full = np.zeros(spaces.dim_pressure)
    full[spaces.gauge_free] = vec
    return full


def korn_constant(operators, form, tol=1e-10):
    """Discrete best constant of kappa*d*(||v||^2 + ||grad v||^2) <= ||v||^2 + Re*A(v)^2.

    kappa = lambda_min / d with (M + F) x = lambda (M + K_grad) x, d = 2; the
    pencil matrices coincide for the open form, so kappa = 1/2 there.
    """
    a = operators.m_u + form_matrix(operators, form)
    b = operators.m_u + operators.k_grad
    return 0.5 * smallest_generalized_eigenvalue(a, b, tol)


def form_matrix(operators, form):
    """The Re-independent viscous form matrix: v' F v = Re * A(v)^2.

    Open boundary conditions use (grad v, grad w); traction uses
    2 (eps(v), eps(w)), the scaling integration by parts produces from the
    divergence of the symmetric-gradient stress.
    """
    if form == "open":
        return operators.k_grad
    if form == "traction":
        return 2.0 * operators.k_eps
    raise ValueError(f"unknown form: {form!r}")
