"""Manufactured solutions, error norms, convergence rates and stability probes.

The manufactured velocity is divergence free and satisfies Delta u = -2u, so
the forcing reduces to f = u_t + (2/Re) u + grad p for both boundary-condition
forms; the prescribed boundary data g carries the form-dependent stress.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import assemble_operators, build_spaces, korn_constant
from .mesh import build_rect_mesh
from .schemes import SchemeDriver, SchemeParams, step_count
from .sparse_linalg import SolverConfig

NORM_KEYS = ("u_linf_l2", "u_l2_h1", "p_linf_l2", "p_l2_l2")


class ExactSolution:
    """u = (sin(t+x) sin(t+y), cos(t+x) cos(t+y)), p = sin(t+x-y), with the
    forcing and boundary traction consistent with the chosen viscous form."""

    def __init__(self, form="traction", re=1.0):
        if form not in ("open", "traction"):
            raise ValueError(f"unknown form: {form!r}")
        if re <= 0.0:
            raise ValueError("re must be positive")
        self.form = form
        self.re = float(re)

    @staticmethod
    def velocity(t, pts):
        x, y = pts[..., 0], pts[..., 1]
        return np.stack(
            [np.sin(t + x) * np.sin(t + y), np.cos(t + x) * np.cos(t + y)], axis=-1
        )

    @staticmethod
    def pressure(t, pts):
        return np.sin(t + pts[..., 0] - pts[..., 1])

    @staticmethod
    def velocity_gradient(t, pts):
        """grad u with entries [i, j] = d u_i / d x_j."""
        x, y = pts[..., 0], pts[..., 1]
        cx, sx = np.cos(t + x), np.sin(t + x)
        cy, sy = np.cos(t + y), np.sin(t + y)
        g = np.empty(pts.shape[:-1] + (2, 2))
        g[..., 0, 0] = cx * sy
        g[..., 0, 1] = sx * cy
        g[..., 1, 0] = -sx * cy
        g[..., 1, 1] = -cx * sy
        return g

    @staticmethod
    def velocity_time_derivative(t, pts):
        x, y = pts[..., 0], pts[..., 1]
        s = np.sin(2.0 * t + x + y)
        return np.stack([s, -s], axis=-1)

    @staticmethod
    def divergence(t, pts):
        x, y = pts[..., 0], pts[..., 1]
        return np.cos(t + x) * np.sin(t + y) - np.cos(t + x) * np.sin(t + y)

    @staticmethod
    def pressure_gradient(t, pts):
        x, y = pts[..., 0], pts[..., 1]
        c = np.cos(t + x - y)
        return np.stack([c, -c], axis=-1)

    def forcing(self, t, pts):
        """f = u_t - (2/Re) div eps(u) + grad p; div eps(u) = -u here."""
        return (
            self.velocity_time_derivative(t, pts)
            + (2.0 / self.re) * self.velocity(t, pts)
            + self.pressure_gradient(t, pts)
        )

    def stress(self, t, pts):
        """The viscous stress whose divergence the scheme form weakly realizes."""
        g = self.velocity_gradient(t, pts)
        if self.form == "open":
            return g / self.re
        return (g + np.swapaxes(g, -1, -2)) / self.re

    def traction(self, t, pts, normals):
        """g = (stress - p I) . n for outward unit normals broadcast over pts."""
        sigma = self.stress(t, pts)
        p = self.pressure(t, pts)
        return np.einsum("...ij,...j->...i", sigma, normals) - p[..., None] * normals


def evaluate_exact(which, form, re, t, x, y, normal=None):
    """Pointwise evaluation of u, p, f or g at scalar or array arguments."""
    exact = ExactSolution(form, re)
    pts = np.stack([np.asarray(x, dtype=float), np.asarray(y, dtype=float)], axis=-1)
    if which == "u":
        return exact.velocity(t, pts)
    if which == "p":
        return exact.pressure(t, pts)
    if which == "f":
        return exact.forcing(t, pts)
    if which == "g":
        if normal is None:
            raise ValueError("traction evaluation needs the outward normal")
        return exact.traction(t, pts, np.asarray(normal, dtype=float))
    raise ValueError(f"unknown field: {which!r}")


def make_boundary_traction(exact, spaces):
    """Boundary-data callable for assemble_boundary_load aligned with the
    facet quadrature layout (one normal per facet)."""
    normals = spaces.facet_normals[:, None, :]

    def g(t, pts):
        return exact.traction(t, pts, normals)

    return g


class FieldErrorEvaluator:
    """Quadrature-based errors of discrete velocity/pressure against the exact
    solution, using the same rule as assembly (shared SpacePair cache)."""

    def __init__(self, spaces, exact):
        self.spaces = spaces
        self.exact = exact

    def velocity_error(self, u_coeffs, t):
        """(L2 error, full H1 error) of the velocity coefficients at time t."""
        sp = self.spaces
        ux, uy = sp.split_velocity(u_coeffs)
        loc_x = ux[sp.tri_p2]
        loc_y = uy[sp.tri_p2]
        vals_x = np.einsum("ti,qi->tq", loc_x, sp.p2_at_qp)
        vals_y = np.einsum("ti,qi->tq", loc_y, sp.p2_at_qp)
        grad_x = np.einsum("ti,tqia->tqa", loc_x, sp.p2_grads)
        grad_y = np.einsum("ti,tqia->tqa", loc_y, sp.p2_grads)

        vel = self.exact.velocity(t, sp.qp_phys)
        grad = self.exact.velocity_gradient(t, sp.qp_phys)
        dx = vals_x - vel[..., 0]
        dy = vals_y - vel[..., 1]
        l2_sq = float(np.sum(sp.wdet * (dx**2 + dy**2)))
        gx = grad_x - grad[..., 0, :]
        gy = grad_y - grad[..., 1, :]
        h1_semi_sq = float(np.sum(sp.wdet[..., None] * (gx**2 + gy**2)))
        return np.sqrt(l2_sq), np.sqrt(l2_sq + h1_semi_sq)

    def pressure_error(self, p_coeffs, t):
        sp = self.spaces
        loc = p_coeffs[sp.mesh.triangles]
        vals = np.einsum("ti,qi->tq", loc, sp.p1_at_qp)
        diff = vals - self.exact.pressure(t, sp.qp_phys)
        return float(np.sqrt(np.sum(sp.wdet * diff**2)))


class ErrorObserver:
    """Accumulates the four reported discrete-in-time error norms over a run:
    max over k = 0..K for the ell-infinity norms, tau-weighted sums over
    k = 1..K for the ell-2 norms."""

    def __init__(self, spaces, exact, tau):
        self.evaluator = FieldErrorEvaluator(spaces, exact)
        self.tau = tau
        self.u_linf_l2 = 0.0
        self.p_linf_l2 = 0.0
        self._u_h1_sq_sum = 0.0
        self._p_l2_sq_sum = 0.0

    def __call__(self, record):
        if record.u is None or record.p is None:
            raise ValueError("error observer needs field data in step records")
        u_l2, u_h1 = self.evaluator.velocity_error(record.u, record.t)
        p_l2 = self.evaluator.pressure_error(record.p, record.t)
        self.u_linf_l2 = max(self.u_linf_l2, u_l2)
        self.p_linf_l2 = max(self.p_linf_l2, p_l2)
        if record.k >= 1:
            self._u_h1_sq_sum += u_h1**2
            self._p_l2_sq_sum += p_l2**2

    def norms(self):
        return {
            "u_linf_l2": self.u_linf_l2,
            "u_l2_h1": float(np.sqrt(self.tau * self._u_h1_sq_sum)),
            "p_linf_l2": self.p_linf_l2,
            "p_l2_l2": float(np.sqrt(self.tau * self._p_l2_sq_sum)),
        }


@dataclass
class ConvergenceRow:
    tau: float
    h_max: float
    h_min: float
    errors: dict
    failure: str | None = None


@dataclass
class ConvergenceTable:
    rows: list = field(default_factory=list)

    def add(self, row):
        if self.rows and row.tau >= self.rows[-1].tau:
            raise ValueError("rows must be added with strictly decreasing tau")
        self.rows.append(row)

    def eoc(self):
        """Per-norm experimental orders between consecutive rows.

        None marks undefined rates (first row, failures, nonpositive errors).
        """
        rates = {key: [None] for key in NORM_KEYS}
        for prev, cur in zip(self.rows, self.rows[1:]):
            ratio = np.log(prev.tau / cur.tau)
            for key in NORM_KEYS:
                e0 = prev.errors.get(key)
                e1 = cur.errors.get(key)
                if (
                    prev.failure or cur.failure
                    or e0 is None or e1 is None
                    or e0 <= 0.0 or e1 <= 0.0
                ):
                    rates[key].append(None)
                else:
                    rates[key].append(float(np.log(e0 / e1) / ratio))
        return rates

    def mean_eoc(self):
        """Average of the defined pairwise rates per norm (the aggregate order)."""
        rates = self.eoc()
        out = {}
        for key, vals in rates.items():
            defined = [v for v in vals if v is not None]
            out[key] = float(np.mean(defined)) if defined else None
        return out

    def to_csv(self, path, header_comment=""):
        rates = self.eoc()
        with open(path, "w", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            cols = ["tau", "h_max", "h_min", *NORM_KEYS, *(f"eoc_{k}" for k in NORM_KEYS)]
            fh.write(",".join(cols) + "\n")
            for i, row in enumerate(self.rows):
                vals = [f"{row.tau:.17g}", f"{row.h_max:.17g}", f"{row.h_min:.17g}"]
                for key in NORM_KEYS:
                    e = row.errors.get(key)
                    vals.append("" if e is None else f"{e:.17g}")
                for key in NORM_KEYS:
                    r = rates[key][i]
                    vals.append("" if r is None else f"{r:.17g}")
                fh.write(",".join(vals) + "\n")

    def write_plot_data(self, directory, prefix=""):
        """One gnuplot-friendly two-column (tau, error) file per norm."""
        import os

        paths = []
        for key in NORM_KEYS:
            path = os.path.join(directory, f"{prefix}{key}.dat")
            with open(path, "w", encoding="utf-8") as fh:
                for row in self.rows:
                    e = row.errors.get(key)
                    if e is not None and not row.failure:
                        fh.write(f"{row.tau:.17g} {e:.17g}\n")
            paths.append(path)
        return paths


def eoc(errors, taus):
    """Rates log(e_i/e_{i+1}) / log(tau_i/tau_{i+1}); None where undefined."""
    out = []
    for (e0, t0), (e1, t1) in zip(zip(errors, taus), zip(errors[1:], taus[1:])):
        if e0 <= 0.0 or e1 <= 0.0:
            out.append(None)
        else:
            out.append(float(np.log(e0 / e1) / np.log(t0 / t1)))
    return out


def estimate_kappa(form, mesh, spaces, re, operators=None, tol=1e-10):
    """Discrete Korn constant; re enters only through the form scaling, which
    cancels, so the value depends on the form and mesh alone."""
    del re
    ops = operators if operators is not None else assemble_operators(mesh, spaces)
    return korn_constant(ops, form, tol)


@dataclass
class StabilityTrace:
    params: SchemeParams
    u0_l2: float
    steps: list = field(default_factory=list)   # dict rows

    @property
    def max_u_l2(self):
        if not self.steps:
            return self.u0_l2
        return max(self.u0_l2, max(row["u_l2"] for row in self.steps))

    @property
    def monitors_pass(self):
        return all(
            row[key] is not False
            for row in self.steps
            for key in ("almostfinfo", "fo4", "fo5")
        )

    @property
    def cfl_satisfied(self):
        flags = [row["cfl_ok"] for row in self.steps if row["cfl_ok"] is not None]
        return all(flags) if flags else None

    @property
    def bounded_by_e(self):
        """max_k ||u^k|| <= e * ||u^0|| (trivially true for zero data)."""
        if self.u0_l2 == 0.0:
            return all(row["u_l2"] == 0.0 for row in self.steps)
        return self.max_u_l2 <= np.e * self.u0_l2

    def violation_count(self):
        return sum(
            1
            for row in self.steps
            for key in ("almostfinfo", "fo4", "fo5")
            if row[key] is False
        )

    def to_csv(self, path, header_comment=""):
        def flag(v):
            return "" if v is None else ("1" if v else "0")

        with open(path, "w", encoding="utf-8") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write(
                "k,t,u_sq,alpha_div_sq,q_energy,gauge_energy,"
                "almostfinfo,fo4,fo5,cfl_ok\n"
            )
            for row in self.steps:
                fh.write(
                    f"{row['k']},{row['t']:.17g},{row['u_sq']:.17g},"
                    f"{row['alpha_div_sq']:.17g},{row['q_energy']:.17g},"
                    f"{row['gauge_energy']:.17g},{flag(row['almostfinfo'])},"
                    f"{flag(row['fo4'])},{flag(row['fo5'])},{flag(row['cfl_ok'])}\n"
                )


def stability_probe(params, nx, steps, seed, ny=None, extent=(1.0, 1.0),
                    amplitude=1.0, context=None, solver_config=None):
    """Zero-data run from seeded random initial velocity of unit L2 norm.

    Records per-step energies and the per-step inequality verdicts; monitor
    violations are recorded, never raised.
    """
    if context is None:
        mesh = build_rect_mesh(nx, ny if ny is not None else nx, extent)
        spaces = build_spaces(mesh)
        ops = assemble_operators(mesh, spaces)
    else:
        mesh, spaces, ops = context
    driver = SchemeDriver(mesh, spaces, ops, params, solver_config)

    if amplitude == 0.0:
        u0 = np.zeros(spaces.dim_velocity)
        u0_l2 = 0.0
    else:
        rng = np.random.default_rng(seed)
        u0 = rng.standard_normal(spaces.dim_velocity)
        u0 /= np.sqrt(u0 @ (ops.m_u.tocsr() @ u0))
        u0 *= amplitude
        u0_l2 = amplitude

    state = driver.initialize(u0=u0)
    history = driver.run(state, f=None, g=None, keep_fields=False, n_steps=steps)

    p = params
    trace = StabilityTrace(params=p, u0_l2=u0_l2)
    weight_q = (p.kappa if p.pressure_update_variant == "kappa" else 1.0)
    if weight_q is None:
        weight_q = driver.kappa
    for diag in history.diagnostics:
        en = diag.energies
        gauge = en.get("gauge_sq", 0.0)
        trace.steps.append(
            {
                "k": diag.k,
                "t": diag.t,
                "u_l2": diag.u_l2,
                "u_sq": en["u_sq"],
                "alpha_div_sq": p.alpha * en["div_sq"],
                "q_energy": weight_q * (p.tau / p.re) * en["q_sq"],
                "gauge_energy": p.tau**2 * gauge,
                "almostfinfo": diag.monitor_almostfinfo,
                "fo4": diag.monitor_fo4,
                "fo5": diag.monitor_fo5,
                "cfl_ok": diag.cfl_ok,
            }
        )
    return trace


def convergence_study(scheme, m, form, re, nx, tau_list, final_time,
                      alpha=1.0, pressure_update="standard", c_cfl=1.0,
                      kappa=None, ny=None, extent=(1.0, 1.0), solver_config=None,
                      context=None):
    """One full run per time step; returns the assembled table with EOCs.

    The mesh, spaces and operators (and the Korn constant where needed) are
    built once and shared across time steps.
    """
    taus = list(tau_list)
    if any(t1 >= t0 for t0, t1 in zip(taus, taus[1:])):
        raise ValueError("tau_list must be strictly decreasing")
    for tau in taus:
        step_count(final_time, tau)

    if context is None:
        mesh = build_rect_mesh(nx, ny if ny is not None else nx, extent)
        spaces = build_spaces(mesh)
        ops = assemble_operators(mesh, spaces)
    else:
        mesh, spaces, ops = context

    if kappa is None and (scheme == "boundary_correction" or pressure_update == "kappa"):
        kappa = korn_constant(ops, form)

    exact = ExactSolution(form, re)
    g_data = make_boundary_traction(exact, spaces)
    table = ConvergenceTable()
    for tau in taus:
        params = SchemeParams(
            scheme=scheme, m=m, form=form, re=re, tau=tau, final_time=final_time,
            alpha=alpha, kappa=kappa, pressure_update_variant=pressure_update,
            c_cfl=c_cfl,
        )
        driver = SchemeDriver(mesh, spaces, ops, params, solver_config)
        observer = ErrorObserver(spaces, exact, tau)
        state = driver.initialize(exact=exact)
        history = driver.run(
            state, f=exact.forcing, g=g_data, observers=(observer,), keep_fields=False
        )
        errors = observer.norms() if history.completed else {}
        table.add(
            ConvergenceRow(
                tau=tau,
                h_max=mesh.h_max,
                h_min=mesh.h_min,
                errors=errors,
                failure=history.failure,
            )
        )
    return table
