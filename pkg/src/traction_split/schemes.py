"""Time-stepping schemes: grad-div stabilized and boundary-correction
rotational pressure correction, plus the no-slip gauge-Uzawa/rotational pair.

A SchemeDriver bundles mesh, spaces, assembled operators and parameters; its
step methods advance one time level and report per-step diagnostics including
the per-step energy-inequality monitors used by the stability probes.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .fem import (
    assemble_boundary_load,
    assemble_load,
    form_matrix,
    korn_constant,
    l2_project,
    prolong_from_gauge,
)
from .sparse_linalg import SolverConfig, SolverFailure, relative_residual, solve_spd

SCHEMES = ("graddiv", "boundary_correction", "gauge_uzawa_noslip", "rotational_noslip")
FORMS = ("open", "traction")
PRESSURE_UPDATES = ("standard", "kappa")

_MONITOR_RTOL = 1e-10


def bdf_apply(m, phi_new, phi_old, phi_older=None, tau=1.0):
    """Backward differentiation of order m in time step tau."""
    if m == 1:
        return (phi_new - phi_old) / tau
    if m == 2:
        if phi_older is None:
            raise ValueError("BDF2 needs two history levels")
        return (3.0 * phi_new - 4.0 * phi_old + phi_older) / (2.0 * tau)
    raise ValueError(f"order must be 1 or 2, got {m}")


def extrapolate_sharp(m, dphi, dphi_prev=None):
    """The increment extrapolation: dphi for m=1, (4 dphi - dphi_prev)/3 for m=2."""
    if m == 1:
        return dphi
    if m == 2:
        if dphi_prev is None:
            raise ValueError("second-order extrapolation needs two increments")
        return (4.0 / 3.0) * dphi - (1.0 / 3.0) * dphi_prev
    raise ValueError(f"order must be 1 or 2, got {m}")


def step_count(final_time, tau):
    """Number of steps K with K * tau = final_time (to a few ulps)."""
    ratio = final_time / tau
    k = int(round(ratio))
    if k < 1 or abs(ratio - k) > 4.0 * np.spacing(max(abs(ratio), 1.0)):
        raise ValueError("time step must divide final time")
    return k


@dataclass
class SchemeParams:
    """Parameters shared by all schemes; validated on construction."""

    scheme: str = "graddiv"
    m: int = 2
    form: str = "traction"
    re: float = 1.0
    tau: float = 0.1
    final_time: float = 1.0
    alpha: float = 1.0
    kappa: float | None = None
    pressure_update_variant: str = "standard"
    c_cfl: float = 1.0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme: {self.scheme!r}")
        if self.form not in FORMS:
            raise ValueError(f"unknown form: {self.form!r}")
        if self.m not in (1, 2):
            raise ValueError("time order m must be 1 or 2")
        if self.re <= 0.0 or self.tau <= 0.0 or self.final_time <= 0.0:
            raise ValueError("re, tau and final_time must be positive")
        if self.alpha < 1.0:
            raise ValueError("grad-div parameter alpha must be >= 1")
        if self.c_cfl <= 0.0:
            raise ValueError("c_cfl must be positive")
        if self.pressure_update_variant not in PRESSURE_UPDATES:
            raise ValueError(
                f"unknown pressure update variant: {self.pressure_update_variant!r}"
            )
        if self.scheme == "boundary_correction":
            # eq. of the boundary-correction pressure update always carries kappa
            object.__setattr__(self, "pressure_update_variant", "kappa")
        if self.scheme in ("gauge_uzawa_noslip", "rotational_noslip") and self.m != 1:
            raise ValueError("the no-slip pair is first order only")

    @property
    def beta(self):
        return 1.0 + 0.5 * (self.m - 1)

    @property
    def bdf_lead(self):
        return 1.0 if self.m == 1 else 1.5

    @property
    def alpha_in_stability_regime(self):
        """alpha > max(1, 2/Re), the hypothesis of the grad-div stability results."""
        return self.alpha > max(1.0, 2.0 / self.re)


@dataclass
class SchemeState:
    """k-th time level: velocity history, gauge, divergence accumulator, pressure."""

    k: int
    u: np.ndarray
    u_prev: np.ndarray
    psi: np.ndarray
    dpsi: np.ndarray
    dpsi_prev: np.ndarray
    q: np.ndarray
    p: np.ndarray
    init_fields: tuple = ()   # (k, u, p) snapshots of the initialization levels


@dataclass
class StepDiagnostics:
    k: int
    t: float
    u_l2: float
    a_form: float
    div_l2: float
    p_l2: float
    solver_residuals: dict
    energies: dict = field(default_factory=dict)
    monitor_almostfinfo: bool | None = None
    monitor_fo4: bool | None = None
    monitor_fo5: bool | None = None
    cfl_ok: bool | None = None

    def monitors_pass(self):
        return all(
            flag is not False
            for flag in (self.monitor_almostfinfo, self.monitor_fo4, self.monitor_fo5)
        )


@dataclass
class StepRecord:
    k: int
    t: float
    diagnostics: StepDiagnostics | None
    u: np.ndarray | None
    p: np.ndarray | None


@dataclass
class History:
    params: SchemeParams
    records: list
    final_state: SchemeState | None
    completed: bool
    failure: str | None = None

    @property
    def diagnostics(self):
        return [r.diagnostics for r in self.records if r.diagnostics is not None]


def _leq(lhs, rhs, scale):
    return bool(lhs <= rhs + _MONITOR_RTOL * max(abs(rhs), abs(lhs), scale))


class SchemeDriver:
    """One discretized problem: mesh + spaces + operators + scheme parameters."""

    # roundoff in the residual evaluation caps achievable relative residuals
    # near 1e-12 on the stiffer grad-div systems; 1e-10 keeps ample margin
    DEFAULT_SOLVER = SolverConfig(rtol=1e-10)

    def __init__(self, mesh, spaces, operators, params, solver_config=None):
        self.mesh = mesh
        self.spaces = spaces
        self.ops = operators
        self.params = params
        self.solver_config = solver_config or self.DEFAULT_SOLVER
        self.a_form = form_matrix(operators, params.form)

        p = params
        needs_kappa = (
            p.scheme == "boundary_correction" or p.pressure_update_variant == "kappa"
        )
        self.kappa = p.kappa if p.kappa is not None else (
            korn_constant(operators, p.form) if needs_kappa else None
        )

        if p.scheme == "graddiv":
            self.mu_ag = operators.m_u + p.alpha * operators.g_div
            self.a_sys = (p.bdf_lead / p.tau) * self.mu_ag + (1.0 / p.re) * self.a_form
        elif p.scheme == "boundary_correction":
            self.a_sys = (p.bdf_lead / p.tau) * operators.m_u + (1.0 / p.re) * self.a_form
            free = spaces.gauge_free
            self.l_p_free = operators.l_p.submatrix(free)
            self.cfl_bound = p.c_cfl * p.re * mesh.h_min**2
            if p.tau > self.cfl_bound:
                warnings.warn(
                    f"time step {p.tau:g} exceeds the mesh condition "
                    f"c_cfl*Re*h^2 = {self.cfl_bound:g}; stability is conditional",
                    RuntimeWarning,
                    stacklevel=2,
                )
        else:  # no-slip pair
            free_nodes = np.flatnonzero(~spaces.velocity_boundary_mask)
            self.vel_free = spaces.velocity_dofs(free_nodes)
            base = (1.0 / p.tau) * operators.m_u + (1.0 / p.re) * self.a_form
            self.a_sys_free = base.submatrix(self.vel_free)
            self.m_u_free = operators.m_u.submatrix(self.vel_free)
            gauge = spaces.gauge_free
            self.l_p_free = operators.l_p.submatrix(gauge)

    # -- initialization ----------------------------------------------------

    def initialize(self, exact=None, u0=None):
        """State at levels k = 0..m-1: L2 projections of exact data, a given
        velocity (stability probes, zero gauge and pressure), or all zeros.

        The gauge/accumulator pair is seeded so that the pressure identity
        p = psi + (c/Re) q already holds at the initial level (all increments
        zero); otherwise the first pressure update would discard the initial
        pressure and leave an O(1) startup error in the ell-infinity norms.
        The zero-trace gauge of the boundary-correction scheme cannot carry
        the initial pressure, so there it is lifted into the accumulator.
        """
        p = self.params
        nv = self.spaces.dim_velocity
        npr = self.spaces.dim_pressure
        zeros_p = np.zeros(npr)

        def project_level(t):
            u = self._project_velocity(lambda pts: exact.velocity(t, pts))
            pr = l2_project(
                lambda pts: exact.pressure(t, pts), self.spaces, self.ops, "pressure"
            ).coeffs
            return u, pr

        def gauge_split(p_vec):
            if p.scheme == "graddiv":
                return p_vec.copy(), zeros_p.copy()
            if p.scheme == "boundary_correction":
                return zeros_p.copy(), (p.re / self.kappa) * p_vec
            if p.scheme == "gauge_uzawa_noslip":
                return zeros_p.copy(), p.re * p_vec
            return zeros_p.copy(), zeros_p.copy()  # rotational holds p directly

        if exact is not None:
            u_0, p_0 = project_level(0.0)
            if p.m == 1:
                psi0, q0 = gauge_split(p_0)
                state = SchemeState(0, u_0, u_0.copy(), psi0, zeros_p.copy(),
                                    zeros_p.copy(), q0, p_0)
                state.init_fields = ((0, u_0, p_0),)
            else:
                u_1, p_1 = project_level(p.tau)
                psi1, q1 = gauge_split(p_1)
                state = SchemeState(1, u_1, u_0, psi1, zeros_p.copy(),
                                    zeros_p.copy(), q1, p_1)
                state.init_fields = ((0, u_0, p_0), (1, u_1, p_1))
            return state

        u_0 = np.zeros(nv) if u0 is None else np.asarray(u0, dtype=float).copy()
        k0 = p.m - 1
        state = SchemeState(k0, u_0, u_0.copy(), zeros_p.copy(), zeros_p.copy(),
                            zeros_p.copy(), zeros_p.copy(), zeros_p.copy())
        state.init_fields = tuple((k, u_0, zeros_p) for k in range(p.m))
        return state

    def _project_velocity(self, func):
        if self.params.scheme in ("gauge_uzawa_noslip", "rotational_noslip"):
            # constrained projection: mass solve on the interior dofs only
            from .fem import _volume_velocity_load  # local import avoids API noise

            values = np.asarray(func(self.spaces.qp_phys), dtype=float)
            load = _volume_velocity_load(values, self.spaces)
            u = np.zeros(self.spaces.dim_velocity)
            u[self.vel_free] = solve_spd(
                self.m_u_free, load[self.vel_free], SolverConfig(rtol=1e-12)
            )
            return u
        return l2_project(func, self.spaces, self.ops, "velocity").coeffs

    # -- energy helpers ----------------------------------------------------

    def _energy(self, mat, vec):
        return float(vec @ (mat.tocsr() @ vec))

    def _a_energy(self, u):
        """A(u)^2 = (1/Re) u' F u with the form matrix F."""
        return self._energy(self.a_form, u) / self.params.re

    def _state_energy_terms(self, state):
        p = self.params
        gauge_sq = self._energy(self.ops.h_p, state.psi)
        return {
            "u_sq": self._energy(self.ops.m_u, state.u),
            "div_sq": self._energy(self.ops.g_div, state.u),
            "q_sq": self._energy(self.ops.m_p, state.q),
            "gauge_sq": gauge_sq,
        }

    def _graddiv_rhs_energy(self, terms):
        p = self.params
        return (
            terms["u_sq"]
            + p.alpha * terms["div_sq"]
            + (p.tau / p.re) * terms["q_sq"]
            + p.tau**2 * terms["gauge_sq"]
        )

    # -- steps ---------------------------------------------------------------

    def step(self, state, f=None, g=None):
        name = self.params.scheme
        if name == "graddiv":
            return self.graddiv_step(state, f, g)
        if name == "boundary_correction":
            return self.bc_step(state, f, g)
        if name == "gauge_uzawa_noslip":
            return self.gauge_uzawa_noslip_step(state, f), None
        return self.rotational_noslip_step(state, f), None

    def graddiv_step(self, state, f=None, g=None):
        """One step of the grad-div stabilized rotational scheme."""
        p = self.params
        tau = p.tau
        t_new = (state.k + 1) * tau
        data_free = f is None and g is None
        prev_terms = self._state_energy_terms(state)

        rhs = assemble_load(f, t_new, self.spaces) + assemble_boundary_load(
            g, t_new, self.spaces
        )
        psi_sharp = extrapolate_sharp(p.m, state.dpsi, state.dpsi_prev)
        rhs += self.ops.b_div.T @ (state.p + psi_sharp)
        if p.m == 1:
            rhs += (1.0 / tau) * (self.mu_ag @ state.u)
        else:
            rhs += (0.5 / tau) * (self.mu_ag @ (4.0 * state.u - state.u_prev))

        u_new = solve_spd(self.a_sys, rhs, self.solver_config)
        residuals = {"velocity": relative_residual(self.a_sys, u_new, rhs)}

        div_load = self.ops.b_div @ u_new
        dpsi_new = solve_spd(self.ops.h_p, -(p.beta / tau) * div_load, self.solver_config)
        residuals["projection"] = relative_residual(
            self.ops.h_p, dpsi_new, -(p.beta / tau) * div_load
        )
        psi_new = state.psi + dpsi_new

        dq = solve_spd(self.ops.m_p, -div_load, self.solver_config)
        residuals["div_correction"] = relative_residual(self.ops.m_p, dq, -div_load)
        q_new = state.q + dq

        c_press = 1.0 if p.pressure_update_variant == "standard" else self.kappa
        p_new = psi_new + (c_press / p.re) * q_new

        new_state = SchemeState(
            state.k + 1, u_new, state.u, psi_new, dpsi_new, state.dpsi, q_new, p_new
        )
        diag = self._graddiv_diagnostics(
            state, new_state, dq, t_new, residuals, data_free, prev_terms
        )
        return new_state, diag

    def _graddiv_diagnostics(self, old, new, dq, t_new, residuals, data_free, prev_terms):
        p = self.params
        tau = p.tau
        terms = self._state_energy_terms(new)
        du = new.u - old.u
        du_sq = self._energy(self.ops.m_u, du)
        ddiv_sq = self._energy(self.ops.g_div, du)
        dq_sq = self._energy(self.ops.m_p, dq)
        a_sq = self._a_energy(new.u)
        dpsi_tr = self._energy(self.ops.h_p, new.dpsi)
        first = old.k == p.m - 1

        fo5 = _leq(dq_sq, terms["div_sq"], 1.0)
        if first:
            fo4 = _leq(tau**2 * dpsi_tr, p.beta**2 * terms["div_sq"], 1.0)
        else:
            d2psi = new.dpsi - old.dpsi
            fo4 = _leq(
                tau**2 * self._energy(self.ops.h_p, d2psi),
                p.beta**2 * ddiv_sq,
                1.0,
            )

        almost = None
        if data_free and p.m == 1:
            rhs_energy = self._graddiv_rhs_energy(prev_terms)
            common = (
                terms["u_sq"]
                + p.alpha * (1.0 - 0.5 * tau) * terms["div_sq"]
                + (tau / p.re) * terms["q_sq"]
                + du_sq
                + 2.0 * tau * a_sq
            )
            if first:
                lhs_energy = common + p.alpha * ddiv_sq
            else:
                dpsi_prev_tr = self._energy(self.ops.h_p, old.dpsi)
                lhs_energy = common + tau**2 * terms["gauge_sq"] + tau**2 * dpsi_prev_tr
            almost = _leq(lhs_energy, rhs_energy, max(rhs_energy, 1.0))
            energies_extra = {"monitor_lhs": lhs_energy, "monitor_rhs": rhs_energy}
        else:
            energies_extra = {}

        energies = dict(terms, dq_sq=dq_sq, du_sq=du_sq, a_sq=a_sq, **energies_extra)
        return StepDiagnostics(
            k=new.k,
            t=t_new,
            u_l2=np.sqrt(terms["u_sq"]),
            a_form=np.sqrt(a_sq),
            div_l2=np.sqrt(terms["div_sq"]),
            p_l2=np.sqrt(self._energy(self.ops.m_p, new.p)),
            solver_residuals=residuals,
            energies=energies,
            monitor_almostfinfo=almost,
            monitor_fo4=fo4,
            monitor_fo5=fo5,
        )

    def bc_step(self, state, f=None, g=None):
        """One step of the boundary-correction scheme (gauge in the zero-trace space)."""
        p = self.params
        tau = p.tau
        t_new = (state.k + 1) * tau
        free = self.spaces.gauge_free

        rhs = assemble_load(f, t_new, self.spaces) + assemble_boundary_load(
            g, t_new, self.spaces
        )
        psi_sharp = extrapolate_sharp(p.m, state.dpsi, state.dpsi_prev)
        rhs += self.ops.b_div.T @ state.p
        rhs -= self.ops.c_v.T @ psi_sharp
        rhs -= (tau / (p.beta * p.re)) * (self.ops.s_bnd @ state.dpsi)
        if p.m == 1:
            rhs += (1.0 / tau) * (self.ops.m_u @ state.u)
        else:
            rhs += (0.5 / tau) * (self.ops.m_u @ (4.0 * state.u - state.u_prev))

        u_new = solve_spd(self.a_sys, rhs, self.solver_config)
        residuals = {"velocity": relative_residual(self.a_sys, u_new, rhs)}

        grad_load = (self.ops.c_v @ u_new)[free]
        dpsi_free = solve_spd(self.l_p_free, (p.beta / tau) * grad_load, self.solver_config)
        residuals["projection"] = relative_residual(
            self.l_p_free, dpsi_free, (p.beta / tau) * grad_load
        )
        dpsi_new = prolong_from_gauge(dpsi_free, self.spaces)
        psi_new = state.psi + dpsi_new

        div_load = self.ops.b_div @ u_new
        dq = solve_spd(self.ops.m_p, -div_load, self.solver_config)
        residuals["div_correction"] = relative_residual(self.ops.m_p, dq, -div_load)
        q_new = state.q + dq

        p_new = psi_new + (self.kappa / p.re) * q_new

        new_state = SchemeState(
            state.k + 1, u_new, state.u, psi_new, dpsi_new, state.dpsi, q_new, p_new
        )

        terms = self._state_energy_terms(new_state)
        du = u_new - state.u
        du_sq = self._energy(self.ops.m_u, du)
        dq_sq = self._energy(self.ops.m_p, dq)
        a_sq = self._a_energy(u_new)
        first = state.k == p.m - 1
        fo5 = _leq(dq_sq, terms["div_sq"], 1.0)
        if first:
            fo4 = _leq(
                tau**2 * self._energy(self.ops.l_p, dpsi_new),
                p.beta**2 * terms["u_sq"],
                1.0,
            )
        else:
            d2psi = dpsi_new - state.dpsi
            fo4 = _leq(
                tau**2 * self._energy(self.ops.l_p, d2psi), p.beta**2 * du_sq, 1.0
            )
        energies = dict(
            terms,
            dq_sq=dq_sq,
            du_sq=du_sq,
            a_sq=a_sq,
            grad_psi_sq=self._energy(self.ops.l_p, psi_new),
        )
        diag = StepDiagnostics(
            k=new_state.k,
            t=t_new,
            u_l2=np.sqrt(terms["u_sq"]),
            a_form=np.sqrt(a_sq),
            div_l2=np.sqrt(terms["div_sq"]),
            p_l2=np.sqrt(self._energy(self.ops.m_p, p_new)),
            solver_residuals=residuals,
            energies=energies,
            monitor_fo4=fo4,
            monitor_fo5=fo5,
            cfl_ok=bool(tau <= self.cfl_bound),
        )
        return new_state, diag

    # -- no-slip pair (first order, equivalence demonstration) ---------------

    def _noslip_velocity_solve(self, state, f, t_new, grad_source):
        p = self.params
        rhs = assemble_load(f, t_new, self.spaces)
        rhs += self.ops.b_div.T @ grad_source
        rhs += (1.0 / p.tau) * (self.ops.m_u @ state.u)
        u_new = np.zeros(self.spaces.dim_velocity)
        u_new[self.vel_free] = solve_spd(
            self.a_sys_free, rhs[self.vel_free], self.solver_config
        )
        return u_new

    def gauge_uzawa_noslip_step(self, state, f=None):
        """Eliminated-velocity stabilized gauge-Uzawa step (no-slip, m=1)."""
        p = self.params
        tau = p.tau
        t_new = (state.k + 1) * tau
        free = self.spaces.gauge_free

        u_new = self._noslip_velocity_solve(state, f, t_new, state.p + state.dpsi)
        div_load = self.ops.b_div @ u_new
        dpsi_free = solve_spd(self.l_p_free, -(1.0 / tau) * div_load[free], self.solver_config)
        dpsi_new = prolong_from_gauge(dpsi_free, self.spaces)
        psi_new = state.psi + dpsi_new
        dq = solve_spd(self.ops.m_p, -div_load, self.solver_config)
        q_new = state.q + dq
        p_new = psi_new + (1.0 / p.re) * q_new
        return SchemeState(
            state.k + 1, u_new, state.u, psi_new, dpsi_new, state.dpsi, q_new, p_new
        )

    def rotational_noslip_step(self, state, f=None):
        """Rotational pressure-correction step (no-slip, m=1).

        The auxiliary variable phi^k is carried in the dpsi slot; the two
        schemes coincide under phi = delta psi.
        """
        p = self.params
        tau = p.tau
        t_new = (state.k + 1) * tau
        free = self.spaces.gauge_free

        u_new = self._noslip_velocity_solve(state, f, t_new, state.p + state.dpsi)
        div_load = self.ops.b_div @ u_new
        phi_free = solve_spd(self.l_p_free, -(1.0 / tau) * div_load[free], self.solver_config)
        phi_new = prolong_from_gauge(phi_free, self.spaces)
        pi_div = solve_spd(self.ops.m_p, div_load, self.solver_config)
        p_new = state.p + phi_new - (1.0 / p.re) * pi_div
        return SchemeState(
            state.k + 1, u_new, state.u, state.psi + phi_new, phi_new, state.dpsi,
            state.q.copy(), p_new
        )

    # -- time loop -----------------------------------------------------------

    def run(self, state, f=None, g=None, observers=(), keep_fields=True, n_steps=None):
        """Advance from the initialized state; returns History (partial on failure)."""
        p = self.params
        if n_steps is None:
            n_steps = step_count(p.final_time, p.tau)
        records = []

        def emit(record):
            for obs in observers:
                obs(record)
            if not keep_fields:
                record = StepRecord(record.k, record.t, record.diagnostics, None, None)
            records.append(record)

        for k, u, pr in state.init_fields:
            emit(StepRecord(k, k * p.tau, None, u, pr))

        while state.k < n_steps:
            try:
                state, diag = self.step(state, f, g)
            except SolverFailure as err:
                return History(p, records, state, completed=False, failure=str(err))
            emit(StepRecord(state.k, state.k * p.tau, diag, state.u, state.p))
        return History(p, records, state, completed=True)
