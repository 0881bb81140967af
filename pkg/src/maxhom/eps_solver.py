"""Time-domain solver for the oscillatory problem at a fixed sample point.

For one realization omega, the fields evolve on a staggered box grid under

    eta(x, tau(x/eps) omega, x/eps^2) dE/dt + sigma(..., E) = curl H + F
    mu(x, tau(x/eps) omega, x/eps^2)  dH/dt               = -curl E

with tangential E pinned on PEC walls. Material matrices are traced once
per run at the cell centers and frozen (they carry no time dependence);
the magnetic update is explicit, the electric update implicit in the
monotone current (damped Newton per cell). The charge density is defined
a posteriori as div D, which the scheme conserves exactly through the
staggered div(curl) identity.

Runs are deterministic: identical problems, omega and seeds produce
bit-identical trajectories and energy logs, which is the discrete shadow
of uniqueness of the continuous solution.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .errors import ConfigurationError, InputError
from .probability import DynamicalSystemSpec, OmegaPoint, tau_apply_many
from .coefficients import CoefficientField, ConductivityLaw
from .yee import StaggeredGrid3D
from . import integrator
from .integrator import (EnergyLog, KappaCurrent, Materials, RunStats,
                         ZeroCurrent, integrate)

__all__ = ["GridSpec", "EpsProblem", "EpsSolution", "init_problem", "step",
           "run", "energy_check", "divergence_check", "cfl_bound",
           "EnergyReport", "DivergenceReport"]


@dataclass(frozen=True)
class GridSpec:
    """Box grid and time axis for a run.

    ``periodic`` opens selected axes (used by 1D-uniform configurations);
    non-periodic walls are PEC. The time step must respect the CFL-type
    bound dt <= cfl_safety * h_min * sqrt(c2_eta * c2_mu) / sqrt(3), which
    is validated against the coefficient bounds in ``init_problem``.
    """

    cells: tuple
    dt: float
    T: float
    lengths: tuple = (1.0, 1.0, 1.0)
    cfl_safety: float = 0.9
    periodic: tuple = (False, False, False)

    def __post_init__(self):
        cells = tuple(int(c) for c in self.cells)
        object.__setattr__(self, "cells", cells)
        object.__setattr__(self, "lengths", tuple(float(v) for v in self.lengths))
        object.__setattr__(self, "periodic", tuple(bool(p) for p in self.periodic))
        if len(cells) != 3 or min(cells) < 4:
            raise InputError("need at least 4 cells per axis")
        if not (self.dt > 0 and self.T > 0):
            raise InputError("dt and T must be positive")
        if not 0 < self.cfl_safety <= 1:
            raise InputError("cfl_safety must lie in (0, 1]")

    @property
    def n_steps(self) -> int:
        return max(1, int(round(self.T / self.dt)))

    @property
    def h_min(self) -> float:
        return min(L / n for L, n in zip(self.lengths, self.cells))

    def build(self) -> StaggeredGrid3D:
        return StaggeredGrid3D(self.cells, self.lengths, self.periodic)


def cfl_bound(spec: GridSpec, c2_eta: float, c2_mu: float) -> float:
    return spec.cfl_safety * spec.h_min * np.sqrt(c2_eta * c2_mu) / np.sqrt(3.0)


@dataclass
class EpsProblem:
    """Problem data plus precomputed trace geometry, frozen per run."""

    grid_spec: GridSpec
    mu: CoefficientField
    eta: CoefficientField
    sigma: ConductivityLaw          # or None for sigma = 0
    ds: DynamicalSystemSpec
    epsilon: float
    F: object = None                # F(x, t, omega) -> (..., 3)
    E0: object = None               # E0(x, omega) -> (..., 3)
    H0: object = None
    newton_tol: float = 1e-12
    newton_maxiter: int = 20
    grid: StaggeredGrid3D = field(init=False)
    source_report: dict = field(init=False, default_factory=dict)

    def __post_init__(self):
        self.grid = self.grid_spec.build()
        self._x = self.grid.centers()
        disp = np.zeros(self._x.shape[:-1] + (self.ds.dim,))
        k = min(3, self.ds.dim)
        disp[..., :k] = self._x[..., :k]
        self._disp = disp / self.epsilon
        self._z = np.mod(self._x / self.epsilon ** 2, 1.0)

    @property
    def resolved(self) -> bool:
        """True when the grid resolves the fine scale: eps^2 >= 2h along
        every axis the coefficients actually oscillate on."""
        axes = set(self.mu.z_axes) | set(self.eta.z_axes)
        if self.sigma is not None:
            axes |= set(self.sigma.kappa.z_axes)
        if not axes:
            return True
        h = [L / n for L, n in zip(self.grid_spec.lengths,
                                   self.grid_spec.cells)]
        return self.epsilon ** 2 >= 2.0 * max(h[a] for a in axes)

    def traced_materials(self, omega: OmegaPoint):
        """Per-cell traces of mu, eta and the current map at this omega."""
        om = tau_apply_many(self.ds, self._disp, omega)
        eta_c = self.eta.eval(self._x, om, self._z)
        mu_c = self.mu.eval(self._x, om, self._z)
        if self.sigma is None:
            current = ZeroCurrent()
        else:
            kappa_c = np.asarray(self.sigma.kappa(self._x, om, self._z))
            kappa_c = np.broadcast_to(kappa_c, self._x.shape[:-1]).copy()
            current = KappaCurrent(kappa_c, self.sigma.beta,
                                   self.sigma.monotone_delta)
        return eta_c, mu_c, current

    def initial_fields(self, omega: OmegaPoint):
        zeros = np.zeros(self._x.shape)
        E0 = zeros if self.E0 is None else np.asarray(self.E0(self._x, omega), float)
        H0 = zeros if self.H0 is None else np.asarray(self.H0(self._x, omega), float)
        return E0 + 0.0 * zeros, H0 + 0.0 * zeros

    def source_fn(self, omega: OmegaPoint):
        if self.F is None:
            return None
        x = self._x

        def fn(t):
            return np.asarray(self.F(x, t, omega), dtype=float) + np.zeros(x.shape)

        return fn

    def initial_divergences(self, omega: OmegaPoint):
        """Initial div B and div D (the Gauss-law diagnostics)."""
        eta_c, mu_c, _ = self.traced_materials(omega)
        E0, H0 = self.initial_fields(omega)
        g = self.grid
        B0 = g.dist_centers_to_faces(np.einsum("...ij,...j->...i", mu_c, H0))
        D0 = g.dist_centers_to_edges(np.einsum("...ij,...j->...i", eta_c, E0))
        return {
            "divB0_rel": g.norms_relative_div(g.div_faces(B0), B0),
            "divD0_rel": g.norms_relative_div(_interior(g.div_edges(D0), g), D0),
        }


def _interior(node_field, grid):
    sl = []
    for a in range(3):
        sl.append(slice(None) if grid.periodic[a] else slice(1, -1))
    out = node_field[tuple(sl)]
    return out if out.size else np.zeros((1, 1, 1))


def init_problem(grid: GridSpec, mu: CoefficientField, eta: CoefficientField,
                 sigma, ds: DynamicalSystemSpec, epsilon: float,
                 F=None, E0=None, H0=None, newton_tol=1e-12,
                 newton_maxiter=20) -> EpsProblem:
    """Validate and assemble an oscillatory problem.

    Rejects time steps above the CFL-type bound (naming it), non-positive
    epsilon, and sources whose discrete time derivatives are unbounded.
    """
    if not epsilon > 0:
        raise InputError("epsilon must be positive")
    bound = cfl_bound(grid, eta.c2, mu.c2)
    if grid.dt > bound * (1.0 + 1e-12):
        raise ConfigurationError(
            f"dt={grid.dt:g} violates the CFL bound {bound:g} "
            f"(= cfl_safety*h_min*sqrt(c2_eta*c2_mu)/sqrt(3) with "
            f"c2_eta={eta.c2:g}, c2_mu={mu.c2:g})")
    problem = EpsProblem(grid_spec=grid, mu=mu, eta=eta, sigma=sigma, ds=ds,
                         epsilon=epsilon, F=F, E0=E0, H0=H0,
                         newton_tol=newton_tol, newton_maxiter=newton_maxiter)
    if F is not None:
        problem.source_report = _check_source(problem)
    return problem


def _check_source(problem):
    # bounded discrete d_t and d_tt on a coarse probe; non-finite data rejected
    omega = OmegaPoint(np.full(problem.ds.dim, 0.5))
    ts = np.linspace(0.0, problem.grid_spec.T, 9)
    probe = problem._x[::2, ::2, ::2]
    vals = np.stack([np.asarray(problem.F(probe, t, omega), dtype=float)
                     + np.zeros(probe.shape) for t in ts])
    if not np.all(np.isfinite(vals)):
        raise InputError("source F produced non-finite values")
    dt = ts[1] - ts[0]
    d1 = np.diff(vals, axis=0) / dt
    d2 = np.diff(vals, 2, axis=0) / dt ** 2
    return {"sup_dtF": float(np.max(np.abs(d1))),
            "sup_dttF": float(np.max(np.abs(d2)))}


def step(state, problem: EpsProblem, omega: OmegaPoint,
         materials: Materials = None):
    """Advance one leapfrog step; functional form used by unit tests.

    ``run`` drives the same core; passing a prebuilt ``materials`` avoids
    re-tracing the coefficients.
    """
    if materials is None:
        eta_c, mu_c, current = problem.traced_materials(omega)
        materials = Materials(problem.grid, eta_c, mu_c, current)
    new, diag = integrator.advance(state, materials, problem.source_fn(omega),
                                   problem.grid_spec.dt,
                                   newton_tol=problem.newton_tol,
                                   newton_maxiter=problem.newton_maxiter)
    return new, diag


@dataclass
class EpsSolution:
    """Strided trajectory plus the exact per-step energy log."""

    problem: EpsProblem
    omega: OmegaPoint
    steps: np.ndarray
    times: np.ndarray
    E: np.ndarray           # (S, nx, ny, nz, 3) at integer levels
    B: list                 # three arrays (S, *face_shape) at levels n + 1/2
    energy: EnergyLog
    stats: RunStats
    materials: Materials
    stride: int
    dt: float
    init_divergences: dict

    def H_centers(self, k):
        return self.materials.h_centers([b[k] for b in self.B])

    def D_centers(self, k):
        return self.materials.apply_eta(self.E[k])

    def J_centers(self, k):
        return self.materials.current.sigma(self.E[k])

    @property
    def n_snapshots(self):
        return self.E.shape[0]


def run(problem: EpsProblem, omega: OmegaPoint, b0_faces=None,
        observers=(), store_stride=1) -> EpsSolution:
    """Integrate the full trajectory for one sample point.

    Deterministic: identical inputs give bit-identical trajectories and
    logs. ``b0_faces`` optionally overrides the initial magnetic flux with
    exact face data (used by divergence diagnostics); ``observers`` stream
    per-step states for quadrature without storing dense snapshots.
    """
    eta_c, mu_c, current = problem.traced_materials(omega)
    E0, H0 = problem.initial_fields(omega)
    snaps, log, stats = integrate(
        problem.grid, eta_c, mu_c, current, problem.source_fn(omega),
        E0, H0, problem.grid_spec.dt, problem.grid_spec.n_steps,
        store_stride=store_stride, b0_faces=b0_faces, observers=observers,
        newton_tol=problem.newton_tol, newton_maxiter=problem.newton_maxiter)
    mats = Materials(problem.grid, eta_c, mu_c, current)
    return EpsSolution(problem=problem, omega=omega, steps=snaps["steps"],
                       times=snaps["times"], E=snaps["E"], B=snaps["B"],
                       energy=log, stats=stats, materials=mats,
                       stride=store_stride, dt=problem.grid_spec.dt,
                       init_divergences=problem.initial_divergences(omega))


# ---------------------------------------------------------------------------
# runtime-checked bounds
# ---------------------------------------------------------------------------


@dataclass
class EnergyReport:
    passed: bool
    tightest_ratio: float
    worst_step: int
    rhs_bound: float
    message: str

    def to_dict(self):
        return {"passed": self.passed, "tightest_ratio": self.tightest_ratio,
                "worst_step": self.worst_step, "rhs_bound": self.rhs_bound,
                "message": self.message}


def energy_check(solution: EpsSolution, problem: EpsProblem = None,
                 slack_rel: float = 1e-8) -> EnergyReport:
    """Discrete a priori energy bound, verified at every logged step.

    Checks (E,D)(t_n) + (H,B)(t_n) + delta sum_{m<=n} dt ||E^m||^2
    <= (4/delta) sum_m dt ||F^m||^2 + (E0,D0) + (H0,B0) + slack with slack
    10^-8 of the right side. Failure is a report outcome, not an exception.
    """
    log = solution.energy.arrays()
    lhs = log["ED"] + log["HB"] + log["cum_dissipation"]
    rhs = float(log["rhs_bound"][0])
    if not np.isfinite(rhs):
        return EnergyReport(True, 0.0, -1, rhs,
                            "bound unbounded (delta = 0 with nonzero source); "
                            "holds vacuously")
    slack = slack_rel * abs(rhs)
    ok = lhs <= rhs + slack
    scale = abs(rhs) if rhs != 0.0 else 1.0
    ratios = lhs / scale
    worst = int(np.argmax(ratios))
    passed = bool(np.all(ok))
    msg = "ok" if passed else (
        f"estimate violated at step {int(log['step'][np.argmax(~ok)])}: "
        f"lhs={lhs[np.argmax(~ok)]:.6g} > rhs={rhs:.6g} + slack")
    return EnergyReport(passed=passed, tightest_ratio=float(np.max(ratios)),
                        worst_step=int(log["step"][worst]), rhs_bound=rhs,
                        message=msg)


@dataclass
class DivergenceReport:
    passed: bool
    divB_rel_max: float
    divB_drift_rel_max: float
    divD_drift_rel_max: float          # only meaningful when sigma = 0, F = 0
    charge_balance_rel_max: float
    message: str
    charge_density: np.ndarray = None  # Q at interior nodes, final level

    def to_dict(self):
        return {"passed": self.passed, "divB_rel_max": self.divB_rel_max,
                "divB_drift_rel_max": self.divB_drift_rel_max,
                "divD_drift_rel_max": self.divD_drift_rel_max,
                "charge_balance_rel_max": self.charge_balance_rel_max,
                "message": self.message}


def divergence_check(solution: EpsSolution, tol: float = 1e-10) -> DivergenceReport:
    """Constraint diagnostics on a stride-1 window.

    div B must stay at the initial value exactly (the staggered update is a
    pure curl); the charge density is div D of the flux-integrated edge
    displacement, whose balance d_t(div D) + div J - div F vanishes
    identically. Reports the worst relative deviations.
    """
    if solution.stride != 1:
        raise InputError("divergence_check needs a stride-1 trajectory")
    g = solution.problem.grid
    mats = solution.materials
    nB = solution.E.shape[0]
    B0 = [b[0] for b in solution.B]
    div0 = g.div_faces(B0)
    divB_rel = []
    drift_rel = []
    for k in range(nB):
        Bk = [b[k] for b in solution.B]
        dv = g.div_faces(Bk)
        divB_rel.append(g.norms_relative_div(dv, Bk))
        drift_rel.append(g.norms_relative_div(dv - div0, Bk))

    # flux-integrated edge displacement: D' = D + dt (curl H - J + F)
    dt = solution.dt
    source = solution.problem.source_fn(solution.omega)
    D = g.dist_centers_to_edges(mats.apply_eta(solution.E[0]))
    divD0 = _interior(g.div_edges(D), g)
    drift_D = [0.0]
    balance = [0.0]
    supD = max(float(np.max(np.abs(d))) for d in D) + 1e-300
    for k in range(nB - 1):
        Bk = [b[k] for b in solution.B]
        h_faces = g.dist_centers_to_faces(mats.h_centers(Bk))
        curlH = g.pec_mask_edges(g.curl_faces_to_edges(h_faces))
        J_edges = g.dist_centers_to_edges(mats.current.sigma(solution.E[k + 1]))
        incr = [dt * (c - j) for c, j in zip(curlH, J_edges)]
        F_edges = None
        if source is not None:
            F_edges = g.dist_centers_to_edges(
                source(solution.times[k] + 0.5 * dt))
            incr = [i + dt * f for i, f in zip(incr, F_edges)]
        D = [d + i for d, i in zip(D, incr)]
        supD = max(supD, max(float(np.max(np.abs(d))) for d in D))
        divD = _interior(g.div_edges(D), g)
        drift_D.append(float(np.max(np.abs(divD - divD0))) * min(g.h) / supD)
        # d_t div D + div J - div F, which telescopes to div curl H = 0
        bal = _interior(g.div_edges([i / dt for i in incr]), g) \
            + _interior(g.div_edges(J_edges), g)
        if F_edges is not None:
            bal = bal - _interior(g.div_edges(F_edges), g)
        balance.append(float(np.max(np.abs(bal))) * min(g.h) ** 2 / supD)

    divB_rel_max = float(np.max(divB_rel))
    drift_rel_max = float(np.max(drift_rel))
    balance_max = float(np.max(balance))
    zero_current = isinstance(mats.current, ZeroCurrent)
    free_run = zero_current and solution.problem.F is None
    passed = drift_rel_max <= tol and balance_max <= tol
    if free_run:
        passed = passed and float(np.max(drift_D)) <= tol
    msg = "ok" if passed else "divergence constraints drifted; see maxima"
    # the charge density is definitional: Q = div D of the edge displacement
    Q_final = _interior(g.div_edges(D), g)
    return DivergenceReport(passed=passed, divB_rel_max=divB_rel_max,
                            divB_drift_rel_max=drift_rel_max,
                            divD_drift_rel_max=float(np.max(drift_D)),
                            charge_balance_rel_max=balance_max, message=msg,
                            charge_density=Q_final)
