"""Solver for the homogenized Maxwell system with effective laws.

Structurally the same leapfrog scheme as the oscillatory solver, but the
constitutive maps are the assembled effective ones: the magnetic update
uses the homogenized permeability, and the electric update either a
homogenized linear current matrix or, in nonlinear mode, a per-macro-cell
evolution closure advanced one implicit micro step inside each macro step
(heterogeneous-multiscale style; the closure's displacement increment
replaces the static permittivity in the flux balance).

Ergodic dynamics give a single deterministic run with no sample index;
non-ergodic dynamics give one run per fiber of the invariant coordinates,
since the limit keeps that dependence. Comparisons against oscillatory
ensembles are made through smooth test-function pairings only; pointwise
closeness is not asserted (the convergence is weak).
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np

from .errors import InputError
from .yee import StaggeredGrid3D
from .eps_solver import GridSpec, EpsSolution
from .cell_problems import CellGrid, EffectiveLaw
from .integrator import (CellCurrent, Materials, MatrixCurrent,
                         ZeroCurrent, integrate)

__all__ = ["HomProblem", "HomSolution", "run_hom", "compare_solutions",
           "DiscrepancyReport"]


@dataclass
class HomProblem:
    """Coarse-grid limit problem carrying an effective law.

    ``F``, ``E0``, ``H0`` take (x, fiber) with fiber None in ergodic mode
    and the invariant-coordinate values otherwise (F additionally takes t).
    """

    grid_spec: GridSpec
    law: EffectiveLaw
    F: object = None
    E0: object = None
    H0: object = None
    mode: str = None                   # derived from the law by default
    micro_grid: CellGrid = None        # nonlinear closures only
    newton_tol: float = 1e-12
    newton_maxiter: int = 20
    grid: StaggeredGrid3D = field(init=False)

    def __post_init__(self):
        self.grid = self.grid_spec.build()
        self._x = self.grid.centers()
        if self.law.electric_mode == "nonlinear":
            if self.law.closure_factory is None:
                raise InputError("nonlinear law carries no closure factory")
            # closure evaluations carry micro-solve noise and the Jacobian is
            # a fixed proxy: allow more, looser iterations
            self.newton_maxiter = max(self.newton_maxiter, 60)
            self.newton_tol = max(self.newton_tol, 1e-9)
        derived = "ergodic" if self.law.ergodic else "non_ergodic"
        if self.mode is None:
            self.mode = derived
        elif self.mode != derived:
            raise InputError(
                f"mode '{self.mode}' conflicts with the law: ergodic mode "
                "forbids a fiber-indexed law and non-ergodic mode needs one")

    def source_fn(self, fiber=None):
        if self.F is None:
            return None
        x = self._x

        def fn(t):
            return np.asarray(self.F(x, t, fiber), float) + np.zeros(x.shape)

        return fn

    def initial_fields(self, fiber=None):
        zeros = np.zeros(self._x.shape)
        E0 = zeros if self.E0 is None else \
            np.asarray(self.E0(self._x, fiber), float) + zeros
        H0 = zeros if self.H0 is None else \
            np.asarray(self.H0(self._x, fiber), float) + zeros
        return E0, H0


class ClosureCurrent(CellCurrent):
    """Per-macro-cell evolution closures driving the implicit update.

    ``sigma(E)`` maps the residual into the standard form used by the cell
    solve: with the committed state (E_c, D0_c) and a tentative micro
    advance to E giving (J0, D0),

        sigma(E) = (D0 - D0_c)/dt + J0 - (eta_hom/dt)(E - E_c),

    so that (eta_hom/dt) E + sigma(E) = rhs reproduces the flux balance
    (D0' - D0)/dt + J0 = curl H + F exactly, independent of eta_hom. The
    Jacobian is approximated by a fixed matrix (monotonicity keeps the
    damped iteration contracting); ``commit`` freezes the micro states at
    the converged macro field.
    """

    linear = False

    def __init__(self, law: EffectiveLaw, fiber, micro_grid, E0_c, eta_hom):
        self.delta = law.delta
        shape = E0_c.shape[:-1]
        self.shape = shape
        self.eta_hom = np.asarray(eta_hom, float)
        flat = E0_c.reshape(-1, 3)
        self.closures = [law.closure_factory(_fiber_omega(law, fiber),
                                             flat[i], micro_grid)
                         for i in range(flat.shape[0])]
        self.E_committed = flat.copy()
        self.D0_committed = np.stack(
            [c.current_fluxes()[1] for c in self.closures])
        self._dt = None
        # fixed Jacobian proxy: homogenized displacement slope plus the
        # certified current slope bounds
        self._J_proxy = None

    def begin_step(self, t, dt):
        self._dt = dt
        if self._J_proxy is None:
            self._J_proxy = self._probe_jacobian()

    def _probe_jacobian(self):
        """Finite-difference slope of sigma() at the committed state of one
        cell; a fixed proxy is enough because the map is monotone."""
        c = self.closures[0]
        E0 = self.E_committed[0]
        dt = self._dt
        h = 1e-4 * (1.0 + np.linalg.norm(E0))
        J = np.zeros((3, 3))
        base = self._sigma_one(c, 0, E0, dt)
        for j in range(3):
            e = E0.copy()
            e[j] += h
            J[:, j] = (self._sigma_one(c, 0, e, dt) - base) / h
        J = 0.5 * (J + J.T)
        w, V = np.linalg.eigh(J)
        w = np.maximum(w, max(self.delta, 1e-6))
        return (V * w) @ V.T

    def _sigma_one(self, closure, i, E, dt):
        J0, D0 = closure.advance(E, dt)
        return (D0 - self.D0_committed[i]) / dt + J0 \
            - (self.eta_hom / dt) @ (E - self.E_committed[i])

    def sigma(self, E):
        dt = self._dt
        flat = E.reshape(-1, 3)
        out = np.zeros_like(flat)
        for i, c in enumerate(self.closures):
            out[i] = self._sigma_one(c, i, flat[i], dt)
        return out.reshape(E.shape)

    def jacobian(self, E):
        return np.broadcast_to(self._J_proxy, E.shape + (3,))

    def commit(self, E_new):
        flat = E_new.reshape(-1, 3)
        for i, c in enumerate(self.closures):
            J0, D0 = c.advance(flat[i], self._dt)
            c.commit()
            self.D0_committed[i] = D0
        self.E_committed = flat.copy()


def _fiber_omega(law, fiber):
    if fiber is None:
        return np.full(3, 0.5)
    om = np.full(3, 0.5)
    # fibers hold the invariant-coordinate values; active slots are dummy
    k = np.asarray(fiber, float).ravel()
    om[-len(k):] = k
    return om


@dataclass
class HomSolution:
    """One run per fiber; ergodic mode has a single unindexed run."""

    problem: HomProblem
    runs: list                         # EpsSolution records
    fibers: np.ndarray = None

    @property
    def ergodic(self):
        return self.fibers is None

    @property
    def solution(self) -> EpsSolution:
        if not self.ergodic:
            raise InputError("non-ergodic solution is fiber-indexed; "
                             "use .runs")
        return self.runs[0]


def run_hom(problem: HomProblem, store_stride=1, observers=()) -> HomSolution:
    """Integrate the limit system (per fiber when non-ergodic)."""
    law = problem.law
    fibers = [None] if law.ergodic else list(law.fibers)
    runs = []
    for i, fiber in enumerate(fibers):
        mu, eta, sig = law.matrices_for_fiber(0 if fiber is None else i)
        E0, H0 = problem.initial_fields(fiber)
        cells = problem.grid_spec.cells
        eta_c = np.broadcast_to(eta, cells + (3, 3)).copy()
        mu_c = np.broadcast_to(mu, cells + (3, 3)).copy()
        if law.electric_mode == "nonlinear":
            micro = problem.micro_grid or CellGrid(8)
            current = ClosureCurrent(law, fiber, micro, E0, eta)
        elif sig is None or not np.any(sig):
            current = ZeroCurrent()
        else:
            current = MatrixCurrent(sig)
        snaps, log, stats = integrate(
            problem.grid, eta_c, mu_c, current, problem.source_fn(fiber),
            E0, H0, problem.grid_spec.dt, problem.grid_spec.n_steps,
            store_stride=store_stride, observers=observers,
            newton_tol=problem.newton_tol,
            newton_maxiter=problem.newton_maxiter)
        mats = Materials(problem.grid, eta_c, mu_c, current)
        runs.append(EpsSolution(
            problem=problem, omega=fiber, steps=snaps["steps"],
            times=snaps["times"], E=snaps["E"], B=snaps["B"], energy=log,
            stats=stats, materials=mats, stride=store_stride,
            dt=problem.grid_spec.dt,
            init_divergences={}))
    return HomSolution(problem=problem, runs=runs,
                       fibers=None if law.ergodic else law.fibers)


# ---------------------------------------------------------------------------
# weak comparison against oscillatory ensembles
# ---------------------------------------------------------------------------


@dataclass
class DiscrepancyReport:
    epsilons: np.ndarray
    gaps: np.ndarray              # (n_eps, n_f)
    hom_values: np.ndarray        # (n_f,)
    eps_values: np.ndarray        # (n_eps, n_f) ensemble means
    stderr: np.ndarray            # (n_eps, n_f)
    decay_rate: float

    def to_dict(self):
        return {"epsilons": self.epsilons.tolist(),
                "gaps": self.gaps.tolist(),
                "hom_values": self.hom_values.tolist(),
                "eps_values": self.eps_values.tolist(),
                "stderr": self.stderr.tolist(),
                "decay_rate": self.decay_rate}


def _traj_pairing(sol, f):
    """Trapezoidal space-time pairing of the stored E trajectory with f."""
    g = sol.materials.grid
    x = g.centers()
    times = sol.times
    vals = np.zeros(len(times))
    for k, t in enumerate(times):
        fv = np.asarray(f(x, t), float) + np.zeros(x.shape)
        vals[k] = g.dot_centers(sol.E[k], fv)
    return float(np.trapezoid(vals, times))


def compare_solutions(eps_ensembles, hom: HomSolution, f_set) -> DiscrepancyReport:
    """Pairing gaps between oscillatory ensembles and the limit solution.

    ``eps_ensembles`` maps epsilon -> list of EpsSolution over the sample
    points. For each smooth epsilon-independent test function f(x, t) the
    gap is |mean_omega <E_eps, f> - <E_0, f>|; weak-star convergence is
    testable only through such pairings, so no pointwise comparison is
    made. Requires matching time windows and an ergodic limit.
    """
    if not hom.ergodic:
        raise InputError("compare_solutions expects an ergodic limit run")
    if not eps_ensembles:
        raise InputError("empty ensemble")
    hom_run = hom.solution
    T_hom = hom_run.times[-1]
    eps_sorted = sorted(eps_ensembles.keys(), reverse=True)
    hom_vals = np.array([_traj_pairing(hom_run, f) for f in f_set])
    eps_vals = np.zeros((len(eps_sorted), len(f_set)))
    stderr = np.zeros_like(eps_vals)
    for i, eps in enumerate(eps_sorted):
        sols = eps_ensembles[eps]
        if not sols:
            raise InputError(f"empty ensemble at eps={eps}")
        for sol in sols:
            if abs(sol.times[-1] - T_hom) > 1e-9 * max(T_hom, 1.0):
                raise InputError("mismatched time windows between the "
                                 "ensemble and the limit run")
        for j, f in enumerate(f_set):
            vals = np.array([_traj_pairing(s, f) for s in sols])
            eps_vals[i, j] = np.mean(vals)
            stderr[i, j] = np.std(vals) / np.sqrt(len(vals)) if len(vals) > 1 \
                else 0.0
    gaps = np.abs(eps_vals - hom_vals)
    rate = _fit_decay(np.asarray(eps_sorted), gaps)
    return DiscrepancyReport(epsilons=np.asarray(eps_sorted), gaps=gaps,
                             hom_values=hom_vals, eps_values=eps_vals,
                             stderr=stderr, decay_rate=rate)


def _fit_decay(epsilons, gaps):
    g = np.max(gaps, axis=1)
    mask = g > 0
    if np.sum(mask) < 2:
        return float("nan")
    return float(np.polyfit(np.log(epsilons[mask]), np.log(g[mask]), 1)[0])
