"""Periodic cell problems, correctors, and effective constitutive laws.

The magnetic corrector for unit direction e_k solves, on the unit cell,

    div( mu (e_k + grad phi_k) ) = 0,   phi_k periodic with zero mean,

discretized by cell-centered finite volumes with harmonic averaging of the
(diagonal) coefficient at faces; that averaging reproduces grid-aligned
laminates exactly, which supplies the sharp analytic oracles (harmonic
mean across layers, arithmetic along them). The same engine runs on the
torus realization of the sample space, where the stochastic gradient is
the ordinary torus gradient on the active coordinates; masked coordinates
carry no gradient, so non-ergodic systems decompose into per-fiber solves.

The electric law is evolutionary: the corrector of the displacement
current advances by implicit Euler on

    div( eta d/dt (E0 + grad e) + sigma(E0 + grad e) ) = 0,

with Newton per step (solvable by strong monotonicity), emitting the
homogenized current J0(t) and displacement D0(t) as face-flux averages.
Fields that are constant in the fast variable short-circuit to zero
correctors exactly, so micro-constant inputs return the input matrices
bit-for-bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from .errors import InputError, NumericalError, UnsupportedFieldError
from .probability import DynamicalSystemSpec, OmegaPoint
from .coefficients import CoefficientField, ConductivityLaw

__all__ = ["CellGrid", "CorrectorField", "EffectiveLaw", "solve_magnetic_cell",
           "solve_omega_cell", "solve_electric_cell_evolution",
           "assemble_effective_laws", "ElectricCellClosure", "EvolutionResult"]


@dataclass(frozen=True)
class CellGrid:
    """Uniform periodic grid on the unit cell (or unit torus)."""

    resolution: int = 32
    dim: int = 3

    def __post_init__(self):
        if self.resolution < 4:
            raise InputError("cell resolution must be at least 4")
        if not 1 <= self.dim <= 3:
            raise InputError("cell dimension must be 1, 2 or 3")

    @property
    def shape(self):
        return (self.resolution,) * self.dim

    @property
    def h(self):
        return 1.0 / self.resolution

    def centers(self):
        ax = (np.arange(self.resolution) + 0.5) * self.h
        grids = np.meshgrid(*([ax] * self.dim), indexing="ij")
        return np.stack(grids, axis=-1)


@dataclass
class CorrectorField:
    """Unit-direction corrector potentials and reconstructed micro fields.

    ``micro_fields[k]`` is e_k + grad(phi_k) at cell centers, reconstructed
    from face fluxes (exact for aligned laminates). Potentials have zero
    cell average; ``residuals`` are the relative weak-form residuals.
    """

    level: str                      # "z_cell" or "omega_cell"
    grid: CellGrid
    grid_axes: tuple                # field axes that vary on this grid
    potentials: np.ndarray          # (3, *shape)
    micro_fields: np.ndarray        # (3, *shape, 3)
    residuals: np.ndarray           # (3,)

    def mean_abs_potential(self):
        return float(np.max(np.abs(np.mean(
            self.potentials.reshape(3, -1), axis=1))))


def _harmonic_face(vals, axis):
    b = np.roll(vals, -1, axis=axis)
    return 2.0 * vals * b / (vals + b)


def _tpfa_operator(mu_face, gaxes_h):
    """Apply phi -> -div(mu_face grad phi) on the periodic grid."""

    def apply(phi):
        phi = np.asarray(phi, dtype=float)
        out = np.zeros(phi.shape)
        for g, (mf, h) in enumerate(zip(mu_face, gaxes_h)):
            flux = mf * (np.roll(phi, -1, axis=g) - phi) / h
            out -= (flux - np.roll(flux, 1, axis=g)) / h
        return out

    return apply


def _cg_solve(apply, rhs, maxiter, rtol=1e-12, label="cell problem"):
    if float(np.max(np.abs(rhs))) == 0.0:
        return np.zeros_like(rhs), 0.0
    shape = rhs.shape
    op = LinearOperator((rhs.size, rhs.size), dtype=float,
                        matvec=lambda v: apply(v.reshape(shape)).ravel())
    x, info = cg(op, rhs.ravel(), rtol=rtol, atol=0.0, maxiter=maxiter)
    if info != 0:
        raise NumericalError(
            f"{label}: CG failed to converge within {maxiter} iterations "
            "(signals a non-coercive coefficient)")
    x = x.reshape(shape)
    res = float(np.linalg.norm(apply(x) - rhs) / np.linalg.norm(rhs))
    return x - np.mean(x), res


def _diag_on_grid(field: CoefficientField, x, omega_coords, pts):
    """Sample the diagonal of a matrix field on cell points; reject off-diag."""
    x_b = np.broadcast_to(np.asarray(x, dtype=float), pts.shape[:-1] + (3,))
    om_b = np.broadcast_to(np.asarray(omega_coords, dtype=float),
                           pts.shape[:-1] + (len(omega_coords),))
    z = np.zeros(pts.shape[:-1] + (3,))
    z[..., :pts.shape[-1]] = pts
    M = field.eval(x_b, om_b, z)
    off = M.copy()
    for i in range(3):
        off[..., i, i] = 0.0
    if np.max(np.abs(off)) > 1e-12 * max(np.max(np.abs(M)), 1.0):
        raise UnsupportedFieldError(
            f"field '{field.label}' has off-diagonal entries on the cell; the "
            "cell solver supports diagonal (or cell-constant) tensors only")
    return np.einsum("...ii->...i", M)


def _solve_directions(diag_vals, grid_axes, h, level, grid, maxiter=None,
                      label="cell problem"):
    """Solve the three unit-direction problems on one periodic grid.

    ``diag_vals``: (*shape, 3) diagonal coefficient entries per cell;
    ``grid_axes``: tuple mapping grid dimension -> field axis. Directions
    outside ``grid_axes`` have no gradient (masked coordinates).
    Returns (CorrectorField, A_hom).
    """
    shape = diag_vals.shape[:-1]
    d = len(shape)
    N = int(np.prod(shape))
    maxiter = 10 * N if maxiter is None else maxiter
    gaxes_h = [h] * d
    mu_face = [_harmonic_face(diag_vals[..., grid_axes[g]], g) for g in range(d)]
    apply = _tpfa_operator(mu_face, gaxes_h)

    potentials = np.zeros((3,) + shape)
    micro = np.zeros((3,) + shape + (3,))
    residuals = np.zeros(3)
    fluxes = {}
    for k in range(3):
        if k in grid_axes:
            g = grid_axes.index(k)
            rhs = (mu_face[g] - np.roll(mu_face[g], 1, axis=g)) / h
            phi, res = _cg_solve(apply, rhs, maxiter, label=label)
        else:
            phi, res = np.zeros(shape), 0.0
        potentials[k] = phi
        residuals[k] = res
        # face fluxes of the driven problem and the center reconstruction
        fl = []
        for g in range(d):
            a = grid_axes[g]
            grad = (np.roll(phi, -1, axis=g) - phi) / h
            fl.append(mu_face[g] * (grad + (1.0 if a == k else 0.0)))
        fluxes[k] = fl
        for a in range(3):
            if a in grid_axes:
                g = grid_axes.index(a)
                fmean = 0.5 * (fl[g] + np.roll(fl[g], 1, axis=g))
                micro[k, ..., a] = fmean / diag_vals[..., a]
            else:
                micro[k, ..., a] = 1.0 if a == k else 0.0

    A = np.zeros((3, 3))
    for j in range(3):
        for k in range(3):
            acc = 0.0
            for g in range(d):
                a = grid_axes[g]
                ej = (np.roll(potentials[j], -1, axis=g) - potentials[j]) / h \
                    + (1.0 if a == j else 0.0)
                ek = (np.roll(potentials[k], -1, axis=g) - potentials[k]) / h \
                    + (1.0 if a == k else 0.0)
                acc += float(np.sum(mu_face[g] * ej * ek))
            if j == k and j not in grid_axes:
                acc += float(np.sum(diag_vals[..., j]))
            A[j, k] = acc / N
    corr = CorrectorField(level=level, grid=grid, grid_axes=tuple(grid_axes),
                          potentials=potentials, micro_fields=micro,
                          residuals=residuals)
    return corr, A


def solve_magnetic_cell(field: CoefficientField, x, omega: OmegaPoint,
                        grid: CellGrid, maxiter=None):
    """Static cell problem for one matrix field at fixed (x, omega).

    Returns the corrector and the cell-homogenized matrix with columns
    the cell averages of mu (e_k + grad phi_k). Fields constant on the
    cell short-circuit to zero correctors and return the matrix exactly.
    """
    om = omega.coords if isinstance(omega, OmegaPoint) else np.asarray(omega)
    if not field.depends_on_z:
        M = field.eval(np.asarray(x, float), om, np.zeros(3))
        corr = CorrectorField(level="z_cell", grid=grid, grid_axes=(0, 1, 2),
                              potentials=np.zeros((3,) + grid.shape),
                              micro_fields=_identity_micro(grid.shape),
                              residuals=np.zeros(3))
        return corr, np.asarray(M, dtype=float)
    if grid.dim != 3:
        raise InputError("z-cell problems live on a 3d cell grid")
    diag = _diag_on_grid(field, x, om, grid.centers())
    return _solve_directions(diag, (0, 1, 2), grid.h, "z_cell", grid,
                             maxiter=maxiter, label=f"z-cell[{field.label}]")


def _identity_micro(shape):
    micro = np.zeros((3,) + shape + (3,))
    for k in range(3):
        micro[k, ..., k] = 1.0
    return micro


def solve_omega_cell(z_hom_map, ds: DynamicalSystemSpec, torus_grid: CellGrid,
                     fibers=None, maxiter=None):
    """Cell problem on the torus realization with the stochastic gradient.

    ``z_hom_map(omega_points) -> (..., 3, 3)`` gives the z-homogenized
    matrix per torus point. Ergodic systems return one matrix; non-ergodic
    systems return one matrix per fiber (values of the invariant
    coordinates), since masked coordinates carry no stochastic derivative.
    Requires identity shift rows on active coordinates so the torus axes
    align with the gradient directions.
    """
    _require_identity_shift(ds)
    active = ds.active_axes
    if ds.ergodic():
        grid = CellGrid(torus_grid.resolution, dim=ds.dim)
        pts = grid.centers()
        M = np.asarray(z_hom_map(pts), dtype=float)
        return _omega_solve_on_grid(M, tuple(range(ds.dim)), grid, maxiter)
    if fibers is None:
        fibers = default_fibers(ds, 4)
    dim_active = len(active)
    grid = CellGrid(torus_grid.resolution, dim=max(dim_active, 1))
    out_mats, out_corrs = [], []
    for fib in np.atleast_2d(np.asarray(fibers, dtype=float)):
        pts_active = grid.centers()
        pts = np.zeros(pts_active.shape[:-1] + (ds.dim,))
        for g, a in enumerate(active):
            pts[..., a] = pts_active[..., g]
        for m_ax, v in zip(ds.masked_axes, fib):
            pts[..., m_ax] = v
        M = np.asarray(z_hom_map(pts), dtype=float)
        corr, A = _omega_solve_on_grid(M, tuple(active), grid, maxiter)
        out_mats.append(A)
        out_corrs.append(corr)
    return out_corrs, np.asarray(out_mats)


def default_fibers(ds: DynamicalSystemSpec, n: int):
    """Equispaced cell-centered values of the invariant coordinates."""
    vals = (np.arange(n) + 0.5) / n
    k = len(ds.masked_axes)
    grids = np.meshgrid(*([vals] * k), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=-1)


def _omega_solve_on_grid(M, grid_axes, grid, maxiter):
    off = M.copy()
    for i in range(3):
        off[..., i, i] = 0.0
    if np.max(np.abs(off)) > 1e-12 * max(np.max(np.abs(M)), 1.0):
        raise UnsupportedFieldError(
            "omega-cell solve supports diagonal tensors only")
    diag = np.einsum("...ii->...i", M)
    if np.max(np.abs(diag - diag.reshape(-1, 3)[0])) <= 1e-13 * np.max(np.abs(diag)):
        # constant over the torus: corrector zero, output equals input
        corr = CorrectorField(level="omega_cell", grid=grid,
                              grid_axes=tuple(grid_axes),
                              potentials=np.zeros((3,) + grid.shape),
                              micro_fields=_identity_micro(grid.shape),
                              residuals=np.zeros(3))
        return corr, np.asarray(M.reshape(-1, 3, 3)[0])
    return _solve_directions(diag, tuple(grid_axes), grid.h, "omega_cell",
                             grid, maxiter=maxiter, label="omega-cell")


def _require_identity_shift(ds: DynamicalSystemSpec):
    A = ds.shift_matrix
    for a in ds.active_axes:
        row = np.zeros(ds.dim)
        row[a] = 1.0
        if not np.allclose(A[a], row, atol=1e-12):
            raise UnsupportedFieldError(
                "omega-cell solves require identity shift rows on active "
                "coordinates (torus axes must align with the gradient)")


# ---------------------------------------------------------------------------
# evolutionary electric cell problem
# ---------------------------------------------------------------------------


@dataclass
class EvolutionResult:
    times: np.ndarray
    J0: np.ndarray            # (n_t, 3)
    D0: np.ndarray            # (n_t, 3)
    grad_sup: np.ndarray      # sup |grad e| per step
    corrector_final: np.ndarray


class _ElectricCellSystem:
    """Face-flux residual and solvers for the electric cell evolution."""

    def __init__(self, eta: CoefficientField, sigma: ConductivityLaw,
                 x, omega, grid: CellGrid):
        om = omega.coords if isinstance(omega, OmegaPoint) else np.asarray(omega)
        pts = grid.centers()
        self.grid = grid
        self.h = grid.h
        self.dim = grid.dim
        self.eta_diag = _diag_on_grid(eta, x, om, pts)
        x_b = np.broadcast_to(np.asarray(x, float), pts.shape[:-1] + (3,))
        om_b = np.broadcast_to(om, pts.shape[:-1] + (len(om),))
        z = np.zeros(pts.shape[:-1] + (3,))
        z[..., :pts.shape[-1]] = pts
        self.kappa = np.asarray(sigma.kappa(x_b, om_b, z)) \
            + np.zeros(pts.shape[:-1])
        self.beta = sigma.beta
        self.delta = sigma.monotone_delta
        self.eta_face = [_harmonic_face(self.eta_diag[..., g], g)
                         for g in range(self.dim)]
        self.kappa_face = [_harmonic_face(self.kappa, g) for g in range(self.dim)]

    def _face_value(self, e, g, E0_comp):
        return E0_comp + (np.roll(e, -1, axis=g) - e) / self.h

    def _face_vector(self, e, g, E0):
        """Full micro field at g-faces: exact normal, averaged tangential."""
        comps = []
        center = self._center_field(e, E0)
        for a in range(3):
            if a == g:
                comps.append(self._face_value(e, g, E0[a]))
            else:
                comps.append(0.5 * (center[..., a]
                                    + np.roll(center[..., a], -1, axis=g)))
        return np.stack(comps, axis=-1)

    def _center_field(self, e, E0):
        out = np.zeros(e.shape + (3,))
        for a in range(3):
            if a < self.dim:
                grad = (np.roll(e, -1, axis=a) - e) / self.h
                out[..., a] = E0[a] + 0.5 * (grad + np.roll(grad, 1, axis=a))
            else:
                out[..., a] = E0[a]
        return out

    def sigma_flux(self, e, E0, g):
        flux = self.kappa_face[g] * self._face_value(e, g, E0[g])
        if self.beta:
            vec = self._face_vector(e, g, E0)
            r = np.linalg.norm(vec, axis=-1)
            flux = flux + self.beta * vec[..., g] / (1.0 + r)
        return flux

    def residual(self, e_new, e_old, E0_new, E0_old, dt):
        """div of [eta d_t(E0 + grad e) + sigma(E0 + grad e)] per cell."""
        out = np.zeros_like(e_new)
        for g in range(self.dim):
            un = self._face_value(e_new, g, E0_new[g])
            if dt is None:
                flux = self.sigma_flux(e_new, E0_new, g)
            else:
                uo = self._face_value(e_old, g, E0_old[g])
                flux = self.eta_face[g] * (un - uo) / dt \
                    + self.sigma_flux(e_new, E0_new, g)
            out += (flux - np.roll(flux, 1, axis=g)) / self.h
        return out

    def newton(self, e_init, e_old, E0_new, E0_old, dt, tol=1e-11,
               maxiter=50, label="electric cell step"):
        e = np.array(e_init, copy=True)
        scale = max(np.max(self.kappa) * (1.0 + np.max(np.abs(E0_new))), 1.0) \
            / self.h
        coeff = [self.kappa_face[g] + self.beta
                 + (0.0 if dt is None else self.eta_face[g] / dt)
                 for g in range(self.dim)]
        apply = _tpfa_operator(coeff, [self.h] * self.dim)
        for _ in range(maxiter):
            R = self.residual(e, e_old, E0_new, E0_old, dt)
            if np.max(np.abs(R)) < tol * scale:
                return e
            # dR/de = +div(coeff grad .), and apply() is its negative
            de, _ = _cg_solve(apply, R, maxiter=10 * R.size, label=label)
            e = e + de
            e -= np.mean(e)
        R = self.residual(e, e_old, E0_new, E0_old, dt)
        if np.max(np.abs(R)) >= tol * scale:
            raise NumericalError(f"{label}: Newton stalled at residual "
                                 f"{float(np.max(np.abs(R))):.3e}")
        return e

    def fluxes(self, e, E0, e_old=None, E0_old=None, dt=None):
        """Homogenized current and displacement as face-flux means."""
        J0 = np.zeros(3)
        D0 = np.zeros(3)
        center = self._center_field(e, E0)
        sig_c = self.kappa[..., None] * center
        if self.beta:
            r = np.linalg.norm(center, axis=-1, keepdims=True)
            sig_c = sig_c + self.beta * center / (1.0 + r)
        for a in range(3):
            if a < self.dim:
                J0[a] = float(np.mean(self.sigma_flux(e, E0, a)))
                D0[a] = float(np.mean(
                    self.eta_face[a] * self._face_value(e, a, E0[a])))
            else:
                J0[a] = float(np.mean(sig_c[..., a]))
                D0[a] = float(np.mean(self.eta_diag[..., a] * center[..., a]))
        return J0, D0


def solve_electric_cell_evolution(eta: CoefficientField, sigma: ConductivityLaw,
                                  x, omega, E0_traj, grid: CellGrid, dt,
                                  tol=1e-11):
    """Advance the periodic displacement corrector along a macro trajectory.

    ``E0_traj`` has shape (n_t, 3), sampled at step ``dt``. The corrector
    starts from the stationary monotone problem at t=0 (the time-derivative
    term dropped), which makes the initial constitutive state consistent.
    Returns the homogenized current and displacement trajectories.
    """
    E0_traj = np.asarray(E0_traj, dtype=float)
    if E0_traj.ndim != 2 or E0_traj.shape[1] != 3:
        raise InputError("E0_traj must have shape (n_t, 3)")
    sys = _ElectricCellSystem(eta, sigma, x, omega, grid)
    n_t = E0_traj.shape[0]
    e = sys.newton(np.zeros(grid.shape), None, E0_traj[0], None, None,
                   tol=tol, label="electric cell init")
    J0 = np.zeros((n_t, 3))
    D0 = np.zeros((n_t, 3))
    sup = np.zeros(n_t)
    J0[0], D0[0] = sys.fluxes(e, E0_traj[0])
    sup[0] = _grad_sup(e, sys.h)
    for m in range(1, n_t):
        e_new = sys.newton(e, e, E0_traj[m], E0_traj[m - 1], dt, tol=tol)
        J0[m], D0[m] = sys.fluxes(e_new, E0_traj[m])
        sup[m] = _grad_sup(e_new, sys.h)
        e = e_new
    times = dt * np.arange(n_t)
    return EvolutionResult(times=times, J0=J0, D0=D0, grad_sup=sup,
                           corrector_final=e)


def _grad_sup(e, h):
    return max(float(np.max(np.abs(np.roll(e, -1, axis=g) - e))) / h
               for g in range(e.ndim))


class ElectricCellClosure:
    """Stateful per-macro-cell closure: one implicit micro step per query.

    Used by the homogenized solver in nonlinear mode: ``advance(E0_new,
    dt)`` tentatively steps the corrector from the committed state and
    returns (J0, D0); ``commit`` freezes the tentative state.
    """

    def __init__(self, eta, sigma, x, omega, grid: CellGrid, E0_init,
                 tol=1e-11):
        self.sys = _ElectricCellSystem(eta, sigma, x, omega, grid)
        self.tol = tol
        self.e = self.sys.newton(np.zeros(grid.shape), None,
                                 np.asarray(E0_init, float), None, None,
                                 tol=tol, label="closure init")
        self.E0 = np.asarray(E0_init, dtype=float)
        self._tentative = None

    def advance(self, E0_new, dt):
        e_new = self.sys.newton(self.e, self.e, np.asarray(E0_new, float),
                                self.E0, dt, tol=self.tol)
        self._tentative = (np.asarray(E0_new, float), e_new)
        return self.sys.fluxes(e_new, np.asarray(E0_new, float))

    def commit(self):
        if self._tentative is not None:
            self.E0, self.e = self._tentative[0], self._tentative[1]
            self._tentative = None

    def current_fluxes(self):
        return self.sys.fluxes(self.e, self.E0)


# ---------------------------------------------------------------------------
# assembled effective laws
# ---------------------------------------------------------------------------


@dataclass
class EffectiveLaw:
    """Homogenized constitutive maps for the limit system.

    Ergodic mode carries single matrices; non-ergodic mode tables them per
    fiber of the invariant coordinates (the limit keeps that dependence).
    ``electric_mode`` is "linear" (matrices eta_hom, sigma_hom) or
    "nonlinear" (per-macro-cell evolution closures built on demand).
    """

    mu_hom: np.ndarray                      # (3,3) or (n_fibers,3,3)
    eta_hom: np.ndarray
    sigma_hom: np.ndarray = None            # linear mode only
    electric_mode: str = "linear"
    fibers: np.ndarray = None               # (n_fibers, n_masked) or None
    delta: float = 0.0
    closure_factory: object = None          # nonlinear mode
    provenance: dict = dc_field(default_factory=dict)

    @property
    def ergodic(self):
        return self.fibers is None

    def n_fibers(self):
        return 1 if self.fibers is None else len(self.fibers)

    def matrices_for_fiber(self, i=0):
        if self.fibers is None:
            return self.mu_hom, self.eta_hom, self.sigma_hom
        sig = None if self.sigma_hom is None else self.sigma_hom[i]
        return self.mu_hom[i], self.eta_hom[i], sig

    def to_json_dict(self):
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {"mu_hom": arr(self.mu_hom), "eta_hom": arr(self.eta_hom),
                "sigma_hom": arr(self.sigma_hom),
                "electric_mode": self.electric_mode,
                "fibers": arr(self.fibers), "delta": self.delta,
                "provenance": self.provenance}


def _static_hom(field: CoefficientField, ds, cell_grid, torus_grid, x,
                fibers):
    """Reiterated homogenization: z-cell solves, then the omega-cell solve."""
    if not field.depends_on_omega:
        omega0 = OmegaPoint(np.full(ds.dim, 0.5))
        corr, A = solve_magnetic_cell(field, x, omega0, cell_grid)
        if ds.ergodic():
            return A, {"z_residual": float(np.max(corr.residuals))}
        reps = 1 if fibers is None else len(np.atleast_2d(fibers))
        return np.repeat(A[None], reps, axis=0), \
            {"z_residual": float(np.max(corr.residuals))}

    centers = cell_grid.centers()
    cache = {}

    def z_map(pts):
        # one z-cell solve per DISTINCT coefficient sample: fields whose
        # omega-dependence factors through few values (laminates, single
        # harmonics) collapse to a handful of solves
        flat = pts.reshape(-1, pts.shape[-1])
        out = np.zeros((flat.shape[0], 3, 3))
        for i, om in enumerate(flat):
            diag = _diag_on_grid(field, x, om, centers)
            key = diag.round(14).tobytes()
            if key not in cache:
                _, cache[key] = solve_magnetic_cell(field, x, OmegaPoint(om),
                                                    cell_grid)
            out[i] = cache[key]
        return out.reshape(pts.shape[:-1] + (3, 3))

    if ds.ergodic():
        corr, A = solve_omega_cell(z_map, ds, torus_grid)
        return A, {"omega_residual": float(np.max(corr.residuals))}
    corrs, mats = solve_omega_cell(z_map, ds, torus_grid, fibers=fibers)
    return mats, {"omega_residual": float(max(np.max(c.residuals)
                                              for c in corrs))}


def assemble_effective_laws(mu: CoefficientField, eta: CoefficientField,
                            sigma: ConductivityLaw, ds: DynamicalSystemSpec,
                            cell_grid: CellGrid, torus_grid: CellGrid = None,
                            mode: str = "linear", x=(0.0, 0.0, 0.0),
                            fibers=None) -> EffectiveLaw:
    """Build the effective constitutive maps at one macro point.

    Magnetic side: static reiterated homogenization (z-cell, then
    omega-cell; per fiber when non-ergodic). Electric side: in linear mode,
    static homogenization of eta and of the linear conductivity kappa; this
    is the exact closure when kappa/eta is constant across the
    microstructure (proportional phases) and a documented approximation
    otherwise (interfacial relaxation is neglected). Nonlinear mode defers
    to per-macro-cell evolution closures.
    """
    torus_grid = torus_grid or CellGrid(8, dim=ds.dim)
    if not ds.ergodic() and fibers is None:
        fibers = default_fibers(ds, 4)
    x = np.asarray(x, dtype=float)
    mu_hom, prov_mu = _static_hom(mu, ds, cell_grid, torus_grid, x, fibers)
    eta_hom, prov_eta = _static_hom(eta, ds, cell_grid, torus_grid, x, fibers)
    provenance = {"cell_resolution": cell_grid.resolution,
                  "torus_resolution": torus_grid.resolution,
                  "mu": prov_mu, "eta": prov_eta, "mode": mode}
    if mode == "linear":
        if sigma is None:
            sigma_hom = np.zeros((3, 3)) if fibers is None else \
                np.zeros((len(np.atleast_2d(fibers)), 3, 3))
            delta = 0.0
        else:
            if sigma.family != "linear":
                raise InputError("linear effective mode needs a linear law")
            kappa_field = _kappa_as_field(sigma)
            sigma_hom, prov_sig = _static_hom(kappa_field, ds, cell_grid,
                                              torus_grid, x, fibers)
            provenance["sigma"] = prov_sig
            provenance["proportionality_note"] = (
                "static electric closure is exact for proportional "
                "kappa/eta microstructure")
            delta = float(np.min(np.linalg.eigvalsh(
                np.atleast_3d(sigma_hom).reshape(-1, 3, 3))))
        return EffectiveLaw(mu_hom=mu_hom, eta_hom=eta_hom,
                            sigma_hom=sigma_hom, electric_mode="linear",
                            fibers=None if ds.ergodic() else
                            np.atleast_2d(np.asarray(fibers, float)),
                            delta=delta, provenance=provenance)
    if mode != "nonlinear":
        raise InputError("mode must be 'linear' or 'nonlinear'")
    if sigma is None:
        raise InputError("nonlinear effective mode needs a conductivity law")

    def factory(omega, E0_init, micro_grid=None):
        return ElectricCellClosure(eta, sigma, x, omega,
                                   micro_grid or cell_grid, E0_init)

    return EffectiveLaw(mu_hom=mu_hom, eta_hom=eta_hom, sigma_hom=None,
                        electric_mode="nonlinear",
                        fibers=None if ds.ergodic() else
                        np.atleast_2d(np.asarray(fibers, float)),
                        delta=sigma.monotone_delta, closure_factory=factory,
                        provenance=provenance)


def _kappa_as_field(sigma: ConductivityLaw) -> CoefficientField:
    kappa = sigma.kappa

    class _KappaField:
        label = "kappa"
        depends_on_z = kappa.depends_on_z
        depends_on_omega = kappa.depends_on_omega
        depends_on_x = kappa.depends_on_x
        diagonal = True
        c1 = kappa.bounds[1]
        c2 = kappa.bounds[0]

        @staticmethod
        def eval(x, om, z):
            w = np.asarray(kappa(x, om, z))
            return w[..., None, None] * np.eye(3)

    return _KappaField()
