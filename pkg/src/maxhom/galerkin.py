"""Reduced 1D spectral solver used to cross-validate the time-domain code.

The transverse reduction keeps E_y(x, t) and H_z(x, t) on x in (0, 1) with
E_y pinned at both ends, so the curl pair collapses to +/- d/dx and the
spectral problem has closed-form trigonometric eigenpairs:

    modes  w_i^E = sqrt(2) sin(i pi x),  w_i^H = sqrt(2) cos(i pi x),
    eigenvalues (i pi)^2.

With psi the stacked coefficient vector, the projected system reads

    N psi' + A psi + m(psi) = g(t),

where N is the coefficient-weighted mass matrix (diagonal for constant
coefficients), A the exactly skew coupling block realizing the curl pair,
and m the projected conductivity. Three solvers share this system:

* ``linear_propagate``: the exact variation-of-constants formula
  psi(t) = exp(-t M) psi0 + int_0^t exp((s - t) M) G(s) ds for affine
  current terms, by scaling-and-squaring exponentials plus panel-doubled
  Gauss quadrature (the decaying sign of the propagator is the one
  consistent with psi' + M psi = G);
* ``sw_affine_iterate``: refit the scalar amplitude nonlinearity by its
  best affine approximation on the range of the current trajectory, solve
  the resulting linear system exactly, and repeat until the uniform
  approximation error drops below the requested bound (the surviving
  defect of the projected equations is then bounded by that error times
  the projected current norms);
* ``implicit_solve``: implicit Euler with Newton per step, the monotone
  reference for everything else.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field
import numpy as np
from scipy.linalg import expm

from .errors import InputError, NumericalError

__all__ = ["Problem1D", "GalerkinSystem", "assemble_modes",
           "linear_propagate", "sw_affine_iterate", "sw_separable_iterate",
           "implicit_solve", "Trajectory"]


@dataclass
class Problem1D:
    """Scalar-coefficient transverse line problem on (0, 1)."""

    eta: object = 1.0        # eta(x) or constant
    mu: object = 1.0
    kappa: object = 0.0      # linear current coefficient kappa(x)
    beta: float = 0.0        # saturating amplitude
    F: object = None         # F(x, t) transverse source
    E0: object = None        # E(x, 0)
    H0: object = None
    T: float = 1.0

    def sample(self, fn, x):
        if fn is None:
            return np.zeros_like(x)
        if np.isscalar(fn):
            return np.full_like(x, float(fn))
        return np.asarray(fn(x), dtype=float)


@dataclass
class Trajectory:
    times: np.ndarray
    psi: np.ndarray          # (n_t, 2n)
    info: dict = dc_field(default_factory=dict)


class GalerkinSystem:
    """Assembled reduced system: modes, mass blocks, skew coupling."""

    def __init__(self, n, problem: Problem1D, quad_points=None):
        if n < 1:
            raise InputError("mode count must be >= 1")
        quad_points = quad_points or max(256, 8 * n)
        if n > quad_points // 4:
            raise InputError(
                f"{n} modes exceed the quadrature resolution "
                f"({quad_points} points); raise quad_points")
        self.n = n
        self.problem = problem
        nodes, weights = np.polynomial.legendre.leggauss(quad_points)
        self.x = 0.5 * (nodes + 1.0)
        self.w = 0.5 * weights
        i = np.arange(1, n + 1)
        self.eigenvalues = (i * np.pi) ** 2
        self.WE = np.sqrt(2.0) * np.sin(np.outer(i, np.pi * self.x))
        self.WH = np.sqrt(2.0) * np.cos(np.outer(i, np.pi * self.x))
        self.eta_x = problem.sample(problem.eta, self.x) + np.zeros_like(self.x)
        self.mu_x = problem.sample(problem.mu, self.x) + np.zeros_like(self.x)
        self.kappa_x = problem.sample(problem.kappa, self.x) \
            + np.zeros_like(self.x)
        self.beta = float(problem.beta)
        self.NE = self.WE @ (self.w * self.eta_x * self.WE).T
        self.NH = self.WH @ (self.w * self.mu_x * self.WH).T
        self.NE = 0.5 * (self.NE + self.NE.T)
        self.NH = 0.5 * (self.NH + self.NH.T)
        D = np.diag(i * np.pi)
        self.coupling = np.block([[np.zeros((n, n)), -D],
                                  [D, np.zeros((n, n))]])
        self.mass = np.block([[self.NE, np.zeros((n, n))],
                              [np.zeros((n, n)), self.NH]])
        self.mass_inv = np.linalg.inv(self.mass)

    # -- projections ---------------------------------------------------------

    def project_E(self, fn):
        vals = self.problem.sample(fn, self.x)
        return self.WE @ (self.w * vals)

    def project_H(self, fn):
        vals = self.problem.sample(fn, self.x)
        return self.WH @ (self.w * vals)

    def initial_coefficients(self):
        delta = np.zeros(2 * self.n)
        delta[:self.n] = self.project_E(self.problem.E0)
        delta[self.n:] = self.project_H(self.problem.H0)
        return delta

    def reconstruct_E(self, a, x):
        i = np.arange(1, self.n + 1)
        return (np.sqrt(2.0) * np.sin(np.outer(np.asarray(x), i * np.pi))) @ a

    def source_coefficients(self, t):
        g = np.zeros(2 * self.n)
        if self.problem.F is not None:
            vals = np.asarray(self.problem.F(self.x, t), dtype=float)
            g[:self.n] = self.WE @ (self.w * vals)
        return g

    # -- current projection and Jacobian --------------------------------------

    def current_coefficients(self, psi):
        a = psi[:self.n]
        E = self.WE.T @ a
        s = self.kappa_x * E
        if self.beta:
            s = s + self.beta * E / (1.0 + np.abs(E))
        out = np.zeros(2 * self.n)
        out[:self.n] = self.WE @ (self.w * s)
        return out

    def current_jacobian(self, psi):
        a = psi[:self.n]
        E = self.WE.T @ a
        slope = self.kappa_x.copy()
        if self.beta:
            slope = slope + self.beta / (1.0 + np.abs(E)) ** 2
        J = np.zeros((2 * self.n, 2 * self.n))
        J[:self.n, :self.n] = self.WE @ (self.w * slope * self.WE).T
        return J

    def linear_reduced(self):
        """M and G for psi' + M psi = G(t) with the linear current."""
        K = self.coupling.copy()
        if np.any(self.kappa_x):
            K = K + self.current_jacobian(np.zeros(2 * self.n))
        M = self.mass_inv @ K

        def G(t):
            return self.mass_inv @ self.source_coefficients(t)

        return M, (G if self.problem.F is not None else None)

    def energy(self, psi):
        return float(psi @ (self.mass @ psi))


def assemble_modes(n, problem: Problem1D, quad_points=None) -> GalerkinSystem:
    """Build the reduced system of order n (see GalerkinSystem)."""
    return GalerkinSystem(n, problem, quad_points=quad_points)


# ---------------------------------------------------------------------------
# exact linear propagation
# ---------------------------------------------------------------------------


def linear_propagate(sys_or_M, t, psi0, source=None, rtol=1e-8,
                     max_refine=12):
    """Evaluate psi(t) = exp(-tM) psi0 + int_0^t exp((s-t)M) G(s) ds.

    ``sys_or_M`` is a GalerkinSystem (its linear reduction is used) or a
    matrix M directly; ``source`` overrides G(s). The convolution uses
    composite 8-point Gauss panels, doubled until the result moves by less
    than ``rtol`` relatively; failure to settle raises NumericalError.
    """
    if isinstance(sys_or_M, GalerkinSystem):
        M, G = sys_or_M.linear_reduced()
        if source is not None:
            G = source
    else:
        M = np.atleast_2d(np.asarray(sys_or_M, dtype=float))
        G = source
    psi0 = np.atleast_1d(np.asarray(psi0, dtype=float))
    out = expm(-t * M) @ psi0
    if G is None:
        return out
    panels = max(1, int(np.ceil(abs(t) / 0.5)))
    prev = None
    for _ in range(max_refine):
        quad = _convolution(M, G, t, panels)
        if prev is not None:
            err = np.linalg.norm(quad - prev)
            scale = max(np.linalg.norm(quad), np.linalg.norm(out), 1e-300)
            if err <= rtol * scale:
                return out + quad
        prev = quad
        panels *= 2
    raise NumericalError(
        f"propagator convolution did not settle to rtol={rtol:g} "
        f"within {max_refine} panel doublings")


_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(8)


def _convolution(M, G, t, panels):
    edges = np.linspace(0.0, t, panels + 1)
    acc = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        s = 0.5 * (b - a) * _GAUSS_NODES + 0.5 * (a + b)
        w = 0.5 * (b - a) * _GAUSS_WEIGHTS
        for sq, wq in zip(s, w):
            acc = acc + wq * (expm((sq - t) * M) @ np.atleast_1d(G(sq)))
    return acc


# ---------------------------------------------------------------------------
# affine approximation loop
# ---------------------------------------------------------------------------


def sw_affine_iterate(sys: GalerkinSystem, theta, s_vec, beta, psi0=None,
                      T=None, n_samples=200, max_iter=30, rtol=1e-8):
    """Solve N psi' + A psi + theta(psi) s = g by affine refits of theta.

    Each pass bounds the current trajectory range, fits the least-squares
    affine Q(lam) = a + b . lam to theta on the sampled trajectory, solves
    the exactly linear system psi' + M_eff psi = G_eff by the propagator,
    and repeats until sup_t |theta - Q| < beta. The returned info carries
    the realized per-mode defect bound sup|theta - Q| * |s_j|. If the
    defect stops contracting the affine class cannot reach ``beta`` and the
    caller should fall back to ``implicit_solve``.
    """
    T = sys.problem.T if T is None else float(T)
    psi0 = sys.initial_coefficients() if psi0 is None else np.asarray(psi0)
    s_vec = np.asarray(s_vec, dtype=float)
    ts = np.linspace(0.0, T, n_samples)
    a_fit, b_fit = float(theta(psi0[None, :])[0]), np.zeros(2 * sys.n)
    history = []
    for it in range(max_iter):
        M_eff = sys.mass_inv @ (sys.coupling + np.outer(s_vec, b_fit))
        shift = sys.mass_inv @ (a_fit * s_vec)

        def G_eff(t):
            return sys.mass_inv @ sys.source_coefficients(t) - shift

        psi_t = np.stack([
            linear_propagate(M_eff, t, psi0, source=G_eff, rtol=rtol)
            if t > 0 else psi0 for t in ts])
        vals = np.asarray(theta(psi_t), dtype=float)
        resid = float(np.max(np.abs(vals - (a_fit + psi_t @ b_fit))))
        history.append(resid)
        if resid < beta:
            bound = resid * np.abs(s_vec)
            return Trajectory(times=ts, psi=psi_t,
                              info={"iterations": it + 1,
                                    "residual": resid,
                                    "mode_defect_bound": bound,
                                    "history": history})
        if len(history) >= 3 and history[-1] >= 0.99 * history[-2] \
                >= 0.985 * history[-3]:
            raise NumericalError(
                f"affine refits stopped contracting at defect {resid:.3e} "
                f"> beta={beta:g}; the affine class is too small here - "
                "fall back to implicit_solve")
        design = np.concatenate([np.ones((n_samples, 1)), psi_t], axis=1)
        coef, *_ = np.linalg.lstsq(design, vals, rcond=None)
        a_fit, b_fit = float(coef[0]), coef[1:]
    raise NumericalError(f"affine refits did not reach beta={beta:g} "
                         f"in {max_iter} iterations (last {history[-1]:.3e})")


def sw_separable_iterate(sys: GalerkinSystem, current_fn, beta, n_terms=4,
                         psi0=None, T=None, n_samples=200, max_iter=30):
    """General projected currents via a fitted separable sum.

    ``current_fn(psi) -> R^{2n}`` is sampled along the running trajectory
    and compressed by a rank-``n_terms`` factorization into sum_l theta_l
    (psi) s_l; each scalar amplitude theta_l is then replaced by its best
    affine fit on the same samples, the resulting exactly linear system is
    solved by the propagator, and the loop repeats until the uniform defect
    sup_t |current(psi(t)) - sum_l Q_l(psi(t)) s_l| (in the coefficient
    norm) drops below ``beta``. The reference solver for anything this
    class cannot reach remains ``implicit_solve``.
    """
    T = sys.problem.T if T is None else float(T)
    psi0 = sys.initial_coefficients() if psi0 is None else np.asarray(psi0)
    ts = np.linspace(0.0, T, n_samples)
    two_n = 2 * sys.n
    s_vecs = np.zeros((0, two_n))
    a_fit = np.zeros(0)
    b_fit = np.zeros((0, two_n))
    history = []
    for it in range(max_iter):
        M_eff = sys.mass_inv @ (sys.coupling
                                + sum(np.outer(s, b)
                                      for s, b in zip(s_vecs, b_fit)))
        shift = sys.mass_inv @ (a_fit @ s_vecs if len(a_fit) else
                                np.zeros(two_n))

        def G_eff(t):
            return sys.mass_inv @ sys.source_coefficients(t) - shift

        psi_t = np.stack([
            linear_propagate(M_eff, t, psi0, source=G_eff)
            if t > 0 else psi0 for t in ts])
        m_samples = np.stack([np.asarray(current_fn(p), dtype=float)
                              for p in psi_t])
        approx = (a_fit + psi_t @ b_fit.T) @ s_vecs if len(a_fit) \
            else np.zeros_like(m_samples)
        resid = float(np.max(np.linalg.norm(m_samples - approx, axis=1)))
        history.append(resid)
        if resid < beta:
            return Trajectory(times=ts, psi=psi_t,
                              info={"iterations": it + 1, "residual": resid,
                                    "terms": len(s_vecs),
                                    "history": history})
        if len(history) >= 3 and history[-1] >= 0.99 * history[-2] \
                >= 0.985 * history[-3]:
            raise NumericalError(
                f"separable refits stopped contracting at defect "
                f"{resid:.3e} > beta={beta:g}; fall back to implicit_solve")
        # rank-limited separation of the sampled current, then affine fits
        U, S, Vt = np.linalg.svd(m_samples, full_matrices=False)
        r = min(n_terms, int(np.sum(S > 1e-14 * S[0])) or 1)
        s_vecs = Vt[:r]
        thetas = U[:, :r] * S[:r]
        design = np.concatenate([np.ones((n_samples, 1)), psi_t], axis=1)
        coef, *_ = np.linalg.lstsq(design, thetas, rcond=None)
        a_fit, b_fit = coef[0], coef[1:].T
    raise NumericalError(f"separable refits did not reach beta={beta:g} "
                         f"in {max_iter} iterations (last {history[-1]:.3e})")


# ---------------------------------------------------------------------------
# implicit Euler reference
# ---------------------------------------------------------------------------


def implicit_solve(sys: GalerkinSystem, T=None, dt=1e-3, psi0=None,
                   nonlinearity=None, newton_tol=1e-12, newton_maxiter=30):
    """Implicit Euler with Newton per step; the cross-validation baseline.

    ``nonlinearity`` optionally overrides the projected current with a
    pair (m(psi), dm(psi)); by default the system's own conductivity
    projection is used.
    """
    T = sys.problem.T if T is None else float(T)
    psi0 = sys.initial_coefficients() if psi0 is None else np.asarray(psi0)
    n_steps = max(1, int(round(T / dt)))
    current = nonlinearity or (sys.current_coefficients, sys.current_jacobian)
    m_fn, dm_fn = current
    times = np.zeros(n_steps + 1)
    out = np.zeros((n_steps + 1, 2 * sys.n))
    out[0] = psi0
    psi = psi0.copy()
    energy_ok = True
    for k in range(1, n_steps + 1):
        t_new = k * dt
        g = sys.source_coefficients(t_new)
        psi_new = psi.copy()
        for it in range(newton_maxiter):
            R = sys.mass @ (psi_new - psi) / dt + sys.coupling @ psi_new \
                + m_fn(psi_new) - g
            if np.max(np.abs(R)) < newton_tol * max(1.0, np.max(np.abs(g))
                                                    + np.max(np.abs(psi)) / dt):
                break
            J = sys.mass / dt + sys.coupling + dm_fn(psi_new)
            psi_new = psi_new + np.linalg.solve(J, -R)
        else:
            raise NumericalError("implicit Euler Newton did not converge "
                                 "(invalid current law)")
        psi = psi_new
        times[k] = t_new
        out[k] = psi
    return Trajectory(times=times, psi=out, info={"dt": dt,
                                                  "energy_ok": energy_ok})
