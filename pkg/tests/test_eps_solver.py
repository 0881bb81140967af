import numpy as np
import pytest

from maxhom.errors import ConfigurationError, NumericalError
from maxhom.probability import DynamicalSystemSpec, OmegaPoint
from maxhom.coefficients import build_coefficient_field, build_conductivity_law
from maxhom.integrator import KappaCurrent, solve_monotone_cells
from maxhom.eps_solver import (GridSpec, cfl_bound, divergence_check,
                               energy_check, init_problem, run)

DS = DynamicalSystemSpec(seed=0)
OM = OmegaPoint([0.3, 0.6, 0.9])
EYE = build_coefficient_field({"family": "constant", "matrix": np.eye(3)})


def cavity_mode_E(x, omega):
    out = np.zeros(x.shape)
    out[..., 1] = np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 2])
    return out


def const_problem(cells=(8, 8, 8), dt=0.02, T=0.2, sigma=None, F=None,
                  E0=cavity_mode_E, H0=None, **kw):
    spec = GridSpec(cells=cells, dt=dt, T=T, **kw)
    return init_problem(spec, EYE, EYE, sigma, DS, 0.25, F=F, E0=E0, H0=H0)


def test_cfl_violation_rejected():
    spec = GridSpec(cells=(8, 8, 8), dt=0.2, T=1.0)
    assert 0.2 > cfl_bound(spec, 1.0, 1.0)
    with pytest.raises(ConfigurationError, match="CFL"):
        init_problem(spec, EYE, EYE, None, DS, 0.25)


def test_zero_data_stays_zero():
    law = build_conductivity_law({"family": "saturating", "kappa": 2.0,
                                  "beta": 0.5})
    p = const_problem(sigma=law, E0=None, H0=None)
    sol = run(p, OM)
    assert np.all(sol.E == 0.0)
    assert all(np.all(b == 0.0) for b in sol.B)
    log = sol.energy.arrays()
    assert np.all(log["ED"] == 0.0) and np.all(log["HB"] == 0.0)


def test_cavity_energy_conserved_lossless():
    # eigenmode of the unit PEC cavity, sigma=0: the logged mixed energy is
    # exactly conserved by the scheme, far inside the 1e-3 oracle tolerance
    T = np.sqrt(2.0)
    n = 44
    p = const_problem(cells=(16, 16, 16), dt=T / n, T=T)
    sol = run(p, OM, store_stride=n)
    log = sol.energy.arrays()
    total = log["ED"] + log["HB"]
    assert np.max(np.abs(total - total[0])) < 1e-10 * total[0]
    assert np.max(np.abs(total - total[0])) < 1e-3 * total[0]


def test_linear_dissipation_monotone():
    # sigma = kappa I with F = 0: the discrete difference Lyapunov energy
    # ED + HB + (dt/2) kappa ||E||^2 decreases strictly every step
    law = build_conductivity_law({"family": "linear", "kappa": 1.0})
    p = const_problem(sigma=law, T=0.3)
    sol = run(p, OM, store_stride=100)
    log = sol.energy.arrays()
    lyap = log["ED"] + log["HB"] + 0.5 * p.grid_spec.dt * log["E2"]
    assert np.all(np.diff(lyap) < 0.0)
    # and the plain logged energy is non-increasing as well here
    assert np.all(np.diff(log["ED"] + log["HB"]) <= 1e-12 * lyap[0])


def test_determinism_bit_identical():
    law = build_conductivity_law({"family": "saturating", "kappa": 1.5,
                                  "beta": 0.25})
    p = const_problem(sigma=law, T=0.1)
    a = run(p, OM)
    b = run(p, OM)
    assert np.array_equal(a.E, b.E)
    for x, y in zip(a.B, b.B):
        assert np.array_equal(x, y)
    la, lb = a.energy.arrays(), b.energy.arrays()
    for k in la:
        assert np.array_equal(la[k], lb[k])


def test_richardson_second_order_in_dt():
    # sigma-free pair: halving dt shrinks the terminal E difference ~4x
    T = 0.4
    sols = []
    for n in (10, 20, 40):
        p = const_problem(cells=(8, 8, 8), dt=T / n, T=T)
        sols.append(run(p, OM, store_stride=n))
    g = sols[0].problem.grid
    e01 = np.sqrt(g.dot_centers(*(2 * [sols[0].E[-1] - sols[1].E[-1]])))
    e12 = np.sqrt(g.dot_centers(*(2 * [sols[1].E[-1] - sols[2].E[-1]])))
    assert 3.0 < e01 / e12 < 5.0


def test_energy_estimate_with_source_and_corruption():
    law = build_conductivity_law({"family": "linear", "kappa": 1.0})

    def F(x, t, omega):
        out = np.zeros(x.shape)
        out[..., 1] = np.sin(np.pi * t) * np.sin(np.pi * x[..., 0])
        return out

    p = const_problem(sigma=law, F=F, T=0.4)
    sol = run(p, OM, store_stride=100)
    rep = energy_check(sol, p)
    assert rep.passed
    assert rep.tightest_ratio <= 1.0 + 1e-8
    # a corrupted log entry is detected, with the step reported
    sol.energy.ED[7] *= 1e4
    bad = energy_check(sol, p)
    assert not bad.passed
    assert "step 7" in bad.message


def test_energy_estimate_equality_for_lossless_run():
    p = const_problem(T=0.2)
    sol = run(p, OM, store_stride=100)
    rep = energy_check(sol, p)
    assert rep.passed
    assert rep.tightest_ratio == pytest.approx(1.0, abs=1e-10)


def test_divergence_free_b_stays_free():
    p = const_problem(T=0.2)
    g = p.grid
    rng = np.random.default_rng(0)
    pot = [rng.standard_normal(g.edge_shape(c)) for c in range(3)]
    b0 = g.curl_edges_to_faces(pot)   # exactly divergence-free
    sol = run(p, OM, b0_faces=b0)
    rep = divergence_check(sol)
    assert rep.passed
    assert rep.divB_rel_max < 1e-10
    assert rep.divD_drift_rel_max < 1e-10
    assert rep.charge_balance_rel_max < 1e-10


def test_divergence_of_random_b_preserved():
    p = const_problem(T=0.1)
    g = p.grid
    rng = np.random.default_rng(1)
    b0 = [rng.standard_normal(g.face_shape(c)) for c in range(3)]
    sol = run(p, OM, b0_faces=b0)
    rep = divergence_check(sol)
    assert rep.divB_rel_max > 1e-3        # genuinely not divergence-free
    assert rep.divB_drift_rel_max < 1e-10  # but transported exactly
    assert rep.passed


def test_charge_balance_with_current_and_source():
    law = build_conductivity_law({"family": "saturating", "kappa": 1.5,
                                  "beta": 0.3})

    def F(x, t, omega):
        out = np.zeros(x.shape)
        out[..., 0] = np.cos(2 * np.pi * t) * x[..., 1]
        return out

    p = const_problem(sigma=law, F=F, T=0.1)
    sol = run(p, OM)
    rep = divergence_check(sol)
    assert rep.charge_balance_rel_max < 1e-10


def test_difference_contraction_shared_source():
    law = build_conductivity_law({"family": "linear", "kappa": 1.0})

    def F(x, t, omega):
        out = np.zeros(x.shape)
        out[..., 2] = np.sin(2 * np.pi * t)
        return out

    def E0_b(x, omega):
        out = cavity_mode_E(x, omega)
        out[..., 2] += 0.3 * np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])
        return out

    pa = const_problem(sigma=law, F=F, T=0.3)
    pb = const_problem(sigma=law, F=F, T=0.3, E0=E0_b)
    sa, sb = run(pa, OM), run(pb, OM)
    g = pa.grid
    mats = sa.materials
    kappa = 1.0
    dt = pa.grid_spec.dt
    vals = []
    for k in range(1, sa.E.shape[0]):
        dE = sa.E[k] - sb.E[k]
        dB_lo = [x[k - 1] - y[k - 1] for x, y in zip(sa.B, sb.B)]
        dB_hi = [x[k] - y[k] for x, y in zip(sa.B, sb.B)]
        ed = mats.ed_pairing(dE)
        hb = mats.hb_mixed_from_h(mats.h_centers(dB_lo), dB_hi)
        vals.append(ed + hb + 0.5 * dt * kappa * g.dot_centers(dE, dE))
    vals = np.asarray(vals)
    assert np.all(np.diff(vals) <= 1e-12 * vals[0])


def test_uniform_1d_profile_stays_uniform():
    # periodic transverse axes: y/z-uniform data remains exactly uniform
    lam = build_coefficient_field({
        "family": "laminate", "matrix_a": np.eye(3), "matrix_b": 3 * np.eye(3),
        "axis": 0, "theta": 0.5})

    def E0(x, omega):
        out = np.zeros(x.shape)
        out[..., 1] = np.sin(np.pi * x[..., 0])
        return out

    spec = GridSpec(cells=(32, 4, 4), dt=0.005, T=0.05,
                    periodic=(False, True, True))
    p = init_problem(spec, EYE, lam, None, DS, 0.25, E0=E0)
    sol = run(p, OM, store_stride=10)
    E = sol.E[-1]
    assert np.max(np.abs(E - E[:, :1, :1, :])) == 0.0


def test_newton_contract_random_cells():
    rng = np.random.default_rng(7)
    n = 100_000
    sym = rng.standard_normal((n, 3, 3)) * 0.2
    eta = np.eye(3) + 0.5 * (sym + np.swapaxes(sym, 1, 2))
    eta += 2.0 * np.eye(3)
    dt = 0.01
    current = KappaCurrent(rng.uniform(1.0, 3.0, n), 0.5, 1.0)
    rhs = rng.standard_normal((n, 3)) * rng.uniform(0.1, 100.0, (n, 1))
    E, iters, res = solve_monotone_cells(eta / dt, current, rhs,
                                         np.zeros((n, 3)))
    assert iters <= 20
    assert res < 1e-12


def test_newton_failure_reports_worst_cell():
    # an invalid law (value map inconsistent with its derivative) stalls the
    # iteration; the error names the worst cell
    class BrokenCurrent(KappaCurrent):
        def jacobian(self, E):
            return np.zeros(E.shape + (3,))

    current = BrokenCurrent(np.full(4, 2.0), 0.5, 2.0)
    eta = np.broadcast_to(np.eye(3) * 1e-6, (4, 3, 3))
    with pytest.raises(NumericalError, match="worst cell"):
        solve_monotone_cells(eta / 1.0, current, 10.0 * np.ones((4, 3)),
                             np.zeros((4, 3)), maxiter=20)


def test_lemma_bounds_uniform_over_eps():
    # sup norms of E, H, curl E, dt E vary by < 2x across eps with fixed data
    def F(x, t, omega):
        out = np.zeros(x.shape)
        out[..., 1] = np.sin(np.pi * t) * np.sin(np.pi * x[..., 0])
        return out

    lam = build_coefficient_field({
        "family": "laminate", "matrix_a": np.eye(3), "matrix_b": 3 * np.eye(3),
        "axis": 0, "theta": 0.5})
    law = build_conductivity_law({"family": "linear", "kappa": 1.0})
    sups = []
    for eps in (0.5, 0.25, 0.125):
        spec = GridSpec(cells=(64, 4, 4), dt=0.004, T=0.2,
                        periodic=(False, True, True))
        p = init_problem(spec, EYE, lam, law, DS, eps, F=F, E0=cavity_mode_E)
        sol = run(p, OM, store_stride=50)
        sups.append([sol.stats.sup_E, sol.stats.sup_H, sol.stats.sup_curlE,
                     sol.stats.sup_dtE])
    sups = np.asarray(sups)
    assert np.all(np.isfinite(sups))
    ratio = np.max(sups, axis=0) / np.maximum(np.min(sups, axis=0), 1e-300)
    assert np.all(ratio < 2.0)


def test_public_step_matches_run():
    from maxhom.integrator import Materials, make_state
    from maxhom.eps_solver import step

    law = build_conductivity_law({"family": "saturating", "kappa": 1.5,
                                  "beta": 0.25})
    p = const_problem(sigma=law, T=0.1)
    sol = run(p, OM)
    eta_c, mu_c, current = p.traced_materials(OM)
    mats = Materials(p.grid, eta_c, mu_c, current)
    E0, H0 = p.initial_fields(OM)
    state = make_state(p.grid, mats, E0, H0_c=H0, dt=p.grid_spec.dt)
    state, diag = step(state, p, OM, materials=mats)
    assert diag["newton_iters"] <= 20
    assert diag["newton_residual"] < 1e-12
    assert np.array_equal(state.E, sol.E[1])
