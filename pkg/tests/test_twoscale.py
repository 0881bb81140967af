import numpy as np
import pytest

from maxhom.probability import DynamicalSystemSpec, OmegaPoint
from maxhom.coefficients import build_coefficient_field
from maxhom.eps_solver import GridSpec, init_problem, run
from maxhom.twoscale import (StreamingPairing, TestFunction, limit_pairing,
                             oscillating_eval, pairing)

DS = DynamicalSystemSpec(seed=0)
OM = OmegaPoint([0.3, 0.6, 0.9])
EYE = build_coefficient_field({"family": "constant", "matrix": np.eye(3)})


def test_oscillating_eval_macro_only():
    f = TestFunction.product("macro", phi_x=lambda x: x,
                             s_t=lambda t: 1.0 + t)
    x = np.random.default_rng(0).random((5, 3))
    for eps in (0.5, 0.125):
        out = oscillating_eval(f, x, 0.3, OM, DS, eps)
        assert np.allclose(out, 1.3 * x)


def test_oscillating_eval_cell_substitution():
    f = TestFunction.product(
        "zprobe", phi_x=lambda x: np.ones(x.shape),
        psi_z=lambda z: np.sin(2 * np.pi * z[..., 0]))
    eps = 0.25
    x = np.array([eps ** 2 / 4.0, 0.0, 0.0])
    out = oscillating_eval(f, x, 0.0, OM, DS, eps)
    assert np.allclose(out, 1.0)


def test_oscillating_eval_separable_product():
    phi = lambda x: np.stack([x[..., 0], 0 * x[..., 0], 1 + 0 * x[..., 0]],
                             axis=-1)
    g = lambda om: 1.0 + om[..., 1]
    psi = lambda z: np.cos(2 * np.pi * z[..., 2])
    f = TestFunction.product("sep", phi_x=phi, g_omega=g, psi_z=psi)
    rng = np.random.default_rng(1)
    x, om, z = rng.random((3, 7, 3))
    direct = phi(x) * (g(om) * psi(z))[..., None]
    assert np.allclose(f.eval(x, 0.0, om, z), direct)


def periodic_constant_solution(c=(1.0, -2.0, 0.5), T=0.1, cells=(4, 4, 4),
                               eps=0.25, omega=OM):
    # fully periodic box: a constant field is an exact lossless solution
    spec = GridSpec(cells=cells, dt=0.02, T=T, periodic=(True, True, True))

    def E0(x, *_):
        return np.broadcast_to(np.asarray(c), x.shape).copy()

    p = init_problem(spec, EYE, EYE, None, DS, eps, E0=E0)
    return run(p, omega)


def test_pairing_constant_field_factorizes():
    # v constant, f = g(omega): I = c . mean_phi * gbar within MC error
    sols = [periodic_constant_solution(omega=om)
            for om in (OM, OmegaPoint([0.1, 0.8, 0.2]),
                       OmegaPoint([0.55, 0.25, 0.7]))]
    gbar = 1.0   # mean of 1 + 0.5 cos(2 pi omega_1)
    f = TestFunction.product(
        "gonly", phi_x=lambda x: np.ones(x.shape),
        g_omega=lambda om: 1.0 + 0.5 * np.cos(2 * np.pi * om[..., 0]))
    val = pairing(sols, f, DS, 0.25)
    # c . (1,1,1) = -0.5, |Q| = 0.1, times gbar
    expected = -0.5 * 0.1 * gbar
    spread = 0.5 * 0.1 * 0.5   # one harmonic amplitude bound
    assert abs(val.value - expected) <= spread
    assert val.resolved
    f0 = TestFunction.product("zero", phi_x=lambda x: np.zeros(x.shape))
    assert pairing(sols, f0, DS, 0.25).value == 0.0


def test_pairing_linear_in_field_and_f():
    sol = periodic_constant_solution()
    f1 = TestFunction.product("a", phi_x=lambda x: x)
    f2 = TestFunction.product(
        "b", phi_x=lambda x: np.ones(x.shape),
        psi_z=lambda z: np.sin(2 * np.pi * z[..., 1]))
    v1 = pairing([sol], f1, DS, 0.25).value
    v2 = pairing([sol], f2, DS, 0.25).value
    f12 = TestFunction(
        "a+2b", eval_fn=lambda x, t, om, z:
        f1.eval(x, t, om, z) + 2.0 * f2.eval(x, t, om, z))
    v12 = pairing([sol], f12, DS, 0.25).value
    assert v12 == pytest.approx(v1 + 2.0 * v2, rel=1e-12, abs=1e-14)


def test_pairing_micro_independent_f_does_not_see_eps():
    f = TestFunction.product("macro", phi_x=lambda x: x)
    vals = []
    for eps in (0.5, 0.25):
        sol = periodic_constant_solution(eps=eps)
        vals.append(pairing([sol], f, DS, eps).value)
    assert vals[0] == pytest.approx(vals[1], rel=1e-12)


def test_pairing_unresolved_tagged():
    lam = build_coefficient_field({
        "family": "laminate", "matrix_a": np.eye(3),
        "matrix_b": 3 * np.eye(3), "axis": 0, "theta": 0.5})
    spec = GridSpec(cells=(8, 8, 8), dt=0.02, T=0.04)
    p = init_problem(spec, EYE, lam, None, DS, 0.125)  # eps^2 = 1/64 < 2h
    assert not p.resolved
    sol = run(p, OM)
    f = TestFunction.product("macro", phi_x=lambda x: x)
    assert not pairing([sol], f, DS, 0.125).resolved


def test_streaming_matches_stored_pairing():
    spec = GridSpec(cells=(8, 8, 8), dt=0.02, T=0.1)

    def E0(x, *_):
        out = np.zeros(x.shape)
        out[..., 1] = np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 2])
        return out

    p = init_problem(spec, EYE, EYE, None, DS, 0.25, E0=E0)
    f = TestFunction.product(
        "probe", phi_x=lambda x: x,
        s_t=lambda t: np.cos(t),
        g_omega=lambda om: 1 + 0.3 * np.sin(2 * np.pi * om[..., 0]))
    acc = StreamingPairing([f], p, OM)
    sol = run(p, OM, observers=(acc,))
    stored = pairing([sol], f, DS, 0.25)
    assert acc.I[0] == pytest.approx(stored.value, rel=1e-12)


def test_limit_pairing_micro_constant_cases():
    sol = periodic_constant_solution()

    class FakeHom:
        solution = sol

    f_macro = TestFunction.product("m", phi_x=lambda x: np.ones(x.shape))
    val = limit_pairing(FakeHom, None, f_macro, DS)
    assert val == pytest.approx(-0.5 * 0.1, rel=1e-12)
    # zero cell-average psi with identity correctors: micro term drops out
    f_zero_mean = TestFunction.product(
        "zm", phi_x=lambda x: np.ones(x.shape),
        psi_z=lambda z: np.sin(2 * np.pi * z[..., 0]))
    val0 = limit_pairing(FakeHom, np.broadcast_to(np.eye(3), (16, 3, 3)),
                         f_zero_mean, DS)
    assert abs(val0) < 1e-12
