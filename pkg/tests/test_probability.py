import numpy as np
import pytest
from scipy import stats as sps

from maxhom.errors import InputError
from maxhom.probability import (DynamicalSystemSpec, FiberTable, OmegaPoint,
                                TwoScaleConfig, ergodic_average, sample_omega,
                                sample_omega_array, stochastic_derivative,
                                tau_apply, tau_apply_many)


def torus_dist(a, b):
    d = np.abs(a - b)
    return np.max(np.minimum(d, 1.0 - d))


def test_tau_modular_shift():
    ds = DynamicalSystemSpec()
    om = OmegaPoint([0.5, 0.5, 0.5])
    out = tau_apply(ds, [0.25, 0.0, 0.0], om)
    assert np.allclose(out.coords, [0.75, 0.5, 0.5])


def test_tau_identity_at_origin():
    ds = DynamicalSystemSpec(seed=7)
    for om in sample_omega(ds, 5):
        out = tau_apply(ds, np.zeros(3), om)
        assert np.array_equal(out.coords, om.coords)


def test_tau_wraparound():
    ds = DynamicalSystemSpec()
    out = tau_apply(ds, [0.8, 0.0, 0.0], OmegaPoint([0.5, 0.5, 0.5]))
    assert np.allclose(out.coords, [0.3, 0.5, 0.5])


def test_group_law_machine_precision():
    ds = DynamicalSystemSpec(shift_matrix=[[1.0, 0.3, 0.0],
                                           [0.0, 1.0, 0.7],
                                           [0.2, 0.0, 1.0]], seed=3)
    rng = np.random.default_rng(11)
    for _ in range(1000):
        om = OmegaPoint(rng.random(3))
        x = rng.uniform(-3, 3, 3)
        y = rng.uniform(-3, 3, 3)
        once = tau_apply(ds, x + y, om)
        twice = tau_apply(ds, x, tau_apply(ds, y, om))
        assert torus_dist(once.coords, twice.coords) < 1e-12


def test_invariant_mask_coordinates_frozen():
    ds = DynamicalSystemSpec(invariant_mask=[False, False, True], seed=1)
    rng = np.random.default_rng(5)
    for _ in range(200):
        om = OmegaPoint(rng.random(3))
        out = tau_apply(ds, rng.uniform(-5, 5, 3), om)
        assert out.coords[2] == om.coords[2]
    assert not ds.ergodic()
    assert DynamicalSystemSpec().ergodic()


def test_tau_dimension_mismatch():
    ds = DynamicalSystemSpec()
    with pytest.raises(InputError):
        tau_apply(ds, [1.0, 2.0], OmegaPoint([0.1, 0.2, 0.3]))


def test_sampling_reproducible_and_prefix_stable():
    ds = DynamicalSystemSpec(seed=42)
    a = sample_omega_array(ds, 10)
    b = sample_omega_array(ds, 10)
    assert np.array_equal(a, b)
    c = sample_omega_array(ds, 20)
    assert np.array_equal(a, c[:10])
    assert isinstance(sample_omega(ds, 1)[0], OmegaPoint)


def test_sampling_uniform_monte_carlo():
    # indicator of the first coordinate below 1/2: mean 0.5 within 3 sigma
    ds = DynamicalSystemSpec(seed=2024)
    pts = sample_omega_array(ds, 10_000)
    mean = np.mean(pts[:, 0] < 0.5)
    assert abs(mean - 0.5) < 0.015


def test_measure_invariance_under_shift():
    # the same indicator composed with a fixed shift has the same mean
    ds = DynamicalSystemSpec(seed=2024)
    pts = sample_omega_array(ds, 10_000)
    shifted = tau_apply_many(ds, np.tile([0.37, 0.0, 0.0], (10_000, 1)),
                             OmegaPoint([0.0, 0.0, 0.0]))
    # apply tau pointwise to the sample cloud instead
    shifted = np.mod(pts + ds.shift_matrix @ np.array([0.37, 0.0, 0.0]), 1.0)
    m0 = np.mean(pts[:, 0] < 0.5)
    m1 = np.mean(shifted[:, 0] < 0.5)
    assert abs(m0 - m1) < 0.03


def test_measure_invariance_ks():
    ds = DynamicalSystemSpec(seed=7)
    pts = sample_omega_array(ds, 10_000)
    shift = ds.shift_matrix @ np.array([0.3123, -1.7, 0.55])
    moved = np.mod(pts + shift, 1.0)
    for axis in range(3):
        stat, p = sps.ks_2samp(pts[:, axis], moved[:, axis])
        assert p > 0.0027  # 3 sigma


def test_stochastic_derivative_sine_oracle():
    # f(omega) = sin(2 pi omega_1): derivative along e_1 is 2 pi cos(2 pi omega_1)
    ds = DynamicalSystemSpec()
    errs = []
    for m in (32, 64):
        w = (np.arange(m) + 0.0) / m
        W1 = np.meshgrid(w, w, w, indexing="ij")[0]
        f = np.sin(2 * np.pi * W1)
        d = stochastic_derivative(f, ds, 0)
        errs.append(np.max(np.abs(d - 2 * np.pi * np.cos(2 * np.pi * W1))))
    assert errs[0] < 0.1
    assert errs[1] < errs[0] / 3.5  # second-order central differences


def test_stochastic_derivative_constant_and_invariant():
    ds = DynamicalSystemSpec(invariant_mask=[False, True, False])
    m = 16
    w = np.arange(m) / m
    W2 = np.meshgrid(w, w, w, indexing="ij")[1]
    const = np.ones((m, m, m))
    assert np.max(np.abs(stochastic_derivative(const, ds, 0))) == 0.0
    # f a function of the masked coordinate only: all derivatives vanish
    f = np.cos(2 * np.pi * W2)
    for i in range(3):
        assert np.max(np.abs(stochastic_derivative(f, ds, i))) < 1e-10


def test_stochastic_derivative_grid_too_coarse():
    ds = DynamicalSystemSpec()
    with pytest.raises(InputError):
        stochastic_derivative(np.zeros((3, 3, 3)), ds, 0)


def test_ergodic_average_scalar():
    ds = DynamicalSystemSpec(seed=5)
    val = ergodic_average(lambda p: np.sin(2 * np.pi * p[:, 0]), ds, 10_000)
    assert abs(val) < 3.0 / np.sqrt(10_000)
    assert ergodic_average(lambda p: np.ones(p.shape[0]), ds, 100) == 1.0


def test_ergodic_average_fiber_table():
    ds = DynamicalSystemSpec(invariant_mask=[False, False, True], seed=5)
    table = ergodic_average(lambda p: p[:, 2], ds, 20_000, bins=8)
    assert isinstance(table, FiberTable)
    width = 1.0 / 8
    for c, m in zip(table.bin_centers, table.means):
        assert abs(m - c) < width


def test_two_scale_config_trivial_only():
    cfg = TwoScaleConfig()
    assert cfg.time_micro == "trivial"
    with pytest.raises(InputError):
        TwoScaleConfig(time_micro="periodic")


def test_dynamics_config_roundtrip():
    ds = DynamicalSystemSpec(shift_matrix=[[1.0, 0.2, 0.0],
                                           [0.0, 1.0, 0.0],
                                           [0.0, 0.0, 1.0]],
                             invariant_mask=[False, False, True], seed=42)
    other = DynamicalSystemSpec.from_config(ds.to_config())
    assert other.dim == ds.dim and other.seed == ds.seed
    assert np.array_equal(other.shift_matrix, ds.shift_matrix)
    assert np.array_equal(other.invariant_mask, ds.invariant_mask)
