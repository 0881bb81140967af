"""Experiment runner and command-line entry point.

    maxhom <scenario> --config <path> --out <dir> [--workers N] [--seed S]

Exit codes: 0 all asserted properties pass, 1 a property failed, 2 the
configuration is invalid, 3 a solver failed numerically. Every run writes
a manifest (echoed configuration with defaults, an input hash, package
version and seed) before computing; outputs are deterministic functions
of the manifest, so repeated runs produce byte-identical CSV files.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigurationError, MaxhomError, NumericalError
from . import config as cfgmod
from .config import ExperimentConfig, parse_config
from . import fieldio

__all__ = ["main", "run_experiment", "preset_config_path"]

_PRESET_DIR = Path(__file__).parent / "presets"


def preset_config_path(name: str) -> Path:
    p = _PRESET_DIR / f"{name}.toml"
    if not p.exists():
        raise ConfigurationError(f"no packaged preset config '{name}'")
    return p


# ---------------------------------------------------------------------------
# built-in data profiles for configured runs
# ---------------------------------------------------------------------------


def _profiles(name, amplitude=1.0):
    from .presets import _uniform_E0, _uniform_F

    if name == "transverse_sine":
        return (lambda x, t, *_: amplitude * _uniform_F(x, t),
                lambda x, *_: amplitude * _uniform_E0(x))
    if name == "cavity_mode":
        def E0(x, *_):
            out = np.zeros(x.shape)
            out[..., 1] = amplitude * np.sin(np.pi * x[..., 0]) \
                * np.sin(np.pi * x[..., 2])
            return out

        return None, E0
    if name == "pulsed_sine":
        def F(x, t, *_):
            out = np.zeros(x.shape)
            out[..., 1] = amplitude * np.sin(np.pi * t) \
                * np.sin(np.pi * x[..., 0])
            return out

        def E0(x, *_):
            out = np.zeros(x.shape)
            out[..., 1] = amplitude * np.sin(np.pi * x[..., 0]) \
                * np.sin(np.pi * x[..., 2])
            return out

        return F, E0
    if name in (None, "none"):
        return None, None
    raise ConfigurationError(
        f"unknown data profile '{name}'; available: transverse_sine, "
        "cavity_mode, pulsed_sine, none")


def _data_from_config(cfg: ExperimentConfig):
    src = cfg.section("source", {}) or {}
    ini = cfg.section("initial", {}) or {}
    F, _ = _profiles(src.get("profile", "none"),
                     float(src.get("amplitude", 1.0)))
    _, E0 = _profiles(ini.get("profile", "none"),
                      float(ini.get("amplitude", 1.0)))
    return F, E0


# ---------------------------------------------------------------------------
# scenarios
# ---------------------------------------------------------------------------


def _scenario_validate(cfg, out, report):
    from .coefficients import verify_conductivity

    law = cfgmod.sigma_from_config(cfg.section("sigma"))
    if law is None:
        raise ConfigurationError("validate scenario needs a [sigma] section")
    rep = verify_conductivity(law, n_samples=10_000, seed=cfg.seed)
    fieldio.write_json(out / "conductivity_report.json", rep.to_dict())
    report["conductivity"] = rep.to_dict()
    return rep.passed


def _eps_problem_from_config(cfg):
    from .eps_solver import init_problem

    mu = cfgmod.field_from_config(cfg.section("mu"), "mu")
    eta = cfgmod.field_from_config(cfg.section("eta"), "eta")
    law = cfgmod.sigma_from_config(cfg.section("sigma"))
    ds = cfgmod.dynamics_from_config(cfg)
    grid = cfgmod.grid_from_config(cfg.section("grid"))
    eps_sec = cfg.section("epsilon", {"values": [0.25]})
    eps = float(eps_sec["values"][0])
    F, E0 = _data_from_config(cfg)
    return init_problem(grid, mu, eta, law, ds, eps, F=F, E0=E0), ds


def _run_one_sample(args):
    # module-level worker for the process pool: rebuilds the problem from
    # the raw configuration so nothing unpicklable crosses the boundary
    raw, index = args
    cfg = cfgmod.validate_config(raw)
    problem, ds = _eps_problem_from_config(cfg)
    from .probability import sample_omega
    from .eps_solver import divergence_check, energy_check, run

    omega = sample_omega(ds, index + 1)[index]
    sol = run(problem, omega)
    en = energy_check(sol, problem)
    dv = divergence_check(sol)
    log = sol.energy.arrays()
    return {"index": index, "energy_passed": en.passed,
            "tightest_ratio": en.tightest_ratio,
            "divB_drift": dv.divB_drift_rel_max,
            "charge_balance": dv.charge_balance_rel_max,
            "log": {k: v.tolist() for k, v in log.items()},
            "stats": sol.stats.as_dict()}


def _scenario_eps_run(cfg, out, report):
    from .eps_solver import run
    from .probability import sample_omega

    problem, ds = _eps_problem_from_config(cfg)
    count = (cfg.section("samples") or {}).get("count", 1)
    tasks = [(cfg.raw, i) for i in range(count)]
    if cfg.workers > 1 and count > 1:
        with concurrent.futures.ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_run_one_sample, tasks))
    else:
        results = [_run_one_sample(t) for t in tasks]
    results.sort(key=lambda r: r["index"])
    passed = all(res["energy_passed"] for res in results)
    # write artifacts from a rerun of sample 0 (full trajectory record)
    omega = sample_omega(ds, 1)[0]
    sol = run(problem, omega)
    fieldio.write_energy_csv(out / "energy_sample0.csv", sol.energy)
    fieldio.write_field(out / "E_sample0.field", sol.E, stride=sol.stride,
                        dt=sol.dt)
    for c, name in enumerate("xyz"):
        fieldio.write_field(out / f"B{name}_sample0.field", sol.B[c],
                            stride=sol.stride, dt=sol.dt)
    report["eps_run"] = {
        "samples": count,
        "energy_passed": bool(passed),
        "worst_ratio": max(r["tightest_ratio"] for r in results),
        "divB_drift_max": max(r["divB_drift"] for r in results),
        "charge_balance_max": max(r["charge_balance"] for r in results),
        "stats": results[0]["stats"],
        "resolved": problem.resolved,
    }
    fieldio.write_json(out / "eps_report.json", report["eps_run"])
    return passed


def _scenario_cell(cfg, out, report):
    from .cell_problems import CellGrid, assemble_effective_laws

    mu = cfgmod.field_from_config(cfg.section("mu"), "mu")
    eta_sec = cfg.section("eta")
    eta = cfgmod.field_from_config(eta_sec, "eta") if eta_sec else mu
    law = cfgmod.sigma_from_config(cfg.section("sigma"))
    ds = cfgmod.dynamics_from_config(cfg)
    cell_sec = cfg.section("cell", {}) or {}
    res = int(cell_sec.get("resolution", 32))
    tres = int(cell_sec.get("torus_resolution", 8))
    mode = (cfg.section("hom", {}) or {}).get("mode", "linear")
    eff = assemble_effective_laws(mu, eta, law, ds, CellGrid(res),
                                  CellGrid(tres, dim=ds.dim), mode=mode)
    payload = eff.to_json_dict()
    mu_h = np.atleast_3d(np.asarray(eff.mu_hom).reshape(-1, 3, 3))
    sym = float(max(np.max(np.abs(m - m.T)) for m in mu_h))
    eigs = np.concatenate([np.linalg.eigvalsh(m) for m in mu_h])
    ok = sym < 1e-8 and np.all(eigs >= mu.c2 - 1e-6) \
        and np.all(eigs <= mu.c1 + 1e-6)
    payload["symmetry_defect"] = sym
    payload["eigenvalue_range"] = [float(eigs.min()), float(eigs.max())]
    payload["passed"] = bool(ok)
    fieldio.write_json(out / "effective_law.json", payload)
    # corrector potentials in the shared binary field format
    if mu.depends_on_z:
        from .cell_problems import solve_magnetic_cell
        from .probability import OmegaPoint
        corr, _ = solve_magnetic_cell(mu, np.zeros(3),
                                      OmegaPoint(np.full(ds.dim, 0.5)),
                                      CellGrid(res))
        for k in range(3):
            fieldio.write_field(out / f"corrector_mu_phi{k + 1}.field",
                                corr.potentials[k])
    report["cell"] = payload
    return bool(ok)


def _scenario_hom_run(cfg, out, report):
    from .cell_problems import CellGrid, assemble_effective_laws
    from .eps_solver import GridSpec, energy_check
    from .hom_solver import HomProblem, run_hom

    mu = cfgmod.field_from_config(cfg.section("mu"), "mu")
    eta = cfgmod.field_from_config(cfg.section("eta"), "eta")
    law = cfgmod.sigma_from_config(cfg.section("sigma"))
    ds = cfgmod.dynamics_from_config(cfg)
    cell_sec = cfg.section("cell", {}) or {}
    eff = assemble_effective_laws(
        mu, eta, law, ds, CellGrid(int(cell_sec.get("resolution", 16))),
        CellGrid(int(cell_sec.get("torus_resolution", 8)), dim=ds.dim))
    grid = cfgmod.grid_from_config(cfg.section("grid"))
    F, E0 = _data_from_config(cfg)
    hom = run_hom(HomProblem(grid_spec=grid, law=eff, F=F, E0=E0))
    passed = True
    spread = 0.0
    ref = hom.runs[0].E[-1]
    for i, r in enumerate(hom.runs):
        rep = energy_check(r)
        passed = passed and rep.passed
        tag = f"fiber{i}" if not hom.ergodic else "run"
        fieldio.write_energy_csv(out / f"energy_{tag}.csv", r.energy)
        spread = max(spread, float(np.max(np.abs(r.E[-1] - ref)))
                     / (float(np.max(np.abs(ref))) + 1e-300))
    info = {"mode": "ergodic" if hom.ergodic else "non_ergodic",
            "fibers": 0 if hom.ergodic else len(hom.runs),
            "fiber_relative_spread": spread,
            "energy_passed": bool(passed)}
    compare = cfg.section("ergodic_compare", {}) or {}
    if compare.get("enabled") and not ds.ergodic():
        # structural contract: the ergodic variant of the same field carries
        # no sample index and its effective law collapses to one matrix
        from .probability import DynamicalSystemSpec
        erg_ds = DynamicalSystemSpec(dim=ds.dim, seed=ds.seed)
        erg_eff = assemble_effective_laws(
            mu, eta, law, erg_ds,
            CellGrid(int(cell_sec.get("resolution", 16))),
            CellGrid(int(cell_sec.get("torus_resolution", 8)),
                     dim=erg_ds.dim))
        info["ergodic_law_is_single_matrix"] = \
            np.asarray(erg_eff.mu_hom).shape == (3, 3)
        info["nonergodic_spread_above_1e-3"] = spread > 1e-3
        passed = passed and info["ergodic_law_is_single_matrix"] \
            and info["nonergodic_spread_above_1e-3"]
        info["energy_passed"] = bool(passed)
    fieldio.write_json(out / "hom_report.json", info)
    report["hom_run"] = info
    return passed


def _scenario_galerkin(cfg, out, report):
    from .galerkin import (Problem1D, assemble_modes, implicit_solve,
                           linear_propagate)

    g_sec = cfg.section("galerkin", {}) or {}
    n = int(g_sec.get("modes", 16))
    dt = float(g_sec.get("dt", 1e-3))
    sigma = cfg.section("sigma", {}) or {}
    kappa = sigma.get("kappa", 1.0)
    beta = float(sigma.get("beta", 0.0))
    problem = Problem1D(kappa=float(kappa) if not isinstance(kappa, dict)
                        else 1.0, beta=beta,
                        E0=lambda x: np.sin(np.pi * x),
                        F=lambda x, t: 0.5 * np.sin(np.pi * x) * np.cos(2 * t),
                        T=0.5)
    sys_ = assemble_modes(n, problem)
    tr = implicit_solve(sys_, dt=dt)
    fieldio.write_trajectory_csv(out / "galerkin_trajectory.csv", tr.times,
                                 tr.psi)
    fieldio.write_json(out / "galerkin_modes.json",
                       {"n": n, "eigenvalues":
                        [float(v) for v in sys_.eigenvalues]})
    ok = True
    if beta == 0.0:
        exact = linear_propagate(sys_, problem.T, sys_.initial_coefficients())
        gap = float(np.linalg.norm(tr.psi[-1] - exact))
        ok = gap < 50 * dt
        report["galerkin"] = {"implicit_vs_propagator": gap, "passed": ok}
    else:
        report["galerkin"] = {"passed": True}
    fieldio.write_json(out / "galerkin_report.json", report["galerkin"])
    return ok


def _scenario_converge(cfg, out, report):
    from .hom_solver import run_hom
    from .presets import laminate_linear
    from .twoscale import convergence_study, limit_pairing

    if cfg.preset != "laminate-linear":
        raise ConfigurationError(
            "the converge scenario is preset-driven; set preset = "
            "'laminate-linear'")
    count = (cfg.section("samples") or {}).get("count", 32)
    eps_sec = cfg.section("epsilon", {}) or {}
    eps_list = eps_sec.get("values", [0.25, 0.125, 0.0625])
    cpp = int(eps_sec.get("cells_per_period", 8))
    pre = laminate_linear(seed=cfg.seed, omega_count=int(count),
                          cells_per_period=cpp)
    setup = pre["setup"]
    setup.hom_solution = run_hom(pre["hom_problem"], store_stride=1)
    setup.hom_solution_coarse = run_hom(pre["hom_problem_coarse"],
                                        store_stride=1)
    rep = convergence_study(setup, [float(e) for e in eps_list])
    # negative control: dropping the corrector must leave a persistent gap
    ctrl = pre["control_f"]
    I0_with = limit_pairing(setup.hom_solution, pre["corrector_matrix"],
                            ctrl, pre["ds"])
    I0_without = limit_pairing(setup.hom_solution, None, ctrl, pre["ds"])
    control_shift = abs(I0_with - I0_without)
    finest_se = float(np.max(rep.pairing.stderr[-1]))
    control_ok = control_shift > 3.0 * max(finest_se, 1e-12) \
        and control_shift > 2.0 * rep.quadrature_estimate
    fieldio.write_convergence_csv(out / "convergence.csv", rep)
    summary = rep.summary()
    summary["negative_control_shift"] = control_shift
    summary["negative_control_pass"] = bool(control_ok)
    summary["gate"] = "resolved" if bool(np.all(rep.pairing.resolved)) \
        else "unresolved"
    fieldio.write_json(out / "convergence_summary.json", summary)
    report["converge"] = summary
    return bool(rep.passed and control_ok)


def _scenario_cross_validate(cfg, out, report):
    from .galerkin import (Problem1D, assemble_modes, implicit_solve,
                           linear_propagate)
    from .probability import DynamicalSystemSpec, sample_omega
    from .coefficients import build_coefficient_field, build_conductivity_law
    from .eps_solver import GridSpec, init_problem, run

    T = 0.5
    Fy = lambda x, t: 0.5 * np.sin(np.pi * x) * np.cos(2 * t)
    E0y = lambda x: np.sin(np.pi * x)
    ds = DynamicalSystemSpec(seed=cfg.seed)
    eye = build_coefficient_field({"family": "constant", "matrix": np.eye(3)})
    results = {}
    passed = True
    for label, beta, tol in (("linear", 0.0, 1e-3), ("saturating", 0.5, 1e-2)):
        sys_ = assemble_modes(32, Problem1D(kappa=1.0, beta=beta, F=Fy,
                                            E0=E0y, T=T))
        if beta == 0.0:
            psiT = linear_propagate(sys_, T, sys_.initial_coefficients())
        else:
            psiT = implicit_solve(sys_, dt=1e-3).psi[-1]
        fam = "saturating" if beta else "linear"
        law = build_conductivity_law({"family": fam, "kappa": 1.0,
                                      "beta": beta})
        nx = 128
        n_steps = int(np.ceil(T / (0.8 / nx / np.sqrt(3.0))))
        spec = GridSpec(cells=(nx, 4, 4), dt=T / n_steps, T=T,
                        periodic=(False, True, True))

        def E0(x, *_):
            out_ = np.zeros(x.shape)
            out_[..., 1] = E0y(x[..., 0])
            return out_

        def F(x, t, *_):
            out_ = np.zeros(x.shape)
            out_[..., 1] = Fy(x[..., 0], t)
            return out_

        p = init_problem(spec, eye, eye, law, ds, 0.25, F=F, E0=E0)
        sol = run(p, sample_omega(ds, 1)[0], store_stride=n_steps)
        xc = (np.arange(nx) + 0.5) / nx
        gal = sys_.reconstruct_E(psiT[:32], xc)
        l2 = float(np.sqrt(np.mean((sol.E[-1][:, 0, 0, 1] - gal) ** 2)))
        results[label] = {"l2_difference": l2, "tolerance": tol,
                          "passed": l2 <= tol}
        passed = passed and l2 <= tol
    fieldio.write_json(out / "cross_validation.json", results)
    report["cross_validate"] = results
    return passed


_SCENARIO_TABLE = {
    "validate": _scenario_validate,
    "eps_run": _scenario_eps_run,
    "cell": _scenario_cell,
    "hom_run": _scenario_hom_run,
    "galerkin_run": _scenario_galerkin,
    "converge": _scenario_converge,
    "cross_validate": _scenario_cross_validate,
}


# ---------------------------------------------------------------------------
# orchestration
# ---------------------------------------------------------------------------


def run_experiment(cfg: ExperimentConfig, out_dir, workers=None) -> int:
    """Run one configured scenario; returns the exit status.

    Writes a manifest first, then the scenario artifacts, then a summary
    with the overall PASS/FAIL verdict. On solver failure the partial
    artifacts stay on disk next to a failure marker.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if workers is not None:
        cfg.workers = int(workers)
    echo = cfg.echo_dict()
    blob = json.dumps(echo, sort_keys=True).encode()
    manifest = {"config": echo,
                "inputs_sha256": hashlib.sha256(blob).hexdigest(),
                "version": __version__, "seed": cfg.seed}
    fieldio.write_json(out / "manifest.json", manifest)
    report = {}
    try:
        passed = _SCENARIO_TABLE[cfg.scenario](cfg, out, report)
    except NumericalError as exc:
        fieldio.write_json(out / "FAILED.json",
                           {"error": str(exc), "kind": "numerical"})
        print(f"NUMERICAL FAILURE: {exc}", file=sys.stderr)
        return 3
    summary = {"scenario": cfg.scenario, "passed": bool(passed),
               "report": report}
    fieldio.write_json(out / "summary.json", summary)
    print(f"{cfg.scenario}: {'PASS' if passed else 'FAIL'}")
    return 0 if passed else 1


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="maxhom",
        description="multiscale Maxwell workbench experiment runner")
    parser.add_argument("scenario", choices=sorted(_SCENARIO_TABLE),
                        help="experiment scenario to run")
    parser.add_argument("--config", required=True,
                        help="TOML configuration (or preset:<name>)")
    parser.add_argument("--out", default="maxhom-out",
                        help="output directory")
    parser.add_argument("--workers", type=int, default=None,
                        help="worker pool size (default: MAXHOM_WORKERS or 1)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the configured seed")
    args = parser.parse_args(argv)

    try:
        path = args.config
        if path.startswith("preset:"):
            path = preset_config_path(path.split(":", 1)[1])
        cfg = parse_config(path, default_scenario=args.scenario)
        if cfg.scenario != args.scenario:
            raise ConfigurationError(
                f"config declares scenario '{cfg.scenario}' but "
                f"'{args.scenario}' was requested")
        if args.seed is not None:
            cfg.seed = args.seed
            cfg.raw["seed"] = args.seed
        workers = args.workers
        if workers is None:
            workers = int(os.environ.get("MAXHOM_WORKERS", "1"))
    except ConfigurationError as exc:
        print(f"CONFIGURATION ERROR: {exc}", file=sys.stderr)
        return 2
    try:
        return run_experiment(cfg, args.out, workers=workers)
    except ConfigurationError as exc:
        print(f"CONFIGURATION ERROR: {exc}", file=sys.stderr)
        return 2
    except MaxhomError as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
