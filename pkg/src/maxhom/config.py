"""Experiment configuration: strict TOML parsing and validation.

A configuration names one scenario and the component specs it needs.
Validation is strict: unknown keys are errors, the seed is mandatory, the
epsilon list must be sorted decreasing, and ALL schema violations are
collected and reported together rather than failing at the first one.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field as dc_field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigurationError

SCENARIOS = ("validate", "eps_run", "galerkin_run", "cell", "hom_run",
             "converge", "cross_validate")

_TOP_KEYS = {"scenario", "seed", "output", "workers", "preset", "title",
             "dynamics", "grid", "mu", "eta", "sigma", "epsilon", "samples",
             "cell", "source", "initial", "tolerances", "hom",
             "ergodic_compare", "galerkin"}

_SECTION_KEYS = {
    "dynamics": {"dim", "shift_matrix", "invariant_mask", "seed"},
    "grid": {"cells", "lengths", "dt", "T", "cfl_safety", "periodic"},
    "mu": None,       # family-dependent; validated by the field builder
    "eta": None,
    "sigma": None,
    "epsilon": {"values", "cells_per_period"},
    "samples": {"count"},
    "cell": {"resolution", "torus_resolution", "fibers"},
    "source": {"profile", "amplitude"},
    "initial": {"profile", "amplitude"},
    "tolerances": {"newton_tol", "energy_slack", "cg_rtol"},
    "hom": {"cells", "steps", "mode"},
    "ergodic_compare": {"enabled"},
    "galerkin": {"modes", "dt"},
}

_FIELD_KEYS = {
    "constant": {"family", "matrix"},
    "laminate": {"family", "matrix_a", "matrix_b", "axis", "theta"},
    "smooth_mix": {"family", "matrix_0", "matrix_1", "weight"},
    "checkerboard": {"family", "matrix_a", "matrix_b"},
}

_SIGMA_KEYS = {"family", "kappa", "beta"}

_KNOWN_FAMILIES = tuple(_FIELD_KEYS)


@dataclass
class ExperimentConfig:
    scenario: str
    seed: int
    raw: dict
    output: str = None
    workers: int = 1
    preset: str = None
    defaults_used: dict = dc_field(default_factory=dict)

    def section(self, name, default=None):
        return self.raw.get(name, default)

    def echo_dict(self) -> dict:
        """Fully-expanded configuration (defaults included) for the manifest."""
        out = dict(self.raw)
        out["scenario"] = self.scenario
        out["seed"] = self.seed
        out["workers"] = self.workers
        if self.preset:
            out["preset"] = self.preset
        out["_defaults_used"] = self.defaults_used
        return out


def parse_config(path, default_scenario=None) -> ExperimentConfig:
    """Parse and validate a TOML experiment configuration.

    ``default_scenario`` fills a missing scenario key (the CLI passes its
    subcommand). Raises ConfigurationError carrying the full list of
    schema errors.
    """
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigurationError(f"config file not found: {path}")
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"config is not valid TOML: {exc}")
    return validate_config(raw, default_scenario=default_scenario)


def validate_config(raw: dict, default_scenario=None) -> ExperimentConfig:
    errors = []
    defaults = {}

    for key in raw:
        if key not in _TOP_KEYS:
            errors.append(f"unknown top-level key '{key}'")

    scenario = raw.get("scenario", default_scenario)
    if scenario is None:
        errors.append("missing 'scenario'")
    elif scenario not in SCENARIOS:
        errors.append(f"unknown scenario '{scenario}'; available: "
                      + ", ".join(SCENARIOS))

    if "seed" not in raw:
        errors.append("missing mandatory 'seed'")
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        errors.append("'seed' must be an integer")

    workers = raw.get("workers", 1)
    if not (isinstance(workers, int) and workers >= 1):
        errors.append("'workers' must be a positive integer")
    elif "workers" not in raw:
        defaults["workers"] = 1

    # no silent defaults: record every filled-in parameter for the manifest
    _SECTION_DEFAULTS = {
        "grid": {"lengths": [1.0, 1.0, 1.0], "cfl_safety": 0.9,
                 "periodic": [False, False, False]},
        "samples": {"count": 1},
        "cell": {"resolution": 32, "torus_resolution": 8, "fibers": 4},
        "dynamics": {"dim": 3, "invariant_mask": [False, False, False],
                     "shift_matrix": "identity"},
        "sigma": {"kappa": 1.0, "beta": 0.0},
        "epsilon": {"cells_per_period": 8},
        "galerkin": {"modes": 16, "dt": 1e-3},
    }
    for name, table in _SECTION_DEFAULTS.items():
        sec = raw.get(name)
        if not isinstance(sec, dict):
            continue
        filled = {k: v for k, v in table.items() if k not in sec}
        if filled:
            defaults[name] = filled

    for name, keys in _SECTION_KEYS.items():
        sec = raw.get(name)
        if sec is None:
            continue
        if not isinstance(sec, dict):
            errors.append(f"[{name}] must be a table")
            continue
        if keys is not None:
            for k in sec:
                if k not in keys:
                    errors.append(f"unknown key '{k}' in [{name}]")

    for fname in ("mu", "eta"):
        sec = raw.get(fname)
        if sec is None:
            continue
        _validate_field_section(fname, sec, errors)

    sigma = raw.get("sigma")
    if sigma is not None:
        for k in sigma:
            if k not in _SIGMA_KEYS:
                errors.append(f"unknown key '{k}' in [sigma]")
        fam = sigma.get("family")
        if fam not in ("linear", "saturating"):
            errors.append(
                f"[sigma] family '{fam}' unknown; available: linear, "
                "saturating")

    eps = raw.get("epsilon", {}).get("values") if raw.get("epsilon") else None
    if eps is not None:
        if not (isinstance(eps, list) and all(
                isinstance(v, (int, float)) and v > 0 for v in eps)):
            errors.append("[epsilon].values must be a list of positive reals")
        elif any(b >= a for a, b in zip(eps, eps[1:])):
            errors.append("[epsilon].values must be sorted strictly "
                          "decreasing")

    grid = raw.get("grid")
    if grid is not None and isinstance(grid, dict):
        cells = grid.get("cells")
        if cells is not None and (not isinstance(cells, list)
                                  or len(cells) != 3
                                  or any(not isinstance(c, int) or c < 4
                                         for c in cells)):
            errors.append("[grid].cells must be three integers >= 4")
        for k in ("dt", "T"):
            if k in grid and not (isinstance(grid[k], (int, float))
                                  and grid[k] > 0):
                errors.append(f"[grid].{k} must be positive")

    samples = raw.get("samples")
    if samples is not None:
        n = samples.get("count")
        if not (isinstance(n, int) and n >= 1):
            errors.append("[samples].count must be a positive integer")

    preset = raw.get("preset")
    if preset is not None:
        from .presets import PRESET_NAMES
        if preset not in PRESET_NAMES:
            errors.append(f"unknown preset '{preset}'; available: "
                          + ", ".join(PRESET_NAMES))

    if errors:
        raise ConfigurationError(
            "configuration invalid:\n  - " + "\n  - ".join(errors))

    return ExperimentConfig(scenario=scenario, seed=seed, raw=raw,
                            output=raw.get("output"), workers=workers,
                            preset=preset, defaults_used=defaults)


def _validate_field_section(fname, sec, errors):
    fam = sec.get("family")
    if fam not in _KNOWN_FAMILIES:
        errors.append(f"[{fname}] family '{fam}' unknown; available: "
                      + ", ".join(_KNOWN_FAMILIES))
        return
    allowed = _FIELD_KEYS[fam]
    for k in sec:
        if k not in allowed and k != "weight":
            errors.append(f"unknown key '{k}' in [{fname}] "
                          f"(family {fam} takes {sorted(allowed)})")
    for k in allowed:
        if k not in sec:
            errors.append(f"[{fname}] family {fam} is missing '{k}'")


def matrix_from_config(values, name="matrix"):
    a = np.asarray(values, dtype=float)
    if a.size != 9:
        raise ConfigurationError(f"{name} must hold 9 row-major entries")
    return a.reshape(3, 3)


def field_from_config(sec: dict, label: str):
    """Build a coefficient field from a validated [mu]/[eta] section."""
    from .coefficients import ScalarFieldSpec, build_coefficient_field

    fam = sec["family"]
    spec = {"family": fam}
    if fam == "constant":
        spec["matrix"] = matrix_from_config(sec["matrix"], f"[{label}].matrix")
    elif fam in ("laminate", "checkerboard"):
        spec["matrix_a"] = matrix_from_config(sec["matrix_a"],
                                              f"[{label}].matrix_a")
        spec["matrix_b"] = matrix_from_config(sec["matrix_b"],
                                              f"[{label}].matrix_b")
        if fam == "laminate":
            spec["axis"] = int(sec.get("axis", 0))
            spec["theta"] = float(sec.get("theta", 0.5))
    else:  # smooth_mix
        spec["matrix_0"] = matrix_from_config(sec["matrix_0"],
                                              f"[{label}].matrix_0")
        spec["matrix_1"] = matrix_from_config(sec["matrix_1"],
                                              f"[{label}].matrix_1")
        w = dict(sec["weight"])
        spec["weight"] = ScalarFieldSpec(w.pop("family"), w)
    return build_coefficient_field(spec, label=label)


def sigma_from_config(sec: dict):
    from .coefficients import ScalarFieldSpec, build_conductivity_law

    if sec is None:
        return None
    spec = {"family": sec["family"]}
    if "beta" in sec:
        spec["beta"] = float(sec["beta"])
    kappa = sec.get("kappa", 1.0)
    if isinstance(kappa, dict):
        k = dict(kappa)
        spec["kappa"] = ScalarFieldSpec(k.pop("family"), k)
    else:
        spec["kappa"] = float(kappa)
    return build_conductivity_law(spec)


def dynamics_from_config(cfg: ExperimentConfig):
    from .probability import DynamicalSystemSpec

    sec = dict(cfg.section("dynamics", {}))
    sec.setdefault("seed", cfg.seed)
    return DynamicalSystemSpec.from_config(sec)


def grid_from_config(sec: dict):
    from .eps_solver import GridSpec

    return GridSpec(cells=tuple(sec["cells"]), dt=float(sec["dt"]),
                    T=float(sec["T"]),
                    lengths=tuple(sec.get("lengths", (1.0, 1.0, 1.0))),
                    cfl_safety=float(sec.get("cfl_safety", 0.9)),
                    periodic=tuple(sec.get("periodic",
                                           (False, False, False))))
