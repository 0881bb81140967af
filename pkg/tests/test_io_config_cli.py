import json
import numpy as np
import pytest

from maxhom import fieldio
from maxhom.errors import ConfigurationError, InputError
from maxhom.config import parse_config, validate_config
from maxhom.cli import main, preset_config_path, run_experiment
from maxhom.integrator import EnergyLog


def test_field_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    a = rng.standard_normal((5, 4, 3, 2))
    path = tmp_path / "field.bin"
    fieldio.write_field(path, a, stride=3, dt=0.125)
    b, meta = fieldio.read_field(path)
    assert np.array_equal(a, b)
    assert meta == {"stride": 3, "dt": 0.125}
    # little-endian float64 payload, as documented
    raw = path.read_bytes()
    assert raw[:8] == b"MAXHOM01"
    payload = np.frombuffer(raw[-a.size * 8:], dtype="<f8")
    assert np.array_equal(payload, a.ravel())


def test_field_bad_magic(tmp_path):
    p = tmp_path / "bad.bin"
    p.write_bytes(b"NOTMAGIC" + b"\x00" * 64)
    with pytest.raises(InputError, match="magic"):
        fieldio.read_field(p)


def test_energy_csv_format(tmp_path):
    log = EnergyLog()
    for n in range(3):
        log.step.append(n)
        log.t.append(0.1 * n)
        log.ED.append(1.0 + n)
        log.HB.append(2.0)
        log.cum_dissipation.append(0.5 * n)
        log.E2.append(1.0)
        log.F2_cum.append(0.0)
    log.rhs_bound = [3.0] * 3
    path = tmp_path / "energy.csv"
    fieldio.write_energy_csv(path, log)
    lines = path.read_text().strip().split("\n")
    assert lines[0] == "step,t,ED,HB,cum_dissipation,rhs_bound"
    assert lines[1].startswith("0,0.0,1.0,2.0,0.0,3.0")


MINIMAL = {
    "scenario": "validate",
    "seed": 7,
    "sigma": {"family": "saturating", "kappa": 2.0, "beta": 0.5},
}


def test_validate_config_minimal():
    cfg = validate_config(dict(MINIMAL))
    assert cfg.scenario == "validate" and cfg.seed == 7
    assert cfg.defaults_used.get("workers") == 1


def test_config_collects_all_errors():
    bad = {
        "scenario": "fly_to_moon",
        "typo_key": 1,
        "epsilon": {"values": [0.125, 0.25]},
        "mu": {"family": "plasma"},
    }
    with pytest.raises(ConfigurationError) as err:
        validate_config(bad)
    msg = str(err.value)
    assert "unknown scenario" in msg
    assert "unknown top-level key 'typo_key'" in msg
    assert "sorted strictly decreasing" in msg
    assert "family 'plasma' unknown" in msg
    assert "missing mandatory 'seed'" in msg


def test_config_missing_seed_only():
    bad = dict(MINIMAL)
    del bad["seed"]
    with pytest.raises(ConfigurationError, match="seed"):
        validate_config(bad)


def test_parse_config_file(tmp_path):
    p = tmp_path / "exp.toml"
    p.write_text('scenario = "validate"\nseed = 3\n'
                 '[sigma]\nfamily = "linear"\nkappa = 1.0\n')
    cfg = parse_config(p)
    assert cfg.seed == 3
    with pytest.raises(ConfigurationError, match="not found"):
        parse_config(tmp_path / "missing.toml")


def test_preset_configs_all_parse():
    for name in ("micro-constant", "laminate-linear", "laminate-nonlinear",
                 "checkerboard", "ergodic-vs-nonergodic"):
        cfg = parse_config(preset_config_path(name))
        assert cfg.seed is not None


def test_validate_scenario_pass_and_fail(tmp_path):
    cfg = validate_config(dict(MINIMAL))
    rc = run_experiment(cfg, tmp_path / "good")
    assert rc == 0
    summary = json.loads((tmp_path / "good" / "summary.json").read_text())
    assert summary["passed"]

    bad = dict(MINIMAL)
    bad["sigma"] = {"family": "linear", "kappa": 0.5}   # delta < 1
    rc = run_experiment(validate_config(bad), tmp_path / "bad")
    assert rc == 1
    summary = json.loads((tmp_path / "bad" / "summary.json").read_text())
    assert not summary["passed"]
    assert summary["report"]["conductivity"]["delta_hat"] == pytest.approx(
        0.5, abs=0.01)


def test_cli_exit_codes(tmp_path):
    rc = main(["validate", "--config", str(tmp_path / "nope.toml"),
               "--out", str(tmp_path / "o")])
    assert rc == 2
    p = tmp_path / "mismatch.toml"
    p.write_text('scenario = "validate"\nseed = 1\n'
                 '[sigma]\nfamily = "linear"\nkappa = 1.0\n')
    rc = main(["cell", "--config", str(p), "--out", str(tmp_path / "o2")])
    assert rc == 2


def test_repeat_runs_byte_identical(tmp_path):
    cfg_path = preset_config_path("micro-constant")
    rc1 = main(["eps_run", "--config", str(cfg_path),
                "--out", str(tmp_path / "a")])
    rc2 = main(["eps_run", "--config", str(cfg_path),
                "--out", str(tmp_path / "b")])
    assert rc1 == 0 and rc2 == 0
    for name in ("energy_sample0.csv", "E_sample0.field", "manifest.json",
                 "summary.json"):
        a = (tmp_path / "a" / name).read_bytes()
        b = (tmp_path / "b" / name).read_bytes()
        assert a == b, name


def test_manifest_echoes_defaults(tmp_path):
    cfg = validate_config(dict(MINIMAL))
    run_experiment(cfg, tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["config"]["_defaults_used"]["workers"] == 1
    assert manifest["seed"] == 7
    assert "inputs_sha256" in manifest


def test_cli_scenario_from_subcommand(tmp_path):
    p = tmp_path / "law.toml"
    p.write_text('seed = 1\n[sigma]\nfamily = "saturating"\n'
                 'kappa = 2.0\nbeta = 0.5\n')
    rc = main(["validate", "--config", str(p), "--out",
               str(tmp_path / "out")])
    assert rc == 0


def test_cli_galerkin_run(tmp_path):
    p = tmp_path / "g.toml"
    p.write_text('seed = 1\n[galerkin]\nmodes = 8\ndt = 0.002\n'
                 '[sigma]\nfamily = "linear"\nkappa = 1.0\n')
    rc = main(["galerkin_run", "--config", str(p), "--out",
               str(tmp_path / "out")])
    assert rc == 0
    modes = json.loads((tmp_path / "out" / "galerkin_modes.json").read_text())
    assert modes["n"] == 8
    assert modes["eigenvalues"][0] == pytest.approx(np.pi ** 2)
    lines = (tmp_path / "out" / "galerkin_trajectory.csv").read_text()
    assert lines.startswith("t,psi_1")


def test_cli_workers_parallel_eps(tmp_path):
    cfg_path = preset_config_path("micro-constant")
    rc1 = main(["eps_run", "--config", str(cfg_path), "--out",
                str(tmp_path / "serial"), "--workers", "1"])
    rc2 = main(["eps_run", "--config", str(cfg_path), "--out",
                str(tmp_path / "parallel"), "--workers", "2"])
    assert rc1 == 0 and rc2 == 0
    a = json.loads((tmp_path / "serial" / "eps_report.json").read_text())
    b = json.loads((tmp_path / "parallel" / "eps_report.json").read_text())
    assert a == b


def test_cell_scenario_exports_correctors(tmp_path):
    rc = main(["cell", "--config", str(preset_config_path("checkerboard")),
               "--out", str(tmp_path)])
    assert rc == 0
    arr, meta = fieldio.read_field(tmp_path / "corrector_mu_phi1.field")
    assert arr.shape == (32, 32, 32)
    assert abs(float(np.mean(arr))) < 1e-12
