import json
import math
import os
from pathlib import Path

import numpy as np
import pytest

import ksd

CONFIGS = Path(os.environ.get("KSD_CONFIGS", Path(__file__).resolve().parents[2] / "configs"))


def hard_sphere(**extra):
    cfg = json.loads((CONFIGS / "hard_sphere.json").read_text())
    cfg.pop("outputs", None)
    cfg.update(extra)
    return cfg


def ideal_gas():
    cfg = json.loads((CONFIGS / "ideal_gas.json").read_text())
    cfg.pop("outputs", None)
    return cfg


def test_check_reports_constants():
    rep = ksd.check(hard_sphere())
    assert rep["admissible"]
    assert rep["c_beta"] == pytest.approx(4.0 * math.pi / 3.0, rel=1e-10)
    assert rep["z_max"] == pytest.approx(ksd.activity_bound(rep["c_beta"], 0.0, 1.0))
    assert not rep["stability_probe"]["certifying"]


def test_ideal_gas_closed_form():
    cfg = ideal_gas()
    out = ksd.solve(cfg, override_admissibility=True)
    z = out["z"]
    G = len(ksd.grid_nodes(cfg["grid"]["L"], cfg["grid"]["n_g"]))
    for m, rho in enumerate(out["rho"], start=1):
        assert rho.shape == (G,) * m
        np.testing.assert_allclose(rho, z**m, rtol=1e-12)
    with pytest.raises(ksd.GateError):
        ksd.solve(ideal_gas())


def test_solve_matches_oracle():
    cfg = hard_sphere()
    ks = ksd.solve(cfg)
    orc = ksd.oracle(cfg)
    assert ks["report"]["iterations"] > 0
    for a, b, tail in zip(ks["rho"], orc["rho"], orc["tail"]):
        assert a.shape == b.shape
        assert np.max(np.abs(a - b)) <= 5e-3 * np.max(np.abs(b)) + tail
    rho2 = ks["rho"][1]
    nodes = ksd.grid_nodes(2.0, 3)
    r = np.linalg.norm(nodes[:, None, :] - nodes[None, :, :], axis=-1)
    assert np.all(rho2[r < 1.0] == 0.0)


def test_derivative_is_bounded_and_linear():
    one = ksd.derivative(hard_sphere())
    assert one["norm_bound_ok"]
    cfg = hard_sphere()
    cfg["perturbation"]["amplitude"] = 0.0625
    half = ksd.derivative(cfg)
    for a, b in zip(one["drho"], half["drho"]):
        np.testing.assert_allclose(0.5 * a, b, rtol=1e-6, atol=1e-14)


def test_config_errors_and_hash():
    with pytest.raises(ksd.ConfigError):
        ksd.solve('{"potential": ')
    assert issubclass(ksd.ConfigError, ksd.KsdError)
    a = ksd.config_hash(hard_sphere())
    b = ksd.config_hash(json.dumps(hard_sphere(), indent=4, sort_keys=True))
    assert a == b and len(a) == 16


def test_run_command(tmp_path):
    code, out, _ = ksd.run("check", CONFIGS / "hard_sphere.json", tmp_path / "check")
    assert code == 0
    assert json.loads(out)["pass"]
    manifest = json.loads((tmp_path / "check" / "manifest.json").read_text())
    assert manifest["command"] == "check"
    assert ksd.run("nope", CONFIGS / "hard_sphere.json", tmp_path / "x")[0] == 2
