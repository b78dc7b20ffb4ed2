import json
from pathlib import Path

import numpy as np
import pytest

from ddfluids.config import validate
from ddfluids.experiments import (
    SpecFactory,
    checker_study,
    density_study,
    fit_rate,
    gamma_probe,
    truncation_counterexample,
    verify_invariants,
)
from ddfluids.laws import Newtonian, PowerLaw, TabulatedRadial
from ddfluids.phase import Exponents

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def _cfg(name, **problem):
    raw = json.loads((CONFIGS / name).read_text())
    raw["problem"].update(problem)
    return validate(raw)


def test_fit_rate():
    a = [0.5, 0.25, 0.125]
    assert fit_rate(a, [3 * x**2 for x in a]) == pytest.approx(2.0)


def test_density_study_refines():
    res = density_study(_cfg("study_density.json"), [0.004, 0.002, 0.001])
    assert res.complete
    err = [r["velocity_rel_error"] for r in res.records]
    I = [r["I_value"] for r in res.records]
    assert err[0] > err[1] > err[2]
    assert all(a / b >= 3 for a, b in zip(I, I[1:]))


@pytest.mark.parametrize("law,p", [(Newtonian(), 2.0), (PowerLaw(0.5, 2.0), 3.0)])
def test_checkers_decay(law, p):
    res = checker_study(law, Exponents(p), [1, 2, 3, 4, 5], 2.0, 0)
    a = [r["a_hat"] for r in res.records]
    b = [r["b_hat"] for r in res.records]
    assert all(x > y for x, y in zip(a, a[1:]))
    assert all(x > y for x, y in zip(b, b[1:]))
    assert res.rates["b_hat"] > 0


def test_truncation_counterexample_keeps_a_gap():
    res = truncation_counterexample(Newtonian(), Exponents(2.0), [1, 2, 3, 4])
    for r in res.records:
        assert r["a_eq"] == 0.0 and r["b_eq"] == 0.0
        assert r["a_bd"] > 0.1
        assert r["gap"] >= 0.5 * r["a_bd"]
        assert r["mean_magnitude"] <= 2.0


def test_gamma_probe_newtonian_decreasing():
    cfg = validate(json.loads((CONFIGS / "gamma_newtonian.json").read_text()))
    f = SpecFactory(cfg)
    res = gamma_probe(Newtonian(), 4, f, f.exp, R0=0.5, n_dirs0=32, n_mags0=32, replicates=3)
    I = [r["I_value"] for r in res.records]
    assert len(I) == 4 and all(x > y for x, y in zip(I, I[1:]))
    assert res.reference["status"] == "Converged"


def test_gamma_probe_anchor_zero_force():
    raw = json.loads((CONFIGS / "gamma_newtonian.json").read_text())
    raw["problem"]["force"] = {"kind": "zero"}
    raw["problem"]["n"] = 8
    raw["problem"]["means"] = {"eps0": [0.3, -0.1], "sig0": [0.3, -0.1]}
    cfg = validate(raw)
    f = SpecFactory(cfg)
    anchor = (np.array([0.3, -0.1]), np.array([0.3, -0.1]))
    res = gamma_probe(Newtonian(), 3, f, f.exp, n_dirs0=8, n_mags0=8, anchor=anchor)
    assert [r["I_value"] for r in res.records] == [0.0, 0.0, 0.0]
    assert res.reference["I_value"] == 0.0


def test_gamma_probe_power_law_consistency_decreases():
    raw = json.loads((CONFIGS / "gamma_newtonian.json").read_text())
    raw["problem"].update(n=8, p=3.0, force={"kind": "shear", "amp": 1.0})
    raw["problem"]["dataset"]["law"] = {"kind": "power_law", "mu0": 0.5, "alpha": 2.0}
    cfg = validate(raw)
    f = SpecFactory(cfg)
    for seed in (0, 1, 2):
        res = gamma_probe(PowerLaw(0.5, 2.0), 3, f, f.exp, R0=0.5, n_dirs0=16, n_mags0=16, seed=seed, replicates=3)
        c = [r["consistency_l2"] for r in res.records]
        assert c[0] > c[1] > c[2]


def test_gamma_probe_preconditions():
    cfg = validate(json.loads((CONFIGS / "gamma_newtonian.json").read_text()))
    f = SpecFactory(cfg)
    with pytest.raises(ValueError):
        gamma_probe(Newtonian(), 2, f, f.exp)
    bumpy = TabulatedRadial(s=(0.0, 1.0, 2.0), tau=(0.0, 1.0, 0.5))
    with pytest.raises(ValueError):
        gamma_probe(bumpy, 3, f, f.exp)


def test_verify_invariants_all_pass():
    checks = verify_invariants(0)
    assert checks and all(c["passed"] for c in checks.values())
