import numpy as np
import pytest

from ddfluids.laws import Ellis, HerschelBulkley, Newtonian, PowerLaw, TabulatedRadial, law_from_dict


def test_newtonian_stress_is_linear(rng):
    e = rng.standard_normal((10, 2))
    assert np.allclose(Newtonian(0.5).stress(e), e)
    assert np.allclose(Newtonian(2.0).stress(e), 4 * e)


def test_power_law_stress_magnitude(rng):
    law = PowerLaw(0.5, 2.0)
    e = rng.standard_normal((10, 5))
    n = np.linalg.norm(e, axis=1)
    s = PowerLaw(0.5, 2.0, dim=3).stress(e)
    assert np.allclose(np.linalg.norm(s, axis=1), n**2)
    assert law.kind == "power_law"


def test_herschel_bulkley_has_yield_stress():
    law = HerschelBulkley(a=0.7)
    assert law.yield_stress == 0.7
    e = np.array([[1e-9, 0.0]])
    assert np.linalg.norm(law.stress(e)) == pytest.approx(0.7, rel=1e-6)
    assert np.all(law.stress(np.zeros((1, 2))) == 0.0)


def test_monotonicity():
    for law in (Newtonian(), PowerLaw(alpha=0.5), PowerLaw(alpha=2.0), Ellis(), HerschelBulkley()):
        assert law.is_monotone()
    assert not TabulatedRadial(s=(0.0, 1.0, 2.0), tau=(0.0, 1.0, 0.5)).is_monotone()
    assert TabulatedRadial(s=(0.0, 1.0, 2.0), tau=(0.0, 1.0, 1.5)).is_monotone()


def test_invalid_parameters():
    with pytest.raises(ValueError):
        Newtonian(-1.0)
    with pytest.raises(ValueError):
        PowerLaw(0.5, 2.0, dim=4)
    with pytest.raises(ValueError):
        law_from_dict({"kind": "bingham"}, 2)


def test_law_from_dict_roundtrip():
    for law in (Newtonian(0.3), PowerLaw(0.5, 2.0), Ellis(0.5, 1.0, 1.5), HerschelBulkley(1.0, 0.5, 1.0)):
        again = law_from_dict(law.params(), 2)
        assert again == law
