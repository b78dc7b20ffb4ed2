import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ddfluids.datasets import graph_lattice
from ddfluids.hulls import (
    MONOTONE_AFFINE,
    NEWTONIAN_QUADRATIC,
    POWER_LAW_YOUNG,
    ConeWitness,
    HullRefused,
    NotInCone,
    WitnessSearchFailed,
    certificate_function,
    closed_form_cone_test_2d,
    cone_membership,
    growth_constant,
    hull_membership,
    monotone_witness,
    newtonian_dist,
    point_from,
    sample_off_set,
    sample_on_set,
    spanning_check,
)
from ddfluids.laws import Ellis, HerschelBulkley, Newtonian, PowerLaw, TabulatedRadial
from ddfluids.phase import Exponents, PhasePoint, diag2, offdiag2, pq_dist_coords
from ddfluids.spectral import build_symbols, TorusGrid


def test_cone_examples_2d():
    w = cone_membership(offdiag2(1.0).coords, diag2(1, -1).coords, 2)
    assert isinstance(w, ConeWitness)
    assert np.allclose(np.abs(w.xi), [1.0, 0.0])
    w1, w2 = w.reconstruct()
    assert np.allclose(w1, offdiag2(1.0).coords, atol=1e-10)
    assert np.allclose(w2, diag2(1, -1).coords, atol=1e-10)
    # in 2D the rotated pair is carried by the diagonal direction
    w = cone_membership(diag2(1, -1).coords, offdiag2(1.0).coords, 2)
    assert isinstance(w, ConeWitness)
    assert np.allclose(np.abs(w.xi), [1 / np.sqrt(2), 1 / np.sqrt(2)])
    # zero strain part lies in every Y_xi
    assert isinstance(cone_membership(np.zeros(5), np.arange(5.0), 3), ConeWitness)
    # same direction both sides: never in the cone
    miss = cone_membership(diag2(1, -1).coords, diag2(1, -1).coords, 2)
    assert isinstance(miss, NotInCone) and miss.best_residual > 0.1


def test_cone_result_is_deterministic():
    a = cone_membership(offdiag2(1.0).coords, diag2(1, -1).coords, 2)
    b = cone_membership(offdiag2(1.0).coords, diag2(1, -1).coords, 2)
    assert np.array_equal(a.xi, b.xi)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=4, max_size=4))
def test_cone_membership_agrees_with_closed_form_2d(v):
    w1, w2 = np.array(v[:2]), np.array(v[2:])
    res = cone_membership(w1, w2, 2)
    # borderline pairs between the two tolerances may go either way
    if closed_form_cone_test_2d(w1, w2, tol=1e-13):
        assert isinstance(res, ConeWitness)
    elif abs(w1 @ w2) > 1e-6 * (1 + np.linalg.norm(w1) * np.linalg.norm(w2)):
        assert isinstance(res, NotInCone)


def test_cone_membership_on_mode_bases_3d():
    sb = build_symbols(TorusGrid(3, 8))
    for j in np.flatnonzero(sb.active)[::37][:20]:
        s, p = sb.strain_basis(j), sb.perp_basis(j)
        w1, w2 = s.sum(0), p[0] - 0.5 * p[-1]
        res = cone_membership(w1, w2, 3)
        assert isinstance(res, ConeWitness)
        r1, r2 = res.reconstruct()
        assert np.allclose(r1, w1, atol=1e-9) and np.allclose(r2, w2, atol=1e-9)


def test_spanning_examples():
    assert spanning_check(2, 1) is False
    assert spanning_check(2, 2) is True
    assert spanning_check(3, 10) is True
    with pytest.raises(ValueError):
        spanning_check(2, 0)


def test_newtonian_dist_examples():
    assert newtonian_dist(PhasePoint(diag2(1, -1), diag2(1, -1))) == 0.0
    assert newtonian_dist(PhasePoint(diag2(1, -1), diag2(2, -2))) == pytest.approx(1.0)


def test_newtonian_dist_against_fine_graph():
    # with the (1/2, 1/2) weighting the nearest graph point (t, t) sits at the
    # midpoint, so the weighted distance is exactly half of |eps - sig|^2 / 2
    h = 0.01
    ds = graph_lattice(Newtonian(), h, 2.0)
    assert len(ds) > 1e5
    rng = np.random.default_rng(1)
    e, s = rng.uniform(-1, 1, (1000, 2)), rng.uniform(-1, 1, (1000, 2))
    _, d = ds.query(e, s)
    nd = np.array([newtonian_dist(point_from(a, b, 2)) for a, b in zip(e, s)])
    assert np.all(nd / 2 <= d + 1e-15)
    # offset from the midpoint to the nearest lattice point is at most h/sqrt(2)
    assert np.all(d - nd / 2 <= h**2 / 2 + 1e-15)


def test_hull_membership_newtonian_and_power_law():
    inside, cert = hull_membership(PhasePoint(diag2(1, -1), diag2(1, -1)), Newtonian(), Exponents(2.0))
    assert inside and cert is None
    inside, cert = hull_membership(PhasePoint(diag2(1, -1), diag2(0, 0)), Newtonian(), Exponents(2.0))
    assert not inside and cert.kind == NEWTONIAN_QUADRATIC and cert.value == pytest.approx(1.0)
    law, exp = PowerLaw(0.5, 2.0), Exponents(3.0)
    e = np.array([0.3, -0.4])
    assert hull_membership(point_from(e, law.stress(e), 2), law, exp)[0]
    inside, cert = hull_membership(point_from(e, -law.stress(e), 2), law, exp)
    assert not inside and cert.kind == POWER_LAW_YOUNG and cert.value > 0


def test_hull_membership_refuses_non_monotone():
    law = TabulatedRadial(s=(0.0, 1.0, 2.0), tau=(0.0, 1.0, 0.5))
    with pytest.raises(HullRefused):
        hull_membership(PhasePoint.zero(2), law, Exponents(2.0))
    with pytest.raises(ValueError):
        hull_membership(PhasePoint.zero(3), Newtonian(), Exponents(2.0))


def test_monotone_witness_above_yield_cap():
    law = HerschelBulkley(a=0.5)
    z = PhasePoint(diag2(0, 0), diag2(0.4, -0.4))  # |sig| = 0.8 > 0.5
    cert = monotone_witness(z, law)
    assert cert.kind == MONOTONE_AFFINE and cert.value > 0 and cert.t > 0
    inside, _ = hull_membership(PhasePoint(diag2(0, 0), diag2(0.2, -0.2)), law, Exponents(2.0))
    assert inside
    with pytest.raises(WitnessSearchFailed):
        monotone_witness(PhasePoint.zero(2), law)


@pytest.mark.parametrize("law,p", [
    (Newtonian(), 2.0),
    (PowerLaw(0.5, 2.0), 3.0),
    (HerschelBulkley(a=0.5), 2.0),
    (Ellis(), 2.0),
    (Ellis(dim=3), 2.0),
])
def test_certificates_separate_and_respect_growth(law, p):
    exp = Exponents(p)
    rng = np.random.default_rng(7)
    m = 2 if law.dim == 2 else 5
    on_e, on_s = sample_on_set(law, 200, 2.0, rng)
    off_e, off_s = sample_off_set(law, 200, 2.0, rng)
    for e, s in zip(on_e, on_s):
        assert hull_membership(point_from(e, s, law.dim), law, exp)[0]
    ve, vs = sample_on_set(law, 2000, 5.0, rng)
    growth = 1 + np.linalg.norm(ve, axis=1) ** exp.p + np.linalg.norm(vs, axis=1) ** exp.q
    for e, s in zip(off_e, off_s):
        inside, cert = hull_membership(point_from(e, s, law.dim), law, exp)
        assert not inside and cert.value > 0
        f = certificate_function(cert, law, exp)
        assert f(e[None, :], s[None, :])[0] == pytest.approx(cert.value)
        # nonpositive on the data set, with controlled growth
        assert np.all(f(ve, vs) <= 1e-9 * growth)
        C = growth_constant(cert, law, exp)
        assert np.all(np.abs(f(ve, vs)) <= C * growth)
    assert m == on_e.shape[1]


def test_pq_distance_is_consistent_with_certificate_scale():
    de = np.array([[1.0, 0.0]])
    assert pq_dist_coords(de, np.zeros((1, 2)), Exponents(2.0))[0] == pytest.approx(0.5)
