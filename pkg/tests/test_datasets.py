import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial import cKDTree

from ddfluids.datasets import (
    CoercivityCertificate,
    EmptyDataSet,
    MaterialDataSet,
    NotCoercive,
    check_convergence_bd,
    check_convergence_eq,
    coercivity_certificate,
    dataset_from_dict,
    graph_lattice,
    sample_law,
    sphere_directions,
)
from ddfluids.laws import Ellis, HerschelBulkley, Newtonian, PowerLaw
from ddfluids.oracles import brute_nearest
from ddfluids.phase import Exponents, PhasePoint, diag2, young_defect_coords


def test_query_examples():
    ds = MaterialDataSet([[0.0, 0.0], [np.sqrt(2), 0.0]], [[0.0, 0.0], [np.sqrt(2), 0.0]], Exponents(2.0))
    i, z, dist = ds.nearest(PhasePoint.zero(2))
    assert (i, dist) == (0, 0.0)
    i, z, dist = ds.nearest(PhasePoint(diag2(1, -1), diag2(1, -1)))
    assert i == 1 and dist == pytest.approx(0.0, abs=1e-28)


def test_query_ties_go_to_lowest_index():
    ds = MaterialDataSet([[1.0, 0.0], [-1.0, 0.0], [1.0, 0.0]], [[0.0, 0.0]] * 3, Exponents(3.0))
    idx, dist = ds.query(np.zeros((1, 2)), np.zeros((1, 2)))
    assert idx[0] == 0
    idx, _ = ds.query(np.array([[1.0, 0.0]]), np.zeros((1, 2)))
    assert idx[0] == 0


@pytest.mark.parametrize("p", [2.0, 3.0, 1.5, 4.0, 1.2])
def test_query_matches_linear_scan(p):
    rng = np.random.default_rng(int(10 * p))
    pts = rng.standard_normal((3000, 4)) * 10 ** rng.uniform(-2, 1, (3000, 1))
    pts = np.vstack([pts, pts[:100]])
    ds = MaterialDataSet(pts[:, :2], pts[:, 2:], Exponents(p))
    q = rng.standard_normal((1000, 4)) * 10 ** rng.uniform(-3, 1.5, (1000, 1))
    q = np.vstack([q, pts[:50]])
    i1, d1 = ds.query(q[:, :2], q[:, 2:])
    i2, d2 = brute_nearest(q[:, :2], q[:, 2:], pts[:, :2], pts[:, 2:], p)
    assert np.allclose(d1, d2, rtol=1e-12, atol=0)
    same = d1 == d2
    assert np.array_equal(i1[same], i2[same])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from([2.0, 3.0, 1.5]), st.integers(1, 60))
def test_query_property_dense_clusters(seed, p, n):
    rng = np.random.default_rng(seed)
    pts = np.round(rng.standard_normal((n, 10)), 1)
    ds = MaterialDataSet(pts[:, :5], pts[:, 5:], Exponents(p))
    q = rng.standard_normal((20, 10))
    i1, d1 = ds.query(q[:, :5], q[:, 5:])
    i2, d2 = brute_nearest(q[:, :5], q[:, 5:], pts[:, :5], pts[:, 5:], p)
    assert np.allclose(d1, d2, rtol=1e-12, atol=1e-300)
    assert np.array_equal(i1, i2)


def test_empty_and_mismatched_sets():
    with pytest.raises(EmptyDataSet):
        MaterialDataSet(np.zeros((0, 2)), np.zeros((0, 2)), Exponents(2.0))
    with pytest.raises(ValueError):
        MaterialDataSet(np.zeros((3, 2)), np.zeros((3, 5)), Exponents(2.0))
    with pytest.raises(EmptyDataSet):
        graph_lattice(Newtonian(), 1.0, 0.1, lo=[0.2, 0.2], hi=[0.3, 0.3])


def test_save_load_roundtrip_is_bit_exact(tmp_path):
    ds = sample_law(PowerLaw(alpha=2.0, dim=3), 8, 8, 2.0, noise=0.1, seed=4, exp=Exponents(3.0))
    path = tmp_path / "d.csv"
    ds.save(path)
    back = MaterialDataSet.load(path)
    assert np.array_equal(back.eps, ds.eps) and np.array_equal(back.sig, ds.sig)
    assert back.exp.p == ds.exp.p and back.dim == 3
    assert back.meta["noise"] == 0.1


def test_sample_law_noiseless_graphs():
    ds = sample_law(Newtonian(0.5), 16, 16, 2.0)
    assert np.array_equal(ds.sig, ds.eps)
    ds = sample_law(PowerLaw(0.5, 2.0), 16, 16, 2.0, exp=Exponents(3.0))
    assert np.all(np.abs(young_defect_coords(ds.eps, ds.sig, Exponents(3.0))) <= 1e-12 * (1 + ds.magnitudes()))


def test_sample_law_yield_segment():
    ds = sample_law(HerschelBulkley(a=0.5), 8, 8, 1.0)
    seg = np.linalg.norm(ds.eps, axis=1) == 0
    assert seg.sum() == 1 + 8 * 8
    assert np.linalg.norm(ds.sig[seg], axis=1).max() == pytest.approx(0.5)


def test_sample_law_is_seeded():
    a = sample_law(Ellis(), 8, 8, 1.0, noise=0.2, seed=7)
    b = sample_law(Ellis(), 8, 8, 1.0, noise=0.2, seed=7)
    c = sample_law(Ellis(), 8, 8, 1.0, noise=0.2, seed=8)
    assert np.array_equal(a.sig, b.sig)
    assert not np.array_equal(a.sig, c.sig)


def test_relative_noise_bound_against_fine_graph():
    # Euclidean phase-space distance to a 10^6-point sampling of the Newtonian graph
    ds = sample_law(Newtonian(0.5), 64, 32, 1.0, noise=0.1, seed=3)
    ax = np.linspace(-1.3, 1.3, 1000)
    E = np.stack(np.meshgrid(ax, ax, indexing="ij"), axis=-1).reshape(-1, 2)
    fine = cKDTree(np.hstack([E, E]))
    dist, _ = fine.query(ds.points)
    spacing = ax[1] - ax[0]
    ratio = dist / (1 + np.linalg.norm(ds.points, axis=1))
    assert ratio.max() <= 0.1 + spacing


def test_sphere_directions_are_unit():
    for m in (2, 5):
        w = sphere_directions(m, 100, 0)
        assert np.allclose(np.linalg.norm(w, axis=1), 1.0)


def test_graph_lattice_box_and_ball():
    ds = graph_lattice(Newtonian(), 0.1, 1.0, ball=True)
    assert np.linalg.norm(ds.eps, axis=1).max() <= 1.0 + 1e-12
    box = graph_lattice(Newtonian(), 0.1, 1.0, lo=[0, -0.2], hi=[0, 0.2])
    assert len(box) == 5 and np.all(box.eps[:, 0] == 0)
    hb = graph_lattice(HerschelBulkley(a=0.3), 0.1, 0.5)
    on_seg = np.linalg.norm(hb.eps, axis=1) == 0
    assert np.linalg.norm(hb.sig[on_seg], axis=1).max() <= 0.3 + 1e-12


def test_dataset_from_dict_kinds(tmp_path):
    exp = Exponents(2.0)
    a = dataset_from_dict({"kind": "sample", "law": {"kind": "newtonian"}, "n_dirs": 4, "n_mags": 4}, 2, exp)
    assert len(a) == 16
    b = dataset_from_dict({"kind": "lattice", "law": {"kind": "newtonian"}, "h": 0.5, "R": 1.0}, 2, exp)
    assert len(b) == 25
    a.save(tmp_path / "a.csv")
    c = dataset_from_dict({"kind": "file", "path": str(tmp_path / "a.csv")}, 2, exp)
    assert np.array_equal(c.sig, a.sig)
    with pytest.raises(ValueError):
        dataset_from_dict({"kind": "cloud", "law": {"kind": "newtonian"}}, 2, exp)


def test_checker_identity_and_nesting():
    ref = sample_law(Newtonian(), 16, 16, 2.0)
    r = check_convergence_eq(ref, ref, 5.0, 5.0)
    assert r.a_hat == 0.0 and r.b_hat == 0.0
    r = check_convergence_bd(ref, ref)
    assert (r.a_hat, r.b_hat) == (0.0, 0.0)
    sub = ref.subset(np.arange(len(ref)) % 3 == 0)
    r = check_convergence_eq(sub, ref, 5.0, 5.0)
    assert r.b_hat == 0.0 and r.a_hat >= 0.0


def test_checker_shifted_copy_matches_scan():
    ref = sample_law(Newtonian(), 12, 12, 2.0)
    delta = np.array([0.05, -0.02])
    dn = MaterialDataSet(ref.eps, ref.sig + delta, ref.exp)
    r = check_convergence_eq(dn, ref, 3.0, 3.0)
    mags = ref.magnitudes()
    mask = mags < 3.0
    _, d = brute_nearest(ref.eps[mask], ref.sig[mask], dn.eps, dn.sig, 2.0)
    assert r.a_hat == pytest.approx(np.max(d / ref.growth()[mask]), rel=1e-12)


def test_checker_detects_missing_far_points():
    ref = sample_law(Newtonian(), 16, 32, 8.0)
    S = 4.0
    dn = ref.subset(ref.magnitudes() <= S / 2)
    r = check_convergence_eq(dn, ref, 10.0, S)
    assert r.a_hat > 0.1
    assert r.b_hat == 0.0


def test_checker_decays_with_noise():
    ref = graph_lattice(Newtonian(), 0.01, 2.5, ball=True)
    vals = []
    for n in (4, 8, 16):
        dn = sample_law(Newtonian(), 64, 64, 2.0, noise=1.0 / n, seed=n)
        vals.append(check_convergence_eq(dn, ref, 1.0, 1.0).b_hat)
    assert vals[0] > vals[1] > vals[2]
    C = max(v * n for v, n in zip(vals, (4, 8, 16)))
    assert all(v <= C / n for v, n in zip(vals, (4, 8, 16)))


def test_coercivity_examples():
    ds = sample_law(Newtonian(), 16, 16, 3.0)
    cert = coercivity_certificate(ds, [2.0])
    assert isinstance(cert, CoercivityCertificate) and cert.c1 == 2.0 and cert.c2 > 0
    lhs = np.sum(ds.eps**2, axis=1) + np.sum(ds.sig**2, axis=1)
    assert np.all(cert.c1 * np.sum(ds.eps * ds.sig, axis=1) + cert.c2 > lhs)
    anti = MaterialDataSet(ds.eps, -ds.sig, ds.exp)
    assert isinstance(coercivity_certificate(anti, np.geomspace(0.1, 100, 20)), NotCoercive)


def test_power_law_graph_coercive_with_c1_three():
    rng = np.random.default_rng(0)
    law = PowerLaw(0.5, 2.0)
    e = rng.standard_normal((100_000, 2)) * 10 ** rng.uniform(-2, 1.5, (100_000, 1))
    s = law.stress(e)
    lhs = np.linalg.norm(e, axis=1) ** 3 + np.linalg.norm(s, axis=1) ** 1.5
    assert np.all(lhs <= 3.0 * np.sum(e * s, axis=1) + 1e-12 * (1 + lhs))
    ds = MaterialDataSet(e[:2000], s[:2000], Exponents(3.0))
    assert isinstance(coercivity_certificate(ds, [3.0]), CoercivityCertificate)
