from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spinhydro.constants import DEFAULT_CONSTANTS
from spinhydro.ensemble import EnsembleSpec, Species, SpinEnsemble, generate_ensemble
from spinhydro.rates import RateParams, build_rate_matrix, pair_rate, probe_rates

J0 = DEFAULT_CONSTANTS.J0


def make_ensemble(pos, delta=None, species=None):
    pos = np.asarray(pos, float)
    n = len(pos)
    delta = np.zeros(n) if delta is None else np.asarray(delta, float)
    species = np.full(n, Species.P1, np.int8) if species is None else np.asarray(species, np.int8)
    return SpinEnsemble(positions=pos, species=species, subgroup=np.full(n, 1 / 3),
                        delta=delta, box_radius=float(np.abs(pos).max() + 1), density=1.0)


def oracle_rate(ri, rj, di, dj, si, sj, gamma, gamma_nv):
    # independent loop evaluation of the golden-rule rate
    d = np.asarray(rj, float) - np.asarray(ri, float)
    r = np.sqrt(d @ d)
    nz2 = d[2] ** 2 / r**2
    if si == Species.NV and sj == Species.NV:
        return 0.0
    if Species.NV in (si, sj):
        J = J0 * 3 * (1 - nz2) / (2 * np.sqrt(2)) / r**3
        g = gamma_nv
    else:
        J = J0 * (1 - 3 * nz2) / 4 / r**3
        g = gamma
    return J**2 * 2 * g / (g**2 + (di - dj) ** 2)


def test_pair_rate_hand_value():
    J = J0 * 0.25 / 27
    assert J == pytest.approx(3.025, abs=1e-3)
    assert pair_rate(J, 0.0, 0.0, 0.5) == pytest.approx(36.6, abs=0.05)


def test_pair_rate_half_width_and_tail():
    assert pair_rate(2.0, 0.3, 0.3 + 0.7, 0.7) == pytest.approx(pair_rate(2.0, 0, 0, 0.7) / 2, rel=1e-14)
    assert pair_rate(2.0, 0.0, 1e12, 0.5) < 1e-20


@pytest.mark.parametrize("g", [0.0, -1.0])
def test_pair_rate_requires_positive_gamma(g):
    with pytest.raises(ValueError):
        pair_rate(1.0, 0, 0, g)
    with pytest.raises(ValueError):
        RateParams(gamma=g)


@given(st.floats(0.01, 10), st.floats(-50, 50), st.floats(0, 50), st.floats(0.01, 5))
def test_pair_rate_monotone_in_detuning(J, d, extra, g):
    r1 = pair_rate(J, 0.0, d, g)
    r2 = pair_rate(J, 0.0, np.sign(d or 1) * (abs(d) + extra), g)
    assert r2 <= r1 * (1 + 1e-12)
    assert r1 <= 2 * J**2 / g * (1 + 1e-12)


def test_two_p1_single_pair():
    rm = build_rate_matrix(make_ensemble([[0, 0, 0], [3, 0, 0]]), RateParams(0.5))
    dense = rm.dense()
    assert dense[0, 1] == dense[1, 0] == pytest.approx(36.6, abs=0.05)
    assert dense[0, 0] == dense[1, 1] == 0


def test_magic_angle_pair_is_zero():
    nz = 1 / np.sqrt(3)
    rm = build_rate_matrix(make_ensemble([[0, 0, 0], [2 * np.sqrt(1 - nz**2), 0, 2 * nz]]),
                           RateParams(0.5), floor=0.0)
    assert rm.dense()[0, 1] == pytest.approx(0.0, abs=1e-12)


def test_laser_on_lowers_resonant_nv_rate():
    ens = make_ensemble([[0, 0, 0], [2.5, 0, 0]], species=[Species.NV, Species.P1])
    p = RateParams(gamma=0.5, gamma_pump=0.1)
    off = build_rate_matrix(ens, p).dense()[0, 1]
    on = build_rate_matrix(ens, p, laser_on=True).dense()[0, 1]
    assert on < off
    assert on / off == pytest.approx(0.5 / 0.6, rel=1e-12)


def test_nv_nv_zero():
    ens = make_ensemble([[0, 0, 0], [2, 0, 0], [0, 3, 0]],
                        species=[Species.NV, Species.NV, Species.P1])
    d = build_rate_matrix(ens, RateParams()).dense()
    assert d[0, 1] == 0 and d[0, 2] > 0


def test_matches_loop_oracle():
    ens = generate_ensemble(EnsembleSpec(n_spins=40, rho_nv=1.0, seed=7))
    p = RateParams(gamma=0.4, gamma_pump=0.2)
    for laser in (False, True):
        d = build_rate_matrix(ens, p, laser_on=laser, floor=0.0).dense()
        gnv = p.gamma + (p.gamma_pump if laser else 0)
        want = np.zeros_like(d)
        for i in range(ens.n):
            for j in range(ens.n):
                if i != j:
                    want[i, j] = oracle_rate(ens.positions[i], ens.positions[j], ens.delta[i],
                                             ens.delta[j], ens.species[i], ens.species[j],
                                             p.gamma, gnv)
        np.testing.assert_allclose(d, want, rtol=1e-12, atol=1e-300)
        np.testing.assert_allclose(probe_rates(ens, p, 0, laser), want[0], rtol=1e-12)


def test_matrix_invariants():
    ens = generate_ensemble(EnsembleSpec(n_spins=200, seed=2))
    rm = build_rate_matrix(ens, RateParams())
    d = rm.dense()
    np.testing.assert_array_equal(d, d.T)
    np.testing.assert_allclose(rm.row_totals, d.sum(1), rtol=1e-12)
    b = rm.branching
    for i in range(rm.n):
        row = b[rm.rates.indptr[i]:rm.rates.indptr[i + 1]]
        assert np.all(np.diff(row) >= 0)
        assert row[-1] == pytest.approx(1.0, abs=1e-12)
    assert np.all(rm.rates.data >= rm.floor)


def test_truncated_storage_keeps_exact_totals():
    ens = generate_ensemble(EnsembleSpec(n_spins=300, seed=4))
    full = build_rate_matrix(ens, RateParams(), floor=0.0)
    near = build_rate_matrix(ens, RateParams(), floor=0.0, near_radius=8.0)
    assert not near.complete
    np.testing.assert_allclose(near.row_totals, full.row_totals, rtol=1e-12)
    with pytest.raises(ValueError):
        near.dense()


@given(st.floats(0.3, 4.0))
def test_scale_covariance(s):
    ens = generate_ensemble(EnsembleSpec(n_spins=12, seed=1))
    a = build_rate_matrix(ens, RateParams(), floor=0.0).dense()
    scaled = replace(ens, positions=ens.positions * s)
    b = build_rate_matrix(scaled, RateParams(), floor=0.0).dense()
    np.testing.assert_allclose(b, a / s**6, rtol=1e-10)


def test_coo_export(tmp_path):
    from spinhydro.curves import read_csv

    ens = make_ensemble([[0, 0, 0], [3, 0, 0], [0, 0, 4]])
    rm = build_rate_matrix(ens, RateParams())
    rm.to_coo_csv(tmp_path / "r.csv")
    cols, _ = read_csv(tmp_path / "r.csv")
    assert len(cols["i"]) == 3
    assert np.all(cols["i"] < cols["j"])
