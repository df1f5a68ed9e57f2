from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from spinhydro import rateq
from spinhydro.constants import DEFAULT_CONSTANTS
from spinhydro.curves import Curve
from spinhydro.ensemble import EnsembleSpec, Species, SpinEnsemble, generate_ensemble
from spinhydro.rateq import (LevelScheme, NVKinetics, PopulationState, ProtocolSpec,
                             decay_time, evolve_populations, linear_p1_solver,
                             read_rate_table, simulate_protocol)
from spinhydro.rates import RateParams, build_rate_matrix


def p1_pair(d=3.0):
    pos = np.array([[0, 0, 0], [d, 0, 0]], float)
    ens = SpinEnsemble(positions=pos, species=np.full(2, Species.P1, np.int8),
                       subgroup=np.full(2, 1 / 3), delta=np.zeros(2), box_radius=5.0,
                       density=1.0)
    return build_rate_matrix(ens, RateParams(0.5), floor=0.0)


def state_from_polarization(p, n_extra=0):
    p = np.asarray(p, float)
    return PopulationState(np.column_stack([(1 + p) / 2, (1 - p) / 2]), np.zeros(n_extra))


def test_two_spin_relaxation():
    rm = p1_pair()
    G = rm.dense()[0, 1]
    t = np.array([0.001, 0.01, 0.03])
    out = evolve_populations(rm, state_from_polarization([1.0, 0.0]), 0.0, t[-1], t_eval=t)
    for s, tt in zip(out, t):
        diff = s.polarization[0] - s.polarization[1]
        assert diff == pytest.approx(np.exp(-2 * G * tt), rel=1e-6)
        assert s.polarization.sum() == pytest.approx(1.0, abs=1e-8)


def test_two_spin_linear_solver():
    rm = p1_pair()
    G = rm.dense()[0, 1]
    P = linear_p1_solver(rm, [1.0, 0.0])
    for t in (0.0, 0.01, 0.1):
        assert P(t)[0] - P(t)[1] == pytest.approx(np.exp(-2 * G * t), rel=1e-10)


def test_uniform_state_is_fixed_point():
    ens = generate_ensemble(EnsembleSpec(n_spins=20, rho_nv=1.0, seed=1))
    rm = build_rate_matrix(ens, RateParams(), floor=0.0)
    st0 = PopulationState.unpolarized(ens.n)
    rhs, _ = rateq._system(rm.dense(), NVKinetics(), False, 0, ens.n)
    np.testing.assert_allclose(rhs(0.0, st0.vector()), 0.0, atol=1e-14)


def test_conservation_laser_off():
    ens = generate_ensemble(EnsembleSpec(n_spins=25, rho_nv=1.0, seed=2))
    rm = build_rate_matrix(ens, RateParams(), floor=0.0)
    p0 = np.random.default_rng(0).uniform(-1, 1, ens.n)
    out = evolve_populations(rm, state_from_polarization(p0), 0.0, 50.0, t_eval=[1.0, 10.0, 50.0])
    for s in out:
        assert s.polarization.sum() == pytest.approx(p0.sum(), abs=1e-6)
        np.testing.assert_allclose(s.pops.sum(axis=1), 1.0, atol=1e-8)
        assert s.pops.min() >= -1e-8 and s.pops.max() <= 1 + 1e-8


def test_matches_linear_solver_for_p1_only():
    # for two-level spins the bilinear flow is exactly linear in polarization
    ens = generate_ensemble(EnsembleSpec(n_spins=12, seed=3))
    rm = build_rate_matrix(ens, RateParams(), floor=0.0)
    eps = 1e-3
    p0 = eps * np.random.default_rng(1).uniform(-1, 1, ens.n)
    t = np.array([0.5, 5.0, 50.0])
    out = evolve_populations(rm, state_from_polarization(p0), 0.0, 50.0, t_eval=t,
                             rtol=1e-10, atol=1e-13)
    P = linear_p1_solver(rm, p0)(t)
    for k, s in enumerate(out):
        np.testing.assert_allclose(s.polarization, P[k], atol=eps**2)


@given(st.integers(0, 10_000))
def test_variance_nonincreasing(seed):
    spec = EnsembleSpec(n_spins=8, field_width_W=0.0, seed=seed)
    ens = generate_ensemble(spec)
    rm = build_rate_matrix(ens, RateParams(), floor=0.0)
    p0 = np.random.default_rng(seed).uniform(-1, 1, ens.n)
    P = linear_p1_solver(rm, p0)(np.geomspace(1e-3, 1e3, 40))
    v = P.var(axis=1)
    assert np.all(np.diff(v) <= 1e-12)


def test_linear_solver_spectrum():
    ens = generate_ensemble(EnsembleSpec(n_spins=30, seed=5))
    rm = build_rate_matrix(ens, RateParams(), floor=0.0)
    P = linear_p1_solver(rm, np.ones(ens.n))
    w, V = P.eigenvalues, P.eigenvectors
    k = np.argmax(w)
    assert w[k] == pytest.approx(0.0, abs=1e-10 * np.abs(w).max())
    np.testing.assert_allclose(np.abs(V[:, k]), 1 / np.sqrt(ens.n), rtol=1e-8)
    assert np.all(w <= 1e-10 * np.abs(w).max())
    with pytest.raises(ValueError, match="random walk"):
        linear_p1_solver(rm, np.ones(ens.n), max_n=10)


def test_repump_rate():
    k = NVKinetics(pump_rate=0.1, gamma_dec=1 / 0.012)
    assert k.repump_rate() == pytest.approx(0.1 * 83.333 / 83.433, rel=1e-4)
    assert NVKinetics(pump_rate=0.1, gamma_dec=np.inf).repump_rate() == pytest.approx(0.1)
    M = k.generator(True)
    np.testing.assert_allclose(M.sum(axis=0), 0.0, atol=1e-15)
    np.testing.assert_array_equal(k.generator(False), 0.0)


def test_seven_level_generator_conserves():
    k = NVKinetics(scheme=LevelScheme.SEVEN_LEVEL, pump_rate=0.3)
    for laser in (False, True):
        M = k.generator(laser)
        assert M.shape == (7, 7)
        np.testing.assert_allclose(M.sum(axis=0), 0.0, atol=1e-12)
        off = M - np.diag(np.diag(M))
        assert off.min() >= 0


def test_seven_level_pumping_polarizes():
    pos = np.array([[0, 0, 0], [3.0, 0, 0]])
    ens = SpinEnsemble(positions=pos, species=np.array([Species.NV, Species.P1], np.int8),
                       subgroup=np.full(2, 1 / 3), delta=np.zeros(2), box_radius=5.0,
                       density=1.0)
    kin = NVKinetics(scheme=LevelScheme.SEVEN_LEVEL, pump_rate=1.0)
    rm = build_rate_matrix(ens, RateParams(), laser_on=True, floor=0.0)
    st0 = PopulationState.unpolarized(2, kin.n_extra, 0)
    assert st0.pops[0].sum() + st0.extra.sum() == pytest.approx(1.0)
    s = evolve_populations(rm, st0, 0.0, 20.0, laser_on=True, kinetics=kin)
    assert s.pops[0].sum() + s.extra.sum() == pytest.approx(1.0, abs=1e-7)
    assert s.polarization[0] > 0.3
    assert s.polarization[1] > 0.05


def test_rate_table_validation(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,b,c\n")
    with pytest.raises(ValueError, match="header"):
        read_rate_table(bad)
    bad.write_text("from_level,to_level,rate_per_us\ne0,zz,1\n")
    with pytest.raises(ValueError, match=":2:"):
        read_rate_table(bad)
    bad.write_text("from_level,to_level,rate_per_us\ne0,g0,-1\n")
    with pytest.raises(ValueError, match="negative"):
        read_rate_table(bad)
    assert len(read_rate_table(rateq.SAMPLE_RATE_TABLE)) > 0


def test_evolve_argument_checks():
    rm = p1_pair()
    with pytest.raises(ValueError):
        evolve_populations(rm, PopulationState.unpolarized(2), 1.0, 1.0)
    with pytest.raises(ValueError):
        evolve_populations(rm, PopulationState.unpolarized(3), 0.0, 1.0)


def test_protocol_without_couplings_is_flat():
    c0 = replace(DEFAULT_CONSTANTS, J0=0.0)
    proto = ProtocolSpec(tau_p=100.0, pump_rate=0.1, t_grid=(0.0, 1.0, 10.0, 100.0),
                         n_realizations=2)
    c = simulate_protocol(EnsembleSpec(n_spins=30, rho_nv=1.0), RateParams(), proto, c0)
    np.testing.assert_allclose(c.value, c.value[0], atol=1e-8)
    assert c.value[0] == pytest.approx(1 - np.exp(-100 * NVKinetics().repump_rate()), rel=1e-6)


def test_flip_changes_sign():
    proto = ProtocolSpec(tau_p=100.0, t_grid=tuple(np.geomspace(0.01, 100, 30)),
                         flip_p1=True, n_realizations=2)
    c = simulate_protocol(EnsembleSpec(n_spins=100, rho_nv=1.0, seed=1), RateParams(), proto)
    assert c.value[0] > 0
    assert c.value.min() < 0


def test_shelving_decouples_nv():
    spec = EnsembleSpec(n_spins=60, rho_nv=1.0, seed=2)
    ens = generate_ensemble(spec)
    a = rateq.protocol_run(ens, RateParams(), ProtocolSpec(tau_p=20.0, tau_w=50.0,
                                                           t_grid=(0.0, 1.0)))[1]
    b = rateq.protocol_run(ens, RateParams(), ProtocolSpec(tau_p=20.0, t_grid=(0.0, 1.0)))[1]
    # NV levels untouched during the wait, P1s keep spreading
    np.testing.assert_allclose(a.pops[0], b.pops[0], atol=1e-8)
    assert not np.allclose(a.pops[1:], b.pops[1:], atol=1e-6)


def test_protocol_needs_nv():
    ens = generate_ensemble(EnsembleSpec(n_spins=10))
    with pytest.raises(ValueError, match="NV"):
        rateq.protocol_run(ens, RateParams(), ProtocolSpec())


def test_protocol_validation():
    with pytest.raises(ValueError):
        ProtocolSpec(tau_p=-1)
    with pytest.raises(ValueError):
        ProtocolSpec(t_grid=(1.0, 1.0))


def test_decay_time_exponential():
    t = np.concatenate([[0.0], np.geomspace(0.1, 1000, 200)])
    c = Curve(t, np.exp(-t / 37.0))
    assert decay_time(c) == pytest.approx(37.0, rel=2e-3)
    assert decay_time(Curve(t, np.ones_like(t))) == np.inf


def test_drive_narrows_fields():
    proto = ProtocolSpec(tau_p=5.0, t_grid=(0.0, 1.0), n_realizations=1,
                         drive=rateq.DriveSpec(width=0.0))
    c = simulate_protocol(EnsembleSpec(n_spins=20, rho_nv=1.0), RateParams(), proto)
    assert np.all(np.isfinite(c.value))
