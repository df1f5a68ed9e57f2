import numpy as np
import pytest
from hypothesis import given, strategies as st

from spinhydro import cluster
from spinhydro.cluster import (ClusterGeometry, ClusterSpec, HyperfineSpec,
                               build_cluster_hamiltonian, deer_decay, effective_coupling,
                               find_resonances, fwhm, hyperfine_leakage, leakage_sweep,
                               odmr_spectrum, p1_subgroup_spectrum, spectral_function)
from spinhydro.constants import DEFAULT_CONSTANTS as C, MHZ
from spinhydro.ensemble import EnsembleSpec

THETA = float(np.arccos(-1 / 3))


def geometry(quantum, classical=(), m=()):
    return ClusterGeometry(np.reshape(np.asarray(quantum, float), (-1, 3)),
                           np.reshape(np.asarray(classical, float), (-1, 3)),
                           np.asarray(m, float))


def test_no_quantum_spins_gives_diagonal():
    H = build_cluster_hamiltonian(ClusterSpec(n_quantum=0, n_classical=50))
    assert H.shape == (2, 2)
    assert H[0, 1] == 0 and H[0, 0] == 0


def test_on_axis_pair_has_no_flip_term():
    H = build_cluster_hamiltonian(ClusterSpec(n_quantum=1), geometry=geometry([[0, 0, 3.0]]))
    assert H.shape == (4, 4)
    np.testing.assert_allclose(H - np.diag(np.diag(H)), 0.0, atol=1e-14)
    # Ising term -J0 B Sz Pz / r^3 with B = 2 on the |-1> states
    np.testing.assert_allclose(np.diag(H), [0, 0, C.J0 / 27, -C.J0 / 27], rtol=1e-12)


def test_in_plane_pair_hand_matrix():
    r = 2.5
    H = build_cluster_hamiltonian(ClusterSpec(n_quantum=1), geometry=geometry([[r, 0, 0]]))
    J = C.J0 / r**3
    want = np.zeros((4, 4))
    # basis |0 up>, |0 down>, |-1 up>, |-1 down>; B = -1, flip = 3/(2 sqrt 2)
    want[2, 2], want[3, 3] = -J / 2, J / 2
    want[0, 3] = want[3, 0] = -J * 3 / (2 * np.sqrt(2))
    np.testing.assert_allclose(H, want, atol=1e-12)


@given(st.integers(0, 1000))
def test_hamiltonian_hermitian_and_trace(seed):
    spec = ClusterSpec(n_quantum=3, n_classical=60, ensemble=EnsembleSpec(seed=seed))
    H = build_cluster_hamiltonian(spec)
    np.testing.assert_allclose(H, H.conj().T, atol=1e-12)
    assert np.sum(np.linalg.eigvalsh(H)) == pytest.approx(np.trace(H).real, abs=1e-9)


def test_cluster_spec_limits():
    with pytest.raises(ValueError):
        ClusterSpec(n_quantum=13)
    with pytest.raises(ValueError):
        ClusterSpec(n_quantum=-1)


def test_isolated_nv_single_line():
    c = spectral_function(np.zeros((2, 2)))
    k = np.argmax(c.value)
    assert abs(c.x[k]) <= c.x[1] - c.x[0]
    assert c.meta["total_weight"] == pytest.approx(2.0)


@pytest.mark.parametrize("nq", [1, 3, 5])
def test_spectral_sum_rule(nq):
    spec = ClusterSpec(n_quantum=nq, n_classical=100)
    Hs = [build_cluster_hamiltonian(spec, k) for k in range(3)]
    c = spectral_function(Hs, edges=np.linspace(-MHZ * 400, MHZ * 400, 4001))
    assert c.meta["total_weight"] == pytest.approx(2 ** (nq + 1), rel=1e-10)
    assert c.value.sum() == pytest.approx(2 ** (nq + 1), rel=1e-6)


def test_odmr_zero_density_three_lines():
    edges = np.linspace(-MHZ * 5, MHZ * 5, 1001)
    c = odmr_spectrum(0.0, 1.75, edges=edges, realizations=5)
    peaks = c.x[c.value > 0]
    assert peaks.size == 3
    np.testing.assert_allclose(peaks, [-MHZ * 2.162, 0, MHZ * 2.162], atol=edges[1] - edges[0])
    np.testing.assert_allclose(c.value[c.value > 0], 1 / 3)


def test_odmr_weights_validated():
    with pytest.raises(ValueError):
        odmr_spectrum(10.0, 1.75, hyperfine_weights=(1, -1, 1))


def test_ising_shift_width_grows_with_density():
    lo = cluster.ising_shifts(30.0, 1.75, realizations=800)
    hi = cluster.ising_shifts(110.0, 1.75, realizations=800)
    # dipolar sums are Cauchy-like, so compare medians of |shift|
    assert np.median(np.abs(hi)) > 2 * np.median(np.abs(lo))


def test_odmr_symmetric():
    edges = np.linspace(-MHZ * 20, MHZ * 20, 201)
    c = odmr_spectrum(110.0, 1.75, edges=edges, realizations=4000, broadening=MHZ * 0.8)
    # the bath signs are random, so the spectrum is symmetric within noise
    assert np.max(np.abs(c.value - c.value[::-1])) < 0.1 * c.value.max()


def test_linewidth_ordering_with_resonant_fraction():
    edges = np.linspace(-MHZ * 20, MHZ * 20, 401)
    b = MHZ * 0.6
    widths = [fwhm(odmr_spectrum(110.0, 1.75, (0, 1, 0), "off", edges, 3000, broadening=b))]
    for nu in (1 / 12, 1 / 4, 1 / 3):
        widths.append(fwhm(odmr_spectrum(110.0, 1.75, (0, 1, 0), nu, edges, 600, broadening=b)))
    assert np.all(np.diff(widths) > 0)


def test_fwhm_of_gaussian():
    x = np.linspace(-10, 10, 2001)
    from spinhydro.curves import Curve
    assert fwhm(Curve(x, np.exp(-x**2 / 2))) == pytest.approx(2 * np.sqrt(2 * np.log(2)), rel=1e-4)


def test_deer_basics():
    t = np.linspace(0, 3, 31)
    c0 = deer_decay(110.0, 0.0, t, realizations=5)
    np.testing.assert_array_equal(c0.value, 1.0)
    assert c0.meta["rate"] == 0.0
    c = deer_decay(110.0, 1 / 3, t, realizations=50)
    assert c.value[0] == 1.0
    assert c.value[1] < 1 and abs(c.value[-1]) < 0.02


def test_deer_rate_linear_in_density():
    t = np.linspace(0, 3, 61)
    rates = [deer_decay(rho, 1 / 3, t, realizations=150).meta["rate"] for rho in (40, 80, 120)]
    slope, icept = np.polyfit([40, 80, 120], rates, 1)
    pred = np.polyval([slope, icept], [40, 80, 120])
    r2 = 1 - np.sum((rates - pred) ** 2) / np.sum((rates - np.mean(rates)) ** 2)
    assert slope > 0 and r2 > 0.98


def test_fit_exponential_rate():
    t = np.linspace(0, 5, 50)
    assert cluster.fit_exponential_rate(t, np.exp(-0.7 * t)) == pytest.approx(0.7, rel=1e-6)


def test_p1_lines_at_511G():
    lines = p1_subgroup_spectrum(511.0)
    f = np.array([x for x, _ in lines])
    w = np.array([x for _, x in lines])
    assert len(lines) == 5
    assert w.sum() == pytest.approx(1.0)
    np.testing.assert_allclose(w, [1 / 12, 1 / 4, 1 / 3, 1 / 4, 1 / 12], rtol=1e-12)
    center = f[2]
    assert center == pytest.approx(MHZ * 2.8 * 511, rel=1e-12)
    assert center / MHZ == pytest.approx(1430.8, abs=0.01)
    np.testing.assert_allclose(f - center, MHZ * np.array([-114, -85, 0, 85, 114]), atol=1e-9)


@given(st.floats(100, 3000))
def test_p1_weights_sum_to_one(B):
    lines = p1_subgroup_spectrum(B)
    assert sum(w for _, w in lines) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        p1_subgroup_spectrum(-B)


def test_leakage_no_drive_no_depolarization():
    spec = HyperfineSpec(rabi=0.0, omega=MHZ * 1400)
    c = hyperfine_leakage(spec, np.linspace(0, 20, 201))
    np.testing.assert_allclose(c.value, 1.0, atol=1e-12)


def test_leakage_unitary():
    spec = HyperfineSpec(omega=511 * C.gamma_e)
    _, states = hyperfine_leakage(spec, np.linspace(0, 50, 501), return_states=True)
    np.testing.assert_allclose(np.linalg.norm(states, axis=1), 1.0, atol=1e-10)


def test_hyperfine_spec_validation():
    with pytest.raises(ValueError):
        HyperfineSpec(theta=0.3)
    with pytest.raises(ValueError):
        HyperfineSpec(B=0)


def test_leakage_resonances_and_coupling():
    spec = HyperfineSpec(B=511.0, theta=THETA, rabi=MHZ * 11.7)
    center = spec.B * C.gamma_e
    om = np.linspace(center - MHZ * 150, center + MHZ * 150, 601)
    sw = leakage_sweep(spec, om, np.linspace(0, 20, 801))
    x, _ = find_resonances(sw, n=2)
    np.testing.assert_allclose(x - center, [0.0, C.A_par_2 / 2], atol=MHZ * 1.5)
    gap, _ = effective_coupling(spec)
    assert gap / MHZ == pytest.approx(0.6, rel=0.2)
    # perturbative estimate Omega Q sin^2(theta) / A_par
    est = spec.rabi * abs(C.Q_quad) * np.sin(THETA) ** 2 / C.A_par_2
    assert gap == pytest.approx(est, rel=0.05)


def test_sweep_marks_self_transition():
    spec = HyperfineSpec()
    own = spec.B * C.gamma_e + C.A_par_2
    sw = leakage_sweep(spec, [own], [0.0, 1.0])
    assert np.isnan(sw.value[0])
