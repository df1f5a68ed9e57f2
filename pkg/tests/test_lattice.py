from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import special

from spinhydro import lattice
from spinhydro.curves import Curve
from spinhydro.lattice import (LatticeSpec, approach_exponent, build_fk, build_fk_direct,
                               lattice_diffusion_coefficient, lattice_survival)


def test_nearest_decay_closed_form():
    spec = LatticeSpec(L=8, Gamma=0.7, a=1.0)
    k = 2 * np.pi * np.fft.fftfreq(8)
    KX, KY, KZ = np.meshgrid(k, k, k, indexing="ij")
    want = 2 * 0.7 * (3 - np.cos(KX) - np.cos(KY) - np.cos(KZ))
    np.testing.assert_allclose(build_fk(spec), want, atol=1e-12)
    assert build_fk(spec)[0, 0, 0] == 0.0


@pytest.mark.parametrize("hopping", ["nearest", "powerlaw"])
def test_fft_matches_direct_sum(hopping):
    spec = LatticeSpec(L=8, hopping=hopping, tail=False)
    np.testing.assert_allclose(build_fk(spec), build_fk_direct(spec), atol=1e-12)


@pytest.mark.parametrize("hopping", ["nearest", "powerlaw"])
def test_decay_positive_off_zero(hopping):
    d = build_fk(LatticeSpec(L=16, hopping=hopping))
    assert d[0, 0, 0] == 0
    assert np.all(d.ravel()[1:] > 0)


def test_nearest_diffusion_coefficient():
    spec = LatticeSpec(L=64, Gamma=1.3, a=0.5)
    assert lattice_diffusion_coefficient(spec) == pytest.approx(1.3 * 0.25, rel=1e-2)


def test_survival_limits():
    spec = LatticeSpec(L=16, t_grid=(0.0, 1.0, 10.0))
    c = lattice_survival(spec)
    assert c.value[0] == pytest.approx(1.0, rel=1e-13)
    c = lattice_survival(replace(spec, Gamma=0.0))
    np.testing.assert_allclose(c.value, 1.0, rtol=1e-13)


def test_nearest_survival_is_bessel_product():
    # return probability of the infinite cubic lattice: (e^{-2t} I0(2t))^3
    t = np.geomspace(0.1, 30, 20)
    c = lattice_survival(LatticeSpec(L=64, t_grid=tuple(t)))
    np.testing.assert_allclose(c.value, special.ive(0, 2 * t) ** 3, rtol=1e-6)


def test_nearest_approaches_continuum():
    t = np.array([40.0, 80.0])
    c = lattice_survival(LatticeSpec(L=64, t_grid=tuple(t)))
    ratio = c.value * (4 * np.pi * t) ** 1.5
    assert np.all(np.abs(ratio - 1) < 0.01)


@pytest.mark.parametrize("hopping", ["nearest", "powerlaw"])
def test_survival_monotone_and_floor(hopping):
    spec = LatticeSpec(L=8, hopping=hopping, t_grid=tuple(np.geomspace(0.01, 1e4, 80)))
    v = lattice_survival(spec).value
    assert np.all(np.diff(v) <= 1e-15)
    assert np.all(v >= 1 / 8**3 - 1e-15)
    assert v[-1] == pytest.approx(1 / 8**3, rel=1e-6)


def test_sizes_agree_before_floor():
    t = tuple(np.geomspace(0.1, 4.0, 20))
    a = lattice_survival(LatticeSpec(L=16, t_grid=t)).value
    b = lattice_survival(LatticeSpec(L=32, t_grid=t)).value
    np.testing.assert_allclose(a, b, atol=1e-6)


def test_powerlaw_diffusion_extrapolation():
    spec = LatticeSpec(hopping="powerlaw")
    D, info = lattice_diffusion_coefficient(spec, [16, 32, 48, 64], return_details=True)
    DL = info["D_L"]
    assert np.all(np.diff(DL) > 0) or np.all(np.diff(DL) < 0)
    assert np.max(np.abs(info["residuals"])) < 1e-2 * D
    # analytic value: D = (1/6) sum_r r^2 f(r) over the infinite lattice
    with pytest.raises(ValueError):
        lattice_diffusion_coefficient(spec, [16, 32])


def test_powerlaw_diffusion_matches_lattice_sum():
    # D = (1/6) sum_{r != 0} r^2 r^-6 over Z^3, summed directly with a continuum tail
    R = 40
    d = np.arange(-R, R + 1)
    X, Y, Z = np.meshgrid(d, d, d, indexing="ij")
    r2 = (X**2 + Y**2 + Z**2).astype(float)
    m = (r2 > 0) & (r2 <= R**2)
    want = (np.sum(r2[m] ** -2) + 4 * np.pi / R) / 6
    got = lattice_diffusion_coefficient(LatticeSpec(hopping="powerlaw"), [16, 32, 48, 64])
    assert got == pytest.approx(want, rel=1e-2)


def test_time_rescaling_collapse():
    # on the a^2/D clock both hopping laws approach the same Gaussian survival
    tau = np.array([10.0, 20.0, 40.0, 80.0])
    out = []
    for hop in ("nearest", "powerlaw"):
        spec = LatticeSpec(L=64, hopping=hop)
        D = lattice_diffusion_coefficient(spec, [16, 32, 48, 64] if hop == "powerlaw" else None)
        s = lattice_survival(replace(spec, t_grid=tuple(tau / D))).value
        out.append(s * (4 * np.pi * tau) ** 1.5)
    gap = np.abs(out[0] - out[1])
    assert np.all(np.diff(gap) < 0)
    assert gap[-1] < 0.1


def test_approach_exponent_synthetic():
    t = np.geomspace(1, 100, 40)
    D = 0.8
    c = Curve(t, (4 * np.pi * D * t) ** -1.5 + 0.3 * t**-2.0)
    assert approach_exponent(c, D) == pytest.approx(-2.0, abs=1e-10)
    c = Curve(t, (4 * np.pi * D * t) ** -1.5 - 0.3 * t**-2.5)
    assert approach_exponent(c, D) == pytest.approx(-2.5, abs=1e-10)


def test_approach_exponent_no_window():
    t = np.geomspace(1, 2, 5)
    with pytest.raises(ValueError):
        approach_exponent(Curve(t, (4 * np.pi * t) ** -1.5), 1.0)


@pytest.mark.parametrize("kw", [{"L": 5}, {"L": 2}, {"Gamma": -1}, {"hopping": "x"},
                                {"hopping": "powerlaw", "alpha": 3}])
def test_spec_validation(kw):
    with pytest.raises(ValueError):
        LatticeSpec(**kw)


@given(st.sampled_from([4, 6, 8]), st.floats(0.1, 3.0))
def test_decay_scales_with_gamma(L, g):
    a = build_fk(LatticeSpec(L=L, Gamma=1.0))
    b = build_fk(LatticeSpec(L=L, Gamma=g))
    np.testing.assert_allclose(b, g * a, rtol=1e-12, atol=1e-14)
