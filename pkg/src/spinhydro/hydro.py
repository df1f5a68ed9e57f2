"""Closed-form hydrodynamic models of polarization spreading from a point probe.

Conventions: the free propagator is ``(4 pi D t)^(-3/2) exp(-r^2 / 4 D t)``;
times in us, lengths in nm.
"""
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate, special


@dataclass(frozen=True)
class HydroModel:
    """Parameters of the continuum model.

    Parameters
    ----------
    D : float
        Diffusion coefficient, nm^2/us.
    T1 : float
        Polarization lifetime, us (``inf`` for none).
    Gamma : float
        Polarization injection rate at the probe.
    b : float
        Source width, nm. The closed forms correspond to a Gaussian source
        with per-axis variance ``2 b^2`` under the propagator above.
    tau_p : float
        Injection duration, us.
    rho_nv : float
        Probe density for the uniform background, nm^-3.
    D_dr, T1_dr : float, optional
        Diffusion coefficient and lifetime after ``t = 0`` under drive.
    C, C_lr, C_dyn : float
        Coefficients of ``k^4``, ``k^(alpha-d)`` and the dynamical term
        (``C_dyn = ell^2``) in the dispersion.
    alpha : float, optional
        Power-law exponent of the hopping; ``None`` for short range.
    d : int
        Spatial dimension.
    """

    D: float = 1.0
    T1: float = np.inf
    Gamma: float = 1.0
    b: float = 0.0
    tau_p: float = 0.0
    rho_nv: float = 0.0
    D_dr: float = None
    T1_dr: float = None
    C: float = 0.0
    C_lr: float = 0.0
    C_dyn: float = 0.0
    alpha: float = None
    d: int = 3

    def __post_init__(self):
        if self.D <= 0:
            raise ValueError("D must be positive")
        if not self.T1 > 0:
            raise ValueError("T1 must be positive or inf")
        if self.b < 0 or self.C_dyn < 0:
            raise ValueError("b and C_dyn must be nonnegative")
        if self.d not in (1, 2, 3):
            raise ValueError("d must be 1, 2 or 3")

    @property
    def ell(self):
        return np.sqrt(self.C_dyn)

    @property
    def driven(self):
        return self.D_dr is not None


@dataclass
class RadialProfile:
    """Polarization density ``P(r)`` (nm^-3) at time ``t`` (us)."""

    r: np.ndarray
    P: np.ndarray
    t: float
    sigma: np.ndarray = None
    counts: np.ndarray = None

    def __post_init__(self):
        self.r = np.asarray(self.r, float)
        self.P = np.asarray(self.P, float)

    def norm(self):
        return 4 * np.pi * np.trapezoid(self.P * self.r**2, self.r)


# --- F kernel ---------------------------------------------------------------

_ASYM_X = 60.0


def _F_scaled(x):
    """``exp(x) * F(x)`` evaluated without cancellation."""
    x = np.asarray(x, float)
    out = np.empty_like(x)
    small = x < _ASYM_X
    xs = x[small]
    out[small] = 1 / np.sqrt(np.pi * xs) - special.erfcx(np.sqrt(xs))
    xl = x[~small]
    if xl.size:
        # asymptotic series of erfcx; terms shrink until n ~ x
        term = np.ones_like(xl)
        acc = np.zeros_like(xl)
        for n in range(1, 25):
            term = term * (-(2 * n - 1) / (2 * xl))
            acc -= term
        out[~small] = acc / np.sqrt(np.pi * xl)
    return out


def F_kernel(x):
    """``F(x) = exp(-x) / sqrt(pi x) - erfc(sqrt(x))`` for ``x > 0``."""
    x = np.asarray(x, float)
    if np.any(x <= 0):
        raise ValueError("F_kernel requires x > 0")
    return np.exp(-x) * _F_scaled(x)


# --- survival probabilities ---------------------------------------------------

def _check_t(t):
    t = np.asarray(t, float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    return t


def survival_undriven(m, t):
    """Polarization at the probe after injection for ``tau_p`` ending at ``t=0``."""
    if m.driven:
        raise ValueError("model has drive parameters; use survival_driven")
    t = _check_t(t)
    s1 = t + m.b**2 / m.D
    s2 = s1 + m.tau_p
    if np.isinf(m.T1):
        return m.Gamma / (4 * np.pi**1.5 * m.D**1.5) * (_rsqrt(s1) - _rsqrt(s2))
    pre = m.Gamma / (4 * np.pi * m.D**1.5 * np.sqrt(m.T1))
    return pre * (np.exp(-t / m.T1) * _F_scaled(s1 / m.T1)
                  - np.exp(-(t + m.tau_p) / m.T1) * _F_scaled(s2 / m.T1))


def _rsqrt(s):
    with np.errstate(divide="ignore"):
        return 1 / np.sqrt(s)


def survival_driven(m, t, printed_form=False):
    """Probe polarization when diffusion and lifetime change at ``t = 0``.

    Injection happens with ``(D, T1)``; after ``t = 0`` the system evolves
    with ``(D_dr, T1_dr)``. ``printed_form=True`` multiplies the second
    term by ``exp((T1_dr/T1 - D/D_dr) tau_p / T1_dr)``, an expression that
    disagrees with the underlying convolution and is kept only for
    comparison.
    """
    if not m.driven:
        raise ValueError("survival_driven needs D_dr (and T1_dr)")
    t = _check_t(t)
    T1dr = m.T1 if m.T1_dr is None else m.T1_dr
    s1 = (m.D_dr * t + m.b**2) / m.D
    s2 = s1 + m.tau_p
    decay = np.exp(-t / T1dr) if np.isfinite(T1dr) else np.ones_like(t)
    if np.isinf(m.T1):
        return m.Gamma * decay / (4 * np.pi**1.5 * m.D**1.5) * (_rsqrt(s1) - _rsqrt(s2))
    pre = m.Gamma / (4 * np.pi * m.D**1.5 * np.sqrt(m.T1))
    second = np.exp(-m.tau_p / m.T1) * _F_scaled(s2 / m.T1)
    if printed_form:
        second = second * np.exp((T1dr / m.T1 - m.D / m.D_dr) * m.tau_p / T1dr)
    return pre * decay * (_F_scaled(s1 / m.T1) - second)


def background(m, t):
    """Uniform background from distant probes, ``rho_nv Gamma T1 (e^{-t/T1} - e^{-(t+tau_p)/T1})``."""
    t = _check_t(t)
    if np.isinf(m.T1):
        return m.rho_nv * m.Gamma * m.tau_p * np.ones_like(t)
    return -m.rho_nv * m.Gamma * m.T1 * np.exp(-t / m.T1) * np.expm1(-m.tau_p / m.T1)


# --- dispersion -----------------------------------------------------------------

def _has_lr(m):
    return m.alpha is not None and m.d + 2 < m.alpha < m.d + 4


def dispersion_f(m, k):
    """Decay rate ``f(k) = D k^2 + C_lr k^(alpha-d) + C k^4``."""
    k = np.asarray(k, float)
    if np.any(k < 0):
        raise ValueError("k must be nonnegative")
    if m.alpha is not None and m.alpha <= m.d:
        raise ValueError("alpha <= d is not integrable")
    f = m.D * k**2 + m.C * k**4
    if _has_lr(m):
        f = f + m.C_lr * k ** (m.alpha - m.d)
    return f


def _sphere_area(d):
    return 2 * np.pi ** (d / 2) / special.gamma(d / 2)


def _series_coef(n, d):
    # 1 - <cos(k.r)>_angles = sum_n c_n u^(2n), u = k r
    return (-1) ** (n + 1) * special.gamma(d / 2) / (4.0**n * special.factorial(n) * special.gamma(n + d / 2))


def _angular_avg(u, d):
    if d == 1:
        return np.cos(u)
    if d == 2:
        return special.j0(u)
    return np.sinc(u / np.pi)


def _osc_tail(p, d):
    """``int_1^inf Lambda_d(u) u^p du`` for p < -1."""
    if d == 3:
        return integrate.quad(lambda u: u ** (p - 1), 1, np.inf, weight="sin", wvar=1.0,
                              epsabs=1e-13, limlst=200)[0]
    if d == 1:
        return integrate.quad(lambda u: u**p, 1, np.inf, weight="cos", wvar=1.0,
                              epsabs=1e-13, limlst=200)[0]
    # d == 2: integrate J0 between its zeros, then a bounded tail
    zeros = special.jn_zeros(0, 400)
    pts = np.concatenate([[1.0], zeros[zeros > 1]])
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        total += integrate.quad(lambda u: special.j0(u) * u**p, a, b, epsabs=1e-16)[0]
    return total


def longrange_fk_integral(alpha, d, r0, k, n_terms=30):
    """``int_{|r|>r0} [1 - cos(k.r)] |r|^(-alpha) d^d r`` by quadrature.

    Written as ``S_d k^(alpha-d) int_{k r0}^inf [1 - Lambda_d(u)] u^(d-alpha-1) du``;
    the piece below ``u = 1`` is integrated term by term from the power
    series, the rest by oscillatory (QAWF) quadrature.
    """
    if alpha <= d:
        raise ValueError("alpha <= d: integral diverges")
    if r0 <= 0:
        raise ValueError("r0 must be positive")
    k = np.atleast_1d(np.asarray(k, float))
    p = d - alpha - 1
    # int_1^inf (1 - Lambda) u^p du
    upper = 1 / (alpha - d) - _osc_tail(p, d)
    out = np.zeros_like(k)
    for idx, kk in enumerate(k):
        if kk == 0:
            continue
        u0 = kk * r0
        if u0 >= 1:
            val = u0 ** (d - alpha) / (alpha - d) - _osc_from(u0, p, d)
        else:
            val = upper
            for n in range(1, n_terms + 1):
                q = 2 * n + p + 1
                c = _series_coef(n, d)
                val += c * (-np.log(u0) if q == 0 else (1 - u0**q) / q)
        out[idx] = _sphere_area(d) * kk ** (alpha - d) * val
    return out if out.size > 1 else out[0]


def _osc_from(u0, p, d):
    if d == 3:
        return integrate.quad(lambda u: u ** (p - 1), u0, np.inf, weight="sin", wvar=1.0,
                              epsabs=1e-13, limlst=200)[0]
    if d == 1:
        return integrate.quad(lambda u: u**p, u0, np.inf, weight="cos", wvar=1.0,
                              epsabs=1e-13, limlst=200)[0]
    zeros = special.jn_zeros(0, 400)
    pts = np.concatenate([[u0], zeros[zeros > u0]])
    return sum(integrate.quad(lambda u: special.j0(u) * u**p, a, b, epsabs=1e-16)[0]
               for a, b in zip(pts[:-1], pts[1:]))


def longrange_even_series(alpha, d, r0, k, order=4):
    """Analytic (convergent) even-power terms of :func:`longrange_fk_integral`.

    Includes ``k^(2n)`` for ``2n <= order`` and ``2n < alpha - d``.
    """
    k = np.asarray(k, float)
    out = np.zeros_like(k)
    n = 1
    while 2 * n <= order and 2 * n < alpha - d:
        out = out + _sphere_area(d) * _series_coef(n, d) * k ** (2 * n) * r0 ** (2 * n + d - alpha) / (alpha - d - 2 * n)
        n += 1
    return out


def survival_approach(m, t):
    """Late-time survival: Gaussian leading term plus the subleading correction.

    With ``f(k)`` a decay rate, a positive ``C_lr`` (``alpha`` between
    ``d+2`` and ``d+4``) lowers the survival by ``C_lr / (2 pi^2 D^3 t^2)``
    and a positive ``C`` by ``15 C / (32 pi^{3/2} D^{7/2} t^{5/2})``.
    """
    t = np.asarray(t, float)
    lead = (4 * np.pi * m.D * t) ** -1.5
    corr = np.zeros_like(t)
    if _has_lr(m) and m.C_lr:
        corr -= m.C_lr / (2 * np.pi**2 * m.D**3 * t**2)
    if m.C and (m.alpha is None or m.alpha >= m.d + 4):
        corr -= 15 * m.C / (32 * np.pi**1.5 * m.D**3.5 * t**2.5)
    return lead + corr


# --- dynamical correction ----------------------------------------------------------

def dyncorr_propagator(m, k, t):
    """``G(k, t) = exp(-D k^2 t / (1 + l^2 k^2)) / (1 + l^2 k^2)``."""
    k = np.asarray(k, float)
    y = 1 + m.C_dyn * k**2
    return np.exp(-m.D * k**2 * t / y) / y


def radial_inverse_transform(G, r_grid, epsabs=1e-10, limit=200):
    """Isotropic 3-D inverse Fourier transform of ``G(k)``.

    ``P(r) = 1/(2 pi^2 r) int_0^inf k sin(k r) G(k) dk`` by QUADPACK's
    Fourier-integral routine (QAWF). ``r = 0`` uses the moment integral.
    """
    r_grid = np.atleast_1d(np.asarray(r_grid, float))
    out = np.empty_like(r_grid)
    for i, r in enumerate(r_grid):
        if r == 0:
            val, err = integrate.quad(lambda k: k * k * G(k), 0, np.inf, epsabs=epsabs,
                                      limit=limit)
            out[i] = val / (2 * np.pi**2)
        else:
            val, err = integrate.quad(lambda k: k * G(k), 0, np.inf, weight="sin", wvar=r,
                                      epsabs=epsabs, limlst=200)
            if not np.isfinite(val):
                raise ArithmeticError(f"radial transform did not converge at r={r}")
            out[i] = val / (2 * np.pi**2 * r)
    return out


def yukawa(r, ell):
    r = np.asarray(r, float)
    return np.exp(-r / ell) / (4 * np.pi * ell**2 * r)


def gaussian_profile(r, D, t):
    return (4 * np.pi * D * t) ** -1.5 * np.exp(-np.asarray(r, float) ** 2 / (4 * D * t))


def _log_kv_debye(nu, x):
    """``log K_nu(x)`` from the uniform large-order (Debye) expansion."""
    z = x / nu
    sq = np.sqrt(1 + z**2)
    p = 1 / sq
    eta = sq + np.log(z / (1 + sq))
    u1 = (3 * p - 5 * p**3) / 24
    u2 = (81 * p**2 - 462 * p**4 + 385 * p**6) / 1152
    u3 = (30375 * p**3 - 369603 * p**5 + 765765 * p**7 - 425425 * p**9) / 414720
    series = 1 - u1 / nu + u2 / nu**2 - u3 / nu**3
    return 0.5 * np.log(np.pi / (2 * nu)) - nu * eta - 0.5 * np.log(sq) + np.log(series)


def _log_matern(x, s):
    """``log`` of the 3-D inverse transform of ``(1 + k^2)^-s`` at radius ``x``.

    Equals ``2^(1-s) x^nu K_nu(x) / ((2 pi)^(3/2) Gamma(s))`` with
    ``nu = s - 3/2``; the Debye expansion takes over where ``kve``
    overflows (only at large order).
    """
    nu = np.abs(s - 1.5)
    x, nu = np.broadcast_arrays(x, nu)
    with np.errstate(over="ignore", divide="ignore"):
        logk = np.log(special.kve(nu, x)) - x
    big = ~np.isfinite(logk)
    if np.any(big):
        logk[big] = _log_kv_debye(nu[big], x[big])
    return ((1 - s) * np.log(2) + (s - 1.5) * np.log(x) + logk
            - 1.5 * np.log(2 * np.pi) - special.gammaln(s))


def _dyncorr_series(r, l2, a, tol=1e-16):
    """Poisson mixture of Matern profiles.

    ``exp(-a + a / y) / y = sum_n e^-a a^n / n! * y^-(n+1)`` with
    ``y = 1 + l^2 k^2``, each term transformed in closed form.
    """
    ell = np.sqrt(l2)
    # Poisson weights well beyond the tail are dropped
    n_hi = int(np.ceil(a + 12 * np.sqrt(a) + 30))
    n_lo = max(0, int(np.floor(a - 12 * np.sqrt(a) - 30)))
    n = np.arange(n_lo, n_hi + 1)
    logw = n * np.log(a) - a - special.gammaln(n + 1) if a > 0 else np.where(n == 0, 0.0, -np.inf)
    keep = logw > np.log(tol) + logw.max()
    n, logw = n[keep], logw[keep]
    x = r[:, None] / ell
    terms = logw[None, :] + _log_matern(x, (n + 1.0)[None, :])
    return np.exp(special.logsumexp(terms, axis=1)) / ell**3


def dyncorr_profile(m, r, t, method="series", epsabs=1e-12):
    """Real-space dynamical-correction profile at time ``t``.

    ``method="series"`` sums the closed-form Poisson-Matern expansion of
    ``G(k, t)``; ``method="quad"`` transforms the Yukawa part analytically
    and the ``k^-4`` remainder by QAWF (slow, kept as a cross-check).
    ``r`` must be positive.
    """
    r = np.atleast_1d(np.asarray(r, float))
    if np.any(r <= 0):
        raise ValueError("r must be positive")
    if m.C_dyn == 0:
        if t == 0:
            raise ValueError("l = 0 and t = 0 is a delta function")
        return gaussian_profile(r, m.D, t)
    l2 = m.C_dyn
    if t == 0:
        return yukawa(r, np.sqrt(l2))
    a = m.D * t / l2
    if method == "series":
        return _dyncorr_series(r, l2, a)
    if method != "quad":
        raise ValueError(f"unknown method {method!r}")
    if a > 600:
        # Yukawa weight exp(-a) is negligible; transform G directly
        return radial_inverse_transform(lambda k: dyncorr_propagator(m, k, t), r,
                                        epsabs=epsabs)
    w = np.exp(-a)

    def rem(k):
        # exp(-D k^2 t / y) - exp(-a) = exp(-a) * expm1(a / y)
        y = 1 + l2 * k**2
        return w * np.expm1(a / y) / y

    return w * yukawa(r, np.sqrt(l2)) + radial_inverse_transform(rem, r, epsabs=epsabs)


def profile_radial_moment(profile, n):
    """``4 pi int P r^(2+n) dr`` on the profile grid (trapezoid rule)."""
    return 4 * np.pi * np.trapezoid(profile.P * profile.r ** (2 + n), profile.r)


def with_params(m, **kw):
    return replace(m, **kw)
