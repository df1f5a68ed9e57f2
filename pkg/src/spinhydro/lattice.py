"""Hopping on a periodic cubic lattice, solved exactly in Fourier space.

The survival of a particle started at the origin is
``S(t) = (1/V) sum_k exp(-decay(k) t)`` with
``decay(k) = sum_dr f(|dr|) (1 - cos k.dr)``.
"""
from dataclasses import dataclass

import numpy as np

from . import hydro
from .curves import Curve


@dataclass(frozen=True)
class LatticeSpec:
    """Lattice geometry and hopping law.

    Parameters
    ----------
    L : int
        Sites per edge (even, >= 4).
    a : float
        Lattice constant, nm.
    hopping : str
        ``"nearest"`` or ``"powerlaw"``; the power law is
        ``f(r) = Gamma (a / r)^alpha``.
    Gamma : float
        Nearest-neighbour hop rate, 1/us.
    alpha : float
        Power-law exponent (> 3).
    t_grid : tuple
        Times, us.
    tail : bool
        Add the continuum tail beyond the half box for power-law hops.
    """

    L: int = 32
    a: float = 1.0
    hopping: str = "nearest"
    Gamma: float = 1.0
    alpha: float = 6.0
    t_grid: tuple = tuple(np.geomspace(0.1, 100.0, 61))
    tail: bool = True

    def __post_init__(self):
        if self.L < 4 or self.L % 2:
            raise ValueError("L must be even and >= 4")
        if self.Gamma < 0:
            raise ValueError("Gamma must be nonnegative")
        if self.hopping not in ("nearest", "powerlaw"):
            raise ValueError("hopping must be 'nearest' or 'powerlaw'")
        if self.hopping == "powerlaw" and self.alpha <= 3:
            raise ValueError("alpha must exceed 3")


def _displacements(L):
    d = np.fft.fftfreq(L, 1.0 / L)  # 0, 1, ..., L/2-1, -L/2, ..., -1
    return np.meshgrid(d, d, d, indexing="ij")


def hopping_kernel(spec):
    """Real-space hop rates on the minimum-image cube (FFT ordering)."""
    L = spec.L
    X, Y, Z = _displacements(L)
    r = np.sqrt(X**2 + Y**2 + Z**2)
    h = np.zeros((L, L, L))
    if spec.hopping == "nearest":
        h[r == 1] = spec.Gamma
    else:
        keep = (r > 0) & (r <= L / 2)
        h[keep] = spec.Gamma * r[keep] ** (-spec.alpha)
    return h


def _kmag(L, a):
    k = 2 * np.pi * np.fft.fftfreq(L) / a
    KX, KY, KZ = np.meshgrid(k, k, k, indexing="ij")
    return np.sqrt(KX**2 + KY**2 + KZ**2)


def _tail(spec, kmag):
    """Continuum contribution of hops beyond the half box, per site."""
    R = spec.L / 2 * spec.a
    uniq, inv = np.unique(np.round(kmag, 12), return_inverse=True)
    vals = hydro.longrange_fk_integral(spec.alpha, 3, R, uniq)
    vals = np.atleast_1d(vals)
    return (spec.Gamma * spec.a ** (spec.alpha - 3) * vals)[inv].reshape(kmag.shape)


def build_fk(spec):
    """Decay rate of every Fourier mode, shape ``(L, L, L)`` in FFT order.

    Stored as positive rates; ``decay[0, 0, 0] == 0``.
    """
    h = hopping_kernel(spec)
    decay = h.sum() - np.fft.fftn(h).real
    decay[0, 0, 0] = 0.0
    if spec.hopping == "powerlaw" and spec.tail:
        decay = decay + _tail(spec, _kmag(spec.L, spec.a))
        decay[0, 0, 0] = 0.0
    return np.maximum(decay, 0.0)


def build_fk_direct(spec):
    """Reference ``O(L^6)`` summation of :func:`build_fk` without the tail."""
    L = spec.L
    h = hopping_kernel(spec)
    X, Y, Z = _displacements(L)
    k = 2 * np.pi * np.fft.fftfreq(L)
    out = np.zeros((L, L, L))
    nz = h != 0
    dx, dy, dz, hv = X[nz], Y[nz], Z[nz], h[nz]
    for i, kx in enumerate(k):
        for j, ky in enumerate(k):
            for m, kz in enumerate(k):
                out[i, j, m] = np.sum(hv * (1 - np.cos(kx * dx + ky * dy + kz * dz)))
    return out


def lattice_survival(spec, decay=None):
    """Return-to-origin probability ``S_p(t)`` as a :class:`Curve`."""
    decay = build_fk(spec) if decay is None else decay
    d = decay.ravel()
    t = np.asarray(spec.t_grid, float)
    # group equal rates; the lattice has many degenerate modes
    vals, counts = np.unique(np.round(d, 13), return_counts=True)
    S = np.array([np.sum(counts * np.exp(-vals * tt)) for tt in t]) / d.size
    return Curve(t, S, None, {"L": spec.L, "hopping": spec.hopping})


def _small_k_D(spec, decay, n_fit=6):
    L = spec.L
    m = np.arange(1, min(n_fit, L // 4) + 1)
    k = 2 * np.pi * m / (L * spec.a)
    y = (decay[m, 0, 0] + decay[0, m, 0] + decay[0, 0, m]) / 3
    cols = [k**2]
    if spec.hopping == "powerlaw" and spec.alpha - 3 < 4:
        cols.append(k ** (spec.alpha - 3))
    cols.append(k**4)
    A = np.column_stack(cols)
    coef = np.linalg.lstsq(A, y, rcond=None)[0]
    return coef[0]


def lattice_diffusion_coefficient(spec, sizes=None, return_details=False):
    """Diffusion coefficient from the small-k behaviour of ``decay(k)``.

    Nearest-neighbour hopping needs one size. Power-law hopping fits
    ``D(L)`` for every size and extrapolates linearly in ``1/L``.
    """
    from dataclasses import replace

    sizes = [spec.L] if sizes is None else list(sizes)
    if spec.hopping == "powerlaw" and len(sizes) < 3:
        raise ValueError("power-law hopping needs at least 3 sizes")
    DL = np.array([_small_k_D(replace(spec, L=L), build_fk(replace(spec, L=L)))
                   for L in sizes])
    if len(sizes) == 1:
        D, resid = DL[0], np.zeros(1)
    else:
        x = 1.0 / np.asarray(sizes, float)
        coef = np.polyfit(x, DL, 1)
        D = coef[1]
        resid = DL - np.polyval(coef, x)
    if return_details:
        return D, {"sizes": sizes, "D_L": DL, "residuals": resid}
    return D


def approach_exponent(curve, D, offset=0.0, a=1.0, threshold=0.01, min_decades=0.5,
                      return_window=False):
    """Log-log slope of ``A_p(t) = S_p(t) - offset - (4 pi D t / a^2)^(-3/2)``.

    The window is the widest contiguous stretch (at least ``min_decades``)
    where a straight-line fit in log-log has RMS residual below
    ``threshold``; ties go to the later window.
    """
    t = curve.x
    A = curve.value - offset - (4 * np.pi * D * t / a**2) ** -1.5
    sign = np.sign(np.median(A[A != 0])) if np.any(A != 0) else 1.0
    A = sign * A
    ok = A > 0
    lt, la = np.log10(t), np.log10(np.where(ok, A, 1.0))
    best = None
    n = t.size
    for i in range(n):
        if not ok[i]:
            continue
        for j in range(n - 1, i + 2, -1):
            span = lt[j] - lt[i]
            if span < min_decades or (best is not None and span < best[0]):
                continue
            if not np.all(ok[i:j + 1]):
                continue
            x, y = lt[i:j + 1], la[i:j + 1]
            coef = np.polyfit(x, y, 1)
            rms = np.sqrt(np.mean((y - np.polyval(coef, x)) ** 2))
            if rms < threshold:
                if best is None or span > best[0] or (span == best[0] and i > best[2]):
                    best = (span, coef[0], i, j)
                break
    if best is None:
        raise ValueError("no window with a clean power law")
    if return_window:
        return best[1], (t[best[2]], t[best[3]])
    return best[1]
