"""Small quantum clusters around one NV: spectra, DEER and P1 hyperfine physics."""
from dataclasses import dataclass, field, replace
from functools import reduce

import numpy as np
from scipy import linalg, optimize

from .constants import DEFAULT_CONSTANTS, MHZ
from .curves import Curve
from .ensemble import EnsembleSpec, place_hardcore, ppm_to_density, stream

# NV two-level subspace (|0>, |-1>) and P1 spin-1/2 operators
SZ_NV = np.diag([0.0, -1.0])
SP_NV = np.array([[0.0, 1.0], [0.0, 0.0]])
PZ = np.diag([0.5, -0.5])
PP = np.array([[0.0, 1.0], [0.0, 0.0]])
I2 = np.eye(2)
NV_HYPERFINE = MHZ * 2.162


@dataclass(frozen=True)
class ClusterSpec:
    """Cluster geometry.

    Parameters
    ----------
    n_quantum : int
        Resonant P1s treated quantum mechanically (the closest ones).
    n_classical : int
        P1s in the bath, all subgroups, placed at the full P1 density.
        Every P1 not in the quantum set acts through its Ising field.
    ensemble : EnsembleSpec
        Supplies ``rho_p1``, ``nu``, ``r_cut`` and ``seed``.
    broadening : float
        Gaussian broadening of spectral lines, rad/us (0: bin width).
    """

    n_quantum: int = 4
    n_classical: int = 400
    ensemble: EnsembleSpec = field(default_factory=EnsembleSpec)
    broadening: float = 0.0

    def __post_init__(self):
        if self.n_quantum < 0 or self.n_quantum > 12:
            raise ValueError("n_quantum must lie in [0, 12]")
        if 2 ** (self.n_quantum + 1) > 8192:
            raise ValueError("Hilbert dimension exceeds 8192")


@dataclass
class ClusterGeometry:
    quantum: np.ndarray      # (nq, 3) positions of quantum P1s
    classical: np.ndarray    # (nc, 3) positions of classical P1s
    m_classical: np.ndarray  # (nc,) +-1/2


def _kron(ops):
    return reduce(np.kron, ops)


def _op(single, site, n_sites):
    ops = [np.eye(2)] * n_sites
    ops[site] = single
    return _kron(ops)


def sample_cluster(spec, realization=0, constants=DEFAULT_CONSTANTS):
    """Bath positions around an NV at the origin and classical spin states."""
    ens = spec.ensemble
    rng = stream(ens.seed, realization)
    n_tot = spec.n_classical + spec.n_quantum
    dens = ppm_to_density(ens.rho_p1, constants)
    radius = (3 * n_tot / (4 * np.pi * dens)) ** (1 / 3)
    pos = place_hardcore(rng, n_tot, radius, ens.r_cut, fixed=np.zeros(3))
    resonant = rng.random(n_tot) < ens.nu
    r = np.linalg.norm(pos, axis=1)
    order = np.argsort(r)
    res_sorted = order[resonant[order]]
    q = res_sorted[: spec.n_quantum]
    if q.size < spec.n_quantum:
        raise ValueError("not enough resonant spins for the quantum set")
    mask = np.ones(n_tot, bool)
    mask[q] = False
    m = rng.choice([-0.5, 0.5], size=int(mask.sum()))
    return ClusterGeometry(pos[q], pos[mask], m)


def _geom(r_vec):
    r = np.linalg.norm(r_vec)
    n = r_vec / r
    return r, n


def build_cluster_hamiltonian(spec, realization=0, constants=DEFAULT_CONSTANTS, geometry=None):
    """Rotating-frame Hamiltonian of the NV plus ``n_quantum`` resonant P1s.

    Site 0 is the NV (basis ``|0>, |-1>``), sites 1.. are P1s (``up, down``).
    Classical bath spins enter as static Ising fields.
    """
    g = sample_cluster(spec, realization, constants) if geometry is None else geometry
    J0 = constants.J0
    nq = g.quantum.shape[0]
    ns = nq + 1
    dim = 2**ns
    H = np.zeros((dim, dim), complex)
    Sz, Sp = _op(SZ_NV, 0, ns), _op(SP_NV, 0, ns)
    Pz = [_op(PZ, k + 1, ns) for k in range(nq)]
    Pp = [_op(PP, k + 1, ns) for k in range(nq)]
    for k in range(nq):
        r, n = _geom(g.quantum[k])
        B = 3 * n[2] ** 2 - 1
        flip = 3 / (2 * np.sqrt(2)) * (n[0] - 1j * n[1]) ** 2
        H += -J0 / r**3 * (B * Sz @ Pz[k] + flip * Sp @ Pp[k] + np.conj(flip) * Sp.T @ Pp[k].T)
    for a in range(nq):
        for b in range(a + 1, nq):
            r, n = _geom(g.quantum[b] - g.quantum[a])
            B = 3 * n[2] ** 2 - 1
            At = (1 - 3 * n[2] ** 2) / 4
            ff = Pp[a].T @ Pp[b] + Pp[a] @ Pp[b].T
            H += -J0 / r**3 * (B * Pz[a] @ Pz[b] + At * ff)
    # Ising fields of the classical bath
    for pos, m in zip(g.classical, g.m_classical):
        r, n = _geom(pos)
        H += -J0 / r**3 * (3 * n[2] ** 2 - 1) * m * Sz
        for k in range(nq):
            rk, nk = _geom(pos - g.quantum[k])
            H += -J0 / rk**3 * (3 * nk[2] ** 2 - 1) * m * Pz[k]
    H = 0.5 * (H + H.conj().T)
    return H.real if np.allclose(H.imag, 0) else H


def _sigma_x_nv(dim):
    ns = int(round(np.log2(dim)))
    return _op(SP_NV + SP_NV.T, 0, ns)


def _broaden(hist, edges, width):
    dw = edges[1] - edges[0]
    sig = (dw if width <= 0 else width) / dw
    half = int(np.ceil(4 * sig))
    x = np.arange(-half, half + 1)
    kern = np.exp(-0.5 * (x / sig) ** 2)
    kern /= kern.sum()
    return np.convolve(hist, kern, mode="same")


def spectral_lines(H):
    """Transition frequencies and weights ``|<i|sigma_x|j>|^2`` of the NV flip."""
    w, V = linalg.eigh(H)
    sx = V.conj().T @ _sigma_x_nv(H.shape[0]) @ V
    weights = np.abs(sx) ** 2
    freqs = w[:, None] - w[None, :]
    return freqs.ravel(), weights.ravel()


def spectral_function(Hs, edges=None, broadening=0.0):
    """Disorder-averaged ``S(omega)`` binned on ``edges`` (rad/us).

    Each Hamiltonian contributes total weight ``tr(sigma_x^2)`` (its
    dimension); the returned histogram is averaged over ``Hs``.
    """
    Hs = [Hs] if isinstance(Hs, np.ndarray) else list(Hs)
    if edges is None:
        edges = np.linspace(-MHZ * 20, MHZ * 20, 801)
    hist = np.zeros(edges.size - 1)
    total = 0.0
    for H in Hs:
        f, w = spectral_lines(H)
        hist += np.histogram(f, edges, weights=w)[0]
        total += w.sum()
    hist /= len(Hs)
    hist = _broaden(hist, edges, broadening)
    centers = 0.5 * (edges[1:] + edges[:-1])
    return Curve(centers, hist, None, {"total_weight": total / len(Hs)})


def fwhm(curve):
    """Full width at half maximum of a single-peaked curve (linear interpolation)."""
    y, x = curve.value, curve.x
    k = int(np.argmax(y))
    half = y[k] / 2
    i = k
    while i > 0 and y[i] > half:
        i -= 1
    j = k
    while j < y.size - 1 and y[j] > half:
        j += 1
    xl = np.interp(half, [y[i], y[i + 1]], [x[i], x[i + 1]]) if y[i] <= half else x[i]
    xr = np.interp(half, [y[j], y[j - 1]], [x[j], x[j - 1]]) if y[j] <= half else x[j]
    return xr - xl


def ising_shifts(rho_p1, r_cut, realizations=2000, n_bath=400, seed=0,
                 constants=DEFAULT_CONSTANTS):
    """NV line shifts from a fully classical bath, one per realization."""
    dens = ppm_to_density(rho_p1, constants)
    out = np.zeros(realizations)
    if dens == 0:
        return out
    radius = (3 * n_bath / (4 * np.pi * dens)) ** (1 / 3)
    for k in range(realizations):
        rng = stream(seed, k)
        pos = place_hardcore(rng, n_bath, radius, r_cut, fixed=np.zeros(3))
        r = np.linalg.norm(pos, axis=1)
        nz2 = (pos[:, 2] / r) ** 2
        m = rng.choice([-0.5, 0.5], size=n_bath)
        # E(|-1>) - E(|0>) under -J0/r^3 (3nz^2-1) Sz m
        out[k] = np.sum(constants.J0 * (3 * nz2 - 1) * m / r**3)
    return out


def odmr_spectrum(rho_p1, r_cut, hyperfine_weights=(1 / 3, 1 / 3, 1 / 3), mode="off",
                  edges=None, realizations=2000, n_bath=400, n_quantum=4, seed=0,
                  broadening=0.0, constants=DEFAULT_CONSTANTS):
    """NV ODMR line: bath-broadened line copied at the three 14N hyperfine shifts.

    Parameters
    ----------
    mode : "off" or float
        ``"off"``: classical Ising shifts only. A number ``nu`` uses the
        quantum cluster with that resonant fraction.
    """
    w = np.asarray(hyperfine_weights, float)
    if np.any(w < 0):
        raise ValueError("hyperfine weights must be nonnegative")
    if edges is None:
        edges = np.linspace(-MHZ * 20, MHZ * 20, 801)
    centers = 0.5 * (edges[1:] + edges[:-1])
    shifts = np.array([-NV_HYPERFINE, 0.0, NV_HYPERFINE])
    total = np.zeros(centers.size)
    if mode == "off" or rho_p1 == 0:
        base = ising_shifts(rho_p1, r_cut, realizations, n_bath, seed, constants)
        for s, wk in zip(shifts, w):
            total += wk * np.histogram(base + s, edges)[0] / realizations
        total = _broaden(total, edges, broadening) if broadening > 0 else total
    else:
        spec = ClusterSpec(n_quantum=n_quantum, n_classical=n_bath,
                           ensemble=EnsembleSpec(rho_p1=rho_p1, nu=float(mode), r_cut=r_cut,
                                                 seed=seed))
        lines = [spectral_lines(build_cluster_hamiltonian(spec, k, constants))
                 for k in range(realizations)]
        dim = 2 ** (n_quantum + 1)
        for s, wk in zip(shifts, w):
            for f, wt in lines:
                total += wk * np.histogram(f + s, edges, weights=wt)[0] / (dim * realizations)
        total = _broaden(total, edges, broadening)
    return Curve(centers, total, None, {"mode": str(mode), "rho_p1_ppm": rho_p1})


def deer_decay(rho_p1, nu, t_grid, realizations=400, r_cut=1.75, radius=30.0, seed=0,
               constants=DEFAULT_CONSTANTS):
    """NV echo coherence when the ``nu`` subgroup is flipped at the echo midpoint.

    Static Ising fields refocus except from flipped spins, each adding a
    phase ``+-J0 (3nz^2-1) t / (2 r^3)``. Averaging over the random signs
    gives ``prod_j cos(phi_j)``. The fitted single-exponential rate is
    stored in ``meta["rate"]``.
    """
    t = np.asarray(t_grid, float)
    dens = nu * ppm_to_density(rho_p1, constants)
    n = int(round(4 / 3 * np.pi * radius**3 * dens))
    coh = np.zeros((realizations, t.size))
    for k in range(realizations):
        if n == 0:
            coh[k] = 1.0
            continue
        rng = stream(seed, k)
        pos = place_hardcore(rng, n, radius, r_cut, fixed=np.zeros(3))
        r = np.linalg.norm(pos, axis=1)
        w = constants.J0 * np.abs(3 * (pos[:, 2] / r) ** 2 - 1) / (2 * r**3)
        coh[k] = np.prod(np.cos(np.outer(t, w)), axis=1)
    mean = coh.mean(axis=0)
    err = coh.std(axis=0, ddof=1) / np.sqrt(realizations) if realizations > 1 else np.zeros(t.size)
    rate = fit_exponential_rate(t, mean)
    return Curve(t, mean, err, {"rate": rate, "nu": nu, "rho_p1_ppm": rho_p1})


def fit_exponential_rate(t, y):
    """Rate of ``exp(-rate t)`` fitted to ``y`` by least squares."""
    t = np.asarray(t, float)
    y = np.asarray(y, float)
    if np.allclose(y, 1.0):
        return 0.0
    guess = -np.polyfit(t, np.log(np.clip(y, 1e-12, None)), 1)[0]
    res = optimize.least_squares(lambda p: np.exp(-p[0] * t) - y, [max(guess, 1e-6)],
                                 bounds=([0.0], [np.inf]))
    return float(res.x[0])


# --- P1 hyperfine structure ------------------------------------------------------------

JT_ANGLES = ((0.0, 0.25), (np.arccos(-1 / 3), 0.75))


def _a_par(theta, constants):
    return constants.A_par_1 if theta == 0 else constants.A_par_2


def _secular_h(B, theta, constants):
    Iz = np.diag([1.0, 0.0, -1.0])
    A = _a_par(theta, constants)
    H = (B * (constants.gamma_e * np.kron(PZ, np.eye(3)) + constants.gamma_n * np.kron(I2, Iz))
         + constants.Q_quad * np.cos(theta) ** 2 * np.kron(I2, Iz @ Iz)
         + A * np.kron(PZ, Iz))
    return H


def p1_subgroup_spectrum(B, constants=DEFAULT_CONSTANTS, tol=1e-6):
    """Electron-spin resonance lines of P1 centres at field ``B`` (gauss).

    Returns a list of ``(frequency, weight)`` sorted by frequency; lines
    from different orientations that coincide are merged.
    """
    if B <= 0:
        raise ValueError("B must be positive")
    lines = []
    for theta, p in JT_ANGLES:
        H = _secular_h(B, theta, constants)
        E = np.diag(H).real  # secular Hamiltonian is diagonal in |mP, mI>
        for k in range(3):
            lines.append((E[k] - E[3 + k], p / 3))
    lines.sort()
    merged = []
    for f, w in lines:
        if merged and abs(f - merged[-1][0]) < tol * max(1.0, abs(f)):
            merged[-1] = (merged[-1][0], merged[-1][1] + w)
        else:
            merged.append((f, w))
    return merged


@dataclass(frozen=True)
class HyperfineSpec:
    """Driven P1 coupled to its 14N nucleus.

    Parameters
    ----------
    B : float
        Field, gauss.
    theta : float
        Angle between field and P1 axis: 0 or arccos(-1/3).
    rabi : float
        Drive amplitude Omega, rad/us.
    omega : float
        Drive frequency, rad/us.
    m_I : int
        Initial nuclear projection.
    """

    B: float = 511.0
    theta: float = float(np.arccos(-1 / 3))
    rabi: float = MHZ * 11.7
    omega: float = 0.0
    m_I: int = 1

    def __post_init__(self):
        if self.B <= 0:
            raise ValueError("B must be positive")
        if not (np.isclose(self.theta, 0) or np.isclose(self.theta, np.arccos(-1 / 3))):
            raise ValueError("theta must be 0 or arccos(-1/3)")


def _spin1():
    Iz = np.diag([1.0, 0.0, -1.0])
    Ix = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]) / np.sqrt(2)
    return Ix, Iz


def leakage_hamiltonian(spec, constants=DEFAULT_CONSTANTS):
    """Six-level rotating-frame Hamiltonian, basis ``|mP> x |mI>``."""
    Ix, Iz = _spin1()
    Px = np.array([[0, 0.5], [0.5, 0]])
    A = _a_par(0.0 if np.isclose(spec.theta, 0) else spec.theta, constants)
    Inn = np.sin(spec.theta) * Ix + np.cos(spec.theta) * Iz
    H = ((spec.B * constants.gamma_e - spec.omega) * np.kron(PZ, np.eye(3))
         + spec.B * constants.gamma_n * np.kron(I2, Iz)
         + A * np.kron(PZ, Iz)
         + constants.Q_quad * np.kron(I2, Inn @ Inn)
         + spec.rabi * np.kron(Px, np.eye(3)))
    return H


def _initial(m_I):
    psi = np.zeros(6, complex)
    psi[{1: 0, 0: 1, -1: 2}[m_I]] = 1.0
    return psi


def hyperfine_leakage(spec, t_grid, constants=DEFAULT_CONSTANTS, return_states=False):
    """Electron polarization ``2<P_z>(t)`` starting from ``|+1/2, m_I>``."""
    H = leakage_hamiltonian(spec, constants)
    w, V = linalg.eigh(H)
    c = V.conj().T @ _initial(spec.m_I)
    t = np.asarray(t_grid, float)
    states = (np.exp(-1j * np.outer(t, w)) * c) @ V.T
    pz = 2 * np.kron(PZ, np.eye(3)).diagonal()
    pol = (np.abs(states) ** 2 @ pz).real
    curve = Curve(t, pol, None, {"omega": spec.omega})
    return (curve, states) if return_states else curve


def leakage_sweep(spec, omegas, t_grid, constants=DEFAULT_CONSTANTS, exclude_self=True,
                  self_width=None):
    """Time-averaged depolarization ``1 - mean_t 2<P_z>`` for each drive frequency.

    The initial state's own electron transition, at
    ``gamma_e B + A_par m_I``, is direct Rabi driving rather than
    leakage; with ``exclude_self`` those frequencies are reported as NaN.
    """
    omegas = np.asarray(omegas, float)
    out = np.empty(omegas.size)
    A = _a_par(0.0 if np.isclose(spec.theta, 0) else spec.theta, constants)
    own = spec.B * constants.gamma_e + A * spec.m_I
    width = 3 * spec.rabi if self_width is None else self_width
    for k, om in enumerate(omegas):
        if exclude_self and abs(om - own) < width:
            out[k] = np.nan
            continue
        c = hyperfine_leakage(replace(spec, omega=om), t_grid, constants)
        out[k] = 1 - c.value.mean()
    return Curve(omegas, out, None, {"self_transition": own})


def find_resonances(sweep, n=2, min_separation=None):
    """Frequencies of the ``n`` largest local maxima of a sweep (NaNs skipped)."""
    y = np.nan_to_num(sweep.value, nan=-np.inf)
    x = sweep.x
    peaks = [k for k in range(1, y.size - 1) if y[k] >= y[k - 1] and y[k] > y[k + 1]]
    peaks.sort(key=lambda k: -y[k])
    chosen = []
    sep = (x[1] - x[0]) * 5 if min_separation is None else min_separation
    for k in peaks:
        if all(abs(x[k] - x[c]) > sep for c in chosen):
            chosen.append(k)
        if len(chosen) == n:
            break
    return x[np.sort(chosen)], y[np.sort(chosen)]


def effective_coupling(spec, constants=DEFAULT_CONSTANTS, window=MHZ * 3.0):
    """Minimum splitting of the ``|+1/2,+1>``/``|-1/2,-1>`` avoided crossing near
    ``omega = gamma_e B`` (the population exchange frequency at resonance)."""
    center = spec.B * constants.gamma_e
    a, b = _initial(1), np.zeros(6)
    b[5] = 1.0

    def gap(om):
        w, V = linalg.eigh(leakage_hamiltonian(replace(spec, omega=om), constants))
        ov = np.abs(V.conj().T @ a) ** 2 + np.abs(V.conj().T @ b) ** 2
        i, j = np.argsort(ov)[-2:]
        return abs(w[i] - w[j])

    grid = np.linspace(center - window, center + window, 601)
    g = np.array([gap(o) for o in grid])
    k = int(np.argmin(g))
    lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, grid.size - 1)]
    res = optimize.minimize_scalar(gap, bounds=(lo, hi), method="bounded",
                                   options={"xatol": 1e-9})
    return float(res.fun), float(res.x)
