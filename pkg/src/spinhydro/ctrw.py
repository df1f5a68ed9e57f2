"""Continuous-time random walk of a polarization quantum over the rate network.

A walker starts on the probe spin at the origin, waits an exponential
holding time with mean ``1/Gamma_tot`` and hops to ``j`` with probability
``Gamma_ij / Gamma_tot``. Observables are sampled on a fixed time grid.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernels
from .constants import DEFAULT_CONSTANTS
from .curves import Curve
from .ensemble import generate_ensemble, stream
from .rates import build_rate_matrix


def log_time_grid(t_max=1000.0, n=200, t_min=1e-2):
    """``0`` followed by ``n`` log-spaced times in ``[t_min, t_max]``."""
    return np.concatenate([[0.0], np.geomspace(t_min, t_max, n)])


@dataclass(frozen=True)
class WalkConfig:
    """Random-walk settings.

    ``near_radius`` (nm) sets how many neighbours are stored explicitly per
    spin; pairs beyond it still contribute exactly, resolved on the fly.
    ``None`` picks a radius holding about 200 neighbours on average.
    """

    t_max: float = 1000.0
    n_grid: int = 200
    n_walks: int = 500
    n_realizations: int = 20
    sizes: tuple = (1000, 3375, 8000, 15625, 27000)
    fit_windows: tuple = (30.0, 60.0, 100.0, 150.0, 200.0, 300.0)
    floor: float = 1e-10
    near_radius: float = None
    threads: int = 1

    def __post_init__(self):
        if self.t_max <= 0:
            raise ValueError("t_max must be positive")
        if list(self.sizes) != sorted(set(self.sizes)):
            raise ValueError("sizes must be strictly increasing")

    @property
    def time_grid(self):
        return log_time_grid(self.t_max, self.n_grid)


@dataclass
class MsdCurve:
    t: np.ndarray
    r2_mean: np.ndarray
    r2_stderr: np.ndarray
    n_samples: np.ndarray
    size_label: float

    def to_curve(self):
        return Curve(self.t, self.r2_mean, self.r2_stderr, {"N": self.size_label})


@dataclass
class WalkSample:
    """Raw output of many walks on several realizations of one size.

    ``dist[w, k]`` is the walker's distance from the origin at ``t[k]``;
    ``realization[w]`` labels the disorder realization of walk ``w``.
    ``spin_r`` lists, per realization, the radial distance of every
    resonant spin (used to normalize per-spin profiles).
    """

    t: np.ndarray
    dist: np.ndarray
    realization: np.ndarray
    spin_r: list
    box_radius: float
    density: float
    n_spins: int
    hops: np.ndarray = None
    meta: dict = field(default_factory=dict)


def _near_radius(cfg, density):
    if cfg.near_radius is not None:
        return cfg.near_radius
    return (3 * 200 / (4 * np.pi * density)) ** (1 / 3)


def run_walk(rm, ens, start, cfg, rng, tgrid=None):
    """One trajectory; returns ``(t, r2)`` on the configuration time grid.

    Parameters
    ----------
    rm : RateMatrix
    ens : SpinEnsemble
    start : int
        Starting spin.
    cfg : WalkConfig
    rng : numpy.random.Generator
    """
    sites = _walk_sites(rm, start, cfg.time_grid if tgrid is None else tgrid, rng)[0]
    r2 = np.sum((ens.positions[sites] - ens.positions[start]) ** 2, axis=1)
    return (cfg.time_grid if tgrid is None else tgrid), r2


def _walk_sites(rm, start, tgrid, rng):
    out = np.empty(tgrid.size, np.int64)
    near_r2 = np.inf if np.isinf(rm.near_radius) else rm.near_radius**2
    hops = _kernels.walk_sites(
        rm.rates.indptr, rm.rates.indices, rm.cumulative, rm.far_totals,
        rm.positions, rm.delta, rm.species, rm.J0, rm.gamma_pp, rm.gamma_nv,
        rm.floor, near_r2, start, tgrid, rng, out)
    return out, hops


def walk_occupations(rm, start, tgrid, n_walks, seed, key=()):
    """Sites occupied by ``n_walks`` walkers at each grid time.

    Walk ``w`` draws from the stream ``(seed, *key, w)``.
    """
    sites = np.empty((n_walks, tgrid.size), np.int64)
    hops = np.empty(n_walks, np.int64)
    for w in range(n_walks):
        sites[w], hops[w] = _walk_sites(rm, start, tgrid, stream(seed, *key, w))
    return sites, hops


def simulate_walks(spec, params, cfg, n_spins=None, constants=DEFAULT_CONSTANTS):
    """Run ``cfg.n_walks`` walks on each of ``cfg.n_realizations`` ensembles.

    All walks start on the central P1 at the origin (``spec.rho_nv`` is
    ignored). Realization ``r`` of size ``N`` uses ensemble stream
    ``(seed, N, r)`` and walk streams ``(seed, N, r, w)``.
    """
    spec = replace(spec, rho_nv=0.0)
    n = spec.n_spins if n_spins is None else int(n_spins)
    tgrid = cfg.time_grid
    density = spec.density(constants)
    near = _near_radius(cfg, density)

    def one(r):
        ens = generate_ensemble(spec, constants, realization=_real_key(n, r), n_spins=n)
        rm = build_rate_matrix(ens, params, laser_on=False, constants=constants,
                               floor=cfg.floor, near_radius=near)
        sites, hops = walk_occupations(rm, 0, tgrid, cfg.n_walks, spec.seed, (n, r))
        dist = np.linalg.norm(ens.positions[sites], axis=2)
        spin_r = np.linalg.norm(ens.positions, axis=1)
        return dist.astype(np.float64), spin_r, ens.box_radius, hops

    reals = range(cfg.n_realizations)
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            results = list(ex.map(one, reals))
    else:
        results = [one(r) for r in reals]
    return WalkSample(
        t=tgrid,
        dist=np.concatenate([res[0] for res in results]),
        realization=np.repeat(np.arange(cfg.n_realizations), cfg.n_walks),
        spin_r=[res[1] for res in results],
        box_radius=results[0][2],
        density=density,
        n_spins=n,
        hops=np.concatenate([res[3] for res in results]),
    )


def _real_key(n, r):
    # ensemble stream key combines size and realization index
    return n * 1_000_003 + r


def _clustered_mean(values, groups):
    """Mean over walks with a stderr that treats realizations as clusters."""
    m = values.shape[0]
    mean = values.mean(axis=0)
    labels = np.unique(groups)
    if labels.size < 2:
        return mean, values.std(axis=0, ddof=1) / np.sqrt(m)
    resid = np.stack([(values[groups == g] - mean).sum(axis=0) for g in labels])
    var = (resid**2).sum(axis=0) / m**2 * labels.size / (labels.size - 1)
    return mean, np.sqrt(var)


def msd_from_sample(sample):
    r2 = sample.dist**2
    mean, err = _clustered_mean(r2, sample.realization)
    return MsdCurve(sample.t, mean, err, np.full(sample.t.size, r2.shape[0]), sample.n_spins)


def msd_ensemble(spec, params, cfg, constants=DEFAULT_CONSTANTS, return_samples=False):
    """Mean-square displacement for every size in ``cfg.sizes``."""
    curves, samples = [], []
    for n in cfg.sizes:
        s = simulate_walks(spec, params, cfg, n_spins=n, constants=constants)
        curves.append(msd_from_sample(s))
        samples.append(s)
    return (curves, samples) if return_samples else curves


def finite_size_extrapolate(curves):
    """Extrapolate ``<r^2>(t)`` to infinite size, linear in ``N^(-1/3)``.

    Each time point is a weighted regression of ``r2_mean`` on ``N^(-1/3)``
    with inverse-variance weights; the intercept and its standard error
    form the returned curve. The reduced chi-square per time point is
    stored in ``result.chi2``.
    """
    if len(curves) < 3:
        raise ValueError("finite-size extrapolation needs at least 3 sizes")
    t = curves[0].t
    x = np.array([c.size_label for c in curves], float) ** (-1 / 3)
    Y = np.stack([c.r2_mean for c in curves])
    S = np.stack([c.r2_stderr for c in curves])
    mean = np.empty(t.size)
    err = np.empty(t.size)
    chi2 = np.full(t.size, np.nan)
    for k in range(t.size):
        s = S[:, k]
        if np.all(s > 0):
            w = 1 / s**2
        else:
            w = np.ones_like(x)
        A = np.column_stack([np.ones_like(x), x])
        cov = np.linalg.inv(A.T @ (w[:, None] * A))
        beta = cov @ (A.T @ (w * Y[:, k]))
        mean[k] = beta[0]
        err[k] = np.sqrt(cov[0, 0]) if np.all(s > 0) else 0.0
        if np.all(s > 0):
            chi2[k] = np.sum(w * (Y[:, k] - A @ beta) ** 2) / (x.size - 2)
    out = MsdCurve(t, mean, err, np.sum([c.n_samples for c in curves], axis=0), np.inf)
    out.chi2 = chi2
    return out


def extract_diffusion(curve, fit_windows=(30.0, 60.0, 100.0, 150.0, 200.0, 300.0),
                      offset=False):
    """Diffusion coefficient from ``<r^2> = 6 D t`` fitted on ``[0, T_max]``.

    Returns
    -------
    D : float
        Mean over windows.
    uncertainty : float
        Half the range of the per-window values.
    per_window : ndarray
    """
    vals = []
    t = np.asarray(curve.t)
    for tmax in fit_windows:
        m = (t > 0) & (t <= tmax)
        if not np.any(m):
            raise ValueError(f"empty fit window T_max={tmax}")
        y = curve.r2_mean[m]
        s = curve.r2_stderr[m]
        w = 1 / s**2 if np.all(s > 0) else np.ones_like(y)
        if offset:
            A = np.column_stack([t[m], np.ones_like(y)])
            beta = np.linalg.solve(A.T @ (w[:, None] * A), A.T @ (w * y))
            slope = beta[0]
        else:
            slope = np.sum(w * t[m] * y) / np.sum(w * t[m] ** 2)
        vals.append(slope / 6)
    vals = np.array(vals)
    return vals.mean(), 0.5 * (vals.max() - vals.min()), vals


def survival_from_sample(sample, probe_radius=6.0, subtract_floor=False):
    """Polarization per spin near the origin, the local-probe survival.

    The fraction of walkers inside ``probe_radius`` is divided by the
    number of resonant spins there, pooled over realizations. Multiply by
    ``sample.density`` to convert to a polarization density (nm^-3).
    ``subtract_floor`` removes the uniform finite-box value ``1/N``.
    """
    inside = sample.dist <= probe_radius
    counts = np.array([inside[sample.realization == r].sum(axis=0)
                       for r in range(len(sample.spin_r))], float)
    nwalk = np.bincount(sample.realization)
    nspin = np.array([np.sum(sr <= probe_radius) for sr in sample.spin_r], float)
    denom = np.sum(nwalk * nspin)
    value = counts.sum(axis=0) / denom
    # binomial error per walk pooled across realizations
    var = np.sum(counts * (1 - counts / nwalk[:, None]), axis=0) / denom**2
    if subtract_floor:
        value = value - 1 / sample.n_spins
    return Curve(sample.t, value, np.sqrt(var),
                 {"probe_radius_nm": probe_radius, "N": sample.n_spins,
                  "density_nm3": sample.density})


def profiles_from_sample(sample, times, dr=2.0, r_max=None):
    """Radial polarization-density profiles at the grid times nearest ``times``.

    Each walker deposits unit polarization; shells are normalized by the
    resonant spins they contain, then multiplied by the spin density so
    the profile integrates to one in an infinite medium.

    Returns
    -------
    list of hydro.RadialProfile
    """
    from .hydro import RadialProfile

    r_max = sample.box_radius if r_max is None else r_max
    edges = np.arange(0.0, r_max + dr, dr)
    centers = 0.5 * (edges[1:] + edges[:-1])
    nwalk = np.bincount(sample.realization)
    spins = np.zeros(centers.size)
    for r, sr in enumerate(sample.spin_r):
        spins += nwalk[r] * np.histogram(sr, edges)[0]
    out = []
    for tt in np.atleast_1d(times):
        k = int(np.argmin(np.abs(sample.t - tt)))
        c = np.histogram(sample.dist[:, k], edges)[0].astype(float)
        with np.errstate(invalid="ignore", divide="ignore"):
            per_spin = np.where(spins > 0, c / spins, np.nan)
            err = np.where(spins > 0, np.sqrt(np.maximum(c, 1.0)) / spins, np.nan)
        out.append(RadialProfile(centers, per_spin * sample.density,
                                 float(sample.t[k]), err * sample.density,
                                 counts=c))
    return out


# --- probe survival ------------------------------------------------------------------

@dataclass(frozen=True)
class SurvivalConfig:
    """Polarize around an NV with the rate equations, then spread by random walks.

    Parameters
    ----------
    tau_p : float
        Pumping duration, us.
    pump_rate : float
        Optical pumping rate, 1/us.
    n_pump : int
        P1s nearest the NV included in the pumping stage.
    probe : "nv" or float
        ``"nv"`` reads the local polarization weighted by the NV-P1 rates;
        a number reads the mean polarization per spin within that radius (nm).
    t_grid : tuple
        Readout times, us.
    n_walks : int
        Walkers per side of the estimator and per realization.
    n_realizations : int
    near_radius : float, optional
        Stored-neighbour radius (default: about 200 neighbours).
    threads : int
    """

    tau_p: float = 30.0
    pump_rate: float = 0.1
    n_pump: int = 300
    probe: object = "nv"
    t_grid: tuple = tuple(np.geomspace(1.0, 1000.0, 61))
    n_walks: int = 4000
    n_realizations: int = 20
    near_radius: float = None
    threads: int = 1

    def __post_init__(self):
        if self.tau_p < 0 or self.n_pump < 1 or self.n_walks < 1:
            raise ValueError("invalid survival configuration")
        if np.any(np.diff(self.t_grid) <= 0) or self.t_grid[0] <= 0:
            raise ValueError("t_grid must be positive and increasing")


def pumped_polarization(ens, params, tau_p, pump_rate, n_pump, constants=DEFAULT_CONSTANTS):
    """P1 polarization after optically pumping the NV (index 0) for ``tau_p``.

    Only the ``n_pump`` P1s nearest the NV take part; the rest stay
    unpolarized. Returns one value per spin, zero for the NV.
    """
    from .rateq import NVKinetics, PopulationState, evolve_populations

    p0 = np.zeros(ens.n)
    if tau_p == 0:
        return p0
    r = np.linalg.norm(ens.positions[1:], axis=1)
    near = 1 + np.argsort(r)[:n_pump]
    cl = ens.subset(np.concatenate([[0], near]))
    params = replace(params, gamma_pump=pump_rate)
    kin = NVKinetics(pump_rate=pump_rate, gamma_dec=params.gamma_dec)
    rm = build_rate_matrix(cl, params, laser_on=True, constants=constants, floor=0.0)
    st = PopulationState.unpolarized(cl.n, kin.n_extra, 0)
    st = evolve_populations(rm, st, 0.0, tau_p, laser_on=True, kinetics=kin)
    p0[near] = np.clip(st.polarization[1:], 0.0, None)
    return p0


def _site_histogram(rm, starts, tgrid, seed, key):
    counts = np.zeros((tgrid.size, rm.n))
    for w, s in enumerate(starts):
        sites = _walk_sites(rm, int(s), tgrid, stream(seed, *key, w))[0]
        np.add.at(counts, (np.arange(tgrid.size), sites), 1.0)
    return counts / len(starts)


def probe_survival(spec, params, scfg, constants=DEFAULT_CONSTANTS, return_runs=False):
    """Local polarization seen by an NV after pumping, disorder averaged.

    The NV pumps its neighbourhood through the rate equations; the
    resulting P1 polarization ``p0`` then spreads over the P1 network
    (NV decoupled) and is read out with weights ``q``. Because the walk
    generator is symmetric, ``q . G(t) p0 = sum_k [G(t/2) p0]_k [G(t/2) q]_k``;
    both factors are sampled by independent walker sets started from
    ``p0`` and ``q``, which keeps the estimator unbiased with far smaller
    variance than scoring a single walker at a localized readout.

    Returns
    -------
    Curve
        Survival per unit injected polarization; ``meta`` carries the mean
        injected polarization and the uniform finite-box floor ``1/N``.
    """
    from .rates import probe_rates

    spec = replace(spec, rho_nv=max(spec.rho_nv, 1.0))
    tgrid = np.asarray(scfg.t_grid, float)
    half = tgrid / 2
    density = spec.density(constants)
    near = scfg.near_radius
    if near is None:
        near = (3 * 200 / (4 * np.pi * density)) ** (1 / 3)
    n = spec.n_spins

    def one(r):
        ens = generate_ensemble(spec, constants, realization=r)
        p0 = pumped_polarization(ens, params, scfg.tau_p, scfg.pump_rate, scfg.n_pump,
                                 constants)[1:]
        if scfg.probe == "nv":
            q = probe_rates(ens, params, 0, False, constants)[1:]
        else:
            q = (np.linalg.norm(ens.positions[1:], axis=1) <= float(scfg.probe)).astype(float)
        p1 = ens.subset(np.arange(1, ens.n))
        rm = build_rate_matrix(p1, params, constants=constants, near_radius=near)
        rng = stream(spec.seed, 3, n, r)
        a = rng.choice(p1.n, size=scfg.n_walks, p=p0 / p0.sum())
        b = rng.choice(p1.n, size=scfg.n_walks, p=q / q.sum())
        A = _site_histogram(rm, a, half, spec.seed, (3, n, r, 0))
        B = _site_histogram(rm, b, half, spec.seed, (3, n, r, 1))
        return np.sum(A * B, axis=1), p0.sum()

    reals = range(scfg.n_realizations)
    if scfg.threads > 1:
        with ThreadPoolExecutor(scfg.threads) as ex:
            res = list(ex.map(one, reals))
    else:
        res = [one(r) for r in reals]
    vals = np.array([v for v, _ in res])
    inj = np.array([p for _, p in res])
    # ratio of means: survival per unit injected polarization
    value = (vals * inj[:, None]).mean(axis=0) / inj.mean()
    err = np.zeros_like(value)
    if len(res) > 1:
        w = inj / inj.mean()
        err = (vals * w[:, None]).std(axis=0, ddof=1) / np.sqrt(len(res))
    curve = Curve(tgrid, value, err, {"injected": float(inj.mean()), "floor": 1.0 / n,
                                      "probe": str(scfg.probe), "N": n})
    return (curve, vals, inj) if return_runs else curve
