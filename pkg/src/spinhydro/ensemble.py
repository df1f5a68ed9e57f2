"""Disordered dipolar spin ensembles: geometry, species and on-site fields."""
from dataclasses import dataclass, field
import enum
import os

import numpy as np
from scipy.spatial import cKDTree

from .constants import DEFAULT_CONSTANTS, MHZ


class Species(enum.IntEnum):
    NV = 0
    P1 = 1


class PackingError(RuntimeError):
    """Raised when hard-core placement fails (density too high for r_cut)."""


@dataclass(frozen=True)
class EnsembleSpec:
    """Parameters of one family of disorder realizations.

    Parameters
    ----------
    rho_p1 : float
        Total P1 density, ppm.
    rho_nv : float
        NV density, ppm. A positive value places an NV at the origin.
    nu : float
        Fraction of P1 spins in the resonant subgroup.
    n_spins : int
        Number of resonant P1 spins (including a central P1, if any).
    r_cut : float
        Minimum pair distance, nm.
    field_width_W : float
        FWHM of the on-site field distribution, rad/us.
    field_distribution : str
        ``"lorentzian"``, ``"gaussian"`` or a path to a two-column CSV
        ``value,weight`` (values in rad/us).
    seed : int
    """

    rho_p1: float = 110.0
    rho_nv: float = 0.0
    nu: float = 1 / 3
    n_spins: int = 300
    r_cut: float = 1.75
    field_width_W: float = MHZ * 4.5
    field_distribution: str = "lorentzian"
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.nu <= 1:
            raise ValueError("nu must lie in (0, 1]")
        if self.rho_p1 <= 0:
            raise ValueError("rho_p1 must be positive")
        if self.n_spins < 2:
            raise ValueError("n_spins must be at least 2")
        if self.r_cut < 0:
            raise ValueError("r_cut must be nonnegative")
        if self.field_width_W < 0:
            raise ValueError("field_width_W must be nonnegative")

    def density(self, constants=DEFAULT_CONSTANTS):
        """Effective number density of resonant P1 spins, nm^-3."""
        return self.nu * ppm_to_density(self.rho_p1, constants)


@dataclass(frozen=True)
class SpinEnsemble:
    """One disorder realization. Index 0 is the probe spin at the origin."""

    positions: np.ndarray
    species: np.ndarray
    subgroup: np.ndarray
    delta: np.ndarray
    box_radius: float
    density: float = np.nan
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.positions, self.species, self.subgroup, self.delta):
            arr.flags.writeable = False

    @property
    def n(self):
        return self.positions.shape[0]

    def is_nv(self):
        return self.species == Species.NV

    def subset(self, index):
        """New ensemble holding the spins ``index`` in the given order."""
        index = np.asarray(index)
        return SpinEnsemble(self.positions[index].copy(), self.species[index].copy(),
                            self.subgroup[index].copy(), self.delta[index].copy(),
                            self.box_radius, self.density, dict(self.meta))

    def to_csv(self, path):
        from .curves import write_csv

        write_csv(
            path,
            {
                "x": self.positions[:, 0],
                "y": self.positions[:, 1],
                "z": self.positions[:, 2],
                "species": [Species(s).name for s in self.species],
                "subgroup": self.subgroup,
                "delta": self.delta,
            },
            {"box_radius_nm": self.box_radius, **self.meta},
        )


@dataclass(frozen=True)
class AngularCoeff:
    A_flip: float
    B_ising: float
    A_tilde: float
    B_tilde: float
    n: np.ndarray


def ppm_to_density(ppm, constants=DEFAULT_CONSTANTS):
    """Convert a defect concentration in ppm to a number density in nm^-3."""
    if np.any(np.asarray(ppm) < 0):
        raise ValueError("ppm must be nonnegative")
    return ppm * 1e-6 * constants.carbon_density


def angular_coefficients(r_i, r_j):
    """Dipolar angular factors for the pair ``(r_i, r_j)``.

    The field (and NV axis) is along z.
    """
    d = np.asarray(r_j, float) - np.asarray(r_i, float)
    norm = np.linalg.norm(d)
    if norm == 0:
        raise ValueError("coincident positions")
    n = d / norm
    nz2 = n[2] ** 2
    b = 3 * nz2 - 1
    return AngularCoeff(
        A_flip=3 * (1 - nz2) / (2 * np.sqrt(2)),
        B_ising=b,
        A_tilde=-b / 4,
        B_tilde=b,
        n=n,
    )


def stream(seed, *key):
    """Independent Philox generator for the counter ``(seed, *key)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def sample_fields(rng, n, width, distribution="lorentzian"):
    """Draw ``n`` on-site detunings with FWHM ``width`` (rad/us)."""
    if width == 0:
        return np.zeros(n)
    dist = str(distribution)
    if dist.lower() == "lorentzian":
        return 0.5 * width * rng.standard_cauchy(n)
    if dist.lower() == "gaussian":
        return width / (2 * np.sqrt(2 * np.log(2))) * rng.standard_normal(n)
    if os.path.exists(dist):
        table = np.loadtxt(dist, delimiter=",", comments="#", ndmin=2)
        p = table[:, 1] / table[:, 1].sum()
        return rng.choice(table[:, 0], size=n, p=p)
    raise ValueError(f"unknown field distribution {distribution!r}")


def _uniform_ball(rng, n, radius):
    v = rng.standard_normal((n, 3))
    v /= np.linalg.norm(v, axis=1)[:, None]
    return v * radius * rng.random(n)[:, None] ** (1 / 3)


def place_hardcore(rng, n, radius, r_cut, fixed=None, max_rounds=200):
    """Uniform points in a ball with no pair closer than ``r_cut``.

    Conflicting points are redrawn until none remain. ``fixed`` points
    (e.g. the probe at the origin) are never moved.
    """
    fixed = np.zeros((0, 3)) if fixed is None else np.atleast_2d(fixed)
    nf = fixed.shape[0]
    pts = np.vstack([fixed, _uniform_ball(rng, n, radius)])
    if r_cut <= 0:
        return pts[nf:]
    for _ in range(max_rounds):
        pairs = cKDTree(pts).query_pairs(r_cut, output_type="ndarray")
        if pairs.size == 0:
            return pts[nf:]
        # redraw the later point of each conflicting pair
        bad = np.unique(pairs.max(axis=1))
        bad = bad[bad >= nf]
        pts[bad] = _uniform_ball(rng, bad.size, radius)
    raise PackingError(
        f"packing infeasible: {n} spins with r_cut={r_cut} nm in radius {radius:.3g} nm"
    )


def generate_ensemble(spec, constants=DEFAULT_CONSTANTS, realization=0, n_spins=None):
    """Generate one disorder realization.

    Parameters
    ----------
    spec : EnsembleSpec
    constants : PhysicalConstants
    realization : int
        Realization index; the RNG stream is keyed by ``(seed, realization)``.
    n_spins : int, optional
        Overrides ``spec.n_spins`` (used for finite-size scans).

    Returns
    -------
    SpinEnsemble
        Index 0 sits at the origin: an NV when ``rho_nv > 0``, otherwise a
        resonant P1 that serves as the walker's starting site.
    """
    n = spec.n_spins if n_spins is None else int(n_spins)
    rng = stream(spec.seed, realization)
    dens = spec.density(constants)
    radius = (3 * n / (4 * np.pi * dens)) ** (1 / 3)
    with_nv = spec.rho_nv > 0
    n_random = n if with_nv else n - 1
    pos = place_hardcore(rng, n_random, radius, spec.r_cut, fixed=np.zeros(3))
    pos = np.vstack([np.zeros(3), pos])
    species = np.full(pos.shape[0], Species.P1, dtype=np.int8)
    subgroup = np.full(pos.shape[0], spec.nu)
    if with_nv:
        species[0] = Species.NV
        subgroup[0] = np.nan
    delta = sample_fields(rng, pos.shape[0], spec.field_width_W, spec.field_distribution)
    return SpinEnsemble(
        positions=pos,
        species=species,
        subgroup=subgroup,
        delta=delta,
        box_radius=radius,
        density=dens,
        meta={"seed": spec.seed, "realization": realization},
    )
