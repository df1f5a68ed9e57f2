"""Fermi golden-rule polarization-transfer rates between dipolar spins."""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import _kernels
from .constants import DEFAULT_CONSTANTS
from .ensemble import Species


@dataclass(frozen=True)
class RateParams:
    """Linewidths entering the golden-rule rate.

    Parameters
    ----------
    gamma : float
        Interaction-induced linewidth, 1/us.
    gamma_pump : float
        Optical pumping rate, 1/us; broadens NV channels while the laser is on.
    gamma_dec : float
        NV excited-state decay rate, 1/us (used by the rate-equation level
        scheme).
    """

    gamma: float = 0.5
    gamma_pump: float = 0.1
    gamma_dec: float = 1 / 0.012

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.gamma_pump < 0 or self.gamma_dec < 0:
            raise ValueError("gamma_pump and gamma_dec must be nonnegative")


def pair_rate(J_eff, delta_i, delta_j, gamma):
    """Golden-rule transfer rate ``J_eff^2 * 2 gamma / (gamma^2 + (d_i - d_j)^2)``."""
    gamma = np.asarray(gamma, float)
    if np.any(gamma <= 0):
        raise ValueError("gamma must be positive")
    dd = np.asarray(delta_i) - np.asarray(delta_j)
    return np.asarray(J_eff) ** 2 * 2 * gamma / (gamma**2 + dd**2)


@dataclass(frozen=True)
class RateMatrix:
    """Pairwise transfer rates of one ensemble.

    ``rates`` holds every pair within ``near_radius`` as a symmetric CSR
    matrix. Pairs beyond it are not stored; their per-row sum is kept
    exactly in ``far_totals`` and individual far hops are resolved on the
    fly by the random walk. With ``near_radius=inf`` the storage is
    complete and ``far_totals`` is zero.
    """

    rates: sp.csr_matrix
    row_totals: np.ndarray
    far_totals: np.ndarray
    cumulative: np.ndarray
    near_radius: float
    floor: float
    gamma_pp: float
    gamma_nv: float
    J0: float
    positions: np.ndarray
    delta: np.ndarray
    species: np.ndarray

    @property
    def n(self):
        return self.row_totals.size

    @property
    def complete(self):
        return not np.any(self.far_totals > 0)

    @property
    def branching(self):
        """Per-row cumulative branching ratios (CSR data layout)."""
        tot = self.row_totals[np.repeat(np.arange(self.n), np.diff(self.rates.indptr))]
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(tot > 0, self.cumulative / tot, 0.0)

    def dense(self):
        if not self.complete:
            raise ValueError("rate matrix is truncated; rebuild with near_radius=inf")
        return self.rates.toarray()

    def to_coo_csv(self, path):
        from .curves import write_csv

        coo = sp.triu(self.rates, k=1).tocoo()
        write_csv(path, {"i": coo.row, "j": coo.col, "rate": coo.data},
                  {"near_radius_nm": self.near_radius, "floor": self.floor})


def build_rate_matrix(ens, params, laser_on=False, constants=DEFAULT_CONSTANTS,
                      floor=1e-10, near_radius=np.inf):
    """Golden-rule rates for every pair of an ensemble.

    Parameters
    ----------
    ens : SpinEnsemble
    params : RateParams
    laser_on : bool
        NV-P1 channels use ``gamma + gamma_pump`` when set.
    floor : float
        Rates below this value (1/us) are dropped.
    near_radius : float
        Pairs farther apart are kept only through exact per-row totals
        (see :class:`RateMatrix`).
    """
    if ens.n < 2:
        raise ValueError("need at least two spins")
    pos = np.ascontiguousarray(ens.positions, dtype=float)
    delta = np.ascontiguousarray(ens.delta, dtype=float)
    species = np.ascontiguousarray(ens.species, dtype=np.int8)
    gamma_nv = params.gamma + (params.gamma_pump if laser_on else 0.0)
    near_r2 = np.inf if np.isinf(near_radius) else float(near_radius) ** 2
    indptr, indices, data, far = _kernels.build_split(
        pos, delta, species, constants.J0, params.gamma, gamma_nv, floor, near_r2)
    mat = sp.csr_matrix((data, indices, indptr), shape=(ens.n, ens.n))
    cum = _kernels.row_cumsum(indptr, data)
    near_tot = np.zeros(ens.n)
    nz = np.diff(indptr) > 0
    near_tot[nz] = cum[indptr[1:][nz] - 1]
    return RateMatrix(
        rates=mat,
        row_totals=near_tot + far,
        far_totals=far,
        cumulative=cum,
        near_radius=float(near_radius),
        floor=float(floor),
        gamma_pp=params.gamma,
        gamma_nv=gamma_nv,
        J0=constants.J0,
        positions=pos,
        delta=delta,
        species=species,
    )


def nv_indices(rm):
    return np.flatnonzero(rm.species == Species.NV)


def probe_rates(ens, params, probe=0, laser_on=False, constants=DEFAULT_CONSTANTS):
    """Rates from spin ``probe`` to every spin (zero for itself)."""
    pos = np.ascontiguousarray(ens.positions, dtype=float)
    delta = np.ascontiguousarray(ens.delta, dtype=float)
    species = np.ascontiguousarray(ens.species, dtype=np.int8)
    gamma_nv = params.gamma + (params.gamma_pump if laser_on else 0.0)
    out = np.zeros(ens.n)
    for j in range(ens.n):
        if j != probe:
            out[j] = _kernels.pair_rate_ij(pos, delta, species, probe, j, constants.J0,
                                           params.gamma, gamma_nv)
    return out
