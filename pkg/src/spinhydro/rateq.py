"""Deterministic population dynamics of the NV + P1 system.

Each spin carries two populations ``(u, d)``. For a P1 these are its two
Zeeman levels; for the NV they are ``|0>`` and ``|-1>``. In this labeling
every golden-rule transfer is a flip-flop ``(i: u, j: d) <-> (i: d, j: u)``,
so NV-P1 and P1-P1 exchanges share one bilinear form:

    d rho_{i,u} / dt = sum_j Gamma_ij (rho_{i,d} rho_{j,u} - rho_{i,u} rho_{j,d}).

Pumping the NV into ``|0>`` therefore builds up positive P1 polarization
``p = rho_u - rho_d``.
"""
from dataclasses import dataclass, field, replace
import csv
import enum
import os

import numpy as np
from scipy import integrate, linalg

from .constants import DEFAULT_CONSTANTS, MHZ
from .curves import Curve
from .ensemble import Species, generate_ensemble
from .rates import build_rate_matrix

SEVEN_LEVELS = ("g0", "gm1", "gp1", "e0", "em1", "ep1", "s")
SAMPLE_RATE_TABLE = os.path.join(os.path.dirname(__file__), "data", "nv_rates_sample.csv")


class LevelScheme(enum.Enum):
    TWO_LEVEL = "two_level"
    SEVEN_LEVEL = "seven_level"


class IntegrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class NVKinetics:
    """NV internal kinetics.

    Parameters
    ----------
    scheme : LevelScheme
    pump_rate : float
        Optical pumping rate, 1/us.
    gamma_dec : float
        Excited-state decay rate, 1/us (two-level scheme only).
    efficiency : float
        Fraction of optical cycles from ``|-1>`` that end in ``|0>``
        (two-level scheme only).
    rate_table : str
        CSV of ``from_level,to_level,rate_per_us`` (seven-level scheme).
    """

    scheme: LevelScheme = LevelScheme.TWO_LEVEL
    pump_rate: float = 0.1
    gamma_dec: float = 1 / 0.012
    efficiency: float = 1.0
    rate_table: str = SAMPLE_RATE_TABLE

    @property
    def n_extra(self):
        return 0 if self.scheme == LevelScheme.TWO_LEVEL else len(SEVEN_LEVELS) - 2

    def repump_rate(self):
        """Effective ``|-1> -> |0>`` rate of the two-level scheme."""
        gp, gd = self.pump_rate, self.gamma_dec
        if np.isinf(gd):
            return self.efficiency * gp
        if gp + gd == 0:
            return 0.0
        return self.efficiency * gp * gd / (gp + gd)

    def generator(self, laser_on):
        """Linear generator ``M`` of the NV levels, ``d rho / dt = M rho``.

        Two-level: 2x2 over ``(|0>, |-1>)``. Seven-level: 7x7 over
        ``SEVEN_LEVELS``.
        """
        if self.scheme == LevelScheme.TWO_LEVEL:
            k = self.repump_rate() if laser_on else 0.0
            return np.array([[0.0, k], [0.0, -k]])
        idx = {name: n for n, name in enumerate(SEVEN_LEVELS)}
        M = np.zeros((7, 7))
        for src, dst, rate in read_rate_table(self.rate_table):
            M[idx[dst], idx[src]] += rate
            M[idx[src], idx[src]] -= rate
        if laser_on:
            for g, e in (("g0", "e0"), ("gm1", "em1"), ("gp1", "ep1")):
                M[idx[e], idx[g]] += self.pump_rate
                M[idx[g], idx[g]] -= self.pump_rate
        return M


def read_rate_table(path):
    rows = []
    with open(path) as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader)
        if [h.strip() for h in header] != ["from_level", "to_level", "rate_per_us"]:
            raise ValueError(f"{path}: expected header from_level,to_level,rate_per_us")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            src, dst, rate = (x.strip() for x in row)
            if src not in SEVEN_LEVELS or dst not in SEVEN_LEVELS:
                raise ValueError(f"{path}:{lineno}: unknown level in {row}")
            if float(rate) < 0:
                raise ValueError(f"{path}:{lineno}: negative rate")
            rows.append((src, dst, float(rate)))
    return rows


@dataclass
class PopulationState:
    """Populations of every spin.

    ``pops[i] = (rho_u, rho_d)``; for the NV the columns are ``|0>`` and
    ``|-1>``. ``extra`` holds the remaining NV levels of the seven-level
    scheme (``gp1, e0, em1, ep1, s``), empty otherwise.
    """

    pops: np.ndarray
    extra: np.ndarray = field(default_factory=lambda: np.zeros(0))
    t: float = 0.0

    @classmethod
    def unpolarized(cls, n, n_extra=0, nv_index=None):
        pops = np.full((n, 2), 0.5)
        extra = np.zeros(n_extra)
        if n_extra and nv_index is not None:
            # thermal NV: 1/3 in each ground level
            pops[nv_index] = 1 / 3
            extra[0] = 1 / 3
        return cls(pops, extra, 0.0)

    @property
    def polarization(self):
        return self.pops[:, 0] - self.pops[:, 1]

    def copy(self):
        return PopulationState(self.pops.copy(), self.extra.copy(), self.t)

    def vector(self):
        return np.concatenate([self.pops.ravel(), self.extra])


def _nv_index(rm):
    idx = np.flatnonzero(rm.species == Species.NV)
    if idx.size > 1:
        raise ValueError("at most one NV is supported")
    return int(idx[0]) if idx.size else None


def _system(G, kin, laser_on, nv, n, t1=np.inf):
    """Right-hand side and Jacobian for the flattened state."""
    n_extra = kin.n_extra
    M = kin.generator(laser_on) if nv is not None else None
    if nv is not None and n_extra:
        # NV level vector: (g0, gm1) live in pops[nv], the rest in extra
        lvl = np.concatenate([[2 * nv, 2 * nv + 1], 2 * n + np.arange(n_extra)])
    elif nv is not None:
        lvl = np.array([2 * nv, 2 * nv + 1])
    relax = 0.0 if np.isinf(t1) else 1 / (2 * t1)
    p1 = np.ones(n, bool)
    if nv is not None:
        p1[nv] = False

    def rhs(t, y):
        u = y[0:2 * n:2]
        d = y[1:2 * n:2]
        a = G @ u
        b = G @ d
        flow = d * a - u * b
        if relax:
            flow = flow + relax * (d - u) * p1
        dy = np.empty_like(y)
        dy[0:2 * n:2] = flow
        dy[1:2 * n:2] = -flow
        if n_extra:
            dy[2 * n:] = 0.0
        if nv is not None:
            dy[lvl] += M @ y[lvl]
        return dy

    def jac(t, y):
        u = y[0:2 * n:2]
        d = y[1:2 * n:2]
        a = G @ u
        b = G @ d
        J = np.zeros((y.size, y.size))
        # d flow_i / d u_j and d flow_i / d d_j
        Ju = d[:, None] * G - np.diag(b)
        Jd = np.diag(a) - u[:, None] * G
        if relax:
            Ju -= np.diag(relax * p1)
            Jd += np.diag(relax * p1)
        J[0:2 * n:2, 0:2 * n:2] = Ju
        J[0:2 * n:2, 1:2 * n:2] = Jd
        J[1:2 * n:2, 0:2 * n:2] = -Ju
        J[1:2 * n:2, 1:2 * n:2] = -Jd
        if nv is not None:
            J[np.ix_(lvl, lvl)] += M
        return J

    return rhs, jac


def evolve_populations(rm, state, t0, t1, laser_on=False, kinetics=None,
                       t_eval=None, method="LSODA", rtol=1e-8, atol=1e-10,
                       decouple_nv=False, p1_t1=np.inf):
    """Integrate the bilinear population equations from ``t0`` to ``t1``.

    Parameters
    ----------
    rm : RateMatrix
        Complete rate matrix; NV channels should already carry the linewidth
        matching ``laser_on``.
    state : PopulationState
    laser_on : bool
        Enables the NV pumping terms of ``kinetics``.
    kinetics : NVKinetics, optional
    t_eval : array, optional
        Times at which to return states (default: only ``t1``).
    method : str
        Any :func:`scipy.integrate.solve_ivp` method. ``"LSODA"`` switches
        to a stiff solver automatically; ``"RK45"`` is available but slow
        when close pairs make the system stiff.
    decouple_nv : bool
        Zero every NV rate (shelving).
    p1_t1 : float
        Optional P1 polarization lifetime, us.

    Returns
    -------
    PopulationState or list of PopulationState
    """
    if not t1 > t0:
        raise ValueError("t1 must exceed t0")
    kin = NVKinetics() if kinetics is None else kinetics
    G = rm.dense()
    nv = _nv_index(rm)
    if decouple_nv and nv is not None:
        G = G.copy()
        G[nv, :] = 0.0
        G[:, nv] = 0.0
    n = rm.n
    if state.pops.shape != (n, 2) or state.extra.size != (kin.n_extra if nv is not None else 0):
        raise ValueError("state does not match rate matrix / level scheme")
    rhs, jac = _system(G, kin, laser_on, nv, n, p1_t1)
    y0 = state.vector()
    kw = {"jac": jac} if method in ("LSODA", "BDF", "Radau") else {}
    sol = integrate.solve_ivp(rhs, (t0, t1), y0, method=method, rtol=rtol, atol=atol,
                              t_eval=t_eval, **kw)
    if not sol.success:
        raise IntegrationError(f"integration failed on [{t0}, {t1}]: {sol.message}")

    def unpack(y, t):
        return PopulationState(y[:2 * n].reshape(n, 2).copy(), y[2 * n:].copy(), float(t))

    if t_eval is None:
        return unpack(sol.y[:, -1], sol.t[-1])
    return [unpack(sol.y[:, k], sol.t[k]) for k in range(sol.t.size)]


def linear_p1_solver(rm, p0, max_n=2000):
    """Exact solution of ``dP_i/dt = sum_j Gamma_ij (P_j - P_i)``.

    Returns a callable ``P(t)``; scalar ``t`` gives shape ``(N,)``, an
    array of times gives ``(len(t), N)``. The generator's eigenpairs are
    available as ``P.eigenvalues`` and ``P.eigenvectors``.
    """
    if rm.n > max_n:
        raise ValueError(f"N={rm.n} exceeds {max_n}; use the random walk instead")
    G = rm.dense()
    L = G - np.diag(G.sum(axis=1))
    w, V = linalg.eigh(L)
    c = V.T @ np.asarray(p0, float)

    def P(t):
        t = np.asarray(t, float)
        if t.ndim == 0:
            return V @ (np.exp(w * t) * c)
        return (np.exp(np.outer(t, w)) * c) @ V.T

    P.eigenvalues = w
    P.eigenvectors = V
    return P


@dataclass(frozen=True)
class DriveSpec:
    """Continuous drive on another P1 subgroup.

    Its effect on the resonant subgroup is a narrower on-site field
    distribution (``width``) and, optionally, a modified P1 lifetime.
    """

    subgroup: float = 1 / 4
    rabi: float = MHZ * 11.7
    omega: float = 0.0
    width: float = MHZ * 3.4
    t1: float = np.inf


@dataclass(frozen=True)
class ProtocolSpec:
    """Polarize, optionally shelve and flip, then read out.

    Parameters
    ----------
    tau_p : float
        Laser duration, us.
    tau_w : float
        Shelving wait after the laser, us (NV decoupled).
    t_grid : tuple
        Readout times after the preparation, us.
    pump_rate : float
        Optical pumping rate, 1/us.
    level_scheme : str
        ``"two_level"`` or ``"seven_level"``.
    rate_table : str
        Rate table for the seven-level scheme.
    flip_p1 : bool
        Invert every P1 polarization before readout.
    drive : DriveSpec, optional
    n_realizations : int
    p1_t1 : float
        P1 polarization lifetime, us.
    """

    tau_p: float = 30.0
    tau_w: float = 0.0
    t_grid: tuple = tuple(np.geomspace(0.1, 1000.0, 60))
    pump_rate: float = 0.1
    level_scheme: str = "two_level"
    rate_table: str = SAMPLE_RATE_TABLE
    flip_p1: bool = False
    drive: DriveSpec = None
    n_realizations: int = 8
    p1_t1: float = np.inf

    def __post_init__(self):
        if self.tau_p < 0 or self.tau_w < 0:
            raise ValueError("tau_p and tau_w must be nonnegative")
        if np.any(np.diff(self.t_grid) <= 0):
            raise ValueError("t_grid must be increasing")


def _kinetics(proto, params):
    scheme = LevelScheme(proto.level_scheme)
    return NVKinetics(scheme=scheme, pump_rate=proto.pump_rate,
                      gamma_dec=params.gamma_dec, rate_table=proto.rate_table)


def protocol_run(ens, params, proto, constants=DEFAULT_CONSTANTS):
    """One realization of the protocol; returns NV polarization on ``t_grid``
    and the state at the end of the preparation."""
    params = replace(params, gamma_pump=proto.pump_rate)
    kin = _kinetics(proto, params)
    rm_on = build_rate_matrix(ens, params, laser_on=True, constants=constants, floor=0.0)
    rm_off = build_rate_matrix(ens, params, laser_on=False, constants=constants, floor=0.0)
    nv = _nv_index(rm_off)
    if nv is None:
        raise ValueError("protocol needs an NV (set rho_nv > 0)")
    p1_t1 = proto.p1_t1
    if proto.drive is not None and np.isfinite(proto.drive.t1):
        p1_t1 = proto.drive.t1
    state = PopulationState.unpolarized(rm_off.n, kin.n_extra, nv)
    t = 0.0
    if proto.tau_p > 0:
        state = evolve_populations(rm_on, state, 0.0, proto.tau_p, laser_on=True,
                                   kinetics=kin, p1_t1=proto.p1_t1)
    if proto.tau_w > 0:
        state = evolve_populations(rm_off, state, 0.0, proto.tau_w, laser_on=False,
                                   kinetics=kin, decouple_nv=True, p1_t1=proto.p1_t1)
    prepared = state.copy()
    if proto.flip_p1:
        mask = np.ones(rm_off.n, bool)
        mask[nv] = False
        state.pops[mask] = state.pops[mask][:, ::-1]
    grid = np.asarray(proto.t_grid, float)
    s0 = state.pops[nv, 0] - state.pops[nv, 1]
    out = [s0] if grid[0] == 0 else []
    evalt = grid[grid > 0]
    if evalt.size:
        states = evolve_populations(rm_off, state, 0.0, evalt[-1], laser_on=False,
                                    kinetics=kin, t_eval=evalt, p1_t1=p1_t1)
        out += [s.pops[nv, 0] - s.pops[nv, 1] for s in states]
    return np.array(out), prepared


def simulate_protocol(spec, params, proto, constants=DEFAULT_CONSTANTS, return_runs=False):
    """NV polarization ``rho_0 - rho_-1`` after the protocol, disorder averaged.

    ``spec.rho_nv`` is forced positive so that an NV sits at the origin.
    With a drive, the resonant subgroup's field width becomes
    ``proto.drive.width``.
    """
    if spec.rho_nv <= 0:
        spec = replace(spec, rho_nv=1.0)
    if proto.drive is not None:
        spec = replace(spec, field_width_W=proto.drive.width)
    runs = []
    for r in range(proto.n_realizations):
        ens = generate_ensemble(spec, constants, realization=r)
        runs.append(protocol_run(ens, params, proto, constants)[0])
    runs = np.array(runs)
    sigma = runs.std(axis=0, ddof=1) / np.sqrt(len(runs)) if len(runs) > 1 else np.zeros(runs.shape[1])
    curve = Curve(np.asarray(proto.t_grid, float), runs.mean(axis=0), sigma,
                  {"tau_p": proto.tau_p, "n_realizations": proto.n_realizations})
    return (curve, runs) if return_runs else curve


def decay_time(curve, level=1 / np.e):
    """First time the curve drops to ``level`` times its first value.

    Log-linear interpolation between grid points; ``inf`` if never reached.
    """
    v = curve.value / curve.value[0]
    below = np.flatnonzero(v <= level)
    if below.size == 0:
        return np.inf
    k = below[0]
    if k == 0:
        return curve.x[0]
    t0, t1 = curve.x[k - 1], curve.x[k]
    v0, v1 = v[k - 1], v[k]
    if t0 <= 0:
        return t0 + (t1 - t0) * (v0 - level) / (v0 - v1)
    f = (np.log(v0) - np.log(level)) / (np.log(v0) - np.log(v1))
    return float(np.exp(np.log(t0) + f * (np.log(t1) - np.log(t0))))
