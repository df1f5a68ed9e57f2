"""Least-squares extraction of transport parameters from curves and profiles."""
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy import optimize

from . import hydro
from .curves import Curve
from .ensemble import stream

G_FACTOR = 2 * np.pi ** (1 / 3)
PROFILE_FLOOR = 1e-9
_HYDRO_FIELDS = {f.name for f in fields(hydro.HydroModel)}


class FitError(RuntimeError):
    """Optimizer failed; ``last`` holds the final iterate."""

    def __init__(self, msg, last=None):
        super().__init__(msg)
        self.last = last


def _hydro(params):
    p = dict(params)
    if "ell" in p:
        p["C_dyn"] = p.pop("ell") ** 2
    return hydro.HydroModel(**{k: v for k, v in p.items() if k in _HYDRO_FIELDS})


def model_undriven(params, t):
    return hydro.survival_undriven(_hydro(params), t)


def model_driven(params, t):
    return hydro.survival_driven(_hydro(params), t)


def model_with_background(params, t):
    m = _hydro(params)
    base = hydro.survival_driven(m, t) if m.driven else hydro.survival_undriven(m, t)
    return base + hydro.background(m, t)


def model_dyncorr_profile(params, r, t=None):
    """Profile at time ``params["t"]`` (or ``t``) evolved from the Yukawa form."""
    p = dict(params)
    tt = p.pop("t") if t is None else t
    return hydro.dyncorr_profile(_hydro(p), r, tt)


MODELS = {
    "undriven": model_undriven,
    "driven": model_driven,
    "with_background": model_with_background,
    "dyncorr_profile": model_dyncorr_profile,
}


@dataclass
class FitProblem:
    """Data, model and parameter roles for one fit.

    Parameters
    ----------
    data : Curve
        Must carry ``sigma`` unless ``log_residuals`` is set.
    model : str
        Key of :data:`MODELS`.
    free : dict
        ``name -> (initial, lower, upper)``.
    fixed : dict
        ``name -> value``.
    priors : dict
        ``name -> (mean, sigma)`` for fixed parameters; used by
        :func:`resample_uncertainty`.
    log_residuals : bool
        Residuals ``log(max(model, floor)) - log(max(data, floor))``.
    n_starts : int
        Extra log-uniform random starts inside the bounds.
    """

    data: Curve
    model: str = "undriven"
    free: dict = field(default_factory=dict)
    fixed: dict = field(default_factory=dict)
    priors: dict = field(default_factory=dict)
    log_residuals: bool = False
    n_starts: int = 0
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}")
        both = set(self.free) & set(self.fixed)
        if both:
            raise ValueError(f"parameters both free and fixed: {sorted(both)}")
        for name, (x0, lo, hi) in self.free.items():
            if not lo <= x0 <= hi:
                raise ValueError(f"initial guess of {name} outside bounds")
        if self.data.value.size < len(self.free) + 1:
            raise ValueError("need more data points than free parameters")
        if not self.log_residuals and not _has_sigma(self.data):
            raise ValueError("data needs sigma for weighted residuals")


@dataclass
class FitResult:
    values: dict
    errors: dict
    covariance: np.ndarray
    chi2_red: float
    cost: float
    n_eval: int
    samples: dict = None
    failures: int = 0

    def to_json(self):
        out = {"values": self.values, "errors": self.errors, "chi2_red": self.chi2_red,
               "cost": self.cost}
        if self.samples is not None:
            out["samples"] = {k: list(map(float, v)) for k, v in self.samples.items()}
            out["failures"] = self.failures
        return out


def _has_sigma(data):
    return data.sigma is not None and bool(np.all(data.sigma > 0))


def _residual_fn(p):
    names = list(p.free)
    model = MODELS[p.model]
    x, y = p.data.x, p.data.value
    if p.log_residuals:
        ly = np.log(np.maximum(y, PROFILE_FLOOR))
        w = np.ones_like(y)
        if _has_sigma(p.data):
            # relative error as log-space sigma, capped to avoid zero-count blowup
            with np.errstate(divide="ignore", invalid="ignore"):
                rel = p.data.sigma / np.maximum(y, PROFILE_FLOOR)
            w = 1 / np.clip(np.nan_to_num(rel, nan=1.0), 1e-3, 1.0)

        def res(theta):
            params = {**p.fixed, **dict(zip(names, theta))}
            return w * (np.log(np.maximum(model(params, x), PROFILE_FLOOR)) - ly)
    else:
        s = p.data.sigma

        def res(theta):
            params = {**p.fixed, **dict(zip(names, theta))}
            return (model(params, x) - y) / s
    return names, res


def fit_curve(p, max_nfev=2000):
    """Weighted nonlinear least squares (trust-region reflective).

    Starts from the supplied guesses and from ``p.n_starts`` random
    points; the lowest cost wins.
    """
    names, res = _residual_fn(p)
    lo = np.array([p.free[n][1] for n in names], float)
    hi = np.array([p.free[n][2] for n in names], float)
    starts = [np.array([p.free[n][0] for n in names], float)]
    rng = stream(p.seed, 7)
    for _ in range(p.n_starts):
        pos = (lo > 0) & np.isfinite(hi)
        s = np.where(pos, np.exp(rng.uniform(np.log(np.where(pos, lo, 1)),
                                             np.log(np.where(pos, hi, 2)))),
                     starts[0])
        starts.append(s)
    best = None
    for x0 in starts:
        sol = optimize.least_squares(res, x0, bounds=(lo, hi), method="trf",
                                     jac="3-point", x_scale="jac", max_nfev=max_nfev)
        if best is None or sol.cost < best.cost:
            best = sol
    if best.status <= 0:
        raise FitError(f"optimizer did not converge: {best.message}",
                       dict(zip(names, best.x)))
    dof = max(best.fun.size - len(names), 1)
    chi2 = 2 * best.cost / dof
    try:
        cov = np.linalg.pinv(best.jac.T @ best.jac)
        if p.log_residuals and not _has_sigma(p.data):
            cov = cov * chi2
    except np.linalg.LinAlgError:
        cov = np.full((len(names), len(names)), np.nan)
    err = np.sqrt(np.clip(np.diag(cov), 0, None))
    return FitResult(
        values=dict(zip(names, map(float, best.x))),
        errors=dict(zip(names, map(float, err))),
        covariance=cov,
        chi2_red=float(chi2),
        cost=float(best.cost),
        n_eval=int(best.nfev),
    )


def resample_uncertainty(p, draws=200, seed=0, fixed_draws=None):
    """Refit with fixed parameters drawn from their priors.

    Parameters
    ----------
    fixed_draws : dict, optional
        ``name -> array`` of pre-drawn values, so that several problems
        can share correlated draws.

    Returns
    -------
    FitResult
        The central fit with ``samples`` holding the per-draw free values
        (NaN for failed draws) and ``errors`` their standard deviations.
    """
    if not p.priors and fixed_draws is None:
        raise ValueError("no priors to resample")
    if fixed_draws is None:
        fixed_draws = draw_priors(p.priors, draws, seed)
    central = fit_curve(p)
    samples = {n: np.full(draws, np.nan) for n in p.free}
    failures = 0
    for k in range(draws):
        fixed = {**p.fixed, **{n: float(v[k]) for n, v in fixed_draws.items()}}
        try:
            r = fit_curve(replace(p, fixed=fixed, n_starts=0))
        except (FitError, ValueError):
            failures += 1
            continue
        for n in p.free:
            samples[n][k] = r.values[n]
    central.samples = samples
    central.failures = failures
    central.errors = {n: float(np.nanstd(v, ddof=1)) if draws > 1 else 0.0
                      for n, v in samples.items()}
    return central


def resample_driven_pair(undriven, driven, draws=200, seed=0, shared=("D", "b", "Gamma")):
    """Correlated ``(D, D_dr)`` samples from an undriven and a driven curve.

    Each draw of the priors (taken from ``undriven.priors``) is applied to
    both problems; the undriven fit of that draw then fixes ``shared``
    parameters of the driven fit, which leaves ``D_dr`` (plus whatever else
    is free in ``driven``) to be fitted.

    Returns
    -------
    samples : dict
        ``name -> array`` with ``"D"`` and ``"D_dr"``; NaN for failed draws.
    failures : int
    """
    if not undriven.priors:
        raise ValueError("no priors to resample")
    if "D_dr" not in driven.free:
        raise ValueError("driven problem must fit D_dr")
    fixed_draws = draw_priors(undriven.priors, draws, seed)
    out = {"D": np.full(draws, np.nan), "D_dr": np.full(draws, np.nan)}
    failures = 0
    for k in range(draws):
        drawn = {n: float(v[k]) for n, v in fixed_draws.items()}
        try:
            ru = fit_curve(replace(undriven, fixed={**undriven.fixed, **drawn}, n_starts=0))
            carry = {n: ru.values.get(n, undriven.fixed.get(n)) for n in shared}
            free = {n: v for n, v in driven.free.items() if n not in carry}
            rd = fit_curve(replace(driven, free=free, n_starts=0,
                                   fixed={**driven.fixed, **drawn, **carry}))
        except (FitError, ValueError):
            failures += 1
            continue
        out["D"][k] = ru.values["D"] if "D" in ru.values else undriven.fixed["D"]
        out["D_dr"][k] = rd.values["D_dr"]
    return out, failures


def draw_priors(priors, draws, seed=0):
    """Independent normal draws ``name -> array``; positive parameters stay positive."""
    rng = stream(seed, 11)
    out = {}
    for n, (mu, sd) in priors.items():
        v = mu + sd * rng.standard_normal(draws)
        out[n] = np.abs(v) if mu > 0 else v
    return out


def geometric_correction(D, profile="exponential"):
    """Survival-height diffusion coefficient corrected for the profile shape.

    An exponential profile has height ``1/(8 pi r0^3)`` with
    ``<r^2> = 12 r0^2``; a Gaussian has ``(4 pi D t)^(-3/2)`` with
    ``<r^2> = 6 D t``. Equating heights and widths gives ``D -> g D`` with
    ``g = 2 pi^(1/3)``.
    """
    if D <= 0:
        raise ValueError("D must be positive")
    profile = profile.lower()
    if profile == "gaussian":
        return D
    if profile == "exponential":
        return G_FACTOR * D
    raise ValueError("profile must be 'gaussian' or 'exponential'")


# --- dynamical length -----------------------------------------------------------------

def profile_edge_filled(profile, n_spins_density, threshold=3e-6):
    """True once the polarization per spin at the outermost shell exceeds ``threshold``."""
    finite = np.isfinite(profile.P)
    if not finite.any():
        return False
    edge = profile.P[finite][-1] / n_spins_density
    return edge > threshold


def _fit_ell(profiles, D, ell0, r_min, bounds):
    r_all, y_all, w_all, t_all = [], [], [], []
    for pr in profiles:
        m = np.isfinite(pr.P) & (pr.P > 0) & (pr.r >= r_min)
        r_all.append(pr.r[m])
        y_all.append(np.log(pr.P[m]))
        if pr.sigma is not None:
            rel = pr.sigma[m] / pr.P[m]
            w_all.append(1 / np.clip(rel, 1e-3, 1.0))
        else:
            w_all.append(np.ones(m.sum()))
        t_all.append(pr.t)

    def res(theta):
        m = hydro.HydroModel(D=D, C_dyn=theta[0] ** 2)
        out = []
        for r, y, w, t in zip(r_all, y_all, w_all, t_all):
            model = hydro.dyncorr_profile(m, r, t)
            out.append(w * (np.log(np.maximum(model, PROFILE_FLOOR)) - y))
        return np.concatenate(out)

    sol = optimize.least_squares(res, [ell0], bounds=bounds, method="trf", jac="3-point",
                                 x_scale="jac")
    dof = max(sol.fun.size - 1, 1)
    chi2 = 2 * sol.cost / dof
    jtj = float(np.sum(sol.jac**2))
    var = chi2 / jtj if jtj > 0 else np.inf
    return float(sol.x[0]), float(np.sqrt(var))


@dataclass
class EllResult:
    ell: float
    sigma: float
    t_min: np.ndarray
    per_window: np.ndarray
    per_window_sigma: np.ndarray
    used: np.ndarray


def fit_dynamical_length(profiles, D, t_min_values, t_max=None, density=None,
                         edge_threshold=3e-6, r_min=0.0, ell0=10.0, bounds=(0.0, 200.0),
                         n_consistent=3):
    """Dynamical length from the evolution of radial profiles.

    For each ``t_min`` the profiles with ``t_min <= t <= t_max`` are fitted
    jointly to the Yukawa-seeded dynamical-correction propagator with
    ``D`` fixed. ``t_max`` defaults to the first profile whose per-spin
    edge polarization exceeds ``edge_threshold``, i.e. the onset of
    finite-size contamination (needs ``density``; the last profile if the
    edge never fills).
    The reported value averages the last ``n_consistent`` windows whose
    estimates agree pairwise within their combined errors; the
    uncertainty is half their range or the mean error, whichever is larger.
    """
    profiles = sorted(profiles, key=lambda p: p.t)
    if t_max is None:
        if density is None:
            t_max = profiles[-1].t
        else:
            filled = [p.t for p in profiles if profile_edge_filled(p, density, edge_threshold)]
            t_max = min(filled) if filled else profiles[-1].t
    t_min_values = np.sort(np.asarray(t_min_values, float))
    est, sig, tm = [], [], []
    for t0 in t_min_values:
        sel = [p for p in profiles if t0 <= p.t <= t_max]
        if len(sel) < 2:
            continue
        e, s = _fit_ell(sel, D, ell0, r_min, bounds)
        est.append(e)
        sig.append(s)
        tm.append(t0)
    est, sig, tm = map(np.asarray, (est, sig, tm))
    if est.size < 2:
        raise ValueError("need at least two profiles inside the window")
    n = min(n_consistent, est.size)
    used = None
    # slide back from the latest windows until a consistent group is found
    for start in range(est.size - n, -1, -1):
        e, s = est[start:start + n], sig[start:start + n]
        diff = np.abs(e[:, None] - e[None, :])
        comb = np.sqrt(s[:, None] ** 2 + s[None, :] ** 2)
        if np.all(diff <= comb + 1e-12):
            used = np.arange(start, start + n)
            break
    if used is None:
        raise ValueError("no mutually consistent set of t_min windows")
    e = est[used]
    unc = max(0.5 * (e.max() - e.min()), float(np.mean(sig[used])))
    return EllResult(float(e.mean()), unc, tm, est, sig, used)


def profile_collapse_sse(profiles, D, r_min=0.0):
    """Log-space misfit of rescaled profiles to exponential and Gaussian shapes.

    Profiles are rescaled to ``x = r / sqrt(D t)`` and
    ``y = P (D t)^(3/2)``. Each shape's single free scale is fitted;
    returns ``(sse_exponential, sse_gaussian)``.
    """
    xs, ys, ws = [], [], []
    for p in profiles:
        m = np.isfinite(p.P) & (p.P > 0) & (p.r >= r_min)
        L = np.sqrt(D * p.t)
        xs.append(p.r[m] / L)
        ys.append(np.log(p.P[m] * L**3))
        if p.sigma is not None:
            ws.append(1 / np.clip(p.sigma[m] / p.P[m], 1e-3, 1.0))
        else:
            ws.append(np.ones(m.sum()))
    x, y, w = map(np.concatenate, (xs, ys, ws))

    def sse(shape):
        def res(th):
            a = th[0]
            if shape == "exp":
                model = -np.log(8 * np.pi * a**3) - x / a
            else:
                model = -1.5 * np.log(2 * np.pi * a**2) - x**2 / (2 * a**2)
            return w * (model - y)

        best = min((optimize.least_squares(res, [a0], bounds=([1e-3], [1e3]))
                    for a0 in (0.3, 1.0, 3.0)), key=lambda s: s.cost)
        return 2 * best.cost

    return sse("exp"), sse("gauss")
