"""Command-line front end: ``spinhydro <subcommand> --config run.toml``."""
import argparse
import json
import sys
from dataclasses import asdict, is_dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, build, load_config, require
from .constants import DEFAULT_CONSTANTS, PhysicalConstants
from .curves import Curve, curve_from_csv, write_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


class Run:
    """Resolved configuration plus output helpers shared by subcommands."""

    def __init__(self, cfg, raw, digest, out, seed, threads, config_path):
        self.cfg = cfg
        self.raw = raw
        self.digest = digest
        self.out = Path(out)
        self.seed = seed
        self.threads = threads
        self.config_path = config_path
        self.out.mkdir(parents=True, exist_ok=True)
        if config_path is not None:
            (self.out / Path(config_path).name).write_text(raw)

    def section(self, name):
        return dict(self.cfg.get(name, {}))

    @property
    def meta(self):
        return {"version": __version__, "seed": self.seed, "config_sha256": self.digest}

    def constants(self):
        try:
            return PhysicalConstants.from_mapping(self.section("constants"))
        except (KeyError, ValueError) as exc:
            raise ConfigError(f"[constants] {exc}") from exc

    def csv(self, name, columns, **extra):
        write_csv(self.out / name, columns, {**self.meta, **extra})

    def json(self, name, obj):
        payload = {"meta": self.meta, **obj}
        (self.out / name).write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True))


def _jsonable(obj):
    if is_dataclass(obj):
        return _jsonable(asdict(obj))
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _tuple(v):
    return tuple(v)


def _ensemble_spec(run):
    from .ensemble import EnsembleSpec

    table = run.section("ensemble")
    if run.seed is not None:
        table["seed"] = run.seed
    return build(EnsembleSpec, table, "ensemble")


def _rate_params(run):
    from .rates import RateParams

    return build(RateParams, run.section("rates"), "rates")


# --- subcommands ------------------------------------------------------------------------

def cmd_ensemble(run):
    from .ensemble import generate_ensemble

    spec = _ensemble_spec(run)
    realization = int(run.cfg.get("realization", 0))
    ens = generate_ensemble(spec, run.constants(), realization=realization)
    from .ensemble import Species

    run.csv("ensemble.csv", {
        "x": ens.positions[:, 0], "y": ens.positions[:, 1], "z": ens.positions[:, 2],
        "species": [Species(s).name for s in ens.species],
        "subgroup": ens.subgroup, "delta": ens.delta,
    }, box_radius_nm=ens.box_radius)
    print(f"{ens.n} spins, box radius {ens.box_radius:.3f} nm")


def cmd_ctrw(run):
    from . import ctrw

    table = run.section("ctrw")
    require(table, "sizes", "ctrw")
    table["threads"] = run.threads
    cfg = build(ctrw.WalkConfig, table, "ctrw", {"sizes": _tuple, "fit_windows": _tuple})
    spec, params = _ensemble_spec(run), _rate_params(run)
    curves = ctrw.msd_ensemble(spec, params, cfg, run.constants())
    cols = {"t_us": [], "r2_nm2": [], "stderr": [], "N": []}
    for c in curves:
        cols["t_us"] += list(c.t)
        cols["r2_nm2"] += list(c.r2_mean)
        cols["stderr"] += list(c.r2_stderr)
        cols["N"] += [c.size_label] * c.t.size
    run.csv("msd.csv", cols)
    report = {"per_size": {}}
    for c in curves:
        D, dD, _ = ctrw.extract_diffusion(c, cfg.fit_windows)
        report["per_size"][str(c.size_label)] = {"D": D, "uncertainty": dD}
    if len(curves) >= 3:
        inf = ctrw.finite_size_extrapolate(curves)
        run.csv("msd_inf.csv", {"t_us": inf.t, "r2_nm2": inf.r2_mean, "stderr": inf.r2_stderr,
                                "N": ["inf"] * inf.t.size})
        D, dD, per = ctrw.extract_diffusion(inf, cfg.fit_windows)
        report["extrapolated"] = {"D": D, "uncertainty": dD, "per_window": per}
    else:
        D, dD = report["per_size"][str(curves[-1].size_label)].values()
    run.json("diffusion.json", report)
    print(f"D = {D:.4f} +- {dD:.4f} nm^2/us")


def _powerlaw_report(curve, target=-1.5):
    from .curves import loglog_slope

    t, v = curve.x, curve.value
    best = None
    for i in range(t.size):
        j = np.searchsorted(t, 10 * t[i] * (1 + 1e-9), side="right")
        if j > t.size or t[j - 1] < 10 * t[i] * 0.999:
            break
        m = slice(i, j)
        if np.any(v[m] <= 0):
            continue
        s = loglog_slope(t[m], v[m])[0]
        if best is None or abs(s - target) < abs(best[0] - target):
            best = (s, float(t[i]), float(t[j - 1]))
    return best


def cmd_survival(run):
    from . import ctrw, fitkit, rateq

    table = run.section("survival")
    mode = table.pop("mode", "probe")
    fit_opts = run.section("fit")
    spec, params = _ensemble_spec(run), _rate_params(run)
    consts = run.constants()
    if mode == "probe":
        table["threads"] = run.threads
        scfg = build(ctrw.SurvivalConfig, table, "survival", {"t_grid": _tuple})
        curve = ctrw.probe_survival(spec, params, scfg, consts)
        density = spec.density(consts)
        tau_p = scfg.tau_p
        inj = 1.0
        floor_rho = density / spec.n_spins
    elif mode == "protocol":
        proto = build(rateq.ProtocolSpec, table, "survival", {"t_grid": _tuple})
        curve = rateq.simulate_protocol(spec, params, proto, consts)
        density = spec.density(consts)
        tau_p = proto.tau_p
        inj = 1.0
        floor_rho = 0.0
    else:
        raise ConfigError("[survival] mode must be 'probe' or 'protocol'")
    run.csv("signal.csv", {"t_us": curve.x, "signal": curve.value, "stderr": curve.sigma},
            mode=mode)
    # polarization per spin -> density; injection fixed by the known total
    data = Curve(curve.x, curve.value * density, np.maximum(curve.sigma * density, 1e-30))
    result = {"mode": mode}
    if np.ptp(curve.value) <= 1e-12 * max(abs(curve.value).max(), 1e-300):
        result["degenerate"] = True
        run.json("fit.json", result)
        print("flat signal: fit degenerate")
        return
    fixed = {"tau_p": tau_p, "Gamma": inj / max(tau_p, 1e-12), "T1": np.inf,
             "rho_nv": floor_rho}
    fixed.update(fit_opts.pop("fixed", {}))
    free = {"D": (1.0, 1e-3, 100.0), "b": (2.0, 0.0, 50.0)}
    free.update({k: tuple(v) for k, v in fit_opts.pop("free", {}).items()})
    for k in free:
        fixed.pop(k, None)
    prob = fitkit.FitProblem(data, "with_background", free, fixed, log_residuals=True,
                             n_starts=int(fit_opts.pop("n_starts", 4)), seed=run.seed or 0)
    fr = fitkit.fit_curve(prob)
    D = fr.values["D"]
    slope = _powerlaw_report(Curve(curve.x, curve.value))
    result.update({"fit": fr.to_json(), "gD": fitkit.geometric_correction(D),
                   "late_slope": None if slope is None else
                   {"slope": slope[0], "t_from": slope[1], "t_to": slope[2]}})
    run.json("fit.json", result)
    print(f"D = {D:.4f}, gD = {result['gD']:.4f} nm^2/us"
          + ("" if slope is None else f", slope {slope[0]:.3f} on [{slope[1]:.3g}, {slope[2]:.3g}] us"))


def cmd_analytic(run):
    from . import hydro

    table = run.section("analytic")
    kind = table.pop("kind", "F_kernel")
    if kind == "F_kernel":
        x = np.geomspace(table.get("x_min", 1e-6), table.get("x_max", 700.0),
                         int(table.get("n", 200)))
        run.csv("F_kernel.csv", {"x": x, "F": hydro.F_kernel(x)})
        print(f"F(x) tabulated at {x.size} points")
        return
    model = build(hydro.HydroModel, run.section("hydro"), "hydro")
    t = np.geomspace(table.get("t_min", 0.1), table.get("t_max", 1000.0), int(table.get("n", 200)))
    if kind == "survival":
        f = hydro.survival_driven if model.driven else hydro.survival_undriven
        run.csv("survival.csv", {"t_us": t, "survival": f(model, t)})
    elif kind == "approach":
        run.csv("approach.csv", {"t_us": t, "A_p": hydro.survival_approach(model, t)})
    elif kind == "profile":
        r = np.linspace(table.get("r_min", 0.5), table.get("r_max", 60.0), int(table.get("n_r", 120)))
        cols = {"r_nm": r}
        for tt in table.get("times", [10.0, 100.0]):
            cols[f"P_t{tt:g}"] = hydro.dyncorr_profile(model, r, tt)
        run.csv("profile.csv", cols)
    else:
        raise ConfigError(f"[analytic] unknown kind '{kind}'")
    print(f"wrote {kind}")


def cmd_lattice(run):
    from . import lattice

    table = run.section("lattice")
    kinds = table.pop("hopping", ["nearest", "powerlaw"])
    kinds = [kinds] if isinstance(kinds, str) else list(kinds)
    sizes = table.pop("sizes", None)
    base = build(lattice.LatticeSpec, table, "lattice", {"t_grid": _tuple})
    report = {}
    for kind in kinds:
        spec = replace(base, hopping=kind)
        decay = lattice.build_fk(spec)
        curve = lattice.lattice_survival(spec, decay)
        if kind == "powerlaw":
            D = lattice.lattice_diffusion_coefficient(
                spec, sizes or [spec.L // 4, spec.L // 2, 3 * spec.L // 4, spec.L])
        else:
            D = lattice.lattice_diffusion_coefficient(spec)
        expo, window = lattice.approach_exponent(curve, D, a=spec.a, return_window=True)
        run.csv(f"survival_{kind}.csv", {"t_us": curve.x, "survival": curve.value,
                                         "L": [spec.L] * curve.x.size})
        k = lattice._kmag(spec.L, spec.a).ravel()
        order = np.argsort(k)
        run.csv(f"decay_{kind}.csv", {"k_nm_inv": k[order], "decay_per_us": decay.ravel()[order]})
        report[kind] = {"D": D, "approach_exponent": expo, "window_us": window}
        print(f"{kind}: D = {D:.5f}, approach exponent {expo:.3f}")
    run.json("exponents.json", report)


def cmd_cluster(run):
    from . import cluster

    table = run.section("cluster")
    task = table.pop("task", "p1_spectrum")
    consts = run.constants()
    if task == "p1_spectrum":
        lines = cluster.p1_subgroup_spectrum(table.get("B", 511.0), consts)
        run.csv("p1_lines.csv", {"omega": [f for f, _ in lines], "weight": [w for _, w in lines]})
        run.json("p1_lines.json", {"lines": lines})
    elif task == "leakage":
        B = table.get("B", 511.0)
        spec = build(cluster.HyperfineSpec, {k: table[k] for k in ("B", "theta", "rabi", "m_I")
                                             if k in table}, "cluster")
        center = B * consts.gamma_e
        span = table.get("span", 2 * consts.A_par_2)
        om = np.linspace(center - span, center + span, int(table.get("n_omega", 2001)))
        t = np.linspace(0, table.get("t_max", 20.0), int(table.get("n_t", 1001)))
        sw = cluster.leakage_sweep(spec, om, t, consts)
        x, y = cluster.find_resonances(sw, n=int(table.get("n_resonances", 2)))
        gap, at = cluster.effective_coupling(spec, consts)
        run.csv("leakage.csv", {"omega": sw.x, "depolarization": sw.value})
        run.json("leakage.json", {"resonances": {"omega": x, "depolarization": y,
                                                 "offset_from_gamma_e_B": x - center},
                                  "effective_coupling": gap, "coupling_at": at})
    elif task == "odmr":
        mode = table.get("mode", "off")
        c = cluster.odmr_spectrum(table.get("rho_p1", 110.0), table.get("r_cut", 1.75),
                                  mode=mode, realizations=int(table.get("realizations", 500)),
                                  seed=run.seed or 0, constants=consts)
        run.csv("odmr.csv", {"omega": c.x, "intensity": c.value})
    elif task == "deer":
        t = np.linspace(0, table.get("t_max", 3.0), int(table.get("n_t", 61)))
        rates_ = {}
        cols = {"t_us": t}
        for nu in table.get("nu", [1 / 12, 1 / 4, 1 / 3]):
            c = cluster.deer_decay(table.get("rho_p1", 110.0), nu, t,
                                   int(table.get("realizations", 200)), seed=run.seed or 0,
                                   constants=consts)
            cols[f"coherence_nu{nu:.4f}"] = c.value
            rates_[f"{nu:.6f}"] = c.meta["rate"]
        run.csv("deer.csv", cols)
        run.json("deer.json", {"rates": rates_})
    else:
        raise ConfigError(f"[cluster] unknown task '{task}'")
    print(f"cluster task {task} done")


def cmd_fit(run):
    from . import fitkit

    table = run.section("fit")
    path = Path(require(table, "data", "fit"))
    if not path.is_absolute() and run.config_path is not None:
        path = Path(run.config_path).parent / path
    if not path.exists():
        raise ConfigError(f"[fit] data file not found: {path}")
    curve = curve_from_csv(path)
    free = {k: tuple(v) for k, v in require(table, "free", "fit").items()}
    prob = fitkit.FitProblem(curve, table.get("model", "undriven"), free,
                             dict(table.get("fixed", {})),
                             {k: tuple(v) for k, v in table.get("priors", {}).items()},
                             bool(table.get("log_residuals", False)),
                             int(table.get("n_starts", 0)), run.seed or 0)
    driven = table.get("driven")
    if driven is not None:
        _fit_driven_pair(run, prob, driven, int(table.get("draws", 100)))
        return
    if prob.priors:
        fr = fitkit.resample_uncertainty(prob, int(table.get("draws", 100)), run.seed or 0)
        run.csv("samples.csv", fr.samples)
    else:
        fr = fitkit.fit_curve(prob)
    out = fr.to_json()
    if "D" in fr.values:
        out["gD"] = fitkit.geometric_correction(fr.values["D"])
    run.json("fit.json", out)
    print(" ".join(f"{k}={v:.5g}" for k, v in fr.values.items()))


def _fit_driven_pair(run, prob, table, draws):
    from . import fitkit

    path = Path(require(table, "data", "fit.driven"))
    if not path.is_absolute() and run.config_path is not None:
        path = Path(run.config_path).parent / path
    if not path.exists():
        raise ConfigError(f"[fit.driven] data file not found: {path}")
    if not prob.priors:
        raise ConfigError("[fit] driven comparison needs [fit.priors]")
    free = {k: tuple(v) for k, v in table.get("free", {"D_dr": [1.0, 1e-3, 100.0]}).items()}
    dprob = fitkit.FitProblem(curve_from_csv(path), table.get("model", prob.model), free,
                              {**prob.fixed, **dict(table.get("fixed", {}))},
                              log_residuals=prob.log_residuals, seed=prob.seed)
    samples, failures = fitkit.resample_driven_pair(prob, dprob, draws, run.seed or 0)
    ok = np.isfinite(samples["D"]) & np.isfinite(samples["D_dr"])
    frac = float(np.mean(samples["D_dr"][ok] > samples["D"][ok])) if ok.any() else float("nan")
    run.csv("pairs.csv", samples)
    summary = {k: {"median": float(np.nanmedian(v)), "std": float(np.nanstd(v, ddof=1))}
               for k, v in samples.items()}
    run.json("fit.json", {"pairs": summary, "fraction_D_dr_greater": frac,
                          "failures": failures, "draws": draws})
    print(f"D_dr > D in {100 * frac:.1f}% of {int(ok.sum())} paired draws")


COMMANDS = {
    "ensemble": cmd_ensemble,
    "ctrw": cmd_ctrw,
    "survival": cmd_survival,
    "analytic": cmd_analytic,
    "lattice": cmd_lattice,
    "cluster": cmd_cluster,
    "fit": cmd_fit,
}


def make_parser():
    p = argparse.ArgumentParser(prog="spinhydro", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", help="TOML or JSON run configuration")
        s.add_argument("--seed", type=int, help="global seed (overrides the config)")
        s.add_argument("--threads", type=int, default=None)
        s.add_argument("--out", default=None, help="output directory")
    return p


def main(argv=None):
    parser = make_parser()
    args = parser.parse_args(argv)
    try:
        cfg, raw, digest = load_config(args.config)
        seed = args.seed if args.seed is not None else cfg.get("seed")
        if seed is not None and (not isinstance(seed, int) or seed < 0 or seed >= 2**64):
            raise ConfigError("seed must be an unsigned 64-bit integer")
        threads = args.threads or int(cfg.get("threads", 1))
        out = args.out or cfg.get("out", "spinhydro_out")
        run = Run(cfg, raw, digest, out, seed, threads, args.config)
        COMMANDS[args.command](run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, RuntimeError, ValueError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
