"""Command-line interface.

Subcommands: ``fit-production``, ``fit-theta``, ``solve`` and ``simulate``.
Exit codes: 0 success, 2 unreadable input or invalid configuration, 3 fit
failure, 4 explicit-scheme step limit exceeded.

Unit conversions happen here.  Core modules work on positions in units of
rated power, time in days, and money in EUR:

* ``kappa = 2 P R^2`` for a penalty ``P x^2`` (EUR/MWh^2) and rated power ``R`` (MW);
* ``mu = drift * R`` for a drift in EUR/MWh per day;
* ``gamma = G R^2 / 576`` for an impact coefficient ``G`` defined by the cost
  rate ``G/2 * (selling rate in MWh/h)^2`` EUR per day.

Hourly alternatives (``drift_eur_per_mwh_per_hour``, ``gamma_eur_h_per_mwh2``)
are converted to these by a factor 24.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from pathlib import Path

import numpy as np

from . import io as wio
from .calib import (
    CalibrationError, ProductionSample, error_variances_from_data, fit_production,
    fit_theta_nonparametric, fit_theta_parametric,
)
from .dist import LatentParams, TruncatedLogNormal, to_latent
from .forecast import ParametricTheta, TabulatedTheta, constant_vol_schedule
from .frictionless import DriftCurve, QuadraticPenalty, ThresholdConfig, solve_xi_thresholds
from .impact import CFLError, HJBConfig, ImpactParams, solve_hjb
from .mc import POLICIES, ExperimentSpec, records_csv, run_experiment, summary_json

EXIT_OK, EXIT_INPUT, EXIT_FIT, EXIT_CFL = 0, 2, 3, 4
HOURS_PER_DAY = 24.0


class ConfigError(ValueError):
    pass


# -- model assembly -------------------------------------------------------------

def piecewise_linear_drift(knots, values) -> DriftCurve:
    """Drift interpolated linearly between ``(t, mu)`` knots, constant outside."""
    t = np.asarray(knots, float)
    v = np.asarray(values, float)
    if t.size < 2 or np.any(np.diff(t) <= 0):
        raise ConfigError("drift table times must be strictly ascending (>= 2 knots)")
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (v[1:] + v[:-1]) * np.diff(t))])

    def mu(s):
        return np.interp(s, t, v)

    def prim(s):
        s = np.asarray(s, float)
        inside = np.clip(s, t[0], t[-1])
        k = np.clip(np.searchsorted(t, inside, side="right") - 1, 0, t.size - 2)
        ds = inside - t[k]
        slope = (v[k + 1] - v[k]) / (t[k + 1] - t[k])
        val = cum[k] + v[k] * ds + 0.5 * slope * ds ** 2
        return val + v[0] * np.minimum(s - t[0], 0.0) + v[-1] * np.maximum(s - t[-1], 0.0)

    return DriftCurve(mu=mu, T=float(t[-1]), antiderivative=prim)


def _parse_table(text: str):
    pts = []
    for item in text.split(","):
        if not item.strip():
            continue
        a, sep, b = item.partition(":")
        if not sep:
            raise ConfigError(f"drift table entry {item.strip()!r} is not 'time:value'")
        pts.append((float(a), float(b)))
    if not pts:
        raise ConfigError("empty drift table")
    return zip(*pts)


def schedule_from_json(payload: dict, T_days: float, cap: float):
    """Schedule in days from a fit-theta output (horizons in hours)."""
    mode = payload.get("mode")
    if mode == "parametric":
        return ParametricTheta(
            sigma0=payload["sigma0_per_sqrt_hour"] * math.sqrt(HOURS_PER_DAY),
            eta=payload["eta_per_hour"] * HOURS_PER_DAY, b=payload["b"], T=T_days, cap=cap,
            tau_star=payload["tau_star_hours"] / HOURS_PER_DAY)
    if mode == "nonparametric":
        h = np.asarray(payload["horizons_hours"], float) / HOURS_PER_DAY
        th = np.asarray(payload["theta"], float)
        if h[-1] < T_days - 1e-9:
            raise ConfigError(f"tabulated theta covers {h[-1]:.4g} days < horizon {T_days:.4g}")
        keep = h < T_days - 1e-12
        hh = np.append(h[keep], T_days)
        vals = np.append(th[keep], np.interp(T_days, h, th))
        return TabulatedTheta(tuple(T_days - hh[::-1]), tuple(vals[::-1]), T=T_days, cap=cap)
    raise ConfigError(f"theta file has unknown mode {mode!r}")


def build_model(cfg: dict) -> dict:
    """Core-unit objects from a parsed configuration."""
    pr, fc, mk, nm = cfg["production"], cfg["forecast"], cfg["market"], cfg["numerics"]
    for sec, key in (("production", "x_min"), ("production", "x_max"), ("production", "nu_x"),
                     ("market", "horizon_days"), ("market", "penalty_p_eur_per_mwh2")):
        if cfg[sec][key] is None:
            raise ConfigError(f"missing required key [{sec}] {key}")
    lat = LatentParams(nu_X=pr["nu_x"], x_min=pr["x_min"], x_max=pr["x_max"])
    T = mk["horizon_days"]
    R = mk["rated_power_mw"]
    if not (T > 0 and R > 0 and mk["penalty_p_eur_per_mwh2"] > 0):
        raise ConfigError("horizon, rated power and penalty must be positive")
    cap = lat.nu_X ** 2
    model = fc["model"]
    if model == "constant_vol":
        sig = fc["sigma_over_horizon"]
        if sig is None:
            raise ConfigError("constant_vol needs [forecast] sigma_over_horizon")
        if sig ** 2 + fc["jump_b"] ** 2 > cap * (1 + 1e-12):
            raise ConfigError("forecast variance over the horizon exceeds nu_x^2")
        sched = constant_vol_schedule(sig / math.sqrt(T), T, b=fc["jump_b"])
    elif model == "parametric":
        if fc["sigma0_per_sqrt_hour"] is None or fc["eta_per_hour"] is None:
            raise ConfigError("parametric needs sigma0_per_sqrt_hour and eta_per_hour")
        sched = schedule_from_json({"mode": "parametric", "sigma0_per_sqrt_hour": fc["sigma0_per_sqrt_hour"],
                                    "eta_per_hour": fc["eta_per_hour"], "b": fc["jump_b"],
                                    "tau_star_hours": fc["tau_star_hours"]}, T, cap)
    elif model == "file":
        if fc["theta_file"] is None:
            raise ConfigError("model = file needs [forecast] theta_file")
        try:
            payload = json.loads(Path(fc["theta_file"]).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read theta file: {exc}") from exc
        sched = schedule_from_json(payload, T, cap)
    else:
        raise ConfigError(f"unknown forecast model {model!r}")

    given = [k for k in ("drift_eur_per_mwh_per_day", "drift_eur_per_mwh_per_hour",
                         "drift_table_days_eur_per_mwh_per_day") if mk[k] is not None]
    if len(given) > 1:
        raise ConfigError(f"conflicting drift keys: {', '.join(given)}")
    if mk["drift_table_days_eur_per_mwh_per_day"] is not None:
        t, v = _parse_table(mk["drift_table_days_eur_per_mwh_per_day"])
        t, v = np.asarray(t), np.asarray(v) * R
        if abs(t[0]) > 1e-12 or abs(t[-1] - T) > 1e-9:
            raise ConfigError("drift table must span [0, horizon_days]")
        drift = piecewise_linear_drift(t, v)
    else:
        mu = mk["drift_eur_per_mwh_per_day"]
        if mk["drift_eur_per_mwh_per_hour"] is not None:
            mu = mk["drift_eur_per_mwh_per_hour"] * HOURS_PER_DAY
        drift = DriftCurve.constant(0.0 if mu is None else mu * R, T)
    penalty = QuadraticPenalty(2.0 * mk["penalty_p_eur_per_mwh2"] * R ** 2)
    G = mk["gamma_eur_day_per_mwh2_h2"]
    if mk["gamma_eur_h_per_mwh2"] is not None:
        if G is not None:
            raise ConfigError("conflicting gamma keys")
        G = mk["gamma_eur_h_per_mwh2"] * HOURS_PER_DAY
    gamma = None if G is None else G * R ** 2 / HOURS_PER_DAY ** 2
    hjb = HJBConfig(n_t=nm["hjb_n_t"], n_phi=nm["hjb_n_phi"], n_y=nm["hjb_n_y"],
                    phi_max=nm["hjb_phi_max"], max_substeps=nm["hjb_max_substeps"])
    thr = ThresholdConfig(n_x=nm["threshold_n_x"], n_m=nm["threshold_n_m"])
    if nm["threshold_updates"] < 1:
        raise ConfigError("threshold_updates must be >= 1")
    return {"lat": lat, "schedule": sched, "drift": drift, "penalty": penalty, "gamma": gamma,
            "hjb": hjb, "thresholds": thr, "T": T,
            "update_times": tuple(np.linspace(0.0, T, nm["threshold_updates"] + 1)),
            "hjb_times": tuple(np.linspace(0.0, T, hjb.n_t))}


def make_spec(model: dict, policy: str, n_paths: int, seed: int) -> ExperimentSpec:
    times = model["update_times"] if policy in ("exact", "no_forecast", "thresholds") else model["hjb_times"]
    return ExperimentSpec(lat=model["lat"], schedule=model["schedule"], drift=model["drift"],
                          penalty=model["penalty"], policy=policy, n_paths=n_paths, seed=seed,
                          times=times, gamma=model["gamma"], hjb=model["hjb"],
                          thresholds=model["thresholds"])


# -- commands ---------------------------------------------------------------------

def cmd_fit_production(args) -> int:
    data = wio.read_production(args.data, args.rated_power)
    if args.subsample < 1:
        raise ConfigError("--subsample must be >= 1")
    values = data.power[::args.subsample]
    sample = ProductionSample(values)
    d, report = fit_production(sample, n_levels=args.levels)
    lat = to_latent(d)
    wio.write_json(args.out, {
        "mu": d.mu, "nu": d.nu, "zeta": d.zeta,
        "mu_x": lat.mu_X, "nu_x": lat.nu_X, "x_min": lat.x_min, "x_max": lat.x_max,
        "objective": report.objective, "converged": report.converged,
        "n_samples": len(sample), "n_levels": args.levels, "subsample": args.subsample,
        "n_clamped_above_rated": data.n_clamped_high,
    })
    return EXIT_OK


def _read_params(path) -> TruncatedLogNormal:
    try:
        p = json.loads(Path(path).read_text())
        return TruncatedLogNormal(mu=float(p["mu"]), nu=float(p["nu"]), zeta=float(p["zeta"]))
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise wio.DataError(f"{path}: cannot read production parameters ({exc})") from exc


def cmd_fit_theta(args) -> int:
    d = _read_params(args.params)
    lat = to_latent(d)
    curve = lat.curve
    fc = wio.read_forecasts(args.forecasts, args.rated_power)
    prod = wio.read_production(args.production, args.rated_power)
    pairs, dropped = wio.align(fc, prod)
    if dropped:
        print(f"warning: {dropped} forecast(s) without production within 5 minutes dropped",
              file=sys.stderr)
    if fc.n_clamped:
        print(f"warning: {fc.n_clamped} forecast(s) outside [0, rated power] clamped", file=sys.stderr)
    if pairs.shape[0] == 0:
        raise CalibrationError("no forecast could be matched to production")
    targets = error_variances_from_data(pairs, bucket=args.bucket_hours, min_count=args.min_count)
    out = {"mode": args.mode, "time_unit": "hour", "nu_x": lat.nu_X,
           "n_pairs": int(pairs.shape[0]), "n_dropped": dropped, "n_clamped": fc.n_clamped,
           "target_horizons_hours": targets.horizons.tolist(),
           "target_variances": targets.variances.tolist()}
    if args.mode == "parametric":
        sched, report = fit_theta_parametric(curve, lat, targets, seed=args.seed)
        out.update({"sigma0_per_sqrt_hour": sched.sigma0, "eta_per_hour": sched.eta,
                    "b": sched.b, "tau_star_hours": sched.tau_star, "cap": sched.cap,
                    "objective": report.objective, "converged": report.converged})
    else:
        sched = fit_theta_nonparametric(curve, lat, targets)
        h = sched.T - np.asarray(sched.times)[::-1]
        out.update({"horizons_hours": h.tolist(), "theta": list(sched.values)[::-1],
                    "cap": sched.cap})
    wio.write_json(args.out, out)
    return EXIT_OK


def _load_config(path) -> dict:
    return build_model(wio.read_config(path))


def cmd_solve(args) -> int:
    model = _load_config(args.config)
    if args.policy == "hjb":
        if model["gamma"] is None:
            raise ConfigError("policy hjb needs [market] gamma_eur_day_per_mwh2_h2")
        ip = ImpactParams(model["gamma"], model["drift"], model["penalty"])
        sol = solve_hjb(ip, model["lat"].curve, model["schedule"], model["hjb"],
                        nu_X_sq=model["lat"].nu_X ** 2)
        wio.write_tensor(args.out_grid, sol.w)
        wio.write_tensor(args.out_policy, sol.psi)
        axes = [_axis("t_days", sol.t_grid), _axis("phi_rated_units", sol.phi_grid),
                _axis("log_x", sol.y_grid)]
        manifest = {
            "policy": "hjb", "format": "WTTENS01 little-endian float64, C order",
            "tensors": {
                Path(args.out_grid).name: {"content": "value w(t, phi, x) in EUR", "axes": axes},
                Path(args.out_policy).name: {"content": "selling rate psi(t, phi, x) in rated units per day",
                                             "axes": axes},
            },
            "substeps": sol.substeps,
        }
    elif args.policy == "thresholds":
        tab = solve_xi_thresholds(model["penalty"], model["lat"].curve, model["lat"],
                                  model["schedule"], model["update_times"], model["drift"],
                                  model["thresholds"])
        grid = np.vstack(tab.log_x)
        wio.write_tensor(args.out_grid, grid)
        wio.write_tensor(args.out_policy, np.vstack(tab.xi))
        manifest = {
            "policy": "thresholds", "format": "WTTENS01 little-endian float64, C order",
            "update_times_days": tab.times.tolist(),
            "tensors": {
                Path(args.out_grid).name: {"content": "log x nodes per decision time (row k = stage k)",
                                           "shape": list(grid.shape)},
                Path(args.out_policy).name: {"content": "threshold xi_k(x) on those nodes (rated units)",
                                             "shape": list(grid.shape)},
            },
            "sum_drift_increments": tab.targets.tolist(),
        }
    else:
        raise ConfigError("solve supports --policy hjb or thresholds")
    wio.write_json(_manifest_path(args.out_policy), manifest)
    return EXIT_OK


def _axis(name, grid):
    return {"name": name, "start": float(grid[0]), "stop": float(grid[-1]), "count": int(grid.size)}


def _manifest_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.name + ".manifest.json")


def _summary_path(path) -> Path:
    p = Path(path)
    return p.with_name(p.stem + ".summary.json")


def cmd_simulate(args) -> int:
    cfg = wio.read_config(args.config)
    model = build_model(cfg)
    n_paths = cfg["run"]["n_paths"] if args.n_paths is None else args.n_paths
    seed = cfg["run"]["seed"] if args.seed is None else args.seed
    spec = make_spec(model, args.policy, n_paths, seed)
    res = run_experiment(spec)
    Path(args.out).write_text(records_csv(res.records))
    _summary_path(args.out).write_text(summary_json(res))
    hits = res.diagnostics.get("hits_phi_max", 0)
    if hits:
        print(f"warning: {hits} path(s) reached phi_max; consider a larger hjb_phi_max",
              file=sys.stderr)
    return EXIT_OK


# -- entry point ------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="windtrade", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    fp = sub.add_parser("fit-production", help="fit the truncated log-normal production law")
    fp.add_argument("--data", required=True, help="CSV with header timestamp,power (kW)")
    fp.add_argument("--rated-power", type=float, required=True, help="rated power in kW")
    fp.add_argument("--subsample", type=int, default=1, help="keep every n-th record")
    fp.add_argument("--levels", type=int, default=100, help="number of quantile levels")
    fp.add_argument("--out", required=True)
    fp.set_defaults(func=cmd_fit_production)

    ft = sub.add_parser("fit-theta", help="calibrate the remaining-variance schedule")
    ft.add_argument("--forecasts", required=True, help="CSV issue_time,target_time,forecast (kW)")
    ft.add_argument("--production", required=True, help="CSV timestamp,power (kW)")
    ft.add_argument("--params", required=True, help="output of fit-production")
    ft.add_argument("--rated-power", type=float, required=True, help="rated power in kW")
    ft.add_argument("--mode", choices=("parametric", "nonparametric"), default="parametric")
    ft.add_argument("--bucket-hours", type=float, default=0.25)
    ft.add_argument("--min-count", type=int, default=30)
    ft.add_argument("--seed", type=int, default=0, help="seed for multi-start jitter")
    ft.add_argument("--out", required=True)
    ft.set_defaults(func=cmd_fit_theta)

    so = sub.add_parser("solve", help="solve for a policy and write its tensors")
    so.add_argument("--config", required=True)
    so.add_argument("--policy", choices=("hjb", "thresholds"), default="hjb")
    so.add_argument("--out-grid", required=True)
    so.add_argument("--out-policy", required=True)
    so.set_defaults(func=cmd_solve)

    si = sub.add_parser("simulate", help="simulate realized penalties of a policy")
    si.add_argument("--config", required=True)
    si.add_argument("--policy", choices=POLICIES, required=True)
    si.add_argument("--n-paths", type=int, default=None)
    si.add_argument("--seed", type=int, default=None)
    si.add_argument("--out", required=True, help="per-path CSV; summary goes to <stem>.summary.json")
    si.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    with warnings.catch_warnings():
        warnings.simplefilter("always")
        warnings.showwarning = _print_warning
        try:
            return args.func(args)
        except (wio.DataError, ConfigError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        except CalibrationError as exc:
            print(f"error: fit failed: {exc}", file=sys.stderr)
            return EXIT_FIT
        except CFLError as exc:
            hint = ", ".join(f"{k}={v}" for k, v in exc.suggestion.items())
            print(f"error: {exc}; suggested grid: {hint}", file=sys.stderr)
            return EXIT_CFL
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT


def _print_warning(message, category, filename, lineno, file=None, line=None):
    print(f"warning: {message}", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
