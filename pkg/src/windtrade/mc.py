"""Monte Carlo experiments: realized penalties of selling policies on simulated forecasts.

Each path draws its normals from its own substream keyed by ``(seed, tag,
path index)``, so runs are reproducible and adding policies or paths never
changes existing draws.  ``compare`` simulates once on the union of the time
grids and reuses the paths for every policy (common random numbers).
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .dist import LatentParams, from_latent
from .forecast import ForecastPaths, ThetaSchedule, simulate_paths
from .frictionless import (
    AveragePenalty, DriftCurve, PenaltyFunction, ThresholdConfig, drift_minimum,
    solve_xi_thresholds, threshold_positions,
)
from .impact import (
    HJBConfig, ImpactParams, buy_sell_outcome, never_trade_outcome, simulate_policy, solve_hjb,
)

FRICTIONLESS = ("exact", "no_forecast", "thresholds")
IMPACT = ("hjb", "buy_sell", "never_trade")
POLICIES = FRICTIONLESS + IMPACT

RECORD_FIELDS = ("path", "f_T", "phi_T", "drift", "impact", "volume", "penalty")


@dataclass(frozen=True)
class ExperimentSpec:
    """One policy on one model instance.

    Frictionless policies (``exact``, ``no_forecast``, ``thresholds``) pay the
    clipped penalty ``ubar`` and no impact cost; impact policies (``hjb``,
    ``buy_sell``, ``never_trade``) pay ``u`` and need ``gamma``.  ``times`` is
    the simulation grid (for ``thresholds``: the forecast update times).
    """

    lat: LatentParams
    schedule: ThetaSchedule
    drift: DriftCurve
    penalty: PenaltyFunction
    policy: str
    n_paths: int
    seed: int
    times: tuple
    gamma: float | None = None
    hjb: HJBConfig = field(default_factory=HJBConfig)
    thresholds: ThresholdConfig = field(default_factory=ThresholdConfig)
    label: str = ""

    def __post_init__(self):
        if self.policy not in POLICIES:
            raise ValueError(f"unknown policy {self.policy!r}; choose from {POLICIES}")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        if self.policy in IMPACT and (self.gamma is None or self.gamma <= 0):
            raise ValueError(f"policy {self.policy!r} needs a positive gamma")
        t = np.asarray(self.times, float)
        if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0) or t[0] < 0:
            raise ValueError("times must be ascending, nonnegative, with at least 2 points")
        for T in (self.schedule.T, self.drift.T):
            if abs(t[-1] - T) > 1e-9 * max(1.0, T):
                raise ValueError("times, schedule and drift must share the horizon T")
        object.__setattr__(self, "times", tuple(float(v) for v in t))

    @property
    def T(self) -> float:
        return self.times[-1]

    @property
    def name(self) -> str:
        return self.label or self.policy


@dataclass(frozen=True)
class PenaltySummary:
    n: int
    mean: float
    se: float
    median: float
    quantiles: dict
    hist_edges: np.ndarray = field(repr=False)
    hist_counts: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "n": self.n, "mean": self.mean, "se": self.se, "median": self.median,
            "quantiles": {k: self.quantiles[k] for k in sorted(self.quantiles)},
            "histogram": {"edges": self.hist_edges.tolist(), "counts": self.hist_counts.tolist()},
        }


def summarize(penalty, bins: int = 50) -> PenaltySummary:
    x = np.asarray(penalty, float)
    n = x.size
    mean = float(np.sum(x) / n)
    se = float(np.std(x, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
    qs = np.quantile(x, [0.05, 0.25, 0.75, 0.95])
    lo, hi = float(x.min()), float(x.max())
    if hi <= lo:
        hi = lo + 1.0
    counts, edges = np.histogram(x, bins=bins, range=(lo, hi))
    return PenaltySummary(n, mean, se, float(np.median(x)),
                          {"q05": float(qs[0]), "q25": float(qs[1]), "q75": float(qs[2]),
                           "q95": float(qs[3])}, edges, counts)


@dataclass(frozen=True)
class ExperimentResult:
    spec: ExperimentSpec
    records: dict = field(repr=False)
    summary: PenaltySummary
    diagnostics: dict = field(default_factory=dict)

    @property
    def penalty(self) -> np.ndarray:
        return self.records["penalty"]


def _restrict(paths: ForecastPaths, times) -> ForecastPaths:
    """Columns of ``paths`` at ``times`` (which must be a subset of its grid)."""
    times = np.asarray(times, float)
    idx = np.searchsorted(paths.times, times)
    idx = np.clip(idx, 0, paths.times.size - 1)
    if not np.allclose(paths.times[idx], times, rtol=0, atol=1e-9):
        raise ValueError("requested times are not on the simulated grid")
    return ForecastPaths(paths.times[idx], paths.x[:, idx], paths.f[:, idx], paths.theta[idx])


def _records(f_T, phi_T, drift, impact, volume):
    n = f_T.size
    return {
        "path": np.arange(n), "f_T": f_T, "phi_T": phi_T, "drift": drift,
        "impact": impact, "volume": volume, "penalty": drift + impact + volume,
    }


def evaluate(spec: ExperimentSpec, paths: ForecastPaths, cache: dict | None = None):
    """Per-path records of ``spec.policy`` on given paths; returns ``(records, diagnostics)``."""
    cache = {} if cache is None else cache
    curve = spec.lat.curve
    pen = spec.penalty
    f_T = np.asarray(paths.realized, float)
    n = f_T.size
    zeros = np.zeros(n)
    diag = {}
    if spec.policy == "exact":
        _, m_star = drift_minimum(spec.drift)
        qty = f_T - float(pen.inv_du(m_star)) if m_star < 0 else f_T
        rec = _records(f_T, qty, qty * m_star, zeros, np.asarray(pen.ubar(f_T - qty), float))
    elif spec.policy == "no_forecast":
        _, m_star = drift_minimum(spec.drift)
        avg = AveragePenalty(pen, from_latent(spec.lat))
        block = avg.mean - avg.inv_du(m_star) if m_star < 0 else 0.0
        phi_T = np.maximum(f_T, block)
        rec = _records(f_T, phi_T, np.full(n, block * m_star), zeros,
                       np.asarray(pen.ubar(f_T - block), float))
        diag["block"] = float(block)
    elif spec.policy == "thresholds":
        key = ("xi", spec.lat, spec.schedule, spec.drift, pen, spec.times, spec.thresholds)
        if key not in cache:
            cache[key] = solve_xi_thresholds(pen, curve, spec.lat, spec.schedule, spec.times,
                                             spec.drift, spec.thresholds)
        tab = cache[key]
        phi = threshold_positions(tab, paths.x)
        last = phi[:, -1]
        rec = _records(f_T, np.maximum(f_T, last), phi @ tab.increments, zeros,
                       np.asarray(pen.ubar(f_T - last), float))
    else:
        ip = ImpactParams(float(spec.gamma), spec.drift, pen)
        if spec.policy == "hjb":
            key = ("hjb", spec.lat, spec.schedule, spec.drift, pen, spec.gamma, spec.hjb)
            if key not in cache:
                cache[key] = solve_hjb(ip, curve, spec.schedule, spec.hjb,
                                       nu_X_sq=spec.lat.nu_X ** 2)
            sol = cache[key]
            out = simulate_policy(sol, paths, ip)
            diag["hits_phi_max"] = out.hits_phi_max
            diag["hjb_substeps"] = sol.substeps
            diag["w0"] = float(np.mean(sol.value(0.0, 0.0, paths.x[:, 0])))
        elif spec.policy == "buy_sell":
            if not hasattr(pen, "kappa"):
                raise ValueError("buy_sell needs a quadratic penalty")
            out, _ = buy_sell_outcome(ip.gamma, spec.drift, pen, paths)
        else:
            out = never_trade_outcome(paths, ip)
        rec = _records(f_T, out.phi_T, out.drift, out.impact, out.volume)
    return rec, diag


def simulate_for(spec: ExperimentSpec, times=None) -> ForecastPaths:
    times = spec.times if times is None else times
    return simulate_paths(spec.lat.curve, spec.lat, spec.schedule, times, spec.n_paths, spec.seed)


def run_experiment(spec: ExperimentSpec, bins: int = 50) -> ExperimentResult:
    """Simulate ``spec.n_paths`` forecast paths and evaluate the policy on them."""
    paths = simulate_for(spec)
    rec, diag = evaluate(spec, paths)
    return ExperimentResult(spec, rec, summarize(rec["penalty"], bins), diag)


@dataclass(frozen=True)
class Comparison:
    results: list
    rows: list  # (name_a, name_b, mean_diff, paired_se, independent_se)

    def table(self) -> str:
        lines = [f"{'a':>14} {'b':>14} {'mean(a-b)':>14} {'paired se':>12} {'indep se':>12}"]
        for a, b, m, ps, ins in self.rows:
            lines.append(f"{a:>14} {b:>14} {m:14.6g} {ps:12.4g} {ins:12.4g}")
        return "\n".join(lines)


def compare(specs, seed: int | None = None, bins: int = 50) -> Comparison:
    """Evaluate several specs on common random numbers and report paired differences.

    Paths are simulated once per distinct model (latent law and schedule) on
    the union of all time grids, with the common ``seed``; every spec reads
    its own grid's columns from them.
    """
    specs = list(specs)
    if not specs:
        raise ValueError("no specs to compare")
    T = specs[0].T
    if any(abs(s.T - T) > 1e-9 * max(1.0, T) for s in specs):
        raise ValueError("specs must share the horizon T")
    n = specs[0].n_paths
    if any(s.n_paths != n for s in specs):
        raise ValueError("specs must use the same number of paths")
    seed = specs[0].seed if seed is None else seed
    union = np.unique(np.concatenate([np.asarray(s.times) for s in specs]))
    models, cache, results = {}, {}, []
    for s in specs:
        key = (s.lat, s.schedule)
        if key not in models:
            models[key] = simulate_paths(s.lat.curve, s.lat, s.schedule, union, n, seed)
        paths = _restrict(models[key], s.times)
        rec, diag = evaluate(s, paths, cache)
        results.append(ExperimentResult(s, rec, summarize(rec["penalty"], bins), diag))
    rows = []
    for i in range(len(results)):
        for j in range(i + 1, len(results)):
            a, b = results[i].penalty, results[j].penalty
            diff = a - b
            paired = float(np.std(diff, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")
            indep = float(np.sqrt(np.var(a, ddof=1) / n + np.var(b, ddof=1) / n)) if n > 1 else float("nan")
            rows.append((results[i].spec.name, results[j].spec.name,
                         float(np.sum(diff) / n), paired, indep))
    return Comparison(results, rows)


# -- output ---------------------------------------------------------------------

def records_csv(records: dict) -> str:
    """Per-path records as CSV text (17 significant digits, stable byte output)."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RECORD_FIELDS)
    cols = [records[k] for k in RECORD_FIELDS]
    for row in zip(*cols):
        w.writerow([str(int(row[0]))] + [format(float(v), ".17g") for v in row[1:]])
    return buf.getvalue()


def summary_json(result: ExperimentResult) -> str:
    payload = {"policy": result.spec.policy, "label": result.spec.label,
               "seed": result.spec.seed, "n_paths": result.spec.n_paths,
               "summary": result.summary.to_dict(), "diagnostics": result.diagnostics}
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"


def expected_penalty_never_trade(lat: LatentParams, pen: PenaltyFunction) -> float:
    """``E[u(F_T)]`` under the production law, by quadrature."""
    return float(from_latent(lat).expect(lambda f: float(pen.u(f))))
