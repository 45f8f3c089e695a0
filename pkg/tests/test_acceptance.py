"""Acceptance suite: one test per criterion, each recording a pass/fail line."""
import functools
import math
import time

import numpy as np
from scipy.integrate import simpson

from conftest import B_JUMP, ETA_H, PLANTS, SIGMA0_H, plant_latent, plant_law, record_acceptance
from windtrade import io as wio
from windtrade.calib import ProductionSample, VarianceTargets, fit_production, fit_theta_parametric
from windtrade.cli import main
from windtrade.dist import UniformLaw, atoms, cdf, density, f_prod, from_latent, sample
from windtrade.forecast import (
    ParametricTheta, constant_vol_schedule, error_variance, production_variance, simulate_paths,
)
from windtrade.frictionless import (
    AveragePenalty, DriftCurve, QuadraticPenalty, exact_forecast_plan,
    no_forecast_plan, solve_xi_thresholds,
)
from windtrade.impact import (
    HJBConfig, ImpactParams, buy_sell_outcome, pontryagin_plan, quadratic_terminal_position,
    simulate_policy, solve_hjb,
)
from windtrade.synth import forecast_records, production_series

T = 6.0
KAPPA = 200.0
REF_GAMMA = 4800.0 / 576  # reference impact coefficient in day units


def criterion(number, title):
    """Run the check, record PASS/FAIL (also on exceptions) and assert."""
    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            t0 = time.perf_counter()
            try:
                ok, detail = fn(*args, **kwargs)
            except Exception as exc:
                record_acceptance(number, title, False, f"error: {exc!r}")
                raise
            detail = f"{detail}; {time.perf_counter() - t0:.1f} s"
            record_acceptance(number, title, ok, detail)
            assert ok, detail
        return run
    return wrap


def reference_schedule(lat, frac=1.0):
    return constant_vol_schedule(frac * lat.nu_X / math.sqrt(T), T)


def paired(a, b):
    d = np.asarray(a) - np.asarray(b)
    return d.mean(), d.std(ddof=1) / math.sqrt(d.size)


# -- 1 -----------------------------------------------------------------------------

# [PAPER] fitted plant table
@criterion(1, "parameter map reproduces the plant table")
def test_criterion_01_parameter_map():
    t0 = time.perf_counter()
    worst = 0.0
    for k, p in PLANTS.items():
        d = from_latent(plant_latent(k))
        worst = max(worst, abs(d.mu - p["mu"]), abs(d.nu - p["nu"]), abs(d.zeta - p["zeta"]))
    elapsed = time.perf_counter() - t0
    return worst < 1e-4 and elapsed < 1.0, f"max abs error {worst:.2e}, {elapsed * 1e3:.1f} ms"


# -- 2 -----------------------------------------------------------------------------

# [DERIVED] synthetic data from known parameters
@criterion(2, "calibration round trip")
def test_criterion_02_calibration_round_trip():
    t0 = time.perf_counter()
    worst = 0.0
    for k in PLANTS:
        truth = plant_law(k)
        draws = sample(truth, np.random.default_rng(100 + k), 100_000)
        fit, _ = fit_production(ProductionSample(draws))
        worst = max(worst, abs(fit.mu - truth.mu), abs(fit.nu - truth.nu), abs(fit.zeta - truth.zeta))
    lat = plant_latent(1)
    gen = ParametricTheta(SIGMA0_H, ETA_H, B_JUMP, T=144.0, cap=lat.nu_X ** 2, tau_star=120.0)
    h = np.arange(0.25, 144.01, 0.25)
    v = error_variance(lat.curve, lat, gen.theta_of_horizon(h))
    sched, _ = fit_theta_parametric(lat.curve, lat, VarianceTargets(h, v))
    rel = max(abs(sched.sigma0 / SIGMA0_H - 1), abs(sched.eta / ETA_H - 1), abs(sched.b / B_JUMP - 1))
    elapsed = time.perf_counter() - t0
    ok = worst <= 0.05 and rel <= 0.10 and elapsed < 120
    return ok, f"production max error {worst:.4f}, theta max relative error {rel:.1e}"


# -- 3 -----------------------------------------------------------------------------

# [DERIVED] closed-form terminal law and error-variance map vs simulation
@criterion(3, "forecast model consistency")
def test_criterion_03_forecast_consistency():
    lat = plant_latent(1)
    sched = ParametricTheta(SIGMA0_H, ETA_H, B_JUMP, T=144.0, cap=lat.nu_X ** 2, tau_star=120.0)
    grid = np.arange(0.0, 144.01, 8.0)
    n = 100_000
    p = simulate_paths(lat.curve, lat, sched, grid, n, seed=33)
    d = np.diff(p.f, axis=1)
    sd = d.std(axis=0, ddof=1)
    # beyond the cap horizon X does not move: those increments must vanish exactly
    still = sd == 0
    z_mart = np.max(np.abs(d.mean(axis=0)[~still]) / (sd[~still] / math.sqrt(n)))
    z_mart = z_mart if np.all(d[:, still] == 0) else np.inf
    law = from_latent(lat)
    srt = np.sort(p.realized)
    y = np.unique(srt)
    right = np.searchsorted(srt, y, side="right") / n
    left = np.searchsorted(srt, y, side="left") / n
    inner = (y > 0) & (y < 1)
    ks = max(np.max(np.abs(right - cdf(law, y))), np.max(np.abs(left - cdf(law, y))[inner]))
    err = (p.f[:, :-1] - p.f[:, -1:]) ** 2
    target = error_variance(lat.curve, lat, sched.theta(grid[:-1]))
    z_var = np.max(np.abs(err.mean(axis=0) - target) / (err.std(axis=0, ddof=1) / math.sqrt(n)))
    ok = z_mart < 3 and ks < 0.005 and z_var < 3
    return ok, f"martingale max |z| {z_mart:.2f}, KS {ks:.4f}, error-variance max |z| {z_var:.2f}"


# -- 4 -----------------------------------------------------------------------------

# [DERIVED] endpoint values from the production moments
@criterion(4, "error-variance map endpoints and monotonicity")
def test_criterion_04_phi_monotone():
    worst, mono = 0.0, True
    for k in PLANTS:
        lat = plant_latent(k)
        nu2 = lat.nu_X ** 2
        worst = max(worst, abs(error_variance(lat.curve, lat, 0.0)),
                    abs(error_variance(lat.curve, lat, nu2) - production_variance(lat)))
        mono &= bool(np.all(np.diff(error_variance(lat.curve, lat, np.linspace(0, nu2, 50))) > 0))
    return worst < 1e-8 and mono, f"endpoint error {worst:.1e}, strictly increasing {mono}"


# -- 5 -----------------------------------------------------------------------------

def law_expectation_grid(law, n=20001):
    """Independent quadrature for ``E[g(F)]``: atoms plus Simpson on the density."""
    y = np.linspace(0.0, 1.0, n)
    dens = np.asarray(density(law, np.clip(y, 1e-13, 1 - 1e-13)), float)
    p0, p1 = atoms(law)
    return y, dens, p0, p1


def brute_no_forecast(pen, law, m_star):
    y, dens, p0, p1 = law_expectation_grid(law)

    def obj(q):
        q = np.atleast_1d(q)[:, None]
        inner = simpson(pen.ubar(y[None, :] - q) * dens[None, :], x=y, axis=1)
        return q[:, 0] * m_star + p0 * pen.ubar(-q[:, 0]) + p1 * pen.ubar(1 - q[:, 0]) + inner

    return refine_min(obj, 0.0, 2.0)


def refine_min(obj, lo, hi, n=201, rounds=4):
    for _ in range(rounds):
        q = np.linspace(lo, hi, n)
        v = obj(q)
        j = int(np.argmin(v))
        step = q[1] - q[0]
        lo, hi = max(q[0], q[j] - 2 * step), min(q[-1], q[j] + 2 * step)
    return float(v[j])


def random_drift(rng, T_):
    a, b = rng.uniform(-0.4, 0.1), rng.uniform(-0.1, 0.1)
    return DriftCurve(mu=lambda t: a + b * np.asarray(t), T=T_,
                      antiderivative=lambda t: a * np.asarray(t) + 0.5 * b * np.asarray(t) ** 2)


def uniform_u_tilde(kappa, x):
    if x < -0.5:
        return kappa / 2 * (x * x + 1 / 12)
    if x <= 0.5:
        return kappa / 6 * (0.5 - x) ** 3
    return 0.0


def uniform_I_tilde(kappa, z):
    return z / kappa if z < -kappa / 2 else 0.5 - math.sqrt(-2 * z / kappa)


# [DERIVED] brute-force minimization with Simpson quadrature
@criterion(5, "frictionless closed forms")
def test_criterion_05_frictionless_closed_forms():
    rng = np.random.default_rng(55)
    err_exact = err_nof = 0.0
    for _ in range(20):
        T_ = rng.uniform(1.0, 10.0)
        d = random_drift(rng, T_)
        pen = QuadraticPenalty(rng.uniform(20.0, 400.0))
        law = from_latent(plant_latent(int(rng.integers(1, 4))))
        F = rng.uniform(0.0, 1.0)
        rem = d.remaining(np.linspace(0.0, T_, 60001))
        r_min = min(float(rem.min()), 0.0)
        _, v_exact = exact_forecast_plan(pen, d, F)
        brute = refine_min(lambda q: q * r_min + pen.ubar(F - q), 0.0, 2.0)
        err_exact = max(err_exact, abs(v_exact - brute))
        _, v_nof = no_forecast_plan(pen, law, d)
        err_nof = max(err_nof, abs(v_nof - brute_no_forecast(pen, law, r_min)))
    err_u = err_i = 0.0
    for kappa in (1.0, 7.0, 200.0):
        avg = AveragePenalty(QuadraticPenalty(kappa), UniformLaw())
        for x in np.linspace(-1.5, 0.9, 49):
            err_u = max(err_u, abs(avg.value(x) - uniform_u_tilde(kappa, x)))
        for z in np.linspace(-2.0 * kappa, -1e-3, 49):
            err_i = max(err_i, abs(avg.inv_du(z) - uniform_I_tilde(kappa, z)))
    ok = err_exact < 1e-4 and err_nof < 1e-4 and err_u < 1e-10 and err_i < 1e-10
    return ok, (f"exact {err_exact:.1e}, no-forecast {err_nof:.1e}, "
                f"u-tilde {err_u:.1e}, I-tilde {err_i:.1e}")


# -- 6 -----------------------------------------------------------------------------

# [DERIVED] Monte Carlo residual and limiting cases
@criterion(6, "discrete-update threshold equation")
def test_criterion_06_thresholds():
    lat = plant_latent(1)
    sched = reference_schedule(lat)
    d = DriftCurve.constant(-0.2, T)
    pen = QuadraticPenalty(KAPPA)
    times = np.linspace(0.0, T, 9)
    tab = solve_xi_thresholds(pen, lat.curve, lat, sched, times, d)
    paths = simulate_paths(lat.curve, lat, sched, times, 100_000, seed=66)
    xi = np.column_stack([tab.xi_at(k, paths.x[:, k]) for k in range(tab.n)])
    tail_max = np.maximum.accumulate(xi[:, ::-1], axis=1)[:, ::-1]
    z_max = 0.0
    for k in range(tab.n):
        sell = xi[:, k] > 0
        r = pen.dubar(paths.realized[sell] - tail_max[sell, k]) - tab.targets[k]
        z_max = max(z_max, abs(r.mean()) / (r.std(ddof=1) / math.sqrt(r.size)))
    one = solve_xi_thresholds(pen, lat.curve, lat, sched, [0.0, T], d)
    rule, _ = no_forecast_plan(pen, from_latent(lat), d)
    e1 = abs(one.xi_at(0, 1.0) - rule.block)
    perfect = ParametricTheta(0.0, 0.0, 0.0, T=T, cap=lat.nu_X ** 2)
    tab0 = solve_xi_thresholds(pen, lat.curve, lat, perfect, np.linspace(0, T, 4), d)
    x0 = np.exp(tab0.log_x[0])
    e0 = np.max(np.abs(tab0.xi[0] - np.maximum(f_prod(lat.curve, x0) - pen.inv_du(-1.2), 0.0)))
    ok = z_max < 3 and e1 < 1e-6 and e0 < 1e-6
    return ok, f"residual max |z| {z_max:.2f}, n=1 error {e1:.1e}, theta=0 error {e0:.1e}"


# -- 7 -----------------------------------------------------------------------------

# [DERIVED] hand-solved Euler-Lagrange system
@criterion(7, "impact closed forms")
def test_criterion_07_impact_closed_forms():
    worst = 0.0
    for gamma, F in ((4800.0, 0.5), (4800.0, 0.0), (10.0, 1.0), (1.0, 0.02), (0.2, 0.3)):
        ip = ImpactParams(gamma, DriftCurve.constant(-0.2, T), QuadraticPenalty(KAPPA))
        plan = pontryagin_plan(ip, F)
        worst = max(worst, abs(plan.phi_T - quadratic_terminal_position(KAPPA, -0.2, gamma, T, F)[0]))
    branches = {(-0.2 * T ** 2 / 2 + g * F) >= 0 for g, F in ((4800.0, 0.5), (1.0, 0.02))}
    ref = pontryagin_plan(ImpactParams(4800.0, DriftCurve.constant(-0.2, T), QuadraticPenalty(KAPPA)), 0.5)
    affine = np.max(np.abs(np.diff(ref.psi, 2))) < 1e-12 and ref.psi[-1] >= 0 and np.all(np.diff(ref.psi) < 0)
    stop = pontryagin_plan(ImpactParams(1.0, DriftCurve.constant(-0.2, T), QuadraticPenalty(KAPPA)), 0.02)
    t_stop = quadratic_terminal_position(KAPPA, -0.2, 1.0, T, 0.02)[1]
    dt = stop.times[1] - stop.times[0]
    stops = (abs(stop.times[np.argmax(stop.psi <= 0)] - t_stop) <= dt
             and np.all(stop.psi[stop.times > t_stop + dt] == 0))
    ok = worst < 1e-8 and branches == {True, False} and affine and stops
    return ok, f"max |phi_T - closed form| {worst:.1e}, affine {affine}, stops at t* {stops} (t*={t_stop:.3f})"


# -- 8 -----------------------------------------------------------------------------

# [DERIVED] noise-free closed form, grid refinement, Monte Carlo
@criterion(8, "PDE validation")
def test_criterion_08_pde():
    lat = plant_latent(1)
    pen = QuadraticPenalty(KAPPA)
    ip_det = ImpactParams(4800.0, DriftCurve.constant(-0.2, T), pen)
    still = ParametricTheta(0.0, 0.0, 0.0, T=T, cap=lat.nu_X ** 2)
    sol0 = solve_hjb(ip_det, lat.curve, still, HJBConfig(), nu_X_sq=lat.nu_X ** 2)
    rel = max(abs(sol0.value(0.0, 0.0, x) / pontryagin_plan(ip_det, float(f_prod(lat.curve, x))).value - 1)
              for x in (1.0, 1.5, 2.5, 5.0))
    ip = ImpactParams(REF_GAMMA, DriftCurve.constant(-0.2, T), pen)
    sched = reference_schedule(lat)
    grids = [HJBConfig(n_t=61, n_phi=76, n_y=76), HJBConfig(), HJBConfig(n_t=241, n_phi=301, n_y=301)]
    sols = [solve_hjb(ip, lat.curve, sched, g, nu_X_sq=lat.nu_X ** 2) for g in grids]
    w = [s.value(0.0, 0.0, 1.0) for s in sols]
    ratio = (w[0] - w[1]) / (w[1] - w[2])
    paths = simulate_paths(lat.curve, lat, sched, np.linspace(0, T, 121), 10_000, seed=88)
    pen_mc = simulate_policy(sols[1], paths, ip).penalty
    se = pen_mc.std(ddof=1) / math.sqrt(pen_mc.size)
    tol = 3 * se + abs(w[1] - w[0])
    gap = abs(pen_mc.mean() - w[1])
    ok = rel < 0.02 and 1.5 < ratio < 3.0 and gap < tol
    return ok, (f"sigma=0 max relative error {rel:.2%}, refinement ratio {ratio:.2f}, "
                f"|MC - w(0,0,1)| {gap:.4f} < {tol:.4f}")


# -- 9 -----------------------------------------------------------------------------

# [PAPER] published qualitative orderings
@criterion(9, "realized-penalty orderings")
def test_criterion_09_quality():
    lat = plant_latent(1)
    ip = ImpactParams(REF_GAMMA, DriftCurve.constant(-0.2, T), QuadraticPenalty(KAPPA))
    grid = np.linspace(0, T, 121)
    out = {}
    for frac in (0.5, 1.0):
        sched = reference_schedule(lat, frac)
        sol = solve_hjb(ip, lat.curve, sched, HJBConfig(), nu_X_sq=lat.nu_X ** 2)
        paths = simulate_paths(lat.curve, lat, sched, grid, 10_000, seed=99)
        out[frac] = (simulate_policy(sol, paths, ip).penalty, paths)
    low, high = out[0.5][0], out[1.0][0]
    bs, _ = buy_sell_outcome(REF_GAMMA, ip.drift, ip.penalty, out[1.0][1])
    m, se = paired(bs.penalty, high)
    ok = low.mean() < high.mean() and np.median(low) < 0 and m < -3 * se
    return ok, (f"mean 33% {low.mean():.4f} < 66% {high.mean():.4f}, median 33% {np.median(low):.4f}, "
                f"buy_sell - hjb {m:.4f} (paired SE {se:.4f})")


# -- 10 ----------------------------------------------------------------------------

# [DERIVED] conditional expectation estimated along paths
@criterion(10, "buy/sell first-order condition")
def test_criterion_10_first_order_condition():
    lat = plant_latent(1)
    d = DriftCurve.constant(-0.2, T)
    pen = QuadraticPenalty(KAPPA)
    times = np.linspace(0, T, 721)
    paths = simulate_paths(lat.curve, lat, reference_schedule(lat), times, 10_000, seed=1010)
    out, rates = buy_sell_outcome(REF_GAMMA, d, pen, paths)
    z = []
    for t in (0.0, 1.0, 2.5, 4.0, 5.5):
        k = int(np.searchsorted(times, t))
        r = REF_GAMMA * rates[:, k] + d.integral(t, T) - pen.du(out.f_T - out.phi_T)
        z.append(abs(r.mean()) / (r.std(ddof=1) / math.sqrt(r.size)))
    return max(z) < 3, "max |z| over probe times " + f"{max(z):.2f}"


# -- 11 ----------------------------------------------------------------------------

FAST = """
[numerics]
hjb_n_t = 61
hjb_n_phi = 76
hjb_n_y = 76
threshold_updates = 4
threshold_n_x = 101
threshold_n_m = 201

[run]
seed = 11
n_paths = 1000
"""


def cli_outputs(root, tag):
    """Run every command once; return the bytes of everything written."""
    lat = plant_latent(1)
    d = root / "in"
    d.mkdir(exist_ok=True)
    if not (d / "p.csv").exists():
        t, p = production_series(lat, 5000, seed=1)
        wio.write_production(d / "p.csv", t, p)
        gen = ParametricTheta(SIGMA0_H, ETA_H, B_JUMP, T=144.0, cap=lat.nu_X ** 2, tau_star=120.0)
        issue, target, fc, pt, pk = forecast_records(lat, gen, np.arange(6.0, 145.0, 6.0), 300, seed=2)
        wio.write_forecasts(d / "f.csv", issue, target, fc)
        wio.write_production(d / "fp.csv", pt, pk)
        text = open("configs/reference.ini").read()
        (d / "c.ini").write_text(text[:text.index("[numerics]")] + FAST)
    out = root / tag
    out.mkdir()
    cmds = [["fit-production", "--data", d / "p.csv", "--rated-power", 1000, "--out", out / "prod.json"]]
    for mode in ("parametric", "nonparametric"):
        cmds.append(["fit-theta", "--forecasts", d / "f.csv", "--production", d / "fp.csv",
                     "--params", out / "prod.json", "--rated-power", 1000, "--mode", mode,
                     "--out", out / f"theta_{mode}.json"])
    for policy in ("hjb", "thresholds"):
        cmds.append(["solve", "--config", d / "c.ini", "--policy", policy,
                     "--out-grid", out / f"{policy}_grid.bin", "--out-policy", out / f"{policy}_policy.bin"])
    for policy in ("exact", "no_forecast", "thresholds", "hjb", "buy_sell", "never_trade"):
        cmds.append(["simulate", "--config", d / "c.ini", "--policy", policy, "--out", out / f"{policy}.csv"])
    codes = [main([str(a) for a in c]) for c in cmds]
    return codes, {f.name: f.read_bytes() for f in sorted(out.iterdir())}


# [TRIVIAL] byte comparison of two runs
@criterion(11, "determinism of every command")
def test_criterion_11_determinism(tmp_path):
    codes_a, a = cli_outputs(tmp_path, "a")
    codes_b, b = cli_outputs(tmp_path, "b")
    same = a.keys() == b.keys() and all(a[k] == b[k] for k in a)
    ok = same and set(codes_a) == {0} and codes_a == codes_b
    return ok, f"{len(a)} output files byte-identical: {same}, exit codes {sorted(set(codes_a))}"

