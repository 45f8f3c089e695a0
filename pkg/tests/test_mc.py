import math

import numpy as np
import pytest

from conftest import plant_latent
from windtrade.forecast import constant_vol_schedule
from windtrade.frictionless import DriftCurve, QuadraticPenalty
from windtrade.impact import HJBConfig
from windtrade.mc import (
    ExperimentSpec, compare, expected_penalty_never_trade, records_csv, run_experiment,
    summarize, summary_json,
)

T = 6.0
HJB = HJBConfig(n_t=61, n_phi=76, n_y=76)  # coarse grid keeps the suite fast


def spec(policy, n_paths=4000, seed=5, sigma_frac=1.0, n_times=None, **kw):
    lat = plant_latent(1)
    impact = policy in ("hjb", "buy_sell", "never_trade")
    n_times = n_times or (HJB.n_t if impact else 9)
    base = dict(lat=lat, schedule=constant_vol_schedule(sigma_frac * lat.nu_X / math.sqrt(T), T),
                drift=DriftCurve.constant(-0.2, T), penalty=QuadraticPenalty(200.0),
                policy=policy, n_paths=n_paths, seed=seed, times=tuple(np.linspace(0, T, n_times)),
                gamma=4800.0 / 576 if impact else None, hjb=HJB)
    base.update(kw)
    return ExperimentSpec(**base)


# [TRIVIAL] invalid input raises
def test_spec_validation():
    with pytest.raises(ValueError, match="unknown policy"):
        spec("oracle")
    with pytest.raises(ValueError, match="gamma"):
        spec("hjb", gamma=None)
    with pytest.raises(ValueError):
        spec("exact", n_paths=0)
    with pytest.raises(ValueError, match="horizon"):
        spec("exact", times=(0.0, 1.0, 5.0))


# [DERIVED] expected penalty by quadrature
def test_never_trade_matches_quadrature():
    res = run_experiment(spec("never_trade", n_paths=20000))
    ref = expected_penalty_never_trade(res.spec.lat, res.spec.penalty)
    assert abs(res.summary.mean - ref) < 3 * res.summary.se


# [DERIVED] summary recomputed from records
def test_records_and_summary_consistency():
    res = run_experiment(spec("hjb", n_paths=2000))
    r = res.records
    assert np.allclose(r["penalty"], r["drift"] + r["impact"] + r["volume"], rtol=0, atol=1e-12)
    s = res.summary
    assert s.mean == pytest.approx(r["penalty"].mean(), rel=1e-13)
    assert s.median == np.median(r["penalty"])
    q = [s.quantiles[k] for k in ("q05", "q25", "q75", "q95")]
    assert q == sorted(q)
    assert s.hist_counts.sum() == res.spec.n_paths
    again = summarize(r["penalty"])
    assert again.to_dict() == s.to_dict()
    assert np.all(r["impact"] >= 0) and np.all(r["volume"] >= 0)


# [TRIVIAL] repeated run
def test_determinism_and_substreams():
    a = run_experiment(spec("thresholds", n_paths=500))
    b = run_experiment(spec("thresholds", n_paths=500))
    assert records_csv(a.records) == records_csv(b.records)
    assert summary_json(a) == summary_json(b)
    more = run_experiment(spec("thresholds", n_paths=800))
    assert np.array_equal(more.records["f_T"][:500], a.records["f_T"])
    other = run_experiment(spec("thresholds", n_paths=500, seed=6))
    assert not np.array_equal(other.records["f_T"], a.records["f_T"])


# [TRIVIAL] paired difference is zero
def test_identical_specs_zero_difference():
    cmp = compare([spec("hjb", label="a"), spec("hjb", label="b")])
    (_, _, mean, paired, _), = cmp.rows
    assert mean == 0.0 and paired == 0.0


# [TRIVIAL] invalid input raises
def test_compare_rejects_mismatched_horizon():
    lat = plant_latent(1)
    other = ExperimentSpec(lat=lat, schedule=constant_vol_schedule(0.1, 5.0),
                           drift=DriftCurve.constant(-0.2, 5.0), penalty=QuadraticPenalty(200.0),
                           policy="exact", n_paths=4000, seed=5, times=(0.0, 5.0))
    with pytest.raises(ValueError, match="horizon"):
        compare([spec("exact"), other])


# [PAPER] published ordering of information levels
def test_value_of_information_ordering():
    cmp = compare([spec(p, n_paths=20000) for p in ("exact", "thresholds", "no_forecast")])
    rows = {(a, b): (m, se) for a, b, m, se, _ in cmp.rows}
    for pair in (("exact", "thresholds"), ("thresholds", "no_forecast"), ("exact", "no_forecast")):
        m, se = rows[pair]
        assert m < 3 * se
    means = [r.summary.mean for r in cmp.results]
    assert means[0] < means[1] < means[2]


# [PAPER] published policy ordering
def test_impact_policies_on_reference():
    cmp = compare([spec("hjb"), spec("never_trade"), spec("buy_sell")])
    rows = {(a, b): row for a, b, *row in cmp.rows}
    m, paired, indep = rows[("hjb", "never_trade")]
    assert m < -3 * paired
    assert paired < indep
    m, paired, indep = rows[("hjb", "buy_sell")]
    assert m > 3 * paired
    assert paired < indep


# [PAPER] published volatility comparison
def test_lower_volatility_lowers_penalty():
    lo = spec("hjb", sigma_frac=0.5, label="lo")
    hi = spec("hjb", sigma_frac=1.0, label="hi")
    cmp = compare([lo, hi])
    (_, _, m, paired, _), = cmp.rows
    assert m < -3 * paired
    assert cmp.results[0].summary.median < 0 < cmp.results[1].summary.median
