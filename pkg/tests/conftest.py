import numpy as np
import pytest

from windtrade.dist import LatentParams, TruncatedLogNormal

# (latent: nu_X, x_min, x_max, mu_X) and (mu, nu, zeta) of the three fitted plants
PLANTS = {
    1: dict(nu_X=0.66020, x_min=0.46129, x_max=3.94322, mu_X=-0.21793,
            mu=-1.46551, nu=0.66020, zeta=-0.13248),
    2: dict(nu_X=0.46158, x_min=0.55412, x_max=2.19561, mu_X=-0.10653,
            mu=-0.60213, nu=0.46158, zeta=-0.33757),
    3: dict(nu_X=0.48778, x_min=0.50312, x_max=2.40534, mu_X=-0.11896,
            mu=-0.76199, nu=0.48778, zeta=-0.26449),
}

# fitted forecast-volatility parameters (hours)
SIGMA0_H, ETA_H, B_JUMP = 0.040113, 0.004423, 0.308817


def plant_latent(k):
    p = PLANTS[k]
    return LatentParams(nu_X=p["nu_X"], x_min=p["x_min"], x_max=p["x_max"])


def plant_law(k):
    p = PLANTS[k]
    return TruncatedLogNormal(mu=p["mu"], nu=p["nu"], zeta=p["zeta"])


@pytest.fixture
def lat1():
    return plant_latent(1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance results, printed once at the end of the run
ACCEPTANCE = {}


def record_acceptance(number, title, ok, detail):
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}: {title} ({detail})"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
