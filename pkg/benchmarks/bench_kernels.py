"""Timing of the compiled kernels against the numpy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""
import argparse
import time

import numpy as np

from windtrade import _kernels_py

try:
    from windtrade import _kernels as _compiled
except ImportError:
    _compiled = None


def hjb_case(n_phi=151, n_y=151):
    phi = np.linspace(0.0, 1.5, n_phi)
    y = np.linspace(-3.0, 2.6, n_y)
    w0 = 100.0 * (np.clip(np.exp(y)[None, :], 0.5, 3.9) / 3.4 - phi[:, None]) ** 2
    args = (0.05, 0.0726, -0.2, 4800.0 / 576.0, phi[1] - phi[0], y[1] - y[0], phi, 0.9, 10 ** 7)
    return w0, args


def sim_case(n_paths=20000, n_t=121, n_phi=151, n_y=151, seed=0):
    rng = np.random.default_rng(seed)
    psi = np.abs(rng.standard_normal((n_t, n_phi, n_y)))
    sub_t = np.linspace(0.0, 6.0, 1201)
    sub_mu = np.full(sub_t.size, -0.2)
    sub_k = np.minimum(np.arange(sub_t.size - 1) // 10, n_t - 2).astype(np.intp)
    log_x = 0.3 * rng.standard_normal((n_paths, n_t))
    return (psi, 0.0, 0.05, 0.0, 0.01, -3.0, 0.0375, sub_t, sub_mu, sub_k, log_x, 4800.0 / 576.0)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    backends = {"python": _kernels_py}
    if _compiled is not None:
        backends["cython"] = _compiled
    else:
        print("compiled extension not built; timing the fallback only")

    w0, hargs = hjb_case()
    sargs = sim_case()
    ref = {}
    print(f"{'kernel':<16}{'backend':<10}{'seconds':>10}{'speedup':>10}{'max |diff|':>14}")
    for name, run in (
        ("hjb_interval", lambda m: (lambda w: (m.hjb_interval(w, *hargs), w))(w0.copy())),
        ("simulate_impact", lambda m: m.simulate_impact(*sargs)),
    ):
        base = None
        for label, mod in backends.items():
            sec, out = best_of(lambda: run(mod), args.repeat)
            arr = np.asarray(out[1] if name == "hjb_interval" else out[0])
            if base is None:
                base, ref[name] = sec, arr
                diff, speed = 0.0, 1.0
            else:
                diff, speed = float(np.max(np.abs(arr - ref[name]))), base / sec
            print(f"{name:<16}{label:<10}{sec:10.4f}{speed:10.1f}{diff:14.3g}")


if __name__ == "__main__":
    main()
