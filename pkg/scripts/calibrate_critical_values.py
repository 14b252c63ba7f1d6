"""Monte Carlo derivation of the KPSS and ADF critical values.

KPSS: quantiles of the integral of a squared Brownian bridge, from
discretized paths. ADF: finite-sample quantiles of the constant-only
Dickey-Fuller t statistic on Gaussian random walks, fitted to a response
surface in 1/T.

    python scripts/calibrate_critical_values.py --kpss-paths 1000000 --kpss-steps 2000
"""

import argparse

import numpy as np

from plcnoise.stationarity import ADF_C_SURFACE, KPSS_LEVEL_CRITICAL, adf_statistic

LEVELS = (0.10, 0.05, 0.025, 0.01)


def bridge_functional(n_paths, n_steps, rng, batch=2000):
    out = np.empty(n_paths)
    r = np.arange(1, n_steps + 1) / n_steps
    for start in range(0, n_paths, batch):
        m = min(batch, n_paths - start)
        w = np.cumsum(rng.standard_normal((m, n_steps)), axis=1) / np.sqrt(n_steps)
        v = w - r * w[:, -1:]
        out[start:start + m] = np.mean(v * v, axis=1)
    return out


def adf_quantiles(t_len, reps, rng, batch=2000):
    stats = []
    n_obs = None
    for start in range(0, reps, batch):
        m = min(batch, reps - start)
        y = np.cumsum(rng.standard_normal((m, t_len)), axis=1)
        s, _, n_obs = adf_statistic(y, 0)
        stats.append(s)
    s = np.concatenate(stats)
    return n_obs, {a: float(np.quantile(s, a)) for a in LEVELS}


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--kpss-paths", type=int, default=1_000_000)
    ap.add_argument("--kpss-steps", type=int, default=2000)
    ap.add_argument("--adf-reps", type=int, default=200_000)
    ap.add_argument("--seed", type=int, default=20240601)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)

    eta = bridge_functional(args.kpss_paths, args.kpss_steps, rng)
    print(f"KPSS level ({args.kpss_paths} paths, step 1/{args.kpss_steps})")
    for a in LEVELS:
        q = np.quantile(eta, 1 - a)
        print(f"  alpha={a:<6} simulated={q:.4f} tabulated={KPSS_LEVEL_CRITICAL[a]:.3f}")

    print(f"ADF constant-only ({args.adf_reps} random walks per length)")
    sizes, rows = [], []
    for t_len in (26, 51, 101, 251, 501, 1001):
        n_obs, q = adf_quantiles(t_len, args.adf_reps, rng)
        sizes.append(n_obs)
        rows.append(q)
        line = " ".join(f"{a}:{q[a]:.4f}" for a in LEVELS)
        print(f"  T={n_obs:<5} {line}")
    inv_t = 1.0 / np.asarray(sizes, dtype=float)
    design = np.column_stack([np.ones_like(inv_t), inv_t, inv_t ** 2])
    for a in LEVELS:
        y = np.array([r[a] for r in rows])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        print(f"  alpha={a:<6} fit b0={coef[0]:.5f} b1={coef[1]:.4f} b2={coef[2]:.4f} "
              f"tabulated b0={ADF_C_SURFACE[a][0]:.5f}")


if __name__ == "__main__":
    main()
