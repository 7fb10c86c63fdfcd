"""Relative error of the analytical gradient against quadrature as q narrows.

For each dataset and a few random q means near the sample mean, evaluates
both gradients at v_q = v_g/4, v_g/16, v_g/64 and prints error percentiles
plus the fraction of cases where the error falls monotonically.
"""

import argparse

import numpy as np

from clutter_vi.gradient import VariationalGaussian, approx_gradient
from clutter_vi.model import ClutterModel, sample_dataset
from clutter_vi.oracle import exact_gradient_quadrature

FRACS = (4, 16, 64)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=20)
    ap.add_argument("--draws", type=int, default=5)
    ap.add_argument("--rng-seed", type=int, default=2024)
    args = ap.parse_args()

    model = ClutterModel()
    rng = np.random.default_rng(args.rng_seed)
    errs = []
    for seed in range(args.seeds):
        data = sample_dataset(model, 2.0, 20, seed)
        for _ in range(args.draws):
            mu = data.observations.mean() + rng.uniform(-2, 2)
            row = []
            for frac in FRACS:
                q = VariationalGaussian(mu, model.v_g / frac)
                a, e = approx_gradient(model, data, q), exact_gradient_quadrature(model, data, q)
                row.append([abs(a.g_mu - e.g_mu) / max(abs(e.g_mu), 1e-8), abs(a.g_v - e.g_v) / max(abs(e.g_v), 1e-8)])
            errs.append(row)
    errs = np.array(errs)  # case, v_q level, component

    for j, name in enumerate(("g_mu", "g_v")):
        print(name)
        for k, frac in enumerate(FRACS):
            p50, p90, p95 = np.percentile(errs[:, k, j], [50, 90, 95])
            print(f"  v_q = v_g/{frac:<3} median {p50:.3g}  p90 {p90:.3g}  p95 {p95:.3g}")
        mono = np.mean((errs[:, 0, j] > errs[:, 1, j]) & (errs[:, 1, j] > errs[:, 2, j]))
        print(f"  monotone decrease on {mono:.0%} of {len(errs)} cases")


if __name__ == "__main__":
    main()
