"""Run all methods at small and large sample sizes (default n = 5, 10, 100) and summarise KL per size."""

import argparse

from clutter_vi.harness import config_from_dict, run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--sizes", default="5,10,100")
    ap.add_argument("--seeds", type=int, default=50)
    ap.add_argument("--out", default="results/sample_size_sweep")
    args = ap.parse_args()

    sizes = [int(s) for s in args.sizes.split(",")]
    cfg = config_from_dict({"sizes": sizes, "seeds": list(range(args.seeds)), "diagnostics": True, "output_dir": args.out})
    _, summary = run_experiment(cfg)
    for n, block in summary["by_size"].items():
        print(f"n={n}")
        for m, s in block["methods"].items():
            print(f"  {m:<18} median KL {s['median_kl']:.3e}  median |mu - mu_bar| {s['median_abs_err_mean']:.3e}")
        print("  lowest KL per seed:", block["win_counts"])
    print(f"results in {args.out}")


if __name__ == "__main__":
    main()
