"""Predictor-corrector vs the four classical optimizers on identical LV data.

Prints the MAPE table and the mean/sd ratios of each baseline to the
predictor-corrector.
"""
import argparse
from dataclasses import replace

from depcon.harness import default_config, markdown_report, run_baselines, run_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--benchmark", default="lotka-volterra")
    ap.add_argument("--trials", type=int)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="results/baselines")
    args = ap.parse_args()
    cfg = default_config(args.benchmark)
    cfg = replace(cfg, jobs=args.jobs, trials=args.trials or cfg.trials)
    ours = run_experiment(replace(cfg, out=f"{args.out}/depcon"))
    others = run_baselines(replace(cfg, out=args.out))
    print(markdown_report([ours] + others), end="")
    for s in others:
        print(f"{s.method:24s} mean x{s.mape_mean / ours.mape_mean:7.1f}   "
              f"sd x{s.mape_sd / ours.mape_sd:7.1f}")


if __name__ == "__main__":
    main()
