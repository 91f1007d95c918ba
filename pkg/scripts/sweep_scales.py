"""MAPE distribution against the number of scales N (box-plot data in sweep_mape.csv)."""
import argparse
from dataclasses import replace

from depcon.harness import default_config, markdown_report, sweep_scales


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--Ns", default="4,8,12")
    ap.add_argument("--trials", type=int)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default="results/sweep")
    args = ap.parse_args()
    cfg = default_config("lotka-volterra")
    cfg = replace(cfg, jobs=args.jobs, out=args.out, trials=args.trials or cfg.trials)
    summaries = sweep_scales(cfg, [int(n) for n in args.Ns.split(",")])
    print(markdown_report(summaries), end="")
    medians = [s.mape_median for s in summaries]
    print(f"max/min median MAPE: {max(medians) / min(medians):.2f}")


if __name__ == "__main__":
    main()
