"""Run the predictor-corrector on one benchmark and write results under results/.

    python scripts/run_benchmark.py lotka-volterra --trials 30 --jobs 4
"""
import argparse
from dataclasses import replace

from depcon.harness import default_config, markdown_report, run_experiment


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("benchmark", choices=("lotka-volterra", "circadian"))
    ap.add_argument("--trials", type=int)
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    cfg = default_config(args.benchmark)
    cfg = replace(cfg, jobs=args.jobs, out=args.out or f"results/{args.benchmark}/depcon",
                  trials=args.trials or cfg.trials)
    print(markdown_report([run_experiment(cfg)]), end="")


if __name__ == "__main__":
    main()
