"""Numerical checks of the smoothing theory; writes theory.json and theory.md."""
import argparse
from pathlib import Path

from depcon.theory import markdown_table, run_suite


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/theory")
    args = ap.parse_args()
    reports = run_suite(args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "theory.json").write_text("[\n" + ",\n".join(r.to_json() for r in reports) + "\n]\n")
    table = markdown_table(reports)
    (out / "theory.md").write_text(table)
    print(table, end="")


if __name__ == "__main__":
    main()
