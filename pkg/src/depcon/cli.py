"""Command-line entry point: ``depcon {run,sweep,baselines,theory,gen-data}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from .errors import ConfigError

log = logging.getLogger("depcon")

EXIT_OK, EXIT_CONFIG, EXIT_FAILURE = 0, 2, 3


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="TOML experiment config")
    common.add_argument("--out", type=Path, help="output directory")
    common.add_argument("--seed", type=int, help="base seed (overrides the config)")
    common.add_argument("--jobs", type=int, help="worker processes for trials")
    common.add_argument("--quiet", action="store_true", help="only print errors")
    common.add_argument("--benchmark", choices=("lotka-volterra", "circadian"),
                        help="benchmark when no config file is given")

    p = argparse.ArgumentParser(prog="depcon", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", parents=[common], help="run one experiment")
    run.add_argument("--method", help="estimation method when no config file is given")
    run.add_argument("--trials", type=int, help="number of trials (overrides the config)")
    sweep = sub.add_parser("sweep", parents=[common], help="sweep the number of scales N")
    sweep.add_argument("--Ns", default="4,8,12", help="comma-separated scale counts")
    sweep.add_argument("--trials", type=int, help="trials per N (overrides the config)")
    base = sub.add_parser("baselines", parents=[common], help="all four baselines")
    base.add_argument("--trials", type=int, help="trials per method (overrides the config)")
    sub.add_parser("theory", parents=[common], help="numerical checks of the smoothing theory")
    sub.add_parser("gen-data", parents=[common], help="write the input signal and observations")
    return p


def _config(args, method: str | None = None):
    from .harness import default_config, load_config

    if args.config is not None:
        if not args.config.exists():
            raise ConfigError(f"{args.config}: no such file")
        cfg = load_config(args.config)
        if args.benchmark and args.benchmark != cfg.benchmark:
            raise ConfigError("--benchmark conflicts with the config file")
    else:
        cfg = default_config(args.benchmark or "lotka-volterra", method or "depcon")
    if method is not None and args.config is not None:
        cfg = replace(cfg, method=method)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.jobs is not None:
        cfg = replace(cfg, jobs=args.jobs)
    if args.out is not None:
        cfg = replace(cfg, out=str(args.out))
    if getattr(args, "trials", None) is not None:
        cfg = replace(cfg, trials=args.trials)
    cfg.validate()
    return cfg


def _progress(quiet: bool):
    if quiet:
        return None

    def report(done, total, result):
        log.info("trial %d/%d  %s  termination=%s", done, total,
                 " ".join(f"{v:.4g}" for v in result.estimate), result.termination)
    return report


def _print_summaries(summaries, quiet: bool):
    from .harness import markdown_report

    if not quiet:
        print(markdown_report(summaries), end="")


def cmd_run(args):
    from .harness import run_experiment

    cfg = _config(args, args.method)
    s = run_experiment(cfg, _progress(args.quiet))
    _print_summaries([s], args.quiet)


def cmd_sweep(args):
    from .harness import sweep_scales

    try:
        Ns = [int(n) for n in args.Ns.split(",") if n.strip()]
    except ValueError as exc:
        raise ConfigError(f"--Ns: {exc}") from exc
    if not Ns or min(Ns) < 1:
        raise ConfigError("--Ns needs positive integers")
    cfg = _config(args)
    if cfg.method != "depcon":
        raise ConfigError("sweep runs the depcon method")
    _print_summaries(sweep_scales(cfg, Ns, _progress(args.quiet)), args.quiet)


def cmd_baselines(args):
    from .harness import run_baselines

    cfg = _config(args)
    _print_summaries(run_baselines(cfg, _progress(args.quiet)), args.quiet)


def cmd_theory(args):
    from .theory import markdown_table, run_suite

    seed = 0 if args.seed is None else args.seed
    reports = run_suite(seed)
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        (args.out / "theory.json").write_text(
            "[\n" + ",\n".join(r.to_json() for r in reports) + "\n]\n")
        (args.out / "theory.md").write_text(markdown_table(reports))
    if not args.quiet:
        print(markdown_table(reports), end="")
    if not all(r.passed for r in reports):
        raise RuntimeError("theory checks failed: "
                           + ", ".join(r.name for r in reports if not r.passed))


def cmd_gen_data(args):
    from .harness import make_benchmark
    from .ode import save_observations_csv
    from .signal import save_signal_csv

    cfg = _config(args)
    out = Path(cfg.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    bench = make_benchmark(cfg)
    save_signal_csv(bench.input, out / "signal.csv")
    save_observations_csv(bench.obs, out / "observations.csv")
    (out / "truth.json").write_text(json.dumps({"benchmark": cfg.benchmark,
                                                "truth": bench.truth.tolist(),
                                                "y0": bench.y0.tolist()}) + "\n")
    if not args.quiet:
        print(f"wrote {out / 'signal.csv'} and {out / 'observations.csv'}")


COMMANDS = {"run": cmd_run, "sweep": cmd_sweep, "baselines": cmd_baselines,
            "theory": cmd_theory, "gen-data": cmd_gen_data}


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.INFO,
                        format="%(message)s", stream=sys.stderr)
    try:
        COMMANDS[args.command](args)
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except Exception as exc:  # any failure while running the experiment
        log.error("experiment failed: %s: %s", type(exc).__name__, exc)
        return EXIT_FAILURE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
