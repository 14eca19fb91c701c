"""Command line entry point: ``adaptdm {run,baseline,sweep-n,report}``.

Exit codes: 0 success, 2 configuration error, 3 runtime error (I/O, missing
artifacts), 4 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .config import ConfigError, load_config
from .estimator import EstimatorError
from .zernike import BasisError

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_NUMERICAL = 0, 2, 3, 4

log = logging.getLogger("adaptdm")


def _on_off(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def _int_list(value: str) -> list[int]:
    try:
        return [int(v) for v in value.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError("expected comma-separated integers") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adaptdm", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="YAML experiment config")
        p.add_argument("--out", help="output directory (overrides output_dir)")
        p.add_argument("--seed", type=int, help="overrides seed and plant.seed")
        p.add_argument("--plots", type=_on_off, help="on|off: render report plots after the run")
        p.add_argument("--estimator", choices=("dense", "factored"), help="RLS state form")
        return p

    experiment("run", "adaptive control run")
    experiment("baseline", "control run with the influence matrix frozen at L0")
    sweep = experiment("sweep-n", "repeat the run over several basis sizes")
    sweep.add_argument("--n-list", type=_int_list, required=True, help="e.g. 15,28,45,66")
    sweep.add_argument("--workers", type=int, default=1)

    rep = sub.add_parser("report", help="plots and summary for a run directory")
    rep.add_argument("run_dir")
    rep.add_argument("--plots", type=_on_off, default=True)
    return parser


def _load(args):
    cfg = load_config(args.config)
    overrides = {}
    if args.out:
        overrides["output_dir"] = args.out
    if args.seed is not None:
        overrides["seed"] = args.seed
        overrides["plant.seed"] = args.seed
    if args.plots is not None:
        overrides["plots"] = args.plots
    if args.estimator:
        overrides["loop.estimator_form"] = args.estimator
    return cfg.with_overrides(**overrides) if overrides else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    from . import experiments, report

    try:
        if args.command == "report":
            print(report.cmd_report(args.run_dir, plots=args.plots)["text"], end="")
            return EXIT_OK
        cfg = _load(args)
        if args.command == "sweep-n":
            rows = experiments.cmd_sweep_n(cfg, args.n_list, workers=args.workers)
            for r in rows:
                print(f"n={r['n']:4d}  best_rms_central={r['best_rms_central_um']:.6g} um  {r['status']}")
            return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_NUMERICAL
        runner = experiments.cmd_run if args.command == "run" else experiments.cmd_baseline
        art = runner(cfg)
        if cfg.plots:
            report.cmd_report(art.output_dir)
        print(report.summary_text(art.summary, experiments.read_csv(art.output_dir / "iterations.csv")), end="")
        return EXIT_OK
    except ConfigError as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except (EstimatorError, BasisError, ArithmeticError) as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (OSError, report.ReportError, ValueError) as exc:
        log.error("runtime error: %s", exc)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
