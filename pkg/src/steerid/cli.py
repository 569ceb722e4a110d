"""Command line entry point: ``steerid {generate,fit,evaluate,report}``."""
import argparse
import logging
import sys

from . import pipeline
from .errors import (ConfigError, DataError, ExperimentFailure, IllConditionedError,
                     OptimizationFailure, SimulationFailure, SteerIdError, TuningFailure)

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_TRAINING = 0, 2, 3, 4


def build_parser():
    p = argparse.ArgumentParser(prog="steerid", description="Steering-dynamics identification experiments.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="YAML experiment config")
        sp.add_argument("--out", default=None, help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int, default=None, help="top-level seed (overrides the config)")

    common(sub.add_parser("generate", help="simulate the dataset campaign"))
    f = sub.add_parser("fit", help="fit one identification method")
    common(f)
    f.add_argument("method", choices=pipeline.METHODS)
    e = sub.add_parser("evaluate", help="free-run evaluation of fitted models")
    common(e)
    e.add_argument("--methods", nargs="*", choices=pipeline.METHODS, default=None)
    common(sub.add_parser("report", help="print the NRMSE table"))
    return p


def run(args):
    cfg = pipeline.load_config(args.config, seed=args.seed, out=args.out)
    if args.verb == "generate":
        manifest = pipeline.generate(cfg)
        print(f"wrote {len(manifest)} datasets to {cfg.output_dir / 'data'}")
    elif args.verb == "fit":
        for path in pipeline.fit(cfg, args.method):
            print(f"wrote {path}")
    elif args.verb == "evaluate":
        pipeline.evaluate(cfg, args.methods)
        print(pipeline.format_report(cfg.output_dir / "report" / "report.csv"))
    else:
        print(pipeline.format_report(cfg.output_dir / "report" / "report.csv"))


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        run(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, ExperimentFailure) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OptimizationFailure, TuningFailure, IllConditionedError, SimulationFailure) as exc:
        print(f"training failure: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except SteerIdError as exc:
        # remaining library errors come from inputs that do not fit together
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
