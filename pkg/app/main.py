import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np
import uvicorn
from pydantic import ValidationError

from .core.config import settings
from .core.exceptions import JustDenseError
from .core.logging import setup_logging
from .backend.models import ExperimentConfig
from .harness.data import gen_synthetic_series, write_series_csv
from .harness.experiment import analyze_snapshots, export_mixers, run_experiment, run_single_arm

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="justdense", description="Structured mixers vs. their dense replacement")
    parser.add_argument("--log-level", default=None, help="overrides LOG_LEVEL")

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key=value experiment config file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory (or file for gen)")
    common.add_argument("--template", help="model template")
    common.add_argument("--mixer", help="studied mixer family")
    common.add_argument("--dense-init", choices=["zero", "scaled", "distill"])
    common.add_argument("--causal-dense", action="store_true", default=None,
                        help="mask the dense mixer to its lower triangle")

    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("gen", parents=[common], help="write a synthetic AR series to CSV")
    train = commands.add_parser("train", parents=[common], help="train one arm and save its checkpoint")
    train.add_argument("--arm", choices=["orig", "jd"], default="orig")
    commands.add_parser("compare", parents=[common], help="full Orig-vs-JD experiment")
    analyze = commands.add_parser("analyze", parents=[common], help="similarity and rank of saved snapshots")
    analyze.add_argument("snapshots", help="directory of *_orig.csv / *_jd.csv pairs")
    export = commands.add_parser("export", parents=[common], help="mixer heatmaps from a checkpoint")
    export.add_argument("--checkpoint", required=True)
    serve = commands.add_parser("serve", help="start the results API")
    serve.add_argument("--host", default=settings.API_HOST)
    serve.add_argument("--port", type=int, default=settings.API_PORT)
    return parser


def load_config(args: argparse.Namespace):
    overrides: Dict[str, object] = {
        "seed": args.seed,
        "template": args.template,
        "mixer": args.mixer,
        "dense_init": args.dense_init,
        "causal_dense": args.causal_dense,
    }
    if args.seed is None and not args.config:
        overrides["seed"] = settings.DEFAULT_SEED
    return ExperimentConfig.from_file(args.config, overrides)


def cmd_gen(args) -> int:
    config, _ = load_config(args)
    n_steps = config.n_windows + config.lookback + config.horizon - 1
    series = gen_synthetic_series(config.ar_coeffs, n_steps, config.channels, config.noise_std, config.seed)
    path = write_series_csv(series, args.out or Path(settings.OUTPUT_DIR) / "synthetic.csv")
    print(path)
    return 0


def cmd_train(args) -> int:
    config, _ = load_config(args)
    report, checkpoint = run_single_arm(config, args.arm, args.out or settings.OUTPUT_DIR)
    print(json.dumps({"arm": report.name, "metrics": report.metrics, "parameters": report.parameters,
                      "checkpoint": str(checkpoint)}, indent=2))
    return 0


def cmd_compare(args) -> int:
    config, echo = load_config(args)
    report = run_experiment(config, echo=echo, out_dir=args.out)
    for name, arm in report.arms.items():
        metrics = ", ".join(f"{key}={value:.6g}" for key, value in arm.metrics.items() if value is not None)
        print(f"{name}: {metrics} ({arm.parameters['total']} parameters)")
    for entry in report.similarity:
        print(f"{entry.block} head {entry.head}: psnr={entry.psnr:.4f} jsd={entry.jsd:.6f} "
              f"jsd_random={entry.jsd_random:.6f}")
    print(f"report: {Path(args.out or settings.OUTPUT_DIR) / report.run_id / 'report.json'}")
    return 0


def cmd_analyze(args) -> int:
    rows = analyze_snapshots(args.snapshots, seed=args.seed or 0)
    if not rows:
        logger.error(f"No snapshot pairs found in {args.snapshots}")
        return 1
    summary = {
        "snapshots": rows,
        "mean_jsd": float(np.mean([row["jsd"] for row in rows])),
        "mean_jsd_random": float(np.mean([row["jsd_random"] for row in rows])),
    }
    print(json.dumps(summary, indent=2, default=str))
    return 0


def cmd_export(args) -> int:
    config, _ = load_config(args)
    for path in export_mixers(config, args.checkpoint, args.out or Path(settings.OUTPUT_DIR) / "heatmaps"):
        print(path)
    return 0


def cmd_serve(args) -> int:
    from .backend.api import app as fastapi_app

    logger.info(f"Starting results API on {args.host}:{args.port}")
    uvicorn.run(fastapi_app, host=args.host, port=args.port, log_level=settings.LOG_LEVEL.lower())
    return 0


COMMANDS = {
    "gen": cmd_gen,
    "train": cmd_train,
    "compare": cmd_compare,
    "analyze": cmd_analyze,
    "export": cmd_export,
    "serve": cmd_serve,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(args.log_level)
    try:
        return COMMANDS[args.command](args)
    except ValidationError as e:
        logger.error(f"Invalid configuration: {e}")
        return 2
    except JustDenseError as e:
        logger.error(str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
