"""
Command-line entry point ``embodied-captioning``.

Exit codes: 0 success, 2 configuration error, 3 phase failure, 4 remote
service failure.
"""

import argparse
import asyncio
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import yaml

from . import __version__
from .config import load_config
from .exceptions import ConfigError, EmbodiedCaptioningError, PhaseError, RemoteServiceError
from . import pipeline

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def _override(text: str):
    key, sep, value = text.partition("=")
    if not sep or not key:
        raise argparse.ArgumentTypeError(f"Expected KEY=VALUE, got '{text}'")
    return key, yaml.safe_load(value)


def parse_args(args: List[str]) -> argparse.Namespace:
    """Parse command line parameters."""
    parser = argparse.ArgumentParser(
        prog="embodied-captioning",
        description="Explore synthetic scenes, distill consistent object pseudo-captions and fine-tune a toy captioner.",
    )
    parser.add_argument("--version", action="version", version=f"embodied-captioning {__version__}")
    parser.add_argument(
        "--log-level", default="INFO", choices=["DEBUG", "INFO", "WARNING", "ERROR"], help="logging verbosity"
    )
    parser.add_argument("--config", help="YAML run configuration (defaults when omitted)")
    parser.add_argument(
        "--set", dest="overrides", type=_override, action="append", default=[], metavar="KEY=VALUE",
        help="override a config value by dotted key, e.g. exploration.policy=cla",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("explore", help="generate a scene, run one episode, export annotations")
    p.add_argument("--seed", type=int, help="episode and scene seed (first configured seed by default)")
    p.add_argument("--policy", choices=["random", "frontier", "cla"], help="exploration policy")
    p.add_argument("--steps", type=int, help="episode length")
    p.add_argument("--out-dir", required=True, help="directory for scene.json, episode.jsonl, annotations.jsonl")

    p = sub.add_parser("build-map", help="rebuild the voxel map from an episode and cluster instances")
    p.add_argument("--scene", required=True, help="scene.json")
    p.add_argument("--episode", required=True, help="episode.jsonl")
    p.add_argument("--out-dir", required=True, help="directory for map.json and dataset.jsonl")

    p = sub.add_parser("consensus", help="pseudo-caption every instance of a map")
    p.add_argument("--map", required=True, help="map.json")
    p.add_argument("--scene", help="scene.json, used for the ECO image proxy")
    p.add_argument("--method", choices=["ldcps", "ldcps-offline", "eco", "ic3"], help="consensus method")
    p.add_argument("--out", required=True, help="pseudo.jsonl")

    p = sub.add_parser("finetune", help="fine-tune the toy captioner on pseudo-captions")
    p.add_argument("--data", required=True, help="pseudo.jsonl")
    p.add_argument("--dataset", required=True, help="dataset.jsonl")
    p.add_argument("--lambda", dest="lambda_tr", type=float, help="triplet loss weight")
    p.add_argument("--epochs", type=int, help="maximum number of epochs")
    p.add_argument("--patience", type=int, help="early stopping patience")
    p.add_argument("--seed", type=int, default=0, help="initialization and shuffling seed")
    p.add_argument("--out-dir", required=True, help="directory for model.json and model_init.json")

    p = sub.add_parser("evaluate", help="score pseudo-captions (and a fine-tuned model) against annotations")
    p.add_argument("--pred", required=True, help="pseudo.jsonl")
    p.add_argument("--ann", required=True, help="annotations.jsonl")
    p.add_argument("--map", help="map.json, to score each object through its best-supported instance")
    p.add_argument("--model", help="model.json of a fine-tuned captioner")
    p.add_argument("--dataset", help="dataset.jsonl, required with --model")
    p.add_argument("--out", required=True, help="report.json")

    p = sub.add_parser("consistency", help="intra-instance consistency of decoded captions")
    p.add_argument("--model", required=True, help="model.json")
    p.add_argument("--init-model", help="model_init.json, adds the pre-training distribution")
    p.add_argument("--dataset", required=True, help="dataset.jsonl")
    p.add_argument("--out-dir", required=True, help="directory for consistency.json and consistency.csv")

    p = sub.add_parser("report", help="comparison tables over run manifests")
    p.add_argument("--manifests", nargs="+", required=True, help="manifest.json files")
    p.add_argument("--out-dir", required=True, help="directory for the CSV and markdown tables")

    p = sub.add_parser("ablate", help="triplet weight ablation (1, 0.5, 0.1 and the 0 reference)")
    p.add_argument("--data", required=True, help="pseudo.jsonl")
    p.add_argument("--dataset", required=True, help="dataset.jsonl")
    p.add_argument("--seed", type=int, default=0, help="initialization and shuffling seed")
    p.add_argument("--out-dir", required=True, help="directory for ablation.csv and ablation.md")

    p = sub.add_parser("run", help="full pipeline for every configured seed")
    p.add_argument("--seed", type=int, help="run a single seed instead of all configured seeds")
    p.add_argument("--out-dir", help="output directory (overrides output_dir)")
    return parser.parse_args(args)


def setup_logging(level: str) -> None:
    logging.basicConfig(level=getattr(logging, level), format=LOG_FORMAT, stream=sys.stderr)


def _config(args: argparse.Namespace):
    overrides = dict(args.overrides)
    if getattr(args, "policy", None):
        overrides["exploration.policy"] = args.policy
    if getattr(args, "steps", None) is not None:
        overrides["exploration.n_steps"] = args.steps
    if getattr(args, "lambda_tr", None) is not None:
        overrides["loss.lambda_tr"] = args.lambda_tr
    if getattr(args, "epochs", None) is not None:
        overrides["loss.epochs"] = args.epochs
    if getattr(args, "patience", None) is not None:
        overrides["loss.patience"] = args.patience
    return load_config(args.config, overrides)


def _dispatch(args: argparse.Namespace) -> None:
    cfg = _config(args)
    command = args.command
    if command == "explore":
        seed = cfg.seeds[0] if args.seed is None else args.seed
        pipeline.explore_phase(cfg, seed, args.out_dir)
    elif command == "build-map":
        pipeline.build_map_phase(cfg, args.scene, args.episode, args.out_dir)
    elif command == "consensus":
        asyncio.run(pipeline.consensus_phase(cfg, args.map, args.out, args.method, args.scene))
    elif command == "finetune":
        pipeline.finetune_phase(cfg, args.dataset, args.data, args.out_dir, args.seed)
    elif command == "evaluate":
        if args.model and not args.dataset:
            raise ConfigError("--model needs --dataset")
        pipeline.evaluate_phase(cfg, args.pred, args.ann, args.out, args.map, args.model, args.dataset)
    elif command == "consistency":
        pipeline.consistency_phase(cfg, args.model, args.dataset, args.out_dir, args.init_model)
    elif command == "report":
        pipeline.report(args.manifests, args.out_dir)
    elif command == "ablate":
        pipeline.ablate_lambda(cfg, args.dataset, args.data, args.out_dir, args.seed)
    elif command == "run":
        root = Path(args.out_dir or cfg.output_dir)
        seeds = cfg.seeds if args.seed is None else [args.seed]
        for seed in seeds:
            out = root if len(seeds) == 1 else root / f"seed-{seed}"
            pipeline.run_pipeline(replace(cfg, output_dir=str(out)), seed)


def exit_code_for(error: EmbodiedCaptioningError) -> int:
    """Exit code of a package error; phase failures caused by a remote service map to 4."""
    if isinstance(error, PhaseError) and isinstance(error.__cause__, RemoteServiceError):
        return RemoteServiceError.exit_code
    return error.exit_code


def main(args: List[str]) -> int:
    """
    Run a subcommand.

    Args:
        args: Command line parameters as list of strings

    Returns:
        Process exit code
    """
    parsed = parse_args(args)
    setup_logging(parsed.log_level)
    try:
        _dispatch(parsed)
    except EmbodiedCaptioningError as e:
        code = exit_code_for(e)
        logger.error("%s (exit code %d)", e, code)
        return code
    except OSError as e:
        logger.error("%s (exit code %d)", e, PhaseError.exit_code)
        return PhaseError.exit_code
    return 0


def run(argv: Optional[List[str]] = None) -> None:
    """Entry point for console_scripts."""
    sys.exit(main(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    run()
