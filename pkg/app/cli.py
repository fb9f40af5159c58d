"""
コマンドラインからの実験実行。

    python cli.py synth --preset clue_like --scale 0.05 --out data/clue
    python cli.py baseline --config configs/clue_like.yaml
    python cli.py train --config configs/clue_like.yaml --method two_stage
    python cli.py compare --config configs/clue_like.yaml
    python cli.py report --run runs/clue_like/seed_0/two_stage
"""

import argparse
import asyncio
import logging
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from pydantic import ValidationError

from config import ExperimentConfig, Method, load_config
from errors import ConfigError, MixtureError, StaleBaselines, UnsupportedMethod
from services.metrics import aggregate, single_task_report
from services.registry import Registry
from services.reporting import emit_aggregate, emit_comparison, emit_report, load_report, write_table
from services.runner import (
    BaselineResult,
    baseline_fingerprint,
    compare,
    load_baselines,
    load_registry,
    report_metadata,
    run_multi_task,
    run_single_task_baselines,
    save_baselines,
)
from services.synth import SuitePreset, generate, preset_suite
from services.taxonomy import TaxonomyRule

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'
BASELINES_FILE = "baselines.json"


def _seed_dir(config: ExperimentConfig, seed: int) -> Path:
    return Path(config.output_dir) / f"seed_{seed}"


def _overrides(args: argparse.Namespace) -> Dict:
    """フラグ → 設定キー（Noneは上書きしない）"""
    seeds = args.seeds
    if getattr(args, "seed", None) is not None:
        seeds = [args.seed]
    return {
        "seeds": seeds,
        "step_cap": args.step_cap,
        "workers": args.workers,
        "output_dir": args.output_dir,
        "method": getattr(args, "method", None),
        "taxonomy": args.taxonomy,
    }


async def _baselines_for(
    config: ExperimentConfig,
    registry: Registry,
    seed: int,
    path: Optional[str],
) -> Dict[str, BaselineResult]:
    fingerprint = baseline_fingerprint(config, seed)
    if path:
        # 明示されたファイルが別条件のものならStaleBaselines（終了コード1）
        return load_baselines(path, fingerprint)
    cached = _seed_dir(config, seed) / BASELINES_FILE
    if cached.is_file():
        try:
            baselines = load_baselines(cached, fingerprint)
            logger.info(f"Reusing baselines from {cached}")
            return baselines
        except StaleBaselines as e:
            logger.warning(f"Recomputing baselines: {str(e)}")
    baselines = await run_single_task_baselines(config, registry, seed)
    save_baselines(cached, baselines, fingerprint)
    return baselines


def _parse_methods(raw: Optional[str]) -> List[Method]:
    if not raw:
        return list(Method)
    methods = []
    for name in raw.split(","):
        try:
            methods.append(Method(name.strip()))
        except ValueError:
            raise UnsupportedMethod(name.strip()) from None
    return methods


def cmd_synth(args: argparse.Namespace) -> int:
    try:
        suite = preset_suite(
            args.preset,
            include_generation=args.include_generation,
            scale=args.scale,
            seed=args.seed,
            label_noise=args.label_noise,
            similarity=args.similarity,
        )
    except ValidationError as e:
        raise ConfigError(f"Invalid synth settings: {e.errors()[0]['msg']}") from None
    manifest = generate(suite, args.out)
    print(manifest)
    return 0


async def cmd_baseline(args: argparse.Namespace) -> int:
    config = load_config(args.config, _overrides(args))
    registry = load_registry(config)
    for seed in config.seeds:
        baselines = await run_single_task_baselines(config, registry, seed)
        out = _seed_dir(config, seed)
        save_baselines(out / BASELINES_FILE, baselines, baseline_fingerprint(config, seed))
        report = single_task_report(
            {t: b.metric for t, b in baselines.items()},
            seed=seed,
            metadata=report_metadata(config, baselines, registry.task_ids),
        )
        emit_report(report, out / "single_task")
    return 0


async def cmd_train(args: argparse.Namespace) -> int:
    config = load_config(args.config, _overrides(args))
    registry = load_registry(config)
    reports = []
    for seed in config.seeds:
        baselines = await _baselines_for(config, registry, seed, args.baselines)
        report, curves = await run_multi_task(config, baselines, registry, seed)
        emit_report(report, _seed_dir(config, seed) / config.method.value, curves)
        reports.append(report)
    if len(reports) > 1:
        emit_aggregate(aggregate(reports), Path(config.output_dir) / config.method.value)
    return 0


async def cmd_compare(args: argparse.Namespace) -> int:
    config = load_config(args.config, _overrides(args))
    methods = _parse_methods(args.methods)
    registry = load_registry(config)
    per_method: Dict[str, List] = {m.value: [] for m in methods}
    for seed in config.seeds:
        baselines, results = await compare(config, methods, registry, seed)
        out = _seed_dir(config, seed)
        save_baselines(out / BASELINES_FILE, baselines, baseline_fingerprint(config, seed))
        for name, (report, curves) in results.items():
            emit_report(report, out / name, curves)
            per_method[name].append(report)
        emit_comparison({name: report for name, (report, _) in results.items()}, out)
    if len(config.seeds) > 1:
        for name, reports in per_method.items():
            emit_aggregate(aggregate(reports), Path(config.output_dir) / name)
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    report = load_report(args.run)
    run_dir = Path(args.run)
    write_table(report, run_dir if run_dir.is_dir() else run_dir.parent)
    return 0


def _add_experiment_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=str, default=None, help="YAML experiment config")
    parser.add_argument("--seed", type=int, default=None, help="run a single seed")
    parser.add_argument("--seeds", type=int, nargs="+", default=None)
    parser.add_argument("--step-cap", type=int, default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--output-dir", type=str, default=None)
    parser.add_argument("--taxonomy", type=str, default=None, choices=[r.value for r in TaxonomyRule])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mixture", description="Multi-task data mixture experiments")
    parser.add_argument("--log-level", type=str, default="INFO")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic task suite")
    p.add_argument("--preset", type=str, required=True, choices=[p.value for p in SuitePreset])
    p.add_argument("--out", type=str, required=True)
    p.add_argument("--scale", type=float, default=1.0)
    p.add_argument("--include-generation", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--label-noise", type=float, default=0.1)
    p.add_argument("--similarity", type=float, default=0.25)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("baseline", help="train single-task baselines")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_baseline)

    p = sub.add_parser("train", help="train one multi-task method")
    _add_experiment_flags(p)
    p.add_argument("--method", type=str, default=None, help="|".join(m.value for m in Method))
    p.add_argument("--baselines", type=str, default=None, help="baselines.json to reuse")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("compare", help="run every method on the same budget")
    _add_experiment_flags(p)
    p.add_argument("--methods", type=str, default=None, help="comma separated methods (default: all)")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="re-render tables.md from report.json")
    p.add_argument("--run", type=str, required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format=LOG_FORMAT)
    try:
        result = args.func(args)
        if asyncio.iscoroutine(result):
            result = asyncio.run(result)
        return result
    except MixtureError as e:
        logger.error(f"{type(e).__name__}: {str(e)}")
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected error: {str(e)}")
        return 3


if __name__ == "__main__":
    sys.exit(main())
