from __future__ import annotations

import argparse
import asyncio
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Any, Optional, Sequence

import pandas as pd

from app import texts
from app.config import (
    APP_VERSION,
    DEFAULT_CONFIG_PATH,
    LOG_LEVEL,
    ConfigError,
    LoadedConfig,
    TrainerConfig,
    load_config,
)
from app.core.metrics import (
    JsonlWriter,
    RunManifest,
    SchemaError,
    read_json,
    read_jsonl,
    read_manifest,
    utc_now_iso,
    write_json,
    write_manifest,
)
from app.domain.backend.client import BackendError, open_transport
from app.domain.backend.service import ensure_ready, score_round
from app.domain.sim.oracle import EnumerationCapExceeded, reward_landscape
from app.domain.sim.service import SimWorld, WorldError
from app.domain.trainer.service import EmaBaseline, ema_update, run
from app.domain.trainer.summary import compare_summaries, summarize_records, windowed_curve

LOG_FORMAT = "%(asctime)s [%(levelname)s] %(name)s: %(message)s"
MANIFEST_FILE = "manifest.json"
STEPS_FILE = "steps.jsonl"
SUMMARY_FILE = "summary.json"
LANDSCAPE_FILE = "landscape.csv"
CURVES_FILE = "curves.csv"
BACKEND_TIERS = 3

logger = logging.getLogger(__name__)


def setup_logging(level: str = LOG_LEVEL) -> None:
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT, stream=sys.stderr)


def _load(args: argparse.Namespace) -> LoadedConfig:
    path: Optional[Path] = Path(args.config) if args.config else None
    if path is None and DEFAULT_CONFIG_PATH.is_file():
        path = DEFAULT_CONFIG_PATH
    overrides = list(args.override or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    return load_config(path, overrides)


def _manifest(command: str, loaded: LoadedConfig, outputs: dict[str, str]) -> RunManifest:
    return RunManifest(
        command=command,
        config=loaded.snapshot,
        seed=loaded.trainer.seed,
        started_at=utc_now_iso(),
        version=APP_VERSION,
        outputs=outputs,
    )


def cmd_simulate(args: argparse.Namespace) -> int:
    loaded = _load(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(
        out / MANIFEST_FILE,
        _manifest("simulate", loaded, {"steps": STEPS_FILE, "summary": SUMMARY_FILE}),
    )

    result = run(loaded.trainer)
    with JsonlWriter(out / STEPS_FILE) as writer:
        writer.write_all(record.to_dict() for record in result.records)
    write_json(out / SUMMARY_FILE, {**result.summary, "ended_at": utc_now_iso()})

    logger.info("simulation written to %s", out)
    print(
        texts.simulate_done(
            str(out), len(result.records), result.final_skill, result.summary.get("mid_band_share_last")
        )
    )
    return 0


def cmd_reward_landscape(args: argparse.Namespace) -> int:
    loaded = _load(args)
    trainer = loaded.trainer
    n_answers = args.n_answers if args.n_answers is not None else trainer.n_answers
    categories = args.categories if args.categories is not None else 1 + trainer.world.n_distractors
    if n_answers < 1:
        raise ConfigError("n_answers", "must be at least 1")
    if categories < 1:
        raise ConfigError("categories", "must be at least 1")
    if args.words < 0:
        raise ConfigError("words", "must be non-negative")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    table = reward_landscape(
        n_answers,
        categories,
        trainer.solver_params,
        trainer.proposer_params,
        words=args.words,
    )
    write_manifest(out / MANIFEST_FILE, _manifest("reward-landscape", loaded, {"landscape": LANDSCAPE_FILE}))
    table.to_csv(out / LANDSCAPE_FILE, index=False)
    logger.info("reward landscape written to %s", out / LANDSCAPE_FILE)
    print(texts.landscape_done(str(out / LANDSCAPE_FILE), len(table)))
    return 0


def _compare_job(job: tuple[TrainerConfig, int, str]) -> dict[str, Any]:
    base, seed, variant = job
    config = replace(base, seed=seed, solver_reward=variant)
    result = run(config)
    curve = windowed_curve(result.records, config.proposer_params)
    curve.insert(0, "variant", variant)
    curve.insert(0, "seed", seed)
    row = {
        "seed": seed,
        "variant": variant,
        "final_skill": result.final_skill,
        **{key: result.summary.get(key) for key in (
            "zero_advantage_fraction",
            "solver_reward_window_variance",
            "proposer_reward_window_variance",
            "mean_solver_reward",
            "mean_proposer_reward",
        )},
    }
    return {"row": row, "curve": curve.to_dict(orient="records")}


def cmd_compare(args: argparse.Namespace) -> int:
    loaded = _load(args)
    seeds = list(args.seeds) if args.seeds else [loaded.trainer.seed]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(
        out / MANIFEST_FILE,
        _manifest("compare", loaded, {"summary": SUMMARY_FILE, "curves": CURVES_FILE}),
    )

    jobs = [(loaded.trainer, seed, variant) for seed in seeds for variant in ("continuous", "discrete")]
    if args.jobs > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_compare_job, jobs))
    else:
        results = [_compare_job(job) for job in jobs]

    summary = compare_summaries([item["row"] for item in results])
    curves = pd.DataFrame([point for item in results for point in item["curve"]])
    curves.to_csv(out / CURVES_FILE, index=False)
    write_json(out / SUMMARY_FILE, {**summary, "ended_at": utc_now_iso()})
    logger.info("comparison of %s run(s) written to %s", len(results), out)
    print(texts.compare_done(str(out), len(seeds)))
    return 0


def _image_refs(args: argparse.Namespace) -> list[str]:
    refs = list(args.images or [])
    if args.image_list:
        lines = Path(args.image_list).read_text(encoding="utf-8").splitlines()
        refs.extend(line.strip() for line in lines if line.strip())
    if not refs:
        raise ConfigError("images", "at least one image is required")
    return refs


async def _score_images(loaded: LoadedConfig, refs: list[str]) -> tuple[list[dict[str, Any]], int, int]:
    trainer, backend = loaded.trainer, loaded.backend
    transport = open_transport(backend)
    baseline_solver = EmaBaseline(0.0, trainer.baseline_decay)
    baseline_proposer = EmaBaseline(0.0, trainer.baseline_decay)
    entries: list[dict[str, Any]] = []
    partial = failures = 0
    try:
        for step, ref in enumerate(refs, start=1):
            outcome = await score_round(
                ref,
                backend,
                trainer.solver_params,
                trainer.proposer_params,
                transport=transport,
                step=step,
                beta_solver=trainer.kl_solver.beta,
                beta_proposer=trainer.kl_proposer.beta,
            )
            rewards = outcome.score.solver_rewards
            baseline_solver = ema_update(baseline_solver, sum(rewards) / len(rewards))
            baseline_proposer = ema_update(baseline_proposer, outcome.score.proposer_reward)
            entries.append(
                {
                    **outcome.entry,
                    "baseline_solver": baseline_solver.value,
                    "baseline_proposer": baseline_proposer.value,
                }
            )
            partial += int(outcome.batch.partial)
            failures += len(outcome.batch.failures)
            logger.info("round %s (%s): question=%r entropy=%.4f", step, ref, outcome.question, outcome.score.entropy_nats)
    finally:
        await transport.close()
    return entries, partial, failures


def cmd_score_backend(args: argparse.Namespace) -> int:
    overrides = list(args.override or [])
    if args.fixtures:
        overrides.append(f"backend.fixtures={args.fixtures}")
    if args.record:
        overrides.append(f"backend.record_fixtures={args.record}")
    args.override = overrides
    loaded = _load(args)
    ensure_ready(loaded.backend)
    refs = _image_refs(args)

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(
        out / MANIFEST_FILE,
        _manifest("score-backend", loaded, {"steps": STEPS_FILE, "summary": SUMMARY_FILE}),
    )

    entries, partial, failures = asyncio.run(_score_images(loaded, refs))
    with JsonlWriter(out / STEPS_FILE) as writer:
        writer.write_all(entries)
    summary = summarize_records(entries, BACKEND_TIERS, loaded.trainer.proposer_params)
    write_json(
        out / SUMMARY_FILE,
        {
            **summary,
            "rounds": len(entries),
            "partial_rounds": partial,
            "failed_generations": failures,
            "ended_at": utc_now_iso(),
        },
    )
    print(texts.backend_done(str(out), len(entries), failures))
    return 0


def cmd_reanalyze(args: argparse.Namespace) -> int:
    out = Path(args.out)
    manifest = read_manifest(out / MANIFEST_FILE)
    loaded = load_config(data=manifest.config)
    entries = read_jsonl(out / STEPS_FILE)
    stored = read_json(out / SUMMARY_FILE)

    if manifest.command == "score-backend":
        n_bins = BACKEND_TIERS
    else:
        n_bins = SimWorld.from_config(loaded.trainer.world, loaded.trainer.n_answers).n_bins
    recomputed = summarize_records(entries, n_bins, loaded.trainer.proposer_params)

    mismatched = sorted(key for key, value in recomputed.items() if stored.get(key) != value)
    if mismatched:
        logger.error("summary differs from the step log in: %s", ", ".join(mismatched))
        print(texts.run_failed(f"summary mismatch: {', '.join(mismatched)}"))
        return 1
    print(texts.bullet_list([f"summary matches {len(entries)} logged step(s)", f"run: {out}"]))
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run configuration (default: config/default.yaml)")
    common.add_argument("--out", default="runs", help="output directory")
    common.add_argument("--seed", type=int, help="shorthand for --override seed=N")
    common.add_argument(
        "--override",
        action="append",
        metavar="KEY=VALUE",
        help="dotted config override, repeatable, applied in order",
    )

    parser = argparse.ArgumentParser(prog="evolve", description="Self-evolving proposer/solver training simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", parents=[common], help="train in the simulated world")
    simulate.set_defaults(handler=cmd_simulate)

    landscape = sub.add_parser("reward-landscape", parents=[common], help="export rewards of every composition")
    landscape.add_argument("--n-answers", type=int, help="samples per question (default: n_answers)")
    landscape.add_argument("--categories", type=int, help="answer categories (default: 1 + n_distractors)")
    landscape.add_argument("--words", type=int, default=0, help="words before every answer tag")
    landscape.set_defaults(handler=cmd_reward_landscape)

    compare = sub.add_parser("compare", parents=[common], help="paired continuous vs discrete solver reward runs")
    compare.add_argument("--seeds", type=int, nargs="+", help="seeds to pair (default: the config seed)")
    compare.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
    compare.set_defaults(handler=cmd_compare)

    backend = sub.add_parser("score-backend", parents=[common], help="score rounds against a chat endpoint")
    backend.add_argument("--images", nargs="+", help="image paths or URLs")
    backend.add_argument("--image-list", help="file with one image path or URL per line")
    backend.add_argument("--fixtures", help="replay recorded exchanges from this file")
    backend.add_argument("--record", help="record live exchanges to this file")
    backend.set_defaults(handler=cmd_score_backend)

    reanalyze = sub.add_parser("reanalyze", parents=[common], help="recompute a run summary from its step log")
    reanalyze.set_defaults(handler=cmd_reanalyze)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigError, BackendError, EnumerationCapExceeded, SchemaError, WorldError, OSError) as exc:
        logger.error("%s failed: %s", args.command, exc)
        print(texts.run_failed(str(exc)), file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
