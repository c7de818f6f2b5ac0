"""Command-line entry point: generate, train, report, rank and subset.

    python cli.py generate --config run.json --out runs/dataset
    python cli.py train --dataset runs/dataset --out runs/campaign --set training.max_epochs=60
    python cli.py report --campaign runs/campaign
    python cli.py rank --campaign runs/campaign
    python cli.py subset --campaign runs/campaign --dataset runs/dataset --m-list 1,2,4,8,16,28
"""

import argparse
import json
import sys
import traceback
from pathlib import Path
from typing import List, Optional, Sequence

import pandas as pd

from config import ConfigError, RunConfig, load_run_config, write_resolved_config
from evaluation import confusion_to_frame, evaluate_predictions, format_percent, write_metrics
from frf_shadow import (
    CLASS_NAMES,
    DatasetSchemaError,
    class_amplitude_std,
    class_separability,
    generate_dataset,
    load_dataset,
    noise_sigmas,
    save_dataset,
)
from logging_config import set_log_level, setup_logger
from sensor_importance import (
    SensorRanking,
    campaign_importance,
    class_profiles,
    model_profiles,
    rank_sensors,
    subset_curve,
    write_importance,
)
from tensor_core import NumericError
from training_harness import EnsembleMemberError, MissingArtifactsError, learning_curve_summary, load_campaign, run_cross_validation, save_campaign

logger = setup_logger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_ARTIFACTS = 3
EXIT_NUMERIC = 4


class CampaignFailedError(RuntimeError):
    """Every fold of a campaign failed."""

    def __init__(self, message: str, numeric: bool):
        super().__init__(message)
        self.numeric = numeric


def _resolve_config(args: argparse.Namespace) -> RunConfig:
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        section = "generator" if args.command == "generate" else "campaign"
        overrides.append(f"{section}.seed={args.seed}")
    if getattr(args, "jobs", None) is not None:
        overrides.append(f"campaign.jobs={args.jobs}")
    if getattr(args, "member_jobs", None) is not None:
        overrides.append(f"campaign.member_jobs={args.member_jobs}")
    if args.log_level:
        overrides.append(f"log_level={args.log_level}")
    config = load_run_config(args.config, overrides, args.preset)
    if config.log_level:
        try:
            set_log_level(config.log_level)
        except ValueError as e:
            raise ConfigError(str(e)) from e
    return config


def _out_dir(args: argparse.Namespace, default: Path) -> Path:
    return Path(args.out) if args.out else default


def _load_model_dataset(path: Path, config: RunConfig):
    return load_dataset(
        path,
        expected_sensors=config.model.sensors,
        expected_frequencies=config.model.sequence_length,
    )


def _write_json(path: Path, payload: dict):
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)


def cmd_generate(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    out_dir = _out_dir(args, Path(config.output_dir) / "dataset")
    write_resolved_config(config, out_dir)

    dataset = generate_dataset(config.generator.seed, config.generator)
    save_dataset(dataset, out_dir)
    summary = {
        "seed": dataset.seed,
        "sample_count": len(dataset),
        "counts": dataset.class_counts(),
        "class_amplitude_std": class_amplitude_std(dataset),
        "noise_sigmas": noise_sigmas(dataset, config.pipeline.augmentation.noise_fraction),
        "class_separability": class_separability(dataset),
        "planted_sensors": config.generator.planted_sensors,
    }
    _write_json(out_dir / "summary.json", summary)

    counts = ", ".join(f"{name} {n}" for name, n in summary["counts"].items())
    logger.info(f"Wrote {len(dataset)} samples to {out_dir}")
    print(f"samples: {len(dataset)} ({counts})")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    out_dir = _out_dir(args, Path(config.output_dir) / "campaign")
    dataset = _load_model_dataset(Path(args.dataset), config)
    write_resolved_config(config, out_dir)

    result = run_cross_validation(
        dataset,
        config.training,
        config.pipeline,
        campaign_seed=config.campaign.seed,
        model_config=config.model,
        jobs=config.campaign.resolved_jobs,
        member_jobs=config.campaign.member_jobs,
    )
    save_campaign(result, out_dir, keep_checkpoints=config.campaign.keep_checkpoints)
    if not result.completed:
        numeric = all(f.error_type == NumericError.__name__ for f in result.folds)
        raise CampaignFailedError(f"every fold failed; see {out_dir / 'campaign.json'}", numeric)

    report = result.metrics()
    logger.info(
        f"Campaign {result.status}: accuracy {report.accuracy:.4f}, "
        f"balanced accuracy {report.balanced_accuracy:.4f}"
    )
    print(f"accuracy: {format_percent(report.accuracy)}%")
    print(f"balanced_accuracy: {format_percent(report.balanced_accuracy)}%")
    return EXIT_OK


def metrics_table(report) -> pd.DataFrame:
    rows = [
        {"class": "all", "metric": "accuracy", "percent": format_percent(report.accuracy)},
        {"class": "all", "metric": "balanced_accuracy", "percent": format_percent(report.balanced_accuracy)},
    ]
    for name, m in report.per_class.items():
        for metric in ("precision", "recall", "f1"):
            rows.append({"class": name, "metric": metric, "percent": format_percent(getattr(m, metric))})
    return pd.DataFrame(rows, columns=["class", "metric", "percent"])


def cmd_report(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    campaign_dir = Path(args.campaign)
    artifacts = load_campaign(campaign_dir)
    out_dir = _out_dir(args, campaign_dir / "report")
    write_resolved_config(config, out_dir)

    predictions = artifacts.predictions
    cm, report = evaluate_predictions(
        predictions["true"].to_numpy(),
        predictions["pred"].to_numpy(),
        artifacts.probabilities(),
        len(CLASS_NAMES),
    )
    write_metrics(report, out_dir)
    confusion_to_frame(cm).to_csv(out_dir / "confusion.csv")
    learning_curve_summary(artifacts.learning_curves).to_csv(out_dir / "learning_curve_summary.csv", index=False)
    artifacts.member_metrics.to_csv(out_dir / "accuracy_distribution.csv", index=False)
    metrics_table(report).to_csv(out_dir / "metrics_table.csv", index=False)

    if artifacts.status != "complete":
        logger.warning(f"Campaign {campaign_dir} is {artifacts.status}; report covers completed folds only")
    print(f"accuracy: {format_percent(report.accuracy)}%")
    print(f"balanced_accuracy: {format_percent(report.balanced_accuracy)}%")
    for name, m in report.per_class.items():
        print(f"{name}: precision {m.precision:.3f} recall {m.recall:.3f} f1 {m.f1:.3f}")
    return EXIT_OK


def cmd_rank(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    campaign_dir = Path(args.campaign)
    artifacts = load_campaign(campaign_dir)
    out_dir = _out_dir(args, campaign_dir / "importance")
    write_resolved_config(config, out_dir)

    profile = campaign_importance(artifacts)
    ranking = write_importance(profile, out_dir, class_profiles(artifacts), model_profiles(artifacts))
    print("top sensors: " + " ".join(str(s) for s in ranking.top(min(5, len(ranking.order)))))
    return EXIT_OK


def _parse_m_list(text: Optional[str], default: Sequence[int]) -> List[int]:
    if not text:
        return list(default)
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise ConfigError(f"--m-list must be comma-separated integers, got {text!r}")


def _campaign_ranking(campaign_dir: Path) -> SensorRanking:
    ranking_path = campaign_dir / "importance" / "ranking.json"
    if ranking_path.is_file():
        with open(ranking_path, "r") as f:
            stored = json.load(f)
        means = stored["means"]
        order = tuple(int(s) for s in stored["order"])
        return SensorRanking(order, tuple(float(means[str(s)]) for s in range(len(order))))
    return rank_sensors(campaign_importance(load_campaign(campaign_dir)))


def cmd_subset(args: argparse.Namespace) -> int:
    config = _resolve_config(args)
    campaign_dir = Path(args.campaign)
    # fail on missing artifacts before any retraining starts
    load_campaign(campaign_dir)
    out_dir = _out_dir(args, campaign_dir / "subset")
    dataset = _load_model_dataset(Path(args.dataset), config)
    m_list = _parse_m_list(args.m_list, config.campaign.m_list)
    write_resolved_config(config, out_dir)

    ranking = _campaign_ranking(campaign_dir)
    curve = subset_curve(
        dataset,
        ranking,
        config.training,
        m_list,
        pipeline_config=config.pipeline,
        model_config=config.model,
        campaign_seed=config.campaign.seed,
        folds=config.campaign.subset_folds,
        jobs=config.campaign.resolved_jobs,
    )
    curve.to_csv(out_dir / "subset_curve.csv", index=False)
    _write_json(out_dir / "subset_curve.json", {"ranking": ranking.to_dict(), "rows": curve.to_dict(orient="records")})
    for row in curve.itertuples(index=False):
        print(f"m={row.m}: accuracy {format_percent(row.accuracy)}%")
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "report": cmd_report,
    "rank": cmd_rank,
    "subset": cmd_subset,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="FRF damage classification with an attention-based sensor ranking")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="Path to a JSON run config")
    common.add_argument("--preset", help="Named preset (desk, full, reduced, smoke, planted)")
    common.add_argument("--out", help="Output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="Override a config key, e.g. training.max_epochs=60")
    common.add_argument("--log-level", help="error, warn, info or debug (overrides FRF_SHM_LOG)")

    sub = parser.add_subparsers(dest="command", required=True)

    generate = sub.add_parser("generate", parents=[common], help="Synthesize the FRF dataset")
    generate.add_argument("--seed", type=int, help="Generator seed")

    train = sub.add_parser("train", parents=[common], help="Run the cross-validation campaign")
    train.add_argument("--dataset", required=True, help="Dataset directory written by generate")
    train.add_argument("--seed", type=int, help="Campaign seed")
    train.add_argument("--jobs", type=int, help="Parallel folds (default FRF_SHM_JOBS or CPU count)")
    train.add_argument("--member-jobs", type=int, help="Parallel ensemble members within a fold (default 1)")

    report = sub.add_parser("report", parents=[common], help="Metrics tables and learning-curve aggregates")
    report.add_argument("--campaign", required=True, help="Campaign directory written by train")

    rank = sub.add_parser("rank", parents=[common], help="Sensor importance profiles and ranking")
    rank.add_argument("--campaign", required=True, help="Campaign directory written by train")

    subset = sub.add_parser("subset", parents=[common], help="Retrain on the top-m ranked sensors")
    subset.add_argument("--campaign", required=True, help="Campaign directory written by train")
    subset.add_argument("--dataset", required=True, help="Dataset directory written by generate")
    subset.add_argument("--m-list", help="Comma-separated subset sizes, e.g. 1,2,4,8,16,28")
    subset.add_argument("--seed", type=int, help="Campaign seed")
    subset.add_argument("--jobs", type=int, help="Parallel folds (default FRF_SHM_JOBS or CPU count)")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(f"Configuration error: {str(e)}")
        return EXIT_CONFIG
    except (DatasetSchemaError, MissingArtifactsError) as e:
        logger.error(f"Missing or invalid artifacts: {str(e)}")
        return EXIT_ARTIFACTS
    except NumericError as e:
        logger.error(f"Numeric failure: {str(e)}")
        return EXIT_NUMERIC
    except EnsembleMemberError as e:
        logger.error(f"Ensemble member failed: {str(e)}")
        logger.debug(traceback.format_exc())
        return EXIT_NUMERIC if isinstance(e.__cause__, NumericError) else EXIT_FAILURE
    except CampaignFailedError as e:
        logger.error(f"Campaign failed: {str(e)}")
        return EXIT_NUMERIC if e.numeric else EXIT_FAILURE
    except OSError as e:
        logger.error(f"Cannot read or write {getattr(e, 'filename', None) or 'path'}: {str(e)}")
        return EXIT_ARTIFACTS
    except Exception as e:
        logger.error(f"Unexpected error in {args.command}: {str(e)}")
        logger.error(traceback.format_exc())
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
