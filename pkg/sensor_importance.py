"""Sensor importance from classification-head attention, rankings and sensor-subset evaluation."""

import json
from dataclasses import dataclass, field, replace
from functools import cmp_to_key
from pathlib import Path
from typing import Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from data_pipeline import PipelineConfig
from evaluation import MetricsReport
from frf_shadow import CLASS_NAMES, FrfDataset, ShadowConfig, generate_dataset
from logging_config import setup_logger
from training_harness import CampaignArtifacts, CampaignResult, TrainConfig, run_cross_validation
from transformer_shm import ModelConfig

logger = setup_logger(__name__)

SIMPLEX_TOLERANCE = 1e-6
TIE_TOLERANCE = 1e-9
DEFAULT_M_LIST = (1, 2, 4, 8, 16, 28)


@dataclass
class ImportanceProfile:
    mean: np.ndarray
    std: np.ndarray
    sample_count: int
    model_count: int
    provenance: Dict[str, object] = field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "sensor": np.arange(self.mean.size),
            "mean": self.mean,
            "std": self.std,
            "n_samples": self.sample_count,
            "n_models": self.model_count,
        })


@dataclass(frozen=True)
class SensorRanking:
    order: Tuple[int, ...]
    means: Tuple[float, ...]

    def top(self, m: int) -> List[int]:
        return list(self.order[:m])

    def to_dict(self) -> dict:
        return {
            "order": list(self.order),
            "means": {str(s): self.means[s] for s in self.order},
            "tie_tolerance": TIE_TOLERANCE,
        }


def per_sample_importance(attention: np.ndarray) -> np.ndarray:
    """Average attention over heads: B x heads x sensors -> B x sensors (float64)."""
    attention = np.asarray(attention, dtype=np.float64)
    if attention.ndim != 3:
        raise ValueError(f"attention must be B x heads x sensors, got shape {attention.shape}")
    row_sums = attention.sum(axis=-1)
    worst = float(np.max(np.abs(row_sums - 1.0))) if row_sums.size else 0.0
    if worst > SIMPLEX_TOLERANCE or np.any(attention < 0):
        raise ValueError(f"attention rows must be probability vectors; max |sum - 1| = {worst:.3e}")
    return attention.mean(axis=1)


def aggregate_importance(
    profiles: Union[np.ndarray, Sequence[np.ndarray]],
    model_count: int = 1,
    provenance: Optional[Dict[str, object]] = None,
) -> ImportanceProfile:
    if isinstance(profiles, np.ndarray):
        stacked = np.atleast_2d(profiles)
    else:
        if not len(profiles):
            raise ValueError("no importance profiles to aggregate")
        stacked = np.concatenate([np.atleast_2d(p) for p in profiles])
    if stacked.shape[0] == 0:
        raise ValueError("no importance profiles to aggregate")
    stacked = stacked.astype(np.float64)
    return ImportanceProfile(
        mean=stacked.mean(axis=0),
        std=stacked.std(axis=0),
        sample_count=int(stacked.shape[0]),
        model_count=model_count,
        provenance=provenance or {},
    )


def rank_sensors(profile: ImportanceProfile) -> SensorRanking:
    means = np.asarray(profile.mean, dtype=np.float64)

    def compare(a: int, b: int) -> int:
        if abs(means[a] - means[b]) <= TIE_TOLERANCE:
            return a - b
        return -1 if means[a] > means[b] else 1

    order = sorted(range(means.size), key=cmp_to_key(compare))
    return SensorRanking(tuple(order), tuple(float(m) for m in means))


def _validate_subset(sensor_subset: Sequence[int], sensors: int) -> Tuple[int, ...]:
    subset = tuple(sorted(int(s) for s in sensor_subset))
    if not subset:
        raise ValueError("sensor subset must not be empty")
    if len(set(subset)) != len(subset) or subset[0] < 0 or subset[-1] >= sensors:
        raise ValueError(f"sensor subset must hold distinct indices in 0..{sensors - 1}, got {list(sensor_subset)}")
    return subset


def subset_mask(dataset: FrfDataset, sensor_subset: Sequence[int]) -> FrfDataset:
    """Dataset tagged with `sensor_subset`; the rows are zeroed after fold normalization."""
    subset = _validate_subset(sensor_subset, dataset.sensor_count)
    if len(subset) == dataset.sensor_count:
        return replace(dataset, sensor_subset=None)
    return replace(dataset, sensor_subset=subset)


def _fold_attention(source: Union[CampaignResult, CampaignArtifacts]) -> Iterator[Tuple[int, int, np.ndarray, np.ndarray]]:
    """(repetition, fold, attention M x N x heads x sensors, labels N) per completed fold."""
    if isinstance(source, CampaignResult):
        for f in source.completed:
            yield f.repetition, f.fold, f.attention, f.y_true
        return
    index = source.attention_index.sort_values(["repetition", "fold", "position"])
    for (repetition, fold), rows in index.groupby(["repetition", "fold"], sort=True):
        yield int(repetition), int(fold), source.attention[(int(repetition), int(fold))], rows["label"].to_numpy()


def _campaign_id(source: Union[CampaignResult, CampaignArtifacts]) -> object:
    if isinstance(source, CampaignResult):
        return source.campaign_seed
    return source.document.get("campaign_seed")


def campaign_importance(
    source: Union[CampaignResult, CampaignArtifacts],
    label: Optional[int] = None,
) -> ImportanceProfile:
    """Aggregate per-sample importance over every validation sample and ensemble member.

    With `label`, only validation samples of that class contribute.
    """
    profiles, models, coverage = [], 0, []
    for repetition, fold, attention, labels in _fold_attention(source):
        models += attention.shape[0]
        coverage.append(f"rep{repetition}_fold{fold}")
        for member_attention in attention:
            rows = per_sample_importance(member_attention)
            profiles.append(rows if label is None else rows[labels == label])
    if not profiles:
        raise ValueError("campaign holds no attention from completed folds")
    return aggregate_importance(
        profiles,
        model_count=models,
        provenance={"campaign_seed": _campaign_id(source), "folds": coverage, "label": label},
    )


def class_profiles(source: Union[CampaignResult, CampaignArtifacts]) -> Dict[str, ImportanceProfile]:
    out = {}
    for c, name in enumerate(CLASS_NAMES):
        try:
            out[name] = campaign_importance(source, label=c)
        except ValueError:
            logger.warning(f"No validation samples of class {name} to profile")
    return out


def model_profiles(source: Union[CampaignResult, CampaignArtifacts]) -> pd.DataFrame:
    """Mean importance per trained model, long format (repetition, fold, member, sensor, mean)."""
    rows = []
    for repetition, fold, attention, _ in _fold_attention(source):
        for member, member_attention in enumerate(attention):
            means = per_sample_importance(member_attention).mean(axis=0)
            for sensor, value in enumerate(means):
                rows.append({
                    "repetition": repetition, "fold": fold, "member": member,
                    "sensor": sensor, "mean": float(value),
                })
    return pd.DataFrame(rows, columns=["repetition", "fold", "member", "sensor", "mean"])


def write_importance(
    profile: ImportanceProfile,
    directory: Path,
    per_class: Optional[Dict[str, ImportanceProfile]] = None,
    per_model: Optional[pd.DataFrame] = None,
) -> SensorRanking:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ranking = rank_sensors(profile)
    profile.to_frame().to_csv(directory / "importance.csv", index=False)
    with open(directory / "ranking.json", "w") as f:
        json.dump({**ranking.to_dict(), "provenance": profile.provenance}, f, indent=2, sort_keys=True)
    if per_class:
        frames = []
        for name, class_profile in per_class.items():
            frame = class_profile.to_frame()
            frame.insert(0, "class", name)
            frames.append(frame)
        pd.concat(frames, ignore_index=True).to_csv(directory / "importance_by_class.csv", index=False)
    if per_model is not None:
        per_model.to_csv(directory / "importance_by_model.csv", index=False)
    return ranking


def _reduced(train_config: TrainConfig, folds: int) -> TrainConfig:
    return replace(train_config, repetitions=1, ensemble_size=1, folds=folds)


def evaluate_subset(
    dataset: FrfDataset,
    sensor_subset: Sequence[int],
    train_config: TrainConfig,
    pipeline_config: Optional[PipelineConfig] = None,
    model_config: Optional[ModelConfig] = None,
    campaign_seed: int = 0,
    folds: int = 5,
    jobs: int = 1,
) -> MetricsReport:
    """Retrain with 1 repetition, `folds` folds and a single model on the masked dataset."""
    masked = subset_mask(dataset, sensor_subset)
    pipeline_config = pipeline_config or PipelineConfig()
    pipeline_config = replace(
        pipeline_config, sensor_subset=list(masked.sensor_subset) if masked.sensor_subset else None
    )
    result = run_cross_validation(
        masked, _reduced(train_config, folds), pipeline_config, campaign_seed, model_config, jobs
    )
    if not result.completed:
        raise RuntimeError(f"every fold failed while evaluating sensor subset {list(sensor_subset)}")
    return result.metrics()


def subset_curve(
    dataset: FrfDataset,
    ranking: SensorRanking,
    train_config: TrainConfig,
    m_list: Sequence[int] = DEFAULT_M_LIST,
    pipeline_config: Optional[PipelineConfig] = None,
    model_config: Optional[ModelConfig] = None,
    campaign_seed: int = 0,
    folds: int = 5,
    jobs: int = 1,
) -> pd.DataFrame:
    rows = []
    for m in m_list:
        if not 1 <= m <= len(ranking.order):
            raise ValueError(f"subset size m must lie in 1..{len(ranking.order)}, got {m}")
        subset = ranking.top(m)
        logger.info(f"Evaluating top-{m} sensors {subset}")
        report = evaluate_subset(
            dataset, subset, train_config, pipeline_config, model_config, campaign_seed, folds, jobs
        )
        rows.append({
            "m": m,
            "subset": " ".join(str(s) for s in subset),
            "accuracy": report.accuracy,
            "balanced_accuracy": report.balanced_accuracy,
            "f1_macro": float(np.mean([c.f1 for c in report.per_class.values()])),
        })
    return pd.DataFrame(rows, columns=["m", "subset", "accuracy", "balanced_accuracy", "f1_macro"])


def planted_recovery(
    planted_sensors: Sequence[int],
    seeds: Sequence[int],
    train_config: TrainConfig,
    shadow_config: Optional[ShadowConfig] = None,
    pipeline_config: Optional[PipelineConfig] = None,
    model_config: Optional[ModelConfig] = None,
    folds: int = 5,
    jobs: int = 1,
) -> pd.DataFrame:
    """Per seed: generate planted-signal data, run the reduced protocol, check the top-|S| ranking."""
    planted = sorted(int(s) for s in planted_sensors)
    shadow_config = replace(shadow_config or ShadowConfig(), planted_sensors=planted)
    rows = []
    for seed in seeds:
        dataset = generate_dataset(seed, shadow_config)
        result = run_cross_validation(
            dataset, _reduced(train_config, folds), pipeline_config, seed, model_config, jobs
        )
        ranking = rank_sensors(campaign_importance(result))
        top = sorted(ranking.top(len(planted)))
        rows.append({
            "seed": seed,
            "top": " ".join(str(s) for s in top),
            "recovered": top == planted,
            "accuracy": result.metrics().accuracy,
        })
        logger.info(f"Planted recovery seed {seed}: top {top} vs planted {planted}")
    return pd.DataFrame(rows, columns=["seed", "top", "recovered", "accuracy"])
