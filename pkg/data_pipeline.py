"""Leakage-safe fold preparation: fold planning, normalization, SMOTE and augmentation.

Every statistic used to transform a fold (normalizer, SMOTE neighbourhoods,
noise sigmas, augmentation counts) is computed from that fold's training
partition only.
"""

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from sklearn.model_selection import StratifiedKFold
from sklearn.neighbors import NearestNeighbors

from logging_config import setup_logger
from tensor_core import derive_seed

logger = setup_logger(__name__)

STD_FLOOR = 1e-8
CLASS_COUNT = 3

SeedLike = Union[int, np.random.Generator, None]


class SmoteError(ValueError):
    """Raised when a minority class is too small to interpolate."""


@dataclass
class AugmentationConfig:
    noise_fraction: float = 0.10
    jitter_max_shift: int = 3
    scale_range: float = 0.10
    target_multiplier: float = 1.5
    # explicit copies-per-original per class; overrides target_multiplier when set
    class_factors: Optional[List[int]] = None

    def __post_init__(self):
        if self.noise_fraction < 0:
            raise ValueError(f"noise_fraction must be non-negative, got {self.noise_fraction}")
        if self.jitter_max_shift < 0:
            raise ValueError(f"jitter_max_shift must be non-negative, got {self.jitter_max_shift}")
        if not 0 <= self.scale_range < 1:
            raise ValueError(f"scale_range must lie in [0, 1), got {self.scale_range}")
        if self.target_multiplier < 1.0:
            raise ValueError(f"target_multiplier must be >= 1.0, got {self.target_multiplier}")
        if self.class_factors is not None and any(int(f) < 0 for f in self.class_factors):
            raise ValueError(f"class_factors must be non-negative integers, got {self.class_factors}")


@dataclass
class PipelineConfig:
    smote_k: int = 5
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    sensor_subset: Optional[List[int]] = None

    def __post_init__(self):
        if isinstance(self.augmentation, dict):
            self.augmentation = AugmentationConfig(**self.augmentation)
        if self.smote_k < 1:
            raise ValueError(f"smote_k must be >= 1, got {self.smote_k}")


@dataclass
class FoldPlan:
    repetitions: int
    k: int
    assignments: np.ndarray  # repetitions x samples, fold index per sample
    shuffle_seeds: List[int]

    def validation_indices(self, repetition: int, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments[repetition] == fold)

    def train_indices(self, repetition: int, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignments[repetition] != fold)

    def to_frame(self) -> pd.DataFrame:
        frames = []
        samples = np.arange(self.assignments.shape[1])
        for rep in range(self.repetitions):
            for fold in range(self.k):
                is_valid = self.assignments[rep] == fold
                frames.append(pd.DataFrame({
                    "repetition": rep,
                    "fold": fold,
                    "sample_index": samples,
                    "role": np.where(is_valid, "valid", "train"),
                }))
        return pd.concat(frames, ignore_index=True)


def plan_folds(labels: Sequence[int], k: int = 10, repetitions: int = 3, seed: int = 0) -> FoldPlan:
    labels = np.asarray(labels)
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if repetitions < 1:
        raise ValueError(f"repetitions must be >= 1, got {repetitions}")
    classes, counts = np.unique(labels, return_counts=True)
    small = {int(c): int(n) for c, n in zip(classes, counts) if n < k}
    if small:
        raise ValueError(f"every class needs at least k={k} samples; too small: {small}")

    assignments = np.full((repetitions, labels.size), -1, dtype=np.int64)
    shuffle_seeds = []
    for rep in range(repetitions):
        shuffle_seed = derive_seed(seed, "folds", rep)
        shuffle_seeds.append(shuffle_seed)
        splitter = StratifiedKFold(n_splits=k, shuffle=True, random_state=shuffle_seed)
        for fold, (_, valid_idx) in enumerate(splitter.split(np.zeros(labels.size), labels)):
            assignments[rep, valid_idx] = fold
    logger.debug(f"Planned {repetitions} x {k} stratified folds over {labels.size} samples")
    return FoldPlan(repetitions, k, assignments, shuffle_seeds)


def export_fold_plan(plan: FoldPlan, path: Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    plan.to_frame().to_csv(path, index=False)
    return path


@dataclass
class Normalizer:
    mean: np.ndarray
    std: np.ndarray
    n_fitted: int


def fit_normalizer(train_samples: np.ndarray) -> Normalizer:
    train_samples = np.asarray(train_samples)
    if train_samples.shape[0] == 0:
        raise ValueError("cannot fit a normalizer on an empty training set")
    mean = train_samples.mean(axis=0, dtype=np.float64)
    std = np.maximum(train_samples.std(axis=0, dtype=np.float64), STD_FLOOR)
    return Normalizer(mean=mean, std=std, n_fitted=int(train_samples.shape[0]))


def apply_normalizer(normalizer: Normalizer, samples: np.ndarray, dtype=np.float32) -> np.ndarray:
    samples = np.asarray(samples)
    if samples.shape[1:] != normalizer.mean.shape:
        raise ValueError(f"sample shape {samples.shape[1:]} does not match normalizer {normalizer.mean.shape}")
    return ((samples - normalizer.mean) / normalizer.std).astype(dtype)


def smote_oversample(
    train_samples: np.ndarray,
    train_labels: np.ndarray,
    k_neighbors: int = 5,
    seed: SeedLike = 0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Raise every minority class to the majority count by same-class interpolation.

    Originals come first in the output, synthetics follow class by class.
    """
    X = np.asarray(train_samples)
    y = np.asarray(train_labels)
    rng = np.random.default_rng(seed)
    flat = X.reshape(len(X), -1).astype(np.float64)
    classes, counts = np.unique(y, return_counts=True)
    majority = counts.max()

    new_samples, new_labels = [X], [y]
    for cls, count in zip(classes, counts):
        needed = int(majority - count)
        if needed == 0:
            continue
        if count < 2:
            raise SmoteError(
                f"class {int(cls)} has {count} training sample; SMOTE needs at least 2 to interpolate"
            )
        members = np.flatnonzero(y == cls)
        n_neighbors = min(k_neighbors + 1, count)
        neigh = NearestNeighbors(n_neighbors=n_neighbors).fit(flat[members])
        neighbours = neigh.kneighbors(flat[members], return_distance=False)

        base = rng.integers(0, count, size=needed)
        synthetic = np.empty((needed,) + X.shape[1:], dtype=X.dtype)
        for i, j in enumerate(base):
            candidates = neighbours[j][neighbours[j] != j]
            if candidates.size == n_neighbors:
                # duplicates can push the sample itself out of its own list
                candidates = candidates[:-1]
            nn = candidates[rng.integers(0, candidates.size)]
            u = rng.random()
            x, x_nn = X[members[j]], X[members[nn]]
            synthetic[i] = x + u * (x_nn - x)
        new_samples.append(synthetic)
        new_labels.append(np.full(needed, cls, dtype=y.dtype))
        logger.debug(f"SMOTE: class {int(cls)} {count} -> {majority} (k={n_neighbors - 1})")
    return np.concatenate(new_samples), np.concatenate(new_labels)


def augment_noise(sample: np.ndarray, sigma: float, seed: SeedLike = None) -> np.ndarray:
    if sigma < 0:
        raise ValueError(f"noise sigma must be non-negative, got {sigma}")
    if sigma == 0:
        return np.array(sample, copy=True)
    rng = np.random.default_rng(seed)
    return (sample + rng.normal(0.0, sigma, size=np.shape(sample))).astype(np.asarray(sample).dtype)


def augment_jitter(sample: np.ndarray, max_shift: int, seed: SeedLike = None) -> np.ndarray:
    """Roll every sensor row by one common shift along the frequency axis."""
    length = np.shape(sample)[-1]
    if not 0 <= max_shift < length:
        raise ValueError(f"max_shift must lie in [0, {length}), got {max_shift}")
    rng = np.random.default_rng(seed)
    shift = int(rng.integers(-max_shift, max_shift + 1))
    return np.roll(sample, shift, axis=-1)


def augment_scale(sample: np.ndarray, scale_range: float = 0.10, seed: SeedLike = None) -> np.ndarray:
    if not 0 <= scale_range < 1:
        raise ValueError(f"scale_range must lie in [0, 1), got {scale_range}")
    rng = np.random.default_rng(seed)
    factor = rng.uniform(1.0 - scale_range, 1.0 + scale_range)
    return (np.asarray(sample) * factor).astype(np.asarray(sample).dtype)


def compute_noise_sigmas(
    samples: np.ndarray,
    labels: np.ndarray,
    fraction: float = 0.10,
    classes: int = CLASS_COUNT,
) -> np.ndarray:
    sigmas = np.zeros(classes)
    for cls in range(classes):
        members = samples[labels == cls]
        if len(members):
            sigmas[cls] = fraction * float(np.std(members, dtype=np.float64))
    return sigmas


def augmentation_counts(counts: Dict[int, int], config: AugmentationConfig) -> Dict[int, int]:
    """Copies to generate per class after SMOTE."""
    if config.class_factors is not None:
        return {cls: int(config.class_factors[cls]) * n for cls, n in counts.items()}
    target = math.ceil(config.target_multiplier * max(counts.values()))
    return {cls: max(0, target - n) for cls, n in counts.items()}


def build_training_set(
    train_samples: np.ndarray,
    train_labels: np.ndarray,
    config: Optional[PipelineConfig] = None,
    seed: int = 0,
    noise_sigmas: Optional[np.ndarray] = None,
) -> Tuple[np.ndarray, np.ndarray, Dict[str, Dict[int, int]]]:
    """SMOTE, then noise -> jitter -> scale on sampled copies of each class.

    `noise_sigmas` default to 10% of the per-class std of `train_samples`.
    Returns the samples, labels and the per-stage class counts.
    """
    config = config or PipelineConfig()
    aug = config.augmentation
    if aug.jitter_max_shift >= train_samples.shape[-1]:
        raise ValueError(
            f"jitter_max_shift={aug.jitter_max_shift} needs sequences longer than {train_samples.shape[-1]} points"
        )
    if noise_sigmas is None:
        noise_sigmas = compute_noise_sigmas(train_samples, train_labels, aug.noise_fraction)

    X, y = smote_oversample(train_samples, train_labels, config.smote_k, derive_seed(seed, "smote"))
    post_smote = {int(c): int(n) for c, n in zip(*np.unique(y, return_counts=True))}
    plan = augmentation_counts(post_smote, aug)

    rng = np.random.default_rng(derive_seed(seed, "augment"))
    copies, copy_labels = [], []
    for cls in sorted(plan):
        members = np.flatnonzero(y == cls)
        for src in rng.choice(members, size=plan[cls], replace=True):
            sample = augment_noise(X[src], noise_sigmas[cls], rng)
            sample = augment_jitter(sample, aug.jitter_max_shift, rng)
            copies.append(augment_scale(sample, aug.scale_range, rng))
            copy_labels.append(cls)
    if copies:
        X = np.concatenate([X, np.stack(copies)])
        y = np.concatenate([y, np.asarray(copy_labels, dtype=y.dtype)])

    stages = {
        "original": {int(c): int(n) for c, n in zip(*np.unique(train_labels, return_counts=True))},
        "smote": post_smote,
        "augmented": {int(c): int(n) for c, n in zip(*np.unique(y, return_counts=True))},
    }
    logger.debug(f"Training set stages: {stages}")
    return X, y, stages


def compute_class_weights(labels: Sequence[int], classes: int = CLASS_COUNT) -> np.ndarray:
    labels = np.asarray(labels)
    counts = np.bincount(labels, minlength=classes)[:classes]
    if np.any(counts == 0):
        missing = [int(c) for c in np.flatnonzero(counts == 0)]
        raise ValueError(f"class weights need every class present; missing {missing}")
    return labels.size / (classes * counts.astype(np.float64))


def apply_sensor_mask(samples: np.ndarray, sensor_subset: Optional[Sequence[int]]) -> np.ndarray:
    """Zero every sensor row outside `sensor_subset` (a no-op when the subset is None)."""
    if sensor_subset is None:
        return samples
    keep = np.zeros(samples.shape[1], dtype=bool)
    keep[list(sensor_subset)] = True
    masked = np.array(samples, copy=True)
    masked[:, ~keep, :] = 0
    return masked


@dataclass
class Split:
    X: np.ndarray
    y: np.ndarray


@dataclass
class FoldData:
    train: Split
    valid: Split
    normalizer: Normalizer
    class_weights: np.ndarray
    noise_sigmas: np.ndarray
    counts: Dict[str, Dict[int, int]]
    train_idx: np.ndarray
    valid_idx: np.ndarray


def prepare_fold(
    samples,
    labels: np.ndarray,
    train_idx: np.ndarray,
    valid_idx: np.ndarray,
    config: Optional[PipelineConfig] = None,
    seed: int = 0,
) -> FoldData:
    """Build one fold's normalized training and validation splits.

    The normalizer and noise sigmas are fitted on the raw training partition,
    SMOTE and augmentation run in raw amplitude space, then both splits are
    normalized and masked to the configured sensor subset. `samples` is read
    only through `samples[train_idx]` and, last, `samples[valid_idx]`.
    """
    config = config or PipelineConfig()
    labels = np.asarray(labels)
    train_idx = np.asarray(train_idx)
    valid_idx = np.asarray(valid_idx)
    if np.intersect1d(train_idx, valid_idx).size:
        raise ValueError("training and validation indices overlap")

    X_train_raw = np.asarray(samples[train_idx])
    y_train_raw = labels[train_idx]
    normalizer = fit_normalizer(X_train_raw)
    sigmas = compute_noise_sigmas(X_train_raw, y_train_raw, config.augmentation.noise_fraction)
    X_aug, y_aug, counts = build_training_set(X_train_raw, y_train_raw, config, seed, noise_sigmas=sigmas)
    X_train = apply_sensor_mask(apply_normalizer(normalizer, X_aug), config.sensor_subset)

    X_valid_raw = np.asarray(samples[valid_idx])
    X_valid = apply_sensor_mask(apply_normalizer(normalizer, X_valid_raw), config.sensor_subset)

    return FoldData(
        train=Split(X_train, y_aug),
        valid=Split(X_valid, labels[valid_idx]),
        normalizer=normalizer,
        class_weights=compute_class_weights(y_aug),
        noise_sigmas=sigmas,
        counts=counts,
        train_idx=train_idx,
        valid_idx=valid_idx,
    )
