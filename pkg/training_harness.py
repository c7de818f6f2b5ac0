"""Training loop, fold ensembles and the repeated cross-validation campaign."""

import asyncio
import json
import traceback
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import aiofiles
import numpy as np
import pandas as pd
from tqdm import tqdm

from callback import TrainingCallback
from data_pipeline import FoldData, FoldPlan, PipelineConfig, Split, compute_class_weights, export_fold_plan, plan_folds, prepare_fold
from evaluation import ConfusionMatrix, MetricsReport, confusion, confusion_to_frame, evaluate_predictions, write_metrics
from frf_shadow import CLASS_NAMES, FrfDataset
from logging_config import setup_logger
from tensor_core import AdamState, NumericError, RngStream, Tensor, adam_step, derive_seed, l1_penalty, weighted_cross_entropy
from transformer_shm import (
    CLASSIFIER_ATTENTION_WEIGHTS,
    ForwardOutput,
    ModelConfig,
    ModelParams,
    init_params,
    load_checkpoint,
    model_forward,
    predict_proba,
    save_checkpoint,
)

logger = setup_logger(__name__)

L1_TARGETS = ("attention_weights", "attention_projections")
AGGREGATIONS = ("mean", "vote")
EVAL_CHUNK = 256


class EnsembleMemberError(RuntimeError):
    def __init__(self, member: int, seed: int, cause: Exception):
        super().__init__(f"ensemble member {member} (seed {seed}) failed: {cause}")
        self.member = member
        self.seed = seed


class MissingArtifactsError(FileNotFoundError):
    """Raised when a campaign directory lacks required artifacts."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    lambda_l1: float = 1e-4
    max_epochs: int = 200
    early_stop_patience: int = 30
    plateau_factor: float = 0.5
    plateau_patience: int = 10
    min_lr: float = 1e-6
    batch_size: int = 32
    ensemble_size: int = 2
    repetitions: int = 3
    folds: int = 10
    improvement_threshold: float = 1e-6
    l1_target: str = "attention_projections"
    aggregation: str = "mean"

    def __post_init__(self):
        if self.early_stop_patience < 1 or self.plateau_patience < 1:
            raise ValueError("patience values must be >= 1")
        if not 0.0 < self.plateau_factor < 1.0:
            raise ValueError(f"plateau_factor must lie in (0, 1), got {self.plateau_factor}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2 for batch norm, got {self.batch_size}")
        if self.ensemble_size < 1:
            raise ValueError(f"ensemble_size must be >= 1, got {self.ensemble_size}")
        if self.max_epochs < 1 or self.repetitions < 1 or self.folds < 2:
            raise ValueError("max_epochs and repetitions must be >= 1 and folds >= 2")
        if self.learning_rate <= 0 or self.min_lr <= 0 or self.lambda_l1 < 0:
            raise ValueError("learning rates must be positive and lambda_l1 non-negative")
        if self.l1_target not in L1_TARGETS:
            raise ValueError(f"l1_target must be one of {L1_TARGETS}, got {self.l1_target!r}")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}, got {self.aggregation!r}")


@dataclass
class TrainRecord:
    seed: int
    train_loss: List[float] = field(default_factory=list)
    train_accuracy: List[float] = field(default_factory=list)
    valid_loss: List[float] = field(default_factory=list)
    valid_accuracy: List[float] = field(default_factory=list)
    lr: List[float] = field(default_factory=list)
    best_epoch: int = 0
    stopped_epoch: int = 0

    @property
    def best_valid_loss(self) -> float:
        return self.valid_loss[self.best_epoch - 1] if self.best_epoch else float("nan")


class PlateauScheduler:
    """Multiply the lr by `factor` after `patience` epochs without improvement."""

    def __init__(self, lr: float, factor: float = 0.5, patience: int = 10, min_lr: float = 1e-6, threshold: float = 1e-6):
        if not 0.0 < factor < 1.0:
            raise ValueError(f"plateau factor must lie in (0, 1), got {factor}")
        self.lr = lr
        self.factor = factor
        self.patience = patience
        self.min_lr = min_lr
        self.threshold = threshold
        self.best = float("inf")
        self.counter = 0

    def step(self, valid_loss: float) -> float:
        if valid_loss < self.best - self.threshold:
            self.best = valid_loss
            self.counter = 0
        else:
            self.counter += 1
            if self.counter >= self.patience:
                new_lr = max(self.lr * self.factor, self.min_lr)
                if new_lr < self.lr:
                    logger.debug(f"Reducing learning rate {self.lr:.2e} -> {new_lr:.2e}")
                self.lr = new_lr
                self.counter = 0
        return self.lr


def reduce_lr_on_plateau(state: PlateauScheduler, valid_loss: float) -> float:
    return state.step(valid_loss)


class EarlyStopping:
    def __init__(self, patience: int = 30, threshold: float = 1e-6):
        self.patience = patience
        self.threshold = threshold
        self.best_loss = float("inf")
        self.counter = 0

    def step(self, valid_loss: float) -> bool:
        """Returns True when the loss improved on the best seen so far."""
        if valid_loss < self.best_loss - self.threshold:
            self.best_loss = valid_loss
            self.counter = 0
            return True
        self.counter += 1
        return False

    @property
    def should_stop(self) -> bool:
        return self.counter >= self.patience


def compute_total_loss(
    output: ForwardOutput,
    targets: np.ndarray,
    class_weights: np.ndarray,
    params: ModelParams,
    config: TrainConfig,
) -> Tuple[Tensor, Tensor]:
    """(weighted CE + lambda * sum|w|, weighted CE)."""
    ce = weighted_cross_entropy(output.logits, targets, class_weights)
    if config.lambda_l1 == 0:
        return ce, ce
    if config.l1_target == "attention_weights":
        penalty = l1_penalty(output.sensor_attention, config.lambda_l1)
    else:
        penalty = None
        for name in CLASSIFIER_ATTENTION_WEIGHTS:
            term = l1_penalty(params.tensors[name], config.lambda_l1)
            penalty = term if penalty is None else penalty + term
    return ce + penalty, ce


def _batches(order: np.ndarray, batch_size: int) -> List[np.ndarray]:
    batches = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    if len(batches) > 1 and len(batches[-1]) < 2:
        # batch norm needs two samples; fold a lone trailing sample into the previous batch
        batches[-2] = np.concatenate([batches[-2], batches.pop()])
    return batches


def evaluate_split(params: ModelParams, split: Split, class_weights: np.ndarray) -> Tuple[float, float]:
    """Eval-mode (weighted CE, accuracy) on an untouched split."""
    logits = []
    for start in range(0, len(split.X), EVAL_CHUNK):
        logits.append(model_forward(split.X[start:start + EVAL_CHUNK], params, "eval").logits.data)
    logits = np.concatenate(logits)
    loss = weighted_cross_entropy(Tensor(logits), split.y, class_weights)
    accuracy = float(np.mean(logits.argmax(axis=1) == split.y))
    return float(loss.data), accuracy


def train_model(
    train_set: Split,
    valid_set: Split,
    model_seed: int,
    config: TrainConfig,
    model_config: Optional[ModelConfig] = None,
    class_weights: Optional[np.ndarray] = None,
    callback: Optional[TrainingCallback] = None,
    tag: str = "model",
) -> Tuple[ModelParams, TrainRecord]:
    model_config = model_config or ModelConfig()
    callback = callback or TrainingCallback()
    if len(train_set.X) < 2:
        raise ValueError(f"training needs at least 2 samples, got {len(train_set.X)}")
    if class_weights is None:
        class_weights = compute_class_weights(train_set.y, model_config.classes)

    params = init_params(model_config, model_seed)
    stream = RngStream(derive_seed(model_seed, "train"))
    adam = AdamState()
    scheduler = PlateauScheduler(
        config.learning_rate, config.plateau_factor, config.plateau_patience, config.min_lr, config.improvement_threshold
    )
    stopper = EarlyStopping(config.early_stop_patience, config.improvement_threshold)
    record = TrainRecord(seed=model_seed)
    best_params = params.copy()
    X = train_set.X.astype(model_config.np_dtype, copy=False)
    callback.on_member_start(tag, model_seed)

    for epoch in range(1, config.max_epochs + 1):
        rng = stream.next()
        lr = scheduler.lr
        loss_sum, correct = 0.0, 0
        for batch_index, idx in enumerate(_batches(rng.permutation(len(X)), config.batch_size)):
            params.zero_grad()
            output = model_forward(X[idx], params, "train", rng)
            total, _ = compute_total_loss(output, train_set.y[idx], class_weights, params, config)
            value = float(total.data)
            if not np.isfinite(value):
                raise NumericError(f"{tag}: non-finite loss {value} at epoch {epoch}, batch {batch_index}")
            total.backward()
            adam_step(params.tensors, {n: t.grad for n, t in params.tensors.items()}, adam, lr)
            loss_sum += value * len(idx)
            correct += int(np.sum(output.logits.data.argmax(axis=1) == train_set.y[idx]))

        valid_loss, valid_accuracy = evaluate_split(params, valid_set, class_weights)
        if not np.isfinite(valid_loss):
            raise NumericError(f"{tag}: non-finite validation loss at epoch {epoch}")
        record.train_loss.append(loss_sum / len(X))
        record.train_accuracy.append(correct / len(X))
        record.valid_loss.append(valid_loss)
        record.valid_accuracy.append(valid_accuracy)
        record.lr.append(lr)
        record.stopped_epoch = epoch
        callback.on_epoch_end(tag, epoch, {
            "train_loss": record.train_loss[-1],
            "valid_loss": valid_loss,
            "valid_accuracy": valid_accuracy,
            "lr": lr,
        })

        if stopper.step(valid_loss):
            record.best_epoch = epoch
            best_params = params.copy()
        reduce_lr_on_plateau(scheduler, valid_loss)
        if stopper.should_stop:
            logger.debug(f"{tag}: early stop at epoch {epoch}, best epoch {record.best_epoch}")
            break

    callback.on_member_end(tag, record.best_epoch, record.stopped_epoch, record.best_valid_loss)
    return best_params, record


def _member_seeds(base_seed: int, size: int, seeds: Optional[Sequence[int]]) -> List[int]:
    if seeds is not None:
        if len(seeds) != size:
            raise ValueError(f"{len(seeds)} seeds given for an ensemble of {size}")
        return [int(s) for s in seeds]
    return [base_seed + i for i in range(size)]


def _train_member(
    member: int,
    seed: int,
    fold_data: FoldData,
    config: TrainConfig,
    model_config: ModelConfig,
    callback: Optional[TrainingCallback],
    tag: str,
) -> Tuple[ModelParams, TrainRecord]:
    try:
        params, record = train_model(
            fold_data.train, fold_data.valid, seed, config, model_config,
            fold_data.class_weights, callback, f"{tag}_member{member}",
        )
    except Exception as e:
        raise EnsembleMemberError(member, seed, e) from e
    params.normalizer = fold_data.normalizer
    return params, record


async def _train_members_async(
    fold_data: FoldData,
    config: TrainConfig,
    model_config: ModelConfig,
    seeds: List[int],
    callback: Optional[TrainingCallback],
    tag: str,
    jobs: int,
) -> List[Tuple[ModelParams, TrainRecord]]:
    sem = asyncio.Semaphore(jobs)

    async def train_with_semaphore(member: int, seed: int):
        async with sem:
            return await asyncio.to_thread(
                _train_member, member, seed, fold_data, config, model_config, callback, tag
            )

    tasks = [train_with_semaphore(i, s) for i, s in enumerate(seeds)]
    results = await asyncio.gather(*tasks, return_exceptions=True)
    for result in results:
        if isinstance(result, Exception):
            raise result
    return list(results)


def train_fold_ensemble(
    fold_data: FoldData,
    config: TrainConfig,
    base_seed: int,
    model_config: Optional[ModelConfig] = None,
    seeds: Optional[Sequence[int]] = None,
    callback: Optional[TrainingCallback] = None,
    tag: str = "fold",
    jobs: int = 1,
) -> List[Tuple[ModelParams, TrainRecord]]:
    """Train `config.ensemble_size` members with seeds base_seed + i on identical fold data."""
    model_config = model_config or ModelConfig()
    member_seeds = _member_seeds(base_seed, config.ensemble_size, seeds)
    if jobs > 1 and len(member_seeds) > 1:
        return asyncio.run(_train_members_async(fold_data, config, model_config, member_seeds, callback, tag, jobs))
    return [
        _train_member(i, s, fold_data, config, model_config, callback, tag)
        for i, s in enumerate(member_seeds)
    ]


def member_outputs(members: Sequence[ModelParams], x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Per-member probabilities (M x N x C) and sensor attention (M x N x heads x sensors)."""
    if not members:
        raise ValueError("ensemble is empty")
    outputs = [predict_proba(x, m) for m in members]
    return np.stack([p for p, _ in outputs]), np.stack([a for _, a in outputs])


def aggregate_probabilities(member_probs: np.ndarray, aggregation: str = "mean") -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    if member_probs.shape[0] == 0:
        raise ValueError("ensemble is empty")
    mean = member_probs.mean(axis=0)
    std = member_probs.std(axis=0)
    if aggregation == "mean":
        pred = mean.argmax(axis=1)
    elif aggregation == "vote":
        votes = member_probs.argmax(axis=2)
        tallies = np.stack([(votes == c).sum(axis=0) for c in range(member_probs.shape[2])], axis=1)
        pred = tallies.argmax(axis=1)
    else:
        raise ValueError(f"aggregation must be one of {AGGREGATIONS}, got {aggregation!r}")
    return pred, mean, std


def ensemble_predict(
    members: Sequence[ModelParams],
    x: np.ndarray,
    aggregation: str = "mean",
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(class per sample, mean probabilities, per-class probability std across members)."""
    probs, _ = member_outputs(members, x)
    return aggregate_probabilities(probs, aggregation)


@dataclass
class FoldResult:
    repetition: int
    fold: int
    status: str
    error: Optional[str] = None
    error_type: Optional[str] = None
    valid_idx: Optional[np.ndarray] = None
    y_true: Optional[np.ndarray] = None
    y_pred: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None
    prob_std: Optional[np.ndarray] = None
    member_probs: Optional[np.ndarray] = None
    attention: Optional[np.ndarray] = None  # members x N x heads x sensors
    records: List[TrainRecord] = field(default_factory=list)
    member_seeds: List[int] = field(default_factory=list)
    members: List[ModelParams] = field(default_factory=list)
    counts: Dict[str, Dict[int, int]] = field(default_factory=dict)
    class_weights: Optional[np.ndarray] = None
    confusion: Optional[ConfusionMatrix] = None
    metrics: Optional[MetricsReport] = None

    @property
    def tag(self) -> str:
        return f"rep{self.repetition}_fold{self.fold}"


@dataclass
class CampaignResult:
    campaign_seed: int
    plan: FoldPlan
    folds: List[FoldResult]
    configs: Dict[str, dict]

    @property
    def completed(self) -> List[FoldResult]:
        return [f for f in self.folds if f.status == "ok"]

    @property
    def status(self) -> str:
        return "complete" if len(self.completed) == len(self.folds) else "partial"

    def confusion(self) -> ConfusionMatrix:
        return sum((f.confusion for f in self.completed), ConfusionMatrix.empty())

    def metrics(self) -> MetricsReport:
        y_true = np.concatenate([f.y_true for f in self.completed])
        y_pred = np.concatenate([f.y_pred for f in self.completed])
        probs = np.concatenate([f.probs for f in self.completed])
        return evaluate_predictions(y_true, y_pred, probs, len(CLASS_NAMES))[1]

    def learning_curves(self) -> pd.DataFrame:
        rows = []
        for f in self.completed:
            for member, record in enumerate(f.records):
                for split in ("train", "valid"):
                    losses = getattr(record, f"{split}_loss")
                    accuracies = getattr(record, f"{split}_accuracy")
                    for epoch, (loss, acc) in enumerate(zip(losses, accuracies), start=1):
                        rows.append({
                            "repetition": f.repetition, "fold": f.fold, "member": member,
                            "epoch": epoch, "split": split, "loss": loss, "accuracy": acc,
                        })
        return pd.DataFrame(rows, columns=["repetition", "fold", "member", "epoch", "split", "loss", "accuracy"])

    def predictions(self) -> pd.DataFrame:
        frames = []
        for f in self.completed:
            frame = pd.DataFrame({
                "repetition": f.repetition,
                "fold": f.fold,
                "sample_index": f.valid_idx,
                "true": f.y_true,
                "pred": f.y_pred,
            })
            for c, name in enumerate(CLASS_NAMES):
                frame[f"p_{name}"] = f.probs[:, c]
                frame[f"std_{name}"] = f.prob_std[:, c]
            frames.append(frame)
        return pd.concat(frames, ignore_index=True) if frames else pd.DataFrame()

    def member_metrics(self) -> pd.DataFrame:
        rows = []
        for f in self.completed:
            for member, record in enumerate(f.records):
                accuracy = float(np.mean(f.member_probs[member].argmax(axis=1) == f.y_true))
                rows.append({
                    "repetition": f.repetition, "fold": f.fold, "member": member,
                    "seed": record.seed, "best_epoch": record.best_epoch,
                    "stopped_epoch": record.stopped_epoch,
                    "best_valid_loss": record.best_valid_loss, "valid_accuracy": accuracy,
                })
        return pd.DataFrame(rows)


def _run_fold(
    dataset: FrfDataset,
    plan: FoldPlan,
    repetition: int,
    fold: int,
    train_config: TrainConfig,
    pipeline_config: PipelineConfig,
    model_config: ModelConfig,
    campaign_seed: int,
    callback: Optional[TrainingCallback],
    member_jobs: int = 1,
) -> FoldResult:
    train_idx = plan.train_indices(repetition, fold)
    valid_idx = plan.validation_indices(repetition, fold)
    fold_data = prepare_fold(
        dataset.magnitudes, dataset.labels, train_idx, valid_idx,
        pipeline_config, derive_seed(campaign_seed, "data", repetition, fold),
    )
    base_seed = derive_seed(campaign_seed, "model", repetition, fold) % (2 ** 31)
    tag = f"rep{repetition}_fold{fold}"
    trained = train_fold_ensemble(
        fold_data, train_config, base_seed, model_config, callback=callback, tag=tag, jobs=member_jobs
    )
    members = [p for p, _ in trained]
    member_probs, attention = member_outputs(members, fold_data.valid.X)
    pred, mean, std = aggregate_probabilities(member_probs, train_config.aggregation)
    cm, report = evaluate_predictions(fold_data.valid.y, pred, mean, model_config.classes)
    logger.info(f"{tag}: accuracy {report.accuracy:.4f}, balanced {report.balanced_accuracy:.4f}")
    return FoldResult(
        repetition=repetition,
        fold=fold,
        status="ok",
        valid_idx=valid_idx,
        y_true=fold_data.valid.y,
        y_pred=pred,
        probs=mean,
        prob_std=std,
        member_probs=member_probs,
        attention=attention.astype(np.float32),
        records=[r for _, r in trained],
        member_seeds=[r.seed for _, r in trained],
        members=members,
        counts=fold_data.counts,
        class_weights=fold_data.class_weights,
        confusion=cm,
        metrics=report,
    )


async def _run_folds_async(tasks_args: List[Tuple[int, int]], run_one, jobs: int, callback: TrainingCallback) -> List[FoldResult]:
    sem = asyncio.Semaphore(jobs)
    progress = tqdm(total=len(tasks_args), desc="folds", unit="fold")

    async def run_with_semaphore(repetition: int, fold: int) -> FoldResult:
        async with sem:
            try:
                return await asyncio.to_thread(run_one, repetition, fold)
            except Exception as e:
                logger.error(f"Fold rep{repetition}_fold{fold} failed: {str(e)}")
                logger.debug(traceback.format_exc())
                callback.on_fold_error(f"rep{repetition}_fold{fold}", e)
                root = e.__cause__ if isinstance(e, EnsembleMemberError) and e.__cause__ else e
                return FoldResult(
                    repetition, fold, status="failed",
                    error=f"{type(e).__name__}: {e}", error_type=type(root).__name__,
                )
            finally:
                progress.update(1)

    tasks = [run_with_semaphore(r, f) for r, f in tasks_args]
    results = await asyncio.gather(*tasks, return_exceptions=True)
    progress.close()
    folds = []
    for (r, f), result in zip(tasks_args, results):
        if isinstance(result, Exception):
            folds.append(FoldResult(r, f, status="failed", error=str(result), error_type=type(result).__name__))
        else:
            folds.append(result)
    return folds


def run_cross_validation(
    dataset: FrfDataset,
    train_config: TrainConfig,
    pipeline_config: Optional[PipelineConfig] = None,
    campaign_seed: int = 0,
    model_config: Optional[ModelConfig] = None,
    jobs: int = 1,
    callback: Optional[TrainingCallback] = None,
    member_jobs: int = 1,
) -> CampaignResult:
    """Repeated stratified K-fold campaign; results depend only on `campaign_seed`.

    `jobs` folds run concurrently, each training up to `member_jobs` ensemble members at once.
    """
    pipeline_config = pipeline_config or PipelineConfig()
    model_config = model_config or ModelConfig(sensors=dataset.sensor_count, sequence_length=dataset.frequency_count)
    callback = callback or TrainingCallback()
    if pipeline_config.sensor_subset is None and dataset.sensor_subset is not None:
        pipeline_config = PipelineConfig(
            smote_k=pipeline_config.smote_k,
            augmentation=pipeline_config.augmentation,
            sensor_subset=list(dataset.sensor_subset),
        )
    plan = plan_folds(dataset.labels, train_config.folds, train_config.repetitions, campaign_seed)
    logger.info(
        f"Campaign seed {campaign_seed}: {train_config.repetitions} x {train_config.folds} folds, "
        f"ensemble {train_config.ensemble_size}, {jobs} jobs x {member_jobs} member jobs"
    )

    def run_one(repetition: int, fold: int) -> FoldResult:
        return _run_fold(
            dataset, plan, repetition, fold, train_config, pipeline_config,
            model_config, campaign_seed, callback, member_jobs,
        )

    tasks_args = [(r, f) for r in range(train_config.repetitions) for f in range(train_config.folds)]
    folds = asyncio.run(_run_folds_async(tasks_args, run_one, max(1, jobs), callback))
    result = CampaignResult(
        campaign_seed=campaign_seed,
        plan=plan,
        folds=folds,
        configs={
            "train": asdict(train_config),
            "pipeline": asdict(pipeline_config),
            "model": asdict(model_config),
        },
    )
    if result.status == "partial":
        failed = [f.tag for f in folds if f.status != "ok"]
        logger.warning(f"Campaign finished partially; failed folds: {failed}")
    return result


def learning_curve_summary(curves: pd.DataFrame) -> pd.DataFrame:
    """Mean and std per (split, epoch) across runs, truncated at the shortest run."""
    if curves.empty:
        return pd.DataFrame(columns=["split", "epoch", "loss_mean", "loss_std", "accuracy_mean", "accuracy_std", "runs"])
    run_keys = ["repetition", "fold", "member"]
    shortest = int(curves.groupby(run_keys)["epoch"].max().min())
    aligned = curves[curves["epoch"] <= shortest]
    summary = aligned.groupby(["split", "epoch"]).agg(
        loss_mean=("loss", "mean"),
        loss_std=("loss", lambda s: float(np.std(s))),
        accuracy_mean=("accuracy", "mean"),
        accuracy_std=("accuracy", lambda s: float(np.std(s))),
        runs=("loss", "size"),
    )
    return summary.reset_index()


async def _write_text(path: Path, text: str):
    async with aiofiles.open(path, "w") as f:
        await f.write(text)


def _campaign_document(result: CampaignResult) -> dict:
    return {
        "status": result.status,
        "campaign_seed": result.campaign_seed,
        "configs": result.configs,
        "shuffle_seeds": result.plan.shuffle_seeds,
        "class_names": list(CLASS_NAMES),
        "folds": [
            {
                "repetition": f.repetition,
                "fold": f.fold,
                "status": f.status,
                "error": f.error,
                "error_type": f.error_type,
                "member_seeds": f.member_seeds,
                "best_epochs": [r.best_epoch for r in f.records],
                "stopped_epochs": [r.stopped_epoch for r in f.records],
                "counts": {stage: {str(k): v for k, v in c.items()} for stage, c in f.counts.items()},
                "class_weights": f.class_weights.tolist() if f.class_weights is not None else None,
                "metrics": f.metrics.to_dict() if f.metrics else None,
            }
            for f in result.folds
        ],
    }


async def _save_campaign_async(result: CampaignResult, directory: Path, keep_checkpoints: bool):
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "attention").mkdir(exist_ok=True)
    writes = [
        _write_text(directory / "campaign.json", json.dumps(_campaign_document(result), indent=2, sort_keys=True)),
        _write_text(directory / "learning_curves.csv", result.learning_curves().to_csv(index=False)),
    ]
    if result.completed:
        writes += [
            _write_text(directory / "confusion.csv", confusion_to_frame(result.confusion()).to_csv()),
            _write_text(directory / "predictions.csv", result.predictions().to_csv(index=False)),
            _write_text(directory / "member_metrics.csv", result.member_metrics().to_csv(index=False)),
        ]
    index_rows = []
    for f in result.completed:
        np.save(directory / "attention" / f"{f.tag}.npy", f.attention)
        for position, (sample, label) in enumerate(zip(f.valid_idx, f.y_true)):
            index_rows.append({
                "repetition": f.repetition, "fold": f.fold, "position": position,
                "sample_index": int(sample), "label": int(label),
            })
        if keep_checkpoints:
            for member, params in enumerate(f.members):
                save_checkpoint(
                    params,
                    directory / "checkpoints" / f"{f.tag}_member{member}",
                    {"repetition": f.repetition, "fold": f.fold, "member": member, "seed": f.member_seeds[member]},
                )
    writes.append(_write_text(directory / "attention" / "index.csv", pd.DataFrame(
        index_rows, columns=["repetition", "fold", "position", "sample_index", "label"]
    ).to_csv(index=False)))
    await asyncio.gather(*writes)


def save_campaign(result: CampaignResult, directory: Path, keep_checkpoints: bool = True) -> Path:
    directory = Path(directory)
    asyncio.run(_save_campaign_async(result, directory, keep_checkpoints))
    export_fold_plan(result.plan, directory / "folds.csv")
    if result.completed:
        per_fold = {f.tag: f.metrics for f in result.completed}
        write_metrics(result.metrics(), directory, per_fold)
    logger.info(f"Saved campaign ({result.status}) to {directory}")
    return directory


@dataclass
class CampaignArtifacts:
    directory: Path
    document: dict
    learning_curves: pd.DataFrame
    predictions: pd.DataFrame
    member_metrics: pd.DataFrame
    attention_index: pd.DataFrame
    attention: Dict[Tuple[int, int], np.ndarray]

    @property
    def status(self) -> str:
        return self.document["status"]

    def confusion(self) -> ConfusionMatrix:
        return confusion(self.predictions["true"], self.predictions["pred"], len(CLASS_NAMES))

    def probabilities(self) -> np.ndarray:
        return self.predictions[[f"p_{name}" for name in CLASS_NAMES]].to_numpy()

    def checkpoint(self, repetition: int, fold: int, member: int) -> ModelParams:
        params, _ = load_checkpoint(self.directory / "checkpoints" / f"rep{repetition}_fold{fold}_member{member}")
        return params


REQUIRED_ARTIFACTS = (
    "campaign.json",
    "learning_curves.csv",
    "confusion.csv",
    "predictions.csv",
    "member_metrics.csv",
    "attention/index.csv",
)


def load_campaign(directory: Path) -> CampaignArtifacts:
    directory = Path(directory)
    missing = [name for name in REQUIRED_ARTIFACTS if not (directory / name).is_file()]
    if missing:
        raise MissingArtifactsError(f"Campaign directory {directory} is missing: {', '.join(missing)}")
    with open(directory / "campaign.json", "r") as f:
        document = json.load(f)
    index = pd.read_csv(directory / "attention" / "index.csv")
    attention = {}
    for (repetition, fold), _ in index.groupby(["repetition", "fold"]):
        path = directory / "attention" / f"rep{repetition}_fold{fold}.npy"
        if not path.is_file():
            raise MissingArtifactsError(f"Campaign directory {directory} is missing: attention/{path.name}")
        attention[(int(repetition), int(fold))] = np.load(path)
    return CampaignArtifacts(
        directory=directory,
        document=document,
        learning_curves=pd.read_csv(directory / "learning_curves.csv"),
        predictions=pd.read_csv(directory / "predictions.csv"),
        member_metrics=pd.read_csv(directory / "member_metrics.csv"),
        attention_index=index,
        attention=attention,
    )
