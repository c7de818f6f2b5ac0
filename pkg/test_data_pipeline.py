import numpy as np
import pandas as pd
import pytest

from data_pipeline import (
    STD_FLOOR,
    AugmentationConfig,
    PipelineConfig,
    SmoteError,
    apply_normalizer,
    apply_sensor_mask,
    augment_jitter,
    augment_noise,
    augment_scale,
    augmentation_counts,
    build_training_set,
    compute_class_weights,
    export_fold_plan,
    fit_normalizer,
    plan_folds,
    prepare_fold,
    smote_oversample,
)

DATASET_LABELS = np.repeat([0, 1, 2], [125, 2625, 1000])


class ReadLog:
    """Array stand-in that records every index it is read with."""

    def __init__(self, data):
        self.data = data
        self.reads = []

    def __getitem__(self, index):
        self.reads.append(np.array(index, copy=True))
        return self.data[index]

    def __len__(self):
        return len(self.data)


def test_plan_folds_fold_sizes():
    plan = plan_folds(DATASET_LABELS, k=10, repetitions=3, seed=0)
    for rep in range(3):
        for fold in range(10):
            valid = plan.validation_indices(rep, fold)
            assert valid.size == 375
            assert np.sum(DATASET_LABELS[valid] == 0) in (12, 13)


def test_plan_folds_cover_each_sample_once():
    plan = plan_folds(DATASET_LABELS, k=10, repetitions=3, seed=0)
    for rep in range(3):
        seen = np.concatenate([plan.validation_indices(rep, f) for f in range(10)])
        assert np.array_equal(np.sort(seen), np.arange(DATASET_LABELS.size))
        train = plan.train_indices(rep, 0)
        assert np.intersect1d(train, plan.validation_indices(rep, 0)).size == 0


def test_plan_folds_stratification_within_one_sample():
    plan = plan_folds(DATASET_LABELS, k=10, repetitions=1, seed=5)
    totals = np.bincount(DATASET_LABELS)
    for fold in range(10):
        counts = np.bincount(DATASET_LABELS[plan.validation_indices(0, fold)], minlength=3)
        assert np.all(np.abs(counts - totals / 10) <= 1)


def test_plan_folds_repetitions_differ_and_are_deterministic():
    a = plan_folds(DATASET_LABELS, k=10, repetitions=3, seed=0)
    b = plan_folds(DATASET_LABELS, k=10, repetitions=3, seed=0)
    assert np.array_equal(a.assignments, b.assignments)
    assert not np.array_equal(a.assignments[0], a.assignments[1])
    assert len(set(a.shuffle_seeds)) == 3


def test_plan_folds_preconditions():
    labels = np.repeat([0, 1], [9, 40])
    with pytest.raises(ValueError, match="at least k"):
        plan_folds(labels, k=10, repetitions=1)
    with pytest.raises(ValueError):
        plan_folds(DATASET_LABELS, k=1)


def test_export_fold_plan(tmp_path):
    labels = np.repeat([0, 1, 2], [4, 6, 5])
    plan = plan_folds(labels, k=2, repetitions=2, seed=1)
    path = export_fold_plan(plan, tmp_path / "folds.csv")
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["repetition", "fold", "sample_index", "role"]
    assert len(frame) == 2 * 2 * labels.size
    valid = frame[frame["role"] == "valid"]
    assert valid.groupby("repetition")["sample_index"].nunique().tolist() == [labels.size, labels.size]


def test_normalizer_degenerate_variance():
    x = np.ones((2, 3, 4))
    normalizer = fit_normalizer(x)
    assert np.all(normalizer.std == STD_FLOOR)
    assert np.all(apply_normalizer(normalizer, x) == 0)


def test_normalizer_centres_training_data(small_arrays):
    samples, _ = small_arrays
    normalizer = fit_normalizer(samples)
    transformed = apply_normalizer(normalizer, samples, dtype=np.float64)
    assert normalizer.n_fitted == len(samples)
    assert np.max(np.abs(transformed.mean(axis=0))) < 1e-6
    assert np.allclose(transformed.std(axis=0), 1.0, atol=1e-6)


def test_normalizer_apply_is_stateless(small_arrays):
    samples, _ = small_arrays
    normalizer = fit_normalizer(samples[:20])
    first = apply_normalizer(normalizer, samples[40:])
    apply_normalizer(normalizer, samples[:40])
    assert np.array_equal(first, apply_normalizer(normalizer, samples[40:]))


def test_normalizer_rejects_empty():
    with pytest.raises(ValueError):
        fit_normalizer(np.zeros((0, 28, 150)))


def test_smote_balances_to_majority(rng):
    labels = np.repeat([0, 1, 2], [100, 500, 200])
    samples = rng.normal(size=(labels.size, 4, 5))
    X, y = smote_oversample(samples, labels, k_neighbors=5, seed=0)
    assert np.bincount(y).tolist() == [500, 500, 500]
    assert np.array_equal(X[:labels.size], samples)
    assert X.shape[1:] == (4, 5)


def test_smote_identical_points(rng):
    point = rng.normal(size=(3, 4))
    samples = np.concatenate([np.stack([point, point]), rng.normal(size=(6, 3, 4))])
    labels = np.array([0, 0, 1, 1, 1, 1, 1, 1])
    X, y = smote_oversample(samples, labels, seed=3)
    for synthetic in X[labels.size:][y[labels.size:] == 0]:
        assert np.allclose(synthetic, point)


def test_smote_synthetics_lie_on_segment(rng):
    a, b = rng.normal(size=(2, 6))
    samples = np.concatenate([np.stack([a, b]), rng.normal(size=(7, 6))])
    labels = np.array([0, 0] + [1] * 7)
    X, y = smote_oversample(samples, labels, seed=11)
    direction = b - a
    for s in X[labels.size:]:
        u = float(np.dot(s - a, direction) / np.dot(direction, direction))
        assert -1e-12 <= u <= 1 + 1e-12
        assert np.allclose(s, a + u * direction)


def test_smote_rejects_singleton_class(rng):
    samples = rng.normal(size=(5, 2))
    labels = np.array([0, 1, 1, 1, 1])
    with pytest.raises(SmoteError, match="class 0"):
        smote_oversample(samples, labels)


def test_augment_noise_identity_and_validation(rng):
    sample = rng.normal(size=(28, 150))
    assert np.array_equal(augment_noise(sample, 0.0, 1), sample)
    with pytest.raises(ValueError):
        augment_noise(sample, -1.0, 1)


def test_augment_noise_standard_deviation():
    sample = np.zeros(100_000)
    noisy = augment_noise(sample, 2.5, seed=7)
    assert abs(np.std(noisy - sample) / 2.5 - 1.0) < 0.02


def test_augment_jitter_common_roll():
    sample = np.tile(np.arange(150, dtype=float), (28, 1)) + np.arange(28)[:, None] * 1000
    out = augment_jitter(sample, 3, seed=4)
    # position each row's first bin moved to
    shifts = {int(np.argmax(out[row] == sample[row, 0])) for row in range(28)}
    assert len(shifts) == 1
    assert shifts.pop() in (0, 1, 2, 3, 147, 148, 149)


def test_augment_jitter_identities():
    row = np.arange(1.0, 151.0)
    assert np.array_equal(augment_jitter(row[None, :], 0, seed=1), row[None, :])
    assert np.array_equal(np.roll(row, 150), row)
    assert np.array_equal(np.roll(row, 1)[:3], [150.0, 1.0, 2.0])
    with pytest.raises(ValueError):
        augment_jitter(row, 150)


def test_augment_jitter_bounds_follow_sequence_length():
    short = np.arange(1.0, 13.0)[None, :]
    with pytest.raises(ValueError, match=r"\[0, 12\)"):
        augment_jitter(short, 12)
    assert sorted(augment_jitter(short, 11, seed=3)[0]) == list(short[0])
    long = np.zeros((2, 300))
    assert augment_jitter(long, 200, seed=3).shape == (2, 300)


def test_build_training_set_rejects_jitter_longer_than_sequence(rng):
    labels = np.repeat([0, 1, 2], 8)
    samples = rng.normal(size=(labels.size, 3, 10))
    config = PipelineConfig(augmentation=AugmentationConfig(jitter_max_shift=10, class_factors=[1, 1, 1]))
    with pytest.raises(ValueError, match="jitter_max_shift"):
        build_training_set(samples, labels, config, seed=0)


def test_augment_scale(rng):
    sample = rng.uniform(1.0, 2.0, size=(28, 150))
    assert np.array_equal(augment_scale(sample, 0.0, seed=2), sample)
    scaled = augment_scale(sample, 0.10, seed=2)
    ratio = scaled / sample
    assert np.allclose(ratio, ratio[0, 0], rtol=1e-12, atol=0)
    assert 0.9 <= np.max(np.abs(scaled)) / np.max(np.abs(sample)) <= 1.1


def test_build_training_set_balanced_factor_one(rng):
    labels = np.repeat([0, 1, 2], 8)
    samples = rng.normal(size=(labels.size, 3, 10))
    config = PipelineConfig(augmentation=AugmentationConfig(target_multiplier=1.0))
    X, y, stages = build_training_set(samples, labels, config, seed=0)
    assert np.array_equal(X, samples)
    assert stages["augmented"] == {0: 8, 1: 8, 2: 8}


def test_build_training_set_doubles_balanced_classes(rng):
    labels = np.repeat([0, 1, 2], 8)
    samples = rng.normal(size=(labels.size, 3, 10))
    config = PipelineConfig(augmentation=AugmentationConfig(target_multiplier=2.0))
    X, y, stages = build_training_set(samples, labels, config, seed=0)
    assert np.bincount(y).tolist() == [16, 16, 16]
    assert X.shape == (48, 3, 10)


def test_build_training_set_order_of_stages(small_arrays):
    samples, labels = small_arrays
    X, y, stages = build_training_set(samples, labels, PipelineConfig(), seed=3)
    assert stages["original"] == {0: 10, 1: 30, 2: 20}
    assert stages["smote"] == {0: 30, 1: 30, 2: 30}
    assert stages["augmented"] == {0: 45, 1: 45, 2: 45}
    assert len(X) == len(y) == 135


def test_build_training_set_deterministic(small_arrays):
    samples, labels = small_arrays
    a = build_training_set(samples, labels, PipelineConfig(), seed=9)
    b = build_training_set(samples, labels, PipelineConfig(), seed=9)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_augmentation_counts_with_explicit_factors():
    config = AugmentationConfig(class_factors=[2, 0, 1])
    assert augmentation_counts({0: 10, 1: 10, 2: 10}, config) == {0: 20, 1: 0, 2: 10}


def test_augmentation_config_validation():
    with pytest.raises(ValueError):
        AugmentationConfig(jitter_max_shift=-1)
    with pytest.raises(ValueError):
        AugmentationConfig(target_multiplier=0.5)
    assert isinstance(PipelineConfig(augmentation={"noise_fraction": 0.2}).augmentation, AugmentationConfig)


def test_class_weights_dataset_counts():
    weights = compute_class_weights(DATASET_LABELS)
    assert weights == pytest.approx([10.0, 0.47619, 1.25], abs=1e-5)
    counts = np.bincount(DATASET_LABELS)
    assert np.sum(weights * counts) == pytest.approx(DATASET_LABELS.size)


def test_class_weights_balanced_and_missing():
    assert np.allclose(compute_class_weights(np.repeat([0, 1, 2], 4)), 1.0)
    with pytest.raises(ValueError, match="missing"):
        compute_class_weights(np.array([0, 0, 1]))


def test_sensor_mask(rng):
    samples = rng.normal(size=(3, 28, 150))
    masked = apply_sensor_mask(samples, [0])
    assert np.all(masked[:, 1:, :] == 0)
    assert np.array_equal(masked[:, 0, :], samples[:, 0, :])
    assert np.array_equal(apply_sensor_mask(masked, [0]), masked)
    assert apply_sensor_mask(samples, None) is samples


def test_prepare_fold_never_reads_validation_rows_early(small_arrays):
    samples, labels = small_arrays
    plan = plan_folds(labels, k=5, repetitions=1, seed=2)
    train_idx, valid_idx = plan.train_indices(0, 0), plan.validation_indices(0, 0)
    poisoned = samples.copy()
    poisoned[valid_idx] = np.nan
    log = ReadLog(poisoned)

    fold = prepare_fold(log, labels, train_idx, valid_idx, PipelineConfig(), seed=1)

    assert len(log.reads) == 2
    assert np.array_equal(log.reads[0], train_idx)
    assert np.array_equal(log.reads[1], valid_idx)
    # the NaN sentinels would propagate into any statistic that touched them
    assert np.all(np.isfinite(fold.normalizer.mean)) and np.all(np.isfinite(fold.normalizer.std))
    assert np.all(np.isfinite(fold.noise_sigmas))
    assert np.all(np.isfinite(fold.train.X))
    assert np.all(np.isnan(fold.valid.X))
    assert fold.normalizer.n_fitted == train_idx.size


def test_prepare_fold_leaves_validation_untouched(small_arrays):
    samples, labels = small_arrays
    plan = plan_folds(labels, k=5, repetitions=1, seed=2)
    train_idx, valid_idx = plan.train_indices(0, 1), plan.validation_indices(0, 1)
    before = samples[valid_idx].copy()
    fold = prepare_fold(samples, labels, train_idx, valid_idx, PipelineConfig(), seed=4)
    assert np.array_equal(samples[valid_idx], before)
    assert np.array_equal(fold.valid.y, labels[valid_idx])
    expected = apply_normalizer(fold.normalizer, before)
    assert np.array_equal(fold.valid.X, expected)


def test_prepare_fold_rejects_overlap(small_arrays):
    samples, labels = small_arrays
    with pytest.raises(ValueError, match="overlap"):
        prepare_fold(samples, labels, np.arange(0, 40), np.arange(30, 60))


def test_prepare_fold_weights_follow_augmented_set(small_arrays):
    samples, labels = small_arrays
    plan = plan_folds(labels, k=5, repetitions=1, seed=2)
    fold = prepare_fold(samples, labels, plan.train_indices(0, 2), plan.validation_indices(0, 2), seed=0)
    assert np.allclose(fold.class_weights, compute_class_weights(fold.train.y))
    assert fold.counts["smote"][0] == fold.counts["smote"][1] == fold.counts["smote"][2]
