"""Synthetic digital shadow of the probe head: modal-superposition FRF datasets.

The finite-element model is replaced by a modal basis whose natural frequencies
and per-sensor participation are shifted by material case, temperature, load
and damage. Each sample is the magnitude FRF of 28 sensors on a 150-point grid
spanning 400-4000 Hz.
"""

import json
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from tqdm import tqdm

from logging_config import setup_logger

logger = setup_logger(__name__)

SENSOR_COUNT = 28
FREQUENCY_COUNT = 150
BAND_HZ = (400.0, 4000.0)
SCREW_COUNT = 21
CRACK_COUNT = 8
TEMPERATURES_C = (25.0, 100.0, 150.0, 200.0, 250.0)
LOADS_MPA = (0.1, 0.5, 1.0, 1.5, 2.0)
REFERENCE_TEMPERATURE_C = 25.0

# condition-shift coefficients
TEMPERATURE_ALPHA = 5e-5
LOAD_BETA = 5e-3
SIN_BLEND_WEIGHT = 0.5

DEFAULT_MODE_COUNT = 12
DAMPING_RANGE = (0.01, 0.05)
MODE_BAND_HZ = (450.0, 3800.0)
# lower-residual (mass line) shapes are (RESIDUAL_REFERENCE_HZ / f)^2
RESIDUAL_REFERENCE_HZ = BAND_HZ[0]
DEFAULT_RESIDUAL_MARGIN = 6.0
DEFAULT_SIGNATURE_FILE = Path(__file__).resolve().parent / "damage_signatures.json"
DATASET_SCHEMA_VERSION = 1


class DatasetSchemaError(ValueError):
    """Raised when a dataset directory is missing files or disagrees with its manifest."""


class DamageClass(IntEnum):
    BASELINE = 0
    LOOSE_SCREW = 1
    CRACK = 2

    @property
    def label(self) -> str:
        return CLASS_NAMES[self.value]

    @classmethod
    def from_label(cls, name: str) -> "DamageClass":
        try:
            return cls(CLASS_NAMES.index(name))
        except ValueError:
            raise ValueError(f"Unknown damage class {name!r}; expected one of {CLASS_NAMES}")


CLASS_NAMES = ("Baseline", "LooseScrew", "Crack")


@dataclass(frozen=True)
class MaterialCase:
    sin_density: float
    sin_young: float
    meal_density: float
    meal_young: float

    def __post_init__(self):
        checks = (
            ("sin_density", self.sin_density, 3069.0, 3392.0),
            ("sin_young", self.sin_young, 279.0, 341.0),
            ("meal_density", self.meal_density, 7987.0, 8313.0),
            ("meal_young", self.meal_young, 138.0, 152.0),
        )
        for name, value, low, high in checks:
            if not low <= value <= high:
                raise ValueError(f"{name}={value} outside the admissible range [{low}, {high}]")


MATERIAL_CASES: Dict[int, MaterialCase] = {
    1: MaterialCase(3230.0, 310.0, 8150.0, 145.0),
    2: MaterialCase(3069.0, 279.0, 7987.0, 138.0),
    3: MaterialCase(3392.0, 341.0, 8313.0, 152.0),
    4: MaterialCase(3069.0, 341.0, 8313.0, 138.0),
    5: MaterialCase(3392.0, 279.0, 7987.0, 152.0),
}
NOMINAL_MATERIAL = MATERIAL_CASES[1]


@dataclass(frozen=True)
class ScenarioDescriptor:
    damage_class: DamageClass
    damage_index: Optional[int]
    material_case: int
    temperature: float
    load: float

    def __post_init__(self):
        object.__setattr__(self, "damage_class", DamageClass(self.damage_class))
        if self.damage_class == DamageClass.BASELINE:
            if self.damage_index is not None:
                raise ValueError("Baseline scenarios carry no damage index")
        else:
            limit = SCREW_COUNT if self.damage_class == DamageClass.LOOSE_SCREW else CRACK_COUNT
            if self.damage_index is None or not 1 <= int(self.damage_index) <= limit:
                raise ValueError(
                    f"{self.damage_class.label} damage index must lie in 1..{limit}, got {self.damage_index}"
                )
        if self.material_case not in MATERIAL_CASES:
            raise ValueError(f"material_case must be one of {sorted(MATERIAL_CASES)}, got {self.material_case}")
        if float(self.temperature) not in TEMPERATURES_C:
            raise ValueError(f"temperature must be one of {TEMPERATURES_C}, got {self.temperature}")
        if float(self.load) not in LOADS_MPA:
            raise ValueError(f"load must be one of {LOADS_MPA}, got {self.load}")

    def to_row(self) -> Dict[str, object]:
        return {
            "class": self.damage_class.label,
            "damage_index": self.damage_index,
            "material_case": self.material_case,
            "temperature": self.temperature,
            "load": self.load,
        }


@dataclass(frozen=True)
class ModalBasis:
    """Modes plus out-of-band residuals.

    Every sensor's response adds `upper_residual` (flat, stiffness of modes
    above the band) and `-lower_residual / w^2` (mass line of modes below it).
    Both default to zero.
    """

    natural_frequencies: np.ndarray  # Hz
    damping_ratios: np.ndarray
    participation: np.ndarray  # sensors x modes
    upper_residual: Optional[np.ndarray] = None  # per sensor
    lower_residual: Optional[np.ndarray] = None  # per sensor, rad^2/s^2

    def __post_init__(self):
        freqs = np.array(self.natural_frequencies, dtype=np.float64)
        damping = np.array(self.damping_ratios, dtype=np.float64)
        participation = np.array(self.participation, dtype=np.float64)
        if freqs.ndim != 1 or freqs.size < 1:
            raise ValueError("a modal basis needs at least one mode")
        if np.any(freqs <= 0) or np.any(np.diff(freqs) <= 0):
            raise ValueError("natural frequencies must be strictly positive and strictly ascending")
        if damping.shape != freqs.shape or np.any(damping <= 0) or np.any(damping >= 1):
            raise ValueError("damping ratios must lie in (0, 1), one per mode")
        if participation.ndim != 2 or participation.shape[1] != freqs.size:
            raise ValueError(
                f"participation must be sensors x modes, got {participation.shape} for {freqs.size} modes"
            )
        residuals = []
        for name in ("upper_residual", "lower_residual"):
            value = getattr(self, name)
            value = np.zeros(participation.shape[0]) if value is None else np.array(value, dtype=np.float64)
            if value.shape != (participation.shape[0],):
                raise ValueError(f"{name} must hold one value per sensor, got shape {value.shape}")
            residuals.append(value)
        for arr in [freqs, damping, participation] + residuals:
            arr.setflags(write=False)
        object.__setattr__(self, "natural_frequencies", freqs)
        object.__setattr__(self, "damping_ratios", damping)
        object.__setattr__(self, "participation", participation)
        object.__setattr__(self, "upper_residual", residuals[0])
        object.__setattr__(self, "lower_residual", residuals[1])

    @property
    def mode_count(self) -> int:
        return int(self.natural_frequencies.size)

    @property
    def sensor_count(self) -> int:
        return int(self.participation.shape[0])


@dataclass(frozen=True)
class FrfSample:
    magnitudes: np.ndarray
    label: DamageClass
    scenario: ScenarioDescriptor
    frequency_grid: np.ndarray


@dataclass(frozen=True)
class DamageSignatures:
    grid_rows: int
    grid_columns: int
    screw_modes: Tuple[int, ...]
    screw_shift_range: Tuple[float, float]
    screw_gain: float
    screw_proximity: Dict[int, Tuple[int, ...]]
    crack_modes: Tuple[int, ...]
    crack_shift_range: Tuple[float, float]
    crack_gain: float
    crack_neighbourhood: Dict[int, Tuple[int, ...]]
    # absolute residual amplitude per unit weight; set by calibrate_residual_level
    residual_level: float = 0.0

    def screw_shift(self, screw: int) -> float:
        low, high = self.screw_shift_range
        return low + (high - low) * (screw - 1) / (SCREW_COUNT - 1)

    def crack_shift(self, crack: int) -> float:
        low, high = self.crack_shift_range
        return low + (high - low) * (crack - 1) / (CRACK_COUNT - 1)

    def planted(self, sensors: Sequence[int]) -> "DamageSignatures":
        """Confine every damage signature to `sensors` and drop all frequency shifts."""
        planted = tuple(int(s) for s in sensors)
        return replace(
            self,
            screw_shift_range=(0.0, 0.0),
            crack_shift_range=(0.0, 0.0),
            screw_proximity={s: planted for s in self.screw_proximity},
            crack_neighbourhood={c: planted for c in self.crack_neighbourhood},
        )

    def residual_weights(self, damage_class: DamageClass) -> np.ndarray:
        """Per-sensor share of the class's damage sites that touch the sensor, peak 1."""
        if damage_class == DamageClass.LOOSE_SCREW:
            table = self.screw_proximity
        elif damage_class == DamageClass.CRACK:
            table = self.crack_neighbourhood
        else:
            return np.zeros(SENSOR_COUNT)
        counts = np.zeros(SENSOR_COUNT)
        for sensors in table.values():
            counts[sorted(set(sensors))] += 1.0
        return counts / max(counts.max(), 1.0)

    def residual_profile(self, damage_class: DamageClass, grid: np.ndarray) -> np.ndarray:
        """|residual| per unit level, sensors x frequencies.

        Loose screws add a flat upper residual, cracks a lower residual falling as 1/f^2.
        """
        grid = np.asarray(grid, dtype=np.float64)
        weights = self.residual_weights(damage_class)
        if damage_class == DamageClass.CRACK:
            return weights[:, None] * (RESIDUAL_REFERENCE_HZ / grid[None, :]) ** 2
        return weights[:, None] * np.ones_like(grid)[None, :]

    def sensor_positions(self) -> np.ndarray:
        """(x, y, side) per sensor from the documented grid."""
        per_side = self.grid_rows * self.grid_columns
        positions = np.zeros((SENSOR_COUNT, 3))
        for sensor in range(SENSOR_COUNT):
            side, rest = divmod(sensor, per_side)
            row, column = divmod(rest, self.grid_columns)
            positions[sensor] = (
                column / (self.grid_columns - 1),
                0.25 + 0.5 * row,
                side,
            )
        return positions


def load_damage_signatures(path: Optional[Path] = None) -> DamageSignatures:
    path = Path(path) if path else DEFAULT_SIGNATURE_FILE
    with open(path, "r") as f:
        raw = json.load(f)
    grid = raw["sensor_grid"]
    if len(grid["sides"]) * grid["rows"] * grid["columns"] != SENSOR_COUNT:
        raise ValueError(f"sensor grid in {path} does not describe {SENSOR_COUNT} sensors")
    screw, crack = raw["loose_screw"], raw["crack"]
    proximity = {int(k): tuple(v) for k, v in screw["proximity"].items()}
    neighbourhood = {int(k): tuple(v) for k, v in crack["neighbourhood"].items()}
    if sorted(proximity) != list(range(1, SCREW_COUNT + 1)):
        raise ValueError(f"{path} must list proximity sensors for screws 1..{SCREW_COUNT}")
    if sorted(neighbourhood) != list(range(1, CRACK_COUNT + 1)):
        raise ValueError(f"{path} must list neighbourhoods for cracks 1..{CRACK_COUNT}")
    for sensors in list(proximity.values()) + list(neighbourhood.values()):
        if any(not 0 <= s < SENSOR_COUNT for s in sensors):
            raise ValueError(f"sensor index out of range in {path}: {sensors}")
    return DamageSignatures(
        grid_rows=grid["rows"],
        grid_columns=grid["columns"],
        screw_modes=tuple(screw["mode_subset"]),
        screw_shift_range=tuple(screw["shift_range"]),
        screw_gain=float(screw["participation_gain"]),
        screw_proximity=proximity,
        crack_modes=tuple(crack["mode_subset"]),
        crack_shift_range=tuple(crack["shift_range"]),
        crack_gain=float(crack["participation_gain"]),
        crack_neighbourhood=neighbourhood,
    )


@dataclass
class ShadowConfig:
    seed: int = 1
    mode_count: int = DEFAULT_MODE_COUNT
    sin_blend_weight: float = SIN_BLEND_WEIGHT
    temperature_alpha: float = TEMPERATURE_ALPHA
    load_beta: float = LOAD_BETA
    peak_acceleration: float = 2000.0
    measurement_noise: float = 0.0
    planted_sensors: Optional[List[int]] = None
    signature_file: Optional[str] = None
    residual_margin: float = DEFAULT_RESIDUAL_MARGIN
    residual_level: Optional[float] = None

    def __post_init__(self):
        if self.mode_count < 1:
            raise ValueError(f"mode_count must be >= 1, got {self.mode_count}")
        if not 0.0 <= self.sin_blend_weight <= 1.0:
            raise ValueError(f"sin_blend_weight must lie in [0, 1], got {self.sin_blend_weight}")
        if self.temperature_alpha < 0 or self.load_beta < 0:
            raise ValueError("temperature_alpha and load_beta must be non-negative")
        if self.measurement_noise < 0:
            raise ValueError(f"measurement_noise must be non-negative, got {self.measurement_noise}")
        if self.residual_margin < 0:
            raise ValueError(f"residual_margin must be non-negative, got {self.residual_margin}")
        if self.residual_level is not None and self.residual_level < 0:
            raise ValueError(f"residual_level must be non-negative, got {self.residual_level}")
        if self.planted_sensors is not None:
            planted = [int(s) for s in self.planted_sensors]
            if not planted or len(set(planted)) != len(planted):
                raise ValueError("planted_sensors must be a non-empty list of distinct sensors")
            if any(not 0 <= s < SENSOR_COUNT for s in planted):
                raise ValueError(f"planted sensors must lie in 0..{SENSOR_COUNT - 1}")
            self.planted_sensors = planted

    def signatures(self) -> DamageSignatures:
        signatures = load_damage_signatures(self.signature_file)
        if self.planted_sensors:
            signatures = signatures.planted(self.planted_sensors)
        return signatures


def frequency_grid() -> np.ndarray:
    return np.linspace(BAND_HZ[0], BAND_HZ[1], FREQUENCY_COUNT)


def enumerate_scenarios() -> List[ScenarioDescriptor]:
    """All 3750 scenarios: baseline, screws 1-21, cracks 1-8, each crossed with 125 variants."""
    bases: List[Tuple[DamageClass, Optional[int]]] = [(DamageClass.BASELINE, None)]
    bases += [(DamageClass.LOOSE_SCREW, s) for s in range(1, SCREW_COUNT + 1)]
    bases += [(DamageClass.CRACK, c) for c in range(1, CRACK_COUNT + 1)]
    scenarios = []
    for damage_class, index in bases:
        for case in sorted(MATERIAL_CASES):
            for temperature in TEMPERATURES_C:
                for load in LOADS_MPA:
                    scenarios.append(ScenarioDescriptor(damage_class, index, case, temperature, load))
    return scenarios


def synthesize_modal_basis(
    seed: int,
    mode_count: int = DEFAULT_MODE_COUNT,
    signatures: Optional[DamageSignatures] = None,
    peak_acceleration: float = 2000.0,
) -> ModalBasis:
    if mode_count < 1:
        raise ValueError(f"mode_count must be >= 1, got {mode_count}")
    signatures = signatures or load_damage_signatures()
    rng = np.random.default_rng(seed)

    # one mode per band slice keeps peaks distinct and ascending
    edges = np.linspace(MODE_BAND_HZ[0], MODE_BAND_HZ[1], mode_count + 1)
    centres = 0.5 * (edges[:-1] + edges[1:])
    width = edges[1] - edges[0]
    freqs = centres + rng.uniform(-0.3, 0.3, size=mode_count) * width
    damping = rng.uniform(DAMPING_RANGE[0], DAMPING_RANGE[1], size=mode_count)

    positions = signatures.sensor_positions()
    x, y, side = positions[:, 0], positions[:, 1], positions[:, 2]
    participation = np.zeros((SENSOR_COUNT, mode_count))
    omega = 2.0 * np.pi * freqs
    for k in range(mode_count):
        a = rng.integers(1, 4)
        b = rng.integers(1, 3)
        phase_x, phase_y = rng.uniform(0.0, 2.0 * np.pi, size=2)
        coupling = rng.uniform(-1.0, 1.0)
        profile = np.sin(a * np.pi * x + phase_x) * np.cos(b * np.pi * y + phase_y)
        profile = np.where(side > 0, coupling * profile, profile)
        profile = profile / max(np.max(np.abs(profile)), 1e-12)
        amplitude = rng.uniform(0.5, 1.0)
        # scaled so the resonance peak of a unit profile reaches peak_acceleration
        participation[:, k] = amplitude * profile * peak_acceleration * 2.0 * damping[k] * omega[k] ** 2
    return ModalBasis(freqs, damping, participation)


def stiffness_mass_factor(stiffness_ratio: float, mass_ratio: float) -> float:
    return math.sqrt(stiffness_ratio / mass_ratio)


def material_factor(material: MaterialCase, sin_weight: float = SIN_BLEND_WEIGHT) -> float:
    """sqrt(E_eff / rho_eff) of `material` relative to the nominal case."""
    def blend(sin_value: float, meal_value: float) -> float:
        return sin_weight * sin_value + (1.0 - sin_weight) * meal_value

    e_eff = blend(material.sin_young, material.meal_young)
    rho_eff = blend(material.sin_density, material.meal_density)
    e_nom = blend(NOMINAL_MATERIAL.sin_young, NOMINAL_MATERIAL.meal_young)
    rho_nom = blend(NOMINAL_MATERIAL.sin_density, NOMINAL_MATERIAL.meal_density)
    return stiffness_mass_factor(e_eff / e_nom, rho_eff / rho_nom)


def temperature_factor(temperature: float, alpha: float = TEMPERATURE_ALPHA) -> float:
    return 1.0 - alpha * (temperature - REFERENCE_TEMPERATURE_C)


def load_factor(load: float, beta: float = LOAD_BETA) -> float:
    return 1.0 + beta * load


def apply_condition_shift(
    basis: ModalBasis,
    scenario: ScenarioDescriptor,
    config: Optional[ShadowConfig] = None,
    signatures: Optional[DamageSignatures] = None,
) -> ModalBasis:
    config = config or ShadowConfig()
    signatures = signatures or config.signatures()
    if basis.sensor_count != SENSOR_COUNT:
        raise ValueError(f"basis has {basis.sensor_count} sensors, expected {SENSOR_COUNT}")

    scale = (
        material_factor(MATERIAL_CASES[scenario.material_case], config.sin_blend_weight)
        * temperature_factor(scenario.temperature, config.temperature_alpha)
        * load_factor(scenario.load, config.load_beta)
    )
    freqs = basis.natural_frequencies * scale
    participation = basis.participation.copy()
    upper = basis.upper_residual.copy()
    lower = basis.lower_residual.copy()
    modes = basis.mode_count
    level = signatures.residual_level

    if scenario.damage_class == DamageClass.LOOSE_SCREW:
        subset = [k for k in signatures.screw_modes if k < modes]
        freqs[subset] *= 1.0 - signatures.screw_shift(scenario.damage_index)
        sensors = list(signatures.screw_proximity[scenario.damage_index])
        participation[sensors, :] *= 1.0 + signatures.screw_gain
        if level:
            upper += level * signatures.residual_weights(DamageClass.LOOSE_SCREW)
    elif scenario.damage_class == DamageClass.CRACK:
        subset = [k for k in signatures.crack_modes if k < modes]
        freqs[subset] *= 1.0 - signatures.crack_shift(scenario.damage_index)
        sensors = list(signatures.crack_neighbourhood[scenario.damage_index])
        mode_scale = np.mean(np.abs(basis.participation), axis=0)
        alternating = np.where(np.arange(modes) % 2 == 0, 1.0, -1.0)
        participation[sensors, :] += signatures.crack_gain * mode_scale * alternating
        if level:
            omega_ref = 2.0 * np.pi * RESIDUAL_REFERENCE_HZ
            lower += level * omega_ref ** 2 * signatures.residual_weights(DamageClass.CRACK)

    # damage shifts can swap neighbouring modes; keep the basis ascending
    order = np.argsort(freqs, kind="stable")
    return ModalBasis(freqs[order], basis.damping_ratios[order], participation[:, order], upper, lower)


def frf_response(basis: ModalBasis, grid: np.ndarray) -> np.ndarray:
    """Complex H_j(w) = sum_k P_jk / (w_k^2 - w^2 + 2i z_k w_k w) + UR_j - LR_j / w^2."""
    grid = np.asarray(grid, dtype=np.float64)
    if np.any(grid <= 0):
        raise ValueError("frequency grid points must be strictly positive")
    omega = 2.0 * np.pi * grid
    omega_k = 2.0 * np.pi * basis.natural_frequencies
    zeta = basis.damping_ratios
    denominator = (
        omega_k[:, None] ** 2
        - omega[None, :] ** 2
        + 2j * zeta[:, None] * omega_k[:, None] * omega[None, :]
    )
    response = basis.participation @ (1.0 / denominator)
    response += basis.upper_residual[:, None] - basis.lower_residual[:, None] / omega[None, :] ** 2
    return response


def compute_frf(basis: ModalBasis, grid: np.ndarray) -> np.ndarray:
    """Magnitude FRF, sensors x grid points."""
    return np.abs(frf_response(basis, grid))


def calibrate_residual_level(
    basis: ModalBasis,
    scenarios: Sequence[ScenarioDescriptor],
    grid: np.ndarray,
    config: ShadowConfig,
    signatures: DamageSignatures,
) -> float:
    """Residual level at which class signatures clear the modal condition envelope.

    Samples of class c are |H_i + r_c| with r_c shared by the whole class, so each
    sample lies within |H_i| of |r_c|. With M the largest class RMS of ||H_i||,
    every within-class spread is at most M and every centroid gap at least
    level * d_min - 2M, where d_min is the smallest distance between two unit
    residual profiles. Choosing level = margin * M / d_min gives a
    separability of at least margin - 2.
    """
    if config.residual_level is not None:
        return float(config.residual_level)
    if config.residual_margin == 0:
        return 0.0

    bare = replace(signatures, residual_level=0.0)
    energy = np.zeros(len(CLASS_NAMES))
    counts = np.zeros(len(CLASS_NAMES))
    for scenario in scenarios:
        response = frf_response(apply_condition_shift(basis, scenario, config, bare), grid)
        energy[scenario.damage_class] += float(np.sum(np.abs(response) ** 2))
        counts[scenario.damage_class] += 1
    present = counts > 0
    if present.sum() < 2:
        return 0.0
    modal_rms = float(np.sqrt(np.max(energy[present] / counts[present])))

    profiles = [signatures.residual_profile(cls, grid) for cls in DamageClass]
    d_min = min(
        float(np.linalg.norm(profiles[a] - profiles[b]))
        for a in range(len(profiles)) for b in range(a + 1, len(profiles))
        if present[a] and present[b]
    )
    if d_min == 0:
        raise ValueError("damage residual profiles coincide; classes cannot be separated")
    level = config.residual_margin * modal_rms / d_min
    logger.debug(f"Residual level {level:.4g} (modal RMS {modal_rms:.4g}, profile distance {d_min:.4g})")
    return level


@dataclass
class FrfDataset:
    magnitudes: np.ndarray  # samples x sensors x frequencies, float32
    labels: np.ndarray
    scenarios: List[ScenarioDescriptor]
    frequency_grid: np.ndarray
    seed: Optional[int] = None
    sensor_subset: Optional[Tuple[int, ...]] = None
    source_index: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.magnitudes.ndim != 3:
            raise ValueError(f"magnitudes must be samples x sensors x frequencies, got {self.magnitudes.shape}")
        if len(self.labels) != len(self.magnitudes) or len(self.scenarios) != len(self.magnitudes):
            raise ValueError("labels, scenarios and magnitudes disagree on the sample count")
        if self.source_index is None:
            self.source_index = np.arange(len(self.magnitudes))

    def __len__(self) -> int:
        return int(self.magnitudes.shape[0])

    def __getitem__(self, index: int) -> FrfSample:
        return FrfSample(
            magnitudes=self.magnitudes[index],
            label=DamageClass(int(self.labels[index])),
            scenario=self.scenarios[index],
            frequency_grid=self.frequency_grid,
        )

    @property
    def sensor_count(self) -> int:
        return int(self.magnitudes.shape[1])

    @property
    def frequency_count(self) -> int:
        return int(self.magnitudes.shape[2])

    def class_counts(self) -> Dict[str, int]:
        counts = np.bincount(self.labels, minlength=len(CLASS_NAMES))
        return {name: int(counts[i]) for i, name in enumerate(CLASS_NAMES)}

    def subset(self, indices: Sequence[int]) -> "FrfDataset":
        indices = np.asarray(indices, dtype=np.int64)
        return FrfDataset(
            magnitudes=self.magnitudes[indices],
            labels=self.labels[indices],
            scenarios=[self.scenarios[i] for i in indices],
            frequency_grid=self.frequency_grid,
            seed=self.seed,
            sensor_subset=self.sensor_subset,
            source_index=self.source_index[indices],
        )


def generate_dataset(seed: int, config: Optional[ShadowConfig] = None) -> FrfDataset:
    config = replace(config, seed=seed) if config else ShadowConfig(seed=seed)
    signatures = config.signatures()
    base_basis = synthesize_modal_basis(seed, config.mode_count, signatures, config.peak_acceleration)
    grid = frequency_grid()
    scenarios = enumerate_scenarios()
    signatures = replace(
        signatures, residual_level=calibrate_residual_level(base_basis, scenarios, grid, config, signatures)
    )

    logger.info(
        f"Synthesizing {len(scenarios)} FRF samples (seed={seed}, modes={config.mode_count}, "
        f"planted={config.planted_sensors}, residual_level={signatures.residual_level:.4g})"
    )
    magnitudes = np.empty((len(scenarios), SENSOR_COUNT, FREQUENCY_COUNT), dtype=np.float32)
    for index, scenario in enumerate(tqdm(scenarios, desc="frf", unit="scenario", leave=False)):
        frf = compute_frf(apply_condition_shift(base_basis, scenario, config, signatures), grid)
        if config.measurement_noise > 0:
            # keyed by (seed, index) so generation order never matters
            rng = np.random.default_rng([seed, index])
            frf = frf * np.exp(config.measurement_noise * rng.standard_normal(frf.shape))
        magnitudes[index] = frf
    labels = np.array([int(s.damage_class) for s in scenarios], dtype=np.int64)
    dataset = FrfDataset(magnitudes, labels, scenarios, grid, seed=seed)
    logger.info(f"Generated dataset with class counts {dataset.class_counts()}")
    return dataset


def class_amplitude_std(dataset: FrfDataset) -> Dict[str, float]:
    out = {}
    for cls in DamageClass:
        values = dataset.magnitudes[dataset.labels == cls.value]
        out[cls.label] = float(np.std(values, dtype=np.float64)) if values.size else float("nan")
    return out


def class_separability(dataset: FrfDataset) -> Dict[str, float]:
    """Centroid distance over the larger within-class RMS spread, per class pair.

    Spread of class c is sqrt(mean_i ||x_i - mu_c||^2) over flattened samples.
    Keys look like "Baseline/Crack"; pairs with an empty class are skipped.
    """
    centroids, spreads = {}, {}
    for cls in DamageClass:
        values = dataset.magnitudes[dataset.labels == cls.value]
        if not len(values):
            continue
        values = values.reshape(len(values), -1).astype(np.float64)
        centroids[cls] = values.mean(axis=0)
        spreads[cls] = float(np.sqrt(np.mean(np.sum((values - centroids[cls]) ** 2, axis=1))))
    out = {}
    present = sorted(centroids)
    for i, a in enumerate(present):
        for b in present[i + 1:]:
            gap = float(np.linalg.norm(centroids[a] - centroids[b]))
            spread = max(spreads[a], spreads[b])
            out[f"{a.label}/{b.label}"] = gap / spread if spread > 0 else float("inf")
    return out


def noise_sigmas(dataset: FrfDataset, fraction: float = 0.10) -> Dict[str, float]:
    return {name: fraction * std for name, std in class_amplitude_std(dataset).items()}


def save_dataset(dataset: FrfDataset, directory: Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "schema_version": DATASET_SCHEMA_VERSION,
        "seed": dataset.seed,
        "sample_count": len(dataset),
        "sensor_count": dataset.sensor_count,
        "frequency_count": dataset.frequency_count,
        "class_names": list(CLASS_NAMES),
        "counts": dataset.class_counts(),
        "frequency_grid": [float(f) for f in dataset.frequency_grid],
        "sensor_subset": list(dataset.sensor_subset) if dataset.sensor_subset else None,
        "scenarios": [s.to_row() for s in dataset.scenarios],
        "dtype": "<f4",
        "layout": "sample,sensor,frequency",
    }
    with open(directory / "manifest.json", "w") as f:
        json.dump(manifest, f, indent=2, sort_keys=True)
    with open(directory / "frf.bin", "wb") as f:
        f.write(np.ascontiguousarray(dataset.magnitudes, dtype="<f4").tobytes())

    rows = []
    for index, scenario in enumerate(dataset.scenarios):
        row = {"sample_index": index}
        row.update(scenario.to_row())
        rows.append(row)
    frame = pd.DataFrame(rows, columns=["sample_index", "class", "damage_index", "material_case", "temperature", "load"])
    frame["damage_index"] = frame["damage_index"].astype("Int64")
    frame.to_csv(directory / "labels.csv", index=False)
    logger.info(f"Saved {len(dataset)} samples to {directory}")
    return directory


def load_dataset(
    directory: Path,
    expected_sensors: Optional[int] = SENSOR_COUNT,
    expected_frequencies: Optional[int] = FREQUENCY_COUNT,
) -> FrfDataset:
    directory = Path(directory)
    missing = [name for name in ("manifest.json", "frf.bin", "labels.csv") if not (directory / name).is_file()]
    if missing:
        raise DatasetSchemaError(f"Dataset directory {directory} is missing: {', '.join(missing)}")

    with open(directory / "manifest.json", "r") as f:
        manifest = json.load(f)
    if manifest.get("schema_version") != DATASET_SCHEMA_VERSION:
        raise DatasetSchemaError(
            f"Unsupported dataset schema version {manifest.get('schema_version')} in {directory}"
        )
    n, sensors, freqs = manifest["sample_count"], manifest["sensor_count"], manifest["frequency_count"]
    if expected_sensors is not None and sensors != expected_sensors:
        raise DatasetSchemaError(f"Dataset has {sensors} sensors, expected {expected_sensors}")
    if expected_frequencies is not None and freqs != expected_frequencies:
        raise DatasetSchemaError(f"Dataset has {freqs} frequency points, expected {expected_frequencies}")
    grid = np.asarray(manifest["frequency_grid"], dtype=np.float64)
    if grid.size != freqs:
        raise DatasetSchemaError(f"Frequency grid lists {grid.size} points, manifest says {freqs}")

    raw = np.fromfile(directory / "frf.bin", dtype="<f4")
    if raw.size != n * sensors * freqs:
        raise DatasetSchemaError(
            f"frf.bin holds {raw.size} values, expected {n} x {sensors} x {freqs} = {n * sensors * freqs}"
        )
    magnitudes = raw.reshape(n, sensors, freqs).astype(np.float32)

    frame = pd.read_csv(directory / "labels.csv")
    if len(frame) != n:
        raise DatasetSchemaError(f"labels.csv has {len(frame)} rows, expected {n}")
    scenarios = []
    try:
        for row in frame.to_dict("records"):
            damage_index = None if pd.isna(row["damage_index"]) else int(row["damage_index"])
            scenarios.append(ScenarioDescriptor(
                DamageClass.from_label(row["class"]),
                damage_index,
                int(row["material_case"]),
                float(row["temperature"]),
                float(row["load"]),
            ))
    except (KeyError, ValueError) as e:
        raise DatasetSchemaError(f"labels.csv in {directory} is malformed: {e}") from e
    labels = np.array([int(s.damage_class) for s in scenarios], dtype=np.int64)
    subset = manifest.get("sensor_subset")
    return FrfDataset(
        magnitudes,
        labels,
        scenarios,
        grid,
        seed=manifest.get("seed"),
        sensor_subset=tuple(subset) if subset else None,
    )
