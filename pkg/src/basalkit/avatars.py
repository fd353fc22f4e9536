"""Synthetic T2D virtual patients.

The ground truth deliberately outgrows the controller's linear model: the
insulin effect saturates (half-effect at I50), the avatar's own absorption
rates are perturbed away from the controller's drug parameters, fasting
glucose is perturbed daily, and meals drive intraday CGM excursions. All
randomness flows from per-avatar seeds, keyed by day, so any quantity is
reproducible in isolation regardless of simulation order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, asdict, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from basalkit import timegrid
from basalkit.pk import DoseEvent, DrugParams, Subject, plasma_insulin_profile, _dose_arrays

# Substream tags to keep per-avatar random draws independent.
_STREAM_FASTING = 0
_STREAM_SMBG = 1
_STREAM_CGM = 2
_STREAM_PK = 3

MEAL_RATIOS = (0.3, 0.3, 0.3, 0.1)  # breakfast, lunch, dinner, snack
_MEAL_TIMES = timegrid.MEAL_MINUTES + (timegrid.SNACK_MINUTE,)

CGM_NOISE_SD = 2.0  # mg/dL per 5-minute sample
SMBG_LOG_SD = 0.05  # ~5% CV multiplicative fingerstick error

# Per-avatar log-scale perturbation of k1, k2, clearance, creating a
# controller-vs-plant PK mismatch of roughly +-10%.
PK_PERTURBATION_LOG_SD = 0.1


@dataclass(frozen=True)
class MealResponse:
    """Glucose excursion per gram of carbohydrate and its kernel time constants."""

    excursion_per_g: float  # mg/dL peak per g
    rise_min: float = 40.0
    decay_min: float = 120.0

    def __post_init__(self):
        if self.excursion_per_g < 0:
            raise ValueError("excursion_per_g must be >= 0")
        if not 0 < self.rise_min < self.decay_min:
            raise ValueError("need 0 < rise_min < decay_min")


@dataclass(frozen=True)
class Avatar:
    """One virtual patient: true dose-response, variability, meals, seed."""

    id: str
    body_weight: float  # kg
    baseline_fbg: float  # mg/dL at zero insulin (B0)
    insulin_effect: float  # mg/dL per mU/L at low concentration (S)
    saturation_i50: float  # mU/L at half effect
    glucose_floor: float  # mg/dL
    fasting_sd: float  # mg/dL day-to-day fasting perturbation
    daily_carbs: float  # g
    meal_response: MealResponse
    meal_ratios: tuple[float, float, float, float] = MEAL_RATIOS
    seed: int = 0

    def __post_init__(self):
        if not self.baseline_fbg > self.glucose_floor > 0:
            raise ValueError("need baseline_fbg > glucose_floor > 0")
        if self.insulin_effect <= 0 or self.saturation_i50 <= 0:
            raise ValueError("insulin_effect and saturation_i50 must be positive")
        if self.fasting_sd < 0 or self.daily_carbs < 0 or self.body_weight <= 0:
            raise ValueError("bad avatar physiology fields")
        if abs(sum(self.meal_ratios) - 1.0) > 1e-9:
            raise ValueError(f"meal ratios must sum to 1 (got {self.meal_ratios})")

    @property
    def subject(self) -> Subject:
        return Subject(self.body_weight)


@dataclass(frozen=True)
class GlucoseTrace:
    """One day of simulated CGM: 288 samples on a 5-minute grid."""

    start_time: int  # minutes; midnight of the day
    samples: tuple[float, ...]

    def __post_init__(self):
        if len(self.samples) != timegrid.CGM_SAMPLES_PER_DAY:
            raise ValueError(f"expected {timegrid.CGM_SAMPLES_PER_DAY} samples")
        if any(s <= 0 for s in self.samples):
            raise ValueError("CGM samples must be positive")

    def as_array(self) -> np.ndarray:
        return np.asarray(self.samples, dtype=float)


@dataclass(frozen=True)
class PopulationTargets:
    """Population-level baseline statistics to generate toward."""

    n: int
    hba1c_mean: float = 8.3
    hba1c_sd: float = 1.0
    fbg_mean: float = 169.0
    fbg_sd: float = 49.0

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"population size must be >= 1 (got {self.n})")
        if self.hba1c_sd < 0 or self.fbg_sd < 0:
            raise ValueError("target sds must be >= 0")


def _rng(seed: int, stream: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed, stream, *key])


def perturbed_drug(avatar: Avatar, drug: DrugParams) -> DrugParams:
    """The avatar's private absorption kinetics (fixed per avatar)."""
    g = _rng(avatar.seed, _STREAM_PK)
    mults = np.exp(g.normal(0.0, PK_PERTURBATION_LOG_SD, 3))
    return replace(
        drug,
        k1=drug.k1 * mults[0],
        k2=drug.k2 * mults[1],
        clearance=drug.clearance * mults[2],
        name=f"{drug.name}~{avatar.id}",
    )


def fasting_perturbation(avatar: Avatar, day: int) -> float:
    """The day's fasting glucose perturbation (mg/dL), independent across days."""
    if day < 0:
        raise ValueError(f"day must be >= 0 (got {day})")
    return float(_rng(avatar.seed, _STREAM_FASTING, day).normal(0.0, avatar.fasting_sd))


def true_fbg(
    avatar: Avatar,
    doses: Sequence[DoseEvent],
    day: int,
    drug: DrugParams,
    plant_drug: DrugParams | None = None,
    truncation_min: float | None = timegrid.PK_TRUNCATION_MIN,
) -> float:
    """Ground-truth fasting glucose on a day, floored at the avatar's glucose floor.

    ``plant_drug`` lets a caller reuse the perturbed kinetics across days
    instead of rederiving them.
    """
    if day < 0:
        raise ValueError(f"day must be >= 0 (got {day})")
    if plant_drug is None:
        plant_drug = perturbed_drug(avatar, drug)
    dose_times, dose_units = _dose_arrays(doses)
    insulin = float(
        plasma_insulin_profile(
            np.array([timegrid.fasting_time(day)], dtype=float),
            dose_times,
            dose_units,
            plant_drug,
            avatar.subject,
            truncation_min,
        )[0]
    )
    effect = avatar.insulin_effect * insulin / (1.0 + insulin / avatar.saturation_i50)
    return max(
        avatar.glucose_floor,
        avatar.baseline_fbg - effect + fasting_perturbation(avatar, day),
    )


def _meal_kernel(response: MealResponse, n_samples: int) -> np.ndarray:
    """Rise-and-decay kernel on the 5-minute grid, normalized to peak 1."""
    t = np.arange(n_samples) * timegrid.CGM_STEP_MIN
    k = np.exp(-t / response.decay_min) - np.exp(-t / response.rise_min)
    peak = k.max()
    return k / peak if peak > 0 else k


def _meal_profile(avatar: Avatar) -> np.ndarray:
    """Summed meal excursions over one day (mg/dL on the 5-minute grid)."""
    n = timegrid.CGM_SAMPLES_PER_DAY
    profile = np.zeros(n)
    kernel = _meal_kernel(avatar.meal_response, n)
    for ratio, minute in zip(avatar.meal_ratios, _MEAL_TIMES):
        amplitude = avatar.daily_carbs * ratio * avatar.meal_response.excursion_per_g
        start = minute // timegrid.CGM_STEP_MIN
        span = n - start
        profile[start:] += amplitude * kernel[:span]
    return profile


def unit_meal_lift() -> float:
    """Day-average excursion for daily_carbs=1 g and excursion_per_g=1.

    Used to size an avatar's meal response toward an HbA1c-implied mean
    glucose.
    """
    probe = Avatar(
        id="probe",
        body_weight=90.0,
        baseline_fbg=150.0,
        insulin_effect=5.0,
        saturation_i50=40.0,
        glucose_floor=50.0,
        fasting_sd=0.0,
        daily_carbs=1.0,
        meal_response=MealResponse(excursion_per_g=1.0),
    )
    return float(_meal_profile(probe).mean())


def cgm_day(avatar: Avatar, fasting_level: float, day: int) -> GlucoseTrace:
    """Simulated CGM day anchored at the fasting level, with meal excursions."""
    if fasting_level <= 0:
        raise ValueError(f"fasting level must be positive (got {fasting_level})")
    noise = _rng(avatar.seed, _STREAM_CGM, day).normal(
        0.0, CGM_NOISE_SD, timegrid.CGM_SAMPLES_PER_DAY
    )
    samples = fasting_level + _meal_profile(avatar) + noise
    samples = np.maximum(samples, 0.9 * avatar.glucose_floor)
    return GlucoseTrace(
        start_time=day * timegrid.MINUTES_PER_DAY,
        samples=tuple(float(s) for s in samples),
    )


def measure_smbg(
    avatar: Avatar, true_value: float, day: int, sigma: float = SMBG_LOG_SD
) -> float:
    """Fingerstick measurement: multiplicative log-normal error, keyed by day."""
    if true_value <= 0:
        raise ValueError(f"true value must be positive (got {true_value})")
    if sigma == 0:
        return true_value
    factor = math.exp(_rng(avatar.seed, _STREAM_SMBG, day).normal(0.0, sigma))
    return true_value * factor


# Population generation ------------------------------------------------------

# Week-26 matched mean FBG used to size each avatar's dose requirement.
_SS_TARGET_FBG = 105.0
_REQUIRED_DOSE_MEDIAN = 55.0
_REQUIRED_DOSE_LOG_SD = 0.55
_REQUIRED_DOSE_RANGE = (10.0, 200.0)


def _lognormal_for(mean: float, sd: float) -> tuple[float, float]:
    """(mu, sigma) of a log-normal with the requested mean and sd."""
    var_ratio = 1.0 + (sd / mean) ** 2
    sigma2 = math.log(var_ratio)
    return math.log(mean) - sigma2 / 2.0, math.sqrt(sigma2)


def generate_population(
    targets: PopulationTargets,
    master_seed: int,
    drug_reference_clearance: float = 0.20,
) -> list[Avatar]:
    """Deterministic synthetic population matching the baseline targets.

    Baseline fasting glucose is drawn log-normal (moment-matched to the
    targets); each avatar's insulin sensitivity is derived from a log-normal
    steady-state dose requirement so required doses span roughly 10-200
    U/day and the avatar can always reach its fasting target. Meal size is
    set so the untreated CGM mean implies the drawn baseline HbA1c.
    """
    rng = np.random.default_rng(master_seed)
    lift_per_g = unit_meal_lift()
    mu_fbg, sigma_fbg = _lognormal_for(targets.fbg_mean, max(targets.fbg_sd, 1e-9))

    avatars = []
    for i in range(targets.n):
        body_weight = float(np.clip(rng.lognormal(math.log(89.0), 0.2), 55.0, 150.0))
        glucose_floor = float(rng.uniform(40.0, 55.0))
        baseline_fbg = float(rng.lognormal(mu_fbg, sigma_fbg))
        baseline_fbg = max(baseline_fbg, glucose_floor + 30.0)
        hba1c = float(np.clip(rng.normal(targets.hba1c_mean, targets.hba1c_sd), 6.0, 12.0))
        daily_carbs = float(np.clip(rng.normal(180.0, 40.0), 80.0, 320.0))
        i50 = float(np.clip(rng.lognormal(math.log(40.0), 0.3), 15.0, 120.0))
        required_dose = float(
            np.clip(
                rng.lognormal(math.log(_REQUIRED_DOSE_MEDIAN), _REQUIRED_DOSE_LOG_SD),
                *_REQUIRED_DOSE_RANGE,
            )
        )

        # Average steady-state plasma insulin at the required dose, using the
        # reference clearance the controller will also assume.
        i_ss = 1000.0 * required_dose / (
            body_weight * 0.1 * drug_reference_clearance * timegrid.MINUTES_PER_DAY
        )
        needed_effect = max(baseline_fbg - _SS_TARGET_FBG, 5.0)
        insulin_effect = needed_effect * (1.0 + i_ss / i50) / i_ss

        # Meal excursions sized so untreated mean CGM matches the HbA1c draw.
        mean_cgm_target = (hba1c - 3.31) / 0.02392
        lift = max(mean_cgm_target - baseline_fbg, 5.0)
        excursion = float(np.clip(lift / (daily_carbs * lift_per_g), 0.05, 3.0))

        avatars.append(
            Avatar(
                id=f"av{i:04d}",
                body_weight=round(body_weight, 3),
                baseline_fbg=round(baseline_fbg, 3),
                insulin_effect=round(insulin_effect, 5),
                saturation_i50=round(i50, 3),
                glucose_floor=round(glucose_floor, 3),
                fasting_sd=20.0,
                daily_carbs=round(daily_carbs, 2),
                meal_response=MealResponse(excursion_per_g=round(excursion, 5)),
                seed=int(rng.integers(0, 2**63)),
            )
        )
    return avatars


def save_population(avatars: Sequence[Avatar], path: str | Path) -> None:
    """One avatar per line (JSON records) for reproducible re-runs."""
    with open(path, "w") as fh:
        for avatar in avatars:
            fh.write(json.dumps(asdict(avatar), sort_keys=True) + "\n")


def load_population(path: str | Path) -> list[Avatar]:
    avatars = []
    for line in Path(path).read_text().splitlines():
        if not line.strip():
            continue
        rec = json.loads(line)
        rec["meal_response"] = MealResponse(**rec["meal_response"])
        rec["meal_ratios"] = tuple(rec["meal_ratios"])
        avatars.append(Avatar(**rec))
    return avatars
