"""Controller-side fasting glucose model.

Predicted fasting blood glucose is linear in plasma insulin,

    y = p0 - p1 * I(dose history)

with p0 the subject's fasting glucose at zero insulin (mg/dL), p1 the
sensitivity to plasma insulin (mg/dL per mU/L), and p2 the log-scale spread
of measurement-vs-prediction error. The multiplicative envelope
[y*exp(-alpha*p2), y*exp(alpha*p2)] is what the dose optimizer steers into
the target band.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from basalkit import timegrid
from basalkit.pk import DoseEvent, DrugParams, Subject, plasma_insulin_profile, _dose_arrays

# Ratio-based costs and log-residuals need a positive prediction; extreme
# doses can drive the linear model negative.
PREDICTION_FLOOR = 1.0  # mg/dL


@dataclass(frozen=True)
class ModelParams:
    """Per-patient model parameters (p0 mg/dL, p1 mg/dL per mU/L, p2 log-sd)."""

    p0: float
    p1: float
    p2: float

    def __post_init__(self):
        if self.p0 <= 0 or self.p1 <= 0:
            raise ValueError(f"p0 and p1 must be positive (got {self.p0}, {self.p1})")
        if self.p2 < 0:
            raise ValueError(f"p2 must be >= 0 (got {self.p2})")

    def as_array(self) -> np.ndarray:
        return np.array([self.p0, self.p1, self.p2])


@dataclass(frozen=True)
class PriorSpec:
    """Log-normal prior on (p0, p1, p2): means and log-scale standard deviations."""

    means: tuple[float, float, float] = (150.0, 5.0, 0.15)
    log_sds: tuple[float, float, float] = (0.25, 0.5, 1.0)

    def __post_init__(self):
        if any(m <= 0 for m in self.means):
            raise ValueError(f"prior means must be positive (got {self.means})")
        if any(s <= 0 for s in self.log_sds):
            raise ValueError(f"prior log-sds must be positive (got {self.log_sds})")

    def mean_params(self) -> ModelParams:
        return ModelParams(*self.means)


def predict_fbg(
    params: ModelParams,
    doses: Sequence[DoseEvent],
    drug: DrugParams,
    subject: Subject,
    t: int,
    truncation_min: float | None = None,
) -> float:
    """Model-predicted fasting glucose (mg/dL) at minute ``t``.

    Not floored: callers that feed ratio-based costs clamp at
    PREDICTION_FLOOR themselves.
    """
    dose_times, dose_units = _dose_arrays(doses)
    insulin = plasma_insulin_profile(
        np.array([t], dtype=float), dose_times, dose_units, drug, subject, truncation_min
    )[0]
    return params.p0 - params.p1 * float(insulin)


def predict_trajectory(
    params: ModelParams,
    history: Sequence[DoseEvent],
    u_next: float,
    horizon_days: int,
    drug: DrugParams,
    subject: Subject,
    start_day: int | None = None,
    truncation_min: float | None = None,
) -> np.ndarray:
    """Predicted fasting glucose for days start_day..start_day+horizon_days.

    All future injections (days start_day..start_day+horizon_days-1) take the
    constant value ``u_next``; the first trajectory point predates the first
    new injection and reflects history only. Returns horizon_days+1 values.
    """
    if horizon_days < 1:
        raise ValueError(f"horizon_days must be >= 1 (got {horizon_days})")
    if u_next < 0:
        raise ValueError(f"u_next must be >= 0 (got {u_next})")
    hist_times, hist_units = _dose_arrays(history)
    if start_day is None:
        start_day = 0
        if hist_times.size:
            start_day = int(hist_times.max() // timegrid.MINUTES_PER_DAY) + 1

    fast_times = np.array(
        [timegrid.fasting_time(start_day + j) for j in range(horizon_days + 1)], dtype=float
    )
    future_times = np.array(
        [timegrid.dose_time(start_day + j) for j in range(horizon_days)], dtype=float
    )
    if hist_times.size and hist_times.max() >= future_times[0]:
        raise ValueError("dose history overlaps the prediction horizon")

    base = plasma_insulin_profile(fast_times, hist_times, hist_units, drug, subject, truncation_min)
    unit = plasma_insulin_profile(
        fast_times, future_times, np.ones_like(future_times), drug, subject, truncation_min
    )
    return params.p0 - params.p1 * (base + u_next * unit)


def envelope(y: float, p2: float, alpha: float) -> tuple[float, float]:
    """Variability envelope (low, high) around a predicted value.

    Geometrically symmetric: low * high == y**2.
    """
    if y <= 0:
        raise ValueError(f"prediction must be positive (got {y})")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive (got {alpha})")
    spread = np.exp(alpha * p2)
    return y / spread, y * spread
