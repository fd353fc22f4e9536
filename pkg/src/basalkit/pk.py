"""Closed-form plasma insulin concentration for long-acting basal insulin.

A subcutaneous dose of ``u`` units injected at minute ``t_k`` contributes a
biexponential concentration profile; a dose history superposes linearly:

    I(t) = 1000 * F*k2*k1 / (BW*Vi*kcl*(k2-k1)) * sum_k (e^{-k1(t-tk)} - e^{-k2(t-tk)}) * u_k

with the result in mU/L for doses in U. ``k1`` sets the terminal half-life
(t_half = 1/k1); ``k2`` sets absorption speed and, together with the
injection period, the time to peak.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


@dataclass(frozen=True)
class DrugParams:
    """Pharmacokinetic constants of one basal insulin formulation.

    bioavailability: fraction absorbed (unitless)
    distribution_volume: insulin distribution volume (L/kg)
    clearance: clearance rate (1/min)
    k1, k2: absorption/elimination time constants (1/min), k2 > k1
    """

    bioavailability: float
    distribution_volume: float
    clearance: float
    k1: float
    k2: float
    name: str = ""

    def __post_init__(self):
        for field in ("bioavailability", "distribution_volume", "clearance", "k1", "k2"):
            if getattr(self, field) <= 0:
                raise ValueError(f"DrugParams.{field} must be strictly positive")
        if self.k1 >= self.k2:
            raise ValueError(
                f"biexponential form requires k2 > k1 (got k1={self.k1}, k2={self.k2})"
            )


@dataclass(frozen=True)
class DoseEvent:
    """One basal injection: minute of injection and size in units."""

    time: int
    units: float

    def __post_init__(self):
        if self.units < 0:
            raise ValueError(f"dose units must be >= 0 (got {self.units})")


@dataclass(frozen=True)
class Subject:
    """Dosing subject; body weight scales the distribution volume."""

    body_weight: float  # kg

    def __post_init__(self):
        if self.body_weight <= 0:
            raise ValueError(f"body weight must be positive (got {self.body_weight})")


_PRESETS: dict[str, DrugParams] = {}


def _parse_drug_table(raw: dict, source: str) -> dict[str, DrugParams]:
    drugs = {}
    for name, fields in raw.items():
        try:
            drugs[name.lower()] = DrugParams(name=name.lower(), **fields)
        except TypeError as exc:
            raise ValueError(f"bad drug entry {name!r} in {source}: {exc}") from None
    return drugs


def _presets() -> dict[str, DrugParams]:
    if not _PRESETS:
        raw = json.loads(resources.files("basalkit.data").joinpath("drugs.json").read_text())
        _PRESETS.update(_parse_drug_table(raw, "packaged drugs.json"))
    return _PRESETS


def get_drug(name: str) -> DrugParams:
    """Look up a shipped preset (glargine-100, glargine-300, degludec)."""
    presets = _presets()
    key = name.lower()
    if key not in presets:
        raise KeyError(f"unknown drug {name!r}; shipped presets: {sorted(presets)}")
    return presets[key]


def load_drug_file(path: str | Path) -> dict[str, DrugParams]:
    """Load additional formulations from a JSON file (name -> parameter map)."""
    raw = json.loads(Path(path).read_text())
    return _parse_drug_table(raw, str(path))


def _dose_arrays(doses: Iterable[DoseEvent]) -> tuple[np.ndarray, np.ndarray]:
    times = np.array([d.time for d in doses], dtype=float)
    units = np.array([d.units for d in doses], dtype=float)
    if times.size and np.any(np.diff(times) < 0):
        raise ValueError("dose times must be non-decreasing")
    if np.any(units < 0):
        raise ValueError("dose units must be >= 0")
    return times, units


def _amplitude(drug: DrugParams, subject: Subject) -> float:
    return (
        1000.0
        * drug.bioavailability
        * drug.k2
        * drug.k1
        / (
            subject.body_weight
            * drug.distribution_volume
            * drug.clearance
            * (drug.k2 - drug.k1)
        )
    )


def plasma_insulin_profile(
    times: np.ndarray,
    dose_times: np.ndarray,
    dose_units: np.ndarray,
    drug: DrugParams,
    subject: Subject,
    truncation_min: float | None = None,
) -> np.ndarray:
    """Concentration (mU/L) at each requested minute, vectorized.

    Doses at or after a requested time contribute zero there (the profile
    starts at zero at the injection instant). ``truncation_min`` drops
    contributions older than the window; see timegrid.PK_TRUNCATION_MIN for
    the documented error bound.
    """
    times = np.asarray(times, dtype=float)
    if dose_times.size == 0:
        return np.zeros_like(times)
    delta = times[:, None] - dose_times[None, :]
    active = delta > 0
    if truncation_min is not None:
        active &= delta <= truncation_min
    delta = np.where(active, delta, 0.0)
    kernel = np.exp(-drug.k1 * delta) - np.exp(-drug.k2 * delta)
    kernel[~active] = 0.0
    return _amplitude(drug, subject) * (kernel @ dose_units)


def plasma_insulin(
    doses: Sequence[DoseEvent],
    t: int,
    drug: DrugParams,
    subject: Subject,
    truncation_min: float | None = None,
) -> float:
    """Plasma insulin concentration (mU/L) at minute ``t`` from a dose history.

    Raises if any dose lies in the future of ``t``.
    """
    dose_times, dose_units = _dose_arrays(doses)
    if dose_times.size and dose_times.max() > t:
        raise ValueError(f"dose at t={dose_times.max():.0f} is after evaluation time t={t}")
    return float(
        plasma_insulin_profile(np.array([t]), dose_times, dose_units, drug, subject, truncation_min)[0]
    )


def half_life(drug: DrugParams) -> float:
    """Terminal half-life in minutes (1/k1)."""
    return 1.0 / drug.k1


def time_to_peak(drug: DrugParams, injection_period: float) -> float:
    """Minutes from injection to the steady-state concentration peak.

    Valid for a fixed injection period; the peak of the superposed profile
    shifts relative to the single-dose peak because the decaying tails of
    earlier doses tilt the curve.
    """
    if injection_period <= 0:
        raise ValueError(f"injection period must be positive (got {injection_period})")
    k1, k2 = drug.k1, drug.k2
    geom = math.log((1.0 - math.exp(-k1 * injection_period)) / (1.0 - math.exp(-k2 * injection_period)))
    return (math.log(k1 / k2) - geom) / (k1 - k2)


def steady_state_avg(
    drug: DrugParams,
    daily_units: float,
    injection_period: float,
    subject: Subject,
) -> float:
    """Average concentration (mU/L) over one period at steady state.

    Equals the integral of a single-dose profile divided by the period, so it
    is exactly linear in the dose.
    """
    if daily_units < 0:
        raise ValueError(f"dose must be >= 0 (got {daily_units})")
    if injection_period <= 0:
        raise ValueError(f"injection period must be positive (got {injection_period})")
    return (
        1000.0
        * drug.bioavailability
        * daily_units
        / (subject.body_weight * drug.distribution_volume * drug.clearance * injection_period)
    )
