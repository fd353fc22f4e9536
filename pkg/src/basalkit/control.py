"""Dose-recommendation policies.

Two policies behind one surface: a receding-horizon optimizer that steers
the predicted fasting-glucose envelope into the clinical target band, and
the protocol threshold rule used in standard care (any reading < low
threshold: -2 U; window mean above high threshold: +2 U; otherwise hold).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from basalkit import timegrid
from basalkit.fasting import ModelParams, PriorSpec, PREDICTION_FLOOR, predict_trajectory
from basalkit.pk import DoseEvent, DrugParams, Subject, plasma_insulin_profile, _dose_arrays


@dataclass(frozen=True)
class TitrationConfig:
    """Clinical targets, optimizer weights, and titration schedule defaults.

    fbg_low/fbg_high: target band (mg/dL). gamma weighs the performance cost
    against the dose-change regularizer; xi weighs the hypoglycemia term
    against the hyperglycemia term inside the performance cost. alpha sets
    the envelope width in units of p2. beta caps the per-titration dose
    change as a fraction of the current dose; du_min is the smallest
    actionable change.
    """

    fbg_low: float = 72.0
    fbg_high: float = 90.0
    gamma: float = 250.0
    xi: float = 100.0
    alpha: float = 1.65
    horizon_days: int = 10
    beta: float = 0.15
    du_min: float = 1.0
    titration_interval_days: int = 3
    fbg_window: int = 3

    def __post_init__(self):
        if not 0 < self.fbg_low < self.fbg_high:
            raise ValueError(f"need 0 < fbg_low < fbg_high (got {self.fbg_low}, {self.fbg_high})")
        if self.gamma <= 0 or self.xi <= 0 or self.alpha <= 0:
            raise ValueError("gamma, xi, alpha must be positive")
        if self.horizon_days < 1:
            raise ValueError(f"horizon_days must be >= 1 (got {self.horizon_days})")
        if not 0 < self.beta <= 1:
            raise ValueError(f"beta must be in (0, 1] (got {self.beta})")
        if self.du_min < 1:
            raise ValueError(f"du_min must be >= 1 (got {self.du_min})")
        if self.titration_interval_days < 1 or self.fbg_window < 1:
            raise ValueError("titration_interval_days and fbg_window must be >= 1")


@dataclass(frozen=True)
class RhcDiagnostics:
    """Cost breakdown and prediction behind a recommendation."""

    q_hypo: float
    q_hyper: float
    regularization: float
    total_cost: float
    bound: float
    trajectory: tuple[float, ...]
    envelope_low: tuple[float, ...]
    envelope_high: tuple[float, ...]


@dataclass(frozen=True)
class DoseRecommendation:
    delta_u: float
    new_dose: float
    diagnostics: RhcDiagnostics

    def __post_init__(self):
        if self.new_dose < -1e-9:
            raise ValueError(f"recommended dose must be >= 0 (got {self.new_dose})")


def cost_performance(
    trajectory: Sequence[float],
    params: ModelParams,
    config: TitrationConfig,
) -> tuple[float, float]:
    """Hypoglycemia and hyperglycemia cost terms for a predicted trajectory.

    The hypo term activates when the lower envelope dips under the low
    threshold; the hyper term is the larger of the lower envelope's
    overshoot above the low threshold and the upper envelope's overshoot
    above the high threshold. Both are means of squared relative overshoots.
    """
    y = np.maximum(np.asarray(trajectory, dtype=float), PREDICTION_FLOOR)
    if y.size == 0:
        raise ValueError("trajectory must be non-empty")
    down = math.exp(-config.alpha * params.p2)
    up = math.exp(config.alpha * params.p2)
    low_ratio = y * (down / config.fbg_low) - 1.0
    high_ratio = y * (up / config.fbg_high) - 1.0
    q_hypo = float(np.mean(np.minimum(low_ratio, 0.0) ** 2))
    q_hyper = float(
        max(np.mean(np.maximum(low_ratio, 0.0) ** 2), np.mean(np.maximum(high_ratio, 0.0) ** 2))
    )
    return q_hypo, q_hyper


def cost_regularization(
    delta_u: float,
    params: ModelParams,
    prior: PriorSpec,
    config: TitrationConfig,
) -> float:
    """Quadratic penalty on the dose change, stiffer for insulin-sensitive patients."""
    return (params.p1 / prior.means[1] * delta_u / config.du_min) ** 2


def candidate_changes(bound: float) -> list[float]:
    """Whole-unit dose changes plus the exact bound endpoints, ordered by
    magnitude with the negative (safer) sign first within each magnitude."""
    magnitudes = [float(m) for m in range(int(math.floor(bound)) + 1)]
    if bound != math.floor(bound):
        magnitudes.append(bound)
    candidates = []
    for m in magnitudes:
        if m == 0.0:
            candidates.append(0.0)
        else:
            candidates.extend([-m, m])
    return candidates


def solve_delta_u(cost: Callable[[float], float], bound: float, du_min: float) -> float:
    """Best dose change over whole-unit candidates plus the exact bound endpoints.

    Ties break toward smaller magnitude, then toward the negative (safer)
    change.
    """
    if bound < du_min:
        raise ValueError(f"bound must be >= du_min (got bound={bound}, du_min={du_min})")
    best, best_cost = None, math.inf
    for du in candidate_changes(bound):
        c = cost(du)
        if c < best_cost:
            best, best_cost = du, c
    return best


def _stacked_trajectory(
    params: ModelParams,
    history: Sequence[DoseEvent],
    horizon_days: int,
    drug: DrugParams,
    subject: Subject,
    start_day: int | None,
    truncation_min: float | None,
) -> tuple[Callable[[float], np.ndarray], int]:
    """Trajectory as an affine function of the constant future dose.

    Plasma insulin superposes linearly, so the predicted curve for any
    candidate dose is base + u * unit; this avoids re-summing the dose
    history per candidate.
    """
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
    base = plasma_insulin_profile(fast_times, hist_times, hist_units, drug, subject, truncation_min)
    unit = plasma_insulin_profile(
        fast_times, future_times, np.ones_like(future_times), drug, subject, truncation_min
    )

    def trajectory(u: float) -> np.ndarray:
        return params.p0 - params.p1 * (base + u * unit)

    return trajectory, start_day


def rhc_recommend(
    params: ModelParams,
    prior: PriorSpec,
    config: TitrationConfig,
    history: Sequence[DoseEvent],
    u_prev: float,
    drug: DrugParams,
    subject: Subject,
    start_day: int | None = None,
    truncation_min: float | None = None,
) -> DoseRecommendation:
    """Optimal dose change over the feasible set |du| <= max(du_min, beta*u_prev).

    Minimizes gamma * (xi*q_hypo + q_hyper) + regularization; candidate doses
    that would go negative are excluded.
    """
    if u_prev < 0:
        raise ValueError(f"previous dose must be >= 0 (got {u_prev})")
    bound = max(config.du_min, config.beta * u_prev)
    trajectory_of, _ = _stacked_trajectory(
        params, history, config.horizon_days, drug, subject, start_day, truncation_min
    )

    # All candidate costs in one vectorized pass; solve_delta_u then applies
    # the tie-break rules on the precomputed table.
    candidates = candidate_changes(bound)
    du_vec = np.asarray(candidates)
    base_traj = trajectory_of(0.0)
    unit_drop = base_traj - trajectory_of(1.0)  # p1 * unit insulin, >= 0
    traj_matrix = np.maximum(
        base_traj[None, :] - (u_prev + du_vec)[:, None] * unit_drop[None, :],
        PREDICTION_FLOOR,
    )
    down = math.exp(-config.alpha * params.p2)
    up = math.exp(config.alpha * params.p2)
    low_ratio = traj_matrix * (down / config.fbg_low) - 1.0
    high_ratio = traj_matrix * (up / config.fbg_high) - 1.0
    q_hypo_vec = np.mean(np.minimum(low_ratio, 0.0) ** 2, axis=1)
    q_hyper_vec = np.maximum(
        np.mean(np.maximum(low_ratio, 0.0) ** 2, axis=1),
        np.mean(np.maximum(high_ratio, 0.0) ** 2, axis=1),
    )
    reg_vec = (params.p1 / prior.means[1] * du_vec / config.du_min) ** 2
    cost_vec = config.gamma * (config.xi * q_hypo_vec + q_hyper_vec) + reg_vec
    cost_vec[u_prev + du_vec < 0] = math.inf
    table = {du: float(c) for du, c in zip(candidates, cost_vec)}

    delta_u = solve_delta_u(table.__getitem__, bound, config.du_min)
    new_dose = u_prev + delta_u
    traj = trajectory_of(new_dose)
    q_hypo, q_hyper = cost_performance(traj, params, config)
    r = cost_regularization(delta_u, params, prior, config)
    spread = math.exp(config.alpha * params.p2)
    clamped = np.maximum(traj, PREDICTION_FLOOR)
    diag = RhcDiagnostics(
        q_hypo=q_hypo,
        q_hyper=q_hyper,
        regularization=r,
        total_cost=config.gamma * (config.xi * q_hypo + q_hyper) + r,
        bound=bound,
        trajectory=tuple(float(v) for v in clamped),
        envelope_low=tuple(float(v) for v in clamped / spread),
        envelope_high=tuple(float(v) for v in clamped * spread),
    )
    return DoseRecommendation(delta_u=delta_u, new_dose=new_dose, diagnostics=diag)


def soc_recommend(readings: Sequence[float], config: TitrationConfig) -> float:
    """Protocol threshold rule on a window of pre-breakfast readings (+2/0/-2 U)."""
    if len(readings) == 0:
        raise ValueError("threshold rule needs at least one reading")
    if min(readings) < config.fbg_low:
        return -2.0
    if sum(readings) / len(readings) > config.fbg_high:
        return 2.0
    return 0.0
