"""Online MAP estimation of the fasting-model parameters.

Measurement errors are modeled log-normal with log-scale spread p2, so the
negative log posterior (up to constants) is

    (1/p2^2) * sum_k log(z_k / h_k)^2  +  2*t*log(p2)
        + sum_i (1/eta_i^2) * log(p_i / p_i0)^2

with h_k the model prediction at observation k and (p_i0, eta_i) the
log-normal prior. The estimate is refit from the full history at every
titration cycle; the search runs in log-parameter space with a
derivative-free simplex, warm-started from the previous cycle's estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from basalkit.fasting import ModelParams, PriorSpec, PREDICTION_FLOOR
from basalkit.pk import DoseEvent, DrugParams, Subject, plasma_insulin_profile, _dose_arrays

# Noiseless data would drive p2 -> 0 and the data-term weight -> infinity.
P2_FLOOR = 0.01


class EstimationError(RuntimeError):
    """Inner optimizer failed to converge; callers keep the previous estimate."""


@dataclass(frozen=True)
class ObservationLog:
    """Fasting measurements (minute, mg/dL) paired with the dose history."""

    times: tuple[int, ...]
    values: tuple[float, ...]
    doses: tuple[DoseEvent, ...]

    def __post_init__(self):
        if len(self.times) != len(self.values):
            raise ValueError("times and values must have equal length")
        if any(z <= 0 for z in self.values):
            raise ValueError("measured FBG must be positive")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise ValueError("observation times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    @classmethod
    def build(
        cls,
        times: Sequence[int],
        values: Sequence[float],
        doses: Sequence[DoseEvent],
    ) -> "ObservationLog":
        return cls(tuple(times), tuple(values), tuple(doses))


def insulin_at_observations(
    log: ObservationLog,
    drug: DrugParams,
    subject: Subject,
    truncation_min: float | None = None,
) -> np.ndarray:
    """Plasma insulin at each observation time (doses after a time contribute 0)."""
    dose_times, dose_units = _dose_arrays(log.doses)
    return plasma_insulin_profile(
        np.asarray(log.times, dtype=float), dose_times, dose_units, drug, subject, truncation_min
    )


def _validate_params(p: ModelParams) -> None:
    if p.p2 <= 0:
        raise ValueError(f"p2 must be positive for the MAP objective (got {p.p2})")


def _terms(
    p: np.ndarray,
    log_z: np.ndarray,
    insulin: np.ndarray,
    prior: PriorSpec,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Residuals, clamped predictions, and prior quadratic at parameters p."""
    h = np.maximum(p[0] - p[1] * insulin, PREDICTION_FLOOR)
    resid = log_z - np.log(h)
    log_ratio = np.log(p / np.asarray(prior.means))
    prior_term = float(np.sum(log_ratio**2 / np.asarray(prior.log_sds) ** 2))
    return resid, h, prior_term


def map_objective(
    p: ModelParams,
    log: ObservationLog,
    prior: PriorSpec,
    drug: DrugParams,
    subject: Subject,
    truncation_min: float | None = None,
    insulin_at_obs: np.ndarray | None = None,
) -> float:
    """Negative log posterior (up to constants); lower is better."""
    _validate_params(p)
    if insulin_at_obs is None:
        insulin_at_obs = insulin_at_observations(log, drug, subject, truncation_min)
    log_z = np.log(np.asarray(log.values, dtype=float))
    resid, _, prior_term = _terms(p.as_array(), log_z, insulin_at_obs, prior)
    n = len(log)
    return float(resid @ resid / p.p2**2 + 2.0 * n * np.log(p.p2) + prior_term)


def map_objective_grad(
    p: ModelParams,
    log: ObservationLog,
    prior: PriorSpec,
    drug: DrugParams,
    subject: Subject,
    truncation_min: float | None = None,
    insulin_at_obs: np.ndarray | None = None,
) -> np.ndarray:
    """Gradient of map_objective with respect to (log p0, log p1, log p2).

    Observations sitting on the prediction floor contribute no (p0, p1)
    sensitivity (the clamp is locally flat there).
    """
    _validate_params(p)
    if insulin_at_obs is None:
        insulin_at_obs = insulin_at_observations(log, drug, subject, truncation_min)
    log_z = np.log(np.asarray(log.values, dtype=float))
    arr = p.as_array()
    resid, h, _ = _terms(arr, log_z, insulin_at_obs, prior)
    free = arr[0] - arr[1] * insulin_at_obs > PREDICTION_FLOOR
    w = np.where(free, resid / h, 0.0)
    n = len(log)
    ssr = float(resid @ resid)
    means = np.asarray(prior.means)
    etas = np.asarray(prior.log_sds)
    prior_grad = 2.0 * np.log(arr / means) / etas**2

    g0 = arr[0] * (-2.0 / arr[2] ** 2) * float(np.sum(w)) + prior_grad[0]
    g1 = arr[1] * (2.0 / arr[2] ** 2) * float(np.sum(w * insulin_at_obs)) + prior_grad[1]
    g2 = -2.0 * ssr / arr[2] ** 2 + 2.0 * n + prior_grad[2]
    return np.array([g0, g1, g2])


def _simplex_search(
    fun, x0: np.ndarray, maxfev: int, step: float | None = None
) -> tuple[np.ndarray, float, bool]:
    options = {"xatol": 1e-6, "fatol": 1e-6, "maxfev": maxfev, "adaptive": False}
    if step is not None:
        simplex = np.tile(x0, (4, 1))
        for i in range(3):
            simplex[i + 1, i] += step
        options["initial_simplex"] = simplex
    res = minimize(fun, x0, method="Nelder-Mead", options=options)
    return res.x, float(res.fun), bool(res.success)


def map_estimate(
    log: ObservationLog,
    prior: PriorSpec,
    drug: DrugParams,
    subject: Subject,
    x0: ModelParams | None = None,
    truncation_min: float | None = None,
    insulin_at_obs: np.ndarray | None = None,
) -> ModelParams:
    """MAP estimate of (p0, p1, p2) from the full observation log.

    ``x0`` warm-starts the search (previous cycle's estimate); on a cold
    start the search additionally seeds from a coarse log-spaced lattice
    around the prior so the simplex starts in the right basin. Deterministic
    for identical (log, prior, x0).
    """
    if len(log) == 0:
        return prior.mean_params()
    if insulin_at_obs is None:
        insulin_at_obs = insulin_at_observations(log, drug, subject, truncation_min)
    insulin_at_obs = np.asarray(insulin_at_obs, dtype=float)
    if insulin_at_obs.shape != (len(log),):
        raise ValueError("insulin_at_obs length must match the observation count")

    log_z = np.log(np.asarray(log.values, dtype=float))
    n = len(log)
    means = np.asarray(prior.means)
    etas = np.asarray(prior.log_sds)
    log_means = np.log(means)
    lm0, lm1, lm2 = log_means
    ie0, ie1, ie2 = 1.0 / etas**2
    log_floor = math.log(P2_FLOOR)

    def objective(x) -> float:
        p0 = math.exp(x[0])
        p1 = math.exp(x[1])
        lp2 = x[2] if x[2] > log_floor else log_floor
        h = np.maximum(p0 - p1 * insulin_at_obs, PREDICTION_FLOOR)
        resid = log_z - np.log(h)
        prior_term = (
            ie0 * (x[0] - lm0) ** 2 + ie1 * (x[1] - lm1) ** 2 + ie2 * (lp2 - lm2) ** 2
        )
        return float(resid @ resid) * math.exp(-2.0 * lp2) + 2.0 * n * lp2 + prior_term

    starts = [np.log(x0.as_array()) if x0 is not None else log_means.copy()]
    warm = x0 is not None
    if not warm:
        # Coarse deterministic seed lattice (cold starts only).
        grid_axes = [log_means[i] + etas[i] * np.linspace(-2.0, 2.0, 5) for i in range(3)]
        best_seed, best_seed_val = None, np.inf
        for a in grid_axes[0]:
            for b in grid_axes[1]:
                for c in grid_axes[2]:
                    v = objective(np.array([a, b, c]))
                    if v < best_seed_val:
                        best_seed, best_seed_val = np.array([a, b, c]), v
        starts.append(best_seed)

    best_x, best_val, converged = None, np.inf, False
    step = 0.02 if warm else None  # warm starts begin near the optimum
    for s in starts:
        x, val, ok = _simplex_search(objective, s, maxfev=2000, step=step)
        if val < best_val:
            best_x, best_val, converged = x, val, ok
    if not converged:
        # One simplex restart from the incumbent recovers collapsed simplices.
        x, val, ok = _simplex_search(objective, best_x, maxfev=2000)
        if val <= best_val:
            best_x, best_val, converged = x, val, ok
    if best_x is None or not np.isfinite(best_val):
        raise EstimationError("MAP search produced no finite objective value")
    if not converged:
        raise EstimationError("MAP search did not converge within the evaluation cap")

    p = np.exp(best_x)
    p[2] = max(p[2], P2_FLOOR)
    return ModelParams(*p)
