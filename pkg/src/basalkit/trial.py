"""In-silico titration trials over a synthetic population.

Runs the five canonical scenarios (threshold rule vs receding-horizon
policy, three-reading vs one-reading windows, twice-weekly vs daily
titration) for up to 52 weeks, computes glycemic outcomes in 14-day
windows, and exports per-avatar time series plus a machine-readable
summary.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from basalkit import timegrid
from basalkit.avatars import Avatar, GlucoseTrace, cgm_day, measure_smbg, perturbed_drug, true_fbg
from basalkit.control import TitrationConfig, rhc_recommend, soc_recommend
from basalkit.estimator import EstimationError, ObservationLog, map_estimate
from basalkit.fasting import ModelParams, PriorSpec
from basalkit.pk import DoseEvent, DrugParams, get_drug, plasma_insulin_profile

_STREAM_MISS = 4

# Published GMI regression: estimated HbA1c (%) from mean glucose (mg/dL).
GMI_INTERCEPT = 3.31
GMI_SLOPE = 0.02392

WINDOW_DAYS = 14
CHECKPOINT_WEEKS = (8, 26, 52)

LEVEL2_HYPO_MGDL = 54.0
TIR_RANGE = (70.0, 180.0)


@dataclass(frozen=True)
class ScenarioSpec:
    """One experiment arm: policy, reading window, and titration cadence."""

    name: str
    policy: str  # "soc" | "rhc"
    fbg_window: int
    titration_interval_days: tuple[int, ...]
    duration_weeks: int = 52
    miss_probability: float = 0.0

    def __post_init__(self):
        if self.policy not in ("soc", "rhc"):
            raise ValueError(f"policy must be 'soc' or 'rhc' (got {self.policy!r})")
        if self.fbg_window < 1:
            raise ValueError("fbg_window must be >= 1")
        if not self.titration_interval_days or any(d < 1 for d in self.titration_interval_days):
            raise ValueError("titration intervals must be positive")
        if self.duration_weeks < 2:
            raise ValueError("need at least one full 14-day window")
        if not 0 <= self.miss_probability < 1:
            raise ValueError("miss_probability must be in [0, 1)")

    def titration_days(self, n_days: int) -> list[int]:
        days, day, i = [], 0, 0
        while day < n_days:
            days.append(day)
            day += self.titration_interval_days[i % len(self.titration_interval_days)]
            i += 1
        return days

    def measurement_days(self, n_days: int) -> set[int]:
        days: set[int] = set()
        for t in self.titration_days(n_days):
            days.update(d for d in range(t - self.fbg_window + 1, t + 1) if d >= 0)
        return days


TWICE_WEEKLY = (3, 4)

SCENARIO_PRESETS: dict[str, ScenarioSpec] = {
    "SoC-3": ScenarioSpec("SoC-3", "soc", 3, TWICE_WEEKLY),
    "SoC-1": ScenarioSpec("SoC-1", "soc", 1, TWICE_WEEKLY),
    "RHC-3": ScenarioSpec("RHC-3", "rhc", 3, TWICE_WEEKLY),
    "RHC-1": ScenarioSpec("RHC-1", "rhc", 1, TWICE_WEEKLY),
    "RHC-1-acc": ScenarioSpec("RHC-1-acc", "rhc", 1, (1,)),
}


@dataclass(frozen=True)
class WindowMetrics:
    """Glycemic outcomes over one 14-day window."""

    index: int
    start_day: int
    end_day: int  # inclusive
    tir: float  # % of CGM samples in 70-180
    tbr: float  # % of CGM samples < 70
    gmi: float  # %
    mean_fbg: float  # mg/dL
    hypo54_count: int  # fasting values < 54
    total_insulin: float  # U

    def __post_init__(self):
        # 1e-9 slack: TIR and TBR are averaged separately, so their sum can
        # exceed 100 by one rounding ulp on all-below-range days.
        tol = 1e-9
        if not (
            -tol <= self.tir <= 100 + tol
            and -tol <= self.tbr <= 100 + tol
            and self.tir + self.tbr <= 100 + tol
        ):
            raise ValueError("TIR/TBR out of range")
        if self.hypo54_count < 0:
            raise ValueError("hypo count must be >= 0")


@dataclass(frozen=True)
class MetricsReport:
    """All 14-day windows of one avatar's run."""

    windows: tuple[WindowMetrics, ...]

    def window_at_week(self, week: int) -> WindowMetrics:
        """The window ending exactly at the given (even) week."""
        if week % 2 != 0:
            raise ValueError(f"checkpoints fall on even weeks (got {week})")
        index = week // 2 - 1
        if not 0 <= index < len(self.windows):
            raise ValueError(f"run does not cover week {week}")
        return self.windows[index]


@dataclass(frozen=True)
class TargetAttainment:
    fasting_target: bool  # mean FBG in [80, 130]
    hba1c_target: bool  # GMI < 7% and no level-2 hypo
    cgm_target: bool  # TIR > 70% and TBR < 4%


def attainment(window: WindowMetrics) -> TargetAttainment:
    """Target attainment booleans for one window."""
    return TargetAttainment(
        fasting_target=80.0 <= window.mean_fbg <= 130.0,
        hba1c_target=window.gmi < 7.0 and window.hypo54_count == 0,
        cgm_target=window.tir > 70.0 and window.tbr < 4.0,
    )


def attainment_at(report: MetricsReport, week: int) -> TargetAttainment:
    return attainment(report.window_at_week(week))


def _daily_cgm_stats(samples: np.ndarray) -> tuple[float, float, float]:
    tir = float(np.mean((samples >= TIR_RANGE[0]) & (samples <= TIR_RANGE[1])) * 100.0)
    tbr = float(np.mean(samples < TIR_RANGE[0]) * 100.0)
    return tir, tbr, float(samples.mean())


def _windows_from_daily(
    daily_tir: np.ndarray,
    daily_tbr: np.ndarray,
    daily_mean_cgm: np.ndarray,
    fbg: np.ndarray,
    doses: np.ndarray,
) -> MetricsReport:
    n_days = len(daily_tir)
    n_windows = n_days // WINDOW_DAYS
    if n_windows == 0:
        raise ValueError("need at least one full 14-day window")
    windows = []
    for w in range(n_windows):
        lo, hi = w * WINDOW_DAYS, (w + 1) * WINDOW_DAYS
        windows.append(
            WindowMetrics(
                index=w,
                start_day=lo,
                end_day=hi - 1,
                tir=float(daily_tir[lo:hi].mean()),
                tbr=float(daily_tbr[lo:hi].mean()),
                gmi=GMI_INTERCEPT + GMI_SLOPE * float(daily_mean_cgm[lo:hi].mean()),
                mean_fbg=float(fbg[lo:hi].mean()),
                hypo54_count=int(np.sum(fbg[lo:hi] < LEVEL2_HYPO_MGDL)),
                total_insulin=float(doses[lo:hi].sum()),
            )
        )
    return MetricsReport(windows=tuple(windows))


def compute_metrics(
    traces: Sequence[GlucoseTrace],
    fbg_log: Sequence[float],
    dose_log: Sequence[float],
) -> MetricsReport:
    """Window metrics from raw daily traces, fasting values, and doses."""
    if len(traces) == 0:
        raise ValueError("no CGM traces")
    if not (len(traces) == len(fbg_log) == len(dose_log)):
        raise ValueError("traces, fbg_log and dose_log must cover the same days")
    if len(traces) < WINDOW_DAYS:
        raise ValueError("need at least one full 14-day window")
    stats = np.array([_daily_cgm_stats(tr.as_array()) for tr in traces])
    return _windows_from_daily(
        stats[:, 0],
        stats[:, 1],
        stats[:, 2],
        np.asarray(fbg_log, dtype=float),
        np.asarray(dose_log, dtype=float),
    )


@dataclass(frozen=True)
class AvatarRun:
    """Daily series and window metrics for one avatar under one scenario."""

    avatar_id: str
    doses: tuple[float, ...]  # injected units per day
    fbg: tuple[float, ...]  # true fasting glucose per day
    smbg: tuple[float, ...]  # measured value or nan on unmeasured days
    daily_tir: tuple[float, ...]
    daily_tbr: tuple[float, ...]
    daily_mean_cgm: tuple[float, ...]
    report: MetricsReport


@dataclass(frozen=True)
class ScenarioResult:
    spec: ScenarioSpec
    master_seed: int
    runs: tuple[AvatarRun, ...]


def _run_avatar(
    avatar: Avatar,
    spec: ScenarioSpec,
    config: TitrationConfig,
    prior: PriorSpec,
    drug: DrugParams,
    master_seed: int,
    start_dose: float,
    smbg_sigma: float,
) -> AvatarRun:
    n_days = spec.duration_weeks * 7
    plant = perturbed_drug(avatar, drug)
    subject = avatar.subject
    titration_days = set(spec.titration_days(n_days))
    measurement_days = spec.measurement_days(n_days)
    if spec.miss_probability > 0:
        miss_rng = np.random.default_rng([master_seed, avatar.seed, _STREAM_MISS])
        missed = miss_rng.random(n_days) < spec.miss_probability
    else:
        missed = np.zeros(n_days, dtype=bool)

    dose_events: list[DoseEvent] = []
    smbg_by_day: dict[int, float] = {}
    obs_times: list[int] = []
    obs_values: list[float] = []
    obs_insulin: list[float] = []  # controller-model insulin at each observation
    estimate: ModelParams | None = None
    fitted_obs_count = -1

    u = start_dose
    doses = np.zeros(n_days)
    fbg = np.zeros(n_days)
    smbg = np.full(n_days, np.nan)
    daily_tir = np.zeros(n_days)
    daily_tbr = np.zeros(n_days)
    daily_mean = np.zeros(n_days)

    # Doses older than the PK truncation window (14 days of daily dosing)
    # contribute < 1e-5 relative and are dropped from the hot-path slices.
    window = timegrid.PK_TRUNCATION_MIN // timegrid.MINUTES_PER_DAY

    for day in range(n_days):
        recent = dose_events[-window:]
        fbg[day] = true_fbg(
            avatar, recent, day, drug, plant_drug=plant,
            truncation_min=timegrid.PK_TRUNCATION_MIN,
        )

        if day in measurement_days and not missed[day]:
            z = measure_smbg(avatar, fbg[day], day, sigma=smbg_sigma)
            smbg[day] = z
            smbg_by_day[day] = z
            obs_times.append(timegrid.fasting_time(day))
            obs_values.append(z)
            obs_insulin.append(
                float(
                    plasma_insulin_profile(
                        np.array([timegrid.fasting_time(day)], dtype=float),
                        np.array([e.time for e in recent], dtype=float),
                        np.array([e.units for e in recent], dtype=float),
                        drug, subject, timegrid.PK_TRUNCATION_MIN,
                    )[0]
                )
            )

        if day in titration_days:
            if spec.policy == "soc":
                readings = [
                    smbg_by_day[d]
                    for d in range(day - spec.fbg_window + 1, day + 1)
                    if d in smbg_by_day
                ]
                if readings:  # zero available readings: skip this titration
                    u = max(0.0, u + soc_recommend(readings, config))
            else:
                if len(obs_times) != fitted_obs_count:
                    log = ObservationLog.build(obs_times, obs_values, dose_events)
                    try:
                        estimate = map_estimate(
                            log, prior, drug, subject,
                            x0=estimate,
                            truncation_min=timegrid.PK_TRUNCATION_MIN,
                            insulin_at_obs=np.asarray(obs_insulin),
                        )
                        fitted_obs_count = len(obs_times)
                    except EstimationError:
                        pass  # keep the previous cycle's estimate
                params = estimate if estimate is not None else prior.mean_params()
                rec = rhc_recommend(
                    params, prior, config, recent, u, drug, subject,
                    start_day=day, truncation_min=timegrid.PK_TRUNCATION_MIN,
                )
                u = rec.new_dose

        doses[day] = u
        dose_events.append(DoseEvent(timegrid.dose_time(day), u))

        trace = cgm_day(avatar, fbg[day], day)
        daily_tir[day], daily_tbr[day], daily_mean[day] = _daily_cgm_stats(trace.as_array())

    report = _windows_from_daily(daily_tir, daily_tbr, daily_mean, fbg, doses)
    return AvatarRun(
        avatar_id=avatar.id,
        doses=tuple(doses),
        fbg=tuple(fbg),
        smbg=tuple(smbg),
        daily_tir=tuple(daily_tir),
        daily_tbr=tuple(daily_tbr),
        daily_mean_cgm=tuple(daily_mean),
        report=report,
    )


def run_scenario(
    spec: ScenarioSpec,
    population: Sequence[Avatar],
    config: TitrationConfig,
    master_seed: int,
    drug: DrugParams | None = None,
    prior: PriorSpec | None = None,
    start_dose: float = 0.0,
    smbg_sigma: float | None = None,
) -> ScenarioResult:
    """Run one scenario over a population; deterministic per seed.

    Avatars are processed in sequence order; each avatar's run depends only
    on its own seed and the master seed, so results are order-stable.
    ``smbg_sigma`` overrides the fingerstick error scale (0 disables it).
    """
    if len(population) == 0:
        raise ValueError("population is empty")
    if drug is None:
        drug = get_drug("degludec")
    if prior is None:
        prior = PriorSpec()
    from basalkit.avatars import SMBG_LOG_SD

    sigma = SMBG_LOG_SD if smbg_sigma is None else smbg_sigma
    runs = tuple(
        _run_avatar(avatar, spec, config, prior, drug, master_seed, start_dose, sigma)
        for avatar in population
    )
    return ScenarioResult(spec=spec, master_seed=master_seed, runs=runs)


# Export ----------------------------------------------------------------------


def _fmt(x: float) -> str:
    return repr(float(x))


def _population_stats(values: Sequence[float]) -> dict:
    arr = np.asarray(values, dtype=float)
    return {"mean": float(arr.mean()), "sd": float(arr.std())}


def _scenario_summary(result: ScenarioResult) -> dict:
    weeks = result.spec.duration_weeks
    checkpoints = {}
    for week in CHECKPOINT_WEEKS:
        if week > weeks:
            continue
        rows = [run.report.window_at_week(week) for run in result.runs]
        atts = [attainment(w) for w in rows]
        checkpoints[f"week{week}"] = {
            "tir": _population_stats([w.tir for w in rows]),
            "tbr": _population_stats([w.tbr for w in rows]),
            "gmi": _population_stats([w.gmi for w in rows]),
            "mean_fbg": _population_stats([w.mean_fbg for w in rows]),
            "hypo54": _population_stats([w.hypo54_count for w in rows]),
            "total_insulin": _population_stats([w.total_insulin for w in rows]),
            "attainment_pct": {
                "fasting": 100.0 * float(np.mean([a.fasting_target for a in atts])),
                "hba1c": 100.0 * float(np.mean([a.hba1c_target for a in atts])),
                "cgm": 100.0 * float(np.mean([a.cgm_target for a in atts])),
            },
        }
    n_windows = len(result.runs[0].report.windows)
    windows = []
    for w in range(n_windows):
        rows = [run.report.windows[w] for run in result.runs]
        windows.append(
            {
                "index": w,
                "tir": float(np.mean([x.tir for x in rows])),
                "tbr": float(np.mean([x.tbr for x in rows])),
                "gmi": float(np.mean([x.gmi for x in rows])),
                "mean_fbg": float(np.mean([x.mean_fbg for x in rows])),
                "total_insulin": float(np.mean([x.total_insulin for x in rows])),
            }
        )
    return {
        "policy": result.spec.policy,
        "fbg_window": result.spec.fbg_window,
        "n": len(result.runs),
        "weeks": weeks,
        "master_seed": result.master_seed,
        "checkpoints": checkpoints,
        "windows": windows,
    }


def export_results(
    results: Sequence[ScenarioResult],
    path: str | Path,
    format: str = "both",
) -> list[Path]:
    """Write per-avatar CSV series and/or a JSON summary; byte-stable.

    Floats are rendered with shortest round-trip repr so identical runs
    produce identical bytes.
    """
    if format not in ("csv", "json", "both"):
        raise ValueError(f"format must be csv, json, or both (got {format!r})")
    if len(results) == 0:
        raise ValueError("nothing to export")
    for result in results:
        if len(result.runs) == 0:
            raise ValueError(f"scenario {result.spec.name!r} has no avatar runs")

    out_dir = Path(path)
    written: list[Path] = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc

    if format in ("csv", "both"):
        for result in results:
            scen_dir = out_dir / result.spec.name
            scen_dir.mkdir(parents=True, exist_ok=True)
            for run in result.runs:
                rows = ["day,dose,fbg,smbg,daily_tir,daily_tbr,daily_mean_cgm"]
                for day in range(len(run.doses)):
                    smbg = "" if math.isnan(run.smbg[day]) else _fmt(run.smbg[day])
                    rows.append(
                        ",".join(
                            [
                                str(day),
                                _fmt(run.doses[day]),
                                _fmt(run.fbg[day]),
                                smbg,
                                _fmt(run.daily_tir[day]),
                                _fmt(run.daily_tbr[day]),
                                _fmt(run.daily_mean_cgm[day]),
                            ]
                        )
                    )
                target = scen_dir / f"{run.avatar_id}.csv"
                target.write_text("\n".join(rows) + "\n")
                written.append(target)

    if format in ("json", "both"):
        summary = {
            "scenarios": {r.spec.name: _scenario_summary(r) for r in results},
        }
        target = out_dir / "summary.json"
        target.write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
        written.append(target)
    return written


def summarize_csv_dir(path: str | Path) -> dict:
    """Recompute the summary structure from exported per-avatar CSVs."""
    out_dir = Path(path)
    scen_dirs = sorted(d for d in out_dir.iterdir() if d.is_dir())
    if not scen_dirs:
        raise ValueError(f"no scenario directories under {out_dir}")
    summary: dict = {"scenarios": {}}
    for scen_dir in scen_dirs:
        runs = []
        for csv_path in sorted(scen_dir.glob("*.csv")):
            body = csv_path.read_text().strip().splitlines()[1:]
            cols = np.array(
                [[float(c) if c else math.nan for c in line.split(",")] for line in body]
            )
            report = _windows_from_daily(cols[:, 4], cols[:, 5], cols[:, 6], cols[:, 2], cols[:, 1])
            runs.append((csv_path.stem, report))
        if not runs:
            raise ValueError(f"no avatar CSVs under {scen_dir}")
        weeks = len(runs[0][1].windows) * 2
        checkpoints = {}
        for week in CHECKPOINT_WEEKS:
            if week > weeks:
                continue
            rows = [r.window_at_week(week) for _, r in runs]
            atts = [attainment(w) for w in rows]
            checkpoints[f"week{week}"] = {
                "tir": _population_stats([w.tir for w in rows]),
                "tbr": _population_stats([w.tbr for w in rows]),
                "gmi": _population_stats([w.gmi for w in rows]),
                "mean_fbg": _population_stats([w.mean_fbg for w in rows]),
                "hypo54": _population_stats([w.hypo54_count for w in rows]),
                "total_insulin": _population_stats([w.total_insulin for w in rows]),
                "attainment_pct": {
                    "fasting": 100.0 * float(np.mean([a.fasting_target for a in atts])),
                    "hba1c": 100.0 * float(np.mean([a.hba1c_target for a in atts])),
                    "cgm": 100.0 * float(np.mean([a.cgm_target for a in atts])),
                },
            }
        summary["scenarios"][scen_dir.name] = {
            "n": len(runs),
            "weeks": weeks,
            "checkpoints": checkpoints,
        }
    return summary
