"""Basal insulin titration toolkit.

Closed-form insulin pharmacokinetics, a fasting-glucose dose-response model
with online MAP parameter estimation, a receding-horizon dose controller and
the standard threshold titration rule, synthetic T2D virtual patients, a
52-week trial harness with glycemic outcome metrics, and an HTTP advisor
service.
"""

from basalkit.pk import (
    DrugParams,
    DoseEvent,
    Subject,
    get_drug,
    load_drug_file,
    plasma_insulin,
    half_life,
    time_to_peak,
    steady_state_avg,
)
from basalkit.fasting import ModelParams, PriorSpec, predict_fbg, predict_trajectory, envelope
from basalkit.estimator import ObservationLog, map_objective, map_objective_grad, map_estimate
from basalkit.control import (
    TitrationConfig,
    DoseRecommendation,
    cost_performance,
    cost_regularization,
    rhc_recommend,
    soc_recommend,
    solve_delta_u,
)
from basalkit.avatars import (
    Avatar,
    MealResponse,
    GlucoseTrace,
    PopulationTargets,
    generate_population,
    true_fbg,
    cgm_day,
    measure_smbg,
    save_population,
    load_population,
)
from basalkit.trial import (
    ScenarioSpec,
    SCENARIO_PRESETS,
    WindowMetrics,
    MetricsReport,
    TargetAttainment,
    run_scenario,
    compute_metrics,
    attainment,
    attainment_at,
    export_results,
)

__version__ = "0.1.0"

__all__ = [
    "DrugParams",
    "DoseEvent",
    "Subject",
    "get_drug",
    "load_drug_file",
    "plasma_insulin",
    "half_life",
    "time_to_peak",
    "steady_state_avg",
    "ModelParams",
    "PriorSpec",
    "predict_fbg",
    "predict_trajectory",
    "envelope",
    "ObservationLog",
    "map_objective",
    "map_objective_grad",
    "map_estimate",
    "TitrationConfig",
    "DoseRecommendation",
    "cost_performance",
    "cost_regularization",
    "rhc_recommend",
    "soc_recommend",
    "solve_delta_u",
    "Avatar",
    "MealResponse",
    "GlucoseTrace",
    "PopulationTargets",
    "generate_population",
    "true_fbg",
    "cgm_day",
    "measure_smbg",
    "save_population",
    "load_population",
    "ScenarioSpec",
    "SCENARIO_PRESETS",
    "WindowMetrics",
    "MetricsReport",
    "TargetAttainment",
    "run_scenario",
    "compute_metrics",
    "attainment",
    "attainment_at",
    "export_results",
]
