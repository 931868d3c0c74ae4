from .baselines import (BaselineResult, baseline_variance_model, delta_q_feature, delta_q_variance,
                        ridge_model, variance_model)
from .fleet import CellPlan, FleetConfig, build_fleet, default_power_model, plan_fleet, simulate_cell
from .labels import (DatasetLabels, KneeConfig, KneeLabel, LifeLabel, LifeLabelConfig, cycle_life,
                     interval_slopes, knee_label, label_dataset, nominal_capacity, pattern_labels)
from .metrics import (accuracy, auc, cumulated_mae_curve, mae, mape, one_vs_rest, regression_metrics,
                      rmse, roc_auc, roc_curve, total_variation)
from .tasks import TASKS, EvalReport, TaskConfig, load_report, run_task, split_indices
from .xps import (ELEMENTS, PATTERN_ORDER, PatternAssignment, XpsSample, fixture_patterns,
                  fixture_reference, load_group_centers, load_listed_derived, load_xps, matrix,
                  ratio_violations, sum_violations, xps_patterns)

__all__ = [
    "BaselineResult", "baseline_variance_model", "delta_q_feature", "delta_q_variance",
    "ridge_model", "variance_model",
    "CellPlan", "FleetConfig", "build_fleet", "default_power_model", "plan_fleet", "simulate_cell",
    "DatasetLabels", "KneeConfig", "KneeLabel", "LifeLabel", "LifeLabelConfig", "cycle_life",
    "interval_slopes", "knee_label", "label_dataset", "nominal_capacity", "pattern_labels",
    "accuracy", "auc", "cumulated_mae_curve", "mae", "mape", "one_vs_rest", "regression_metrics",
    "rmse", "roc_auc", "roc_curve", "total_variation",
    "TASKS", "EvalReport", "TaskConfig", "load_report", "run_task", "split_indices",
    "ELEMENTS", "PATTERN_ORDER", "PatternAssignment", "XpsSample", "fixture_patterns",
    "fixture_reference", "load_group_centers", "load_listed_derived", "load_xps", "matrix",
    "ratio_violations", "sum_violations", "xps_patterns",
]
