from .aggregate import activate, aggregate, aggregate_all, group_cycles, segment_agg, segment_bounds
from .dsl import (ACTIVATORS, AGGREGATORS, DIRECTIONS, SIGNALS, Diff, FeatureExpr, FeatureSyntaxError,
                  FeatureValidationError, Single, SpaceConfig, enumerate_space, iter_space, parse,
                  read_feature_list, render, write_feature_list)
from .evaluate import (CellSignals, FeatureMatrix, evaluate, evaluate_matrix, evaluate_naive,
                       read_feature_matrix, write_feature_matrix)
from .plan import EvalPlan, compile_plan
from .signals import GRID_LEN, resample_cycle, resample_phase

__all__ = [
    "activate", "aggregate", "aggregate_all", "group_cycles", "segment_agg", "segment_bounds",
    "ACTIVATORS", "AGGREGATORS", "DIRECTIONS", "SIGNALS", "Diff", "FeatureExpr", "FeatureSyntaxError",
    "FeatureValidationError", "Single", "SpaceConfig", "enumerate_space", "iter_space", "parse",
    "read_feature_list", "render", "write_feature_list",
    "CellSignals", "FeatureMatrix", "evaluate", "evaluate_matrix", "evaluate_naive",
    "read_feature_matrix", "write_feature_matrix",
    "EvalPlan", "compile_plan", "GRID_LEN", "resample_cycle", "resample_phase",
]
