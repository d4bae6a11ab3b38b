"""Delay-aware hybrid soft sensor for SCR outlet NOx.

Stages: MIC delay reconstruction, combined tree feature selection, VMD of
the ammonia-injection flow, an extreme learning machine and an
error-correction ELM on lagged residuals.
"""
from .dataset import (PLANT_SCHEMA, DataError, NormParams, SchemaError, SynthConfig,
                      TimeSeriesTable, VariableSchema, clean_outliers, denormalize,
                      generate_synthetic, load_table, normalize, save_table, split)
from .elm import ElmModel
from .feature_select import (ImportanceReport, TreeParams, combine_importance, feature_importances,
                             select_features)
from .mic_delay import DelayMap, estimate_delay, estimate_delays, mic, reconstruct
from .pipeline import (EvalReport, PipelineConfig, PipelineError, PipelineModel, ablate,
                       fit, metrics, predict, sensitivity)
from .vmd import ModeSet, VmdConfig, decompose, prune_last_mode, select_mode_count

__version__ = "0.1.0"
