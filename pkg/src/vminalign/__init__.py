"""Vmin prediction under inter- and intra-wafer process variation."""

from .datamodel import (
    ClassProbeTable,
    DieRecord,
    DieSchema,
    WaferDataset,
    assign_zones,
    load_die_csv,
    load_probe_csv,
    split_train_test,
    write_die_csv,
    write_probe_csv,
)
from .estimators import (
    BaModel,
    OlsModel,
    ProbeBiasModel,
    RbaModel,
    RbaOptions,
    fit_ba,
    fit_ols,
    fit_probe_bias_model,
    fit_rba,
    load_model,
    predict_ba,
    predict_ols,
    predict_rba,
    save_model,
    shift_tables,
)
from .featsel import FeatureSubset, cfs_merit, cfs_select
from .harness import evaluate, run_correlation_study, run_data_efficiency, run_new_wafer_protocol
from .report import EvalReport, write_report_csv
from .simgen import GroundTruth, SimConfig, describe, generate

__version__ = "0.1.0"
