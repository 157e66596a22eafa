"""Experiment orchestration: configs, metrics, pipeline, reports, CLI."""
from .checks import check_mc_convergence, check_monotonicity, check_revenue_identity
from .config import ConfigError, EvalConfig, ExperimentConfig, ModelSettings, TrainConfig, from_dict, load_config
from .experiment import (MechanismRow, MissingCheckpointError, Report, evaluate, run_experiment,
                         train_mechanisms)
from .metrics import PsiResult, RpmCtr, cga_psi, ic_metric_psi, metric_rpm_ctr, psi_from_regret
from .report import emit_report, emit_slot_ctr, read_report_csv, read_report_json

__all__ = [
    "ExperimentConfig", "ModelSettings", "TrainConfig", "EvalConfig", "ConfigError", "from_dict",
    "load_config", "Report", "MechanismRow", "MissingCheckpointError", "evaluate", "run_experiment",
    "train_mechanisms", "metric_rpm_ctr", "RpmCtr", "ic_metric_psi", "cga_psi", "psi_from_regret",
    "PsiResult", "emit_report", "emit_slot_ctr", "read_report_csv", "read_report_json",
    "check_monotonicity", "check_revenue_identity", "check_mc_convergence",
]
