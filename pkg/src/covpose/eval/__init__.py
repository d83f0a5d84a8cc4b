from .metrics import MetricConfig, correct_mask, nme_mm, pck, sensel_distances
from .report import (
    ABLATION_MODALITIES,
    ABLATION_TRAINING,
    AblationTable,
    EvalReport,
    ablation_table,
    breakdown,
    compare,
    emit_ablation,
    emit_report,
    format_report,
    load_report,
    significance_entry,
)
from .stats import DegenerateTestError, betainc_reg, paired_t_test, t_two_sided_p

__all__ = [
    "ABLATION_MODALITIES", "ABLATION_TRAINING", "AblationTable", "DegenerateTestError", "EvalReport",
    "MetricConfig", "ablation_table", "betainc_reg", "breakdown", "compare", "correct_mask", "emit_ablation",
    "emit_report", "format_report", "load_report", "nme_mm", "paired_t_test", "pck", "sensel_distances",
    "significance_entry", "t_two_sided_p",
]
