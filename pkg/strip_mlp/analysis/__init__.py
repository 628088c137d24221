"""Parameter/FLOP accounting and cost reports."""

from .costs import (
    count_flops,
    count_flops_detail,
    count_params,
    sparse_fusion,
    sparse_interaction,
    sparse_mlp_baseline,
    strip_fusion,
    strip_interaction,
)
from .report import CostReport, CostRow, stage_report, table1, table1_text, write_report

__all__ = [
    "CostReport",
    "CostRow",
    "count_flops",
    "count_flops_detail",
    "count_params",
    "sparse_fusion",
    "sparse_interaction",
    "sparse_mlp_baseline",
    "stage_report",
    "strip_fusion",
    "strip_interaction",
    "table1",
    "table1_text",
    "write_report",
]
