"""Cost reports: whole-model stage breakdowns and the Sparse/Strip comparison table."""

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from ..errors import ConfigError
from ..layers import CGSMM, PGSMM, Initializer, ParamStore
from ..layers.strip import resolve_patches
from ..models.zoo import StripMLP
from .costs import (
    count_flops_detail,
    count_params,
    sparse_fusion,
    sparse_interaction,
    strip_fusion,
    strip_interaction,
)

logger = logging.getLogger(__name__)

FLOPS_NOTE = "FLOPs are multiply-accumulate counts (1 MAC = 1 FLOP); bias additions listed separately"

UNITS = {"": 1.0, "k": 1e3, "M": 1e6, "G": 1e9}

# Geometry of the comparison: stage 1 at 56x56 with C=112, stage 4 at 7x7
# with C=896, P = C/4.
STAGE_GEOMETRY = {"stage1": (56, 56, 112), "stage4": (7, 7, 896)}
PATCH_POLICY = "c4"

DESIGNS = ("sparse", "strip")
DESIGN_LABELS = {"sparse": "Sparse MLP", "strip": "Strip MLP"}
ITEMS = ("stage1", "stage4", "fusion")
ITEM_LABELS = {"stage1": "Stage 1", "stage4": "Stage 4", "fusion": "Stage 4 Fusion"}
METRICS = ("params", "flops")

# (value, unit) as typeset in the reference comparison.
REFERENCE_CELLS: Dict[Tuple[str, str, str], Tuple[float, str]] = {
    ("sparse", "stage1", "params"): (6.27, "k"),
    ("sparse", "stage1", "flops"): (39.34, "M"),
    ("sparse", "stage4", "params"): (0.10, "k"),
    ("sparse", "stage4", "flops"): (0.62, "M"),
    ("sparse", "fusion", "params"): (2.41, "M"),
    ("sparse", "fusion", "flops"): (118.01, "M"),
    ("strip", "stage1", "params"): (526.85, "k"),
    ("strip", "stage1", "flops"): (118.01, "M"),
    ("strip", "stage4", "params"): (65.86, "k"),
    ("strip", "stage4", "flops"): (1.84, "M"),
    ("strip", "fusion", "params"): (3.21, "M"),
    ("strip", "fusion", "flops"): (157.35, "M"),
}
REFERENCE_CHANGES = {
    ("sparse", "params"): 62.70,
    ("sparse", "flops"): 63.45,
    ("strip", "params"): 8.00,
    ("strip", "flops"): 64.14,
}
REFERENCE_PROPORTIONS = {
    ("sparse", "params"): 0.01,
    ("sparse", "flops"): 0.52,
    ("strip", "params"): 2.01,
    ("strip", "flops"): 1.16,
}


def typeset(value: float, unit: str) -> float:
    """``value`` in ``unit`` rounded to two decimals, as printed in tables."""
    return round(value / UNITS[unit], 2)


def human(value: float, unit: Optional[str] = None) -> str:
    if unit is None:
        unit = "G" if value >= 1e9 else "M" if value >= 1e6 else "k" if value >= 1e3 else ""
    return f"{value / UNITS[unit]:.2f}{unit}"


@dataclass
class CostRow:
    scope: str
    params_weights: int
    params_biases: int = 0
    flops: int = 0
    bias_adds: int = 0

    @property
    def params(self) -> int:
        return self.params_weights + self.params_biases


@dataclass
class CostReport:
    """Rows of (scope, weights, biases, flops) plus figures derived from them."""

    title: str
    rows: List[CostRow]
    derived: Dict[str, float] = field(default_factory=dict)
    flags: List[str] = field(default_factory=list)

    def row(self, scope: str) -> CostRow:
        for r in self.rows:
            if r.scope == scope:
                return r
        raise ConfigError(f"report '{self.title}' has no row '{scope}'")

    def totals(self) -> CostRow:
        return CostRow(
            "total",
            sum(r.params_weights for r in self.rows),
            sum(r.params_biases for r in self.rows),
            sum(r.flops for r in self.rows),
            sum(r.bias_adds for r in self.rows),
        )

    def to_records(self) -> List[Dict]:
        records = [dict(kind="row", **asdict(r)) for r in self.rows]
        records.append(dict(kind="total", **asdict(self.totals())))
        records.extend({"kind": "derived", "name": k, "value": v} for k, v in self.derived.items())
        records.extend({"kind": "flag", "message": f} for f in self.flags)
        return records

    def to_text(self) -> str:
        header = f"{'scope':<16} {'weights':>14} {'biases':>10} {'params':>10} {'FLOPs':>16} {'FLOPs':>9} {'bias adds':>12}"
        lines = [self.title, FLOPS_NOTE, header, "-" * len(header)]
        for r in [*self.rows, self.totals()]:
            lines.append(
                f"{r.scope:<16} {r.params_weights:>14,} {r.params_biases:>10,} {human(r.params):>10} "
                f"{r.flops:>16,} {human(r.flops):>9} {r.bias_adds:>12,}"
            )
        for name, value in self.derived.items():
            lines.append(f"{name}: {value:.2f}")
        lines.extend(f"FLAG: {f}" for f in self.flags)
        return "\n".join(lines)


def stage_report(model: StripMLP) -> CostReport:
    """Per-scope parameter and FLOP breakdown of a built model (one image)."""
    rows = []
    interaction: Dict[str, int] = {}
    for label, modules, shape in model.stage_modules():
        weights = biases = flops = adds = 0
        for module in modules:
            w, b = count_params(module)
            macs, bias_adds = count_flops_detail(module, shape)
            weights, biases, flops, adds = weights + w, biases + b, flops + macs, adds + bias_adds
            interaction[label] = interaction.get(label, 0) + sum(
                m.interaction_counts()[0] for m in module.modules() if isinstance(m, (CGSMM, PGSMM))
            )
        rows.append(CostRow(label, weights, biases, flops, adds))
        logger.debug(f"{label}: {weights + biases:,} params, {flops:,} MACs")
    cfg = model.cfg
    report = CostReport(
        f"Strip-MLP {cfg.variant}: C={cfg.channels}, depths={list(cfg.depths)}, "
        f"{cfg.resolution}x{cfg.resolution}, p={cfg.patch_size}, {cfg.num_classes} classes, "
        f"patches={cfg.patch_policy}, topology={cfg.topology}, mixing={cfg.mixing}",
        rows,
    )
    totals = report.totals()
    report.derived["total_params_M"] = totals.params / 1e6
    report.derived["total_flops_G"] = totals.flops / 1e9
    for label, count in interaction.items():
        if label.startswith("stage"):
            report.derived[f"{label}_strip_interaction_weights_k"] = count / 1e3
    return report


def _strip_cells(item: str) -> Tuple[Tuple[int, int], Tuple[int, int], int]:
    """Formula counts for one stage, checked against a shape-only CGSMM."""
    h, w, c = STAGE_GEOMETRY[item]
    patches = resolve_patches(PATCH_POLICY, c)
    inter = strip_interaction(h, w, c, patches)
    fusion = strip_fusion(h, w, c)
    module = CGSMM(ParamStore(), item, Initializer(None), c, h, w, patches)
    weights, biases = module.interaction_counts()
    total_weights, total_biases = count_params(module)
    if weights != inter[0] or total_weights - weights != fusion[0]:
        raise ConfigError(f"CGSMM parameter counts disagree with the closed form at {item}")
    return inter, fusion, total_biases


def table1() -> CostReport:
    """Sparse MLP vs Strip MLP token-interaction costs at stages 1 and 4.

    Rows hold exact integers; ``derived`` holds the two-decimal "changes"
    (stage 1 / stage 4) and "proportion" (interaction share of the module,
    percent) figures; ``flags`` lists every typeset value that differs from
    the reference one.
    """
    cells: Dict[Tuple[str, str, str], int] = {}
    rows = []
    for item in ("stage1", "stage4"):
        h, w, c = STAGE_GEOMETRY[item]
        s_inter = sparse_interaction(h, w, c)
        cells[("sparse", item, "params")], cells[("sparse", item, "flops")] = s_inter
        rows.append(CostRow(f"sparse.{item}", s_inter[0], 0, s_inter[1]))
    s_fusion = sparse_fusion(*STAGE_GEOMETRY["stage4"])
    cells[("sparse", "fusion", "params")], cells[("sparse", "fusion", "flops")] = s_fusion
    rows.append(CostRow("sparse.fusion", s_fusion[0], 0, s_fusion[1]))

    for item in ("stage1", "stage4"):
        inter, fusion, _ = _strip_cells(item)
        cells[("strip", item, "params")], cells[("strip", item, "flops")] = inter
        rows.append(CostRow(f"strip.{item}", inter[0], 0, inter[1]))
    cells[("strip", "fusion", "params")], cells[("strip", "fusion", "flops")] = fusion
    rows.append(CostRow("strip.fusion", fusion[0], 0, fusion[1]))

    report = CostReport("Token interaction cost: Sparse MLP vs Strip MLP (weights only)", rows)
    for key, (reference, unit) in REFERENCE_CELLS.items():
        value = typeset(cells[key], unit)
        report.derived[".".join(key)] = value
        if value != reference:
            report.flags.append(
                f"{'.'.join(key)}: formula gives {cells[key]:,} = {value:.2f}{unit}, reference {reference:.2f}{unit}"
            )

    for design in DESIGNS:
        for metric in METRICS:
            stage1 = cells[(design, "stage1", metric)]
            stage4 = cells[(design, "stage4", metric)]
            fusion_value = cells[(design, "fusion", metric)]
            unit = REFERENCE_CELLS[(design, "stage1", metric)][1]
            exact_change = stage1 / stage4
            typeset_change = round(typeset(stage1, unit) / typeset(stage4, unit), 2)
            proportion = round(100.0 * stage4 / (stage4 + fusion_value), 2)
            report.derived[f"{design}.changes.{metric}.exact"] = exact_change
            report.derived[f"{design}.changes.{metric}"] = typeset_change
            report.derived[f"{design}.proportion.{metric}"] = proportion
            for name, value, reference in (
                ("changes", typeset_change, REFERENCE_CHANGES[(design, metric)]),
                ("proportion", proportion, REFERENCE_PROPORTIONS[(design, metric)]),
            ):
                if value != reference:
                    report.flags.append(
                        f"{design}.{name}.{metric}: computed {value:.2f}, reference {reference:.2f}"
                    )

    for flag in report.flags:
        logger.warning(flag)
    return report


def table1_text(report: CostReport) -> str:
    """The comparison laid out like the reference table, exact integers alongside."""
    d = report.derived
    width = 24
    header = f"{'Items':<16}" + "".join(
        f"{DESIGN_LABELS[design] + ' ' + metric.capitalize():>{width}}" for design in DESIGNS for metric in METRICS
    )
    lines = [report.title, FLOPS_NOTE, header, "-" * len(header)]

    def cell_line(item: str) -> str:
        parts = []
        for design in DESIGNS:
            for metric in METRICS:
                row = report.row(f"{design}.{item}")
                exact = row.params_weights if metric == "params" else row.flops
                unit = REFERENCE_CELLS[(design, item, metric)][1]
                parts.append(f"{human(exact, unit) + f' ({exact:,})':>{width}}")
        return f"{ITEM_LABELS[item]:<16}" + "".join(parts)

    lines.append(cell_line("stage1"))
    lines.append(cell_line("stage4"))
    lines.append(f"{'Changes':<16}" + "".join(
        f"{'↓' + format(d[f'{design}.changes.{metric}'], '.2f'):>{width}}" for design in DESIGNS for metric in METRICS
    ))
    lines.append(cell_line("fusion"))
    lines.append(f"{'Proportion':<16}" + "".join(
        f"{format(d[f'{design}.proportion.{metric}'], '.2f') + '%':>{width}}" for design in DESIGNS for metric in METRICS
    ))
    lines.extend(f"FLAG: {f}" for f in report.flags)
    return "\n".join(lines)


def write_report(report: CostReport, path: Union[str, Path]) -> Path:
    """Write the machine-readable form: a JSON document with one record per row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {"title": report.title, "note": FLOPS_NOTE, "records": report.to_records()}
    with open(path, "w", encoding="utf-8") as f:
        json.dump(document, f, indent=2, ensure_ascii=False)
    logger.info(f"report written to {path}")
    return path
