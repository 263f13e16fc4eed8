"""
Report Service

Ghi các artifact của mỗi lần chạy với tên file cố định trong --out DIR.
"""
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Union

import pandas as pd
from pydantic import BaseModel

from app.services.indicator_service import IndicatorTable
from core.schemas import EvaluationReport, RunConfig, ValidationReport

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.6f"

INDICATORS_CSV = "indicators.csv"
INDICATORS_JSONL = "indicators.jsonl"
EVALUATION_JSON = "evaluation.json"
EVALUATION_TXT = "evaluation.txt"
MARGINS_CSV = "margins.csv"
CATEGORY_STATS_CSV = "category_stats.csv"
YEAR_STATS_CSV = "year_stats.csv"
CATEGORY_INDICATORS_CSV = "category_indicators.csv"
RUN_META_JSON = "run_meta.json"
VALIDATION_JSON = "validation.json"
REFERENCE_SETS_CSV = "reference_sets.csv"

PathLike = Union[str, Path]


def _json_default(value: Any):
    if isinstance(value, BaseModel):
        return value.model_dump(mode="json")
    if hasattr(value, "item"):
        return value.item()
    if isinstance(value, (set, frozenset)):
        return sorted(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


class ReportService:
    """Ghi file kết quả"""

    def __init__(self, out_dir: PathLike):
        """
        Args:
            out_dir: Thư mục output (tự tạo nếu chưa có)
        """
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def write_json(self, name: str, payload: Any) -> Path:
        path = self.path(name)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, ensure_ascii=False, default=_json_default)
            f.write("\n")
        return path

    def write_model(self, name: str, model: BaseModel) -> Path:
        path = self.path(name)
        path.write_text(model.model_dump_json(indent=2) + "\n", encoding="utf-8")
        return path

    def write_csv(self, name: str, frame: pd.DataFrame) -> Path:
        path = self.path(name)
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return path

    # ------------------------------------------------------------ artifacts
    def write_indicator_table(self, table: IndicatorTable) -> Dict[str, Path]:
        csv_path = self.write_csv(INDICATORS_CSV, table.frame)
        jsonl_path = self.path(INDICATORS_JSONL)
        table.frame.to_json(jsonl_path, orient="records", lines=True, double_precision=15)
        logger.info(f"Wrote {len(table)} rows of {', '.join(table.indicators)} to {csv_path}")
        return {"csv": csv_path, "jsonl": jsonl_path}

    def write_evaluation(self, report: EvaluationReport) -> Dict[str, Path]:
        json_path = self.write_model(EVALUATION_JSON, report)
        txt_path = self.path(EVALUATION_TXT)
        txt_path.write_text(render_evaluation_text(report), encoding="utf-8")
        margins_path = self.write_csv(MARGINS_CSV, margins_frame(report))
        logger.info(f"Wrote evaluation report to {json_path}")
        return {"json": json_path, "txt": txt_path, "margins": margins_path}

    def write_category_stats(self, stats: pd.DataFrame) -> Path:
        return self.write_csv(CATEGORY_STATS_CSV, stats)

    def write_year_stats(self, stats: pd.DataFrame) -> Path:
        return self.write_csv(YEAR_STATS_CSV, stats)

    def write_category_indicators(self, means: pd.DataFrame) -> Path:
        path = self.write_csv(CATEGORY_INDICATORS_CSV, means)
        logger.info(f"Wrote per-category means of {means['indicator'].nunique()} indicators to {path}")
        return path

    def write_reference_sets(self, dump: pd.DataFrame) -> Path:
        return self.write_csv(REFERENCE_SETS_CSV, dump)

    def write_validation(self, report: ValidationReport) -> Path:
        return self.write_model(VALIDATION_JSON, report)

    def write_run_meta(self, config: RunConfig, extra: Optional[Dict[str, Any]] = None) -> Path:
        payload = {"config": config.model_dump(mode="json")}
        if extra:
            payload.update(extra)
        return self.write_json(RUN_META_JSON, payload)


def margins_frame(report: EvaluationReport) -> pd.DataFrame:
    """Bảng margins dạng plot-ready: level, margin, ci_low, ci_high, indicator"""
    rows = [
        {
            "level": row.level,
            "margin": row.margin,
            "ci_low": row.ci_low,
            "ci_high": row.ci_high,
            "indicator": margins.indicator,
        }
        for margins in report.margins
        for row in margins.rows
    ]
    return pd.DataFrame(rows, columns=["level", "margin", "ci_low", "ci_high", "indicator"])


def _fmt(value: Optional[float], digits: int = 3) -> str:
    if value is None or value != value:
        return "."
    return f"{value:.{digits}f}"


def render_evaluation_text(report: EvaluationReport) -> str:
    """Ba bảng dạng text: correlations, regressions, margins"""
    correlations = pd.DataFrame([
        {
            "Indicator": c.indicator,
            "All recommendations": f"{_fmt(c.rho_all)} [{_fmt(c.ci_all_low)}, {_fmt(c.ci_all_high)}]",
            "n (all)": c.n_all,
            "First recommendation": f"{_fmt(c.rho_first)} [{_fmt(c.ci_first_low)}, {_fmt(c.ci_first_high)}]",
            "n (first)": c.n_first,
        }
        for c in report.correlations
    ])

    regression_rows = []
    for r in report.regressions:
        regression_rows.append({
            "Indicator": r.indicator,
            "Very good": f"{_fmt(r.b_vg, 2)}{r.stars('vg')} ({_fmt(r.se_vg, 3)})",
            "Exceptional": f"{_fmt(r.b_ex, 2)}{r.stars('ex')} ({_fmt(r.se_ex, 3)})",
            "Constant": f"{_fmt(r.b0, 2)}{r.stars('b0')} ({_fmt(r.se_b0, 3)})",
            "n": r.n_records,
            "clusters": r.n_clusters,
        })
    regressions = pd.DataFrame(regression_rows)

    margins = pd.DataFrame([
        {
            "Indicator": m.indicator,
            "Level": row.label,
            "Margin": _fmt(row.margin),
            "95% CI": f"[{_fmt(row.ci_low)}, {_fmt(row.ci_high)}]",
            "n": row.n,
        }
        for m in report.margins
        for row in m.rows
    ])

    meta = report.metadata
    lines = [
        "Spearman rank correlations with recommendation scores (95% CI)",
        correlations.to_string(index=False),
        "",
        "Regression of z-transformed indicators on recommendation level",
        "(Good = reference category; cluster bootstrap standard errors in parentheses)",
        regressions.to_string(index=False),
        "*** p < 0.001",
        "",
        "Predictive margins",
        margins.to_string(index=False),
        "",
        f"records: {meta.get('n_records')}  papers: {meta.get('n_papers')}  "
        f"orphans: {meta.get('orphan_recommendations')}  sample: {meta.get('regression_sample')}",
    ]
    skipped = meta.get("skipped_indicators") or []
    if skipped:
        lines.append("skipped: " + ", ".join(f"{s['indicator']} ({s['reason']})" for s in skipped))
    return "\n".join(lines) + "\n"
