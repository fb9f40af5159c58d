"""
レポートの書き出し（report.json / tables.md / curves.csv）。
"""

import logging
from pathlib import Path
from typing import Dict, Mapping, Optional, Sequence, Union

from pydantic import ValidationError

from errors import MalformedRecord, MissingFile
from services.metrics import AggregateReport, RunReport, single_task_report
from services.trainer import LearningCurves
from utils.file_handler import ensure_writable_dir, get_file_size, write_text_atomic

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"
TABLE_FILE = "tables.md"
CURVES_FILE = "curves.csv"
AGGREGATE_FILE = "aggregate.json"

METHOD_LABELS = {
    "single_task": "Single-task",
    "instance_balanced": "Instance-balanced",
    "class_balanced": "Class-balanced",
    "temperature_scaled": "Temperature-scaled",
    "capped_temperature_scaled": "Capped temperature-scaled",
    "two_stage": "Two-stage (capped)",
}


def format_cell(value: float, bold: bool = False) -> str:
    cell = f"{value * 100:.2f}"
    return f"**{cell}**" if bold else cell


def format_overhead(value: Optional[float]) -> str:
    return "-" if value is None else f"{value * 100:.1f}%"


def _row(report: RunReport, task_ids: Sequence[str]) -> str:
    label = METHOD_LABELS.get(report.method, report.method)
    cells = []
    for task_id in task_ids:
        task = report.task(task_id)
        # 単一タスク行は比較対象そのものなので強調しない
        cells.append(format_cell(task.multi_task_score, bold=task.qualified and report.method != "single_task"))
    cells += [format_cell(report.macro_avg), str(report.num_qualified), format_overhead(report.overhead)]
    return "| " + " | ".join([label] + cells) + " |"


def render_table(reports: Sequence[RunReport], baseline: Optional[RunReport] = None) -> str:
    """Markdown表（Methods | タスク... | Avg. | Num. | Overhead）"""
    rows = ([baseline] if baseline is not None else []) + list(reports)
    if not rows:
        return ""
    task_ids = [task.task_id for task in rows[0].tasks]
    header = ["Methods"] + task_ids + ["Avg.", "Num.", "Overhead"]
    lines = [
        "| " + " | ".join(header) + " |",
        "|" + "|".join(["---"] + ["---:"] * (len(header) - 1)) + "|",
    ]
    lines += [_row(report, task_ids) for report in rows]
    return "\n".join(lines) + "\n"


def baseline_row(report: RunReport) -> RunReport:
    """レポートに含まれるベースラインから単一タスク行を作る"""
    return single_task_report({task.task_id: task.single_task_baseline for task in report.tasks})


def _render_document(reports: Sequence[RunReport], baseline: Optional[RunReport]) -> str:
    if baseline is None and reports:
        baseline = baseline_row(reports[0])
    parts = ["# Results", "", "Scores are dev metrics x100; bold cells are qualified tasks (>= 99% of single-task).", ""]
    parts.append(render_table(reports, baseline))
    for report in reports:
        if report.num_models > 1:
            parts += [
                f"## {METHOD_LABELS.get(report.method, report.method)}: per-model qualified counts",
                "",
            ]
            parts += [f"- {name}: {count}" for name, count in zip(report.groups, report.qualified_per_model)]
            parts.append("")
    return "\n".join(parts)


def emit_report(
    report: RunReport,
    out_dir: Union[str, Path],
    curves: Optional[LearningCurves] = None,
    baseline: Optional[RunReport] = None,
) -> Dict[str, Path]:
    """report.json, tables.md, curves.csv を書き出す"""
    out = ensure_writable_dir(out_dir)
    paths = {
        "report": write_text_atomic(out / REPORT_FILE, report.model_dump_json(indent=2) + "\n"),
        "tables": write_text_atomic(out / TABLE_FILE, _render_document([report], baseline)),
        "curves": write_text_atomic(out / CURVES_FILE, (curves or LearningCurves()).to_csv()),
    }
    for name, path in paths.items():
        logger.info(f"Wrote {name}: {path} ({get_file_size(path)} bytes)")
    return paths


def write_table(report: RunReport, out_dir: Union[str, Path]) -> Path:
    """tables.md だけを書き直す"""
    out = ensure_writable_dir(out_dir)
    path = write_text_atomic(out / TABLE_FILE, _render_document([report], None))
    logger.info(f"Wrote table: {path} ({get_file_size(path)} bytes)")
    return path


def emit_comparison(
    results: Mapping[str, RunReport],
    out_dir: Union[str, Path],
    baseline: Optional[RunReport] = None,
) -> Path:
    """複数手法をまとめた tables.md"""
    out = ensure_writable_dir(out_dir)
    path = write_text_atomic(out / TABLE_FILE, _render_document(list(results.values()), baseline))
    logger.info(f"Wrote comparison table: {path} ({get_file_size(path)} bytes)")
    return path


def emit_aggregate(aggregate: AggregateReport, out_dir: Union[str, Path]) -> Path:
    out = ensure_writable_dir(out_dir)
    path = write_text_atomic(out / AGGREGATE_FILE, aggregate.model_dump_json(indent=2) + "\n")
    logger.info(f"Wrote aggregate over seeds {aggregate.seeds}: {path}")
    return path


def load_report(path: Union[str, Path]) -> RunReport:
    """report.json（またはそれを含むディレクトリ）を読み込む"""
    path = Path(path)
    if path.is_dir():
        path = path / REPORT_FILE
    if not path.is_file():
        raise MissingFile(path)
    try:
        return RunReport.model_validate_json(path.read_text(encoding="utf-8"))
    except ValidationError as e:
        raise MalformedRecord(path, 1, str(e.errors()[0]["msg"])) from None
