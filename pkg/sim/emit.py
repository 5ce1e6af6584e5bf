# gridos/sim/emit.py
"""
结果输出
trace.ndjson / metrics.csv / summary.txt / audit.ndjson
"""
import csv
import io
import logging
from pathlib import Path
from typing import Dict, Iterable, Optional

from config import config
from core.errors import EmitError
from core.events import AUDIT_KINDS, EventTrace, encode_record
from .metrics import METRICS_COLUMNS, MetricsReport

logger = logging.getLogger(__name__)

OUTPUT_FILES = {
    'trace': 'trace.ndjson',
    'metrics': 'metrics.csv',
    'summary': 'summary.txt',
    'audit': 'audit.ndjson',
}


def metrics_csv(report: MetricsReport, extra: Optional[Dict[str, object]] = None) -> str:
    """单行指标 CSV（带表头）"""
    extra = extra or {}
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator='\n')
    writer.writerow(list(extra) + list(METRICS_COLUMNS))
    writer.writerow(list(extra.values()) + report.csv_row())
    return buffer.getvalue()


def audit_lines(trace: EventTrace) -> str:
    """审计相关事件的 NDJSON"""
    lines = [encode_record(r) for r in trace.to_records() if r['kind'] in
             {k.value for k in AUDIT_KINDS}]
    return '\n'.join(lines) + ('\n' if lines else '')


def _write(path: Path, text: str) -> None:
    with open(path, 'w', encoding='utf-8', newline='') as f:
        f.write(text)


def emit(trace: EventTrace, report: MetricsReport, out_dir: Optional[Path] = None,
         formats: Optional[Iterable[str]] = None) -> Dict[str, Path]:
    """
    把一次运行的结果写入 out_dir

    Returns:
        格式 -> 文件路径

    Raises:
        EmitError: 未知格式或写入失败
    """
    out_dir = Path(out_dir) if out_dir is not None else config.get_path('runs')
    formats = list(formats) if formats is not None else config.get('output.formats', list(OUTPUT_FILES))
    unknown = [f for f in formats if f not in OUTPUT_FILES]
    if unknown:
        raise EmitError(f"未知输出格式: {', '.join(unknown)}")

    renderers = {
        'trace': trace.serialize,
        'metrics': lambda: metrics_csv(report),
        'summary': report.summary,
        'audit': lambda: audit_lines(trace),
    }
    written: Dict[str, Path] = {}
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for fmt in formats:
            path = out_dir / OUTPUT_FILES[fmt]
            _write(path, renderers[fmt]())
            written[fmt] = path
    except OSError as e:
        raise EmitError(f"写入结果失败 {out_dir}: {e}") from e
    logger.info(f"结果已写入 {out_dir}: {', '.join(sorted(written))}")
    return written
