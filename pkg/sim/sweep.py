# gridos/sim/sweep.py
"""
多种子批量运行
每个种子一个独立的仿真器实例，结果按种子排序汇总
"""
import logging
import re
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

from config import config
from core.errors import EmitError
from .emit import emit, metrics_csv
from .engine import GridSimulator
from .metrics import METRICS_COLUMNS, MetricsReport
from .scenario_parser import Scenario

logger = logging.getLogger(__name__)

_RANGE = re.compile(r'^\s*(\d+)\s*\.\.\s*(\d+)\s*$')


def parse_seed_range(text: str) -> List[int]:
    """
    解析种子范围 "A..B"（闭区间）或逗号分隔的列表

    Raises:
        ValueError: 格式错误或范围为空
    """
    match = _RANGE.match(text)
    if match:
        start, end = int(match.group(1)), int(match.group(2))
        if end < start:
            raise ValueError(f"种子范围为空: {text}")
        return list(range(start, end + 1))
    try:
        seeds = [int(part) for part in text.split(',') if part.strip()]
    except ValueError:
        raise ValueError(f"无法解析种子: {text!r}") from None
    if not seeds:
        raise ValueError(f"无法解析种子: {text!r}")
    return seeds


def run_seed(scenario: Scenario, seed: int, out_dir: Optional[Path] = None,
             check_invariants: Optional[bool] = None) -> MetricsReport:
    sim = GridSimulator(scenario, seed=seed, check_invariants=check_invariants)
    trace, report = sim.run()
    if out_dir is not None:
        emit(trace, report, out_dir / f"seed-{seed}")
    return report


def run_sweep(scenario: Scenario, seeds: Sequence[int], out_dir: Optional[Path] = None,
              workers: Optional[int] = None,
              check_invariants: Optional[bool] = None) -> List[Tuple[int, MetricsReport]]:
    """
    对每个种子运行一次场景

    Args:
        out_dir: 给定时每个种子写入 seed-<n>/，并写出汇总 sweep.csv
        workers: 并行线程数，默认取配置
    """
    workers = workers or config.get('simulation.sweep_workers', 4)
    seeds = sorted(set(seeds))
    logger.info(f"批量运行 {len(seeds)} 个种子 ({workers} 个线程)")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        reports = list(pool.map(lambda s: run_seed(scenario, s, out_dir, check_invariants), seeds))
    results = list(zip(seeds, reports))
    if out_dir is not None:
        write_sweep_csv(results, Path(out_dir) / 'sweep.csv')
    return results


def write_sweep_csv(results: Sequence[Tuple[int, MetricsReport]], path: Path) -> None:
    """每个种子一行的汇总表"""
    lines = []
    for i, (seed, report) in enumerate(results):
        text = metrics_csv(report, extra={'seed': seed})
        rows = text.splitlines()
        lines.extend(rows if i == 0 else rows[1:])
    if not results:
        lines.append(','.join(('seed',) + METRICS_COLUMNS))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'w', encoding='utf-8', newline='') as f:
            f.write('\n'.join(lines) + '\n')
    except OSError as e:
        raise EmitError(f"写入汇总失败 {path}: {e}") from e
