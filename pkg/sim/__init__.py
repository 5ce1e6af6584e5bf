# gridos/sim/__init__.py
"""
仿真模块
场景解析、仿真引擎、指标和结果输出
"""
from .scenario_parser import Scenario, ScenarioParser, load_scenario
from .engine import GridSimulator, SimState, run
from .metrics import METRICS_COLUMNS, MetricsReport
from .partitions import PartitionComparison, compare_groups, compare_partitions
from .emit import emit
from .sweep import parse_seed_range, run_sweep

__all__ = [
    'Scenario',
    'ScenarioParser',
    'load_scenario',
    'GridSimulator',
    'SimState',
    'run',
    'METRICS_COLUMNS',
    'MetricsReport',
    'PartitionComparison',
    'compare_groups',
    'compare_partitions',
    'emit',
    'parse_seed_range',
    'run_sweep',
]
