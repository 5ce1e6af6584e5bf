# gridos/sim/partitions.py
"""
划分质量评估
比较发现服务形成的子网格与同样大小的随机划分的组内平均带宽
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Sequence, Union

import numpy as np

from core.errors import TooFewSubGrids
from core.events import EventKind, EventTrace
from core.net_model import NetworkTopology

logger = logging.getLogger(__name__)

Groups = List[List[int]]


@dataclass
class PartitionComparison:
    """形成的划分 vs 随机划分"""
    formed_mean: float
    random_mean: float
    win_fraction: float             # formed_mean >= 单次随机划分均值的试验比例
    trials: int
    sizes: List[int] = field(default_factory=list)

    @property
    def formed_wins(self) -> bool:
        return self.formed_mean >= self.random_mean

    def to_dict(self) -> Dict[str, Any]:
        return {
            'formed_mean': self.formed_mean,
            'random_mean': self.random_mean,
            'win_fraction': self.win_fraction,
            'trials': self.trials,
            'sizes': list(self.sizes),
        }


def partition_from_trace(trace: Union[EventTrace, Iterable[Dict[str, Any]]]) -> Groups:
    """取轨迹中最后一个 RunCompleted 记录的子网格成员"""
    records = trace.to_records() if isinstance(trace, EventTrace) else list(trace)
    final = None
    for record in records:
        if record['kind'] == EventKind.RUN_COMPLETED.value:
            final = record
    if final is None:
        raise TooFewSubGrids("轨迹中没有 RunCompleted 记录")
    return [sorted(sg['members']) for sg in final['subgrids']]


def mean_intra_bandwidth(groups: Sequence[Sequence[int]], matrix: np.ndarray,
                         index: Dict[int, int]) -> float:
    """所有组内节点对带宽的均值；没有节点对时为 0"""
    values = []
    for group in groups:
        if len(group) < 2:
            continue
        idx = [index[p] for p in group]
        sub = matrix[np.ix_(idx, idx)]
        values.append(sub[np.triu_indices(len(idx), k=1)])
    if not values:
        return 0.0
    return float(np.concatenate(values).mean())


def random_partition(peers: Sequence[int], sizes: Sequence[int],
                     rng: np.random.Generator) -> Groups:
    """把节点随机打乱后按给定大小切分"""
    shuffled = [int(p) for p in rng.permutation(np.asarray(peers))]
    groups, start = [], 0
    for size in sizes:
        groups.append(shuffled[start:start + size])
        start += size
    return groups


def compare_groups(groups: Groups, topology: NetworkTopology, seed: int,
                   trials: int = 20) -> PartitionComparison:
    """
    与 trials 次同样大小的随机划分比较

    Raises:
        TooFewSubGrids: 少于两个子网格时没有可比性
    """
    groups = [g for g in groups if g]
    if len(groups) < 2:
        raise TooFewSubGrids(f"只有 {len(groups)} 个子网格")
    if trials < 1:
        raise ValueError(f"trials 必须 >= 1: {trials}")

    matrix, index = topology.bandwidth_matrix()
    formed = mean_intra_bandwidth(groups, matrix, index)
    peers = sorted(p for g in groups for p in g)
    sizes = [len(g) for g in groups]
    rng = np.random.default_rng(seed)
    means = np.array([mean_intra_bandwidth(random_partition(peers, sizes, rng), matrix, index)
                      for _ in range(trials)])
    comparison = PartitionComparison(
        formed_mean=formed,
        random_mean=float(means.mean()),
        win_fraction=float(np.mean(formed >= means)),
        trials=trials,
        sizes=sizes,
    )
    logger.debug(f"划分评估: formed={formed:.1f}, random={comparison.random_mean:.1f}, "
                 f"win={comparison.win_fraction:.2f}")
    return comparison


def compare_partitions(trace: Union[EventTrace, Iterable[Dict[str, Any]]],
                       topology: NetworkTopology, seed: int,
                       trials: int = 20) -> PartitionComparison:
    """评估轨迹最终状态的划分"""
    return compare_groups(partition_from_trace(trace), topology, seed, trials)
