# gridos/tests/conftest.py
"""
共享测试夹具
"""
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent.parent))

from core.net_model import LinkMetrics, NetworkTopology  # noqa: E402

# 源节点 0 到节点 1..6 的链路：(rtt, 丢包率)
FIG_LINKS = {
    1: (0.060, 0.0025),
    2: (0.030, 0.0225),
    3: (0.050, 0.0144),
    4: (0.020, 0.0025),
    5: (0.040, 0.0100),
    6: (0.010, 0.0400),
}

FAR = LinkMetrics(rtt=0.200, packet_loss=0.05)
NEAR = LinkMetrics(rtt=0.005, packet_loss=0.001)


def star_topology() -> NetworkTopology:
    """节点 0 为源的六邻居拓扑；邻居之间使用远链路"""
    peers = [0] + sorted(FIG_LINKS)
    links = {}
    for i, a in enumerate(peers):
        for b in peers[i + 1:]:
            if a == 0:
                rtt, loss = FIG_LINKS[b]
                links[(a, b)] = LinkMetrics(rtt=rtt, packet_loss=loss, mss=1460)
            else:
                links[(a, b)] = FAR
    return NetworkTopology(peers=tuple(peers), links=links)


def cluster_topology(clusters, near: LinkMetrics = NEAR, far: LinkMetrics = FAR) -> NetworkTopology:
    """簇内链路近、簇间链路远的拓扑"""
    where = {p: i for i, group in enumerate(clusters) for p in group}
    peers = sorted(where)
    links = {}
    for i, a in enumerate(peers):
        for b in peers[i + 1:]:
            links[(a, b)] = near if where[a] == where[b] else far
    return NetworkTopology(peers=tuple(peers), links=links)


def scenario_dict(**overrides):
    """最小可用场景，按需覆盖字段"""
    data = {
        'format': 'gridos-scenario',
        'version': 1,
        'name': 'test',
        'seed': 1,
        'duration': 20.0,
        'tick_length': 1.0,
        'propagation_interval': 1.0,
        'lim': 4,
        'topology': {'peers': [1, 2, 3, 4], 'default_link': {'rtt': 0.02, 'loss': 0.01}},
    }
    data.update(overrides)
    return data


@pytest.fixture
def star():
    return star_topology()


@pytest.fixture
def two_clusters():
    return cluster_topology([[1, 2, 3], [4, 5, 6]])


@pytest.fixture
def uniform4():
    return NetworkTopology.uniform([1, 2, 3, 4], LinkMetrics(rtt=0.02, packet_loss=0.01))
