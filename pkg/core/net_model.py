# gridos/core/net_model.py
"""
网络模型
链路参数、带宽上界估计和最近节点选择

带宽估计采用 TCP 吞吐上界：
    BW < (MSS / RTT) * (1 / sqrt(PacketLoss))
上界直接作为带宽估计值使用。
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

from config import config
from .errors import EmptyCandidateSet, InvalidLinkMetrics, InvalidSpec, UnknownLink

logger = logging.getLogger(__name__)

PeerId = int

DEFAULT_MSS = config.get('network.mss', 1460)
LOSS_FLOOR = config.get('network.loss_floor', 1e-6)


@dataclass(frozen=True)
class LinkMetrics:
    """链路参数（对称）"""
    rtt: float            # 往返时延（秒）
    packet_loss: float    # 丢包率 [0, 1]
    mss: int = DEFAULT_MSS  # 最大报文段（字节）

    def __post_init__(self):
        if not (self.rtt > 0 and math.isfinite(self.rtt)):
            raise InvalidLinkMetrics(f"rtt 必须为正: {self.rtt}")
        if not self.mss > 0:
            raise InvalidLinkMetrics(f"mss 必须为正: {self.mss}")
        if not 0.0 <= self.packet_loss <= 1.0:
            raise InvalidLinkMetrics(f"丢包率越界: {self.packet_loss}")


def estimate_bandwidth(link: LinkMetrics, loss_floor: float = LOSS_FLOOR) -> float:
    """
    估计可用带宽（字节/秒）

    Args:
        link: 链路参数
        loss_floor: 丢包率下限，无丢包链路按该值计算

    Returns:
        带宽上界，作为估计值
    """
    loss = max(link.packet_loss, loss_floor)
    return (link.mss / link.rtt) * (1.0 / math.sqrt(loss))


def transfer_latency(link: LinkMetrics, size: int, loss_floor: float = LOSS_FLOOR) -> float:
    """单向传输时延：rtt/2 + size/带宽。控制消息 size 为 0"""
    latency = link.rtt / 2.0
    if size > 0:
        latency += size / estimate_bandwidth(link, loss_floor)
    return latency


def _pair(a: PeerId, b: PeerId) -> Tuple[PeerId, PeerId]:
    return (a, b) if a < b else (b, a)


@dataclass(frozen=True)
class NetworkTopology:
    """
    网络拓扑
    links 以无序节点对为键，每对不同节点都必须有链路参数
    """
    peers: Tuple[PeerId, ...]
    links: Mapping[Tuple[PeerId, PeerId], LinkMetrics]
    _bandwidth: Dict[Tuple[PeerId, PeerId], float] = field(
        init=False, repr=False, compare=False, default_factory=dict
    )
    _index: Dict[PeerId, int] = field(init=False, repr=False, compare=False, default_factory=dict)

    def __post_init__(self):
        peers = tuple(sorted(set(self.peers)))
        normalized = {}
        for (a, b), metrics in self.links.items():
            if a == b:
                raise InvalidSpec(f"自环链路: {a}")
            normalized[_pair(a, b)] = metrics
        for i, a in enumerate(peers):
            for b in peers[i + 1:]:
                if (a, b) not in normalized:
                    raise InvalidSpec(f"缺少链路参数: {a}-{b}")
        object.__setattr__(self, 'peers', peers)
        object.__setattr__(self, 'links', normalized)
        object.__setattr__(self, '_index', {p: i for i, p in enumerate(peers)})
        object.__setattr__(self, '_bandwidth', {
            key: estimate_bandwidth(metrics) for key, metrics in normalized.items()
        })

    @classmethod
    def uniform(cls, peers: Iterable[PeerId], metrics: LinkMetrics) -> 'NetworkTopology':
        """所有链路参数相同的拓扑"""
        peer_list = sorted(set(peers))
        links = {}
        for i, a in enumerate(peer_list):
            for b in peer_list[i + 1:]:
                links[(a, b)] = metrics
        return cls(peers=tuple(peer_list), links=links)

    def has_peer(self, peer: PeerId) -> bool:
        return peer in self._index

    def link(self, a: PeerId, b: PeerId) -> LinkMetrics:
        """获取链路参数"""
        try:
            return self.links[_pair(a, b)]
        except KeyError:
            raise UnknownLink(f"未知链路: {a}-{b}") from None

    def bandwidth(self, a: PeerId, b: PeerId) -> float:
        """两节点间的估计带宽（已缓存）"""
        try:
            return self._bandwidth[_pair(a, b)]
        except KeyError:
            raise UnknownLink(f"未知链路: {a}-{b}") from None

    def rtt(self, a: PeerId, b: PeerId) -> float:
        return self.link(a, b).rtt

    def latency(self, a: PeerId, b: PeerId, size: int = 0) -> float:
        """a 到 b 的消息时延，同节点为 0"""
        if a == b:
            return 0.0
        return transfer_latency(self.link(a, b), size)

    def bandwidth_matrix(self) -> Tuple[np.ndarray, Dict[PeerId, int]]:
        """
        带宽矩阵（对角线为 0）

        Returns:
            (矩阵, 节点 -> 行号)
        """
        index = dict(self._index)
        matrix = np.zeros((len(self.peers), len(self.peers)), dtype=float)
        for (a, b), bw in self._bandwidth.items():
            i, j = index[a], index[b]
            matrix[i, j] = bw
            matrix[j, i] = bw
        return matrix, index


class RankCriterion(Enum):
    """排序依据"""
    BY_RTT = "by_rtt"
    BY_BANDWIDTH = "by_bandwidth"


def nearest_peer(source: PeerId, candidates: Sequence[PeerId], topology: NetworkTopology) -> PeerId:
    """
    最近节点：估计带宽最大的候选者，带宽相同取 ID 最小者
    """
    if not candidates:
        raise EmptyCandidateSet(f"节点 {source} 的候选集为空")
    return max(candidates, key=lambda c: (topology.bandwidth(source, c), -c))


def rank_peers(source: PeerId, candidates: Sequence[PeerId], topology: NetworkTopology,
               criterion: RankCriterion = RankCriterion.BY_BANDWIDTH) -> List[PeerId]:
    """按 RTT 升序或带宽降序排列候选者，ID 作为稳定的平局规则"""
    if not candidates:
        raise EmptyCandidateSet(f"节点 {source} 的候选集为空")
    if criterion == RankCriterion.BY_RTT:
        return sorted(candidates, key=lambda c: (topology.rtt(source, c), c))
    return sorted(candidates, key=lambda c: (-topology.bandwidth(source, c), c))


@dataclass(frozen=True)
class TopologyGenSpec:
    """拓扑生成参数"""
    peers: int
    rtt_range: Tuple[float, float] = (0.005, 0.2)
    loss_range: Tuple[float, float] = (0.005, 0.05)
    mss: int = DEFAULT_MSS
    model: str = "geometric"   # geometric | uniform

    MODELS = ("geometric", "uniform")

    def validate(self) -> None:
        """校验参数，非法时抛出 InvalidSpec"""
        if self.peers < 1:
            raise InvalidSpec(f"节点数必须 >= 1: {self.peers}")
        rtt_lo, rtt_hi = self.rtt_range
        loss_lo, loss_hi = self.loss_range
        if rtt_lo <= 0 or rtt_hi < rtt_lo:
            raise InvalidSpec(f"rtt 区间不合法: {self.rtt_range}")
        if loss_lo < 0 or loss_hi > 1 or loss_hi < loss_lo:
            raise InvalidSpec(f"丢包率区间不合法: {self.loss_range}")
        if self.mss <= 0:
            raise InvalidSpec(f"mss 必须为正: {self.mss}")
        if self.model not in self.MODELS:
            raise InvalidSpec(f"未知拓扑模型: {self.model}")


def generate_topology(spec: TopologyGenSpec, seed: int) -> NetworkTopology:
    """
    生成随机拓扑，相同 (spec, seed) 得到相同结果

    geometric 模型：节点随机落在单位正方形内，RTT 随距离线性增长，
    丢包率一半与距离相关、一半为噪声。
    uniform 模型：RTT 和丢包率独立均匀分布。
    """
    spec.validate()
    rng = np.random.default_rng(seed)
    rtt_lo, rtt_hi = spec.rtt_range
    loss_lo, loss_hi = spec.loss_range
    peers = list(range(1, spec.peers + 1))

    positions = rng.random((spec.peers, 2)) if spec.model == "geometric" else None
    max_dist = math.sqrt(2.0)

    links = {}
    for i, a in enumerate(peers):
        for j in range(i + 1, len(peers)):
            b = peers[j]
            noise = float(rng.random())
            if positions is not None:
                dist = float(np.linalg.norm(positions[i] - positions[j])) / max_dist
                rtt = rtt_lo + (rtt_hi - rtt_lo) * dist
                loss = loss_lo + (loss_hi - loss_lo) * (0.5 * dist + 0.5 * noise)
            else:
                rtt = rtt_lo + (rtt_hi - rtt_lo) * float(rng.random())
                loss = loss_lo + (loss_hi - loss_lo) * noise
            links[(a, b)] = LinkMetrics(rtt=rtt, packet_loss=loss, mss=spec.mss)

    logger.debug(f"生成拓扑: {spec.peers} 个节点, 模型 {spec.model}, 种子 {seed}")
    return NetworkTopology(peers=tuple(peers), links=links)
