# gridos/core/broker.py
"""
资源代理与调度
根据提交节点的资源视图筛选合格机器，并按打分选择最优机器
"""
import logging
from dataclasses import dataclass
from typing import Any, Callable, Dict, FrozenSet, Iterable, List, Optional, Tuple

from config import config
from security.policy import AdmissionDecision, check_admission
from .discovery import OverlayState, resource_view
from .errors import NoEligibleMachine
from .events import EventKind, GridEvent
from .net_model import NetworkTopology, PeerId
from .resources import JobRequirements, ResourceAdvertisement

logger = logging.getLogger(__name__)

AdmissionCheck = Callable[[JobRequirements, ResourceAdvertisement], AdmissionDecision]


@dataclass(frozen=True)
class BrokerWeights:
    """打分权重"""
    cpu: float = 0.4
    mem: float = 0.2
    load: float = 0.1
    bandwidth: float = 0.3
    t_ref: float = 1.0      # 带宽归一化参考时间（秒）

    def __post_init__(self):
        if min(self.cpu, self.mem, self.load, self.bandwidth) < 0:
            raise ValueError(f"权重不能为负: {self}")
        if self.t_ref <= 0:
            raise ValueError(f"t_ref 必须为正: {self.t_ref}")

    @classmethod
    def from_config(cls) -> 'BrokerWeights':
        weights = config.get('broker.weights', {}) or {}
        return cls.from_dict({**weights, 't_ref': config.get('broker.t_ref', 1.0)})

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'BrokerWeights':
        defaults = cls()
        return cls(
            cpu=float(data.get('cpu', defaults.cpu)),
            mem=float(data.get('mem', defaults.mem)),
            load=float(data.get('load', defaults.load)),
            bandwidth=float(data.get('bandwidth', defaults.bandwidth)),
            t_ref=float(data.get('t_ref', defaults.t_ref)),
        )

    def to_dict(self) -> Dict[str, float]:
        return {'cpu': self.cpu, 'mem': self.mem, 'load': self.load,
                'bandwidth': self.bandwidth, 't_ref': self.t_ref}


DEFAULT_WEIGHTS = BrokerWeights.from_config()


@dataclass(frozen=True)
class JobDescriptor:
    """提交给代理的作业"""
    id: str
    submitter: PeerId
    requirements: JobRequirements
    threads: Tuple[str, ...] = ()


@dataclass(frozen=True)
class ScheduleDecision:
    """调度决定"""
    job: str
    submitter: PeerId
    chosen: PeerId
    score: float
    eligible_count: int
    decided_at: float = 0.0

    @property
    def is_local(self) -> bool:
        return self.chosen == self.submitter


def policy_admits(req: JobRequirements, adv: ResourceAdvertisement) -> AdmissionDecision:
    """按广告中附带的共享策略做准入检查；无策略视为完全共享"""
    if adv.share_limits is None:
        return AdmissionDecision(True)
    return check_admission(req, adv.share_limits, adv.host_usage())


def meets_minimum(req: JobRequirements, adv: ResourceAdvertisement) -> bool:
    return (adv.cpu_available >= req.min_cpu
            and adv.mem_available >= req.min_mem
            and adv.storage_available >= req.min_storage)


def filter_eligible(req: JobRequirements, view: Iterable[ResourceAdvertisement], submitter: PeerId,
                    admission: AdmissionCheck = policy_admits) -> FrozenSet[PeerId]:
    """
    合格机器：满足全部最低需求且共享策略允许接收的节点
    提交节点本身满足条件时同样包括在内
    """
    return frozenset(
        adv.origin for adv in view
        if meets_minimum(req, adv) and admission(req, adv)
    )


def _ratio(available: float, total: float) -> float:
    return available / total if total > 0 else 0.0


def score(req: JobRequirements, adv: ResourceAdvertisement, bw: float,
          weights: BrokerWeights = DEFAULT_WEIGHTS, is_self: bool = False) -> float:
    """
    机器得分，越高越好
        cpu·(cpu_available/cpu_capacity) + mem·(mem_available/mem_total)
        + load·(1 − load) + bandwidth·min(1, bw / (data_size / t_ref))
    本节点或无需传输数据时带宽项取 1
    """
    if is_self or req.data_size <= 0:
        bw_term = 1.0
    else:
        bw_term = min(1.0, bw / (req.data_size / weights.t_ref))
    return (weights.cpu * _ratio(adv.cpu_available, adv.cpu_capacity)
            + weights.mem * _ratio(adv.mem_available, adv.mem_total)
            + weights.load * (1.0 - adv.load)
            + weights.bandwidth * bw_term)


def select_optimum(req: JobRequirements, view: Iterable[ResourceAdvertisement], submitter: PeerId,
                   topology: NetworkTopology, weights: BrokerWeights = DEFAULT_WEIGHTS,
                   now: float = 0.0, job: str = "",
                   admission: AdmissionCheck = policy_admits) -> ScheduleDecision:
    """
    在合格机器中选择得分最高者，平局取 ID 最小者

    Raises:
        NoEligibleMachine: 包括本地在内都无法放置
    """
    by_origin = {adv.origin: adv for adv in view}
    eligible = filter_eligible(req, by_origin.values(), submitter, admission)
    if not eligible:
        raise NoEligibleMachine(f"作业 {job or '?'} 没有合格机器 (提交节点 {submitter})")

    best: Optional[Tuple[float, PeerId]] = None
    for origin in sorted(eligible):
        is_self = origin == submitter
        bw = 0.0 if is_self else topology.bandwidth(submitter, origin)
        value = score(req, by_origin[origin], bw, weights, is_self=is_self)
        if best is None or value > best[0]:
            best = (value, origin)

    value, chosen = best
    return ScheduleDecision(job=job, submitter=submitter, chosen=chosen, score=value,
                            eligible_count=len(eligible), decided_at=now)


def schedule_job(job: JobDescriptor, state: OverlayState, topology: NetworkTopology,
                 weights: BrokerWeights = DEFAULT_WEIGHTS,
                 now: float = 0.0) -> Tuple[ScheduleDecision, List[GridEvent]]:
    """
    基于提交节点当前（可能过期的）视图做调度
    选中远程节点时为作业的每个线程产生一个迁移请求
    """
    view = resource_view(state, job.submitter)
    decision = select_optimum(job.requirements, view, job.submitter, topology, weights,
                              now=now, job=job.id)
    events = [GridEvent(EventKind.JOB_SCHEDULED, now, {
        'job': job.id,
        'submitter': job.submitter,
        'chosen': decision.chosen,
        'score': decision.score,
        'eligible': decision.eligible_count,
    })]
    if not decision.is_local:
        for thread in job.threads:
            events.append(GridEvent(EventKind.MIGRATION_REQUESTED, now, {
                'job': job.id, 'thread': thread, 'src': job.submitter, 'dest': decision.chosen,
            }))
    logger.debug(f"作业 {job.id} 调度到节点 {decision.chosen} "
                 f"(得分 {decision.score:.4f}, 合格 {decision.eligible_count})")
    return decision, events
