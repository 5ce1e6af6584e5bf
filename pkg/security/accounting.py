# gridos/security/accounting.py
"""
用量记账、违规检测、审计日志和违规处理
"""
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, Iterator, List, Mapping, Optional, Tuple, Union

from core.errors import DuplicateUsageRecord
from core.events import EventKind, GridEvent
from core.resources import ResourceUsage, ZERO_USAGE
from .policy import ResourceAxis, SharingPolicy, ViolationAction

logger = logging.getLogger(__name__)

ThreadKey = str


@dataclass(frozen=True)
class UsageRecord:
    """单个线程在一个记账 tick 内的用量"""
    node: int
    thread: ThreadKey
    usage: ResourceUsage
    tick: int

    def to_record(self) -> Dict[str, Any]:
        return {'type': 'usage', 'node': self.node, 'thread': self.thread, 'tick': self.tick,
                'cpu': self.usage.cpu, 'mem': self.usage.mem, 'storage': self.usage.storage}


@dataclass(frozen=True)
class ViolationEvent:
    """违规：本 tick 外来用量合计超过策略上限"""
    node: int
    thread: ThreadKey
    tick: int
    axes: Tuple[str, ...]
    totals: ResourceUsage
    limits: Tuple[float, float, float]
    action: ViolationAction

    def to_record(self) -> Dict[str, Any]:
        return {'type': 'violation', 'node': self.node, 'thread': self.thread, 'tick': self.tick,
                'axes': list(self.axes), 'totals': list(self.totals.as_tuple()),
                'limits': list(self.limits), 'action': self.action.value}


@dataclass(frozen=True)
class AccessDeniedRecord:
    """受保护内存访问被拒"""
    host: int
    accessor: str
    region_owner: ThreadKey
    time: float

    def to_record(self) -> Dict[str, Any]:
        return {'type': 'access_denied', 'host': self.host, 'accessor': self.accessor,
                'owner': self.region_owner, 'time': self.time}


AuditEntry = Union[UsageRecord, ViolationEvent, AccessDeniedRecord]


class UsageAccountant:
    """实时记账：每个节点、每个线程的累计外来用量"""

    def __init__(self):
        self.by_node: Dict[int, ResourceUsage] = defaultdict(lambda: ZERO_USAGE)
        self.by_thread: Dict[ThreadKey, ResourceUsage] = defaultdict(lambda: ZERO_USAGE)
        self.records = 0

    def add(self, record: UsageRecord) -> None:
        self.by_node[record.node] = self.by_node[record.node] + record.usage
        self.by_thread[record.thread] = self.by_thread[record.thread] + record.usage
        self.records += 1

    def totals(self) -> Dict[str, Any]:
        """可比较的累计值"""
        return {
            'nodes': {n: u.as_tuple() for n, u in sorted(self.by_node.items())},
            'threads': {t: u.as_tuple() for t, u in sorted(self.by_thread.items())},
            'records': self.records,
        }


class AuditLog:
    """
    审计日志（只追加）
    同时维护 (节点, tick) 的外来用量合计索引，用于违规检测
    """

    def __init__(self):
        self._entries: List[AuditEntry] = []
        self._tick_totals: Dict[Tuple[int, int], ResourceUsage] = {}
        self._seen: set = set()

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[AuditEntry]:
        return iter(self._entries)

    @property
    def entries(self) -> Tuple[AuditEntry, ...]:
        return tuple(self._entries)

    def append_usage(self, record: UsageRecord) -> ResourceUsage:
        """追加用量记录，返回该节点本 tick 的外来用量合计"""
        key = (record.node, record.thread, record.tick)
        if key in self._seen:
            raise DuplicateUsageRecord(
                f"重复记账: 节点 {record.node}, 线程 {record.thread}, tick {record.tick}"
            )
        self._seen.add(key)
        self._entries.append(record)
        tick_key = (record.node, record.tick)
        total = self._tick_totals.get(tick_key, ZERO_USAGE) + record.usage
        self._tick_totals[tick_key] = total
        return total

    def append_violation(self, violation: ViolationEvent) -> None:
        self._entries.append(violation)

    def append_access_denied(self, record: AccessDeniedRecord) -> None:
        self._entries.append(record)

    def tick_total(self, node: int, tick: int) -> ResourceUsage:
        return self._tick_totals.get((node, tick), ZERO_USAGE)

    def of_type(self, entry_type: type) -> List[AuditEntry]:
        return [e for e in self._entries if isinstance(e, entry_type)]

    def replay(self) -> UsageAccountant:
        """按顺序重放用量记录，重建累计用量"""
        accountant = UsageAccountant()
        for entry in self._entries:
            if isinstance(entry, UsageRecord):
                accountant.add(entry)
        return accountant

    def serialize(self) -> str:
        """NDJSON 导出"""
        lines = [json.dumps(e.to_record(), ensure_ascii=False, separators=(',', ':'))
                 for e in self._entries]
        return '\n'.join(lines) + ('\n' if lines else '')


def record_usage(node: int, thread: ThreadKey, usage: ResourceUsage, policy: SharingPolicy,
                 log: AuditLog, tick: int, cpu_capacity: float,
                 accountant: Optional[UsageAccountant] = None) -> Optional[ViolationEvent]:
    """
    记录一个线程在 tick 内的用量
    按追加后的节点本 tick 合计判定：合计在某个轴上超过上限且该线程在此轴上有用量时，
    在同一 tick 追加一条违规事件（一条事件列出所有超限的轴）。
    同一 tick 有多个外来线程时使用 account_tick

    Raises:
        DuplicateUsageRecord: 同一 (节点, 线程, tick) 重复记账
    """
    record = UsageRecord(node=node, thread=thread, usage=usage, tick=tick)
    total = log.append_usage(record)
    if accountant is not None:
        accountant.add(record)

    violation = _check(node, thread, usage, total, policy, tick, cpu_capacity)
    if violation is not None:
        log.append_violation(violation)
    return violation


def account_tick(node: int, usages: Mapping[ThreadKey, ResourceUsage], policy: SharingPolicy,
                 log: AuditLog, tick: int, cpu_capacity: float,
                 accountant: Optional[UsageAccountant] = None) -> List[ViolationEvent]:
    """
    一次记下节点在 tick 内所有外来线程的用量，再按整个 tick 的合计判定违规

    超限轴上有用量的每个线程各得一条违规事件，结果与记账顺序无关；
    用量和违规都按线程键排序写入审计日志

    Raises:
        DuplicateUsageRecord: 同一 (节点, 线程, tick) 重复记账
    """
    for thread in sorted(usages):
        record = UsageRecord(node=node, thread=thread, usage=usages[thread], tick=tick)
        log.append_usage(record)
        if accountant is not None:
            accountant.add(record)

    total = log.tick_total(node, tick)
    violations = []
    for thread in sorted(usages):
        violation = _check(node, thread, usages[thread], total, policy, tick, cpu_capacity)
        if violation is not None:
            log.append_violation(violation)
            violations.append(violation)
    return violations


def _check(node: int, thread: ThreadKey, usage: ResourceUsage, total: ResourceUsage,
           policy: SharingPolicy, tick: int, cpu_capacity: float) -> Optional[ViolationEvent]:
    used = dict(zip(ResourceAxis, usage.as_tuple()))
    totals = dict(zip(ResourceAxis, total.as_tuple()))
    limits = {axis: policy.limit(axis, cpu_capacity) for axis in ResourceAxis}
    axes = tuple(
        axis.value for axis in ResourceAxis
        if totals[axis] > limits[axis] and used[axis] > 0
    )
    if not axes:
        return None
    logger.debug(f"节点 {node} tick {tick} 线程 {thread} 超出配额: {', '.join(axes)}")
    return ViolationEvent(
        node=node, thread=thread, tick=tick, axes=axes, totals=total,
        limits=tuple(limits[axis] for axis in ResourceAxis),
        action=policy.on_violation,
    )


def throttle_cap(violation: ViolationEvent) -> float:
    """限速比例：使各超限轴回到上限以内的最小缩放系数"""
    caps = []
    for axis, total, limit in zip(ResourceAxis, violation.totals.as_tuple(), violation.limits):
        if axis.value in violation.axes and total > 0:
            caps.append(limit / total)
    return max(0.0, min(caps)) if caps else 1.0


def enforce(violation: ViolationEvent, policy: SharingPolicy, now: float,
            tick_length: float = 1.0, origin: Optional[int] = None,
            job: Optional[str] = None) -> List[GridEvent]:
    """
    违规处理
    Throttle：线程阻塞一个 tick 后按上限比例恢复（ThreadResumed 的时间为 now + tick_length）
    Terminate：终止线程并通知作业的发起节点
    """
    base = {'thread': violation.thread, 'node': violation.node, 'tick': violation.tick,
            'axes': list(violation.axes)}
    if policy.on_violation == ViolationAction.THROTTLE:
        until = now + tick_length
        cap = throttle_cap(violation)
        return [
            GridEvent(EventKind.THREAD_THROTTLED, now, {**base, 'until': until, 'cap': cap}),
            GridEvent(EventKind.THREAD_RESUMED, until, {**base, 'cap': cap}),
        ]

    logger.info(f"终止节点 {violation.node} 上违规的线程 {violation.thread}")
    return [
        GridEvent(EventKind.THREAD_TERMINATED, now, dict(base)),
        GridEvent(EventKind.JOB_NOTIFIED, now, {
            'thread': violation.thread, 'origin': origin, 'job': job,
            'node': violation.node, 'reason': 'terminated',
        }),
    ]
