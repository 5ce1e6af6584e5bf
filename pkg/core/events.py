# gridos/core/events.py
"""
事件记录
所有子系统产生的事件统一为 GridEvent，由 EventTrace 按 (time, seq) 全序记录
"""
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, Iterable, Iterator, List


class EventKind(Enum):
    """事件类型"""
    # 发现服务
    PEER_JOINED = "PeerJoined"
    ROOT_GRID_CREATED = "RootGridCreated"
    SUBGRID_CREATED = "SubGridCreated"
    SUBGRID_ANNOUNCED = "SubGridAnnounced"
    SUBGRID_DISSOLVED = "SubGridDissolved"
    PEER_MOVED = "PeerMoved"
    PEER_LEFT = "PeerLeft"
    MASTER_ELECTED = "MasterElected"
    MASTER_FAILED = "MasterFailed"
    RESOURCE_REGISTERED = "ResourceRegistered"
    INFO_PROPAGATED = "InfoPropagated"

    # 资源代理
    JOB_SUBMITTED = "JobSubmitted"
    JOB_SCHEDULED = "JobScheduled"
    JOB_REJECTED = "JobRejected"
    MIGRATION_REQUESTED = "MigrationRequested"

    # 线程迁移与调用转发
    THREAD_SPAWNED = "ThreadSpawned"
    MIGRATION_STARTED = "MigrationStarted"
    MIGRATION_COMPLETED = "MigrationCompleted"
    MIGRATION_FAILED = "MigrationFailed"
    LOCATION_UPDATED = "LocationUpdated"
    CALL_FORWARDED = "CallForwarded"
    CALL_REDIRECTED = "CallRedirected"
    CALL_HELD = "CallHeld"
    CALL_EXECUTED = "CallExecuted"
    CALL_RETURNED = "CallReturned"
    CALL_DUPLICATE_DROPPED = "CallDuplicateDropped"
    CALLEE_UNREACHABLE = "CalleeUnreachable"
    THREAD_LOST = "ThreadLost"
    PROCESS_QUIESCENT = "ProcessQuiescent"
    RESULT_RETURNED = "ResultReturned"
    JOB_COMPLETED = "JobCompleted"

    # 安全
    USAGE_RECORDED = "UsageRecorded"
    USAGE_VIOLATION = "UsageViolation"
    THREAD_THROTTLED = "ThreadThrottled"
    THREAD_RESUMED = "ThreadResumed"
    THREAD_TERMINATED = "ThreadTerminated"
    JOB_NOTIFIED = "JobNotified"
    ACCESS_DENIED = "AccessDenied"

    # 仿真
    PEER_FAILURE = "PeerFailure"
    MESSAGE_DROPPED = "MessageDropped"
    OPERATION_FAILED = "OperationFailed"
    PARTITION_ASSESSED = "PartitionAssessed"
    RUN_COMPLETED = "RunCompleted"


# 审计日志导出时包含的事件
AUDIT_KINDS = frozenset({
    EventKind.USAGE_RECORDED,
    EventKind.USAGE_VIOLATION,
    EventKind.ACCESS_DENIED,
})


@dataclass
class GridEvent:
    """
    事件记录
    payload 只允许 JSON 原生类型（str/int/float/bool/None/list/dict[str, ...]）
    """
    kind: EventKind
    time: float
    payload: Dict[str, Any] = field(default_factory=dict)
    seq: int = -1

    def to_record(self) -> Dict[str, Any]:
        """转换为可序列化的记录，字段顺序固定"""
        record = {'seq': self.seq, 'time': self.time, 'kind': self.kind.value}
        for key in sorted(self.payload):
            record[key] = self.payload[key]
        return record

    @classmethod
    def from_record(cls, record: Dict[str, Any]) -> 'GridEvent':
        payload = {k: v for k, v in record.items() if k not in ('seq', 'time', 'kind')}
        return cls(kind=EventKind(record['kind']), time=record['time'],
                   payload=payload, seq=record['seq'])


def encode_record(record: Dict[str, Any]) -> str:
    """单行 JSON，键顺序与分隔符固定，保证字节级确定性"""
    return json.dumps(record, ensure_ascii=False, separators=(',', ':'))


class EventTrace:
    """
    事件轨迹
    append 时分配序号；要求时间单调不减
    """

    def __init__(self):
        self.events: List[GridEvent] = []
        self._next_seq = 0

    def append(self, event: GridEvent) -> GridEvent:
        """追加事件并分配序号"""
        if self.events and event.time < self.events[-1].time:
            raise ValueError(
                f"事件时间倒退: {event.kind.value} @ {event.time} < {self.events[-1].time}"
            )
        event.seq = self._next_seq
        self._next_seq += 1
        self.events.append(event)
        return event

    def extend(self, events: Iterable[GridEvent]) -> None:
        for event in events:
            self.append(event)

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[GridEvent]:
        return iter(self.events)

    def of_kind(self, *kinds: EventKind) -> List[GridEvent]:
        """按类型筛选"""
        wanted = set(kinds)
        return [e for e in self.events if e.kind in wanted]

    def to_records(self) -> List[Dict[str, Any]]:
        """
        转换为记录列表
        经过一次 JSON 往返，与从文件解析得到的记录完全一致
        """
        return [json.loads(line) for line in self.to_lines()]

    def to_lines(self) -> List[str]:
        return [encode_record(e.to_record()) for e in self.events]

    def serialize(self) -> str:
        """NDJSON 文本"""
        lines = self.to_lines()
        return '\n'.join(lines) + ('\n' if lines else '')

    @classmethod
    def parse(cls, text: str) -> 'EventTrace':
        """从 NDJSON 文本恢复轨迹"""
        trace = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            event = GridEvent.from_record(json.loads(line))
            trace.events.append(event)
            trace._next_seq = event.seq + 1
        return trace
