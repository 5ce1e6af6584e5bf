# gridos/sim/metrics.py
"""
运行指标
指标只从事件记录计算，因此实时运行和重放轨迹得到相同的结果
"""
import logging
from collections import Counter
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, Iterable, List, Optional

logger = logging.getLogger(__name__)

# metrics.csv 的列顺序
METRICS_COLUMNS = (
    'events',
    'subgrids',
    'live_peers',
    'failed_peers',
    'propagation_rounds',
    'propagation_messages',
    'rounds_to_quiescence',
    'formed_mean_bw',
    'random_mean_bw',
    'partition_win_fraction',
    'jobs_submitted',
    'jobs_scheduled_remote',
    'jobs_completed',
    'jobs_rejected',
    'mean_decision_latency',
    'mean_response_time',
    'max_response_time',
    'migrations_started',
    'migrations_completed',
    'migrations_failed',
    'threads_lost',
    'bytes_migrated',
    'calls_executed',
    'calls_forwarded',
    'calls_redirected',
    'duplicates_dropped',
    'callee_unreachable',
    'usage_records',
    'violations',
    'throttled',
    'terminated',
    'access_denied',
    'messages_dropped',
    'operations_failed',
)

# 改变资源视图内容的事件；传播轮次从最后一个此类事件之后开始计算
_VIEW_CHANGES = frozenset({
    'PeerJoined', 'PeerMoved', 'PeerLeft', 'MasterElected', 'SubGridDissolved',
    'ResourceRegistered',
})


def _mean(values: List[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None


@dataclass
class MetricsReport:
    """一次运行的指标"""
    events: int = 0
    subgrids: int = 0
    subgrid_sizes: Dict[str, int] = field(default_factory=dict)
    live_peers: int = 0
    failed_peers: int = 0
    propagation_rounds: int = 0
    propagation_messages: int = 0
    rounds_to_quiescence: int = 0
    formed_mean_bw: Optional[float] = None
    random_mean_bw: Optional[float] = None
    partition_win_fraction: Optional[float] = None
    jobs_submitted: int = 0
    jobs_scheduled_remote: int = 0
    jobs_completed: int = 0
    jobs_rejected: int = 0
    mean_decision_latency: Optional[float] = None
    mean_response_time: Optional[float] = None
    max_response_time: Optional[float] = None
    migrations_started: int = 0
    migrations_completed: int = 0
    migrations_failed: int = 0
    threads_lost: int = 0
    bytes_migrated: int = 0
    calls_executed: int = 0
    calls_forwarded: int = 0
    calls_redirected: int = 0
    duplicates_dropped: int = 0
    callee_unreachable: int = 0
    usage_records: int = 0
    violations: int = 0
    throttled: int = 0
    terminated: int = 0
    access_denied: int = 0
    messages_dropped: int = 0
    operations_failed: int = 0

    @classmethod
    def from_records(cls, records: Iterable[Dict[str, Any]]) -> 'MetricsReport':
        collector = MetricsCollector()
        for record in records:
            collector.add_record(record)
        return collector.report()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def csv_row(self) -> List[Any]:
        """按 METRICS_COLUMNS 顺序的一行，缺失值为空字符串"""
        data = self.to_dict()
        return ['' if data[c] is None else data[c] for c in METRICS_COLUMNS]

    def summary(self) -> str:
        """人类可读的摘要"""
        def fmt(value: Optional[float], digits: int = 4) -> str:
            return "n/a" if value is None else f"{value:.{digits}f}"

        sizes = ", ".join(f"{size}x{count}" for size, count in
                          sorted(self.subgrid_sizes.items(), key=lambda kv: int(kv[0])))
        lines = [
            f"events:              {self.events}",
            f"subgrids:            {self.subgrids} (sizes {sizes or '-'})",
            f"peers:               {self.live_peers} live, {self.failed_peers} failed",
            f"propagation:         {self.propagation_rounds} rounds, "
            f"{self.propagation_messages} messages, quiescent after {self.rounds_to_quiescence}",
            f"intra-subgrid bw:    formed {fmt(self.formed_mean_bw, 1)} / "
            f"random {fmt(self.random_mean_bw, 1)} (win {fmt(self.partition_win_fraction, 2)})",
            f"jobs:                {self.jobs_submitted} submitted, {self.jobs_completed} completed, "
            f"{self.jobs_rejected} rejected, {self.jobs_scheduled_remote} remote",
            f"response time:       mean {fmt(self.mean_response_time)} s, "
            f"max {fmt(self.max_response_time)} s",
            f"migrations:          {self.migrations_started} started, "
            f"{self.migrations_completed} completed, {self.migrations_failed} failed, "
            f"{self.bytes_migrated} bytes",
            f"calls:               {self.calls_executed} executed, {self.calls_forwarded} forwarded, "
            f"{self.calls_redirected} redirected, {self.duplicates_dropped} duplicates, "
            f"{self.callee_unreachable} unreachable",
            f"security:            {self.usage_records} usage records, {self.violations} violations, "
            f"{self.throttled} throttled, {self.terminated} terminated, "
            f"{self.access_denied} access denied",
            f"failures:            {self.threads_lost} threads lost, "
            f"{self.messages_dropped} messages dropped, {self.operations_failed} operations failed",
        ]
        return "\n".join(lines) + "\n"


class MetricsCollector:
    """指标累加器：逐条接收事件记录"""

    def __init__(self):
        self.counts: Counter = Counter()
        self.events = 0
        self.submitted_at: Dict[str, float] = {}
        self.decision_latencies: List[float] = []
        self.response_times: List[float] = []
        self.remote_jobs = 0
        self.bytes_migrated = 0
        self.propagation_messages = 0
        self.rounds_with_changes: List[int] = []
        self.last_view_change = -1.0
        self.final: Optional[Dict[str, Any]] = None
        self.partition: Optional[Dict[str, Any]] = None

    def add_record(self, record: Dict[str, Any]) -> None:
        kind = record['kind']
        self.events += 1
        self.counts[kind] += 1

        if kind in _VIEW_CHANGES:
            self.last_view_change = record['time']
            self.rounds_with_changes = []
        elif kind == 'InfoPropagated':
            self.propagation_messages += 1
            if record.get('changed', 0) > 0:
                rnd = record['round']
                # 延迟大于传播间隔时不同轮次的投递会交错到达
                if rnd not in self.rounds_with_changes:
                    self.rounds_with_changes.append(rnd)
        elif kind == 'JobSubmitted':
            self.submitted_at[record['job']] = record['time']
        elif kind == 'JobScheduled':
            submitted = self.submitted_at.get(record['job'])
            if submitted is not None:
                self.decision_latencies.append(record['time'] - submitted)
            if record['chosen'] != record['submitter']:
                self.remote_jobs += 1
        elif kind == 'JobCompleted':
            self.response_times.append(record['response_time'])
        elif kind == 'MigrationStarted':
            self.bytes_migrated += record['size']
        elif kind == 'RunCompleted':
            self.final = record
        elif kind == 'PartitionAssessed':
            self.partition = record

    def report(self) -> MetricsReport:
        c = self.counts
        report = MetricsReport(
            events=self.events,
            propagation_messages=self.propagation_messages,
            rounds_to_quiescence=len(self.rounds_with_changes),
            jobs_submitted=c['JobSubmitted'],
            jobs_scheduled_remote=self.remote_jobs,
            jobs_completed=c['JobCompleted'],
            jobs_rejected=c['JobRejected'],
            mean_decision_latency=_mean(self.decision_latencies),
            mean_response_time=_mean(self.response_times),
            max_response_time=max(self.response_times) if self.response_times else None,
            migrations_started=c['MigrationStarted'],
            migrations_completed=c['MigrationCompleted'],
            migrations_failed=c['MigrationFailed'],
            threads_lost=c['ThreadLost'],
            bytes_migrated=self.bytes_migrated,
            calls_executed=c['CallExecuted'],
            calls_forwarded=c['CallForwarded'],
            calls_redirected=c['CallRedirected'],
            duplicates_dropped=c['CallDuplicateDropped'],
            callee_unreachable=c['CalleeUnreachable'],
            usage_records=c['UsageRecorded'],
            violations=c['UsageViolation'],
            throttled=c['ThreadThrottled'],
            terminated=c['ThreadTerminated'],
            access_denied=c['AccessDenied'],
            messages_dropped=c['MessageDropped'],
            operations_failed=c['OperationFailed'],
        )
        if self.final is not None:
            subgrids = self.final.get('subgrids', [])
            report.subgrids = len(subgrids)
            sizes = Counter(len(sg['members']) for sg in subgrids)
            report.subgrid_sizes = {str(size): count for size, count in sorted(sizes.items())}
            report.live_peers = len(self.final.get('live', []))
            report.failed_peers = len(self.final.get('failed', []))
            report.propagation_rounds = self.final.get('propagation_rounds', 0)
        if self.partition is not None and 'skipped' not in self.partition:
            report.formed_mean_bw = self.partition['formed_mean']
            report.random_mean_bw = self.partition['random_mean']
            report.partition_win_fraction = self.partition['win_fraction']
        return report
