# gridos/sim/engine.py
"""
仿真引擎
把场景中的加入、作业、失效和探测放进一个事件队列，驱动发现服务、资源代理、
线程迁移和安全模块，产生完全确定的事件轨迹
"""
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Dict, List, Optional, Tuple

from config import config
from core.broker import JobDescriptor, schedule_job
from core.discovery import (OverlayState, PendingDelivery, deliver_propagation,
                            handle_peer_failure, handle_subgrid_announcement, join_peer,
                            register_resources, send_round)
from core.errors import (AlreadyFailed, GridOSError, InvariantViolation, NoEligibleMachine,
                         ProtectedAreaFull, SimulationError, TooFewSubGrids)
from core.events import EventKind, EventTrace, GridEvent
from core.migration import GridThreadId, Process, ProcessManager, ThreadImage, ThreadStatus
from core.net_model import NetworkTopology
from core.resources import HostUsage, ResourceAdvertisement, ResourceUsage, ZERO_USAGE
from core.timing import EventQueue, TickSchedule
from security.accounting import AuditLog, UsageAccountant, account_tick, enforce
from security.policy import ADMIT, AdmissionDecision, PolicyRegistry, SharingPolicy
from security.protected_memory import (AccessOutcome, HostLocal, JobAccessor, ProtectedMemory,
                                       access_protected)
from .metrics import MetricsReport
from .partitions import compare_partitions
from .scenario_parser import AccessProbe, JobSpec, PeerSpec, Scenario

logger = logging.getLogger(__name__)


class SimState(Enum):
    """仿真状态"""
    READY = "ready"
    RUNNING = "running"
    FINISHED = "finished"


@dataclass
class PeerRuntime:
    """运行中的节点"""
    spec: PeerSpec
    memory: ProtectedMemory
    joined: bool = False
    failed: bool = False
    last_adv: Optional[ResourceAdvertisement] = None


@dataclass
class JobRuntime:
    """运行中的作业"""
    spec: JobSpec
    threads: List[GridThreadId] = field(default_factory=list)
    chosen: Optional[int] = None
    resident_until: float = 0.0
    rejected: bool = False
    finished: bool = False
    caps: Dict[str, float] = field(default_factory=dict)   # 限速后的用量比例


def _unrestricted(spec: PeerSpec) -> SharingPolicy:
    """未声明策略的节点：上限为自身全部资源"""
    return SharingPolicy(owner=spec.id, cpu_quota=1.0, mem_cap=spec.mem_total,
                         storage_cap=spec.storage_total)


class GridSimulator:
    """
    网格仿真器
    一次 run() 对应一个场景和一个种子；相同输入产生逐字节相同的轨迹
    """

    def __init__(self, scenario: Scenario, seed: Optional[int] = None,
                 check_invariants: Optional[bool] = None,
                 partition_trials: Optional[int] = None):
        self.scenario = scenario
        self.seed = scenario.seed if seed is None else seed
        if check_invariants is None:
            check_invariants = config.get('simulation.check_invariants', False)
        self.check_invariants = check_invariants
        self.partition_trials = partition_trials or config.get('simulation.partition_trials', 20)

        self.topology: NetworkTopology = scenario.topology.build(self.seed)
        self.queue = EventQueue()
        self.trace = EventTrace()
        self.ticks = TickSchedule(scenario.tick_length)
        self.overlay = OverlayState(lim=scenario.lim, hysteresis=scenario.hysteresis)
        self.audit = AuditLog()
        self.accountant = UsageAccountant()
        self.policies = PolicyRegistry(p.policy for p in scenario.roster() if p.policy is not None)

        self.peers: Dict[int, PeerRuntime] = {}
        for spec in scenario.roster():
            capacity = spec.policy.protected_cap if spec.policy is not None else None
            self.peers[spec.id] = PeerRuntime(spec=spec, memory=ProtectedMemory(spec.id, capacity))
        self.jobs: Dict[str, JobRuntime] = {job.id: JobRuntime(spec=job) for job in scenario.jobs}

        self.processes = ProcessManager(
            self.topology, self.queue, self._record,
            is_live=self._is_live,
            is_member=self.overlay.is_joined,
            admission=self._admit_thread,
        )
        self.processes.register_callback('on_thread_arrived', self._on_thread_arrived)
        self.processes.register_callback('on_thread_lost', self._on_thread_gone)
        self.processes.register_callback('on_process_quiescent', self._on_process_quiescent)

        self.state = SimState.READY
        self.propagation_rounds = 0
        self.callbacks: Dict[str, List[Callable]] = {
            'on_event': [],
            'on_state_change': [],
            'on_run_completed': [],
        }

    # ---- 回调 ----

    def register_callback(self, event: str, callback: Callable) -> None:
        """注册回调函数"""
        if event in self.callbacks:
            self.callbacks[event].append(callback)

    def unregister_callback(self, event: str, callback: Callable) -> None:
        if event in self.callbacks and callback in self.callbacks[event]:
            self.callbacks[event].remove(callback)

    def _trigger_callbacks(self, event: str, *args) -> None:
        for callback in self.callbacks.get(event, []):
            try:
                callback(*args)
            except Exception as e:
                logger.error(f"回调函数执行失败 {event}: {e}")

    def change_state(self, new_state: SimState) -> None:
        old_state = self.state
        self.state = new_state
        self._trigger_callbacks('on_state_change', old_state, new_state)

    # ---- 事件 ----

    def _record(self, event: GridEvent) -> GridEvent:
        self.trace.append(event)
        self._trigger_callbacks('on_event', event)
        return event

    def _emit(self, kind: EventKind, **payload) -> GridEvent:
        return self._record(GridEvent(kind=kind, time=self.queue.now, payload=payload))

    def _record_all(self, events: List[GridEvent]) -> None:
        for event in events:
            self._record(event)

    def _schedule(self, time_sec: float, label: str, action: Callable[[], None]) -> None:
        self.queue.schedule(time_sec, label, action)

    # ---- 节点状态 ----

    def _is_live(self, peer: int) -> bool:
        runtime = self.peers.get(peer)
        return runtime is not None and not runtime.failed

    def _resident(self, node: int) -> List[Tuple[ThreadImage, JobRuntime]]:
        """驻留在节点上、作业尚未结束的线程"""
        result = []
        for image in self.processes.threads_on(node):
            job = self.jobs.get(image.process)
            if job is not None and not job.finished:
                result.append((image, job))
        return result

    def _thread_usage(self, image: ThreadImage, job: JobRuntime) -> ResourceUsage:
        if image.status == ThreadStatus.BLOCKED:
            return ZERO_USAGE
        return job.spec.demand.scaled(job.caps.get(str(image.id), 1.0))

    def _foreign_usage(self, node: int) -> ResourceUsage:
        total = ZERO_USAGE
        for image, job in self._resident(node):
            if image.origin != node:
                total = total + self._thread_usage(image, job)
        return total

    def _advertisement(self, peer: int) -> ResourceAdvertisement:
        """根据本地负载和驻留线程的消耗计算当前可用资源"""
        spec = self.peers[peer].spec
        used = ZERO_USAGE
        for image, job in self._resident(peer):
            used = used + self._thread_usage(image, job)
        cpu_free = spec.cpu_capacity * (1.0 - spec.load) - used.cpu
        return ResourceAdvertisement(
            origin=peer,
            cpu_capacity=spec.cpu_capacity,
            cpu_available=min(max(cpu_free, 0.0), spec.cpu_capacity),
            mem_total=spec.mem_total,
            mem_available=min(max(spec.mem_total - used.mem, 0.0), spec.mem_total),
            storage_available=max(spec.storage_total - used.storage, 0.0),
            load=spec.load,
            share_limits=spec.policy,
            timestamp=self.queue.now,
            foreign_usage=self._foreign_usage(peer),
        )

    def _advertise(self, peer: int, force: bool = False) -> None:
        runtime = self.peers[peer]
        adv = self._advertisement(peer)
        if not force and runtime.last_adv is not None and runtime.last_adv.same_status(adv):
            return
        runtime.last_adv = adv
        self._record_all(register_resources(self.overlay, peer, adv, self.queue.now))

    def _admit_thread(self, image: ThreadImage, dest: int) -> AdmissionDecision:
        """迁移准入：按目标节点策略和当前外来用量检查"""
        job = self.jobs.get(image.process)
        runtime = self.peers[dest]
        if job is None or image.origin == dest:
            return ADMIT
        usage = _host_usage(runtime, self._foreign_usage(dest))
        return self.policies.check_admission(dest, job.spec.requirements, usage, image.size)

    # ---- 调度 ----

    def schedule_scenario(self) -> None:
        """把场景中的所有动作放入队列"""
        sc = self.scenario
        for spec in sorted(sc.roster(), key=lambda p: (p.join_time, p.id)):
            self._schedule(spec.join_time, f"join {spec.id}", self._bind(self._join, spec.id))
        for failure in sorted(sc.failures, key=lambda f: (f.time, f.peer)):
            self.inject_failure(failure.peer, failure.time)
        for job in sorted(sc.jobs, key=lambda j: (j.submit_time, j.id)):
            self._schedule(job.submit_time, f"submit {job.id}", self._bind(self._submit, job.id))
        for probe in sorted(sc.access_probes, key=lambda p: p.time):
            self._schedule(probe.time, f"probe {probe.job}", self._bind(self._probe, probe))

        interval = sc.propagation_interval
        rounds = int(math.floor(sc.duration / interval + 1e-9))
        for k in range(1, rounds + 1):
            self._schedule(k * interval, f"propagate {k}", self._propagation_round)

        ticks = int(math.floor(sc.duration / sc.tick_length + 1e-9))
        for tick in range(ticks):
            self._schedule(self.ticks.tick_to_time(tick + 1), f"tick {tick}",
                           self._bind(self._account_tick, tick))

    @staticmethod
    def _bind(fn: Callable, *args) -> Callable[[], None]:
        return lambda: fn(*args)

    def inject_failure(self, peer: int, time_sec: float) -> None:
        """在指定时间让节点失效（失效后不再恢复）"""
        self._schedule(time_sec, f"fail {peer}", self._bind(self.fail_peer, peer))

    # ---- 动作 ----

    def _join(self, peer: int) -> None:
        runtime = self.peers[peer]
        if runtime.failed:
            logger.debug(f"节点 {peer} 在加入前已失效")
            return
        events = join_peer(self.overlay, peer, self.topology, self.queue.now)
        runtime.joined = True
        self._record_all(events)
        for event in events:
            if event.kind == EventKind.SUBGRID_ANNOUNCED:
                self._send_announcement(event.payload['master'], event.payload['peer'],
                                        event.payload['subgrid'])
        self._advertise(peer, force=True)

    def _send_announcement(self, master: int, recipient: int, subgrid: int) -> None:
        latency = self.topology.latency(master, recipient)

        def deliver():
            if not self._is_live(master) or not self._is_live(recipient):
                self._emit(EventKind.MESSAGE_DROPPED, message="subgrid_announcement",
                           src=master, dest=recipient, subgrid=subgrid)
                return
            if subgrid not in self.overlay.subgrids or not self.overlay.is_joined(recipient):
                self._emit(EventKind.MESSAGE_DROPPED, message="subgrid_announcement",
                           src=master, dest=recipient, subgrid=subgrid)
                return
            self._record_all(handle_subgrid_announcement(
                self.overlay, recipient, subgrid, self.topology, self.queue.now))

        self._schedule(self.queue.now + latency, f"announce {subgrid} -> {recipient}", deliver)

    def fail_peer(self, peer: int) -> List[GridEvent]:
        """
        节点立即失效

        Raises:
            AlreadyFailed: 节点已经失效
        """
        runtime = self.peers.get(peer)
        if runtime is None:
            raise SimulationError(f"未知节点: {peer}")
        if runtime.failed:
            raise AlreadyFailed(f"节点已失效: {peer}")
        start = len(self.trace)
        was_member = self.overlay.is_joined(peer)
        runtime.failed = True
        self._emit(EventKind.PEER_FAILURE, peer=peer, member=was_member)
        self.processes.fail_node(peer)
        if was_member:
            self._record_all(handle_peer_failure(self.overlay, peer, self.topology, self.queue.now))
        runtime.memory.regions.clear()
        logger.info(f"节点 {peer} 失效 @ {self.queue.now:.3f}")
        return list(self.trace)[start:]

    def _submit(self, job_id: str) -> None:
        job = self.jobs[job_id]
        spec = job.spec
        now = self.queue.now
        if not self._is_live(spec.submitter) or not self.overlay.is_joined(spec.submitter):
            job.rejected = True
            self._emit(EventKind.JOB_REJECTED, job=job_id, submitter=spec.submitter,
                       reason="submitter_unavailable")
            return

        self._emit(EventKind.JOB_SUBMITTED, job=job_id, submitter=spec.submitter,
                   task=spec.task.name)
        task = spec.task.build()
        job.threads = self.processes.spawn_process(spec.submitter, task, pid=job_id, job=job_id)
        job.resident_until = now + spec.duration
        descriptor = JobDescriptor(id=job_id, submitter=spec.submitter,
                                   requirements=spec.requirements,
                                   threads=tuple(str(t) for t in job.threads))
        try:
            decision, events = schedule_job(descriptor, self.overlay, self.topology,
                                            self.scenario.broker_weights, now)
        except NoEligibleMachine as e:
            job.rejected = True
            job.finished = True
            for tid in job.threads:
                self.processes.kill_thread(tid)
            self._emit(EventKind.JOB_REJECTED, job=job_id, submitter=spec.submitter,
                       reason="no_eligible_machine")
            logger.info(f"作业 {job_id} 被拒绝: {e}")
            return

        job.chosen = decision.chosen
        self._record_all(events)
        for event in events:
            if event.kind == EventKind.MIGRATION_REQUESTED:
                self._try_migrate(GridThreadId.parse(event.payload['thread']), event.payload['dest'])
        self.processes.start_process(job_id)

        for at, index, dest in spec.migrations:
            tid = job.threads[index]
            self._schedule(now + at, f"migrate {tid} -> {dest}",
                           self._bind(self._try_migrate, tid, dest))

    def _try_migrate(self, tid: GridThreadId, dest: int) -> None:
        image = self.processes.image(tid)
        job = self.jobs.get(image.process)
        if job is not None and job.finished:
            return
        try:
            self.processes.migrate_thread(tid, dest)
        except GridOSError as e:
            self._operation_failed("migrate", e, thread=str(tid), dest=dest)

    def _on_thread_arrived(self, image: ThreadImage, src: int, dest: int) -> None:
        job = self.jobs.get(image.process)
        if job is not None:
            job.caps.pop(str(image.id), None)
        self.peers[src].memory.release(str(image.id))
        if image.origin != dest:
            try:
                self.peers[dest].memory.allocate(str(image.id), image.address_space)
            except ProtectedAreaFull as e:
                self._operation_failed("protect", e, thread=str(image.id), node=dest)

    def _on_thread_gone(self, image: ThreadImage) -> None:
        for runtime in self.peers.values():
            runtime.memory.release(str(image.id))

    def _on_process_quiescent(self, process: Process) -> None:
        job = self.jobs.get(process.job) if process.job else None
        if job is None or job.finished:
            return
        at = max(self.queue.now, job.resident_until)
        self._schedule(at, f"result {job.spec.id}", self._bind(self._return_result, job, process))

    def _return_result(self, job: JobRuntime, process: Process) -> None:
        """结果由 0 号线程所在节点送回提交节点"""
        head = self.processes.image(process.threads[0])
        src = head.host if head.host is not None else head.source
        if src is None:
            src = process.origin
        outputs = self.processes.outputs(process.pid)
        size = sum(len(v) for v in outputs.values())
        lost = sum(1 for t in process.threads if self.processes.image(t).status == ThreadStatus.DONE)
        submitter = job.spec.submitter
        latency = self.topology.latency(src, submitter, size)
        job.finished = True
        for tid in process.threads:
            self._on_thread_gone(self.processes.image(tid))

        if not self._is_live(src):
            self._emit(EventKind.MESSAGE_DROPPED, message="result", src=src, dest=submitter,
                       job=job.spec.id)
            return
        self._emit(EventKind.RESULT_RETURNED, job=job.spec.id, src=src, dest=submitter,
                   size=size, arrival=self.queue.now + latency)

        def arrive():
            if not self._is_live(submitter):
                self._emit(EventKind.MESSAGE_DROPPED, message="result", src=src,
                           dest=submitter, job=job.spec.id)
                return
            self._emit(EventKind.JOB_COMPLETED, job=job.spec.id, submitter=submitter,
                       chosen=job.chosen, response_time=self.queue.now - job.spec.submit_time,
                       lost_threads=lost, status="degraded" if lost else "ok")

        self._schedule(self.queue.now + latency, f"complete {job.spec.id}", arrive)

    def _propagation_round(self) -> None:
        self.propagation_rounds += 1
        for delivery in send_round(self.overlay, self.topology, self.queue.now):
            self._schedule(delivery.deliver_at, f"propagate {delivery.src} -> {delivery.dst}",
                           self._bind(self._deliver_propagation, delivery))

    def _deliver_propagation(self, delivery: PendingDelivery) -> None:
        self._record_all(deliver_propagation(self.overlay, delivery))

    def _account_tick(self, tick: int) -> None:
        """每个 tick 结束时为驻留的外来线程记账，并按策略处理违规"""
        now = self.queue.now
        for node in sorted(self.peers):
            runtime = self.peers[node]
            if runtime.failed or not runtime.joined:
                continue
            policy = self.policies.get(node) or _unrestricted(runtime.spec)
            foreign = {str(image.id): (image, job) for image, job in self._resident(node)
                       if image.origin != node}
            if not foreign:
                continue
            usages = {thread: self._thread_usage(image, job)
                      for thread, (image, job) in foreign.items()}
            violations = account_tick(node, usages, policy, self.audit, tick,
                                      runtime.spec.cpu_capacity, self.accountant)
            for thread in sorted(usages):
                usage = usages[thread]
                self._emit(EventKind.USAGE_RECORDED, node=node, thread=thread, tick=tick,
                           cpu=usage.cpu, mem=usage.mem, storage=usage.storage)
                try:
                    runtime.memory.update(thread, foreign[thread][0].address_space)
                except ProtectedAreaFull as e:
                    logger.warning(f"受保护区更新失败: {e}")
            for violation in violations:
                image, job = foreign[violation.thread]
                record = violation.to_record()
                record.pop('type')
                self._emit(EventKind.USAGE_VIOLATION, **record)
                self._handle_violation(image, job, enforce(
                    violation, policy, now, self.scenario.tick_length,
                    origin=image.origin, job=job.spec.id))

        for node in sorted(self.peers):
            if self._is_live(node) and self.overlay.is_joined(node):
                self._advertise(node)

    def _handle_violation(self, image: ThreadImage, job: JobRuntime,
                          events: List[GridEvent]) -> None:
        for event in events:
            if event.kind == EventKind.THREAD_THROTTLED:
                self.processes.block_thread(image.id)
                job.caps[str(image.id)] = event.payload['cap']
                self._record(event)
            elif event.kind == EventKind.THREAD_RESUMED:
                self._schedule(event.time, f"resume {image.id}",
                               self._bind(self._resume, image.id, event))
            elif event.kind == EventKind.THREAD_TERMINATED:
                self.processes.kill_thread(image.id)
                self._on_thread_gone(image)
                self._record(event)
            elif event.kind == EventKind.JOB_NOTIFIED:
                self._send_notification(event)
            else:
                self._record(event)

    def _resume(self, tid: GridThreadId, event: GridEvent) -> None:
        if self.processes.resume_thread(tid):
            self._record(GridEvent(event.kind, self.queue.now, dict(event.payload)))

    def _send_notification(self, event: GridEvent) -> None:
        src, origin = event.payload['node'], event.payload['origin']
        latency = self.topology.latency(src, origin)

        def deliver():
            if not self._is_live(origin):
                self._emit(EventKind.MESSAGE_DROPPED, message="job_notification", src=src,
                           dest=origin, job=event.payload['job'])
                return
            self._record(GridEvent(event.kind, self.queue.now, dict(event.payload)))

        self._schedule(self.queue.now + latency, f"notify {origin}", deliver)

    def _probe(self, probe: AccessProbe) -> None:
        job = self.jobs[probe.job]
        if not job.threads:
            self._emit(EventKind.OPERATION_FAILED, operation="access_probe", job=probe.job,
                       reason="job_not_started")
            return
        owner = str(job.threads[probe.thread])
        region = self.peers[probe.host].memory.region(owner)
        if region is None:
            self._emit(EventKind.OPERATION_FAILED, operation="access_probe", job=probe.job,
                       host=probe.host, reason="no_region")
            return
        if probe.accessor_job is None:
            accessor = HostLocal(probe.host)
        else:
            other = self.jobs[probe.accessor_job]
            if not other.threads:
                self._emit(EventKind.OPERATION_FAILED, operation="access_probe",
                           job=probe.accessor_job, reason="job_not_started")
                return
            accessor = JobAccessor(str(other.threads[probe.accessor_thread]))
        outcome = access_protected(accessor, region, self.audit, self.queue.now)
        if outcome == AccessOutcome.DENIED:
            self._emit(EventKind.ACCESS_DENIED, host=probe.host, accessor=str(accessor),
                       owner=owner)
        else:
            logger.debug(f"{accessor} 访问 {owner} 的受保护区")

    def _operation_failed(self, operation: str, error: GridOSError, **payload) -> None:
        logger.warning(f"操作失败 {operation}: {error}")
        self._emit(EventKind.OPERATION_FAILED, operation=operation,
                   error=type(error).__name__, message=str(error), **payload)

    # ---- 运行 ----

    def _verify(self) -> None:
        self.overlay.check_invariants()
        self.processes.check_invariants()

    def run(self, max_steps: int = 10_000_000) -> Tuple[EventTrace, MetricsReport]:
        """
        运行到场景结束时间

        Returns:
            (事件轨迹, 指标报告)
        """
        if self.state != SimState.READY:
            raise SimulationError("仿真器只能运行一次")
        self.change_state(SimState.RUNNING)
        logger.info(f"开始仿真: {self.scenario.name or 'scenario'} seed={self.seed} "
                    f"({len(self.peers)} 个节点, {len(self.jobs)} 个作业)")
        self.schedule_scenario()

        duration = self.scenario.duration
        steps = 0
        while True:
            next_time = self.queue.peek_time()
            if next_time is None or next_time > duration:
                break
            if steps >= max_steps:
                logger.warning(f"达到步数上限: {max_steps}")
                break
            try:
                self.queue.step()
            except InvariantViolation:
                raise
            except GridOSError as e:
                self._operation_failed("step", e)
            steps += 1
            if self.check_invariants:
                self._verify()

        if self.queue.now < duration:
            self.queue.clock.advance_to(duration)
        self._finish()
        report = MetricsReport.from_records(self.trace.to_records())
        self.change_state(SimState.FINISHED)
        self._trigger_callbacks('on_run_completed', self.trace, report)
        logger.info(f"仿真结束: {len(self.trace)} 个事件, {steps} 步")
        return self.trace, report

    def _finish(self) -> None:
        subgrids = [
            {'subgrid': sg_id, 'master': sg.master, 'members': sg.members()}
            for sg_id, sg in sorted(self.overlay.subgrids.items())
        ]
        self._emit(EventKind.RUN_COMPLETED, subgrids=subgrids,
                   live=self.overlay.live_peers(), failed=sorted(self.overlay.failed),
                   propagation_rounds=self.propagation_rounds,
                   bytes_migrated=self.processes.bytes_migrated,
                   audit_entries=len(self.audit))
        try:
            comparison = compare_partitions(self.trace, self.topology, self.seed,
                                            self.partition_trials)
        except TooFewSubGrids as e:
            self._emit(EventKind.PARTITION_ASSESSED, skipped="too_few_subgrids", message=str(e))
            return
        self._emit(EventKind.PARTITION_ASSESSED, **comparison.to_dict())


def _host_usage(runtime: PeerRuntime, foreign: ResourceUsage) -> HostUsage:
    return HostUsage(cpu_capacity=runtime.spec.cpu_capacity, foreign=foreign,
                     local_load=runtime.spec.load, protected_used=runtime.memory.used())


def run(scenario: Scenario, seed: Optional[int] = None,
        check_invariants: Optional[bool] = None) -> Tuple[EventTrace, MetricsReport]:
    """运行一次场景"""
    return GridSimulator(scenario, seed=seed, check_invariants=check_invariants).run()
