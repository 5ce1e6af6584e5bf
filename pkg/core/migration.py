# gridos/core/migration.py
"""
进程管理与线程迁移
网格唯一线程 ID、携带完整地址空间的线程迁移、跨节点过程调用的拦截与转发

非共享内存：线程之间只通过 RemoteCall 的 payload 交换数据。
"""
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Set, Tuple

from config import config
from .errors import (DestinationDenied, InvalidThreadState, InvariantViolation, MigrationError,
                     NotJoined, UnknownCallee, UnknownThread)
from .events import EventKind, EventTrace, GridEvent
from .net_model import NetworkTopology, PeerId
from .timing import EventQueue
from .workloads import CallIntent, TaskSpec, decode_args, decode_state, encode_args, encode_state

logger = logging.getLogger(__name__)

MAX_FORWARD_HOPS = config.get('migration.max_forward_hops', 16)


@dataclass(frozen=True, order=True)
class GridThreadId:
    """
    网格唯一线程 ID
    (创建节点, 节点启动时刻, 节点内计数器)
    """
    node: PeerId
    epoch: float
    counter: int

    def __str__(self) -> str:
        return f"{self.node}:{self.epoch!r}:{self.counter}"

    @classmethod
    def parse(cls, text: str) -> 'GridThreadId':
        node, epoch, counter = text.split(':')
        return cls(int(node), float(epoch), int(counter))


class ThreadIdAllocator:
    """
    线程 ID 分配器
    节点每次（重新）启动得到一个严格递增的 epoch，epoch 内计数器递增
    """

    def __init__(self):
        self._epochs: Dict[PeerId, float] = {}
        self._counters: Dict[PeerId, int] = {}

    def start_node(self, node: PeerId, clock: float) -> float:
        """节点启动或重启，返回新的 epoch"""
        epoch = float(clock)
        previous = self._epochs.get(node)
        if previous is not None and epoch <= previous:
            epoch = math.nextafter(previous, math.inf)
        self._epochs[node] = epoch
        self._counters[node] = 0
        return epoch

    def new_thread_id(self, node: PeerId, clock: float) -> GridThreadId:
        if node not in self._epochs:
            self.start_node(node, clock)
        self._counters[node] += 1
        return GridThreadId(node, self._epochs[node], self._counters[node])


class ThreadStatus(Enum):
    """线程状态"""
    RUNNABLE = "runnable"
    MIGRATING = "migrating"
    BLOCKED = "blocked"
    DONE = "done"


@dataclass
class ThreadImage:
    """
    线程映像
    address_space 为序列化后的任务状态；恰好一次调用的簿记随映像一起迁移
    """
    id: GridThreadId
    process: str
    index: int
    program: str
    address_space: bytes
    origin: PeerId
    status: ThreadStatus = ThreadStatus.RUNNABLE
    host: Optional[PeerId] = None       # 迁移途中为 None
    source: Optional[PeerId] = None     # 迁移途中保留副本的节点
    moves: int = 0
    call_seq: int = 0
    executed: Set[Tuple[str, int]] = field(default_factory=set)
    killed: bool = False

    @property
    def size(self) -> int:
        return len(self.address_space)


@dataclass(frozen=True)
class RemoteCall:
    """跨线程过程调用"""
    caller: GridThreadId
    callee: GridThreadId
    procedure: str
    payload: bytes = b""
    reply_to: PeerId = 0
    seq: int = 0
    hops: int = 0
    issued_at: float = 0.0

    @property
    def key(self) -> Tuple[str, int]:
        return (str(self.caller), self.seq)


@dataclass(frozen=True)
class CallRoute:
    """拦截结果：Local 或 Remote(dest)"""
    local: bool
    dest: PeerId

    @classmethod
    def Local(cls, host: PeerId) -> 'CallRoute':
        return cls(True, host)

    @classmethod
    def Remote(cls, dest: PeerId) -> 'CallRoute':
        return cls(False, dest)


ThreadLocationTable = Mapping[GridThreadId, PeerId]


def intercept_call(call: RemoteCall, locations: ThreadLocationTable) -> CallRoute:
    """
    调用拦截：被调线程与调用方在同一节点时为 Local，否则 Remote(被调线程所在节点)
    """
    if call.callee not in locations:
        raise UnknownCallee(f"位置表中没有线程 {call.callee}")
    host = locations[call.callee]
    if host == call.reply_to:
        return CallRoute.Local(host)
    return CallRoute.Remote(host)


@dataclass
class Process:
    """进程：同一任务的一组线程"""
    pid: str
    spec: TaskSpec
    origin: PeerId
    threads: List[GridThreadId]
    job: Optional[str] = None
    outstanding: int = 0
    started: bool = False
    quiescent: bool = False
    settled: Set[Tuple[str, int]] = field(default_factory=set)


AdmissionHook = Callable[[ThreadImage, PeerId], Any]


class ProcessManager:
    """
    进程管理器
    在事件队列上模拟线程执行、迁移和调用转发；事件通过 record 写入轨迹
    """

    def __init__(self, topology: NetworkTopology, queue: EventQueue,
                 record: Callable[[GridEvent], Any],
                 is_live: Callable[[PeerId], bool] = lambda peer: True,
                 is_member: Callable[[PeerId], bool] = lambda peer: True,
                 admission: Optional[AdmissionHook] = None,
                 max_hops: int = MAX_FORWARD_HOPS):
        self.topology = topology
        self.queue = queue
        self.record = record
        self.is_live = is_live
        self.is_member = is_member
        self.admission = admission
        self.max_hops = max_hops

        self.ids = ThreadIdAllocator()
        self.images: Dict[GridThreadId, ThreadImage] = {}
        self.processes: Dict[str, Process] = {}
        self.tables: Dict[PeerId, Dict[GridThreadId, PeerId]] = defaultdict(dict)
        self._table_versions: Dict[PeerId, Dict[GridThreadId, int]] = defaultdict(dict)
        self._held: Dict[Tuple[PeerId, GridThreadId], List[RemoteCall]] = defaultdict(list)
        self._next_pid = 1
        self.bytes_migrated = 0

        self.callbacks: Dict[str, List[Callable]] = {
            'on_thread_arrived': [],
            'on_migration_failed': [],
            'on_thread_lost': [],
            'on_process_quiescent': [],
        }

    # ---- 回调 ----

    def register_callback(self, event: str, callback: Callable) -> None:
        if event in self.callbacks:
            self.callbacks[event].append(callback)

    def _trigger_callbacks(self, event: str, *args) -> None:
        for callback in self.callbacks.get(event, []):
            try:
                callback(*args)
            except Exception as e:
                logger.error(f"回调执行失败 {event}: {e}")

    def _emit(self, kind: EventKind, **payload) -> GridEvent:
        event = GridEvent(kind=kind, time=self.queue.now, payload=payload)
        self.record(event)
        return event

    # ---- 进程 ----

    def new_thread_id(self, node: PeerId) -> GridThreadId:
        return self.ids.new_thread_id(node, self.queue.now)

    def restart_node(self, node: PeerId) -> float:
        """节点重启：之后分配的 ID 使用新 epoch"""
        return self.ids.start_node(node, self.queue.now)

    def image(self, tid: GridThreadId) -> ThreadImage:
        try:
            return self.images[tid]
        except KeyError:
            raise UnknownThread(f"未知线程: {tid}") from None

    def spawn_process(self, node: PeerId, spec: TaskSpec, pid: Optional[str] = None,
                      job: Optional[str] = None) -> List[GridThreadId]:
        """
        为任务创建执行线程，全部在 node 上就绪

        Raises:
            NotJoined: 节点未加入网格
        """
        if not self.is_member(node) or not self.is_live(node):
            raise NotJoined(f"节点未加入: {node}")
        if pid is None:
            pid = f"p{self._next_pid}"
            self._next_pid += 1
        if pid in self.processes:
            raise MigrationError(f"进程已存在: {pid}")

        tids = []
        for index in range(spec.threads):
            tid = self.new_thread_id(node)
            self.images[tid] = ThreadImage(
                id=tid, process=pid, index=index, program=spec.name,
                address_space=encode_state(spec.initial_state(index)),
                origin=node, host=node,
            )
            self.tables[node][tid] = node
            tids.append(tid)
            self._emit(EventKind.THREAD_SPAWNED, thread=str(tid), process=pid, index=index,
                       node=node, size=self.images[tid].size)

        self.processes[pid] = Process(pid=pid, spec=spec, origin=node, threads=tids, job=job)
        logger.debug(f"节点 {node} 创建进程 {pid}: {spec.name} x {spec.threads}")
        return tids

    def start_process(self, pid: str) -> None:
        """发出任务的启动调用"""
        process = self.processes[pid]
        if process.started:
            raise MigrationError(f"进程已启动: {pid}")
        process.started = True
        for caller_index, intent in process.spec.kickoff():
            caller = self.images[process.threads[caller_index]]
            host = caller.host if caller.host is not None else caller.source
            self._issue(caller, intent, host)
        self._check_quiescent(process)

    def outputs(self, pid: str) -> Dict[int, bytes]:
        """每个线程最终的地址空间字节"""
        process = self.processes[pid]
        return {self.images[t].index: self.images[t].address_space for t in process.threads}

    def process_status(self, pid: str) -> Dict[str, Dict[str, Any]]:
        """进程状态：每个线程的所在节点和状态"""
        process = self.processes[pid]
        status = {}
        for tid in process.threads:
            image = self.images[tid]
            status[str(tid)] = {
                'index': image.index,
                'host': image.host,
                'status': image.status.value,
                'killed': image.killed,
            }
        return status

    def threads_on(self, node: PeerId) -> List[ThreadImage]:
        """驻留在节点上的线程（不含迁移途中的）"""
        return [img for _, img in sorted(self.images.items())
                if img.host == node and img.status != ThreadStatus.DONE]

    # ---- 迁移 ----

    def migrate_thread(self, tid: GridThreadId, dest: PeerId) -> List[GridEvent]:
        """
        把线程连同完整地址空间迁移到 dest
        源节点保留副本直到到达；目标在途中失效则回滚到源节点

        Raises:
            UnknownThread, InvalidThreadState, DestinationDenied
        """
        image = self.image(tid)
        if image.status in (ThreadStatus.MIGRATING, ThreadStatus.DONE):
            raise InvalidThreadState(f"线程 {tid} 当前状态不能迁移: {image.status.value}")
        src = image.host
        if dest == src:
            return []
        if self.topology.has_peer(dest) and not self.is_live(dest):
            # 依据过期视图选中了已失效节点，线程留在源节点继续运行
            event = self._emit(EventKind.MIGRATION_FAILED, thread=str(tid), process=image.process,
                               src=src, dest=dest, reason="destination_failed")
            logger.info(f"线程 {tid} 的目标节点 {dest} 已失效，留在 {src}")
            self._trigger_callbacks('on_migration_failed', image, src, dest)
            return [event]
        if not self.topology.has_peer(dest) or not self.is_member(dest):
            raise DestinationDenied(dest, "unreachable")
        if self.admission is not None:
            decision = self.admission(image, dest)
            if not decision:
                raise DestinationDenied(dest, decision.reason.value if decision.reason else "denied")

        size = image.size
        latency = self.topology.latency(src, dest, size)
        image.status = ThreadStatus.MIGRATING
        image.host = None
        image.source = src
        self.bytes_migrated += size

        event = self._emit(EventKind.MIGRATION_STARTED, thread=str(tid), process=image.process,
                           src=src, dest=dest, size=size, arrival=self.queue.now + latency)
        self.queue.schedule_after(latency, f"arrive {tid}",
                                  lambda: self._arrive(tid, src, dest, latency))
        logger.debug(f"线程 {tid} 开始迁移 {src} -> {dest}: {size} 字节, {latency:.4f}s")
        return [event]

    def _arrive(self, tid: GridThreadId, src: PeerId, dest: PeerId, latency: float) -> None:
        image = self.images[tid]
        if image.status == ThreadStatus.DONE:
            return

        if not self.is_live(src):
            # 传输中的消息随源节点失效一起丢失
            self._lose_thread(image, "source_failed")
            return

        if not self.is_live(dest):
            image.status = ThreadStatus.RUNNABLE
            image.host = src
            image.source = None
            self._emit(EventKind.MIGRATION_FAILED, thread=str(tid), process=image.process,
                       src=src, dest=dest, reason="dest_failed")
            logger.info(f"线程 {tid} 迁移到 {dest} 失败，回滚到 {src}")
            self._trigger_callbacks('on_migration_failed', image, src, dest)
            self._flush_held(src, tid)
            return

        image.status = ThreadStatus.RUNNABLE
        image.host = dest
        image.source = None
        image.moves += 1
        process = self.processes[image.process]

        # 进程内其他线程的位置随映像带到目标节点
        for other in process.threads:
            if other in self.tables[src] and other not in self.tables[dest]:
                self.tables[dest][other] = self.tables[src][other]
        self._set_location(dest, tid, dest, image.moves)
        self._set_location(src, tid, dest, image.moves)

        self._emit(EventKind.MIGRATION_COMPLETED, thread=str(tid), process=image.process,
                   src=src, dest=dest, size=image.size, latency=latency)
        self._trigger_callbacks('on_thread_arrived', image, src, dest)

        hosts = sorted({self.images[t].host for t in process.threads
                        if self.images[t].host is not None} - {src, dest})
        for node in hosts:
            self._send_location_update(dest, node, tid, dest, image.moves)

        for call in self._held.pop((src, tid), []):
            self.forward_call(call, dest, from_node=src)
        self._flush_held(dest, tid)

    def _set_location(self, node: PeerId, tid: GridThreadId, host: PeerId, version: int) -> bool:
        if self._table_versions[node].get(tid, -1) > version:
            return False
        self.tables[node][tid] = host
        self._table_versions[node][tid] = version
        return True

    def _send_location_update(self, src: PeerId, dest: PeerId, tid: GridThreadId,
                              host: PeerId, version: int) -> None:
        latency = self.topology.latency(src, dest)

        def deliver():
            if not self.is_live(src) or not self.is_live(dest):
                self._emit(EventKind.MESSAGE_DROPPED, message="location_update", src=src,
                           dest=dest, thread=str(tid))
                return
            if self._set_location(dest, tid, host, version):
                self._emit(EventKind.LOCATION_UPDATED, node=dest, thread=str(tid), host=host)

        self.queue.schedule_after(latency, f"location {tid} -> {dest}", deliver)

    # ---- 调用 ----

    def _issue(self, caller: ThreadImage, intent: CallIntent, host: PeerId) -> RemoteCall:
        process = self.processes[caller.process]
        call = RemoteCall(
            caller=caller.id,
            callee=process.threads[intent.callee],
            procedure=intent.procedure,
            payload=encode_args(intent.args),
            reply_to=host,
            seq=caller.call_seq,
            issued_at=self.queue.now,
        )
        caller.call_seq += 1
        process.outstanding += 1
        self.dispatch(call)
        return call

    def dispatch(self, call: RemoteCall) -> None:
        """在调用方节点拦截调用并交付"""
        try:
            route = intercept_call(call, self.tables[call.reply_to])
        except UnknownCallee:
            self._call_failed(call, call.reply_to, "unknown_callee")
            return
        if route.local:
            self.queue.schedule_after(0.0, f"local call {call.key}",
                                      lambda: self.deliver_call(call, route.dest))
        else:
            self.forward_call(call, route.dest)

    def forward_call(self, call: RemoteCall, dest: PeerId,
                     from_node: Optional[PeerId] = None) -> List[GridEvent]:
        """
        把调用连同 payload 发送到 dest，时延按链路模型计算
        到达时任一端已失效则消息丢弃，调用方收到 CalleeUnreachable
        """
        src = call.reply_to if from_node is None else from_node
        size = len(call.payload)
        latency = self.topology.latency(src, dest, size)
        event = self._emit(EventKind.CALL_FORWARDED, caller=str(call.caller),
                           callee=str(call.callee), seq=call.seq, src=src, dest=dest,
                           size=size, hops=call.hops)

        def arrive():
            if not self.is_live(dest):
                self._emit(EventKind.MESSAGE_DROPPED, message="call", src=src, dest=dest,
                           caller=str(call.caller), seq=call.seq)
                self._call_failed(call, dest, "host_failed")
                return
            if not self.is_live(src):
                self._emit(EventKind.MESSAGE_DROPPED, message="call", src=src, dest=dest,
                           caller=str(call.caller), seq=call.seq)
                self._settle(call)
                return
            self.deliver_call(call, dest)

        self.queue.schedule_after(latency, f"call {call.key} -> {dest}", arrive)
        return [event]

    def deliver_call(self, call: RemoteCall, node: PeerId) -> None:
        """
        调用到达 node
        被调线程在此且可运行则执行；迁移途中或被阻塞则暂存；否则沿位置表链式转发
        """
        image = self.images.get(call.callee)
        if image is None:
            raise UnknownCallee(f"未知被调线程: {call.callee}")
        if not self.is_live(node):
            self._call_failed(call, node, "host_failed")
            return
        if image.status == ThreadStatus.DONE:
            self._call_failed(call, node, "callee_lost" if not image.killed else "callee_killed")
            return
        if call.key in image.executed:
            self._emit(EventKind.CALL_DUPLICATE_DROPPED, caller=str(call.caller),
                       callee=str(call.callee), seq=call.seq, node=node)
            return

        if image.host == node:
            if image.status == ThreadStatus.RUNNABLE:
                self._execute(call, image, node)
            else:
                self._hold(call, node)
            return
        if image.status == ThreadStatus.MIGRATING and image.source == node:
            self._hold(call, node)
            return

        # 位置表过期：从最后已知节点继续转发
        next_hop = self.tables[node].get(call.callee)
        if call.hops >= self.max_hops:
            self._call_failed(call, node, "hop_limit")
            return
        if next_hop is None or next_hop == node:
            self._call_failed(call, node, "no_route")
            return
        self._emit(EventKind.CALL_REDIRECTED, caller=str(call.caller), callee=str(call.callee),
                   seq=call.seq, at=node, to=next_hop, hops=call.hops + 1)
        if call.reply_to != node and self.is_live(call.reply_to):
            version = self._table_versions[node].get(call.callee, 0)
            self._send_location_update(node, call.reply_to, call.callee, next_hop, version)
        self.forward_call(replace(call, hops=call.hops + 1), next_hop, from_node=node)

    def _hold(self, call: RemoteCall, node: PeerId) -> None:
        self._held[(node, call.callee)].append(call)
        self._emit(EventKind.CALL_HELD, caller=str(call.caller), callee=str(call.callee),
                   seq=call.seq, node=node)

    def _flush_held(self, node: PeerId, tid: GridThreadId) -> None:
        for call in self._held.pop((node, tid), []):
            self.deliver_call(call, node)

    def _execute(self, call: RemoteCall, image: ThreadImage, node: PeerId) -> None:
        process = self.processes[image.process]
        image.executed.add(call.key)
        state = decode_state(image.address_space)
        intents = process.spec.handle(image.index, state, call.procedure,
                                      decode_args(call.payload))
        image.address_space = encode_state(state)
        self._emit(EventKind.CALL_EXECUTED, caller=str(call.caller), callee=str(call.callee),
                   seq=call.seq, procedure=call.procedure, host=node)

        for intent in intents:
            self._issue(image, intent, node)

        if call.reply_to == node:
            self._returned(call, node)
            return
        latency = self.topology.latency(node, call.reply_to)

        def reply():
            if not self.is_live(call.reply_to) or not self.is_live(node):
                self._emit(EventKind.MESSAGE_DROPPED, message="reply", src=node,
                           dest=call.reply_to, caller=str(call.caller), seq=call.seq)
                self._settle(call)
                return
            self._returned(call, node)

        self.queue.schedule_after(latency, f"reply {call.key}", reply)

    def _returned(self, call: RemoteCall, node: PeerId) -> None:
        self._emit(EventKind.CALL_RETURNED, caller=str(call.caller), callee=str(call.callee),
                   seq=call.seq, host=node, latency=self.queue.now - call.issued_at)
        self._settle(call)

    def _call_failed(self, call: RemoteCall, node: PeerId, reason: str) -> None:
        self._emit(EventKind.CALLEE_UNREACHABLE, caller=str(call.caller), callee=str(call.callee),
                   seq=call.seq, node=node, reason=reason)
        logger.debug(f"调用 {call.key} 失败: {reason}")
        self._settle(call)

    def _settle(self, call: RemoteCall) -> None:
        image = self.images.get(call.caller)
        if image is None:
            return
        process = self.processes[image.process]
        if call.key in process.settled:
            return
        process.settled.add(call.key)
        process.outstanding -= 1
        self._check_quiescent(process)

    def _check_quiescent(self, process: Process) -> None:
        if process.started and process.outstanding == 0 and not process.quiescent:
            process.quiescent = True
            self._emit(EventKind.PROCESS_QUIESCENT, process=process.pid, job=process.job)
            self._trigger_callbacks('on_process_quiescent', process)

    # ---- 阻塞 / 终止 / 失效 ----

    def block_thread(self, tid: GridThreadId) -> bool:
        image = self.image(tid)
        if image.status != ThreadStatus.RUNNABLE:
            return False
        image.status = ThreadStatus.BLOCKED
        return True

    def resume_thread(self, tid: GridThreadId) -> bool:
        image = self.image(tid)
        if image.status != ThreadStatus.BLOCKED:
            return False
        image.status = ThreadStatus.RUNNABLE
        self._flush_held(image.host, tid)
        return True

    def kill_thread(self, tid: GridThreadId) -> bool:
        """终止线程，暂存在其所在节点的调用全部失败"""
        image = self.image(tid)
        if image.status == ThreadStatus.DONE:
            return False
        node = image.host if image.host is not None else image.source
        image.status = ThreadStatus.DONE
        image.killed = True
        for call in self._held.pop((node, tid), []):
            self._call_failed(call, node, "callee_killed")
        return True

    def _lose_thread(self, image: ThreadImage, reason: str) -> None:
        node = image.host if image.host is not None else image.source
        image.status = ThreadStatus.DONE
        self._emit(EventKind.THREAD_LOST, thread=str(image.id), process=image.process,
                   node=node, reason=reason)
        self._trigger_callbacks('on_thread_lost', image)
        for call in self._held.pop((node, image.id), []):
            self._call_failed(call, node, "callee_lost")

    def fail_node(self, node: PeerId) -> None:
        """节点失效：驻留线程丢失，暂存的调用失败"""
        for image in self.threads_on(node):
            self._lose_thread(image, "host_failed")
        for (held_node, tid) in [k for k in self._held if k[0] == node]:
            for call in self._held.pop((held_node, tid)):
                self._call_failed(call, node, "host_failed")
        self.tables.pop(node, None)
        self._table_versions.pop(node, None)

    def check_invariants(self) -> None:
        """单驻留：非迁移中的存活线程恰好驻留在一个节点上"""
        for tid, image in self.images.items():
            if image.id != tid:
                raise InvariantViolation(f"线程 ID 不一致: {tid}")
            if image.status == ThreadStatus.MIGRATING:
                if image.host is not None:
                    raise InvariantViolation(f"迁移中的线程 {tid} 仍驻留在 {image.host}")
            elif image.status != ThreadStatus.DONE and image.host is None:
                raise InvariantViolation(f"线程 {tid} 没有驻留节点")
        for pid, process in self.processes.items():
            if process.outstanding < 0:
                raise InvariantViolation(f"进程 {pid} 未完成调用数为负")


MigrationScript = Sequence[Tuple[float, int, PeerId]]
FailureScript = Sequence[Tuple[float, PeerId]]


def run_workload(spec: TaskSpec, topology: NetworkTopology, origin: PeerId,
                 migrations: MigrationScript = (), failures: FailureScript = (),
                 start_time: float = 0.0, trace: Optional[EventTrace] = None,
                 max_steps: int = 1_000_000) -> Dict[int, bytes]:
    """
    按迁移脚本运行任务，返回每个线程最终的地址空间字节

    Args:
        migrations: (时间, 线程序号, 目标节点)；不合法的迁移被跳过
        failures: (时间, 节点)
    """
    queue = EventQueue()
    trace = trace if trace is not None else EventTrace()
    failed: Set[PeerId] = set()
    manager = ProcessManager(topology, queue, trace.append, is_live=lambda p: p not in failed)
    tids = manager.spawn_process(origin, spec)
    pid = manager.images[tids[0]].process

    def migrate(index: int, dest: PeerId):
        def action():
            try:
                manager.migrate_thread(tids[index], dest)
            except MigrationError as e:
                logger.debug(f"跳过迁移 {index} -> {dest}: {e}")
        return action

    def fail(node: PeerId):
        def action():
            if node not in failed:
                failed.add(node)
                manager.fail_node(node)
        return action

    for time_sec, index, dest in migrations:
        queue.schedule(time_sec, f"migrate {index} -> {dest}", migrate(index, dest))
    for time_sec, node in failures:
        queue.schedule(time_sec, f"fail {node}", fail(node))
    queue.schedule(start_time, f"start {pid}", lambda: manager.start_process(pid))
    queue.run(max_steps=max_steps)
    return manager.outputs(pid)
