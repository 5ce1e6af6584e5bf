# gridos/core/workloads.py
"""
内置工作负载
线程被抽象为确定性任务：可序列化的状态 + 过程表。
执行结果只取决于 (状态, 收到的调用)，与线程放在哪个节点无关。
"""
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Deque, Dict, List, Tuple, Type

logger = logging.getLogger(__name__)

State = Dict[str, Any]


def encode_state(state: State) -> bytes:
    """线程状态 -> 地址空间字节（键排序，紧凑格式）"""
    return json.dumps(state, sort_keys=True, separators=(',', ':')).encode('utf-8')


def decode_state(data: bytes) -> State:
    return json.loads(data.decode('utf-8'))


def encode_args(args: Dict[str, Any]) -> bytes:
    """无参数调用的 payload 为空"""
    return encode_state(args) if args else b""


def decode_args(payload: bytes) -> Dict[str, Any]:
    return decode_state(payload) if payload else {}


@dataclass(frozen=True)
class CallIntent:
    """线程发起的过程调用（callee 为进程内线程序号）"""
    callee: int
    procedure: str
    args: Dict[str, Any] = field(default_factory=dict, hash=False)


class TaskSpec:
    """
    任务描述基类
    子类声明线程数、初始状态、启动调用和过程表
    """
    name = "task"

    def __init__(self, threads: int = 4, **params):
        if threads < 1:
            raise ValueError(f"线程数必须 >= 1: {threads}")
        self.threads = threads
        self.params = params

    def initial_state(self, index: int) -> State:
        return {}

    def kickoff(self) -> List[Tuple[int, CallIntent]]:
        """进程启动时发出的调用：(调用方线程序号, 调用)"""
        return []

    def procedures(self) -> Dict[str, Callable[[int, State, Dict[str, Any]], List[CallIntent]]]:
        return {}

    def handle(self, index: int, state: State, procedure: str,
               args: Dict[str, Any]) -> List[CallIntent]:
        """在线程 index 上执行过程，原地修改 state，返回新发出的调用"""
        table = self.procedures()
        if procedure not in table:
            raise KeyError(f"任务 {self.name} 没有过程: {procedure}")
        return table[procedure](index, state, args)

    def describe(self) -> Dict[str, Any]:
        return {'name': self.name, 'params': {'threads': self.threads, **self.params}}


_REGISTRY: Dict[str, Type[TaskSpec]] = {}


def register_workload(cls: Type[TaskSpec]) -> Type[TaskSpec]:
    """注册内置工作负载"""
    _REGISTRY[cls.name] = cls
    return cls


def available_workloads() -> List[str]:
    return sorted(_REGISTRY)


def make_task(name: str, params: Dict[str, Any] = None) -> TaskSpec:
    """按名称创建任务，不支持加载任意代码"""
    if name not in _REGISTRY:
        raise ValueError(f"未知工作负载: {name}，可选 {available_workloads()}")
    return _REGISTRY[name](**(params or {}))


@register_workload
class RingTask(TaskSpec):
    """令牌环：令牌依次经过每个线程，累加经过次数和令牌值"""
    name = "ring"

    def __init__(self, threads: int = 4, rounds: int = 3, payload_size: int = 0):
        super().__init__(threads=threads, rounds=rounds, payload_size=payload_size)
        if rounds < 1:
            raise ValueError(f"rounds 必须 >= 1: {rounds}")
        self.rounds = rounds
        self.payload_size = payload_size

    def initial_state(self, index: int) -> State:
        return {'index': index, 'seen': 0, 'sum': 0}

    def kickoff(self) -> List[Tuple[int, CallIntent]]:
        first = CallIntent(callee=1 % self.threads, procedure='token',
                           args={'hops': 0, 'value': 1, 'pad': 'x' * self.payload_size})
        return [(0, first)]

    def _token(self, index: int, state: State, args: Dict[str, Any]) -> List[CallIntent]:
        state['seen'] += 1
        state['sum'] += args['value']
        hops = args['hops'] + 1
        if hops >= self.rounds * self.threads:
            return []
        return [CallIntent(callee=(index + 1) % self.threads, procedure='token',
                           args={'hops': hops, 'value': args['value'] + index + 1,
                                 'pad': args.get('pad', '')})]

    def procedures(self):
        return {'token': self._token}


@register_workload
class ForkJoinSumTask(TaskSpec):
    """
    分治求和：线程 0 把区间分给其他线程，各线程求平方和后回传，线程 0 汇总
    """
    name = "fork_join_sum"

    def __init__(self, threads: int = 4, n: int = 1000):
        super().__init__(threads=threads, n=n)
        if threads < 2:
            raise ValueError("fork_join_sum 至少需要 2 个线程")
        self.n = n

    def _ranges(self) -> List[Tuple[int, int]]:
        workers = self.threads - 1
        step = -(-self.n // workers)
        return [(i * step, min(self.n, (i + 1) * step)) for i in range(workers)]

    def initial_state(self, index: int) -> State:
        if index == 0:
            return {'index': 0, 'total': 0, 'received': 0}
        return {'index': index, 'partial': 0, 'done': False}

    def kickoff(self) -> List[Tuple[int, CallIntent]]:
        return [
            (0, CallIntent(callee=i + 1, procedure='compute', args={'lo': lo, 'hi': hi}))
            for i, (lo, hi) in enumerate(self._ranges())
        ]

    def _compute(self, index: int, state: State, args: Dict[str, Any]) -> List[CallIntent]:
        state['partial'] = sum(k * k for k in range(args['lo'], args['hi']))
        state['done'] = True
        return [CallIntent(callee=0, procedure='partial', args={'value': state['partial']})]

    def _partial(self, index: int, state: State, args: Dict[str, Any]) -> List[CallIntent]:
        state['total'] += args['value']
        state['received'] += 1
        return []

    def procedures(self):
        return {'compute': self._compute, 'partial': self._partial}


def run_local_reference(spec: TaskSpec, max_steps: int = 1_000_000) -> Dict[int, bytes]:
    """
    全本地参考执行（FIFO 顺序），返回每个线程最终的地址空间字节
    """
    states = [spec.initial_state(i) for i in range(spec.threads)]
    pending: Deque[CallIntent] = deque(call for _, call in spec.kickoff())
    steps = 0
    while pending:
        if steps >= max_steps:
            raise RuntimeError(f"参考执行超过步数上限: {max_steps}")
        call = pending.popleft()
        pending.extend(spec.handle(call.callee, states[call.callee], call.procedure, call.args))
        steps += 1
    logger.debug(f"参考执行 {spec.name}: {steps} 次调用")
    return {i: encode_state(state) for i, state in enumerate(states)}
