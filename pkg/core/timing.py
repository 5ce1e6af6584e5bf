# gridos/core/timing.py
"""
仿真时间系统
逻辑时钟、记账 tick 映射和 (time, seq) 有序事件队列
"""
import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional

from config import config

logger = logging.getLogger(__name__)

DEFAULT_TICK_LENGTH = config.get('security.tick_length', 1.0)


class SimClock:
    """
    仿真时钟 - 逻辑时间（秒），只能前进
    """

    def __init__(self, start: float = 0.0):
        self.now = start

    def advance_to(self, time_sec: float) -> None:
        """推进到指定时间"""
        if time_sec < self.now:
            raise ValueError(f"时钟不能倒退: {time_sec} < {self.now}")
        self.now = time_sec

    def reset(self) -> None:
        """重置时钟"""
        self.now = 0.0


class TickSchedule:
    """
    记账 tick 与时间的映射
    tick n 覆盖区间 [n * length, (n + 1) * length)
    """

    def __init__(self, tick_length: float = DEFAULT_TICK_LENGTH):
        if tick_length <= 0:
            raise ValueError(f"tick 长度必须为正: {tick_length}")
        self.tick_length = tick_length

    def tick_to_time(self, tick: int) -> float:
        """tick 起始时间（秒）"""
        return tick * self.tick_length

    def time_to_tick(self, time_sec: float) -> int:
        """时间所在的 tick"""
        return int(math.floor(time_sec / self.tick_length + 1e-9))

    def next_tick_time(self, time_sec: float) -> float:
        return self.tick_to_time(self.time_to_tick(time_sec) + 1)


@dataclass(order=True)
class ScheduledAction:
    """队列中的待执行动作"""
    time: float
    seq: int
    label: str = field(compare=False)
    action: Callable[[], None] = field(compare=False, repr=False)
    cancelled: bool = field(default=False, compare=False)


class EventQueue:
    """
    离散事件队列
    严格按 (time, seq) 执行，seq 按调度顺序分配，保证确定性
    """

    def __init__(self, clock: Optional[SimClock] = None):
        self.clock = clock or SimClock()
        self._heap: List[ScheduledAction] = []
        self._next_seq = 0
        self.processed = 0

    @property
    def now(self) -> float:
        return self.clock.now

    def schedule(self, time_sec: float, label: str, action: Callable[[], None]) -> ScheduledAction:
        """在指定时间调度动作，不允许早于当前时间"""
        if time_sec < self.clock.now:
            raise ValueError(f"不能调度到过去: {label} @ {time_sec} < {self.clock.now}")
        item = ScheduledAction(time=time_sec, seq=self._next_seq, label=label, action=action)
        self._next_seq += 1
        heapq.heappush(self._heap, item)
        return item

    def schedule_after(self, delay: float, label: str, action: Callable[[], None]) -> ScheduledAction:
        return self.schedule(self.clock.now + max(delay, 0.0), label, action)

    def __len__(self) -> int:
        return len(self._heap)

    def peek_time(self) -> Optional[float]:
        return self._heap[0].time if self._heap else None

    def step(self) -> bool:
        """执行下一个动作，队列为空返回 False"""
        while self._heap:
            item = heapq.heappop(self._heap)
            if item.cancelled:
                continue
            self.clock.advance_to(item.time)
            self.processed += 1
            item.action()
            return True
        return False

    def run(self, until: Optional[float] = None, max_steps: Optional[int] = None) -> int:
        """
        运行直到队列耗尽

        Args:
            until: 只执行时间不晚于该值的动作
            max_steps: 步数上限（防止死循环）

        Returns:
            执行的动作数
        """
        steps = 0
        while self._heap:
            if until is not None and self._heap[0].time > until:
                break
            if max_steps is not None and steps >= max_steps:
                logger.warning(f"事件队列达到步数上限: {max_steps}")
                break
            if self.step():
                steps += 1
        return steps
