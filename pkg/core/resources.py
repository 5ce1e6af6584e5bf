# gridos/core/resources.py
"""
资源描述
资源广告、作业需求和用量向量，供发现服务、资源代理和安全模块共用
"""
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Optional, Tuple

if TYPE_CHECKING:
    from security.policy import SharingPolicy

PeerId = int


@dataclass(frozen=True)
class ResourceUsage:
    """三个资源轴上的用量"""
    cpu: float = 0.0
    mem: float = 0.0
    storage: float = 0.0

    def __post_init__(self):
        if self.cpu < 0 or self.mem < 0 or self.storage < 0:
            raise ValueError(f"用量不能为负: {self}")

    def __add__(self, other: 'ResourceUsage') -> 'ResourceUsage':
        return ResourceUsage(self.cpu + other.cpu, self.mem + other.mem,
                             self.storage + other.storage)

    def scaled(self, factor: float) -> 'ResourceUsage':
        return ResourceUsage(self.cpu * factor, self.mem * factor, self.storage * factor)

    def as_tuple(self) -> Tuple[float, float, float]:
        return (self.cpu, self.mem, self.storage)


ZERO_USAGE = ResourceUsage()


@dataclass(frozen=True)
class JobRequirements:
    """作业的最低需求（由应用开发者以元数据形式附带）"""
    min_cpu: float = 0.0
    min_mem: float = 0.0
    min_storage: float = 0.0
    data_size: int = 0          # 需要传输的输入数据（字节）
    interactive: bool = False

    def __post_init__(self):
        if self.min_cpu < 0 or self.min_mem < 0 or self.min_storage < 0 or self.data_size < 0:
            raise ValueError(f"最低需求不能为负: {self}")


@dataclass(frozen=True)
class HostUsage:
    """准入检查时主机的当前状态"""
    cpu_capacity: float
    foreign: ResourceUsage = ZERO_USAGE
    local_load: float = 0.0
    protected_used: int = 0     # 已占用的受保护内存（字节）


@dataclass(frozen=True)
class ResourceAdvertisement:
    """节点动态广告的最新资源状态"""
    origin: PeerId
    cpu_capacity: float
    cpu_available: float
    mem_total: float
    mem_available: float
    storage_available: float
    load: float = 0.0
    share_limits: Optional['SharingPolicy'] = None
    timestamp: float = 0.0
    foreign_usage: ResourceUsage = field(default=ZERO_USAGE)

    def __post_init__(self):
        if not 0.0 <= self.load <= 1.0:
            raise ValueError(f"负载越界: {self.load}")
        if not 0 <= self.cpu_available <= self.cpu_capacity:
            raise ValueError(f"cpu_available 越界: {self.cpu_available}/{self.cpu_capacity}")
        if not 0 <= self.mem_available <= self.mem_total:
            raise ValueError(f"mem_available 越界: {self.mem_available}/{self.mem_total}")
        if self.storage_available < 0:
            raise ValueError(f"storage_available 不能为负: {self.storage_available}")

    def host_usage(self) -> HostUsage:
        """从广告还原主机状态，用于准入检查"""
        return HostUsage(cpu_capacity=self.cpu_capacity, foreign=self.foreign_usage,
                         local_load=self.load)

    def same_status(self, other: 'ResourceAdvertisement') -> bool:
        """除时间戳外是否相同"""
        return replace(self, timestamp=other.timestamp) == other
