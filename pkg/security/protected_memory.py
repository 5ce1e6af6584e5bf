# gridos/security/protected_memory.py
"""
受保护内存区
外来作业的地址空间存放在提供方无法读写的区域，只有所属作业可以访问
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, Optional, Union

from core.errors import ProtectedAreaFull
from .accounting import AccessDeniedRecord, AuditLog, ThreadKey

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class HostLocal:
    """提供方本地的访问者"""
    peer: int

    def __str__(self) -> str:
        return f"host:{self.peer}"


@dataclass(frozen=True)
class JobAccessor:
    """作业线程访问者"""
    thread: ThreadKey

    def __str__(self) -> str:
        return f"job:{self.thread}"


Accessor = Union[HostLocal, JobAccessor]


class AccessOutcome(Enum):
    GRANTED = "granted"
    DENIED = "denied"


@dataclass
class ProtectedRegion:
    """受保护区域"""
    owner_job: ThreadKey
    host: int
    contents: bytes = field(default=b"", repr=False)

    @property
    def size(self) -> int:
        return len(self.contents)


def access_protected(accessor: Accessor, region: ProtectedRegion,
                     log: Optional[AuditLog] = None, time: float = 0.0) -> AccessOutcome:
    """只有所属作业可以访问；拒绝时写入审计日志"""
    if isinstance(accessor, JobAccessor) and accessor.thread == region.owner_job:
        return AccessOutcome.GRANTED
    if log is not None:
        log.append_access_denied(AccessDeniedRecord(
            host=region.host, accessor=str(accessor), region_owner=region.owner_job, time=time,
        ))
    return AccessOutcome.DENIED


class ProtectedMemory:
    """单个节点的受保护内存区"""

    def __init__(self, host: int, capacity: Optional[int] = None):
        self.host = host
        self.capacity = capacity
        self.regions: Dict[ThreadKey, ProtectedRegion] = {}

    def used(self) -> int:
        return sum(r.size for r in self.regions.values())

    def _ensure_room(self, extra: int) -> None:
        if self.capacity is not None and self.used() + extra > self.capacity:
            raise ProtectedAreaFull(
                f"节点 {self.host} 受保护区不足: {self.used()} + {extra} > {self.capacity}"
            )

    def allocate(self, owner: ThreadKey, contents: bytes) -> ProtectedRegion:
        """为外来线程分配区域；已存在则替换内容"""
        existing = self.regions.get(owner)
        self._ensure_room(len(contents) - (existing.size if existing else 0))
        region = ProtectedRegion(owner_job=owner, host=self.host, contents=contents)
        self.regions[owner] = region
        return region

    def update(self, owner: ThreadKey, contents: bytes) -> ProtectedRegion:
        return self.allocate(owner, contents)

    def release(self, owner: ThreadKey) -> Optional[ProtectedRegion]:
        return self.regions.pop(owner, None)

    def region(self, owner: ThreadKey) -> Optional[ProtectedRegion]:
        return self.regions.get(owner)
