# gridos/security/policy.py
"""
共享策略管理
资源提供方声明愿意共享的资源上限，并据此对外来作业做准入检查
"""
import json
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import TYPE_CHECKING, Any, Dict, Iterable, Optional

if TYPE_CHECKING:
    from core.resources import HostUsage, JobRequirements

logger = logging.getLogger(__name__)


class ViolationAction(Enum):
    """违规处理方式"""
    THROTTLE = "throttle"
    TERMINATE = "terminate"


class ResourceAxis(Enum):
    """资源轴"""
    CPU = "cpu"
    MEM = "mem"
    STORAGE = "storage"


class DenyReason(Enum):
    """拒绝原因"""
    CPU_QUOTA = "cpu_quota"
    MEM_CAP = "mem_cap"
    STORAGE_CAP = "storage_cap"
    NOT_IDLE = "not_idle"
    PROTECTED_AREA = "protected_area"   # 受保护内存区容量不足
    UNREACHABLE = "unreachable"


@dataclass(frozen=True)
class SharingPolicy:
    """共享策略"""
    owner: int
    cpu_quota: float = 1.0          # cpu_capacity 的比例 [0, 1]
    mem_cap: float = 0.0            # 字节
    storage_cap: float = 0.0        # 字节
    idle_only: bool = False         # 只在本地空闲时接收外来作业
    on_violation: ViolationAction = ViolationAction.THROTTLE
    protected_cap: Optional[int] = None   # 受保护内存区大小上限，None 表示不限

    def __post_init__(self):
        if not 0.0 <= self.cpu_quota <= 1.0:
            raise ValueError(f"cpu_quota 越界: {self.cpu_quota}")
        if self.mem_cap < 0 or self.storage_cap < 0:
            raise ValueError(f"配额不能为负: mem={self.mem_cap}, storage={self.storage_cap}")
        if self.protected_cap is not None and self.protected_cap < 0:
            raise ValueError(f"protected_cap 不能为负: {self.protected_cap}")

    def limit(self, axis: ResourceAxis, cpu_capacity: float) -> float:
        """某个轴上的外来用量上限"""
        if axis == ResourceAxis.CPU:
            return self.cpu_quota * cpu_capacity
        if axis == ResourceAxis.MEM:
            return self.mem_cap
        return self.storage_cap

    def to_dict(self) -> Dict[str, Any]:
        return {
            'cpu_quota': self.cpu_quota,
            'mem_cap': self.mem_cap,
            'storage_cap': self.storage_cap,
            'idle_only': self.idle_only,
            'on_violation': self.on_violation.value,
            'protected_cap': self.protected_cap,
        }

    @classmethod
    def from_dict(cls, owner: int, data: Dict[str, Any]) -> 'SharingPolicy':
        """从字典创建"""
        return cls(
            owner=owner,
            cpu_quota=float(data.get('cpu_quota', 1.0)),
            mem_cap=data.get('mem_cap', 0.0),
            storage_cap=data.get('storage_cap', 0.0),
            idle_only=bool(data.get('idle_only', False)),
            on_violation=ViolationAction(data.get('on_violation', 'throttle')),
            protected_cap=data.get('protected_cap'),
        )


@dataclass(frozen=True)
class AdmissionDecision:
    """准入结果：Admit 或 Deny(reason)"""
    admitted: bool
    reason: Optional[DenyReason] = None

    def __bool__(self) -> bool:
        return self.admitted

    def __str__(self) -> str:
        return "Admit" if self.admitted else f"Deny({self.reason.value})"


ADMIT = AdmissionDecision(True)


def deny(reason: DenyReason) -> AdmissionDecision:
    return AdmissionDecision(False, reason)


def check_admission(req: 'JobRequirements', policy: SharingPolicy, current_usage: 'HostUsage',
                    image_size: int = 0) -> AdmissionDecision:
    """
    准入检查
    每个轴上需求不超过 (配额 - 当前外来用量) 即可接收，边界取闭区间

    Args:
        req: 作业需求
        policy: 候选主机的共享策略
        current_usage: 主机当前外来用量和本地负载
        image_size: 待接收的地址空间大小，用于受保护内存区检查
    """
    foreign = current_usage.foreign
    if req.min_cpu > policy.cpu_quota * current_usage.cpu_capacity - foreign.cpu:
        return deny(DenyReason.CPU_QUOTA)
    if req.min_mem > policy.mem_cap - foreign.mem:
        return deny(DenyReason.MEM_CAP)
    if req.min_storage > policy.storage_cap - foreign.storage:
        return deny(DenyReason.STORAGE_CAP)
    if policy.idle_only and current_usage.local_load > 0:
        return deny(DenyReason.NOT_IDLE)
    if policy.protected_cap is not None and image_size > 0:
        if current_usage.protected_used + image_size > policy.protected_cap:
            return deny(DenyReason.PROTECTED_AREA)
    return ADMIT


class PolicyRegistry:
    """共享策略注册表（每个节点一份）"""

    def __init__(self, policies: Iterable[SharingPolicy] = ()):
        self.policies: Dict[int, SharingPolicy] = {}
        for policy in policies:
            self.register(policy)

    def register(self, policy: SharingPolicy) -> None:
        """注册或替换节点策略"""
        if policy.owner in self.policies:
            logger.debug(f"替换节点 {policy.owner} 的共享策略")
        self.policies[policy.owner] = policy

    def get(self, owner: int) -> Optional[SharingPolicy]:
        return self.policies.get(owner)

    def check_admission(self, host: int, req: 'JobRequirements', current_usage: 'HostUsage',
                        image_size: int = 0) -> AdmissionDecision:
        """按主机策略检查；未声明策略的主机视为完全共享"""
        policy = self.policies.get(host)
        if policy is None:
            return ADMIT
        return check_admission(req, policy, current_usage, image_size)

    def load(self, path: Path) -> None:
        """从 JSON 文件加载策略"""
        try:
            with open(path, 'r', encoding='utf-8') as f:
                data = json.load(f)
            for owner, policy_data in data.items():
                self.register(SharingPolicy.from_dict(int(owner), policy_data))
        except (json.JSONDecodeError, IOError, ValueError) as e:
            logger.error(f"加载策略文件失败 {path}: {e}")
            raise

    def save(self, path: Path) -> None:
        """保存策略到 JSON 文件"""
        data = {str(owner): policy.to_dict() for owner, policy in sorted(self.policies.items())}
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2, ensure_ascii=False)
