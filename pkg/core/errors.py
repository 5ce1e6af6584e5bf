# gridos/core/errors.py
"""
异常定义
每个子系统一个异常族，统一继承 GridOSError
"""
from typing import Optional


class GridOSError(Exception):
    """GridOS 基础异常"""
    pass


# ---- 网络模型 ----

class NetModelError(GridOSError):
    """网络模型错误"""
    pass


class InvalidLinkMetrics(NetModelError):
    """链路参数不合法（rtt/mss <= 0 或丢包率越界）"""
    pass


class UnknownLink(NetModelError, KeyError):
    """拓扑中不存在该链路"""
    pass


class EmptyCandidateSet(NetModelError):
    """候选节点为空"""
    pass


class InvalidSpec(NetModelError):
    """拓扑生成参数不合法"""
    pass


# ---- 发现服务 ----

class DiscoveryError(GridOSError):
    """发现服务错误"""
    pass


class AlreadyJoined(DiscoveryError):
    pass


class NotJoined(DiscoveryError):
    pass


class UnknownPeer(DiscoveryError):
    """节点不在拓扑中"""
    pass


class NoSubGrids(DiscoveryError):
    pass


class UnknownSubGrid(DiscoveryError):
    pass


class NoSlaves(DiscoveryError):
    pass


class MasterNotFailed(DiscoveryError):
    pass


# ---- 资源代理 ----

class BrokerError(GridOSError):
    """资源代理错误"""
    pass


class NoEligibleMachine(BrokerError):
    """没有满足最低需求的机器（包括本地）"""
    pass


# ---- 线程迁移 ----

class MigrationError(GridOSError):
    """迁移/调用转发错误"""
    pass


class UnknownThread(MigrationError):
    pass


class InvalidThreadState(MigrationError):
    """线程当前状态不允许该操作"""
    pass


class DestinationDenied(MigrationError):
    """目标节点拒绝接收（策略或不可达）"""

    def __init__(self, dest: int, reason: str):
        super().__init__(f"节点 {dest} 拒绝迁移: {reason}")
        self.dest = dest
        self.reason = reason


class UnknownCallee(MigrationError):
    pass


class CalleeUnreachable(MigrationError):
    pass


# ---- 安全 ----

class SecurityError(GridOSError):
    """资源提供方安全错误"""
    pass


class ProtectedAreaFull(SecurityError):
    pass


class DuplicateUsageRecord(SecurityError):
    """同一 (线程, tick) 重复记账"""
    pass


# ---- 仿真 ----

class SimulationError(GridOSError):
    """仿真框架错误"""
    pass


class ScenarioParseError(SimulationError):
    """场景文件解析失败"""

    def __init__(self, message: str, line: Optional[int] = None, field: Optional[str] = None):
        location = []
        if line is not None:
            location.append(f"第 {line} 行")
        if field:
            location.append(f"字段 {field}")
        prefix = f"[{', '.join(location)}] " if location else ""
        super().__init__(f"{prefix}{message}")
        self.line = line
        self.field = field


class ScenarioValidationError(SimulationError):
    """场景引用校验失败"""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class AlreadyFailed(SimulationError):
    pass


class TooFewSubGrids(SimulationError):
    pass


class EmitError(SimulationError):
    """结果写出失败"""
    pass


class InvariantViolation(SimulationError):
    """调试模式下的不变量检查失败"""
    pass
