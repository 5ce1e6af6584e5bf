# gridos/core/__init__.py
"""
Core模块
网络模型、发现服务、资源代理和线程迁移
"""

from .errors import GridOSError
from .net_model import (LinkMetrics, NetworkTopology, RankCriterion, TopologyGenSpec,
                        estimate_bandwidth, generate_topology, nearest_peer, rank_peers)
from .events import EventKind, EventTrace, GridEvent
from .timing import EventQueue, SimClock, TickSchedule
from .resources import HostUsage, JobRequirements, ResourceAdvertisement, ResourceUsage
from .discovery import (OverlayState, PendingDelivery, SubGrid, deliver_propagation, form_overlay,
                        join_peer, propagate, resource_view, send_round)
from .broker import BrokerWeights, JobDescriptor, ScheduleDecision, schedule_job, select_optimum
from .workloads import TaskSpec, make_task, run_local_reference
from .migration import GridThreadId, ProcessManager, ThreadImage, run_workload

__all__ = [
    'GridOSError',
    'LinkMetrics',
    'NetworkTopology',
    'RankCriterion',
    'TopologyGenSpec',
    'estimate_bandwidth',
    'generate_topology',
    'nearest_peer',
    'rank_peers',
    'EventKind',
    'EventTrace',
    'GridEvent',
    'EventQueue',
    'SimClock',
    'TickSchedule',
    'HostUsage',
    'JobRequirements',
    'ResourceAdvertisement',
    'ResourceUsage',
    'OverlayState',
    'SubGrid',
    'form_overlay',
    'join_peer',
    'propagate',
    'send_round',
    'deliver_propagation',
    'PendingDelivery',
    'resource_view',
    'BrokerWeights',
    'JobDescriptor',
    'ScheduleDecision',
    'schedule_job',
    'select_optimum',
    'TaskSpec',
    'make_task',
    'run_local_reference',
    'GridThreadId',
    'ProcessManager',
    'ThreadImage',
    'run_workload',
]
