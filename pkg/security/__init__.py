# gridos/security/__init__.py
"""
资源提供方安全模块
"""
from .policy import (AdmissionDecision, DenyReason, PolicyRegistry, ResourceAxis, SharingPolicy,
                     ViolationAction, check_admission)
from .accounting import (AccessDeniedRecord, AuditLog, UsageAccountant, UsageRecord,
                         ViolationEvent, account_tick, enforce, record_usage)
from .protected_memory import (AccessOutcome, HostLocal, JobAccessor, ProtectedMemory,
                               ProtectedRegion, access_protected)

__all__ = [
    'AdmissionDecision',
    'DenyReason',
    'PolicyRegistry',
    'ResourceAxis',
    'SharingPolicy',
    'ViolationAction',
    'check_admission',
    'AccessDeniedRecord',
    'AuditLog',
    'UsageAccountant',
    'UsageRecord',
    'ViolationEvent',
    'account_tick',
    'enforce',
    'record_usage',
    'AccessOutcome',
    'HostLocal',
    'JobAccessor',
    'ProtectedMemory',
    'ProtectedRegion',
    'access_protected',
]
