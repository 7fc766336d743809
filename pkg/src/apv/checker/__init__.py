"""Formal branch: role projection, executability and bounded attack search."""

from .executability import NotExecutable, executability_check
from .projection import (
    CommitEvent, ReceiveStep, RoleScript, RunningEvent, SecretClaim, SendStep, project_roles,
)
from .runtime import Claim, Violation
from .search import (
    Attack, Exploration, NotExecutableSpec, SafeAtBound, SearchBudgetExceeded, SearchConfig,
    SearchStats, role_assignments, search,
)
from .traces import (
    Accept, AttackTrace, IntruderDeliver, NetworkDeliver, Reject, SessionSend, verify_trace,
)

__all__ = [
    "Accept", "Attack", "AttackTrace", "Claim", "CommitEvent", "Exploration", "IntruderDeliver",
    "NetworkDeliver", "NotExecutable", "NotExecutableSpec", "ReceiveStep", "Reject", "RoleScript",
    "RunningEvent", "SafeAtBound", "SearchBudgetExceeded", "SearchConfig", "SearchStats",
    "SecretClaim", "SendStep", "SessionSend", "Violation", "executability_check", "project_roles",
    "role_assignments", "search", "verify_trace",
]
