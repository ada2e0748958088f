"""Deterministic verification harness: schedules, histories and audits."""

from .audit import (
    OccupancyOracle,
    audit_bounds,
    audit_conservation,
    audit_occupancy,
)
from .explore import Bounds, Report, enumerate_schedules, explore, read_schedule, write_schedule
from .history import History, MalformedHistory, Operation
from .linearizability import StackModel, Verdict, brute_force, check_linearizable
from .subjects import AllocatorSubject, StackSubject

__all__ = [
    "AllocatorSubject",
    "Bounds",
    "History",
    "MalformedHistory",
    "OccupancyOracle",
    "Operation",
    "Report",
    "StackModel",
    "StackSubject",
    "Verdict",
    "audit_bounds",
    "audit_conservation",
    "audit_occupancy",
    "brute_force",
    "check_linearizable",
    "enumerate_schedules",
    "explore",
    "read_schedule",
    "write_schedule",
]
