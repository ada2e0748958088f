"""Wait-free fixed-size block allocator with a simulated-memory model checker."""

from .allocator import Allocator, ConfigError, PoolConfig, PoolInvariantError
from .memory import NIL, NativeMemory, SimulatedMemory
from .psim import POP, PUSH, STEP_UNITS, PSimStack, unit_bound

__all__ = [
    "NIL",
    "POP",
    "PUSH",
    "STEP_UNITS",
    "Allocator",
    "ConfigError",
    "NativeMemory",
    "PSimStack",
    "PoolConfig",
    "PoolInvariantError",
    "SimulatedMemory",
    "unit_bound",
]
