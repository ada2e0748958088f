"""Checkable workloads for the schedule explorer.

Each subject builds a fresh allocator on a :class:`SimulatedMemory`, runs a
short sequential setup, clears the trace, and then exposes one generator per
process. ``check`` runs every oracle on the finished execution.
"""

from __future__ import annotations

import math
from typing import Sequence

from ..allocator import Allocator, PoolConfig
from ..batch import LINK, NEXT, Batch
from ..memory import NIL, Program, Run, SimulatedMemory, drive
from ..psim import POP, PUSH
from .audit import OccupancyOracle, audit_bounds, audit_conservation, audit_occupancy
from .history import History, MalformedHistory
from .linearizability import StackModel, check_linearizable

POISON = 0xDEAD_BEEF  # written by users into allocated blocks; never a valid block


def _parse_stack_script(script: str | Sequence[str]) -> list[int]:
    out = []
    for op in script:
        if op in ("u", "push"):
            out.append(PUSH)
        elif op in ("o", "pop"):
            out.append(POP)
        else:
            raise ValueError(f"unknown stack op {op!r}; use 'u' (push) or 'o' (pop)")
    return out


def _arena_size(p: int, ell: int, entries: int) -> int:
    return p * (2 * ell + math.ceil(ell / 2)) + (ell + 1) * entries


class StackSubject:
    """Concurrent push/pop on the allocator's shared stack.

    ``scripts[pid]`` is a string over ``u`` (push) and ``o`` (pop). Pushed
    values are real batches taken out of the stack during setup, so the
    conservation audit applies; ``preload`` more batches stay in the stack.
    """

    def __init__(self, scripts: Sequence[str], *, guard_reads: bool = True, preload: int = 2, ell: int | None = None):
        self.p = p = len(scripts)
        self.scripts = [_parse_stack_script(s) for s in scripts]
        pushes = sum(s.count(PUSH) for s in self.scripts)
        ell = 3 * p if ell is None else ell
        self.mem = SimulatedMemory()
        cfg = PoolConfig(p, ell=ell, m=_arena_size(p, ell, pushes + preload))
        self.alloc = Allocator(cfg, self.mem, guard_reads=guard_reads, keep_costs=True)
        stack = self.alloc.shared
        self.held = [drive(stack.pop_gen(0)) for _ in range(pushes)]
        assert NIL not in self.held
        self.args: list[list[int]] = []
        it = iter(self.held)
        for s in self.scripts:
            self.args.append([next(it) if f == PUSH else NIL for f in s])
        self.model = StackModel(tuple(reversed(stack.contents())))
        self.oracle = OccupancyOracle(cfg.m, stack.reachable_nodes(), self.alloc.leftover)
        self.mem.trace.clear()
        stack.costs.clear()

    def programs(self) -> list[Program]:
        return [self._program(pid) for pid in range(self.p)]

    def _program(self, pid: int) -> Program:
        mem, stack = self.mem, self.alloc.shared
        out = []
        for func, arg in zip(self.scripts[pid], self.args[pid]):
            mem.note(pid, "invoke", func, arg)
            rv = yield from stack.apply_op(pid, func, arg)
            mem.note(pid, "respond", func, rv)
            out.append(rv)
        return out

    def check(self, run: Run) -> list[str]:
        problems: list[str] = []
        if run.error is not None:
            problems.append(f"process {run.error_pid} raised {run.error!r}")
        trace = self.mem.trace
        try:
            hist = History.from_events(trace)
        except MalformedHistory as exc:
            return problems + [f"malformed history: {exc}"]
        verdict = check_linearizable(hist, self.model)
        if verdict.ok is False:
            problems.append(f"not linearizable; failing prefix ends at event {verdict.failing_prefix}")
        elif verdict.ok is None:
            problems.append("linearizability search inconclusive")
        problems += audit_occupancy(trace, self.oracle)
        self.bounds = audit_bounds(trace, self.p, self.alloc.ell, self.alloc.shared.costs)
        problems += self.bounds.violations
        if run.error is not None:
            return problems
        stack = self.alloc.shared
        applied = stack.snapshot()[1]
        if applied != stack._toggle:
            problems.append(f"announced ops not all applied: {applied} vs {stack._toggle}")
        self.surplus = surplus = self.alloc.unreclaimed_surplus()
        if surplus > 2 * self.p**2:
            problems.append(f"{surplus} unreachable unfreed nodes > 2p^2")
        popped = [rv for res in run.results.values() for rv in res if rv not in (NIL, None)]
        pushed = [a for pid in range(self.p) for f, a in zip(self.scripts[pid], self.args[pid]) if f == PUSH]
        held = (set(pushed) | set(popped)) - set(stack.contents())
        self.conservation = audit_conservation(self.alloc, (), sorted(held))
        problems += self.conservation.violations
        return problems


class AllocatorSubject:
    """Concurrent allocate/free through delayed shared-pool operations.

    ``scripts[pid]`` is a string over ``a`` (allocate) and ``f`` (free). Setup
    sequentially brings each pool to the edge of a refill (if its script starts
    with ``a``) or a spill (``f``), so the first operation starts a delayed
    stack op that later operations advance. Users write :data:`POISON` into
    every block they allocate.
    """

    def __init__(self, scripts: Sequence[str], *, guard_reads: bool = True, ell: int | None = None, spare: int = 1):
        self.p = p = len(scripts)
        for s in scripts:
            if set(s) - {"a", "f"}:
                raise ValueError(f"unknown allocator op in {s!r}; use 'a' or 'f'")
        self.scripts = list(scripts)
        ell = 3 * p if ell is None else ell
        frees = sum(s.count("f") for s in scripts) + 3 * p
        reservoir_batches = math.ceil(frees / ell)
        self.mem = SimulatedMemory()
        cfg = PoolConfig(p, ell=ell, m=_arena_size(p, ell, reservoir_batches + p + spare))
        self.cfg = cfg
        self.alloc = Allocator(cfg, self.mem, guard_reads=guard_reads, keep_costs=True)
        alloc = self.alloc

        reservoir: list[int] = []
        for _ in range(reservoir_batches):
            head = alloc.shared.pop(0)
            reservoir.extend(Batch(alloc.arena, ell, head, ell).blocks())
        live = list(reservoir)
        for pid, s in enumerate(self.scripts):
            pool = alloc.pools[pid]
            if s.startswith("a"):
                while not (pool.current.is_empty() and pool.num_batches == 1):
                    live.append(alloc.allocate(pid))
            elif s.startswith("f"):
                while not (pool.current.full() and pool.num_batches == 2):
                    blk = live.pop()
                    alloc.free(pid, blk)
        alloc.drain()
        self.to_free: list[list[int]] = []
        for s in self.scripts:
            self.to_free.append([live.pop() for _ in range(s.count("f"))])
        self.oracle = OccupancyOracle(cfg.m, alloc.shared.reachable_nodes(), alloc.leftover)
        for blk in live + [b for fs in self.to_free for b in fs]:
            self.oracle.state[blk] = "live"
        self.mem.trace.clear()
        alloc.shared.costs.clear()

    def programs(self) -> list[Program]:
        return [self._program(pid) for pid in range(self.p)]

    def _program(self, pid: int) -> Program:
        mem, alloc = self.mem, self.alloc
        pool = alloc.pools[pid]
        frees = list(self.to_free[pid])
        got = []
        for op in self.scripts[pid]:
            mem.note(pid, "boundary", pool.private_blocks(), pool.num_batches)
            if op == "a":
                blk = yield from alloc.allocate_gen(pid)
                if blk is None:
                    mem.note(pid, "exhausted")
                    continue
                mem.note(pid, "alloc", blk)
                got.append(blk)
                for word in (NEXT, LINK):
                    yield
                    mem.store(alloc.arena.addr(blk, word), pid, POISON)
            else:
                blk = frees.pop()
                mem.note(pid, "free", blk)
                yield from alloc.free_gen(pid, blk)
        mem.note(pid, "boundary", pool.private_blocks(), pool.num_batches)
        return got

    def check(self, run: Run) -> list[str]:
        problems: list[str] = []
        if run.error is not None:
            problems.append(f"process {run.error_pid} raised {run.error!r}")
        trace = self.mem.trace
        if run.error is None:
            self.alloc.drain()
        # drained steps run sequentially and are audited like the rest
        problems += audit_occupancy(trace, self.oracle)
        self.bounds = audit_bounds(trace, self.p, self.alloc.ell, self.alloc.shared.costs)
        problems += self.bounds.violations
        if run.error is not None:
            return problems
        self.surplus = surplus = self.alloc.unreclaimed_surplus()
        if surplus > 2 * self.p**2:
            problems.append(f"{surplus} unreachable unfreed nodes > 2p^2")
        self.conservation = audit_conservation(self.alloc, self.oracle.live())
        problems += self.conservation.violations
        return problems
