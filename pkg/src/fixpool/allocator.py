"""Constant-time fixed-size allocate/free on top of private pools.

Each process owns a ``current`` batch plus a stack of full ``local`` batches.
``num_batches`` counts the full local batches plus one while a refill pop from
the shared pool is in flight; it stays in {1, 2} in normal operation. When the
private pool runs low a delayed pop is started, when it grows to three batches
a delayed push is started, and every allocate/free advances the (single)
in-flight shared-pool operation by one step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Generator

from .batch import Arena, Batch, BatchStack
from .memory import NIL, Memory, NativeMemory, drive
from .psim import POP, PUSH, DelayedOp, PSimStack


class ConfigError(ValueError):
    pass


class PoolInvariantError(RuntimeError):
    """A private pool ran dry inside a shared-pool operation."""


@dataclass(frozen=True)
class PoolConfig:
    p: int
    k: int = 2
    ell: int | None = None  # defaults to 3p
    m: int = 4096

    @property
    def batch(self) -> int:
        return 3 * self.p if self.ell is None else self.ell

    @property
    def initial_private(self) -> int:
        ell = self.batch
        return 2 * ell + math.ceil(ell / 2)

    @property
    def min_blocks(self) -> int:
        return self.p * self.initial_private + self.batch

    def validate(self) -> None:
        if self.p < 1:
            raise ConfigError(f"need at least one process, got p={self.p}")
        if self.k < 2:
            raise ConfigError(f"blocks need k >= 2 words, got k={self.k}")
        if self.batch < 3 * self.p:
            raise ConfigError(f"batch size ell={self.batch} must be at least 3p={3 * self.p}")
        if self.m < self.min_blocks:
            raise ConfigError(f"m={self.m} is below the minimum {self.min_blocks} for p={self.p}, ell={self.batch}")


@dataclass
class PoolStats:
    allocations: int = 0
    frees: int = 0
    exhausted: int = 0
    node_allocs: int = 0
    node_frees: int = 0
    delayed_started: int = 0
    delayed_completed: int = 0
    empty_refills: int = 0
    max_steps: int = 0  # delayed steps needed by the slowest shared op
    max_private: int = 0  # largest private block count seen mid-operation


@dataclass
class ProcessPool:
    current: Batch
    local: BatchStack
    num_batches: int = 2
    delayed: DelayedOp | None = None
    stats: PoolStats = field(default_factory=PoolStats)

    def private_blocks(self) -> int:
        return self.current.count + self.local.size * self.local.capacity


class Allocator:
    """Fixed-size block allocator for ``p`` processes over an arena of ``m`` blocks.

    Process ``pid`` may only be driven by one thread at a time; distinct pids
    run concurrently. ``allocate`` returns a block index or None when the
    shared pool is exhausted.
    """

    def __init__(
        self,
        cfg: PoolConfig,
        mem: Memory | None = None,
        *,
        guard_reads: bool = True,
        keep_costs: bool = False,
        tag_bits: int | None = None,
    ) -> None:
        cfg.validate()
        self.cfg = cfg
        self.p = cfg.p
        self.ell = cfg.batch
        self.mem = mem if mem is not None else NativeMemory()
        self.arena = Arena(self.mem, cfg.m, cfg.k)
        self.shared = PSimStack(
            self.mem,
            self.arena,
            cfg.p,
            self.allocate_private,
            self.free_private,
            guard_reads=guard_reads,
            tag_bits=tag_bits,
            keep_costs=keep_costs,
        )
        self.pools: list[ProcessPool] = []
        self._distribute()

    def _distribute(self) -> None:
        ell, arena = self.ell, self.arena
        free = iter(range(self.cfg.m))

        def fill(n: int) -> Batch:
            b = Batch(arena, ell)
            for _ in range(n):
                b.push(next(free))
            return b

        for _ in range(self.p):
            local = BatchStack(arena, ell)
            local.push(fill(ell))
            local.push(fill(ell))
            self.pools.append(ProcessPool(fill(math.ceil(ell / 2)), local))

        # every shared entry costs a full batch plus one node block
        remaining = self.cfg.m - self.p * self.cfg.initial_private
        entries = []
        for _ in range(remaining // (ell + 1)):
            batch = fill(ell)
            entries.append((next(free), batch.head))
        self.shared.preload(entries)
        self.initial_nodes = [node for node, _ in entries]
        self.initial_shared_batches = len(entries)
        self.leftover = list(free)
        self.effective_capacity = self.cfg.m - len(self.leftover)

    # -- public interface ---------------------------------------------------

    def allocate(self, pid: int) -> int | None:
        pool = self.pools[pid]
        if pool.delayed is None and pool.current.count and pool.num_batches:
            pool.stats.allocations += 1
            return pool.current.pop()
        return drive(self.allocate_gen(pid))

    def free(self, pid: int, blk: int) -> None:
        pool = self.pools[pid]
        if pool.delayed is None and not pool.current.full():
            pool.stats.frees += 1
            pool.current.push(blk)
            return
        drive(self.free_gen(pid, blk))

    # The delayed step runs before the batch bookkeeping: its node allocs and
    # frees go through the same current batch and could otherwise empty it
    # right before the user's pop, or fill it right before the user's push.

    def allocate_gen(self, pid: int) -> Generator[None, None, int | None]:
        pool = self.pools[pid]
        yield from self.run_delayed_step(pid)
        if pool.num_batches == 0 and pool.delayed is None and pool.current.count >= 3 * self.p:
            # starved after an empty refill; enough blocks to cover another try
            self._begin(pool, POP, NIL, pid)
            pool.num_batches = 1
        if pool.current.is_empty():
            if pool.local.is_empty():
                pool.stats.exhausted += 1
                return None
            pool.current = pool.local.pop()
            if pool.num_batches == 1:
                self._begin(pool, POP, NIL, pid)
            else:
                pool.num_batches -= 1
        pool.stats.allocations += 1
        return pool.current.pop()

    def free_gen(self, pid: int, blk: int) -> Generator[None, None, None]:
        pool = self.pools[pid]
        yield from self.run_delayed_step(pid)
        if pool.current.full():
            if pool.num_batches == 2:
                self._begin(pool, PUSH, pool.current.head, pid)
            else:
                pool.num_batches += 1
                pool.local.push(pool.current)
            pool.current = Batch(self.arena, self.ell)
        pool.stats.frees += 1
        pool.current.push(blk)

    # -- internal pool access used by the shared stack ---------------------

    def allocate_private(self, pid: int) -> int:
        pool = self.pools[pid]
        if pool.current.is_empty():
            if pool.local.is_empty():
                raise PoolInvariantError(f"process {pid} has no private block for a stack node")
            pool.current = pool.local.pop()
            pool.num_batches -= 1
        pool.stats.node_allocs += 1
        self.mem.note(pid, "node_alloc", pool.current.head)
        return pool.current.pop()

    def free_private(self, pid: int, blk: int) -> None:
        pool = self.pools[pid]
        if pool.current.full():
            pool.num_batches += 1
            pool.local.push(pool.current)
            pool.current = Batch(self.arena, self.ell)
        pool.stats.node_frees += 1
        self.mem.note(pid, "node_free", blk)
        pool.current.push(blk)
        n = pool.private_blocks()
        if n > pool.stats.max_private:
            pool.stats.max_private = n

    # -- delayed operations -------------------------------------------------

    def _begin(self, pool: ProcessPool, kind: int, arg: int, pid: int) -> None:
        if pool.delayed is not None:
            raise PoolInvariantError(f"process {pid} already has {pool.delayed!r} in flight")
        pool.stats.delayed_started += 1
        self.mem.note(pid, "begin_" + ("push" if kind == PUSH else "pop"), arg)
        pool.delayed = self.shared.begin_delayed(kind, arg, pid)

    def run_delayed_step(self, pid: int) -> Generator[None, None, None]:
        pool = self.pools[pid]
        d = pool.delayed
        if d is None:
            return
        self.mem.note(pid, "step_begin", d.steps)
        finished = yield from d.step_gen()
        self.mem.note(pid, "step_end", d.steps)
        if not finished:
            return
        pool.delayed = None
        pool.stats.delayed_completed += 1
        pool.stats.max_steps = max(pool.stats.max_steps, d.steps)
        self.mem.note(pid, "delayed_done", d.kind, d.steps)
        if d.kind == POP:
            if d.result == NIL:
                pool.num_batches -= 1
                pool.stats.empty_refills += 1
            else:
                pool.local.push(Batch(self.arena, self.ell, d.result, self.ell))

    def drain(self) -> None:
        """Finish every in-flight delayed operation (quiescence for audits)."""
        for pid, pool in enumerate(self.pools):
            while pool.delayed is not None:
                drive(self.run_delayed_step(pid))

    # -- reporting ------------------------------------------------------------

    def node_balance(self) -> int:
        """Stack nodes allocated and not yet freed (including initial ones)."""
        allocs = sum(pool.stats.node_allocs for pool in self.pools)
        frees = sum(pool.stats.node_frees for pool in self.pools)
        return len(self.initial_nodes) + allocs - frees

    def unreclaimed_surplus(self) -> int:
        """Unfreed stack nodes that are not reachable from the published top."""
        return self.node_balance() - len(self.shared.reachable_nodes())

    def metadata_words(self) -> int:
        # shared-stack metadata plus per-process pool state (current head and
        # count, local top and size, num_batches, toggle, index, link context)
        return self.shared.metadata_words() + 8 * self.p

    def counters(self) -> dict[str, int]:
        total: dict[str, int] = {}
        for pool in self.pools:
            for name, value in vars(pool.stats).items():
                if name.startswith("max_"):
                    total[name] = max(total.get(name, 0), value)
                else:
                    total[name] = total.get(name, 0) + value
        return total
