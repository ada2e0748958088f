"""Native-backend workloads: threaded stress, adversarial capacity, throughput."""

from __future__ import annotations

import math
import random
import sys
import threading
import time
from collections import Counter, deque
from dataclasses import dataclass, field

from .allocator import Allocator, PoolConfig
from .batch import LINK, NEXT
from .checker.audit import audit_conservation


@dataclass
class StressReport:
    p: int
    ops: int
    seed: int
    violations: list[str] = field(default_factory=list)
    seconds: float = 0.0
    max_steps: int = 0
    max_op_allocs: int = 0
    max_op_frees: int = 0
    max_op_units: int = 0
    private_range: tuple[int, int] = (0, 0)
    num_batches_seen: set[int] = field(default_factory=set)
    node_surplus: int = 0
    conserved: bool = False
    exhausted: int = 0
    counters: dict[str, int] = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def throughput(self) -> float:
        return self.p * self.ops / self.seconds if self.seconds else 0.0


def stress(
    cfg: PoolConfig,
    ops: int,
    seed: int,
    *,
    live_cap: int | None = None,
    handoff: float = 0.05,
    switch_interval: float = 5e-5,
    guard_reads: bool = True,
) -> StressReport:
    """Run ``ops`` mixed allocate/free calls on each of ``cfg.p`` threads.

    Occupancy is tracked in a dict keyed by block: ``setdefault`` claims a
    block for a fresh token and ``pop`` releases it, both atomic under the
    interpreter lock, so a block handed out twice or freed while available is
    caught. Every allocated block carries its token in both words and is
    verified before it is freed. With probability ``handoff`` a thread passes
    a block to another thread's queue instead of freeing it.
    """
    alloc = Allocator(cfg, guard_reads=guard_reads)
    p, ell = cfg.p, alloc.ell
    if live_cap is None:
        live_cap = max(4 * ell, (alloc.effective_capacity - 12 * p * ell) // p)
    owner: dict[int, int] = {}
    inbox = [deque() for _ in range(p)]
    rep = StressReport(p, ops, seed)
    errors: list[str] = []
    lo, hi = [math.inf] * p, [0] * p
    nbs: list[set[int]] = [set() for _ in range(p)]
    start = threading.Barrier(p)
    words, arena = alloc.mem.words, alloc.arena

    def worker(pid: int) -> None:
        rng = random.Random(seed * 1_000_003 + pid)
        pool = alloc.pools[pid]
        mine: list[int] = []
        box = inbox[pid]
        seq = 0
        target = rng.randrange(live_cap)
        allocate, free = alloc.allocate, alloc.free
        start.wait()
        for i in range(ops):
            if i % ell == 0:
                target = rng.randrange(live_cap)
            want_alloc = len(mine) < target if rng.random() < 0.8 else rng.random() < 0.5
            if box and not want_alloc:
                blk = box.popleft()
            elif want_alloc or not mine:
                blk = allocate(pid)
                if blk is None:
                    rep.exhausted += 1
                else:
                    seq += 1
                    token = (seq << 8) | pid
                    prev = owner.setdefault(blk, token)
                    if prev != token:
                        errors.append(f"block {blk} allocated to {pid} while live for {prev & 0xFF}")
                    else:
                        words[arena.addr(blk, NEXT)] = token
                        words[arena.addr(blk, LINK)] = token
                        mine.append(blk)
                blk = None
            else:
                blk = mine.pop(rng.randrange(len(mine)))
                if handoff and rng.random() < handoff:
                    inbox[rng.randrange(p)].append(blk)
                    blk = None
            if blk is not None:
                token = owner.pop(blk, None)
                if token is None:
                    errors.append(f"free of available block {blk} by {pid}")
                elif words[arena.addr(blk, NEXT)] != token or words[arena.addr(blk, LINK)] != token:
                    errors.append(f"block {blk} was overwritten while live")
                free(pid, blk)
            n = pool.current.count + pool.local.size * ell
            if n < lo[pid]:
                lo[pid] = n
            if n > hi[pid]:
                hi[pid] = n
            nbs[pid].add(pool.num_batches)
        while box:
            blk = box.popleft()
            owner.pop(blk, None)
            free(pid, blk)
        for blk in mine:
            owner.pop(blk, None)
            free(pid, blk)

    old = sys.getswitchinterval()
    sys.setswitchinterval(switch_interval)
    try:
        threads = [threading.Thread(target=worker, args=(pid,), name=f"fixpool-{pid}") for pid in range(p)]
        t0 = time.perf_counter()
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        rep.seconds = time.perf_counter() - t0
    finally:
        sys.setswitchinterval(old)

    # stray handoffs queued after their target thread finished
    for pid in range(p):
        while inbox[pid]:
            blk = inbox[pid].popleft()
            owner.pop(blk, None)
            alloc.free(pid, blk)
    alloc.drain()
    rep.violations = errors
    if owner:
        rep.violations.append(f"{len(owner)} blocks still marked live after shutdown")
    cons = audit_conservation(alloc)
    rep.violations += cons.violations
    rep.conserved = cons.ok
    rep.node_surplus = cons.node_surplus
    if rep.node_surplus > 2 * p * p:
        rep.violations.append(f"{rep.node_surplus} unreachable unfreed nodes > 2p^2")
    _fill_cost_report(rep, alloc)
    rep.private_range = (int(min(lo)), max(hi))
    rep.num_batches_seen = set().union(*nbs)
    if not rep.exhausted:
        if rep.private_range[0] < 1 or rep.private_range[1] > 3 * ell:
            rep.violations.append(f"private pool size left [1, 3l]: {rep.private_range}")
        if not rep.num_batches_seen <= {1, 2}:
            rep.violations.append(f"num_batches outside {{1, 2}}: {sorted(rep.num_batches_seen)}")
    return rep


def _fill_cost_report(rep, alloc: Allocator) -> None:
    p = alloc.p
    c = alloc.counters()
    rep.counters = c
    rep.max_steps = c["max_steps"]
    worst = alloc.shared.worst
    rep.max_op_allocs = max(w.allocs for w in worst)
    rep.max_op_frees = max(w.frees for w in worst)
    rep.max_op_units = max(w.units for w in worst)
    if rep.max_steps > p:
        rep.violations.append(f"a delayed op needed {rep.max_steps} steps > p")
    if rep.max_op_allocs > 2 * p or rep.max_op_frees > 2 * p:
        rep.violations.append(f"stack op used {rep.max_op_allocs} allocs / {rep.max_op_frees} frees > 2p")


@dataclass
class CapacityReport:
    m: int
    p: int
    live: int
    node_overhead: int  # s: stack nodes allocated and not freed at exhaustion
    stranded: int  # blocks held in other processes' pools or pending pushes
    leftover: int  # blocks too few to form an initial shared entry
    bound: int  # m - 9p^2 - s

    @property
    def ok(self) -> bool:
        return self.live >= self.bound and self.node_overhead <= 2 * self.p**2


def capacity(cfg: PoolConfig, seed: int = 0) -> CapacityReport:
    """Allocate from process 0 until exhausted while the others hoard.

    Each other process first fills its private pool to 3l blocks and then
    starts a delayed push that it never advances, so one more batch is out of
    circulation. The blocks they free come from process 0, in a seeded order.
    """
    alloc = Allocator(cfg)
    p, ell = cfg.p, alloc.ell
    rng = random.Random(seed)
    live: list[int] = []

    def take() -> int:
        blk = alloc.allocate(0)
        if blk is None:
            raise RuntimeError("exhausted while setting up the adversary")
        return blk

    for pid in range(1, p):
        pool = alloc.pools[pid]
        while pool.delayed is None:
            batch = [take() for _ in range(ell)]
            rng.shuffle(batch)
            for blk in batch:
                if pool.delayed is not None:
                    live.append(blk)
                    continue
                alloc.free(pid, blk)
    while True:
        blk = alloc.allocate(0)
        if blk is None:
            break
        live.append(blk)
    stranded = sum(alloc.pools[pid].private_blocks() for pid in range(1, p)) + ell * (p - 1)
    s = alloc.node_balance()
    return CapacityReport(cfg.m, p, len(live), s, stranded, len(alloc.leftover), cfg.m - 9 * p * p - s)


@dataclass
class BenchRow:
    p: int
    ops: int
    seconds: float
    throughput: float
    latency_ns: Counter  # power-of-two bucket upper bound -> count


def bench(cfg: PoolConfig, ops: int, seed: int, *, sample_every: int = 16) -> BenchRow:
    """Throughput of a threaded allocate/free mix and a sampled latency histogram."""
    alloc = Allocator(cfg)
    p, ell = cfg.p, alloc.ell
    hist: Counter = Counter()
    lock = threading.Lock()
    start = threading.Barrier(p)
    live_cap = max(4 * ell, (alloc.effective_capacity - 12 * p * ell) // p)
    clock = time.perf_counter_ns

    def worker(pid: int) -> None:
        rng = random.Random(seed * 7919 + pid)
        mine: list[int] = []
        local: Counter = Counter()
        allocate, free = alloc.allocate, alloc.free
        target = rng.randrange(live_cap)
        start.wait()
        for i in range(ops):
            if i % ell == 0:
                target = rng.randrange(live_cap)
            timed = i % sample_every == 0
            t0 = clock() if timed else 0
            if len(mine) < target or not mine:
                blk = allocate(pid)
                if blk is not None:
                    mine.append(blk)
            else:
                free(pid, mine.pop())
            if timed:
                dt = clock() - t0
                local[1 << max(dt - 1, 0).bit_length()] += 1
        with lock:
            hist.update(local)

    threads = [threading.Thread(target=worker, args=(pid,)) for pid in range(p)]
    t0 = time.perf_counter()
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    secs = time.perf_counter() - t0
    return BenchRow(p, ops, secs, p * ops / secs, hist)


__all__ = ["BenchRow", "CapacityReport", "StressReport", "bench", "capacity", "stress"]
