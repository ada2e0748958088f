"""Occupancy, conservation and bound audits for the allocator and its stack."""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable

from ..allocator import Allocator
from ..batch import NEXT, Batch
from ..memory import ACCESS_KINDS, NIL, Event
from ..psim import STEP_UNITS, unit_bound

AVAILABLE = "available"
LIVE = "live"
NODE = "internal-node"
EXCLUDED = "excluded"

_TRANSITIONS = {
    "alloc": (AVAILABLE, LIVE),
    "free": (LIVE, AVAILABLE),
    "node_alloc": (AVAILABLE, NODE),
    "node_free": (NODE, AVAILABLE),
}


class OccupancyOracle:
    """Per-block ownership replayed from allocation events.

    Also enforces the freed-node read rule: once a process has read a block
    that is not currently a stack node, its next validation must fail, and it
    may not read any other block or attempt an SC before that.
    """

    def __init__(self, m: int, nodes: Iterable[int] = (), excluded: Iterable[int] = ()) -> None:
        self.state = [AVAILABLE] * m
        for b in nodes:
            self.state[b] = NODE
        for b in excluded:
            self.state[b] = EXCLUDED
        self.violations: list[str] = []
        self._unsafe: dict[int, int] = {}
        self.unsafe_reads = 0

    @classmethod
    def for_allocator(cls, alloc: Allocator) -> "OccupancyOracle":
        return cls(alloc.cfg.m, alloc.initial_nodes, alloc.leftover)

    def live(self) -> list[int]:
        return [b for b, s in enumerate(self.state) if s == LIVE]

    def feed(self, ev: Event, index: int = -1) -> None:
        kind = ev.kind
        if kind in _TRANSITIONS:
            want, new = _TRANSITIONS[kind]
            blk = ev.cell
            if not 0 <= blk < len(self.state):
                self._bad(index, f"{kind} of invalid block {blk} by process {ev.pid}")
                return
            have = self.state[blk]
            if have != want:
                self._bad(index, f"{kind} of block {blk} by process {ev.pid} while {have}")
            self.state[blk] = new
        elif kind == "bad_deref":
            self._bad(index, f"process {ev.pid} dereferenced invalid reference {ev.cell}")
        elif kind == "deref":
            pending = self._unsafe.get(ev.pid)
            if pending is not None and pending != ev.cell:
                self._bad(index, f"process {ev.pid} followed a pointer read from freed block {pending}")
            if self.state[ev.cell] != NODE and pending is None:
                self._unsafe[ev.pid] = ev.cell
                self.unsafe_reads += 1
        elif kind in ("vl", "sc", "ll") and ev.pid in self._unsafe:
            blk = self._unsafe.pop(ev.pid)
            if kind != "vl" or ev.value:
                self._bad(index, f"process {ev.pid} read freed block {blk} and then ran a {kind} "
                          f"that {'succeeded' if ev.value else 'did not validate it'}")

    def _bad(self, index: int, msg: str) -> None:
        self.violations.append(f"event {index}: {msg}" if index >= 0 else msg)


def audit_occupancy(trace: Iterable[Event], oracle: OccupancyOracle) -> list[str]:
    for i, ev in enumerate(trace):
        oracle.feed(ev, i)
    return list(oracle.violations)


@dataclass
class ConservationReport:
    classes: dict[int, str] = field(default_factory=dict)
    violations: list[str] = field(default_factory=list)
    counts: dict[str, int] = field(default_factory=dict)
    node_surplus: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def audit_conservation(
    alloc: Allocator, live: Iterable[int] = (), held_batches: Iterable[int] = ()
) -> ConservationReport:
    """Classify every arena block exactly once at a quiescent point.

    ``live`` are user-owned blocks, ``held_batches`` are heads of full batches
    owned by a test harness outside the allocator.
    """
    rep = ConservationReport()
    arena, ell = alloc.arena, alloc.ell

    def claim(blk: int, cls: str) -> None:
        if not arena.valid(blk):
            rep.violations.append(f"{cls} chain reaches invalid reference {blk}")
            return
        prev = rep.classes.get(blk)
        if prev is not None:
            rep.violations.append(f"block {blk} is both {prev} and {cls}")
            return
        rep.classes[blk] = cls

    def claim_batch(batch: Batch, cls: str) -> None:
        n = 0
        for blk in batch.blocks():
            claim(blk, cls)
            n += 1
        if n != batch.count:
            rep.violations.append(f"{cls} batch at {batch.head} has {n} blocks, expected {batch.count}")

    for pid, pool in enumerate(alloc.pools):
        if pool.delayed is not None:
            rep.violations.append(f"process {pid} still has {pool.delayed!r} in flight")
        claim_batch(pool.current, f"private[{pid}]")
        for b in pool.local.batches():
            claim_batch(b, f"private[{pid}]")
    if alloc.shared.inflight_nodes():
        rep.violations.append("stack attempt still in flight")
    try:
        nodes = alloc.shared.reachable_nodes()
    except ValueError as exc:
        rep.violations.append(str(exc))
        nodes = []
    for node in nodes:
        claim(node, "stack-node")
        claim_batch(Batch(arena, ell, arena.get(node, 1), ell), "shared")
    for blk in live:
        claim(blk, "live")
    for head in held_batches:
        claim_batch(Batch(arena, ell, head, ell), "held")
    for blk in alloc.leftover:
        claim(blk, "excluded")
    missing = [b for b in range(alloc.cfg.m) if b not in rep.classes]
    if missing:
        rep.violations.append(f"{len(missing)} blocks unaccounted for, first {missing[:5]}")
    for cls in rep.classes.values():
        key = cls.split("[")[0]
        rep.counts[key] = rep.counts.get(key, 0) + 1
    rep.node_surplus = alloc.node_balance() - len(nodes)
    return rep


@dataclass
class BoundsReport:
    p: int
    ell: int
    max_op_allocs: int = 0
    max_op_frees: int = 0
    max_op_units: int = 0
    max_step_accesses: int = 0
    max_delayed_steps: int = 0
    max_inflight: int = 0
    private_range: tuple[int, int] | None = None
    num_batches_seen: set[int] = field(default_factory=set)
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def audit_bounds(trace: Iterable[Event], p: int, ell: int, costs=()) -> BoundsReport:
    """Check per-operation and per-step cost bounds from a trace.

    ``costs`` are the :class:`~fixpool.psim.OpCost` records of completed stack
    operations. The trace supplies per-step access counts (between
    ``step_begin``/``step_end`` markers), delayed-op step totals, the number
    of concurrently pending delayed ops per process, and the private pool
    size and ``num_batches`` sampled at operation boundaries.
    """
    rep = BoundsReport(p, ell)
    for c in costs:
        rep.max_op_allocs = max(rep.max_op_allocs, c.allocs)
        rep.max_op_frees = max(rep.max_op_frees, c.frees)
        rep.max_op_units = max(rep.max_op_units, c.units)
        if c.allocs > 2 * p or c.frees > 2 * p:
            rep.violations.append(f"stack op by {c.pid}: {c.allocs} node allocs, {c.frees} node frees > 2p")
        if c.units > unit_bound(p):
            rep.violations.append(f"stack op by {c.pid}: {c.units} units > {unit_bound(p)}")
    in_step: dict[int, int] = {}
    pending: dict[int, int] = defaultdict(int)
    lo, hi = None, None
    for i, ev in enumerate(trace):
        kind = ev.kind
        if ev.pid in in_step and kind in ACCESS_KINDS:
            in_step[ev.pid] += 1
        if kind == "step_begin":
            in_step[ev.pid] = 0
        elif kind == "step_end":
            n = in_step.pop(ev.pid, 0)
            rep.max_step_accesses = max(rep.max_step_accesses, n)
            if n > STEP_UNITS:
                rep.violations.append(f"event {i}: step by {ev.pid} made {n} shared accesses > {STEP_UNITS}")
        elif kind in ("begin_push", "begin_pop"):
            pending[ev.pid] += 1
            rep.max_inflight = max(rep.max_inflight, pending[ev.pid])
            if pending[ev.pid] > 1:
                rep.violations.append(f"event {i}: process {ev.pid} has two delayed ops in flight")
        elif kind == "delayed_done":
            pending[ev.pid] -= 1
            rep.max_delayed_steps = max(rep.max_delayed_steps, ev.value)
            if ev.value > p:
                rep.violations.append(f"event {i}: delayed op by {ev.pid} needed {ev.value} steps > p")
        elif kind == "boundary":
            size, nb = ev.cell, ev.value
            lo = size if lo is None else min(lo, size)
            hi = size if hi is None else max(hi, size)
            rep.num_batches_seen.add(nb)
            if not 1 <= size <= 3 * ell:
                rep.violations.append(f"event {i}: process {ev.pid} holds {size} private blocks")
            if nb not in (1, 2):
                rep.violations.append(f"event {i}: process {ev.pid} has num_batches={nb}")
    if lo is not None:
        rep.private_range = (lo, hi)
    return rep


def chain_length(alloc: Allocator, head: int, limit: int) -> int:
    n = 0
    while head != NIL and n <= limit:
        n += 1
        head = alloc.arena.get(head, NEXT)
    return n
