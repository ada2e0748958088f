"""Wait-free shared stack of batch references.

The stack is the P-SIM universal construction applied to a sequential linked
stack, with two changes that make it usable inside the allocator:

* Nodes are obtained from, and returned to, the calling process's private
  pool. Between LL and SC every attempt logs the nodes it pushed and popped
  locally; after a failed SC (or an abandoned attempt) the pushed ones are
  freed, after a successful SC the popped ones are.
* Reading ``top.next`` from a local state copy may touch a node that another
  process has already popped and freed. A VL right after the read tells us
  whether that can have happened; if it fails the attempt is abandoned.

All operations are generators that yield right before every unit of work (one
shared access or one private-pool call). That makes them both interleavable by
the simulated scheduler and resumable by :class:`DelayedOp`, which spreads an
operation over at most ``p`` calls of ``STEP_UNITS`` units each.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Generator

from .batch import LINK, NEXT, Arena
from .llsc import LLSCCell
from .memory import NIL, Memory, drive

PUSH = 1
POP = 2
OP_NAMES = {PUSH: "push", POP: "pop"}

_ABANDON = object()


def unit_bound(p: int) -> int:
    """Worst-case units of one push/pop on ``p`` processes.

    3 announce stores, two attempts of
    ``LL + 2(2p+1) copy + VL + p toggles + 8p help + SC + p frees``,
    and 2 loads to read the result when neither SC succeeded.
    """
    return 28 * p + 15


# Units per delayed step. unit_bound(p) <= p * STEP_UNITS for every p >= 1,
# with equality at p = 1.
STEP_UNITS = unit_bound(1)


@dataclass
class ReclaimLog:
    """Nodes touched by the current attempt iteration of one process."""

    pushed: list[int] = field(default_factory=list)
    popped: list[int] = field(default_factory=list)
    to_free: list[int] | None = None

    def owned(self) -> list[int]:
        """Nodes this process must still free or hand over (audit helper)."""
        return list(self.pushed if self.to_free is None else self.to_free)


@dataclass
class OpCost:
    pid: int
    func: int
    units: int = 0
    allocs: int = 0
    frees: int = 0
    sc_ok: int = 0


class PSimStack:
    """Shared stack of words, used as the allocator's shared pool.

    ``node_alloc(pid)`` / ``node_free(pid, blk)`` must serve blocks from the
    private pool of ``pid`` without touching this stack.
    """

    def __init__(
        self,
        mem: Memory,
        arena: Arena,
        p: int,
        node_alloc: Callable[[int], int],
        node_free: Callable[[int, int], None],
        *,
        guard_reads: bool = True,
        tag_bits: int | None = None,
        keep_costs: bool = False,
    ) -> None:
        self.mem = mem
        self.arena = arena
        self.p = p
        self.node_alloc = node_alloc
        self.node_free = node_free
        self.guard_reads = guard_reads
        self.rec_len = 1 + 2 * p  # top, applied[p], rvals[p]
        self.nslots = 2 * (p + 1)
        self.announce = mem.alloc(2 * p, 0)
        self.toggles = mem.alloc(p, 0)
        self.pool = mem.alloc(self.nslots * self.rec_len, 0)
        for slot in range(self.nslots):
            base = self.rec_addr(slot)
            mem.words[base] = NIL
            for a in range(p):
                mem.words[base + 1 + p + a] = NIL
        self.S = LLSCCell(mem, p, initial=2 * p, nvalues=self.nslots, tag_bits=tag_bits)
        self._toggle = [0] * p
        self._index = [0] * p
        self.logs: list[ReclaimLog | None] = [None] * p
        self.costs: list[OpCost] | None = [] if keep_costs else None
        self.worst = [OpCost(pid, 0) for pid in range(p)]

    # -- layout -----------------------------------------------------------

    def rec_addr(self, slot: int) -> int:
        return self.pool + slot * self.rec_len

    def metadata_words(self) -> int:
        """Shared words used besides stack nodes (announce, toggles, records, S)."""
        return 2 * self.p + self.p + self.nslots * self.rec_len + 1

    def preload(self, entries: list[tuple[int, int]]) -> None:
        """Construction-time push of ``(node, data)`` pairs, in push order."""
        base = self.rec_addr(self.S.peek())
        top = self.mem.words[base]
        for node, data in entries:
            self.arena.set(node, LINK, data)
            self.arena.set(node, NEXT, top)
            top = node
        self.mem.words[base] = top

    # -- public operations -------------------------------------------------

    def push(self, batch_ref: int, pid: int) -> None:
        drive(self.apply_op(pid, PUSH, batch_ref))

    def pop(self, pid: int) -> int:
        """Pop the most recent batch reference, or NIL when empty."""
        return drive(self.apply_op(pid, POP, NIL))

    def push_gen(self, batch_ref: int, pid: int) -> Generator[None, None, object]:
        return self.apply_op(pid, PUSH, batch_ref)

    def pop_gen(self, pid: int) -> Generator[None, None, object]:
        return self.apply_op(pid, POP, NIL)

    def begin_delayed(self, kind: int, arg: int, pid: int) -> "DelayedOp":
        return DelayedOp(self, kind, arg, pid)

    def apply_op(self, pid: int, func: int, arg: int) -> Generator[None, None, object]:
        cost = OpCost(pid, func)
        inner = self._apply(pid, func, arg, cost)
        try:
            next(inner)
            while True:
                yield
                cost.units += 1
                next(inner)
        except StopIteration as stop:
            self._account(cost)
            return stop.value

    # -- construction internals -------------------------------------------

    def _apply(self, pid: int, func: int, arg: int, cost: OpCost):
        mem = self.mem
        ann = self.announce + 2 * pid
        yield
        mem.store(ann, pid, func)
        yield
        mem.store(ann + 1, pid, arg)
        t = self._toggle[pid] ^ 1
        self._toggle[pid] = t
        yield
        mem.store(self.toggles + pid, pid, t)
        rv = yield from self._attempt(pid, cost)
        if rv is None:
            # both SCs failed, so some other SC applied our request
            yield
            slot = self.S.read(pid)
            yield
            rv = mem.load(self.rec_addr(slot) + 1 + self.p + pid, pid)
        return rv

    def _attempt(self, pid: int, cost: OpCost):
        mem, S, p, R = self.mem, self.S, self.p, self.rec_len
        result = None
        for _ in range(2):
            log = ReclaimLog()
            self.logs[pid] = log
            yield
            src = self.rec_addr(S.ll(pid))
            mine = 2 * pid + self._index[pid]
            dst = self.rec_addr(mine)
            ls = [0] * R
            for w in range(R):
                yield
                ls[w] = mem.load(src + w, pid)
                yield
                mem.store(dst + w, pid, ls[w])
            yield
            if not S.vl(pid):
                continue
            ltoggles = [0] * p
            for a in range(p):
                yield
                ltoggles[a] = mem.load(self.toggles + a, pid)
            abandoned = False
            for a in range(p):
                if ltoggles[a] != ls[1 + a]:
                    yield
                    func = mem.load(self.announce + 2 * a, pid)
                    yield
                    arg = mem.load(self.announce + 2 * a + 1, pid)
                    if func == PUSH:
                        rv = yield from self._local_push(pid, ls, dst, arg, log, cost)
                    elif func == POP:
                        rv = yield from self._local_pop(pid, ls, dst, log)
                        if rv is _ABANDON:
                            abandoned = True
                            break
                    else:
                        # torn or stale announcement; the SC is bound to fail
                        rv = NIL
                    yield
                    ls[1 + p + a] = rv
                    mem.store(dst + 1 + p + a, pid, rv)
                yield
                ls[1 + a] = ltoggles[a]
                mem.store(dst + 1 + a, pid, ltoggles[a])
            if abandoned:
                log.to_free = log.pushed
            else:
                yield
                if S.sc(pid, mine):
                    self._index[pid] ^= 1
                    log.to_free = log.popped
                    result = ls[1 + p + pid]
                    cost.sc_ok += 1
                else:
                    log.to_free = log.pushed
            while log.to_free:
                yield
                self.node_free(pid, log.to_free.pop())
                cost.frees += 1
        self.logs[pid] = None
        return result

    def _local_push(self, pid, ls, dst, arg, log, cost):
        arena, mem = self.arena, self.mem
        yield
        nd = self.node_alloc(pid)
        log.pushed.append(nd)
        cost.allocs += 1
        yield
        mem.store(arena.addr(nd, LINK), pid, arg)
        yield
        mem.store(arena.addr(nd, NEXT), pid, ls[0])
        yield
        ls[0] = nd
        mem.store(dst, pid, nd)
        return NIL

    def _local_pop(self, pid, ls, dst, log):
        top = ls[0]
        if top == NIL:
            return NIL
        yield
        nxt = self.arena.deref(top, NEXT, pid)
        yield
        data = self.arena.deref(top, LINK, pid)
        if self.guard_reads:
            yield
            if not self.S.vl(pid):
                return _ABANDON
        log.popped.append(top)
        yield
        ls[0] = nxt
        self.mem.store(dst, pid, nxt)
        return data

    def _account(self, cost: OpCost) -> None:
        if self.costs is not None:
            self.costs.append(cost)
        w = self.worst[cost.pid]
        w.units = max(w.units, cost.units)
        w.allocs = max(w.allocs, cost.allocs)
        w.frees = max(w.frees, cost.frees)

    # -- inspection (audits; never called by the algorithm) ---------------

    def snapshot(self) -> tuple[int, list[int], list[int]]:
        base = self.rec_addr(self.S.peek())
        words = self.mem.words
        p = self.p
        return (
            words[base],
            words[base + 1 : base + 1 + p],
            words[base + 1 + p : base + 1 + 2 * p],
        )

    def reachable_nodes(self) -> list[int]:
        """Nodes reachable from the published top; raises on a corrupt chain."""
        top = self.snapshot()[0]
        seen: list[int] = []
        marked: set[int] = set()
        node = top
        while node != NIL:
            if not self.arena.valid(node):
                raise ValueError(f"stack chain reaches invalid reference {node}")
            if node in marked:
                raise ValueError(f"stack chain cycles at node {node}")
            marked.add(node)
            seen.append(node)
            node = self.arena.get(node, NEXT)
        return seen

    def contents(self) -> list[int]:
        """Data words from top to bottom."""
        return [self.arena.get(n, LINK) for n in self.reachable_nodes()]

    def inflight_nodes(self) -> list[int]:
        out: list[int] = []
        for log in self.logs:
            if log is not None:
                out.extend(log.owned())
        return out


class DelayedOp:
    """One shared-stack operation advanced ``STEP_UNITS`` units per step."""

    def __init__(self, stack: PSimStack, kind: int, arg: int, pid: int) -> None:
        self.kind = kind
        self.arg = arg
        self.pid = pid
        self.done = False
        self.result: int | None = None
        self.steps = 0
        self.units = 0
        self._gen = stack.apply_op(pid, kind, arg)
        try:
            next(self._gen)  # local prelude only
        except StopIteration as stop:
            self.done, self.result = True, stop.value

    def step_gen(self) -> Generator[None, None, bool]:
        if self.done:
            raise RuntimeError("step on a completed delayed operation")
        self.steps += 1
        for _ in range(STEP_UNITS):
            yield
            self.units += 1
            try:
                next(self._gen)
            except StopIteration as stop:
                self.done, self.result = True, stop.value
                return True
        return False

    def step(self) -> bool:
        """Advance one step; True once the operation has completed."""
        return drive(self.step_gen())

    def __repr__(self) -> str:
        state = f"done={self.result}" if self.done else f"steps={self.steps}"
        return f"DelayedOp({OP_NAMES.get(self.kind, self.kind)}, pid={self.pid}, {state})"
