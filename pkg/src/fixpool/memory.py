"""Word-granularity shared memory with a native and a simulated backend.

Both backends store every shared word in one flat list so that arena blocks
and synchronization metadata live in a single address space. Algorithms pass
the calling process id to every access; the simulated backend uses it to
record an :class:`Event` trace, the native backend ignores it.

Algorithm code that wants to be interleavable is written as a generator that
yields immediately before each shared access. Under the native backend such
generators are simply driven to completion; under the simulated backend the
:func:`run_schedule` scheduler decides which process resumes at each yield.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Callable, Generator, Iterable, Sequence, TextIO

WORD_BITS = 64
WORD_MASK = (1 << WORD_BITS) - 1
NIL = WORD_MASK  # reserved "null reference" word

# Event kinds that are real shared-memory accesses. Everything else written
# through Memory.note() is an instrumentation marker and costs no step.
ACCESS_KINDS = frozenset({"load", "store", "cas_ok", "cas_fail"})

Program = Generator[None, None, object]


class BudgetExceeded(RuntimeError):
    """A simulated run did not reach quiescence within its step budget."""


class GranularityError(RuntimeError):
    """A process performed more than one shared access between two yields."""


@dataclass(frozen=True)
class Event:
    pid: int
    kind: str
    cell: int
    value: int

    def __str__(self) -> str:
        return f"{self.pid} {self.kind} {self.cell} {self.value}"


class EventTrace(list):
    """Ordered list of :class:`Event`; list order is the linearization."""

    def accesses(self) -> list[Event]:
        return [e for e in self if e.kind in ACCESS_KINDS]

    def dump(self, fh: TextIO) -> None:
        for e in self:
            fh.write(f"{e}\n")

    @classmethod
    def parse(cls, lines: Iterable[str]) -> "EventTrace":
        trace = cls()
        for line in lines:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            pid, kind, cell, value = line.split()
            trace.append(Event(int(pid), kind, int(cell), int(value)))
        return trace


class Memory:
    """Flat array of shared words.

    Subclasses define the atomicity mechanism. ``alloc`` hands out contiguous
    address ranges and is only meant to be called during construction.
    """

    simulated = False

    def __init__(self) -> None:
        self.words: list[int] = []

    def alloc(self, n: int, init: int = 0) -> int:
        base = len(self.words)
        self.words.extend([init] * n)
        return base

    def load(self, cell: int, pid: int) -> int:
        raise NotImplementedError

    def store(self, cell: int, pid: int, w: int) -> None:
        raise NotImplementedError

    def cas(self, cell: int, pid: int, expected: int, new: int) -> bool:
        raise NotImplementedError

    def note(self, pid: int, kind: str, cell: int = 0, value: int = 0) -> None:
        """Record an instrumentation marker (no-op on the native backend)."""


class NativeMemory(Memory):
    """Backend for real threads.

    Loads are single list reads, which CPython performs atomically. Stores and
    CAS serialize on one lock so a store can never land between the compare
    and the write of a concurrent CAS; every access is therefore linearizable
    and the resulting order is sequentially consistent.
    """

    def __init__(self) -> None:
        super().__init__()
        self._lock = threading.Lock()

    def load(self, cell: int, pid: int) -> int:
        return self.words[cell]

    def store(self, cell: int, pid: int, w: int) -> None:
        with self._lock:
            self.words[cell] = w

    def cas(self, cell: int, pid: int, expected: int, new: int) -> bool:
        with self._lock:
            if self.words[cell] == expected:
                self.words[cell] = new
                return True
            return False


class SimulatedMemory(Memory):
    """Single-threaded backend that records every access in ``trace``."""

    simulated = True

    def __init__(self) -> None:
        super().__init__()
        self.trace = EventTrace()
        self.access_count = 0

    def load(self, cell: int, pid: int) -> int:
        v = self.words[cell]
        self.access_count += 1
        self.trace.append(Event(pid, "load", cell, v))
        return v

    def store(self, cell: int, pid: int, w: int) -> None:
        if not 0 <= w <= WORD_MASK:
            raise ValueError(f"value {w!r} does not fit in a word")
        self.words[cell] = w
        self.access_count += 1
        self.trace.append(Event(pid, "store", cell, w))

    def cas(self, cell: int, pid: int, expected: int, new: int) -> bool:
        if not 0 <= new <= WORD_MASK:
            raise ValueError(f"value {new!r} does not fit in a word")
        self.access_count += 1
        if self.words[cell] == expected:
            self.words[cell] = new
            self.trace.append(Event(pid, "cas_ok", cell, new))
            return True
        self.trace.append(Event(pid, "cas_fail", cell, self.words[cell]))
        return False

    def note(self, pid: int, kind: str, cell: int = 0, value: int = 0) -> None:
        self.trace.append(Event(pid, kind, cell, value))


def drive(gen: Program) -> object:
    """Run a yielding algorithm generator to completion and return its value."""
    try:
        while True:
            next(gen)
    except StopIteration as stop:
        return stop.value


@dataclass
class Run:
    """Outcome of one simulated execution."""

    choices: list[int] = field(default_factory=list)
    enabled: list[tuple[int, ...]] = field(default_factory=list)
    results: dict[int, object] = field(default_factory=dict)
    error: BaseException | None = None
    error_pid: int | None = None

    def preemptions(self) -> int:
        return count_preemptions(self.choices, self.enabled)


def count_preemptions(choices: Sequence[int], enabled: Sequence[Sequence[int]]) -> int:
    n = 0
    for i in range(1, len(choices)):
        prev = choices[i - 1]
        if choices[i] != prev and prev in enabled[i]:
            n += 1
    return n


def run_schedule(
    mem: SimulatedMemory,
    programs: Sequence[Program],
    schedule: Sequence[int] = (),
    budget: int = 100_000,
    chooser: Callable[[int, tuple[int, ...], int | None], int] | None = None,
) -> Run:
    """Interleave ``programs`` one shared access at a time.

    Each program is first advanced to its first yield (that prefix is purely
    local). Afterwards every decision resumes one process for exactly one
    segment, i.e. one shared access plus the local code up to its next yield.
    Decision ``i`` takes ``schedule[i]`` when present; beyond the schedule the
    ``chooser`` callback decides, defaulting to "keep running the current
    process, else the lowest enabled pid". Exceptions raised inside a program,
    and running out of ``budget``, stop the run and are reported in
    :attr:`Run.error`.
    """
    run = Run()
    live: dict[int, Program] = {}
    for pid, prog in enumerate(programs):
        before = mem.access_count
        try:
            next(prog)
            live[pid] = prog
        except StopIteration as stop:
            run.results[pid] = stop.value
        except Exception as exc:  # noqa: BLE001 - reported to the caller
            run.error, run.error_pid = exc, pid
            return run
        if mem.access_count != before:
            raise GranularityError(f"process {pid} accessed shared memory before its first yield")

    current: int | None = None
    while live:
        enabled = tuple(sorted(live))
        step = len(run.choices)
        if step >= budget:
            run.error = BudgetExceeded(f"no quiescence after {budget} decisions")
            return run
        if step < len(schedule):
            pid = schedule[step]
            if pid not in live:
                raise ValueError(f"schedule step {step} picks disabled process {pid}")
        elif chooser is not None:
            pid = chooser(step, enabled, current)
        else:
            pid = current if current in live else enabled[0]
        run.choices.append(pid)
        run.enabled.append(enabled)
        current = pid
        before = mem.access_count
        try:
            next(live[pid])
        except StopIteration as stop:
            run.results[pid] = stop.value
            del live[pid]
        except Exception as exc:  # noqa: BLE001
            run.error, run.error_pid = exc, pid
            return run
        if mem.access_count - before > 1:
            raise GranularityError(
                f"process {pid} made {mem.access_count - before} shared accesses in one segment"
            )
    return run


def step_scheduler(
    mem: SimulatedMemory, programs: Sequence[Program], schedule: Sequence[int] = (), budget: int = 100_000
) -> EventTrace:
    """Run ``programs`` under ``schedule`` and return the resulting trace."""
    run = run_schedule(mem, programs, schedule, budget)
    if run.error is not None:
        raise run.error
    return mem.trace
