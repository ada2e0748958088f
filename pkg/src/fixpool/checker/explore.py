"""Stateless schedule enumeration over the simulated backend.

Every execution is rebuilt from scratch by a subject factory and replayed from
a decision prefix; after the prefix the scheduler keeps running the current
process. Depth-first search then branches on every later decision. With a
preemption bound only schedules that switch away from a still-enabled process
at most that many times are generated, which keeps the search polynomial in
the number of shared accesses. When the search exceeds ``max_schedules`` it
stops and the remaining budget is spent on seeded random schedules with the
same preemption bound; the report says so.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Callable, Iterator, Protocol, Sequence, TextIO

from ..memory import Program, Run, SimulatedMemory, run_schedule


class Subject(Protocol):
    mem: SimulatedMemory

    def programs(self) -> list[Program]: ...

    def check(self, run: Run) -> list[str]: ...


SubjectFactory = Callable[[], Subject]


@dataclass
class Bounds:
    preemptions: int | None = 2  # None = unbounded
    max_schedules: int | None = None  # DFS cap before falling back to sampling
    samples: int = 0  # random schedules to run if the DFS was cut off
    seed: int = 0
    budget: int = 100_000  # decisions per execution


@dataclass
class Execution:
    index: int
    run: Run
    subject: Subject
    seed: int | None = None  # set for sampled schedules

    @property
    def schedule(self) -> list[int]:
        return self.run.choices


@dataclass
class Violation:
    index: int
    schedule: list[int]
    messages: list[str]
    seed: int | None = None


@dataclass
class Report:
    explored: int = 0
    exhaustive: bool = True
    sampled: int = 0
    violations: list[Violation] = field(default_factory=list)
    max_length: int = 0

    @property
    def ok(self) -> bool:
        return not self.violations


def execute(make_subject: SubjectFactory, schedule: Sequence[int] = (), budget: int = 100_000, chooser=None):
    subject = make_subject()
    run = run_schedule(subject.mem, subject.programs(), schedule, budget, chooser)
    return subject, run


def enumerate_schedules(
    make_subject: SubjectFactory, bounds: Bounds | None = None, status: dict | None = None
) -> Iterator[Execution]:
    """Yield every schedule within ``bounds`` (then samples, if cut off).

    ``status["exhaustive"]`` is set to False when the search was cut off.
    """
    bounds = bounds or Bounds()
    status = {} if status is None else status
    status["exhaustive"] = True
    limit = bounds.preemptions
    stack: list[list[int]] = [[]]
    index = 0
    cut = False
    while stack:
        if bounds.max_schedules is not None and index >= bounds.max_schedules:
            cut = True
            break
        prefix = stack.pop()
        subject, run = execute(make_subject, prefix, bounds.budget)
        yield Execution(index, run, subject)
        index += 1
        choices, enabled = run.choices, run.enabled
        # preemptions accumulated strictly before each position
        pre = [0] * (len(choices) + 1)
        for i in range(1, len(choices) + 1):
            pre[i] = pre[i - 1]
            if i < len(choices) and choices[i] != choices[i - 1] and choices[i - 1] in enabled[i]:
                pre[i] += 1
        children = []
        for i in range(len(prefix), len(choices)):
            for alt in enabled[i]:
                if alt == choices[i]:
                    continue
                cost = pre[i - 1] if i > 0 else 0
                if i > 0 and choices[i - 1] in enabled[i] and alt != choices[i - 1]:
                    cost += 1
                if limit is None or cost <= limit:
                    children.append(choices[:i] + [alt])
        stack.extend(reversed(children))
    if not cut:
        return
    status["exhaustive"] = False
    rng = random.Random(bounds.seed)
    for n in range(bounds.samples):
        seed = rng.randrange(2**32)
        subject, run = execute(make_subject, (), bounds.budget, _random_chooser(seed, limit))
        yield Execution(index, run, subject, seed)
        index += 1


def _random_chooser(seed: int, limit: int | None, rate: float = 0.02):
    rng = random.Random(seed)
    left = [limit if limit is not None else 1 << 30]

    def choose(step: int, enabled: tuple[int, ...], current: int | None) -> int:
        if current not in enabled:
            return rng.choice(enabled)
        if left[0] > 0 and len(enabled) > 1 and rng.random() < rate:
            left[0] -= 1
            return rng.choice([pid for pid in enabled if pid != current])
        return current

    return choose


def explore(
    make_subject: SubjectFactory,
    bounds: Bounds | None = None,
    *,
    stop_on_first: bool = False,
    on_execution: Callable[[Execution, list[str]], None] | None = None,
) -> Report:
    """Run ``subject.check`` on every enumerated execution."""
    bounds = bounds or Bounds()
    report = Report()
    status: dict = {}
    for ex in enumerate_schedules(make_subject, bounds, status):
        report.explored += 1
        if ex.seed is not None:
            report.sampled += 1
        report.max_length = max(report.max_length, len(ex.run.choices))
        problems = ex.subject.check(ex.run)
        if on_execution is not None:
            on_execution(ex, problems)
        if problems:
            report.violations.append(Violation(ex.index, list(ex.run.choices), problems, ex.seed))
            if stop_on_first:
                break
    if not status.get("exhaustive", True):
        report.exhaustive = False
    return report


def write_schedule(fh: TextIO, schedule: Sequence[int], meta: dict[str, object] | None = None) -> None:
    for key, value in (meta or {}).items():
        fh.write(f"# {key}={value}\n")
    for pid in schedule:
        fh.write(f"{pid}\n")


def read_schedule(fh: TextIO) -> tuple[list[int], dict[str, str]]:
    schedule: list[int] = []
    meta: dict[str, str] = {}
    for line in fh:
        line = line.strip()
        if not line:
            continue
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
            continue
        schedule.append(int(line))
    return schedule, meta
