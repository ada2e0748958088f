import io
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fixpool.allocator import Allocator, PoolConfig
from fixpool.checker import (
    AllocatorSubject,
    Bounds,
    History,
    MalformedHistory,
    OccupancyOracle,
    StackModel,
    StackSubject,
    audit_bounds,
    audit_conservation,
    audit_occupancy,
    brute_force,
    check_linearizable,
    enumerate_schedules,
    explore,
    read_schedule,
    write_schedule,
)
from fixpool.checker.explore import execute
from fixpool.memory import NIL, Event
from fixpool.psim import POP, PUSH, OpCost


def inv(pid, func, arg=NIL):
    return Event(pid, "invoke", func, arg)


def res(pid, func, value=NIL):
    return Event(pid, "respond", func, value)


# -- histories ---------------------------------------------------------------------


def test_history_pairs_invocations_and_responses():
    h = History.from_events([inv(0, PUSH, 5), inv(1, POP), res(0, PUSH), res(1, POP, 5), inv(0, POP)])
    assert [(op.pid, op.func, op.arg, op.result) for op in h] == [
        (0, PUSH, 5, NIL),
        (1, POP, NIL, 5),
        (0, POP, NIL, None),
    ]
    assert h[2].res == math.inf and not h[2].completed


@pytest.mark.parametrize(
    "events",
    [
        [inv(0, PUSH, 1), inv(0, PUSH, 2)],
        [res(0, PUSH)],
        [inv(0, PUSH, 1), res(0, POP)],
    ],
)
def test_malformed_histories(events):
    with pytest.raises(MalformedHistory):
        History.from_events(events)


# -- linearizability -----------------------------------------------------------------


def test_sequential_push_pop():
    h = History.from_events([inv(0, PUSH, 1), res(0, PUSH), inv(0, POP), res(0, POP, 1)])
    v = check_linearizable(h)
    assert v.ok and v.order == [0, 1]


def test_pop_of_value_never_pushed():
    h = History.from_events([inv(0, PUSH, 1), res(0, PUSH), inv(0, POP), res(0, POP, 7)])
    v = check_linearizable(h)
    assert v.ok is False
    assert v.failing_prefix == 4


def test_overlapping_pushes_and_pops():
    h = History.from_events(
        [inv(0, PUSH, 1), inv(1, PUSH, 2), res(0, PUSH), res(1, PUSH),
         inv(0, POP), inv(1, POP), res(0, POP, 2), res(1, POP, 1)]
    )
    assert check_linearizable(h).ok
    assert brute_force(h)


def test_real_time_order_is_respected():
    # pop returns 1 although push(2) completed after push(1) and before the pop
    h = History.from_events(
        [inv(0, PUSH, 1), res(0, PUSH), inv(0, PUSH, 2), res(0, PUSH), inv(1, POP), res(1, POP, 1)]
    )
    assert check_linearizable(h).ok is False
    assert not brute_force(h)


def test_pending_ops_may_take_effect_or_not():
    took = History.from_events([inv(0, PUSH, 3), inv(1, POP), res(1, POP, 3)])
    assert check_linearizable(took).ok
    skipped = History.from_events([inv(0, PUSH, 3), inv(1, POP), res(1, POP, NIL)])
    assert check_linearizable(skipped).ok


def test_initial_state_model():
    h = History.from_events([inv(0, POP), res(0, POP, 9)])
    assert check_linearizable(h, StackModel([8, 9])).ok
    assert not check_linearizable(h, StackModel([9, 8])).ok


def test_search_cutoff_is_inconclusive():
    events = []
    for pid in range(6):
        events.append(inv(pid, PUSH, pid))
    for pid in range(6):
        events.append(res(pid, PUSH))
    for pid in range(6):
        events.append(inv(pid, POP))
    for pid in range(6):
        events.append(res(pid, POP, 99))
    v = check_linearizable(History.from_events(events), max_nodes=50)
    assert v.ok is None and not v


@st.composite
def histories(draw):
    """Well-formed histories of at most 6 operations over 3 processes."""
    n_ops = draw(st.integers(1, 6))
    events = []
    busy = {}
    stuck = set()
    started = 0
    while started < n_ops or busy:
        idle = [pid for pid in range(3) if pid not in busy and pid not in stuck]
        can_start = started < n_ops and idle
        if not busy and not can_start:
            break
        if busy and (not can_start or draw(st.booleans())):
            pid = draw(st.sampled_from(sorted(busy)))
            func = busy.pop(pid)
            if draw(st.integers(0, 9)) == 0:
                stuck.add(pid)  # stays pending
                continue
            value = NIL if func == PUSH else draw(st.sampled_from([NIL, 1, 2, 3]))
            events.append(res(pid, func, value))
        else:
            pid = draw(st.sampled_from(idle))
            func = draw(st.sampled_from([PUSH, POP]))
            events.append(inv(pid, func, draw(st.sampled_from([1, 2, 3])) if func == PUSH else NIL))
            busy[pid] = func
            started += 1
    return History.from_events(events)


@settings(max_examples=400, deadline=None)
@given(histories(), st.sampled_from([(), (1,), (2, 3)]))
def test_search_agrees_with_brute_force(h, initial):
    model = StackModel(initial)
    assert check_linearizable(h, model).ok == brute_force(h, model)


@settings(max_examples=100, deadline=None)
@given(histories())
def test_failing_prefix_is_minimal(h):
    v = check_linearizable(h)
    if v.ok is False:
        assert check_linearizable(h.truncate(v.failing_prefix)).ok is False
        shorter = [t for t in h.positions() if t + 1 < v.failing_prefix]
        for t in shorter:
            assert check_linearizable(h.truncate(t + 1)).ok


# -- exploration --------------------------------------------------------------------


def test_schedule_file_roundtrip():
    buf = io.StringIO()
    write_schedule(buf, [0, 1, 1, 0], {"subject": "stack", "scripts": "uo,oo"})
    buf.seek(0)
    assert read_schedule(buf) == ([0, 1, 1, 0], {"subject": "stack", "scripts": "uo,oo"})


def test_replay_is_deterministic():
    make = lambda: StackSubject(["uo", "ou"])  # noqa: E731
    for ex in list(enumerate_schedules(make, Bounds(preemptions=1)))[::25]:
        _, again = execute(make, ex.run.choices)
        subject2, _ = execute(make, ex.run.choices)
        assert list(subject2.mem.trace) == list(ex.subject.mem.trace)
        assert again.choices == ex.run.choices


def test_cutoff_falls_back_to_seeded_samples():
    bounds = Bounds(preemptions=2, max_schedules=20, samples=15, seed=4)
    report = explore(lambda: StackSubject(["uo", "oo"]), bounds)
    assert not report.exhaustive
    assert report.explored == 35 and report.sampled == 15
    assert report.ok
    again = explore(lambda: StackSubject(["uo", "oo"]), bounds)
    assert again.max_length == report.max_length


def test_preemption_bound_is_respected():
    for ex in enumerate_schedules(lambda: StackSubject(["uo", "o"]), Bounds(preemptions=1)):
        assert ex.run.preemptions() <= 1


def test_stack_subject_p2_two_ops_linearizable():
    report = explore(lambda: StackSubject(["uo", "uo"]), Bounds(preemptions=1))
    assert report.ok and report.exhaustive and report.explored > 100


def test_mutant_is_caught_on_stack_and_allocator():
    for make in (
        lambda: StackSubject(["oo", "oo"], guard_reads=False),
        lambda: AllocatorSubject(["aa", "aa"], guard_reads=False),
    ):
        report = explore(make, Bounds(preemptions=1), stop_on_first=True)
        assert report.violations


# -- audits -------------------------------------------------------------------------


def test_fresh_pool_conservation():
    a = Allocator(PoolConfig(3, m=300))
    rep = audit_conservation(a)
    assert rep.ok
    assert len(rep.classes) == 300
    assert rep.counts["stack-node"] == a.initial_shared_batches


def test_conservation_detects_lost_and_double_blocks():
    a = Allocator(PoolConfig(2, ell=6, m=64))
    blk = a.allocate(0)
    rep = audit_conservation(a)
    assert not rep.ok and "unaccounted" in rep.violations[0]
    a.free(0, blk)
    a.free(0, blk)
    rep = audit_conservation(a)
    assert any(f"block {blk} is both" in v for v in rep.violations)


def test_occupancy_detects_double_allocation_and_bad_free():
    o = OccupancyOracle(4)
    problems = audit_occupancy(
        [Event(0, "alloc", 1, 0), Event(1, "alloc", 1, 0), Event(0, "free", 2, 0)], o
    )
    assert len(problems) == 2
    assert problems[0].startswith("event 1:") and problems[1].startswith("event 2:")


def test_occupancy_deref_rule():
    trace = [
        Event(0, "deref", 3, 0), Event(0, "deref", 3, 1), Event(0, "vl", 0, 0),  # guarded: fine
        Event(1, "deref", 3, 0), Event(1, "sc", 0, 0),  # unguarded
    ]
    o = OccupancyOracle(4)
    problems = audit_occupancy(trace, o)
    assert len(problems) == 1 and "process 1" in problems[0]
    assert o.unsafe_reads == 2
    assert not audit_occupancy([Event(0, "deref", 3, 0), Event(0, "vl", 0, 0)], OccupancyOracle(4, nodes=[3]))


def test_bounds_audit_flags_each_bound():
    p, ell = 2, 6
    costs = [OpCost(0, PUSH, units=10, allocs=5, frees=1)]
    trace = [Event(0, "step_begin", 0, 0)] + [Event(0, "load", 0, 0)] * 44 + [Event(0, "step_end", 1, 0)]
    trace += [Event(0, "begin_pop", 0, 0), Event(0, "begin_pop", 0, 0)]
    trace += [Event(0, "delayed_done", POP, 3), Event(1, "boundary", 0, 3)]
    rep = audit_bounds(trace, p, ell, costs)
    text = "\n".join(rep.violations)
    for needle in ("node allocs", "shared accesses > 43", "two delayed", "needed 3 steps", "holds 0", "num_batches=3"):
        assert needle in text


def test_solo_allocate_free_stay_within_one_step():
    from fixpool.memory import ACCESS_KINDS, SimulatedMemory
    from fixpool.psim import STEP_UNITS

    mem = SimulatedMemory()
    a = Allocator(PoolConfig(2, ell=6, m=200), mem)
    live, worst = [], 0
    for i in range(300):
        before = len(mem.trace)
        if i % 90 < 60:
            live.append(a.allocate(0))
        else:
            a.free(0, live.pop())
        worst = max(worst, sum(e.kind in ACCESS_KINDS for e in mem.trace[before:]))
    assert a.counters()["delayed_completed"] > 0
    assert 0 < worst <= STEP_UNITS
