import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fixpool.checker import Bounds, enumerate_schedules
from fixpool.llsc import LLSCCell
from fixpool.memory import NativeMemory, SimulatedMemory, run_schedule


def cell(nvalues=4, initial=0, tag_bits=None, procs=2, mem=None):
    mem = mem or SimulatedMemory()
    return mem, LLSCCell(mem, procs, initial, nvalues, tag_bits)


def test_ll_returns_initial():
    _, c = cell(initial=2)
    assert c.ll(0) == 2


def test_solo_ll_sc_then_ll_sees_new_value():
    _, c = cell()
    c.ll(0)
    assert c.sc(0, 3)
    assert c.ll(0) == 3


def test_vl_without_interference():
    _, c = cell()
    c.ll(0)
    assert c.vl(0)


def test_vl_fails_after_other_sc():
    _, c = cell()
    c.ll(0)
    c.ll(1)
    assert c.sc(1, 1)
    assert not c.vl(0)
    assert not c.sc(0, 2)


def test_second_sc_after_one_ll_fails():
    _, c = cell()
    c.ll(0)
    assert c.sc(0, 1)
    assert not c.sc(0, 2)


def test_vl_and_sc_before_any_ll_fail():
    _, c = cell()
    assert not c.vl(0)
    assert not c.sc(0, 1)
    assert c.peek() == 0


def test_sc_writing_same_value_still_invalidates_links():
    _, c = cell()
    c.ll(0)
    c.ll(1)
    assert c.sc(1, 0)
    assert c.peek() == 0
    assert not c.vl(0)


def test_each_operation_is_one_access():
    mem, c = cell()
    for op in (lambda: c.ll(0), lambda: c.vl(0), lambda: c.sc(0, 1), lambda: c.read(0)):
        before = mem.access_count
        op()
        assert mem.access_count - before == 1


def test_tag_period_must_exceed_slots():
    with pytest.raises(ValueError):
        cell(nvalues=6, tag_bits=2)
    _, c = cell(nvalues=6, tag_bits=3)
    assert c.tag_period == 8 > 6


def test_default_tag_fills_the_word():
    _, c = cell(nvalues=6)
    assert c.slot_bits == 3
    assert c.tag_bits == 61


def test_tag_wraps_modulo_period():
    _, c = cell(nvalues=4, tag_bits=3)
    for i in range(20):
        c.ll(0)
        assert c.sc(0, i % 4)
        assert c.tag() == (i + 1) % 8


def test_stale_link_aliases_only_after_a_full_tag_period():
    # documented limit of the bounded tag: exactly one period of SCs in an LL window
    _, c = cell(nvalues=4, tag_bits=3)
    c.ll(0)
    for _ in range(7):
        c.ll(1)
        c.sc(1, 0)
        assert not c.vl(0)
    c.ll(1)
    c.sc(1, 0)
    assert c.vl(0)


def _race_subject():
    class S:
        def __init__(self):
            self.mem = SimulatedMemory()
            self.c = LLSCCell(self.mem, 2, 0, 4)

        def programs(self):
            def racer(pid):
                yield
                self.c.ll(pid)
                yield
                return self.c.sc(pid, pid + 1)

            return [racer(0), racer(1)]

        def check(self, run):
            return []

    return S


def test_racing_sc_over_all_interleavings():
    n = 0
    for ex in enumerate_schedules(_race_subject(), Bounds(preemptions=None)):
        n += 1
        order = [e for e in ex.subject.mem.trace if e.kind in ("ll", "sc")]
        r = ex.run.results
        # a process's SC fails iff the other's successful SC sits between its LL and SC
        for pid in (0, 1):
            ll_at = next(i for i, e in enumerate(order) if e.pid == pid and e.kind == "ll")
            sc_at = next(i for i, e in enumerate(order) if e.pid == pid and e.kind == "sc")
            other_won = any(e.kind == "sc" and e.value for e in order[ll_at:sc_at] if e.pid != pid)
            assert r[pid] == (not other_won)
        both_ll_first = [e.kind for e in order[:2]] == ["ll", "ll"]
        if both_ll_first:
            assert sorted(r.values()) == [False, True]
    assert n == 6


def _vl_oracle(trace):
    """Expected vl/sc outcome from the trace alone."""
    link = {}
    for i, e in enumerate(trace):
        if e.kind == "ll":
            link[e.pid] = i
        elif e.kind in ("vl", "sc"):
            start = link.get(e.pid)
            if start is None:
                want = False
            else:
                want = not any(x.kind == "sc" and x.value for x in trace[start:i])
            assert bool(e.value) == want, (i, e)
            if e.kind == "sc":
                link.pop(e.pid, None)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32), st.integers(2, 4))
def test_vl_and_sc_match_trace_oracle_on_random_schedules(seed, procs):
    rng = random.Random(seed)
    mem = SimulatedMemory()
    c = LLSCCell(mem, procs, 0, 4)

    def prog(pid):
        r = random.Random(seed + pid)
        for _ in range(6):
            op = r.choice(["ll", "vl", "sc"])
            yield
            if op == "ll":
                c.ll(pid)
            elif op == "vl":
                c.vl(pid)
            else:
                c.sc(pid, r.randrange(4))

    run_schedule(mem, [prog(pid) for pid in range(procs)], chooser=lambda s, en, cur: rng.choice(en))
    _vl_oracle(mem.trace)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 2), st.sampled_from(["ll", "vl", "sc"]), st.integers(0, 5)), max_size=40))
def test_sequential_semantics_model(ops):
    mem = NativeMemory()
    c = LLSCCell(mem, 3, 0, 6)
    value, version, links = 0, 0, {}
    for pid, op, arg in ops:
        if op == "ll":
            assert c.ll(pid) == value
            links[pid] = version
        elif op == "vl":
            assert c.vl(pid) == (links.get(pid) == version)
        else:
            ok = links.pop(pid, None) == version
            assert c.sc(pid, arg) == ok
            if ok:
                value, version = arg, version + 1
    assert c.peek() == value


def test_vl_monotone_once_false():
    _, c = cell()
    c.ll(0)
    c.ll(1)
    c.sc(1, 1)
    assert not c.vl(0)
    c.ll(1)
    c.sc(1, 0)  # value returns to the one 0 observed
    assert not c.vl(0)
    assert not c.sc(0, 2)
