"""Session behavior: states, stepping, rewind, traces, exploration."""

import random

import pytest

from conftest import (
    CHOICE_FAULT,
    FIB,
    MINIMAL,
    RACE,
    depth_program,
    list_program,
    loop_program,
    parse,
    run_to_end,
    session_for,
)
from mirsim import Session, SessionError, TraceMismatch
from mirsim.debug import render_node
from mirsim.machine import AtInterrupt, Faulted, Finished
from mirsim.session import format_trace, parse_trace_text


def test_start_binds_start_state_and_dynamic_vars():
    s = session_for(MINIMAL)
    assert [r.name for r in s.records] == ["#start"]
    frame = s.show("$frame")
    assert dict(frame.attributes)["function"] == "main"
    assert s.show("$state").kind == "state"
    assert s.show("$globals").kind == "globals"


def test_start_shows_global_initializer():
    s = session_for("global @g : i32 = 42\n" + MINIMAL)
    g = s.show("$globals.g")
    assert dict(g.attributes)["value"] == "42"


def test_step_instr_counts_instructions():
    s = session_for(FIB)
    before = s.machine.current_pc()
    s.step("instr", 3)
    after = s.machine.current_pc()
    assert before != after
    assert len(s.records) == 1  # no states on straight-line code


def test_step_line_advances_one_line():
    src = """fn @main() -> i32 !src("m.c") {
  reg %a : i32
entry:
  const i32 %a, 1 !line(1)
  const i32 %a, 2 !line(1)
  const i32 %a, 3 !line(2)
  const i32 %a, 4 !line(2)
  ret i32 %a !line(3)
}"""
    s = session_for(src)
    s.step("line", 1)
    pos = s.machine.position()
    assert pos[1].line == 2
    assert s.machine.current_pc().index == 2  # stopped at the first line-2 instr


def test_step_over_skips_callee_lines():
    src = """fn @callee() -> i32 !src("m.c") {
  reg %a : i32
entry:
  const i32 %a, 1 !line(10)
  const i32 %a, 2 !line(11)
  const i32 %a, 3 !line(12)
  ret i32 %a !line(13)
}
fn @main() -> i32 !src("m.c") {
  reg %r : i32
entry:
  call %r, @callee !line(1)
  add i32 %r, %r, 1 !line(2)
  ret i32 %r !line(3)
}"""
    s = session_for(src)
    s.step("over", 1)
    pos = s.machine.position()
    assert pos[0] == "main" and pos[1].line == 2
    # "line" (step into) instead lands inside the callee
    s2 = session_for(src)
    s2.step("line", 1)
    assert s2.machine.position()[0] == "callee"


def test_interrupt_mints_state_without_choice():
    src = """fn @main() -> i32 {
entry:
  interrupt
  ret i32 0
}"""
    s = session_for(src)
    s.step("instr", 1)
    assert [r.name for r in s.records] == ["#start", "#1"]
    assert isinstance(s.records[1].status, AtInterrupt)
    s.step("instr", 1)  # resolves (no choice, one thread) and executes ret
    assert [r.name for r in s.records] == ["#start", "#1", "#2"]
    assert isinstance(s.records[2].status, Finished)
    assert s.save_trace() == []  # single runnable thread: no choice recorded


def test_stepping_terminal_session_errors():
    s = session_for(MINIMAL)
    s.step("instr", 5)
    assert isinstance(s.machine.status, Finished)
    with pytest.raises(SessionError):
        s.step("instr", 1)


def test_run_until_break_function_breakpoint():
    s = session_for(RACE)
    s.add_breakpoint("@inc")
    s.run_until_break()
    # the run parks at the first scheduling choice; steer to the worker
    assert s.pending is not None and s.pending[1] == "thread"
    s.pick_thread(1)
    s.run_until_break()
    # stops exactly at @inc's first instruction
    pc = s.machine.current_pc()
    assert s.program.functions[pc.fid].name == "inc"
    assert (pc.block, pc.index) == (0, 0)


def test_run_until_break_unreached_runs_to_end():
    s = session_for(MINIMAL)
    s.add_breakpoint("nowhere.c:99")
    s.run_until_break()
    assert isinstance(s.machine.status, Finished)


def test_run_until_break_first_hit_wins():
    src = """fn @main() -> i32 !src("m.c") {
  reg %a : i32
entry:
  const i32 %a, 1 !line(1)
  const i32 %a, 2 !line(2)
  const i32 %a, 3 !line(3)
  ret i32 %a !line(4)
}"""
    s = session_for(src)
    s.add_breakpoint("m.c:3")
    s.add_breakpoint("m.c:2")
    s.run_until_break()
    assert s.machine.position()[1].line == 2


def test_line_breakpoint_requires_arrival():
    # a breakpoint on the current line must not trigger immediately again
    src = """fn @main() -> i32 !src("m.c") {
  reg %a : i32
entry:
  const i32 %a, 1 !line(1)
  const i32 %a, 2 !line(2)
  const i32 %a, 3 !line(2)
  const i32 %a, 4 !line(3)
  ret i32 %a !line(4)
}"""
    s = session_for(src)
    s.add_breakpoint("m.c:2")
    s.run_until_break()
    assert s.machine.current_pc().index == 1
    s.run_until_break()  # must leave line 2 entirely, not stop at index 2
    assert isinstance(s.machine.status, Finished)


def test_delete_breakpoint():
    s = session_for(RACE)
    bid = s.add_breakpoint("@inc")
    s.delete_breakpoint(bid)
    with pytest.raises(SessionError):
        s.delete_breakpoint(bid)


def test_rewind_start_reproduces_digest():
    s = session_for(loop_program(6))
    run_to_end(s)
    assert len(s.records) >= 5
    d0 = s.records[0].digest()
    s.rewind("#start")
    assert s.machine.capture().digest() == d0


def test_rewind_unknown_state_errors():
    s = session_for(MINIMAL)
    with pytest.raises(SessionError):
        s.rewind("#9")


def test_rewind_then_step_reproduces_next_state():
    s = session_for(loop_program(6))
    rng = random.Random(3)
    run_to_end(s, chooser=lambda total: rng.randrange(total))
    full = s.save_trace()
    assert len(s.records) >= 6
    s.load_trace(full)
    for i in range(len(s.records) - 1):
        target = s.records[i]
        s.rewind(target.name)
        before = s.current_index
        while s.current_index == before and not isinstance(
            s.machine.status, (Faulted, Finished)
        ):
            s.step("instr", 1)
        assert s.current_index == i + 1
        got = s.machine.capture().digest()
        assert got == s.records[i + 1].digest()


def test_revisit_does_not_mint_duplicates():
    s = session_for(loop_program(4))
    run_to_end(s)
    n = len(s.records)
    s.rewind("#1")
    s.step("instr", 50)
    assert len(s.records) == n  # retracing the same timeline mints nothing new


def test_backtrace_depths():
    for depth in (1, 3, 5):
        s = session_for(depth_program(depth))
        s.step("instr", 1000)
        s.rewind("#1")
        frames = s.backtrace()
        assert len(frames) == depth
        names = [f[0] for f in frames]
        assert names[-1] == "main"
        assert all(n == "rec" for n in names[:-1])


def test_backtrace_at_boot_is_main_only():
    s = session_for(MINIMAL)
    assert [f[0] for f in s.backtrace()] == ["main"]


def test_backtrace_of_finished_thread_is_empty():
    s = session_for(MINIMAL)
    s.step("instr", 2)
    assert s.backtrace(0) == []


def test_backtrace_survives_corrupt_pc():
    s = session_for(FIB)
    s.step("instr", 8)  # inside the first recursive call
    frame = s.machine.current_frame()
    s.machine.heap.store(frame, 8, 12345)  # stomp pc, keep parent intact
    s._ctx = None
    frames = s.backtrace()
    assert len(frames) >= 2
    assert frames[0][0] == "?"  # corrupt entry rendered, walk continued
    assert frames[-1][0] == "main"


def test_show_struct_path(list_session):
    list_session.step("instr", 200)
    list_session.rewind("#1")
    node = list_session.show("$frame.head.deref.v")
    assert dict(node.attributes)["value"] == "2"


def test_show_static_variable_is_frozen():
    s = session_for("global @g : i32 = 1\n" + """fn @main() -> i32 {
  reg %t : i32
entry:
  load i32 %t, @g, 0
  add i32 %t, %t, 41
  store i32 %t, @g, 0
  interrupt
  ret i32 0
}""")
    s.step("instr", 10)
    start_g = s.show("#start.globals.g")
    assert dict(start_g.attributes)["value"] == "1"
    cur_g = s.show("$globals.g")
    assert dict(cur_g.attributes)["value"] == "42"


def test_show_errors():
    s = session_for(MINIMAL)
    with pytest.raises(SessionError):
        s.show("$nope")
    with pytest.raises(SessionError):
        s.show("$frame.nothing")
    with pytest.raises(SessionError):
        s.show("#77")


def test_static_dynamic_contract():
    src = """global @n : i32 = 0
fn @main() -> i32 !src("m.c") {
  reg %i : i32
  reg %c : i8
entry:
  const i32 %i, 0 !line(1)
  br loop
loop:
  store i32 %i, @n, 0 !line(2)
  interrupt !line(3)
  add i32 %i, %i, 1 !line(4)
  icmp slt i32 %c, %i, 4 !line(5)
  condbr %c, loop, out !line(5)
out:
  ret i32 0 !line(6)
}"""
    s = session_for(src)
    rendered0 = render_node(s.show("#start"))
    global0 = render_node(s.show("#start.globals"))
    snap_ids = []
    for _ in range(3):
        s.step("instr", 5)  # always crosses at least one store
        assert render_node(s.show("#start")) == rendered0  # static: unchanged
        assert render_node(s.show("#start.globals")) == global0
        snap_ids.append(s.show("$state").snapshot.sid)
    # dynamic vars re-resolve against a fresh snapshot after each mutation
    assert len(set(snap_ids)) == len(snap_ids)
    assert snap_ids == sorted(snap_ids)


def test_name_alias():
    s = session_for(loop_program(3))
    run_to_end(s)
    s.name_state("#1", "#before-crash")
    assert s.record_named("#before-crash") is s.record_named("#1")
    with pytest.raises(SessionError):
        s.name_state("#1", "#before-crash")  # duplicate
    with pytest.raises(SessionError):
        s.name_state("#1", "nohash")


# -- traces --------------------------------------------------------------------


def test_save_trace_empty_without_choices():
    s = session_for(MINIMAL)
    s.step("instr", 5)
    assert s.save_trace() == []


def test_save_trace_records_interrupt_choice():
    s = session_for(RACE)
    s.step("instr", 10)  # hits the first interrupt (2 runnable)
    assert s.pending is not None
    s.queue_choice(1)
    assert s.save_trace() == [(1, 2)]


def test_load_trace_empty_runs_to_finish():
    s = session_for(MINIMAL)
    s.load_trace([])
    assert s.records[-1].name == "#1"
    assert isinstance(s.records[-1].status, Finished)
    assert s.current_index == 0  # rewound to #start afterwards


def test_load_trace_mismatch_reports_position():
    s = session_for(CHOICE_FAULT)
    with pytest.raises(TraceMismatch) as err:
        s.load_trace([(1, 3)])  # the program's first choice has total 2
    assert err.value.position == 0
    assert err.value.expected_total == 3
    assert err.value.actual_total == 2
    # session rolled back cleanly: no leftover states, lock cleared
    assert s.current_index == 0
    assert [r.name for r in s.records] == ["#start"]
    assert s.lock is None


def test_load_trace_replays_to_locked_fault(race_session=None):
    s = session_for(RACE)
    res = s.explore(4000)
    assert res.trace is not None
    boundaries = s.load_trace(res.trace)
    assert boundaries >= 2
    faulted = [r for r in s.records if isinstance(r.status, Faulted)]
    assert faulted, "replay must reach the faulted state"
    # forward along the lock, silently consuming locked choices
    while not isinstance(s.machine.status, (Faulted, Finished)):
        s.step("instr", 1)
    assert isinstance(s.machine.status, Faulted)
    assert s.machine.capture().digest() == faulted[-1].digest()


def test_trace_round_trip_through_text():
    trace = [(1, 2), (0, 3), (2, 4)]
    text = format_trace(trace)
    assert text.splitlines()[0] == "mirsim-trace 1"
    assert parse_trace_text(text) == trace
    with_comments = "# counterexample\nmirsim-trace 1\n\nchoose 1/2\n# done\n"
    assert parse_trace_text(with_comments) == [(1, 2)]
    with pytest.raises(SessionError):
        parse_trace_text("choose 1/2\n")


def test_choice_override_clears_lock_suffix():
    s = session_for(RACE)
    res = s.explore(4000)
    s.load_trace(res.trace)
    assert s.lock is not None and len(s.lock) >= 2
    # step until the first locked choice has been consumed silently
    for _ in range(50):
        if s.lock_pos >= 1:
            break
        s.step("instr", 1)
    assert s.lock_pos == 1
    # advance to the point where the next locked choice is imminent
    for _ in range(50):
        if s._next_choice_total() is not None:
            break
        s.step("instr", 1)
    assert s._next_choice_total() is not None
    s.queue_choice(0)  # user override
    # the consumed prefix survives, the rest of the lock is gone
    assert len(s.lock) == 1
    assert s.lock_pos == 1


def test_random_walk_save_load_reproduces_digest():
    rng = random.Random(11)
    for _ in range(5):
        s = session_for(loop_program(5))
        run_to_end(s, chooser=lambda total: rng.randrange(total))
        final = s.machine.capture().digest()
        trace = s.save_trace()
        s.load_trace(trace)
        run_to_end(s)  # locked choices answer everything
        assert s.machine.capture().digest() == final


# -- explorer -------------------------------------------------------------------


def test_explore_finds_choice_fault():
    s = session_for(CHOICE_FAULT)
    res = s.explore(100)
    assert res.trace == [(1, 2)]


def test_explore_faultfree_returns_none():
    s = session_for(loop_program(2))
    res = s.explore(100)
    assert res.trace is None
    assert res.states >= 3


def test_explore_race_end_to_end():
    s = session_for(RACE)
    res = s.explore(4000)
    assert res.trace is not None
    s.load_trace(res.trace)
    run_to_end(s)
    assert isinstance(s.machine.status, Faulted)
    assert s.machine.status.detail == "lost update"


def test_explore_leaves_session_untouched():
    s = session_for(RACE)
    before = (
        s.current_index,
        [r.name for r in s.records],
        s.machine.capture().digest(),
    )
    s.explore(500)
    after = (
        s.current_index,
        [r.name for r in s.records],
        s.machine.capture().digest(),
    )
    assert before == after


def test_explorer_trace_always_replays_to_fault():
    # explorer soundness on several faulting fixtures
    for src in (CHOICE_FAULT, RACE):
        s = session_for(src)
        res = s.explore(4000)
        assert res.trace is not None
        s.load_trace(res.trace)
        run_to_end(s)
        assert isinstance(s.machine.status, Faulted)
