"""Shared fixture programs and session helpers."""

from __future__ import annotations

import pytest

from mirsim import Session, parse_program
from mirsim.machine import Faulted, Finished

MINIMAL = "fn @main() -> i32 { entry: ret i32 0 }"

# Singly linked list of `n` nodes built in main's frame, then an interrupt
# so the session stores a state while everything is live.
def list_program(n: int = 3) -> str:
    return f"""
type %node = struct {{ v: i32 @0, next: ptr %node @8 }} size 16

global @count : i32 = {n} !var("count")

fn @main() -> i32 !src("list.c") {{
  reg %head : ptr %node !var("head")
  reg %i : i32 !var("i")
  reg %c : i8
  reg %tmp : ptr %node
  reg %n : i32
entry:
  load i32 %n, @count, 0 !line(2)
  const ptr %node %head, null !line(3)
  const i32 %i, 0 !line(4)
  br loop
loop:
  icmp slt i32 %c, %i, %n !line(5)
  condbr %c, body, done
body:
  alloca %tmp, 16 !line(6)
  store i32 %i, %tmp, 0 !line(7)
  store ptr %node %head, %tmp, 8 !line(8)
  ptradd %head, %tmp, 0, 0, 0 !line(8)
  add i32 %i, %i, 1 !line(9)
  br loop
done:
  interrupt !line(11)
  ret i32 0 !line(12)
}}
"""


FIB = """
fn @fib(%n: i32) -> i32 !src("fib.c") {
  reg %c : i8
  reg %a : i32
  reg %b : i32
  reg %n1 : i32
  reg %n2 : i32
entry:
  icmp slt i32 %c, %n, 2 !line(2)
  condbr %c, base, rec
base:
  ret i32 %n !line(3)
rec:
  sub i32 %n1, %n, 1 !line(4)
  call %a, @fib, %n1
  sub i32 %n2, %n, 2 !line(5)
  call %b, @fib, %n2
  add i32 %a, %a, %b !line(6)
  ret i32 %a
}

fn @main() -> i32 !src("fib.c") {
  reg %r : i32
entry:
  const i32 %r, 5 !line(10)
  call %r, @fib, %r !line(11)
  ret i32 %r !line(12)
}
"""

# Two increments race on a shared counter; losing interleavings trip the
# final assertion.  Thread 1 is spawned, main is the second racer.
RACE = """
global @counter : i32 = 0 !var("counter")
global @done : i8 = 0 !var("done")

fn @inc() -> i32 !src("race.c") {
  reg %t : i32
  reg %d : i8
entry:
  load i32 %t, @counter, 0 !line(4)
  interrupt !line(5)
  add i32 %t, %t, 1 !line(6)
  store i32 %t, @counter, 0 !line(7)
  const i8 %d, 1
  store i8 %d, @done, 0 !line(8)
  ret i32 0 !line(9)
}

fn @main() -> i32 !src("race.c") {
  reg %t : i32
  reg %d : i8
  reg %ok : i8
entry:
  spawn @inc !line(13)
  load i32 %t, @counter, 0 !line(14)
  interrupt !line(15)
  add i32 %t, %t, 1 !line(16)
  store i32 %t, @counter, 0 !line(17)
  br wait
wait:
  interrupt !line(18)
  load i8 %d, @done, 0 !line(19)
  condbr %d, check, wait
check:
  load i32 %t, @counter, 0 !line(21)
  icmp eq i32 %ok, %t, 2 !line(22)
  condbr %ok, good, bad
good:
  ret i32 0 !line(23)
bad:
  fault "lost update" !line(24)
}
"""

# choose 2, branch 1 faults
CHOICE_FAULT = """
fn @main() -> i32 !src("choice.c") {
  reg %x : i32
  reg %c : i8
entry:
  choose %x, 2 !line(2)
  interrupt !line(3)
  icmp eq i32 %c, %x, 1 !line(4)
  condbr %c, boom, fine
boom:
  fault "bad branch" !line(5)
fine:
  ret i32 0 !line(6)
}
"""


def depth_program(depth: int) -> str:
    """Backtrace at the stored interrupt state has exactly `depth` frames:
    main alone for depth 1, else main plus depth-1 nested @rec calls."""
    return f"""
fn @rec(%n: i32) -> i32 !src("deep.c") {{
  reg %c : i8
  reg %m : i32
  reg %r : i32
entry:
  icmp sle i32 %c, %n, 1 !line(2)
  condbr %c, stop, go !line(2)
stop:
  interrupt !line(3)
  ret i32 0 !line(4)
go:
  sub i32 %m, %n, 1 !line(6)
  call %r, @rec, %m !line(7)
  ret i32 %r !line(8)
}}

fn @main() -> i32 !src("deep.c") {{
  reg %r : i32
  reg %d : i32
  reg %c : i8
entry:
  const i32 %d, {depth - 1} !line(12)
  icmp sle i32 %c, %d, 0 !line(13)
  condbr %c, leaf, deeper !line(13)
leaf:
  interrupt !line(14)
  ret i32 0 !line(15)
deeper:
  call %r, @rec, %d !line(17)
  ret i32 %r !line(18)
}}
"""


# Bounded loop with one interrupt and one choice per iteration: yields
# NITER + 2 states and a replayable nontrivial trace.
def loop_program(iters: int = 12) -> str:
    return f"""
global @acc : i32 = 0 !var("acc")

fn @main() -> i32 !src("loop.c") {{
  reg %i : i32
  reg %x : i32
  reg %c : i8
  reg %t : i32
entry:
  const i32 %i, 0 !line(2)
  br loop
loop:
  icmp slt i32 %c, %i, {iters} !line(3)
  condbr %c, body, done
body:
  choose %x, 3 !line(4)
  load i32 %t, @acc, 0 !line(5)
  add i32 %t, %t, %x !line(5)
  store i32 %t, @acc, 0 !line(5)
  interrupt !line(6)
  add i32 %i, %i, 1 !line(7)
  br loop
done:
  ret i32 0 !line(9)
}}
"""


def parse(text: str):
    return parse_program(text)


def session_for(text: str, source_paths=None) -> Session:
    return Session(parse_program(text), source_paths or ["."])


def run_to_end(s: Session, chooser=None, limit: int = 100_000) -> None:
    """Drive a session to a terminal status, answering choices with 0 or
    via `chooser(total)`."""
    while not isinstance(s.machine.status, (Faulted, Finished)):
        if s.pending is not None:
            total, _ = s.pending
            s.queue_choice(chooser(total) if chooser else 0)
        else:
            s.step("instr", 1)
        limit -= 1
        if limit <= 0:
            raise AssertionError("fixture did not terminate")


@pytest.fixture
def list_session():
    return session_for(list_program(3))


@pytest.fixture
def fib_session():
    return session_for(FIB)


@pytest.fixture
def race_session():
    return session_for(RACE)
