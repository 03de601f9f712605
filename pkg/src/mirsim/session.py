"""Interactive simulation sessions: states, time travel, traces.

A session owns one machine and snapshots it at model-checker granularity
(interrupt points, faults, termination).  Each boundary mints a numbered
state record ("#start", "#1", ...) holding an immutable machine snapshot
and the choice prefix that reaches it; `rewind` restores any record and
deterministic replay makes forward re-execution reproduce the original
digests bit for bit.

Nondeterministic choices are answered, in priority order, by a queued
user answer, by an active trace lock (a loaded counterexample), or by
suspending the session with a pending choice for the user.  Overriding
a locked choice drops the rest of the lock.

The bounded explorer performs depth-first search over choice outcomes
with digest deduplication and returns the choice trace of the first
faulting execution it finds, standing in for an external model checker.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from .debug import DebugContext, DebugNode, SourceWindow, source_window
from .machine import (
    DEFAULT_STEP_BUDGET,
    AtInterrupt,
    Faulted,
    Finished,
    Machine,
    MachineSnapshot,
    Running,
    StepEvent,
    status_label,
)
from .mir import Choose, ProgramUnit, effective_loc, instr_at

TRACE_HEADER = "mirsim-trace 1"


def format_trace(trace) -> str:
    """Trace file text: header line, then one `choose taken/total` per choice."""
    lines = [TRACE_HEADER]
    lines.extend(f"choose {taken}/{total}" for taken, total in trace)
    return "\n".join(lines) + "\n"


def parse_trace_text(text: str) -> list[tuple[int, int]]:
    """Parse the trace file format; blank lines and '#' comments ignored."""
    lines = [
        ln.strip()
        for ln in text.splitlines()
        if ln.strip() and not ln.strip().startswith("#")
    ]
    if not lines or lines[0] != TRACE_HEADER:
        raise SessionError(f"trace file must start with {TRACE_HEADER!r}")
    trace = []
    for ln in lines[1:]:
        parts = ln.split()
        ok = len(parts) == 2 and parts[0] == "choose" and "/" in parts[1]
        if ok:
            taken_s, _, total_s = parts[1].partition("/")
            ok = taken_s.isdigit() and total_s.isdigit()
        if not ok:
            raise SessionError(f"bad trace line {ln!r}")
        trace.append((int(taken_s), int(total_s)))
    return trace


class SessionError(Exception):
    """User-facing command error; the session stays usable."""


class TraceMismatch(SessionError):
    """A loaded trace disagrees with the program about a choice total."""

    def __init__(self, position: int, expected_total: int, actual_total: int):
        super().__init__(
            f"trace mismatch at entry {position}: trace says total "
            f"{expected_total}, program requests {actual_total}"
        )
        self.position = position
        self.expected_total = expected_total
        self.actual_total = actual_total


class ChoicePending(Exception):
    """Raised internally when execution needs an unanswered choice."""

    def __init__(self, total: int, kind: str):
        super().__init__(f"choice pending ({kind}, total {total})")
        self.total = total
        self.kind = kind  # "choose" | "thread"


@dataclass
class Breakpoint:
    kind: str  # "line" | "function"
    enabled: bool = True
    file: str | None = None
    line: int | None = None
    func: str | None = None

    def describe(self) -> str:
        if self.kind == "line":
            return f"{self.file}:{self.line}"
        return f"@{self.func}"


@dataclass
class StateRecord:
    index: int
    names: list[str]
    msnap: MachineSnapshot
    prefix: tuple[tuple[int, int], ...]
    _ctx: DebugContext | None = field(default=None, repr=False)

    @property
    def name(self) -> str:
        return self.names[0]

    def digest(self) -> str:
        return self.msnap.digest()

    @property
    def status(self):
        return self.msnap.status


@dataclass
class ExploreResult:
    trace: list[tuple[int, int]] | None
    states: int  # distinct states seen (digest-deduplicated)


class _Abort(Exception):
    """Internal: stop a scripted exploration run at an unanswered choice."""

    def __init__(self, total: int):
        self.total = total


class Session:
    """One interactive simulation of one program."""

    def __init__(self, program: ProgramUnit, source_paths: list[str] | None = None):
        self.program = program
        self.source_paths = list(source_paths or ["."])
        self.machine = Machine.boot(program)
        self.records: list[StateRecord] = []
        self._by_name: dict[str, StateRecord] = {}
        self.current_index = 0
        self.breakpoints: dict[int, Breakpoint] = {}
        self._next_bp = 1
        self.lock: list[tuple[int, int]] | None = None
        self.lock_pos = 0
        self.pending: tuple[int, str] | None = None
        self._queued: int | None = None
        self._ctx: DebugContext | None = None
        self._last_break = None  # pc of the most recent breakpoint stop
        self.on_event: list = []
        # commands from the CLI and the UI gateway serialize on this lock
        self.command_lock = threading.RLock()
        self._record(initial=True)

    # -- events -----------------------------------------------------------

    def _emit(self, event: dict) -> None:
        for hook in list(self.on_event):
            hook(event)

    def _emit_position(self) -> None:
        pos = self.machine.position()
        if pos is None:
            return
        fn, loc, thread = pos
        self._emit({
            "event": "position",
            "function": fn,
            "file": loc.file if loc else None,
            "line": loc.line if loc else None,
            "thread": thread,
        })

    # -- state records -------------------------------------------------------

    def _record(self, initial: bool = False) -> StateRecord:
        prefix = tuple(self.machine.choices)
        nxt_i = self.current_index + 1
        if not initial and nxt_i < len(self.records):
            nxt = self.records[nxt_i]
            if (
                nxt.prefix == prefix
                and status_label(nxt.status) == status_label(self.machine.status)
                and nxt.digest() == self.machine.heap.snapshot(self.machine.root).digest()
            ):
                self.current_index = nxt_i
                self._emit({
                    "event": "state-minted",
                    "name": nxt.name,
                    "status": status_label(nxt.status),
                })
                return nxt
        index = len(self.records)
        name = "#start" if initial else f"#{index}"
        rec = StateRecord(index, [name], self.machine.capture(), prefix)
        self.records.append(rec)
        self._by_name[name] = rec
        self.current_index = index
        self._emit({
            "event": "state-minted",
            "name": name,
            "status": status_label(rec.status),
        })
        return rec

    def record_named(self, name: str) -> StateRecord:
        rec = self._by_name.get(name)
        if rec is None:
            raise SessionError(f"unknown state {name!r}")
        return rec

    def name_state(self, existing: str, alias: str) -> None:
        rec = self.record_named(existing)
        if not alias.startswith("#"):
            raise SessionError("state names start with '#'")
        if alias in self._by_name:
            raise SessionError(f"name {alias!r} already in use")
        rec.names.append(alias)
        self._by_name[alias] = rec

    def state_list(self) -> list[tuple[str, str]]:
        return [(" ".join(r.names), status_label(r.status)) for r in self.records]

    # -- choice plumbing ---------------------------------------------------

    def _chooser(self, total: int) -> int:
        if self._queued is not None:
            taken, self._queued = self._queued, None
            if not 0 <= taken < total:
                raise SessionError(f"choice {taken} out of range (total {total})")
            return taken
        if self.lock is not None and self.lock_pos < len(self.lock):
            taken, rec_total = self.lock[self.lock_pos]
            if rec_total != total:
                raise TraceMismatch(self.lock_pos, rec_total, total)
            self.lock_pos += 1
            return taken
        kind = "thread" if isinstance(self.machine.status, AtInterrupt) else "choose"
        raise ChoicePending(total, kind)

    def queue_choice(self, taken: int) -> list[StepEvent]:
        """Answer a pending choice, or override the next locked one;
        executes exactly the machine step that consumes it."""
        if self.pending is not None:
            total, _ = self.pending
            if not 0 <= taken < total:
                raise SessionError(f"choice {taken} out of range (total {total})")
            self.pending = None
        else:
            nxt = self._next_choice_total()
            if nxt is None:
                raise SessionError("no pending choice")
            if not 0 <= taken < nxt:
                raise SessionError(f"choice {taken} out of range (total {nxt})")
            if self.lock is not None and self.lock_pos < len(self.lock):
                del self.lock[self.lock_pos:]  # user override clears the lock suffix
        self._queued = taken
        events = [self._machine_step()]
        self._emit_position()
        return events

    def pick_thread(self, thread: int) -> list[StepEvent]:
        """Answer a pending scheduling choice by absolute thread index."""
        status = self.machine.status
        if not isinstance(status, AtInterrupt):
            raise SessionError("no pending thread choice")
        if thread not in status.runnable:
            raise SessionError(
                f"thread {thread} is not runnable (runnable: {list(status.runnable)})"
            )
        return self.queue_choice(status.runnable.index(thread))

    def _next_choice_total(self) -> int | None:
        """Total of the choice the very next machine step would consume."""
        status = self.machine.status
        if isinstance(status, AtInterrupt):
            return status.choices if status.choices >= 2 else None
        if isinstance(status, Running):
            pc = self.machine.current_pc()
            if pc is not None:
                instr = instr_at(self.program, pc)
                if isinstance(instr, Choose) and instr.total >= 2:
                    return instr.total
        return None

    # -- stepping ------------------------------------------------------------

    def _require_runnable(self) -> None:
        if isinstance(self.machine.status, (Faulted, Finished)):
            raise SessionError(
                f"program already {status_label(self.machine.status)}; rewind to continue"
            )

    def _machine_step(self) -> StepEvent:
        prev = self.machine.status
        try:
            event = self.machine.step_instr(self._chooser)
        except ChoicePending as pending:
            self.pending = (pending.total, pending.kind)
            self._emit({
                "event": "choice-pending",
                "total": pending.total,
                "kind": pending.kind,
            })
            raise
        self._ctx = None
        status = self.machine.status
        if isinstance(status, (AtInterrupt, Faulted, Finished)) and isinstance(prev, Running):
            self._record()
        if isinstance(status, (Faulted, Finished)):
            self._emit({"event": "terminal", "status": status_label(status)})
        return event

    def step(self, kind: str = "instr", count: int = 1) -> list[StepEvent]:
        """Step by instructions ("instr"), source lines ("line"), or source
        lines treating calls as atomic ("over")."""
        if count < 1:
            raise SessionError("step count must be >= 1")
        self._require_runnable()
        events: list[StepEvent] = []
        try:
            if kind == "instr":
                executed = 0
                while executed < count:
                    ev = self._machine_step()
                    events.append(ev)
                    if ev.executed is not None:
                        executed += 1
                    if isinstance(self.machine.status, (Faulted, Finished)):
                        break
            elif kind in ("line", "over"):
                for _ in range(count):
                    events.extend(self._step_one_line(over=(kind == "over")))
                    if isinstance(self.machine.status, (Faulted, Finished)):
                        break
            else:
                raise SessionError(f"unknown step kind {kind!r}")
        except ChoicePending:
            pass
        self._emit_position()
        return events

    def _current_line(self) -> tuple[str, int] | None:
        pos = self.machine.position()
        if pos is None or pos[1] is None:
            return None
        return (pos[1].file, pos[1].line)

    def _step_one_line(self, over: bool, budget: int = 100_000) -> list[StepEvent]:
        start_line = self._current_line()
        start_frame = self.machine.current_frame().obj
        events = []
        for _ in range(budget):
            events.append(self._machine_step())
            if isinstance(self.machine.status, (Faulted, Finished)):
                return events
            if over and start_frame in self.machine.frames \
                    and self.machine.current_frame().obj != start_frame:
                continue  # inside a call made from the starting frame
            line = self._current_line()
            if line is not None and line != start_line:
                return events
        events[-1].messages.append("line-step budget exhausted")
        return events

    def run_until_break(self, max_steps: int = DEFAULT_STEP_BUDGET) -> list[StepEvent]:
        """Run until a breakpoint hits or the program reaches a terminal
        status, storing states at every boundary on the way."""
        self._require_runnable()
        events: list[StepEvent] = []
        last_loc: tuple[str, int] | None = None
        resume_from = self._last_break
        self._last_break = None
        steps = 0
        try:
            while True:
                if isinstance(self.machine.status, (Faulted, Finished)):
                    break
                if steps >= max_steps:
                    ev = StepEvent(None, None, None, self.machine.status)
                    ev.messages.append("budget-exhausted")
                    events.append(ev)
                    break
                if isinstance(self.machine.status, Running):
                    pc = self.machine.current_pc()
                    resuming = steps == 0 and pc == resume_from
                    if not resuming:
                        hit = self._breakpoint_hit(last_loc)
                        if hit is not None:
                            self._last_break = pc
                            events.append(
                                StepEvent(None, None, None, self.machine.status,
                                          [f"breakpoint {hit}"])
                            )
                            break
                    last_loc = self._current_line()
                events.append(self._machine_step())
                steps += 1
        except ChoicePending:
            pass
        self._emit_position()
        return events

    def _breakpoint_hit(self, prev_loc) -> str | None:
        pc = self.machine.current_pc()
        if pc is None:
            return None
        loc = effective_loc(self.program, pc)
        for bp in self.breakpoints.values():
            if not bp.enabled:
                continue
            if bp.kind == "function":
                if pc.block == 0 and pc.index == 0 \
                        and self.program.functions[pc.fid].name == bp.func:
                    return bp.describe()
            else:
                if loc is not None and loc.line == bp.line \
                        and loc.file.endswith(bp.file) \
                        and (loc.file, loc.line) != prev_loc:
                    return bp.describe()
        return None

    # -- breakpoints ---------------------------------------------------------

    def add_breakpoint(self, spec: str) -> int:
        """spec: "@function" or "file:line"."""
        if spec.startswith("@"):
            name = spec[1:]
            if not self.program.has_function(name):
                raise SessionError(f"unknown function @{name}")
            bp = Breakpoint("function", func=name)
        else:
            file, sep, line = spec.rpartition(":")
            if not sep or not line.isdigit():
                raise SessionError("breakpoint spec must be @function or file:line")
            bp = Breakpoint("line", file=file, line=int(line))
        bid = self._next_bp
        self._next_bp += 1
        self.breakpoints[bid] = bp
        return bid

    def delete_breakpoint(self, bid: int) -> None:
        if bid not in self.breakpoints:
            raise SessionError(f"no breakpoint {bid}")
        del self.breakpoints[bid]

    # -- rewind ---------------------------------------------------------------

    def rewind(self, target: str) -> StateRecord:
        rec = self.record_named(target)
        self.machine = Machine.restore(self.program, rec.msnap)
        self.current_index = rec.index
        self.pending = None
        self._queued = None
        self._ctx = None
        self._last_break = None
        if self.lock is not None:
            if list(rec.prefix) == self.lock[: len(rec.prefix)]:
                self.lock_pos = len(rec.prefix)
            else:
                self.lock = None
        self._emit({"event": "rewound", "name": rec.name,
                    "status": status_label(rec.status)})
        self._emit_position()
        return rec

    # -- inspection -------------------------------------------------------------

    def _context(self) -> DebugContext:
        if self._ctx is None:
            snap = self.machine.heap.snapshot(self.machine.root)
            self._ctx = DebugContext(snap, self.program, self.machine.active)
        return self._ctx

    def _record_context(self, rec: StateRecord) -> DebugContext:
        if rec._ctx is None:
            rec._ctx = DebugContext(rec.msnap.heap, self.program, rec.msnap.active)
        return rec._ctx

    def backtrace(self, thread: int | None = None):
        """Innermost-first (function, location, frame node) list."""
        m = self.machine
        if thread is None:
            thread = m.active
        if not 0 <= thread < m.thread_count():
            raise SessionError(f"no thread {thread}")
        ctx = self._context()
        out = []
        frame = m.thread_top(thread)
        seen = set()
        while not frame.is_null and frame.obj not in seen and m.heap.is_live(frame.obj):
            seen.add(frame.obj)
            node = ctx.frame_node(frame)
            attrs = dict(node.attributes)
            fname = attrs.get("function", "?")
            pc = m.frame_pc(frame)
            loc = effective_loc(self.program, pc) if pc is not None else None
            out.append((fname, loc, node))
            frame = m.frame_parent(frame)
        return out

    def show(self, path: str) -> DebugNode:
        """Resolve a meta-variable path like $frame.pt.deref.x or #start.globals."""
        if not path:
            raise SessionError("empty path")
        head, _, rest = path.partition(".")
        node = self._resolve_metavar(head)
        for step in rest.split(".") if rest else []:
            child = node.find(step)
            if child is None:
                names = [n for n, _ in node.components()] + [n for n, _ in node.relations()]
                raise SessionError(
                    f"no component or relation {step!r} (have: {', '.join(names) or 'none'})"
                )
            node = child
        return node

    def _resolve_metavar(self, name: str) -> DebugNode:
        if name == "$state":
            return self._context().state_node()
        if name == "$globals":
            return self._context().globals_node()
        if name == "$frame":
            frame = self.machine.current_frame()
            if frame.is_null:
                raise SessionError("active thread has no frame")
            return self._context().frame_node(frame)
        if name.startswith("#"):
            rec = self.record_named(name)
            return self._record_context(rec).state_node()
        raise SessionError(f"unknown meta variable {name!r}")

    def source(self, context: int = 3) -> SourceWindow | None:
        pc = self.machine.current_pc()
        if pc is None:
            raise SessionError("no current position")
        return source_window(self.program, pc, context, self.source_paths)

    # -- traces ----------------------------------------------------------------

    def save_trace(self) -> list[tuple[int, int]]:
        return list(self.machine.choices)

    def load_trace(self, trace, max_steps: int = DEFAULT_STEP_BUDGET) -> int:
        """Eagerly replay a choice trace from #start, numbering the states
        along it, then rewind to #start with the trace locked.  Returns
        the number of boundary states on the trace."""
        validated = []
        for i, entry in enumerate(trace):
            taken, total = entry
            if total < 2 or not 0 <= taken < total:
                raise SessionError(f"invalid trace entry {i}: {entry!r}")
            validated.append((taken, total))
        self.rewind("#start")
        self.lock = validated
        self.lock_pos = 0
        appended_from = len(self.records)
        boundaries = 0
        steps = 0
        try:
            while not isinstance(self.machine.status, (Faulted, Finished)):
                if steps >= max_steps:
                    raise SessionError("trace replay exceeded the step budget")
                before = self.current_index
                try:
                    self._machine_step()
                except ChoicePending:
                    self.pending = None  # past the end of the trace: stop replaying
                    break
                steps += 1
                if self.current_index != before:
                    boundaries += 1
        except TraceMismatch:
            for rec in self.records[appended_from:]:
                for n in rec.names:
                    del self._by_name[n]
            del self.records[appended_from:]
            self.lock = None
            self.rewind("#start")
            raise
        self.rewind("#start")
        return boundaries

    # -- exploration --------------------------------------------------------------

    def explore(self, max_states: int = 10_000,
                step_budget: int = DEFAULT_STEP_BUDGET) -> ExploreResult:
        """Bounded DFS over choice outcomes from #start, deduplicating by
        canonical digest; returns the first faulting trace found, if any.
        The session's own state is untouched."""
        start = self.records[0].msnap
        visited = {start.digest()}
        stack = [start]
        while stack:
            msnap = stack.pop()
            successors = self._successors(msnap, step_budget)
            for snap2 in reversed(successors):
                if isinstance(snap2.status, Faulted):
                    return ExploreResult(list(snap2.choices), len(visited))
                d = snap2.digest()
                if d in visited:
                    continue
                visited.add(d)
                if len(visited) > max_states:
                    return ExploreResult(None, len(visited))
                if not isinstance(snap2.status, Finished):
                    stack.append(snap2)
        return ExploreResult(None, len(visited))

    def _successors(self, msnap: MachineSnapshot, step_budget: int):
        """All next-boundary machine snapshots, enumerated in ascending
        choice order by re-running with scripted choice vectors."""
        results = []
        pending_vectors = [[]]
        while pending_vectors:
            vec = pending_vectors.pop()
            m = Machine.restore(self.program, msnap)
            answers = iter(vec)

            def chooser(total: int) -> int:
                try:
                    return next(answers)
                except StopIteration:
                    raise _Abort(total) from None

            try:
                events = m.run_until_state(chooser, step_budget)
            except _Abort as abort:
                pending_vectors.extend(
                    vec + [t] for t in reversed(range(abort.total))
                )
                continue
            if events and "budget-exhausted" in events[-1].messages:
                continue  # diverging schedule: not a state
            results.append(m.capture())
        return results
