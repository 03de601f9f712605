"""Command-line driver: a gdb-style REPL over the simulation session.

Output is line-oriented plain text, one fact per line, so batch runs of
the same program and script produce byte-identical transcripts (after
the version banner).  No command may crash the process; errors print an
`error:` line and the loop continues.

Invocation:
    mirsim <file.mir> [--batch script] [--trace file] [--ui port]
           [--source-path dir]...
Exit codes: 0 clean quit, 1 faulted at exit, 2 usage errors.
"""

from __future__ import annotations

import argparse
import difflib
import os
import shlex
import sys

from . import __version__
from .debug import render_dot, render_node
from .heap import GuestFault
from .machine import Faulted
from .mir import ParseError, parse_program
from .session import (
    ChoicePending,
    Session,
    SessionError,
    format_trace,
    parse_trace_text,
)

VERBS = (
    "start", "step", "next", "over", "run", "break", "delete", "backtrace",
    "source", "show", "states", "name", "rewind", "trace", "explore",
    "graph", "thread", "choose", "quit",
)

EXECUTION_VERBS = ("step", "next", "over", "run")


class UsageError(Exception):
    pass


def parse_command(line: str):
    """Split a command line into (verb, args); raises UsageError."""
    try:
        parts = shlex.split(line, comments=False)
    except ValueError as e:
        raise UsageError(f"bad quoting: {e}")
    if not parts:
        return None
    verb, args = parts[0], parts[1:]
    if verb not in VERBS:
        hints = difflib.get_close_matches(verb, VERBS, n=3)
        hint = f"; did you mean: {', '.join(hints)}" if hints else ""
        raise UsageError(f"unknown command {verb!r}{hint} (commands: {', '.join(VERBS)})")
    return verb, args


def _int_arg(args, i, default=None, name="argument"):
    if i >= len(args):
        if default is None:
            raise UsageError(f"missing {name}")
        return default
    try:
        return int(args[i])
    except ValueError:
        raise UsageError(f"{name} must be an integer, got {args[i]!r}")


class Repl:
    """Executes commands against a session and prints the transcript."""

    def __init__(self, program, source_paths, out):
        self.program = program
        self.source_paths = source_paths
        self.out = out
        self.session: Session | None = None
        self.quit_requested = False

    def println(self, text: str = "") -> None:
        self.out.write(text + "\n")

    # -- session events ------------------------------------------------

    def _on_event(self, event: dict) -> None:
        kind = event.get("event")
        if kind == "state-minted":
            self.println(f"new state {event['name']} ({event['status']})")
        elif kind == "choice-pending":
            if event["kind"] == "thread":
                self.println(
                    f"scheduling choice pending: {event['total']} runnable threads "
                    f"(answer with 'thread <i>' or 'choose <i>')"
                )
            else:
                self.println(
                    f"choice pending: total {event['total']} (answer with 'choose <i>')"
                )
        elif kind == "position":
            where = ""
            if event.get("file"):
                where = f" {event['file']}:{event['line']}"
            self.println(f"at @{event['function']}{where} (thread {event['thread']})")
        elif kind == "terminal":
            self.println(f"program {event['status']}")
        elif kind == "rewound":
            self.println(f"rewound to {event['name']} ({event['status']})")

    def start_session(self) -> None:
        self.session = Session(self.program, self.source_paths)
        self.session.on_event.append(self._on_event)
        self.println("new state #start (running)")
        self.session._emit_position()

    def _need_session(self) -> Session:
        if self.session is None:
            raise SessionError("no session; run 'start' first")
        return self.session

    # -- command dispatch --------------------------------------------------

    def execute(self, line: str) -> None:
        try:
            parsed = parse_command(line)
            if parsed is None:
                return
            verb, args = parsed
            if self.session is not None:
                with self.session.command_lock:
                    self._dispatch(verb, args)
            else:
                self._dispatch(verb, args)
        except (UsageError, SessionError, ParseError) as e:
            self.println(f"error: {e}")
        except ChoicePending:
            pass  # already announced via the event hook
        except GuestFault as e:
            self.println(f"error: {e}")
        except Exception as e:  # the REPL must never crash on any input
            self.println(f"internal error: {type(e).__name__}: {e}")

    def _dispatch(self, verb: str, args: list[str]) -> None:
        if verb == "quit":
            self.quit_requested = True
            return
        if verb == "start":
            if self.session is None:
                self.start_session()
            else:
                # other interfaces (the gateway) hold this session object,
                # so restarting rewinds it rather than replacing it
                self.session.rewind("#start")
            return
        s = self._need_session()
        if verb in EXECUTION_VERBS and s.pending is not None:
            raise SessionError("choice pending; answer with 'choose' or 'thread'")

        if verb == "step":
            s.step("instr", _int_arg(args, 0, 1, "count"))
        elif verb == "next":
            s.step("line", _int_arg(args, 0, 1, "count"))
        elif verb == "over":
            s.step("over", _int_arg(args, 0, 1, "count"))
        elif verb == "run":
            events = s.run_until_break()
            for ev in events:
                for msg in ev.messages:
                    if msg.startswith("breakpoint") or msg == "budget-exhausted":
                        self.println(msg)
        elif verb == "break":
            if not args:
                for bid, bp in sorted(s.breakpoints.items()):
                    state = "" if bp.enabled else " (disabled)"
                    self.println(f"breakpoint {bid}: {bp.describe()}{state}")
                return
            bid = s.add_breakpoint(args[0])
            self.println(f"breakpoint {bid}: {s.breakpoints[bid].describe()}")
        elif verb == "delete":
            s.delete_breakpoint(_int_arg(args, 0, name="breakpoint id"))
            self.println("deleted")
        elif verb == "backtrace":
            thread = _int_arg(args, 0, -1, "thread") if args else None
            frames = s.backtrace(None if thread in (None, -1) else thread)
            if not frames:
                self.println("no frames (thread finished)")
            for i, (fname, loc, _) in enumerate(frames):
                where = f" at {loc.file}:{loc.line}" if loc else ""
                self.println(f"#{i} @{fname}{where}")
        elif verb == "source":
            window = s.source(_int_arg(args, 0, 3, "context"))
            if window is None:
                self.println("source unavailable")
            else:
                for i, text in enumerate(window.lines):
                    n = window.first_line + i
                    marker = "=>" if n == window.highlight else "  "
                    self.println(f"{marker} {n:4d} | {text}")
        elif verb == "show":
            if not args:
                raise UsageError("show needs a path, e.g. show $frame")
            for out_line in render_node(s.show(args[0])):
                self.println(out_line)
        elif verb == "states":
            for names, status in s.state_list():
                self.println(f"{names} ({status})")
        elif verb == "name":
            if len(args) != 2:
                raise UsageError("usage: name <#state> <#alias>")
            s.name_state(args[0], args[1])
            self.println(f"named {args[0]} as {args[1]}")
        elif verb == "rewind":
            if not args:
                raise UsageError("usage: rewind <#state>")
            s.rewind(args[0])
        elif verb == "trace":
            self._trace_cmd(s, args)
        elif verb == "explore":
            result = s.explore(_int_arg(args, 0, 10_000, "max states"))
            if result.trace is None:
                self.println(f"no fault found ({result.states} states explored)")
            else:
                self.println(
                    f"fault trace found ({len(result.trace)} choices, "
                    f"{result.states} states explored):"
                )
                for taken, total in result.trace:
                    self.println(f"  choose {taken}/{total}")
                if len(args) > 1:
                    with open(args[1], "w", encoding="utf-8") as fh:
                        fh.write(format_trace(result.trace))
                    self.println(f"trace written to {args[1]}")
        elif verb == "graph":
            if len(args) != 3:
                raise UsageError("usage: graph <path> <depth> <out.dot>")
            node = s.show(args[0])
            dot = render_dot(node, _int_arg(args, 1, name="depth"))
            with open(args[2], "w", encoding="utf-8") as fh:
                fh.write(dot)
            self.println(f"graph written to {args[2]}")
        elif verb == "thread":
            s.pick_thread(_int_arg(args, 0, name="thread index"))
        elif verb == "choose":
            s.queue_choice(_int_arg(args, 0, name="choice"))

    def _trace_cmd(self, s: Session, args: list[str]) -> None:
        if len(args) != 2 or args[0] not in ("load", "save"):
            raise UsageError("usage: trace load <file> | trace save <file>")
        if args[0] == "save":
            with open(args[1], "w", encoding="utf-8") as fh:
                fh.write(format_trace(s.save_trace()))
            self.println(f"trace saved to {args[1]}")
        else:
            try:
                with open(args[1], "r", encoding="utf-8") as fh:
                    trace = parse_trace_text(fh.read())
            except OSError as e:
                raise SessionError(f"cannot read trace: {e}")
            boundaries = s.load_trace(trace)
            self.println(
                f"trace loaded: {len(trace)} choices, {boundaries} states replayed; "
                f"rewound to #start with choices locked"
            )

    # -- main loop ---------------------------------------------------------

    def repl(self, lines, echo: bool) -> int:
        for raw in lines:
            line = raw.rstrip("\n")
            if echo and line.strip():
                self.println(f"> {line.strip()}")
            self.execute(line)
            if self.quit_requested:
                break
        if self.session is not None and isinstance(self.session.machine.status, Faulted):
            return 1
        return 0


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(
        prog="mirsim", description="Interactive, reversible MIR simulator."
    )
    ap.add_argument("program", help="MIR program file (.mir)")
    ap.add_argument("--batch", help="run commands from a script and exit")
    ap.add_argument("--trace", help="load a choice trace after starting")
    ap.add_argument("--ui", type=int, metavar="PORT", help="serve the browser UI")
    ap.add_argument(
        "--source-path", action="append", default=[], metavar="DIR",
        help="directory searched for source files (repeatable)",
    )
    try:
        opts = ap.parse_args(argv)
    except SystemExit as e:
        return 2 if e.code not in (0, None) else 0

    source_paths = list(opts.source_path)
    env_path = os.environ.get("MIRSIM_SOURCE_PATH")
    if env_path:
        source_paths.extend(p for p in env_path.split(os.pathsep) if p)
    source_paths.append(os.path.dirname(os.path.abspath(opts.program)) or ".")

    try:
        with open(opts.program, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        print(f"mirsim: cannot read program: {e}", file=sys.stderr)
        return 2
    try:
        program = parse_program(text)
    except ParseError as e:
        print(f"mirsim: parse error in {opts.program}: {e}", file=sys.stderr)
        return 2

    out = sys.stdout
    out.write(f"mirsim {__version__}\n")
    repl = Repl(program, source_paths, out)
    for warning in program.warnings:
        repl.println(f"warning: {warning}")
    repl.start_session()

    if opts.trace:
        repl.execute(f'trace load "{opts.trace}"')

    server = None
    if opts.ui is not None:
        from .gateway import serve

        server = serve(repl.session, opts.ui)
        repl.println(f"ui listening on http://127.0.0.1:{opts.ui}/")

    try:
        if opts.batch:
            try:
                with open(opts.batch, "r", encoding="utf-8") as fh:
                    script = fh.readlines()
            except OSError as e:
                print(f"mirsim: cannot read batch script: {e}", file=sys.stderr)
                return 2
            return repl.repl(script, echo=True)
        return repl.repl(sys.stdin, echo=False)
    finally:
        if server is not None:
            server.stop()


if __name__ == "__main__":
    sys.exit(main())
