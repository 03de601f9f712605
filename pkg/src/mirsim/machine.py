"""Deterministic evaluator for MIR programs over the tracked heap.

Activation frames are ordinary heap objects: two header words (program
counter encoded as a code-namespace pointer, parent frame pointer) plus
one slot per register.  A distinguished root object references the
globals object and the thread table, so the entire machine state is
reachable from a single pointer and can be snapshotted wholesale.

All nondeterminism funnels through a Chooser callback: `choose`
instructions and thread scheduling at interrupt points.  The machine
never mutates anything before consulting the chooser, so a chooser may
abort the step by raising (the session uses this to surface pending
choices to the user).

Guest faults (memory violations, division by zero, explicit `fault`)
flip the status to `faulted` and leave simulator structures intact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from . import mir
from .heap import (
    CODE_BASE,
    DIV_BY_ZERO,
    EXPLICIT,
    NULL,
    NULL_DEREF,
    TYPE_CONFUSION,
    GuestFault,
    HeapState,
    PtrVal,
    SnapshotRef,
    code_ptr_value,
    decode_code_ptr,
)
from .mir import (
    Alloca,
    BinOp,
    Br,
    Call,
    CodePtr,
    CondBr,
    Choose,
    Const,
    Fault,
    Free,
    GlobalRef,
    ICmp,
    Imm,
    Instr,
    Interrupt,
    Load,
    NullImm,
    Prim,
    ProgramUnit,
    Ptr,
    PtrAdd,
    Reg,
    Ret,
    SimulatorError,
    Spawn,
    SrcLoc,
    Store,
    effective_loc,
    instr_at,
)

DEFAULT_STEP_BUDGET = 1_000_000


# -- machine status ----------------------------------------------------------


@dataclass(frozen=True)
class Running:
    pass


@dataclass(frozen=True)
class AtInterrupt:
    runnable: tuple[int, ...]

    @property
    def choices(self) -> int:
        return len(self.runnable)


@dataclass(frozen=True)
class Faulted:
    reason: str
    detail: str
    pc: CodePtr | None


@dataclass(frozen=True)
class Finished:
    exit_value: int


Status = "Running | AtInterrupt | Faulted | Finished"


def status_label(status) -> str:
    if isinstance(status, Running):
        return "running"
    if isinstance(status, AtInterrupt):
        return f"at-interrupt({status.choices})"
    if isinstance(status, Faulted):
        return f"faulted({status.reason})"
    if isinstance(status, Finished):
        return f"finished({status.exit_value})"
    raise SimulatorError(f"bad status {status!r}")


@dataclass
class StepEvent:
    executed: CodePtr | None
    loc: SrcLoc | None
    choice: tuple[int, int] | None
    status: object
    messages: list[str] = field(default_factory=list)


@dataclass
class FrameInfo:
    """Simulator-side bookkeeping for one live frame (not guest-visible)."""

    fid: int
    allocas: list[int] = field(default_factory=list)
    pending_dst: str | None = None

    def copy(self) -> "FrameInfo":
        return FrameInfo(self.fid, list(self.allocas), self.pending_dst)


@dataclass
class MachineSnapshot:
    """Everything needed to restore a machine to a captured point."""

    heap: SnapshotRef
    status: object
    active: int
    frames: dict[int, FrameInfo]
    choices: tuple[tuple[int, int], ...]

    def digest(self) -> str:
        return self.heap.digest()


def _to_signed(v: int, width: int) -> int:
    m = 1 << (8 * width)
    v %= m
    return v - m if v >= m >> 1 else v


class Machine:
    """One deterministic execution context for a program."""

    def __init__(self, program: ProgramUnit):
        self.program = program
        self.heap = HeapState()
        self.root = NULL
        self.active = 0
        self.status: object = Running()
        self.frames: dict[int, FrameInfo] = {}
        self.choices: list[tuple[int, int]] = []
        self._chooser = None

    # -- boot / capture / restore --------------------------------------

    @classmethod
    def boot(cls, program: ProgramUnit) -> "Machine":
        m = cls(program)
        h = m.heap
        glob = h.alloc(program.globals_size())
        layout = program.globals_layout()
        for g in program.globals:
            off = layout[g.name]
            desc = program.types.desc(g.type)
            if isinstance(desc, Ptr):
                h.store(PtrVal(glob.obj, off), 8, NULL)
            elif isinstance(desc, Prim) and g.init is not None:
                h.store(PtrVal(glob.obj, off), desc.width, g.init)
        table = h.alloc(8)
        frame = m._new_frame(program.fid(program.entry), parent=NULL)
        h.store(table, 8, frame)
        root = h.alloc(16)
        h.store(root, 8, glob)
        h.store(PtrVal(root.obj, 8), 8, table)
        m.root = root
        return m

    def capture(self) -> MachineSnapshot:
        return MachineSnapshot(
            heap=self.heap.snapshot(self.root),
            status=self.status,
            active=self.active,
            frames={oid: fi.copy() for oid, fi in self.frames.items()},
            choices=tuple(self.choices),
        )

    @classmethod
    def restore(cls, program: ProgramUnit, snap: MachineSnapshot) -> "Machine":
        m = cls(program)
        m.heap = HeapState.restore(snap.heap)
        m.root = snap.heap.root
        m.active = snap.active
        m.status = snap.status
        m.frames = {oid: fi.copy() for oid, fi in snap.frames.items()}
        m.choices = list(snap.choices)
        return m

    # -- state object accessors -----------------------------------------

    def globals_ptr(self) -> PtrVal:
        return self._as_ptr(self.heap.load(self.root, 8))

    def thread_table(self) -> PtrVal:
        return self._as_ptr(self.heap.load(PtrVal(self.root.obj, 8), 8))

    def thread_count(self) -> int:
        return self.heap.object_size(self.thread_table().obj) // 8

    def thread_top(self, i: int) -> PtrVal:
        table = self.thread_table()
        return self._as_ptr(self.heap.load(PtrVal(table.obj, 8 * i), 8))

    def runnable_threads(self) -> tuple[int, ...]:
        return tuple(
            i for i in range(self.thread_count()) if not self.thread_top(i).is_null
        )

    def frame_pc(self, frame: PtrVal) -> CodePtr | None:
        word = self.heap.load(frame, 8)
        if not isinstance(word, PtrVal):
            return None
        decoded = decode_code_ptr(word)
        if decoded is None:
            return None
        fid, block, index = decoded
        if fid >= len(self.program.functions):
            return None
        return CodePtr(fid, block, index)

    def frame_parent(self, frame: PtrVal) -> PtrVal:
        return self._as_ptr(self.heap.load(PtrVal(frame.obj, 8), 8))

    def current_frame(self) -> PtrVal:
        return self.thread_top(self.active)

    def current_pc(self) -> CodePtr | None:
        frame = self.current_frame()
        if frame.is_null:
            return None
        return self.frame_pc(frame)

    def position(self) -> tuple[str, SrcLoc | None, int] | None:
        """(function name, effective source location, thread) or None."""
        pc = self.current_pc()
        if pc is None:
            return None
        fn = self.program.functions[pc.fid]
        return fn.name, effective_loc(self.program, pc), self.active

    # -- register slots ---------------------------------------------------

    def _slot_ptr(self, frame: PtrVal, fid: int, reg: str):
        slot = self.program.layout(fid).slot(reg)
        return PtrVal(frame.obj, slot.offset), slot

    def read_reg(self, frame: PtrVal, fid: int, reg: str):
        addr, slot = self._slot_ptr(frame, fid, reg)
        width = self.program.types.size_of(slot.type)
        return self.heap.load(addr, width)

    def write_reg(self, frame: PtrVal, fid: int, reg: str, value) -> None:
        addr, slot = self._slot_ptr(frame, fid, reg)
        width = self.program.types.size_of(slot.type)
        if isinstance(value, PtrVal):
            self.heap.store(addr, 8, value)
        else:
            self.heap.store(addr, width, value)

    # -- typed value handling ----------------------------------------------

    @staticmethod
    def _as_ptr(v) -> PtrVal:
        if isinstance(v, PtrVal):
            return v
        if v == 0:
            return NULL
        raise GuestFault(TYPE_CONFUSION, f"scalar {v} used as a pointer")

    @staticmethod
    def _as_int(v) -> int:
        if isinstance(v, PtrVal):
            raise GuestFault(TYPE_CONFUSION, "pointer used in integer arithmetic")
        return v

    def _eval(self, frame: PtrVal, fid: int, op):
        if isinstance(op, Reg):
            return self.read_reg(frame, fid, op.name)
        if isinstance(op, Imm):
            return op.value
        if isinstance(op, NullImm):
            return NULL
        if isinstance(op, GlobalRef):
            glob = self.globals_ptr()
            return PtrVal(glob.obj, self.program.globals_layout()[op.name])
        raise SimulatorError(f"bad operand {op!r}")

    def _eval_ptr(self, frame: PtrVal, fid: int, op) -> PtrVal:
        return self._as_ptr(self._eval(frame, fid, op))

    def _eval_int(self, frame: PtrVal, fid: int, op, width: int) -> int:
        v = self._as_int(self._eval(frame, fid, op))
        return v % (1 << (8 * width))

    # -- frames -------------------------------------------------------------

    def _new_frame(self, fid: int, parent: PtrVal) -> PtrVal:
        layout = self.program.layout(fid)
        frame = self.heap.alloc(layout.size)
        self.heap.store(frame, 8, code_ptr_value(fid, 0, 0))
        self.heap.store(PtrVal(frame.obj, 8), 8, parent)
        self.frames[frame.obj] = FrameInfo(fid)
        return frame

    def _set_pc(self, frame: PtrVal, pc: CodePtr) -> None:
        self.heap.store(frame, 8, code_ptr_value(pc.fid, pc.block, pc.index))

    def _set_thread_top(self, i: int, frame: PtrVal) -> None:
        table = self.thread_table()
        self.heap.store(PtrVal(table.obj, 8 * i), 8, frame)

    # -- stepping -------------------------------------------------------------

    def step_instr(self, chooser) -> StepEvent:
        """Resolve a pending interrupt or execute one instruction.

        The chooser is a callable (total >= 2) -> taken in [0, total);
        it is consulted before any mutation, so raising from it leaves
        the machine untouched.
        """
        if isinstance(self.status, (Faulted, Finished)):
            raise SimulatorError("step on a terminal machine")
        if isinstance(self.status, AtInterrupt):
            return self._resolve_interrupt(chooser)

        frame = self.current_frame()
        if frame.is_null:
            raise SimulatorError("active thread has no frame")
        info = self.frames[frame.obj]
        pc = self.frame_pc(frame)
        if pc is None:
            self.status = Faulted("corrupt-frame", "undecodable program counter", None)
            return StepEvent(None, None, None, self.status)
        instr = instr_at(self.program, pc)
        loc = effective_loc(self.program, pc)
        event = StepEvent(pc, loc, None, self.status)
        self._chooser = chooser
        try:
            self._execute(instr, frame, info, pc, event)
        except GuestFault as f:
            self.status = Faulted(f.reason, f.detail, pc)
        finally:
            self._chooser = None
        event.status = self.status
        return event

    def resolve_interrupt(self, chooser) -> StepEvent:
        if not isinstance(self.status, AtInterrupt):
            raise SimulatorError("resolve_interrupt outside an interrupt point")
        return self._resolve_interrupt(chooser)

    def _resolve_interrupt(self, chooser) -> StepEvent:
        runnable = self.status.runnable
        choice = None
        if len(runnable) >= 2:
            taken = chooser(len(runnable))
            if not 0 <= taken < len(runnable):
                raise SimulatorError(f"chooser returned {taken} of {len(runnable)}")
            choice = (taken, len(runnable))
            self.choices.append(choice)
            self.active = runnable[taken]
        else:
            self.active = runnable[0]
        self.status = Running()
        event = StepEvent(None, None, choice, self.status)
        event.messages.append(f"scheduling thread {self.active}")
        return event

    def run_until_state(self, chooser, max_steps: int = DEFAULT_STEP_BUDGET):
        """Step until the next state boundary (interrupt, fault, finish).

        Returns the list of step events; if the budget runs out first, the
        last event carries a "budget-exhausted" message and the machine
        stays runnable.
        """
        events = []
        steps = 0
        if isinstance(self.status, AtInterrupt):
            events.append(self.step_instr(chooser))  # resolve scheduling first
            steps += 1
        while isinstance(self.status, Running):
            if steps >= max_steps:
                ev = StepEvent(None, None, None, self.status)
                ev.messages.append("budget-exhausted")
                events.append(ev)
                break
            events.append(self.step_instr(chooser))
            steps += 1
            if isinstance(self.status, AtInterrupt):
                break
        return events

    # -- instruction semantics ------------------------------------------------

    def _advance(self, frame: PtrVal, pc: CodePtr) -> None:
        self._set_pc(frame, CodePtr(pc.fid, pc.block, pc.index + 1))

    def _execute(self, instr: Instr, frame: PtrVal, info: FrameInfo, pc: CodePtr, event: StepEvent) -> None:
        types = self.program.types
        fid = info.fid

        if isinstance(instr, Const):
            if isinstance(instr.imm, NullImm):
                self.write_reg(frame, fid, instr.dst, NULL)
            else:
                self.write_reg(frame, fid, instr.dst, instr.imm.value)
            self._advance(frame, pc)

        elif isinstance(instr, BinOp):
            w = types.size_of(instr.type)
            a = self._eval_int(frame, fid, instr.a, w)
            b = self._eval_int(frame, fid, instr.b, w)
            if instr.kind == "add":
                r = a + b
            elif instr.kind == "sub":
                r = a - b
            elif instr.kind == "mul":
                r = a * b
            elif instr.kind == "sdiv":
                sb = _to_signed(b, w)
                if sb == 0:
                    raise GuestFault(DIV_BY_ZERO, "sdiv by zero")
                sa = _to_signed(a, w)
                r = abs(sa) // abs(sb)
                if (sa < 0) != (sb < 0):
                    r = -r
            elif instr.kind == "and":
                r = a & b
            elif instr.kind == "or":
                r = a | b
            else:  # xor
                r = a ^ b
            self.write_reg(frame, fid, instr.dst, r % (1 << (8 * w)))
            self._advance(frame, pc)

        elif isinstance(instr, ICmp):
            desc = types.desc(instr.type)
            if isinstance(desc, Ptr):
                a = self._eval_ptr(frame, fid, instr.a)
                b = self._eval_ptr(frame, fid, instr.b)
                eq = (a.obj, a.offset) == (b.obj, b.offset)
                r = eq if instr.rel == "eq" else not eq
            else:
                w = desc.width
                a = _to_signed(self._eval_int(frame, fid, instr.a, w), w)
                b = _to_signed(self._eval_int(frame, fid, instr.b, w), w)
                r = {
                    "eq": a == b,
                    "ne": a != b,
                    "slt": a < b,
                    "sle": a <= b,
                    "sgt": a > b,
                    "sge": a >= b,
                }[instr.rel]
            self.write_reg(frame, fid, instr.dst, 1 if r else 0)
            self._advance(frame, pc)

        elif isinstance(instr, Alloca):
            p = self.heap.alloc(instr.size)
            info.allocas.append(p.obj)
            self.write_reg(frame, fid, instr.dst, p)
            self._advance(frame, pc)

        elif isinstance(instr, Free):
            self.heap.free(self._eval_ptr(frame, fid, instr.ptr))
            self._advance(frame, pc)

        elif isinstance(instr, Load):
            p = self._eval_ptr(frame, fid, instr.ptr)
            if p.is_null:
                raise GuestFault(NULL_DEREF, "load through null")
            width = types.size_of(instr.type)
            v = self.heap.load(PtrVal(p.obj, p.offset + instr.offset), width)
            if isinstance(v, PtrVal) and not isinstance(types.desc(instr.type), Ptr):
                raise GuestFault(TYPE_CONFUSION, "integer load of a pointer word")
            self.write_reg(frame, fid, instr.dst, v)
            self._advance(frame, pc)

        elif isinstance(instr, Store):
            p = self._eval_ptr(frame, fid, instr.ptr)
            if p.is_null:
                raise GuestFault(NULL_DEREF, "store through null")
            addr = PtrVal(p.obj, p.offset + instr.offset)
            if isinstance(types.desc(instr.type), Ptr):
                self.heap.store(addr, 8, self._eval_ptr(frame, fid, instr.src))
            else:
                w = types.size_of(instr.type)
                self.heap.store(addr, w, self._eval_int(frame, fid, instr.src, w))
            self._advance(frame, pc)

        elif isinstance(instr, PtrAdd):
            p = self._eval_ptr(frame, fid, instr.ptr)
            if p.is_null:
                raise GuestFault(NULL_DEREF, "pointer arithmetic on null")
            if isinstance(instr.index, Reg):
                w = types.size_of(self.program.functions[fid].registers[instr.index.name])
                idx = _to_signed(self._eval_int(frame, fid, instr.index, w), w)
            else:
                idx = instr.index.value
            self.write_reg(
                frame, fid, instr.dst,
                PtrVal(p.obj, p.offset + instr.base + idx * instr.stride),
            )
            self._advance(frame, pc)

        elif isinstance(instr, Br):
            fn = self.program.functions[fid]
            self._set_pc(frame, CodePtr(fid, fn.block_index(instr.label), 0))

        elif isinstance(instr, CondBr):
            cond = self._eval_int(frame, fid, instr.cond, 1)
            fn = self.program.functions[fid]
            label = instr.then_label if cond != 0 else instr.else_label
            self._set_pc(frame, CodePtr(fid, fn.block_index(label), 0))

        elif isinstance(instr, Call):
            callee_fid = self.program.fid(instr.callee)
            callee = self.program.functions[callee_fid]
            args = [
                self._arg_value(frame, fid, a, ptid)
                for a, (_, ptid) in zip(instr.args, callee.params)
            ]
            self._advance(frame, pc)  # return site
            new_frame = self._new_frame(callee_fid, parent=frame)
            for (pname, _), v in zip(callee.params, args):
                self.write_reg(new_frame, callee_fid, pname, v)
            self.frames[new_frame.obj].pending_dst = instr.dst
            self._set_thread_top(self.active, new_frame)

        elif isinstance(instr, Ret):
            value = None
            fn = self.program.functions[fid]
            if instr.value is not None:
                value = self._arg_value(frame, fid, instr.value, fn.ret)
            parent = self.frame_parent(frame)
            for oid in info.allocas:
                if self.heap.is_live(oid):
                    self.heap.free(PtrVal(oid, 0))
            self.heap.free(frame)
            popped = self.frames.pop(frame.obj)
            if not parent.is_null:
                self._set_thread_top(self.active, parent)
                if popped.pending_dst is not None:
                    parent_fid = self.frames[parent.obj].fid
                    self.write_reg(parent, parent_fid, popped.pending_dst, value)
            else:
                self._set_thread_top(self.active, NULL)
                if self.active == 0:
                    exit_value = _to_signed(value if isinstance(value, int) else 0, 4)
                    self.status = Finished(exit_value)
                else:
                    runnable = self.runnable_threads()
                    if not runnable:
                        self.status = Finished(0)
                    else:
                        # thread exit is a scheduling point for the survivors
                        self.status = AtInterrupt(runnable)

        elif isinstance(instr, Choose):
            if instr.total == 1:
                self.write_reg(frame, fid, instr.dst, 0)
            else:
                self.write_reg(frame, fid, instr.dst, self._consult(instr.total, event))
            self._advance(frame, pc)

        elif isinstance(instr, Interrupt):
            self._advance(frame, pc)
            self.status = AtInterrupt(self.runnable_threads())

        elif isinstance(instr, Spawn):
            callee_fid = self.program.fid(instr.callee)
            callee = self.program.functions[callee_fid]
            arg = None
            if instr.arg is not None:
                arg = self._arg_value(frame, fid, instr.arg, callee.params[0][1])
            self._advance(frame, pc)
            new_frame = self._new_frame(callee_fid, parent=NULL)
            if arg is not None:
                self.write_reg(new_frame, callee_fid, callee.params[0][0], arg)
            self._grow_thread_table(new_frame)

        elif isinstance(instr, Fault):
            raise GuestFault(EXPLICIT, instr.message)

        else:
            raise SimulatorError(f"cannot execute {instr!r}")

    def _consult(self, total: int, event: StepEvent) -> int:
        taken = self._chooser(total)
        if not 0 <= taken < total:
            raise SimulatorError(f"chooser returned {taken} of {total}")
        choice = (taken, total)
        self.choices.append(choice)
        event.choice = choice
        return taken

    def _arg_value(self, frame: PtrVal, fid: int, op, tid):
        desc = self.program.types.desc(tid)
        if isinstance(desc, Ptr):
            return self._eval_ptr(frame, fid, op)
        return self._eval_int(frame, fid, op, desc.width)

    def _grow_thread_table(self, new_frame: PtrVal) -> None:
        old = self.thread_table()
        n = self.heap.object_size(old.obj) // 8
        new = self.heap.alloc((n + 1) * 8)
        for i in range(n):
            word = self.heap.load(PtrVal(old.obj, 8 * i), 8)
            self.heap.store(PtrVal(new.obj, 8 * i), 8, self._as_ptr(word))
        self.heap.store(PtrVal(new.obj, 8 * n), 8, new_frame)
        self.heap.free(old)
        self.heap.store(PtrVal(self.root.obj, 8), 8, new)
