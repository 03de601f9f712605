"""MIR: a miniature LLVM-like IR with explicit basic blocks and hypercalls.

This module defines the in-memory form of a MIR program (types, globals,
functions, instructions, debug annotations), the textual parser, a pretty
printer whose output round-trips, and the deterministic frame layout used
to materialize activation records as heap objects.

The textual grammar is documented in docs/mir-reference.md.  In short:

    type %node = struct { v: i32 @0, next: ptr %node @8 } size 16
    global @g : i32 = 42 !var("g")
    fn @main() -> i32 !src("main.c") {
      reg %r : i32 !var("r")
    entry:
      const i32 %r, 0 !line(1)
      ret i32 %r
    }

Comments start with ';' and run to end of line.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

POINTER_SIZE = 8
FRAME_HEADER_SIZE = 16  # pc word + parent word

BINOP_KINDS = ("add", "sub", "mul", "sdiv", "and", "or", "xor")
ICMP_RELS = ("eq", "ne", "slt", "sle", "sgt", "sge")


class ParseError(Exception):
    """Raised for any syntactic or semantic error in MIR source."""

    def __init__(self, message: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {message}" if line else message)
        self.message = message
        self.line = line
        self.col = col


class SimulatorError(Exception):
    """Internal misuse of the simulator API (a bug, not a guest fault)."""


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------

TypeId = int


@dataclass(frozen=True)
class Prim:
    width: int  # bytes: 1, 4 or 8
    signed: bool = True


@dataclass(frozen=True)
class Ptr:
    base: TypeId


@dataclass(frozen=True)
class StructField:
    name: str
    offset: int
    type: TypeId


@dataclass(frozen=True)
class Struct:
    name: str
    size: int
    fields: tuple[StructField, ...]


@dataclass(frozen=True)
class Array:
    elem: TypeId
    count: int


TypeDesc = "Prim | Ptr | Struct | Array"


class TypeTable:
    """Interning table for type descriptors.

    Prim/Ptr/Array types are structurally interned; structs are registered
    once under their declared name and may be self- or forward-referential.
    """

    def __init__(self):
        self._descs: list = []
        self._intern: dict = {}
        self._named: dict[str, TypeId] = {}

    def __len__(self) -> int:
        return len(self._descs)

    def desc(self, tid: TypeId):
        return self._descs[tid]

    def prim(self, width: int, signed: bool = True) -> TypeId:
        return self._add(Prim(width, signed))

    def ptr(self, base: TypeId) -> TypeId:
        return self._add(Ptr(base))

    def array(self, elem: TypeId, count: int) -> TypeId:
        return self._add(Array(elem, count))

    def _add(self, desc) -> TypeId:
        key = desc
        if key in self._intern:
            return self._intern[key]
        tid = len(self._descs)
        self._descs.append(desc)
        self._intern[key] = tid
        return tid

    def declare_struct(self, name: str) -> TypeId:
        """Reserve a TypeId for a named struct (fields filled in later)."""
        if name in self._named:
            return self._named[name]
        tid = len(self._descs)
        self._descs.append(None)  # placeholder until define_struct
        self._named[name] = tid
        return tid

    def define_struct(self, name: str, desc: Struct) -> TypeId:
        tid = self._named[name]
        if self._descs[tid] is not None:
            raise ParseError(f"duplicate type name %{name}")
        self._descs[tid] = desc
        return tid

    def named(self, name: str) -> TypeId | None:
        return self._named.get(name)

    def is_defined(self, tid: TypeId) -> bool:
        return self._descs[tid] is not None

    def size_of(self, tid: TypeId) -> int:
        d = self.desc(tid)
        if isinstance(d, Prim):
            return d.width
        if isinstance(d, Ptr):
            return POINTER_SIZE
        if isinstance(d, Struct):
            return d.size
        if isinstance(d, Array):
            return d.count * self.size_of(d.elem)
        raise SimulatorError(f"undefined type id {tid}")

    def render(self, tid: TypeId) -> str:
        d = self.desc(tid)
        if isinstance(d, Prim):
            return f"i{d.width * 8}"
        if isinstance(d, Ptr):
            return f"ptr {self.render(d.base)}"
        if isinstance(d, Struct):
            return f"%{d.name}"
        if isinstance(d, Array):
            return f"[{d.count} x {self.render(d.elem)}]"
        raise SimulatorError(f"undefined type id {tid}")

    def signature(self, tid: TypeId) -> object:
        """Structural signature, comparable across independently parsed programs."""
        d = self.desc(tid)
        if isinstance(d, Prim):
            return ("prim", d.width, d.signed)
        if isinstance(d, Ptr):
            base = self.desc(d.base)
            # break cycles at struct boundaries: structs compare by name
            if isinstance(base, Struct):
                return ("ptr", ("structref", base.name))
            return ("ptr", self.signature(d.base))
        if isinstance(d, Struct):
            return (
                "struct",
                d.name,
                d.size,
                tuple((f.name, f.offset, self.signature(f.type)) for f in d.fields),
            )
        if isinstance(d, Array):
            return ("array", d.count, self.signature(d.elem))
        raise SimulatorError(f"undefined type id {tid}")


# ---------------------------------------------------------------------------
# Source locations and operands
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SrcLoc:
    file: str
    line: int


@dataclass(frozen=True)
class Reg:
    name: str


@dataclass(frozen=True)
class Imm:
    value: int


@dataclass(frozen=True)
class NullImm:
    pass


@dataclass(frozen=True)
class GlobalRef:
    name: str


Operand = "Reg | Imm | NullImm | GlobalRef"


def render_operand(op) -> str:
    if isinstance(op, Reg):
        return f"%{op.name}"
    if isinstance(op, Imm):
        return str(op.value)
    if isinstance(op, NullImm):
        return "null"
    if isinstance(op, GlobalRef):
        return f"@{op.name}"
    raise SimulatorError(f"bad operand {op!r}")


# ---------------------------------------------------------------------------
# Instructions
# ---------------------------------------------------------------------------


@dataclass
class Instr:
    loc: SrcLoc | None = field(default=None, kw_only=True)


@dataclass
class Const(Instr):
    type: TypeId
    dst: str
    imm: "Imm | NullImm"


@dataclass
class BinOp(Instr):
    kind: str  # add sub mul sdiv and or xor
    type: TypeId
    dst: str
    a: Operand
    b: Operand


@dataclass
class ICmp(Instr):
    rel: str  # eq ne slt sle sgt sge
    type: TypeId
    dst: str
    a: Operand
    b: Operand


@dataclass
class Alloca(Instr):
    dst: str
    size: int


@dataclass
class Free(Instr):
    ptr: Operand


@dataclass
class Load(Instr):
    type: TypeId
    dst: str
    ptr: Operand
    offset: int = 0


@dataclass
class Store(Instr):
    type: TypeId
    src: Operand
    ptr: Operand
    offset: int = 0


@dataclass
class PtrAdd(Instr):
    dst: str
    ptr: Operand
    index: Operand
    stride: int
    base: int = 0


@dataclass
class Br(Instr):
    label: str


@dataclass
class CondBr(Instr):
    cond: Operand
    then_label: str
    else_label: str


@dataclass
class Call(Instr):
    dst: str | None
    callee: str
    args: tuple[Operand, ...]


@dataclass
class Ret(Instr):
    type: TypeId | None = None
    value: Operand | None = None


@dataclass
class Choose(Instr):
    dst: str
    total: int


@dataclass
class Interrupt(Instr):
    pass


@dataclass
class Spawn(Instr):
    callee: str
    arg: Operand | None = None


@dataclass
class Fault(Instr):
    message: str


TERMINATORS = (Br, CondBr, Ret, Fault)


# ---------------------------------------------------------------------------
# Program containers
# ---------------------------------------------------------------------------


@dataclass
class Block:
    label: str
    instrs: list


@dataclass
class FunctionDef:
    name: str
    params: list[tuple[str, TypeId]]
    ret: TypeId | None
    blocks: list[Block]
    registers: dict[str, TypeId]  # declaration order: params first, then regs
    varnames: dict[str, str]  # register -> source variable name
    src_file: str | None = None

    def block_index(self, label: str) -> int:
        for i, b in enumerate(self.blocks):
            if b.label == label:
                return i
        raise SimulatorError(f"no block {label} in @{self.name}")


@dataclass
class GlobalDef:
    name: str
    type: TypeId
    init: int | None  # integer initializer for prims; None means zero/null
    varname: str | None = None


@dataclass(frozen=True)
class CodePtr:
    fid: int
    block: int
    index: int


@dataclass(frozen=True)
class FrameSlot:
    reg: str
    offset: int
    type: TypeId


@dataclass(frozen=True)
class FrameLayout:
    slots: tuple[FrameSlot, ...]
    size: int

    def slot(self, reg: str) -> FrameSlot:
        for s in self.slots:
            if s.reg == reg:
                return s
        raise SimulatorError(f"no slot for register %{reg}")


def _align8(n: int) -> int:
    return (n + 7) & ~7


@dataclass
class ProgramUnit:
    types: TypeTable
    globals: list[GlobalDef]
    functions: list[FunctionDef]
    entry: str = "main"
    source_files: set[str] = field(default_factory=set)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self):
        self._fn_index = {f.name: i for i, f in enumerate(self.functions)}
        self._layouts: dict[int, FrameLayout] = {}
        self._globals_layout: dict[str, int] | None = None

    def function(self, name: str) -> FunctionDef:
        try:
            return self.functions[self._fn_index[name]]
        except KeyError:
            raise SimulatorError(f"no function @{name}") from None

    def fid(self, name: str) -> int:
        return self._fn_index[name]

    def has_function(self, name: str) -> bool:
        return name in self._fn_index

    def layout(self, fid: int) -> FrameLayout:
        if fid not in self._layouts:
            self._layouts[fid] = frame_layout(self.functions[fid], self.types)
        return self._layouts[fid]

    def globals_layout(self) -> dict[str, int]:
        """Byte offset of each global inside the globals object."""
        if self._globals_layout is None:
            offsets, off = {}, 0
            for g in self.globals:
                off = _align8(off)
                offsets[g.name] = off
                off += self.types.size_of(g.type)
            self._globals_layout = offsets
        return self._globals_layout

    def globals_size(self) -> int:
        layout = self.globals_layout()
        if not self.globals:
            return 0
        last = self.globals[-1]
        return _align8(layout[last.name] + self.types.size_of(last.type))


def frame_layout(f: FunctionDef, types: TypeTable) -> FrameLayout:
    """Deterministic frame layout: 16-byte header, 8-aligned slots in
    register declaration order, total size rounded up to 8."""
    slots = []
    off = FRAME_HEADER_SIZE
    for reg, tid in f.registers.items():
        off = _align8(off)
        slots.append(FrameSlot(reg, off, tid))
        off += types.size_of(tid)
    return FrameLayout(tuple(slots), _align8(off))


def instr_at(p: ProgramUnit, pc: CodePtr | None):
    """Instruction at pc; out-of-range or null pc is a simulator bug."""
    if pc is None:
        raise SimulatorError("instr_at: null code pointer")
    if not 0 <= pc.fid < len(p.functions):
        raise SimulatorError(f"instr_at: bad function id {pc.fid}")
    f = p.functions[pc.fid]
    if not 0 <= pc.block < len(f.blocks):
        raise SimulatorError(f"instr_at: bad block index {pc.block} in @{f.name}")
    b = f.blocks[pc.block]
    if not 0 <= pc.index < len(b.instrs):
        raise SimulatorError(f"instr_at: bad instruction index {pc.index} in @{f.name}:{b.label}")
    return b.instrs[pc.index]


def effective_loc(p: ProgramUnit, pc: CodePtr) -> SrcLoc | None:
    """Source location of pc, falling back to the nearest preceding
    annotated instruction of the same function."""
    f = p.functions[pc.fid]
    bi, ii = pc.block, pc.index
    while bi >= 0:
        instrs = f.blocks[bi].instrs
        while ii >= 0:
            loc = instrs[ii].loc
            if loc is not None:
                return loc
            ii -= 1
        bi -= 1
        if bi >= 0:
            ii = len(f.blocks[bi].instrs) - 1
    return None


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r\n]+)
  | (?P<comment>;[^\n]*)
  | (?P<string>"(?:[^"\\]|\\.)*")
  | (?P<annot>!(?:line|var|src))
  | (?P<offset>@-?[0-9]+)
  | (?P<global>@[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<local>%[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<int>-?[0-9]+)
  | (?P<arrow>->)
  | (?P<ident>[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<punct>[{}()\[\]:,=])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(src: str) -> list[Token]:
    toks, line, line_start, pos = [], 1, 0, 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        if m is None:
            raise ParseError(f"unexpected character {src[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        text = m.group()
        if kind not in ("ws", "comment"):
            toks.append(Token(kind, text, line, m.start() - line_start + 1))
        nl = text.count("\n")
        if nl:
            line += nl
            line_start = m.start() + text.rindex("\n") + 1
        pos = m.end()
    toks.append(Token("eof", "", line, pos - line_start + 1))
    return toks


def _unquote(s: str) -> str:
    return s[1:-1].replace('\\"', '"').replace("\\\\", "\\")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_TYPE_START = {"i8", "i32", "i64", "ptr"}


class _Parser:
    def __init__(self, src: str):
        self.toks = _tokenize(src)
        self.pos = 0
        self.types = TypeTable()
        self.globals: list[GlobalDef] = []
        self.functions: list[FunctionDef] = []
        self.source_files: set[str] = set()

    # -- token helpers ------------------------------------------------

    def peek(self, ahead: int = 0) -> Token:
        return self.toks[min(self.pos + ahead, len(self.toks) - 1)]

    def next(self) -> Token:
        t = self.toks[self.pos]
        if t.kind != "eof":
            self.pos += 1
        return t

    def fail(self, msg: str, tok: Token | None = None):
        tok = tok or self.peek()
        raise ParseError(msg, tok.line, tok.col)

    def expect(self, kind: str, text: str | None = None) -> Token:
        t = self.peek()
        if t.kind != kind or (text is not None and t.text != text):
            want = text or kind
            self.fail(f"expected {want!r}, found {t.text!r}")
        return self.next()

    def accept(self, kind: str, text: str | None = None) -> Token | None:
        t = self.peek()
        if t.kind == kind and (text is None or t.text == text):
            return self.next()
        return None

    def expect_int(self) -> int:
        return int(self.expect("int").text)

    # -- types ----------------------------------------------------------

    def at_type_start(self) -> bool:
        t = self.peek()
        return (
            (t.kind == "ident" and t.text in _TYPE_START)
            or t.kind == "local"
            or (t.kind == "punct" and t.text == "[")
        )

    def parse_type(self) -> TypeId:
        t = self.peek()
        if t.kind == "ident" and t.text in ("i8", "i32", "i64"):
            self.next()
            return self.types.prim(int(t.text[1:]) // 8)
        if t.kind == "ident" and t.text == "ptr":
            self.next()
            return self.types.ptr(self.parse_type())
        if t.kind == "local":
            self.next()
            return self.types.declare_struct(t.text[1:])
        if t.kind == "punct" and t.text == "[":
            self.next()
            count = self.expect_int()
            if count < 0:
                self.fail("array count must be non-negative", t)
            self.expect("ident", "x")
            elem = self.parse_type()
            self.expect("punct", "]")
            return self.types.array(elem, count)
        self.fail(f"expected type, found {t.text!r}")

    # -- annotations -----------------------------------------------------

    def parse_annots(self) -> dict:
        out = {}
        while self.peek().kind == "annot":
            t = self.next()
            self.expect("punct", "(")
            if t.text == "!line":
                out["line"] = self.expect_int()
            else:
                s = self.expect("string")
                out[t.text[1:]] = _unquote(s.text)
            self.expect("punct", ")")
        return out

    # -- operands --------------------------------------------------------

    def parse_operand(self):
        t = self.peek()
        if t.kind == "local":
            self.next()
            return Reg(t.text[1:])
        if t.kind == "global":
            self.next()
            return GlobalRef(t.text[1:])
        if t.kind == "int":
            self.next()
            return Imm(int(t.text))
        if t.kind == "ident" and t.text == "null":
            self.next()
            return NullImm()
        self.fail(f"expected operand, found {t.text!r}")

    # -- declarations ------------------------------------------------------

    def parse_program(self) -> ProgramUnit:
        while True:
            t = self.peek()
            if t.kind == "eof":
                break
            if t.kind == "ident" and t.text == "type":
                self.parse_typedecl()
            elif t.kind == "ident" and t.text == "global":
                self.parse_globaldecl()
            elif t.kind == "ident" and t.text == "fn":
                self.parse_fn()
            else:
                self.fail(f"expected 'type', 'global' or 'fn', found {t.text!r}")
        program = ProgramUnit(
            types=self.types,
            globals=self.globals,
            functions=self.functions,
            source_files=self.source_files,
        )
        _validate(program)
        return program

    def parse_typedecl(self):
        self.expect("ident", "type")
        name_tok = self.expect("local")
        name = name_tok.text[1:]
        self.expect("punct", "=")
        self.expect("ident", "struct")
        self.expect("punct", "{")
        fields = []
        while not self.accept("punct", "}"):
            fname = self.expect("ident").text
            self.expect("punct", ":")
            ftype = self.parse_type()
            off_tok = self.expect("offset")
            fields.append(StructField(fname, int(off_tok.text[1:]), ftype))
            if not self.accept("punct", ","):
                self.expect("punct", "}")
                break
        self.expect("ident", "size")
        size = self.expect_int()
        self.types.declare_struct(name)
        try:
            self.types.define_struct(name, Struct(name, size, tuple(fields)))
        except ParseError as e:
            self.fail(e.message, name_tok)

    def parse_globaldecl(self):
        self.expect("ident", "global")
        name_tok = self.expect("global")
        name = name_tok.text[1:]
        if any(g.name == name for g in self.globals):
            self.fail(f"duplicate global @{name}", name_tok)
        self.expect("punct", ":")
        tid = self.parse_type()
        init = None
        if self.accept("punct", "="):
            t = self.peek()
            if t.kind == "int":
                init = int(self.next().text)
            elif t.kind == "ident" and t.text in ("null", "zero"):
                self.next()
            else:
                self.fail(f"expected initializer, found {t.text!r}")
        annots = self.parse_annots()
        self.globals.append(GlobalDef(name, tid, init, annots.get("var")))

    def parse_fn(self):
        self.expect("ident", "fn")
        name_tok = self.expect("global")
        name = name_tok.text[1:]
        if any(f.name == name for f in self.functions):
            self.fail(f"duplicate function @{name}", name_tok)
        self.expect("punct", "(")
        params: list[tuple[str, TypeId]] = []
        varnames: dict[str, str] = {}
        while not self.accept("punct", ")"):
            ptok = self.expect("local")
            self.expect("punct", ":")
            ptype = self.parse_type()
            annots = self.parse_annots()
            if "var" in annots:
                varnames[ptok.text[1:]] = annots["var"]
            params.append((ptok.text[1:], ptype))
            if not self.accept("punct", ","):
                self.expect("punct", ")")
                break
        self.expect("arrow")
        if self.accept("ident", "void"):
            ret = None
        else:
            ret = self.parse_type()
        annots = self.parse_annots()
        src_file = annots.get("src")
        if src_file:
            self.source_files.add(src_file)
        self.expect("punct", "{")

        registers = dict(params)
        if len(registers) != len(params):
            self.fail(f"duplicate parameter name in @{name}", name_tok)
        while self.peek().kind == "ident" and self.peek().text == "reg":
            self.next()
            rtok = self.expect("local")
            rname = rtok.text[1:]
            if rname in registers:
                self.fail(f"duplicate register %{rname}", rtok)
            self.expect("punct", ":")
            registers[rname] = self.parse_type()
            rann = self.parse_annots()
            if "var" in rann:
                varnames[rname] = rann["var"]

        blocks: list[Block] = []
        seen_labels: set[str] = set()
        while not self.accept("punct", "}"):
            ltok = self.expect("ident")
            if ltok.text in seen_labels:
                self.fail(f"duplicate block label {ltok.text!r}", ltok)
            seen_labels.add(ltok.text)
            self.expect("punct", ":")
            instrs = []
            while True:
                t = self.peek()
                if t.kind == "punct" and t.text == "}":
                    break
                if t.kind == "ident" and self.peek(1).kind == "punct" and self.peek(1).text == ":":
                    break
                if t.kind == "eof":
                    self.fail("unexpected end of input inside function body")
                instrs.append(self.parse_instr(src_file))
            blocks.append(Block(ltok.text, instrs))

        self.functions.append(
            FunctionDef(name, params, ret, blocks, registers, varnames, src_file)
        )

    # -- instructions -----------------------------------------------------

    def parse_instr(self, src_file: str | None):
        tok = self.expect("ident")
        op = tok.text
        instr = None
        if op == "const":
            tid = self.parse_type()
            dst = self.expect("local").text[1:]
            self.expect("punct", ",")
            imm = self.parse_operand()
            if not isinstance(imm, (Imm, NullImm)):
                self.fail("const takes an integer or null immediate", tok)
            instr = Const(tid, dst, imm)
        elif op in BINOP_KINDS:
            tid = self.parse_type()
            dst = self.expect("local").text[1:]
            self.expect("punct", ",")
            a = self.parse_operand()
            self.expect("punct", ",")
            b = self.parse_operand()
            instr = BinOp(op, tid, dst, a, b)
        elif op == "icmp":
            rel = self.expect("ident").text
            if rel not in ICMP_RELS:
                self.fail(f"unknown icmp relation {rel!r}", tok)
            tid = self.parse_type()
            dst = self.expect("local").text[1:]
            self.expect("punct", ",")
            a = self.parse_operand()
            self.expect("punct", ",")
            b = self.parse_operand()
            instr = ICmp(rel, tid, dst, a, b)
        elif op == "alloca":
            dst = self.expect("local").text[1:]
            self.expect("punct", ",")
            size = self.expect_int()
            if size < 0:
                self.fail("alloca size must be non-negative", tok)
            instr = Alloca(dst, size)
        elif op == "free":
            instr = Free(self.parse_operand())
        elif op == "load":
            tid = self.parse_type()
            dst = self.expect("local").text[1:]
            self.expect("punct", ",")
            ptr = self.parse_operand()
            off = self.expect_int() if self.accept("punct", ",") else 0
            instr = Load(tid, dst, ptr, off)
        elif op == "store":
            tid = self.parse_type()
            src = self.parse_operand()
            self.expect("punct", ",")
            ptr = self.parse_operand()
            off = self.expect_int() if self.accept("punct", ",") else 0
            instr = Store(tid, src, ptr, off)
        elif op == "ptradd":
            dst = self.expect("local").text[1:]
            self.expect("punct", ",")
            ptr = self.parse_operand()
            self.expect("punct", ",")
            index = self.parse_operand()
            self.expect("punct", ",")
            stride = self.expect_int()
            base = self.expect_int() if self.accept("punct", ",") else 0
            instr = PtrAdd(dst, ptr, index, stride, base)
        elif op == "br":
            instr = Br(self.expect("ident").text)
        elif op == "condbr":
            cond = self.parse_operand()
            self.expect("punct", ",")
            then_label = self.expect("ident").text
            self.expect("punct", ",")
            else_label = self.expect("ident").text
            instr = CondBr(cond, then_label, else_label)
        elif op == "call":
            dst = None
            if self.peek().kind == "local":
                dst = self.next().text[1:]
                self.expect("punct", ",")
            callee = self.expect("global").text[1:]
            args = []
            while self.accept("punct", ","):
                args.append(self.parse_operand())
            instr = Call(dst, callee, tuple(args))
        elif op == "ret":
            if self.at_type_start():
                tid = self.parse_type()
                instr = Ret(tid, self.parse_operand())
            else:
                instr = Ret()
        elif op == "choose":
            dst = self.expect("local").text[1:]
            self.expect("punct", ",")
            total = self.expect_int()
            if total < 1:
                self.fail("choose total must be >= 1", tok)
            instr = Choose(dst, total)
        elif op == "interrupt":
            instr = Interrupt()
        elif op == "spawn":
            callee = self.expect("global").text[1:]
            arg = self.parse_operand() if self.accept("punct", ",") else None
            instr = Spawn(callee, arg)
        elif op == "fault":
            instr = Fault(_unquote(self.expect("string").text))
        else:
            self.fail(f"unknown opcode {op!r}", tok)

        annots = self.parse_annots()
        if "line" in annots:
            if src_file is None:
                self.fail("!line annotation requires a !src file on the function", tok)
            instr.loc = SrcLoc(src_file, annots["line"])
        instr._parse_tok = tok  # for validation error positions
        return instr


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------


def _instr_err(instr, msg: str):
    tok = getattr(instr, "_parse_tok", None)
    raise ParseError(msg, tok.line if tok else 0, tok.col if tok else 0)


def _validate(p: ProgramUnit):
    types = p.types
    for name, tid in list(types._named.items()):
        if not types.is_defined(tid):
            raise ParseError(f"unresolved type reference %{name}")
    for tid in range(len(types)):
        d = types.desc(tid)
        if isinstance(d, Struct):
            last = -1
            for f in d.fields:
                if f.offset <= last:
                    raise ParseError(
                        f"struct %{d.name}: field offsets must be strictly increasing"
                    )
                if f.offset + types.size_of(f.type) > d.size:
                    raise ParseError(
                        f"struct %{d.name}: field {f.name!r} does not fit in size {d.size}"
                    )
                last = f.offset

    for fn in p.functions:
        _validate_fn(p, fn)

    if not p.has_function(p.entry):
        raise ParseError(f"entry function @{p.entry} is not defined")
    entry = p.function(p.entry)
    if entry.params:
        raise ParseError(f"entry function @{p.entry} must take no parameters")
    ret = entry.ret
    if ret is None or not isinstance(types.desc(ret), Prim) or types.desc(ret).width != 4:
        raise ParseError(f"entry function @{p.entry} must return i32")


def _validate_fn(p: ProgramUnit, fn: FunctionDef):
    types = p.types
    if not fn.blocks:
        raise ParseError(f"function @{fn.name} has no blocks")
    for reg, tid in fn.registers.items():
        if not isinstance(types.desc(tid), (Prim, Ptr)):
            raise ParseError(
                f"@{fn.name}: register %{reg} must have a primitive or pointer type"
            )
    labels = {b.label for b in fn.blocks}

    def is_i8(tid: TypeId) -> bool:
        d = types.desc(tid)
        return isinstance(d, Prim) and d.width == 1

    def check_reg(instr, name: str, tid: TypeId | None = None) -> TypeId:
        if name not in fn.registers:
            _instr_err(instr, f"@{fn.name}: undeclared register %{name}")
        if tid is not None and fn.registers[name] != tid:
            _instr_err(
                instr,
                f"@{fn.name}: register %{name} has type "
                f"{types.render(fn.registers[name])}, expected {types.render(tid)}",
            )
        return fn.registers[name]

    def check_operand(instr, op, tid: TypeId):
        want = types.desc(tid)
        if isinstance(op, Reg):
            check_reg(instr, op.name, tid)
        elif isinstance(op, Imm):
            if not isinstance(want, Prim):
                _instr_err(instr, f"@{fn.name}: integer immediate used where {types.render(tid)} expected")
        elif isinstance(op, NullImm):
            if not isinstance(want, Ptr):
                _instr_err(instr, f"@{fn.name}: null used where {types.render(tid)} expected")
        elif isinstance(op, GlobalRef):
            g = next((g for g in p.globals if g.name == op.name), None)
            if g is None:
                _instr_err(instr, f"@{fn.name}: unknown global @{op.name}")
            if not (isinstance(want, Ptr) and want.base == g.type):
                _instr_err(
                    instr,
                    f"@{fn.name}: @{op.name} has type ptr {types.render(g.type)}, "
                    f"expected {types.render(tid)}",
                )

    def check_ptr_operand(instr, op):
        if isinstance(op, Reg):
            tid = check_reg(instr, op.name)
            if not isinstance(types.desc(tid), Ptr):
                _instr_err(instr, f"@{fn.name}: %{op.name} is not pointer-typed")
        elif isinstance(op, (NullImm, GlobalRef)):
            if isinstance(op, GlobalRef) and not any(g.name == op.name for g in p.globals):
                _instr_err(instr, f"@{fn.name}: unknown global @{op.name}")
        else:
            _instr_err(instr, f"@{fn.name}: expected a pointer operand")

    for b in fn.blocks:
        if not b.instrs:
            raise ParseError(f"@{fn.name}: block {b.label!r} is empty")
        for i, instr in enumerate(b.instrs):
            terminator = isinstance(instr, TERMINATORS)
            if i == len(b.instrs) - 1 and not terminator:
                _instr_err(
                    instr, f"@{fn.name}: block {b.label!r} does not end in a terminator"
                )
            if i < len(b.instrs) - 1 and terminator:
                _instr_err(
                    instr, f"@{fn.name}: terminator in the middle of block {b.label!r}"
                )
            _validate_instr(p, fn, instr, labels, check_reg, check_operand, check_ptr_operand, is_i8)

    # reachability: warn about blocks unreachable from the entry block
    reachable = {0}
    work = [0]
    while work:
        bi = work.pop()
        last = fn.blocks[bi].instrs[-1]
        targets = []
        if isinstance(last, Br):
            targets = [last.label]
        elif isinstance(last, CondBr):
            targets = [last.then_label, last.else_label]
        for lbl in targets:
            ti = fn.block_index(lbl)
            if ti not in reachable:
                reachable.add(ti)
                work.append(ti)
    for i, b in enumerate(fn.blocks):
        if i not in reachable:
            p.warnings.append(f"@{fn.name}: block {b.label!r} is unreachable")


def _validate_instr(p, fn, instr, labels, check_reg, check_operand, check_ptr_operand, is_i8):
    types = p.types

    def prim_only(tid, what):
        if not isinstance(types.desc(tid), Prim):
            _instr_err(instr, f"@{fn.name}: {what} requires an integer type")

    if isinstance(instr, Const):
        check_reg(instr, instr.dst, instr.type)
        check_operand(instr, instr.imm, instr.type)
    elif isinstance(instr, BinOp):
        prim_only(instr.type, instr.kind)
        check_reg(instr, instr.dst, instr.type)
        check_operand(instr, instr.a, instr.type)
        check_operand(instr, instr.b, instr.type)
    elif isinstance(instr, ICmp):
        d = types.desc(instr.type)
        if isinstance(d, Ptr) and instr.rel not in ("eq", "ne"):
            _instr_err(instr, f"@{fn.name}: pointer icmp supports only eq/ne")
        dst_t = check_reg(instr, instr.dst)
        if not is_i8(dst_t):
            _instr_err(instr, f"@{fn.name}: icmp result register must be i8")
        check_operand(instr, instr.a, instr.type)
        check_operand(instr, instr.b, instr.type)
    elif isinstance(instr, Alloca):
        tid = check_reg(instr, instr.dst)
        if not isinstance(types.desc(tid), Ptr):
            _instr_err(instr, f"@{fn.name}: alloca destination must be pointer-typed")
    elif isinstance(instr, Free):
        check_ptr_operand(instr, instr.ptr)
    elif isinstance(instr, Load):
        check_reg(instr, instr.dst, instr.type)
        check_ptr_operand(instr, instr.ptr)
        prim_or_ptr = types.desc(instr.type)
        if not isinstance(prim_or_ptr, (Prim, Ptr)):
            _instr_err(instr, f"@{fn.name}: load type must be integer or pointer")
    elif isinstance(instr, Store):
        check_operand(instr, instr.src, instr.type)
        check_ptr_operand(instr, instr.ptr)
        if not isinstance(types.desc(instr.type), (Prim, Ptr)):
            _instr_err(instr, f"@{fn.name}: store type must be integer or pointer")
    elif isinstance(instr, PtrAdd):
        tid = check_reg(instr, instr.dst)
        if not isinstance(types.desc(tid), Ptr):
            _instr_err(instr, f"@{fn.name}: ptradd destination must be pointer-typed")
        check_ptr_operand(instr, instr.ptr)
        if isinstance(instr.index, Reg):
            it = check_reg(instr, instr.index.name)
            if not isinstance(types.desc(it), Prim):
                _instr_err(instr, f"@{fn.name}: ptradd index must be an integer")
        elif not isinstance(instr.index, Imm):
            _instr_err(instr, f"@{fn.name}: ptradd index must be an integer")
    elif isinstance(instr, Br):
        if instr.label not in labels:
            _instr_err(instr, f"@{fn.name}: unknown label {instr.label!r}")
    elif isinstance(instr, CondBr):
        for lbl in (instr.then_label, instr.else_label):
            if lbl not in labels:
                _instr_err(instr, f"@{fn.name}: unknown label {lbl!r}")
        if isinstance(instr.cond, Reg):
            ct = check_reg(instr, instr.cond.name)
            if not is_i8(ct):
                _instr_err(instr, f"@{fn.name}: condbr condition must be i8")
        elif not isinstance(instr.cond, Imm):
            _instr_err(instr, f"@{fn.name}: condbr condition must be i8")
    elif isinstance(instr, Call):
        if not p.has_function(instr.callee):
            _instr_err(instr, f"@{fn.name}: unknown function @{instr.callee}")
        callee = p.function(instr.callee)
        if len(instr.args) != len(callee.params):
            _instr_err(
                instr,
                f"@{fn.name}: @{instr.callee} takes {len(callee.params)} argument(s), "
                f"got {len(instr.args)}",
            )
        for arg, (_, ptid) in zip(instr.args, callee.params):
            check_operand(instr, arg, ptid)
        if instr.dst is not None:
            if callee.ret is None:
                _instr_err(instr, f"@{fn.name}: @{instr.callee} returns void")
            check_reg(instr, instr.dst, callee.ret)
    elif isinstance(instr, Ret):
        if fn.ret is None:
            if instr.value is not None:
                _instr_err(instr, f"@{fn.name}: void function returns a value")
        else:
            if instr.value is None:
                _instr_err(instr, f"@{fn.name}: missing return value")
            if instr.type != fn.ret:
                _instr_err(
                    instr,
                    f"@{fn.name}: return type {types.render(instr.type)} does not match "
                    f"{types.render(fn.ret)}",
                )
            check_operand(instr, instr.value, fn.ret)
    elif isinstance(instr, Choose):
        tid = check_reg(instr, instr.dst)
        if not isinstance(types.desc(tid), Prim):
            _instr_err(instr, f"@{fn.name}: choose destination must be an integer register")
    elif isinstance(instr, Spawn):
        if not p.has_function(instr.callee):
            _instr_err(instr, f"@{fn.name}: unknown function @{instr.callee}")
        callee = p.function(instr.callee)
        want = 1 if instr.arg is not None else 0
        if len(callee.params) != want:
            _instr_err(
                instr,
                f"@{fn.name}: spawn of @{instr.callee} needs {len(callee.params)} "
                f"argument(s), got {want}",
            )
        if instr.arg is not None:
            check_operand(instr, instr.arg, callee.params[0][1])


def parse_program(text: str) -> ProgramUnit:
    """Parse MIR source into a validated ProgramUnit. Raises ParseError."""
    return _Parser(text).parse_program()


# ---------------------------------------------------------------------------
# Pretty printer
# ---------------------------------------------------------------------------


def _render_instr(instr, types: TypeTable) -> str:
    r = lambda op: render_operand(op)
    t = lambda tid: types.render(tid)
    if isinstance(instr, Const):
        s = f"const {t(instr.type)} %{instr.dst}, {r(instr.imm)}"
    elif isinstance(instr, BinOp):
        s = f"{instr.kind} {t(instr.type)} %{instr.dst}, {r(instr.a)}, {r(instr.b)}"
    elif isinstance(instr, ICmp):
        s = f"icmp {instr.rel} {t(instr.type)} %{instr.dst}, {r(instr.a)}, {r(instr.b)}"
    elif isinstance(instr, Alloca):
        s = f"alloca %{instr.dst}, {instr.size}"
    elif isinstance(instr, Free):
        s = f"free {r(instr.ptr)}"
    elif isinstance(instr, Load):
        s = f"load {t(instr.type)} %{instr.dst}, {r(instr.ptr)}, {instr.offset}"
    elif isinstance(instr, Store):
        s = f"store {t(instr.type)} {r(instr.src)}, {r(instr.ptr)}, {instr.offset}"
    elif isinstance(instr, PtrAdd):
        s = f"ptradd %{instr.dst}, {r(instr.ptr)}, {r(instr.index)}, {instr.stride}, {instr.base}"
    elif isinstance(instr, Br):
        s = f"br {instr.label}"
    elif isinstance(instr, CondBr):
        s = f"condbr {r(instr.cond)}, {instr.then_label}, {instr.else_label}"
    elif isinstance(instr, Call):
        head = f"call %{instr.dst}, " if instr.dst else "call "
        s = head + f"@{instr.callee}" + "".join(f", {r(a)}" for a in instr.args)
    elif isinstance(instr, Ret):
        s = "ret" if instr.value is None else f"ret {t(instr.type)} {r(instr.value)}"
    elif isinstance(instr, Choose):
        s = f"choose %{instr.dst}, {instr.total}"
    elif isinstance(instr, Interrupt):
        s = "interrupt"
    elif isinstance(instr, Spawn):
        s = f"spawn @{instr.callee}" + (f", {r(instr.arg)}" if instr.arg else "")
    elif isinstance(instr, Fault):
        msg = instr.message.replace("\\", "\\\\").replace('"', '\\"')
        s = f'fault "{msg}"'
    else:
        raise SimulatorError(f"cannot render {instr!r}")
    if instr.loc is not None:
        s += f" !line({instr.loc.line})"
    return s


def print_program(p: ProgramUnit) -> str:
    """Render a ProgramUnit back to parseable MIR text."""
    types = p.types
    out = []
    for tid in range(len(types)):
        d = types.desc(tid)
        if isinstance(d, Struct):
            fields = ", ".join(
                f"{f.name}: {types.render(f.type)} @{f.offset}" for f in d.fields
            )
            out.append(f"type %{d.name} = struct {{ {fields} }} size {d.size}")
    for g in p.globals:
        s = f"global @{g.name} : {types.render(g.type)}"
        if g.init is not None:
            s += f" = {g.init}"
        if g.varname:
            s += f' !var("{g.varname}")'
        out.append(s)
    for fn in p.functions:
        params = ", ".join(
            f"%{n}: {types.render(t)}"
            + (f' !var("{fn.varnames[n]}")' if n in fn.varnames else "")
            for n, t in fn.params
        )
        ret = "void" if fn.ret is None else types.render(fn.ret)
        head = f"fn @{fn.name}({params}) -> {ret}"
        if fn.src_file:
            head += f' !src("{fn.src_file}")'
        out.append(head + " {")
        param_names = {n for n, _ in fn.params}
        for rname, rtid in fn.registers.items():
            if rname in param_names:
                continue
            line = f"  reg %{rname} : {types.render(rtid)}"
            if rname in fn.varnames:
                line += f' !var("{fn.varnames[rname]}")'
            out.append(line)
        for b in fn.blocks:
            out.append(f"{b.label}:")
            for instr in b.instrs:
                out.append("  " + _render_instr(instr, types))
        out.append("}")
    return "\n".join(out) + "\n"


def program_fingerprint(p: ProgramUnit) -> object:
    """Structural identity of a program, stable under type-table renumbering."""
    types = p.types
    sig = types.signature

    def op_sig(op):
        return render_operand(op)

    def instr_sig(instr):
        base = []
        for f_name, val in vars(instr).items():
            if f_name.startswith("_"):
                continue
            if f_name == "loc":
                base.append(("loc", None if val is None else (val.file, val.line)))
            elif f_name == "type" and val is not None:
                base.append(("type", sig(val)))
            elif isinstance(val, (Reg, Imm, NullImm, GlobalRef)):
                base.append((f_name, op_sig(val)))
            elif isinstance(val, tuple):
                base.append((f_name, tuple(op_sig(a) for a in val)))
            else:
                base.append((f_name, val))
        return (type(instr).__name__, tuple(base))

    return (
        tuple(
            sorted(
                sig(tid)
                for tid in range(len(types))
                if isinstance(types.desc(tid), Struct)
            )
        ),
        tuple((g.name, sig(g.type), g.init, g.varname) for g in p.globals),
        tuple(
            (
                fn.name,
                tuple((n, sig(t)) for n, t in fn.params),
                None if fn.ret is None else sig(fn.ret),
                tuple((n, sig(t)) for n, t in fn.registers.items()),
                tuple(sorted(fn.varnames.items())),
                fn.src_file,
                tuple(
                    (b.label, tuple(instr_sig(i) for i in b.instrs)) for b in fn.blocks
                ),
            )
            for fn in p.functions
        ),
    )
