"""Typed debug graph over heap snapshots.

Debuginfo (register/global types, source variable names, line
annotations) is projected onto a snapshot to produce immutable debug
nodes: attributes are rendered atomic values, components occupy
sub-ranges of the same object, relations follow pointer-mapped words.
Heap typing propagates pointer base types breadth-first from typed
roots; the first type to reach an object wins.

Everything here is pure with respect to its inputs: the same snapshot,
program and roots always produce byte-identical output, which the
session's golden-transcript tests and the graph views rely on.
"""

from __future__ import annotations

import os
from collections import deque
from dataclasses import dataclass

from .heap import GuestFault, PtrVal, SnapshotRef, decode_code_ptr
from .mir import (
    Array,
    CodePtr,
    FunctionDef,
    Prim,
    ProgramUnit,
    Ptr,
    SimulatorError,
    SrcLoc,
    Struct,
    TypeId,
    effective_loc,
    instr_at,
)

TypeMap = "dict[int, TypeId]"


# ---------------------------------------------------------------------------
# Heap typing
# ---------------------------------------------------------------------------


def type_pointer_offsets(types, tid: TypeId) -> list[tuple[int, TypeId]]:
    """(byte offset, pointer base type) for every pointer declared by tid."""
    desc = types.desc(tid)
    if isinstance(desc, Prim):
        return []
    if isinstance(desc, Ptr):
        return [(0, desc.base)]
    if isinstance(desc, Struct):
        out = []
        for f in desc.fields:
            out.extend((f.offset + o, b) for o, b in type_pointer_offsets(types, f.type))
        return out
    if isinstance(desc, Array):
        esz = types.size_of(desc.elem)
        inner = type_pointer_offsets(types, desc.elem)
        return [(i * esz + o, b) for i in range(desc.count) for o, b in inner]
    raise SimulatorError(f"bad type id {tid}")


def type_heap(s: SnapshotRef, roots, types) -> dict[int, TypeId]:
    """Assign types to objects reachable from (pointer, type) roots.

    Breadth-first in root order; the first type to reach an object is
    kept.  Assignments whose type does not fit the object are rejected
    (the object stays untyped and propagates nothing).  Null and
    dangling pointers propagate nothing.
    """
    tm: dict[int, TypeId] = {}
    queue = deque(roots)
    while queue:
        ptr, tid = queue.popleft()
        if ptr.is_null or ptr.is_code or ptr.offset != 0:
            continue
        obj = s.object(ptr.obj)
        if obj is None or ptr.obj in tm:
            continue
        if types.size_of(tid) > obj.size:
            continue
        tm[ptr.obj] = tid
        for off, base in type_pointer_offsets(types, tid):
            target = obj.ptrs.get(off)
            if target is not None:
                queue.append((target, base))
    return tm


def _frame_fid(s: SnapshotRef, frame: PtrVal, program: ProgramUnit) -> int | None:
    try:
        word = s.load(frame, 8)
    except GuestFault:
        return None
    if not isinstance(word, PtrVal):
        return None
    decoded = decode_code_ptr(word)
    if decoded is None or decoded[0] >= len(program.functions):
        return None
    return decoded[0]


def _snapshot_ptr(s: SnapshotRef, addr: PtrVal) -> PtrVal | None:
    try:
        v = s.load(addr, 8)
    except GuestFault:
        return None
    if isinstance(v, PtrVal):
        return v
    return PtrVal(None) if v == 0 else None


def _thread_tops(s: SnapshotRef, root: PtrVal) -> list[PtrVal]:
    table = _snapshot_ptr(s, PtrVal(root.obj, 8))
    if table is None or table.is_null:
        return []
    obj = s.object(table.obj)
    if obj is None:
        return []
    return [
        _snapshot_ptr(s, PtrVal(table.obj, 8 * i)) or PtrVal(None)
        for i in range(obj.size // 8)
    ]


def assemble_roots(s: SnapshotRef, program: ProgramUnit, active: int = 0):
    """Typed propagation roots in the canonical order: globals first, then
    the active thread's stack, then remaining threads by index, frames
    from innermost outward."""
    roots: list[tuple[PtrVal, TypeId]] = []
    types = program.types

    glob = _snapshot_ptr(s, s.root)
    if glob is not None and not glob.is_null and s.object(glob.obj) is not None:
        layout = program.globals_layout()
        gobj = s.object(glob.obj)
        for g in program.globals:
            for off, base in type_pointer_offsets(types, g.type):
                target = gobj.ptrs.get(layout[g.name] + off)
                if target is not None:
                    roots.append((target, base))

    tops = _thread_tops(s, s.root)
    frame_order: list[PtrVal] = []
    seen: set[int] = set()

    def walk(top: PtrVal):
        frame = top
        while frame is not None and not frame.is_null and frame.obj not in seen:
            if s.object(frame.obj) is None:
                break
            seen.add(frame.obj)
            frame_order.append(frame)
            frame = _snapshot_ptr(s, PtrVal(frame.obj, 8))

    order = [active] + [i for i in range(len(tops)) if i != active]
    for i in order:
        if 0 <= i < len(tops):
            walk(tops[i])

    for frame in frame_order:
        fid = _frame_fid(s, frame, program)
        if fid is None:
            continue
        fobj = s.object(frame.obj)
        for slot in program.layout(fid).slots:
            desc = types.desc(slot.type)
            if isinstance(desc, Ptr):
                target = fobj.ptrs.get(slot.offset)
                if target is not None:
                    roots.append((target, desc.base))
    return roots


# ---------------------------------------------------------------------------
# Debug nodes
# ---------------------------------------------------------------------------


class DebugNode:
    """Immutable typed view of a snapshot location.

    Components and relations are constructed on access (never eagerly),
    so self-referential structures are fine; repeated access yields
    structurally identical children.
    """

    def __init__(self, ctx: "DebugContext", kind: str, address: PtrVal,
                 type: TypeId | None, attributes: list[tuple[str, str]]):
        self.ctx = ctx
        self.kind = kind
        self.address = address
        self.type = type
        self.attributes = attributes

    @property
    def snapshot(self) -> SnapshotRef:
        return self.ctx.snapshot

    def components(self) -> list[tuple[str, "DebugNode"]]:
        return self.ctx._components(self)

    def relations(self) -> list[tuple[str, "DebugNode"]]:
        return self.ctx._relations(self)

    def find(self, step: str) -> "DebugNode | None":
        for name, child in self.components():
            if name == step:
                return child
        for name, child in self.relations():
            if name == step:
                return child
        return None

    def summary(self) -> str:
        return self.ctx._summary(self)


class DebugContext:
    """Bundles a snapshot with the program and its derived type map."""

    def __init__(self, snapshot: SnapshotRef, program: ProgramUnit, active: int = 0):
        self.snapshot = snapshot
        self.program = program
        self.types = program.types
        self.typemap = type_heap(snapshot, assemble_roots(snapshot, program, active), program.types)

    # -- rendering helpers ------------------------------------------------

    def render_ptr(self, p: PtrVal) -> str:
        if p.is_null:
            return "null"
        if p.is_code:
            decoded = decode_code_ptr(p)
            if decoded and decoded[0] < len(self.program.functions):
                fid, b, i = decoded
                return f"code(@{self.program.functions[fid].name},{b},{i})"
            return "code(?)"
        canon = self.snapshot.canonical_ids().get(p.obj)
        if self.snapshot.object(p.obj) is None:
            return "dangling"
        if canon is None:
            return f"obj#?{p.obj}+{p.offset}"
        return f"obj#{canon}+{p.offset}"

    def _scalar_at(self, addr: PtrVal, width: int) -> int | None:
        try:
            v = self.snapshot.load(addr, width)
        except GuestFault:
            return None
        return None if isinstance(v, PtrVal) else v

    def _ptr_at(self, addr: PtrVal) -> PtrVal | None:
        obj = self.snapshot.object(addr.obj)
        if obj is None:
            return None
        return obj.ptrs.get(addr.offset)

    # -- node builders ------------------------------------------------------

    def node(self, addr: PtrVal, tid: TypeId | None) -> DebugNode:
        """Typed (or untyped) view of an object location."""
        if addr.is_null:
            return DebugNode(self, "object", addr, tid, [("value", "null")])
        desc = self.types.desc(tid) if tid is not None else None
        attrs: list[tuple[str, str]] = []
        if isinstance(desc, Prim):
            v = self._scalar_at(addr, desc.width)
            if v is None:
                attrs.append(("value", "?"))
            else:
                m = 1 << (8 * desc.width)
                sv = v - m if desc.signed and v >= m >> 1 else v
                attrs.append(("value", str(sv)))
        elif isinstance(desc, Ptr):
            target = self._ptr_at(addr)
            if target is None:
                raw = self._scalar_at(addr, 8)
                attrs.append(("raw", "null" if raw == 0 else "?"))
            else:
                attrs.append(("raw", self.render_ptr(target)))
                if not target.is_null and not target.is_code \
                        and self.snapshot.object(target.obj) is None:
                    attrs.append(("dangling", "true"))
        elif desc is None:
            obj = self.snapshot.object(addr.obj)
            if obj is None:
                attrs.append(("dangling", "true"))
            else:
                attrs.append(("size", str(obj.size)))
                attrs.append(("bytes", obj.data.hex(" ")))
                for off in sorted(obj.ptrs):
                    p = obj.ptrs[off]
                    if p.is_null:
                        attrs.append((f"ptr@{off}", "null"))
                    elif not p.is_code and self.snapshot.object(p.obj) is None:
                        attrs.append((f"ptr@{off}", "dangling"))
        return DebugNode(self, "object", addr, tid, attrs)

    def frame_node(self, frame: PtrVal) -> DebugNode:
        fid = _frame_fid(self.snapshot, frame, self.program)
        if fid is None:
            return DebugNode(self, "frame", frame, None, [("corrupt", "true")])
        fn = self.program.functions[fid]
        attrs = [("function", fn.name)]
        word = self.snapshot.load(frame, 8)
        decoded = decode_code_ptr(word)
        pc = CodePtr(*decoded)
        try:
            instr_at(self.program, pc)
            loc = effective_loc(self.program, pc)
        except SimulatorError:
            loc = None
        if loc is not None:
            attrs.append(("location", f"{loc.file}:{loc.line}"))
        return DebugNode(self, "frame", frame, None, attrs)

    def globals_node(self) -> DebugNode:
        glob = _snapshot_ptr(self.snapshot, self.snapshot.root) or PtrVal(None)
        return DebugNode(self, "globals", glob, None, [])

    def state_node(self) -> DebugNode:
        tops = _thread_tops(self.snapshot, self.snapshot.root)
        return DebugNode(self, "state", self.snapshot.root, None,
                         [("threads", str(len(tops)))])

    # -- lazy structure -------------------------------------------------------

    def _components(self, node: DebugNode) -> list[tuple[str, DebugNode]]:
        if node.kind == "frame":
            fid = _frame_fid(self.snapshot, node.address, self.program)
            if fid is None:
                return []
            fn = self.program.functions[fid]
            out = []
            for slot in self.program.layout(fid).slots:
                name = fn.varnames.get(slot.reg, slot.reg)
                addr = PtrVal(node.address.obj, slot.offset)
                out.append((name, self.node(addr, slot.type)))
            return out
        if node.kind == "globals":
            if node.address.is_null:
                return []
            layout = self.program.globals_layout()
            out = []
            for g in self.program.globals:
                addr = PtrVal(node.address.obj, layout[g.name])
                out.append((g.varname or g.name, self.node(addr, g.type)))
            return out
        if node.kind == "state":
            return []
        desc = self.types.desc(node.type) if node.type is not None else None
        if isinstance(desc, Struct):
            return [
                (f.name, self.node(PtrVal(node.address.obj, node.address.offset + f.offset), f.type))
                for f in desc.fields
            ]
        if isinstance(desc, Array):
            esz = self.types.size_of(desc.elem)
            return [
                (f"[{i}]", self.node(PtrVal(node.address.obj, node.address.offset + i * esz), desc.elem))
                for i in range(desc.count)
            ]
        return []

    def _relations(self, node: DebugNode) -> list[tuple[str, DebugNode]]:
        if node.kind == "frame":
            parent = _snapshot_ptr(self.snapshot, PtrVal(node.address.obj, 8))
            if parent is not None and not parent.is_null \
                    and self.snapshot.object(parent.obj) is not None:
                return [("parent", self.frame_node(parent))]
            return []
        if node.kind == "state":
            out = [("globals", self.globals_node())]
            for i, top in enumerate(_thread_tops(self.snapshot, self.snapshot.root)):
                if not top.is_null and self.snapshot.object(top.obj) is not None:
                    out.append((f"thread{i}", self.frame_node(top)))
            return out
        if node.kind == "globals":
            return []
        desc = self.types.desc(node.type) if node.type is not None else None
        if isinstance(desc, Ptr):
            target = self._ptr_at(node.address)
            if target is None or target.is_null or target.is_code:
                return []
            if self.snapshot.object(target.obj) is None:
                return []  # dangling: attribute only
            tid = self.typemap.get(target.obj) if target.offset == 0 else None
            return [("deref", self.node(target, tid))]
        if desc is None and not node.address.is_null:
            obj = self.snapshot.object(node.address.obj)
            if obj is None:
                return []
            out = []
            for off in sorted(obj.ptrs):
                p = obj.ptrs[off]
                if p.is_null or p.is_code or self.snapshot.object(p.obj) is None:
                    continue
                tid = self.typemap.get(p.obj) if p.offset == 0 else None
                out.append((f"ptr@{off}", self.node(p, tid)))
            return out
        return []

    def _summary(self, node: DebugNode) -> str:
        if node.kind == "frame":
            return f"frame {dict(node.attributes).get('function', '?')}"
        if node.kind in ("globals", "state"):
            return node.kind
        desc = self.types.desc(node.type) if node.type is not None else None
        attrs = dict(node.attributes)
        if isinstance(desc, Prim):
            return attrs.get("value", "?")
        if isinstance(desc, Ptr):
            return attrs.get("raw", "?")
        if isinstance(desc, (Struct, Array)):
            return self.types.render(node.type)
        if "dangling" in attrs:
            return "dangling"
        return f"object size {attrs.get('size', '?')}"


def render_node(node: DebugNode) -> list[str]:
    """Line-oriented rendering used by `show` and the transcripts."""
    ctx = node.ctx
    header = node.kind
    if node.type is not None:
        header += f" {ctx.types.render(node.type)}"
    if not node.address.is_null:
        header += f" at {ctx.render_ptr(node.address)}"
    lines = [header]
    for name, value in node.attributes:
        lines.append(f"  {name} = {value}")
    for name, child in node.components():
        lines.append(f"  .{name} : {child.summary()}")
    for name, child in node.relations():
        lines.append(f"  ->{name} : {child.summary()}")
    return lines


# ---------------------------------------------------------------------------
# Source windows
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SourceWindow:
    file: str
    first_line: int
    lines: tuple[str, ...]
    highlight: int


def source_window(program: ProgramUnit, pc: CodePtr, context: int,
                  search_paths: list[str]) -> SourceWindow | None:
    """Window of source text around pc's line, or None if unavailable."""
    loc = effective_loc(program, pc)
    if loc is None:
        return None
    path = _find_source(loc.file, search_paths)
    if path is None:
        return None
    with open(path, "r", encoding="utf-8") as fh:
        all_lines = fh.read().splitlines()
    if not 1 <= loc.line <= len(all_lines):
        return None
    first = max(1, loc.line - context)
    last = min(len(all_lines), loc.line + context)
    return SourceWindow(loc.file, first, tuple(all_lines[first - 1 : last]), loc.line)


def _find_source(name: str, search_paths: list[str]) -> str | None:
    if os.path.isabs(name) and os.path.exists(name):
        return name
    for base in search_paths:
        candidate = os.path.join(base, name)
        if os.path.exists(candidate):
            return candidate
    return None


# ---------------------------------------------------------------------------
# Graph rendering
# ---------------------------------------------------------------------------


@dataclass
class GraphNode:
    id: str
    label: str
    attributes: list[tuple[str, str]]
    components: list[str]


@dataclass
class GraphEdge:
    src: str
    dst: str
    label: str


def build_graph(root: DebugNode, max_depth: int) -> tuple[list[GraphNode], list[GraphEdge]]:
    """Shared node/edge extraction behind render_dot and the UI payload.

    One graph node per distinct (object, type) debug node reached within
    max_depth relation hops; components are rendered textually into the
    node, pointer components and relations become labeled edges.
    """
    ctx = root.ctx
    nodes: list[GraphNode] = []
    edges: list[GraphEdge] = []
    ids: dict[tuple, str] = {}
    id_use: dict[str, int] = {}

    def key_of(node: DebugNode):
        return (node.kind, node.address.obj, node.address.offset, node.type)

    def base_id(node: DebugNode) -> str:
        if node.address.is_null:
            return "null"
        canon = ctx.snapshot.canonical_ids().get(node.address.obj)
        return str(canon) if canon is not None else f"r{node.address.obj}"

    def out_edges(node: DebugNode) -> list[tuple[str, DebugNode]]:
        found: list[tuple[str, DebugNode]] = []

        def from_components(n: DebugNode):
            for name, child in n.components():
                desc = ctx.types.desc(child.type) if child.type is not None else None
                if isinstance(desc, Ptr):
                    for _, target in child.relations():
                        found.append((name, target))
                elif isinstance(desc, (Struct, Array)):
                    from_components(child)

        from_components(node)
        for name, target in node.relations():
            found.append((name, target))
        return found

    def component_lines(node: DebugNode) -> list[str]:
        lines: list[str] = []

        def walk(prefix: str, n: DebugNode):
            for name, child in n.components():
                label = f"{prefix}{name}"
                desc = ctx.types.desc(child.type) if child.type is not None else None
                if isinstance(desc, (Struct, Array)):
                    walk(label + ".", child)
                else:
                    lines.append(f"{label}: {child.summary()}")

        walk("", node)
        return lines

    queue: deque[tuple[DebugNode, int]] = deque([(root, 0)])
    while queue:
        node, depth = queue.popleft()
        k = key_of(node)
        if k in ids:
            continue
        nid = base_id(node)
        n = id_use.get(nid, 0)
        id_use[nid] = n + 1
        if n:
            nid = f"{nid}.{n}"
        ids[k] = nid

        if node.type is not None:
            title = ctx.types.render(node.type)
        elif node.kind == "frame":
            title = f"frame @{dict(node.attributes).get('function', '?')}"
        else:
            title = node.kind
        comps = component_lines(node)
        attrs = [(a, v) for a, v in node.attributes]
        nodes.append(GraphNode(nid, title, attrs, comps))

        if depth < max_depth:
            for label, target in out_edges(node):
                queue.append((target, depth + 1))

    # second pass for edges so every endpoint id is known
    emitted: set[tuple[str, str, str]] = set()

    def edge_pass(node: DebugNode, depth: int, seen: set):
        k = key_of(node)
        if k in seen:
            return
        seen.add(k)
        if depth >= max_depth:
            return
        for label, target in out_edges(node):
            tk = key_of(target)
            if tk in ids:
                e = (ids[k], ids[tk], label)
                if e not in emitted:
                    emitted.add(e)
                    edges.append(GraphEdge(*e))
                edge_pass(target, depth + 1, seen)

    edge_pass(root, 0, set())
    return nodes, edges


def render_dot(root: DebugNode, max_depth: int) -> str:
    """Deterministic DOT text for the debug graph under root."""
    nodes, edges = build_graph(root, max_depth)

    def esc(s: str) -> str:
        return s.replace("\\", "\\\\").replace('"', '\\"')

    out = ["digraph heap {", "  node [shape=box, fontname=\"monospace\"];"]
    for n in nodes:
        parts = [n.label]
        parts.extend(f"{a} = {v}" for a, v in n.attributes)
        parts.extend(n.components)
        label = "\\n".join(esc(part) for part in parts)
        out.append(f'  "{n.id}" [label="{label}"];')
    for e in edges:
        out.append(f'  "{e.src}" -> "{e.dst}" [label="{esc(e.label)}"];')
    out.append("}")
    return "\n".join(out) + "\n"
