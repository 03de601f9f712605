"""Object-granular simulated memory with pointer shadow tracking.

Every allocation is a separate bounded object addressed by an opaque id;
pointers are tracked per 8-byte word in a shadow map, never as raw bytes.
The working heap supports copy-on-write snapshots: a snapshot freezes the
current version of every object and shares unmodified versions with every
other snapshot, so storage grows with the number of *modified* objects.

Guest-visible misbehavior (out-of-bounds access, use-after-free, bad
frees, misaligned pointer traffic) raises GuestFault and leaves the heap
untouched; simulator misuse raises SimulatorError.

Canonical digests rename object ids by DFS discovery order from a root
pointer, making them stable under allocation-order permutations.  The
serialization layout is fixed (see canonical_digest) and all integers are
little-endian.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass

from .mir import SimulatorError

WORD = 8
CODE_BASE = 1 << 48  # ObjIds at or above this are code references, not heap objects

# guest fault reasons
OUT_OF_BOUNDS = "out-of-bounds"
USE_AFTER_FREE = "use-after-free"
NULL_DEREF = "null-deref"
INVALID_FREE = "invalid-free"
MISALIGNED_READ = "misaligned-pointer-read"
MISALIGNED_WRITE = "misaligned-pointer-write"
DIV_BY_ZERO = "div-by-zero"
TYPE_CONFUSION = "type-confusion"
EXPLICIT = "explicit"


class GuestFault(Exception):
    """A fault of the simulated program (never of the simulator)."""

    def __init__(self, reason: str, detail: str = ""):
        super().__init__(f"{reason}: {detail}" if detail else reason)
        self.reason = reason
        self.detail = detail


@dataclass(frozen=True)
class PtrVal:
    """A tracked pointer: target object id plus byte offset.

    Offsets may run past the object bounds transiently; validity is
    checked when the pointer is dereferenced.
    """

    obj: int | None
    offset: int = 0

    def __post_init__(self):
        if self.obj is None and self.offset != 0:
            raise SimulatorError("null pointer must have offset 0")

    @property
    def is_null(self) -> bool:
        return self.obj is None

    @property
    def is_code(self) -> bool:
        return self.obj is not None and self.obj >= CODE_BASE


NULL = PtrVal(None, 0)


def code_ptr_value(fid: int, block: int, index: int) -> PtrVal:
    """Encode a CodePtr as a pointer into the reserved code namespace."""
    return PtrVal(CODE_BASE + fid, (block << 16) | index)


def decode_code_ptr(p: PtrVal) -> tuple[int, int, int] | None:
    """(fid, block, index) if p lies in the code namespace, else None."""
    if p.obj is None or p.obj < CODE_BASE or p.offset < 0:
        return None
    return (p.obj - CODE_BASE, p.offset >> 16, p.offset & 0xFFFF)


class HeapObject:
    """One immutable version of one object. Pointer words hold zeros in
    `data`; their values live in the `ptrs` shadow map."""

    __slots__ = ("size", "data", "ptrs")

    def __init__(self, size: int, data: bytes, ptrs: dict[int, PtrVal]):
        self.size = size
        self.data = data
        self.ptrs = ptrs


class _Working:
    """Mutable copy of an object, private to one HeapState."""

    __slots__ = ("size", "data", "ptrs")

    def __init__(self, size: int, data: bytearray, ptrs: dict[int, PtrVal]):
        self.size = size
        self.data = data
        self.ptrs = ptrs

    @classmethod
    def thaw(cls, o: HeapObject) -> "_Working":
        return cls(o.size, bytearray(o.data), dict(o.ptrs))

    def freeze(self) -> HeapObject:
        return HeapObject(self.size, bytes(self.data), dict(self.ptrs))


_snapshot_ids = itertools.count(1)


class SnapshotRef:
    """Immutable snapshot of an entire heap, structurally shared."""

    __slots__ = ("sid", "root", "objects", "_digest", "_canon")

    def __init__(self, sid: int, root: PtrVal, objects: dict[int, HeapObject]):
        self.sid = sid
        self.root = root
        self.objects = objects
        self._digest: str | None = None
        self._canon: dict[int, int] | None = None

    # read-only access with the same fault semantics as the working heap
    def load(self, p: PtrVal, width: int):
        return _load(self.objects, p, width)

    def object(self, oid: int) -> HeapObject | None:
        return self.objects.get(oid)

    def is_live(self, oid: int) -> bool:
        return oid in self.objects

    def digest(self) -> str:
        if self._digest is None:
            self._digest, self._canon = _canonicalize(self)
        return self._digest

    def canonical_ids(self) -> dict[int, int]:
        """ObjId -> canonical id for every object reachable from the root."""
        if self._canon is None:
            self._digest, self._canon = _canonicalize(self)
        return self._canon


def _check_bounds(obj, p: PtrVal, width: int):
    if p.offset < 0 or p.offset + width > obj.size:
        raise GuestFault(
            OUT_OF_BOUNDS,
            f"access of {width} byte(s) at offset {p.offset} in object of size {obj.size}",
        )


def _resolve(objmap, p: PtrVal, width: int):
    if p.obj is None:
        raise GuestFault(NULL_DEREF, f"{width}-byte access through null")
    if p.is_code:
        raise GuestFault(OUT_OF_BOUNDS, "access through a code pointer")
    obj = objmap.get(p.obj)
    if obj is None:
        raise GuestFault(USE_AFTER_FREE, f"object #{p.obj} is not live")
    _check_bounds(obj, p, width)
    return obj


def _overlapping_ptr_words(obj, off: int, width: int) -> list[int]:
    lo = (off // WORD) * WORD
    return [w for w in range(lo, off + width, WORD) if w in obj.ptrs]


def _load(objmap, p: PtrVal, width: int):
    if width not in (1, 4, 8):
        raise SimulatorError(f"bad load width {width}")
    obj = _resolve(objmap, p, width)
    if width == WORD and p.offset % WORD == 0 and p.offset in obj.ptrs:
        return obj.ptrs[p.offset]
    if _overlapping_ptr_words(obj, p.offset, width):
        raise GuestFault(
            MISALIGNED_READ,
            f"{width}-byte read at offset {p.offset} overlaps a pointer word",
        )
    return int.from_bytes(obj.data[p.offset : p.offset + width], "little")


class HeapState:
    """The working heap of one execution context."""

    def __init__(self):
        self._live: dict[int, HeapObject | _Working] = {}
        self._counter = 1
        self._freed: set[int] = set()

    # -- introspection -------------------------------------------------

    def is_live(self, oid: int) -> bool:
        return oid in self._live

    def live_count(self) -> int:
        return len(self._live)

    def object_size(self, oid: int) -> int:
        return self._live[oid].size

    # -- allocation ------------------------------------------------------

    def alloc(self, size: int) -> PtrVal:
        if size < 0:
            raise SimulatorError("negative allocation size")
        oid = self._counter
        self._counter += 1
        self._live[oid] = _Working(size, bytearray(size), {})
        return PtrVal(oid, 0)

    def free(self, p: PtrVal) -> None:
        if p.obj is None or p.offset != 0 or p.obj not in self._live:
            raise GuestFault(INVALID_FREE, f"free of {p}")
        del self._live[p.obj]
        self._freed.add(p.obj)

    # -- access ---------------------------------------------------------

    def load(self, p: PtrVal, width: int):
        return _load(self._live, p, width)

    def store(self, p: PtrVal, width: int, value) -> None:
        if width not in (1, 4, 8):
            raise SimulatorError(f"bad store width {width}")
        if isinstance(value, PtrVal):
            self._store_ptr(p, width, value)
            return
        obj = self._resolve_mut(p, width)
        for w in _overlapping_ptr_words(obj, p.offset, width):
            del obj.ptrs[w]
            obj.data[w : w + WORD] = b"\0" * WORD
        obj.data[p.offset : p.offset + width] = (value % (1 << (8 * width))).to_bytes(
            width, "little"
        )

    def _store_ptr(self, p: PtrVal, width: int, value: PtrVal) -> None:
        if width != WORD or p.offset % WORD != 0:
            raise GuestFault(
                MISALIGNED_WRITE, f"pointer store of width {width} at offset {p.offset}"
            )
        obj = self._resolve_mut(p, width)
        obj.data[p.offset : p.offset + WORD] = b"\0" * WORD
        obj.ptrs[p.offset] = value

    def _resolve_mut(self, p: PtrVal, width: int) -> _Working:
        obj = _resolve(self._live, p, width)
        if isinstance(obj, HeapObject):  # first mutation since last snapshot: copy
            obj = _Working.thaw(obj)
            self._live[p.obj] = obj
        return obj

    # -- snapshots --------------------------------------------------------

    def snapshot(self, root: PtrVal) -> SnapshotRef:
        for oid, entry in self._live.items():
            if isinstance(entry, _Working):
                self._live[oid] = entry.freeze()
        return SnapshotRef(next(_snapshot_ids), root, dict(self._live))

    @classmethod
    def restore(cls, s: SnapshotRef) -> "HeapState":
        h = cls()
        h._live = dict(s.objects)
        h._counter = max(s.objects.keys(), default=0) + 1
        return h


def canonical_digest(s: SnapshotRef) -> str:
    """Digest of the canonical serialization of everything reachable from
    the snapshot root.  Layout (all little-endian):

      root canonical id (i64), root offset (i64), object count (u64),
      then per object in discovery order:
        canonical id (i64), size (u64), pointer word count (u64),
        per pointer word ascending: offset (u64), target id (i64),
        target offset (i64); then the object's raw bytes (pointer words
        read as zeros).

    Canonical ids: 0 for null, 1..N for reachable objects by DFS discovery
    order (word offsets ascending), negative ids for dangling targets by
    discovery order, and the stable code-namespace id for code pointers.
    """
    return s.digest()


def _canonicalize(s: SnapshotRef) -> tuple[str, dict[int, int]]:
    objects = s.objects
    order: dict[int, int] = {}
    dangling: dict[int, int] = {}

    def canon(oid: int | None) -> int:
        if oid is None:
            return 0
        if oid >= CODE_BASE:
            return oid
        if oid in order:
            return order[oid]
        if oid not in dangling:
            dangling[oid] = -(len(dangling) + 1)
        return dangling[oid]

    discovery: list[int] = []
    root_obj = s.root.obj
    stack = [root_obj] if root_obj is not None and root_obj < CODE_BASE else []
    while stack:
        oid = stack.pop()
        if oid in order or oid not in objects:
            continue
        order[oid] = len(order) + 1
        discovery.append(oid)
        targets = []
        obj = objects[oid]
        for off in sorted(obj.ptrs):
            t = obj.ptrs[off].obj
            if t is not None and t < CODE_BASE and t in objects and t not in order:
                targets.append(t)
        stack.extend(reversed(targets))

    h = hashlib.sha256()

    def i64(v: int):
        h.update(v.to_bytes(8, "little", signed=True))

    def u64(v: int):
        h.update(v.to_bytes(8, "little"))

    i64(canon(root_obj))
    i64(s.root.offset)
    u64(len(discovery))
    for oid in discovery:
        obj = objects[oid]
        i64(order[oid])
        u64(obj.size)
        u64(len(obj.ptrs))
        for off in sorted(obj.ptrs):
            tgt = obj.ptrs[off]
            u64(off)
            i64(canon(tgt.obj))
            i64(tgt.offset)
        h.update(obj.data)

    canon_map = dict(order)
    canon_map.update(dangling)
    return h.hexdigest(), canon_map
