"""Block/offset memory with per-byte permissions.

Blocks are never recycled: freeing clears every byte's permission to None
but keeps the block's identity, so later accesses through stale pointers
fault instead of aliasing. Layout decisions (sizes, alignment, enum tag
placement) live here and c-gen reuses them verbatim so the interpreter and
emitted C agree byte for byte.

Permissions are totally ordered: None < Readable < Writable < Freeable.
An access whose required permission exceeds a byte's current permission is
a memory error (MemErr), the error-state predicate of the safety harness.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Iterator, Optional, Union

from .ast import (
    BaseType, BoxType, CompositeEnv, EnumType, FnType, StructType, Type,
    owns_resources,
)

# Permission levels
P_NONE = 0
P_READ = 1
P_WRITE = 2
P_FREE = 3

PERM_NAMES = {P_NONE: "none", P_READ: "read", P_WRITE: "write", P_FREE: "free"}


# ---------------------------------------------------------------------------
# Values


@dataclass(frozen=True)
class VUndef:
    def __repr__(self):
        return "Undef"


@dataclass(frozen=True)
class VUnit:
    def __repr__(self):
        return "Unit"


@dataclass(frozen=True)
class VBool:
    b: bool


@dataclass(frozen=True)
class VInt32:
    n: int


@dataclass(frozen=True)
class VFloat32:
    f: float


@dataclass(frozen=True)
class VPtr:
    block: int
    off: int


@dataclass(frozen=True)
class VBytes:
    """Aggregate value: a snapshot of memory cells (struct/enum by value)."""

    cells: tuple


Value = Union[VUndef, VUnit, VBool, VInt32, VFloat32, VPtr, VBytes]

UNDEF = VUndef()
UNIT_V = VUnit()


@dataclass(frozen=True)
class PtrFrag:
    """One byte of a stored pointer; all eight fragments must agree to decode."""

    block: int
    off: int
    idx: int


_UNDEF_CELL = ("undef",)  # unique sentinel, compares by identity


# ---------------------------------------------------------------------------
# Layout


_SCALAR_LAYOUT = {"unit": (0, 1), "bool": (1, 1), "i32": (4, 4), "f32": (4, 4)}
PTR_SIZE = 8
TAG_SIZE = 4


def _align_up(n: int, a: int) -> int:
    return (n + a - 1) // a * a


class Layout:
    """Memoized sizes/offsets for a composite environment."""

    def __init__(self, cenv: CompositeEnv):
        self.cenv = cenv
        self._size: dict = {}

    def size_align(self, t: Type) -> tuple[int, int]:
        key = t
        hit = self._size.get(key)
        if hit is not None:
            return hit
        if isinstance(t, BaseType):
            sa = _SCALAR_LAYOUT[t.name]
        elif isinstance(t, (BoxType, FnType)):
            sa = (PTR_SIZE, PTR_SIZE)
        elif isinstance(t, StructType):
            off, align = 0, 1
            for _, ft in self.cenv[t.id].fields:
                fs, fa = self.size_align(ft)
                off = _align_up(off, fa) + fs
                align = max(align, fa)
            sa = (_align_up(off, align), align)
        elif isinstance(t, EnumType):
            psize, palign = 0, 1
            for _, ft in self.cenv[t.id].fields:
                fs, fa = self.size_align(ft)
                psize = max(psize, fs)
                palign = max(palign, fa)
            align = max(4, palign)
            poff = max(TAG_SIZE, palign)
            sa = (_align_up(poff + psize, align), align)
        else:
            raise TypeError(t)
        self._size[key] = sa
        return sa

    def sizeof(self, t: Type) -> int:
        return self.size_align(t)[0]

    def alignof(self, t: Type) -> int:
        return self.size_align(t)[1]

    def field_offset(self, struct_id: str, label: str) -> int:
        off = 0
        for lbl, ft in self.cenv[struct_id].fields:
            fs, fa = self.size_align(ft)
            off = _align_up(off, fa)
            if lbl == label:
                return off
            off += fs
        raise KeyError(label)

    def payload_offset(self, enum_id: str) -> int:
        palign = 1
        for _, ft in self.cenv[enum_id].fields:
            palign = max(palign, self.alignof(ft))
        return max(TAG_SIZE, palign)


def chunk_of(t: Type) -> str:
    if isinstance(t, BaseType):
        return {"unit": "unit", "bool": "u8", "i32": "i32", "f32": "f32"}[t.name]
    if isinstance(t, (BoxType, FnType)):
        return "ptr"
    raise TypeError(f"no scalar chunk for {t}")


CHUNK_SIZE = {"unit": 0, "u8": 1, "i32": 4, "f32": 4, "ptr": 8}


def is_scalar(t: Type) -> bool:
    return isinstance(t, (BaseType, BoxType, FnType))


# ---------------------------------------------------------------------------
# Errors


@dataclass(frozen=True)
class MemErr:
    kind: str  # "load" | "store" | "free"
    block: int
    offset: int
    required: str  # permission name

    def __str__(self):
        return f"{self.kind} at b{self.block}+{self.offset} requires {self.required}"


class MemFault(Exception):
    def __init__(self, err: MemErr):
        super().__init__(str(err))
        self.err = err


class IllFormed(Exception):
    """A value's ownership chain cannot be walked (undef/unreadable/shared)."""


# ---------------------------------------------------------------------------
# Encoding


def encode_scalar(chunk: str, v: Value) -> list:
    if isinstance(v, VUndef):
        return [_UNDEF_CELL] * CHUNK_SIZE[chunk]
    if chunk == "unit":
        return []
    if chunk == "u8":
        assert isinstance(v, VBool)
        return [1 if v.b else 0]
    if chunk == "i32":
        assert isinstance(v, VInt32)
        return list(struct.pack("<i", _wrap32(v.n)))
    if chunk == "f32":
        assert isinstance(v, VFloat32)
        return list(struct.pack("<f", v.f))
    if chunk == "ptr":
        assert isinstance(v, VPtr)
        return [PtrFrag(v.block, v.off, i) for i in range(PTR_SIZE)]
    raise ValueError(chunk)


def decode_scalar(chunk: str, cells: list) -> Value:
    if chunk == "unit":
        return UNIT_V
    if any(c is _UNDEF_CELL for c in cells):
        return UNDEF
    if chunk == "ptr":
        first = cells[0]
        if not isinstance(first, PtrFrag):
            return UNDEF
        for i, c in enumerate(cells):
            if not isinstance(c, PtrFrag) or c.block != first.block or c.off != first.off or c.idx != i:
                return UNDEF
        return VPtr(first.block, first.off)
    if any(not isinstance(c, int) for c in cells):
        return UNDEF
    raw = bytes(cells)
    if chunk == "u8":
        return VBool(raw[0] != 0)
    if chunk == "i32":
        return VInt32(struct.unpack("<i", raw)[0])
    if chunk == "f32":
        return VFloat32(struct.unpack("<f", raw)[0])
    raise ValueError(chunk)


def _wrap32(n: int) -> int:
    n &= 0xFFFFFFFF
    return n - 0x100000000 if n >= 0x80000000 else n


def f32_round(x: float) -> float:
    """Round a Python float to single precision (C float parity)."""
    return struct.unpack("<f", struct.pack("<f", x))[0]


# ---------------------------------------------------------------------------
# Memory


class _Block:
    __slots__ = ("size", "perm", "cells", "kind", "birth", "mtime")

    def __init__(self, size: int, kind: str, birth: int = 0):
        self.size = size
        self.perm = bytearray([P_FREE] * size)
        self.cells = [_UNDEF_CELL] * size
        self.kind = kind  # "heap" | "stack"
        self.birth = birth  # memory version at allocation
        self.mtime = birth  # memory version of the last store/free

    def clone(self) -> "_Block":
        b = _Block.__new__(_Block)
        b.size = self.size
        b.perm = bytearray(self.perm)
        b.cells = list(self.cells)
        b.kind = self.kind
        b.birth = self.birth
        b.mtime = self.mtime
        return b


class Memory:
    """Mutable memory; clone() snapshots for exploration and monitoring."""

    def __init__(self):
        self.blocks: dict[int, _Block] = {}
        self.next_block = 1
        self.next_stack = -1  # stack slots count down so heap ids are stable
        self.log: Optional[list] = None  # per-step touch log, enabled by traces
        self.version = 0  # bumped on every alloc/free/store; lets observers
                          # detect writes without snapshotting

    # -- allocation ---------------------------------------------------------

    def alloc(self, size: int, kind: str = "heap") -> int:
        assert size >= 0
        if kind == "stack":
            b = self.next_stack
            self.next_stack -= 1
        else:
            b = self.next_block
            self.next_block += 1
        self.version += 1
        self.blocks[b] = _Block(size, kind, birth=self.version)
        if self.log is not None:
            self.log.append(("alloc", b, size))
        return b

    def free(self, b: int) -> None:
        blk = self.blocks.get(b)
        if blk is None:
            raise MemFault(MemErr("free", b, 0, "free"))
        for off in range(blk.size):
            if blk.perm[off] < P_FREE:
                raise MemFault(MemErr("free", b, off, "free"))
        blk.perm = bytearray(blk.size)  # all None
        self.version += 1
        blk.mtime = self.version
        if self.log is not None:
            self.log.append(("free", b))

    # -- raw cell access ----------------------------------------------------

    def _check(self, kind: str, need: int, b: int, off: int, n: int) -> _Block:
        blk = self.blocks.get(b)
        name = PERM_NAMES[need]
        if blk is None or off < 0 or off + n > blk.size:
            raise MemFault(MemErr(kind, b, off, name))
        perm = blk.perm
        for i in range(off, off + n):
            if perm[i] < need:
                raise MemFault(MemErr(kind, b, i, name))
        return blk

    def load_cells(self, b: int, off: int, n: int) -> list:
        blk = self._check("load", P_READ, b, off, n)
        return blk.cells[off:off + n]

    def store_cells(self, b: int, off: int, cells: list) -> None:
        n = len(cells)
        blk = self._check("store", P_WRITE, b, off, n)
        blk.cells[off:off + n] = cells
        self.version += 1
        blk.mtime = self.version
        if self.log is not None:
            self.log.append(("store", b, off, n))

    # -- typed access -------------------------------------------------------

    def load(self, b: int, off: int, chunk: str) -> Value:
        return decode_scalar(chunk, self.load_cells(b, off, CHUNK_SIZE[chunk]))

    def store(self, b: int, off: int, chunk: str, v: Value) -> None:
        self.store_cells(b, off, encode_scalar(chunk, v))

    # -- queries ------------------------------------------------------------

    def valid_block(self, b: int) -> bool:
        """A block is valid while any byte keeps a permission."""
        blk = self.blocks.get(b)
        return blk is not None and any(p > P_NONE for p in blk.perm)

    def block_bytes(self, b: int) -> Iterator[tuple[int, int]]:
        blk = self.blocks[b]
        for off in range(blk.size):
            yield b, off

    def all_bytes_except(self, exclude: set[int]) -> Iterator[tuple[int, int]]:
        for b in self.blocks:
            if b not in exclude:
                yield from self.block_bytes(b)

    def leaked_heap_blocks(self) -> list[int]:
        out = []
        for b, blk in self.blocks.items():
            if blk.kind == "heap" and any(p >= P_FREE for p in blk.perm):
                out.append(b)
        return out

    def clone(self) -> "Memory":
        m = Memory()
        m.blocks = {b: blk.clone() for b, blk in self.blocks.items()}
        m.next_block = self.next_block
        m.next_stack = self.next_stack
        m.version = self.version
        return m

    def byte_state(self, b: int, off: int) -> tuple:
        blk = self.blocks[b]
        return (blk.perm[off], blk.cells[off])

    def dump(self) -> str:
        """One line per block: b<id> size=<n> perm=<p> bytes=<hex|undef>."""
        lines = []
        for b in sorted(self.blocks):
            blk = self.blocks[b]
            perms = set(blk.perm)
            perm = PERM_NAMES[perms.pop()] if len(perms) == 1 else "mixed"
            if blk.size == 0:
                data = ""
            elif all(isinstance(c, int) for c in blk.cells):
                data = bytes(blk.cells).hex()
            else:
                data = "undef"
            lines.append(f"b{b} size={blk.size} perm={perm} bytes={data}")
        return "\n".join(lines)


# ---------------------------------------------------------------------------
# Footprints


Footprint = list  # of block ids, ordered


def iter_box_cells(
    m: Memory, layout: Layout, t: Type, b: int, off: int
) -> Iterator[tuple[int, int, Type]]:
    """Yield (block, offset, box type) for every box-pointer cell inside the
    region of type t at (b, off), reading enum tags from memory. Raises
    IllFormed when a tag can't be read."""
    cenv = layout.cenv
    if isinstance(t, BoxType):
        yield b, off, t
        return
    if isinstance(t, (BaseType, FnType)):
        return
    if isinstance(t, StructType):
        for lbl, ft in cenv[t.id].fields:
            if owns_resources(cenv, ft):
                yield from iter_box_cells(m, layout, ft, b, off + layout.field_offset(t.id, lbl))
        return
    if isinstance(t, EnumType):
        if not owns_resources(cenv, t):
            return
        try:
            tag = m.load(b, off, "i32")
        except MemFault:
            raise IllFormed(f"unreadable tag at b{b}+{off}")
        if not isinstance(tag, VInt32):
            raise IllFormed(f"undef tag at b{b}+{off}")
        fields = cenv[t.id].fields
        if not 0 <= tag.n < len(fields):
            raise IllFormed(f"bad tag {tag.n} at b{b}+{off}")
        _, pt = fields[tag.n]
        yield from iter_box_cells(m, layout, pt, b, off + layout.payload_offset(t.id))
        return
    raise TypeError(t)


def footprint(m: Memory, layout: Layout, t: Type, v: Value) -> Footprint:
    """Blocks transitively owned by a value of type t.

    Box: the pointed block plus, recursively, the footprint of the stored
    value; structs union resource-owning fields; enums follow the active
    variant. Raises IllFormed on undef pointers, unreadable blocks, or a
    block reached twice (sharing or a cycle - neither is well-formed
    ownership).
    """
    acc: Footprint = []
    seen: set[int] = set()

    def walk_value(t: Type, v: Value) -> None:
        if isinstance(t, BoxType):
            if not isinstance(v, VPtr):
                raise IllFormed(f"box value is {v!r}, not a pointer")
            walk_box(t, v)
        elif isinstance(t, (StructType, EnumType)):
            if not isinstance(v, VBytes):
                raise IllFormed(f"composite value is {v!r}")
            walk_cells(t, list(v.cells))

    def walk_box(t: BoxType, v: VPtr) -> None:
        b = v.block
        if b in seen:
            raise IllFormed(f"block b{b} reached twice")
        seen.add(b)
        acc.append(b)
        size = layout.sizeof(t.elem)
        try:
            cells = m.load_cells(b, v.off, size)
        except MemFault as e:
            raise IllFormed(str(e))
        walk_cells(t.elem, cells)

    def walk_cells(t: Type, cells: list) -> None:
        cenv = layout.cenv
        if isinstance(t, BoxType):
            walk_box(t, _decode_ptr(cells))
        elif isinstance(t, StructType):
            for lbl, ft in cenv[t.id].fields:
                if owns_resources(cenv, ft):
                    o = layout.field_offset(t.id, lbl)
                    walk_cells(ft, cells[o:o + layout.sizeof(ft)])
        elif isinstance(t, EnumType):
            if not owns_resources(cenv, t):
                return
            tag = decode_scalar("i32", cells[:4])
            if not isinstance(tag, VInt32):
                raise IllFormed("undef tag in enum value")
            fields = cenv[t.id].fields
            if not 0 <= tag.n < len(fields):
                raise IllFormed(f"bad tag {tag.n} in enum value")
            _, pt = fields[tag.n]
            o = layout.payload_offset(t.id)
            walk_cells(pt, cells[o:o + layout.sizeof(pt)])

    def _decode_ptr(cells: list) -> VPtr:
        v = decode_scalar("ptr", cells)
        if not isinstance(v, VPtr):
            raise IllFormed("box cell does not hold a pointer")
        return v

    walk_value(t, v)
    return acc


def footprint_of_region(m: Memory, layout: Layout, t: Type, b: int, off: int) -> Footprint:
    """Footprint of the value of type t stored at (b, off)."""
    cells = m.load_cells(b, off, layout.sizeof(t))
    if is_scalar(t):
        return footprint(m, layout, t, decode_scalar(chunk_of(t), cells))
    return footprint(m, layout, t, VBytes(tuple(cells)))


def wt_val(m: Memory, layout: Layout, t: Type, fp: Footprint, v: Value) -> bool:
    """True iff v's footprint equals fp (as duplicate-free sets) and every
    byte of every block in fp is Freeable."""
    if len(set(fp)) != len(fp):
        return False
    try:
        actual = footprint(m, layout, t, v)
    except IllFormed:
        return False
    if set(actual) != set(fp):
        return False
    for b in fp:
        blk = m.blocks.get(b)
        if blk is None or any(p < P_FREE for p in blk.perm):
            return False
    return True


def unchanged_on(m: Memory, m2: Memory, region) -> bool:
    """True iff every (block, offset) byte in region has identical permission
    and contents in both memories."""
    for b, off in region:
        if m.byte_state(b, off) != m2.byte_state(b, off):
            return False
    return True
