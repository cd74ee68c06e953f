"""Shared builders for the linked-list and point modules used across tests."""

import pytest

from owlang.ast import BoxType, CompositeEnv, EnumType, I32, StructType, UNIT
from owlang.memory import Layout, Memory, VInt32, VPtr


def make_list_env() -> CompositeEnv:
    """Node struct + List enum: the canonical recursive resource type."""
    cenv = CompositeEnv()
    cenv.add("Node", "struct",
             [("key", I32), ("val", BoxType(I32)), ("next", BoxType(EnumType("List")))])
    cenv.add("List", "enum", [("Nil", UNIT), ("Cons", StructType("Node"))])
    return cenv


def build_list(mem: Memory, layout: Layout, pairs) -> VPtr:
    """Allocate an owned (key, boxed val) list on the heap, head first."""
    tail = mem.alloc(layout.sizeof(EnumType("List")), "heap")
    mem.store(tail, 0, "i32", VInt32(0))
    for key, val in reversed(pairs):
        vb = mem.alloc(4, "heap")
        mem.store(vb, 0, "i32", VInt32(val))
        b = mem.alloc(layout.sizeof(EnumType("List")), "heap")
        po = layout.payload_offset("List")
        mem.store(b, 0, "i32", VInt32(1))
        mem.store(b, po + layout.field_offset("Node", "key"), "i32", VInt32(key))
        mem.store(b, po + layout.field_offset("Node", "val"), "ptr", VPtr(vb, 0))
        mem.store(b, po + layout.field_offset("Node", "next"), "ptr", VPtr(tail, 0))
        tail = b
    return VPtr(tail, 0)


def read_list(mem: Memory, layout: Layout, p: VPtr) -> list:
    """Walk an owned list back into [(key, val)] pairs."""
    out = []
    po = layout.payload_offset("List")
    while True:
        if mem.load(p.block, p.off, "i32").n == 0:
            return out
        key = mem.load(p.block, p.off + po + layout.field_offset("Node", "key"), "i32").n
        vp = mem.load(p.block, p.off + po + layout.field_offset("Node", "val"), "ptr")
        out.append((key, mem.load(vp.block, vp.off, "i32").n))
        p = mem.load(p.block, p.off + po + layout.field_offset("Node", "next"), "ptr")


def make_point_env() -> CompositeEnv:
    cenv = CompositeEnv()
    cenv.add("Point", "struct", [("x", BoxType(I32)), ("y", BoxType(I32))])
    return cenv


@pytest.fixture
def list_env():
    return make_list_env()


@pytest.fixture
def point_env():
    return make_point_env()
