"""Small-step interpreter for all three dialects, organized as an open LTS.

A run starts from an incoming query (call into an internal function),
performs internal steps, and pauses with an outgoing query whenever the
program calls an external function; `resume` feeds the reply back in.
`run` is the driver that answers queries from a host table.

Each frame carries a dynamic ownership state over the same place algebra
the static analysis uses, so traces can be compared against the analysis
and monitored for the ownership invariant. Drops consult it: `drop p`
frees the footprint of p's current value only when the state says p is
owned. Surface programs additionally get implicit drops (before a
reassignment and at scope exit) at exactly the points lowering would have
inserted them, which keeps heap traffic identical across dialects.

Every failure is a terminal mode, never a Python exception: memory faults
become `memerr`, and undefined behavior becomes `stuck` with a reason from
a closed set (div-by-zero, wrong-variant-downcast, undef-use, bad-reply,
missing-return).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional

from .ast import (
    Assign, AssignBox, AssignVariant, BaseType, Binary, BoxType, Break, Call,
    CheckTag, Const, Continue, Deref, Downcast, Drop, EnumType, Expr, ExternFn,
    Field, FlaggedDrop, If, InternalFn, Let, Loop, Module, Move, Place,
    ReadPlace, Return, Seq, Skip, StaticDrop, Stmt, StructType, Type, UNIT,
    Unary, Var, is_prefix, owns_resources, place_root, place_str,
)
from .lower import drop_units, is_ir_module
from .memory import (
    IllFormed, Layout, MemErr, MemFault, Memory, UNIT_V, VBool, VBytes,
    VFloat32, VInt32, VPtr, VUndef, VUnit, Value, chunk_of, f32_round,
    footprint, is_scalar, _wrap32,
)
from .owncheck import Places

Signature = tuple[tuple[Type, ...], Type]

STUCK_REASONS = (
    "div-by-zero", "wrong-variant-downcast", "undef-use", "bad-reply",
    "missing-return",
)


class _Stuck(Exception):
    def __init__(self, reason: str):
        assert reason in STUCK_REASONS
        super().__init__(reason)
        self.reason = reason


# ---------------------------------------------------------------------------
# Queries and replies


@dataclass(frozen=True)
class Query:
    callee: str
    sig: Signature
    args: tuple
    memory: Memory


@dataclass(frozen=True)
class Reply:
    value: Value
    memory: Memory


def fn_signature(f) -> Signature:
    return tuple(t for _, t in f.params), f.ret


def make_query(mod: Module, callee: str, args: list, memory: Optional[Memory] = None) -> Query:
    """Convenience constructor that pulls the signature from the module."""
    f = mod.get_fn(callee)
    if f is None:
        raise ValueError(f"unknown function {callee!r}")
    return Query(callee, fn_signature(f), tuple(args), memory if memory is not None else Memory())


def decodes_at(v: Value, t: Type) -> bool:
    """Does a runtime value fit a declared type? Undef is never accepted."""
    if isinstance(t, BaseType):
        want = {"unit": VUnit, "bool": VBool, "i32": VInt32, "f32": VFloat32}[t.name]
        return isinstance(v, want)
    if isinstance(t, BoxType):
        return isinstance(v, VPtr)
    if isinstance(t, (StructType, EnumType)):
        return isinstance(v, VBytes)
    return False


# ---------------------------------------------------------------------------
# Machine state

# Continuation entries, innermost last:
#   ("stmts", [s, ...])       statements still to run
#   ("loop", body)            re-enter body when reached
#   ("scope", names, saved)   surface let scope: drop + release on exit


class Frame:
    def __init__(self, fn: InternalFn, places: Places):
        self.fn = fn
        self.places = places
        self.slots: dict[str, tuple[int, Type]] = {}
        self.ownst: frozenset = frozenset()
        self.kont: list = []
        self.pending_dest: Optional[Place] = None  # dest of an internal call in flight


class LtsState:
    """One interpreter instance: a call stack, a memory, and a mode.

    mode is "running" | "awaiting" | "final" | "stuck" | "memerr".
    The payload lives in `pending` (outgoing Query plus reply destination),
    `reply`, `reason`, or `err` respectively.
    """

    def __init__(self, mod: Module, memory: Memory):
        self.module = mod
        self.memory = memory
        self.layout = Layout(mod.composites)
        self.surface = not is_ir_module(mod)
        self.frames: list[Frame] = []
        self.mode = "running"
        self.pending: Optional[tuple[Query, Optional[Place]]] = None
        self.reply: Optional[Reply] = None
        self.reason: Optional[str] = None
        self.err: Optional[MemErr] = None
        self.last_pc: tuple[str, int] = ("", 0)

    @property
    def top(self) -> Frame:
        return self.frames[-1]


def init_lts(mod: Module, q: Query) -> Optional[LtsState]:
    """Start a run from an incoming query. External or unknown callees are
    refused (returns None): only internal functions accept queries."""
    f = mod.get_fn(q.callee)
    if not isinstance(f, InternalFn):
        return None
    if len(q.args) != len(f.params):
        raise ValueError(f"{q.callee} expects {len(f.params)} args, got {len(q.args)}")
    for v, (_, t) in zip(q.args, f.params):
        if not decodes_at(v, t):
            raise ValueError(f"argument {v!r} does not decode at {t}")
    s = LtsState(mod, q.memory)
    _push_frame(s, f, list(q.args))
    return s


def _push_frame(s: LtsState, f: InternalFn, args: list) -> None:
    fr = Frame(f, Places(s.module.composites, f))
    for (name, t), v in zip(f.params, args):
        b = s.memory.alloc(s.layout.sizeof(t), "stack")
        _store_value(s, b, 0, t, v)
        fr.slots[name] = (b, t)
    for name, t in f.locals:
        b = s.memory.alloc(s.layout.sizeof(t), "stack")
        fr.slots[name] = (b, t)
    fr.ownst = fr.places.entry_own()
    fr.kont = [("stmts", [f.body])]
    s.frames.append(fr)


# ---------------------------------------------------------------------------
# Place resolution and value transfer


def _resolve(s: LtsState, fr: Frame, p: Place) -> tuple[int, int, Type]:
    """Place -> (block, offset, type). Reads memory for derefs and checks
    tags for downcasts."""
    if isinstance(p, Var):
        if p.name not in fr.slots:
            raise KeyError(f"no slot {p.name!r} in {fr.fn.name}")
        b, t = fr.slots[p.name]
        return b, 0, t
    if isinstance(p, Deref):
        b, off, t = _resolve(s, fr, p.base)
        assert isinstance(t, BoxType), f"deref of non-box {t}"
        v = s.memory.load(b, off, "ptr")
        if isinstance(v, VUndef):
            # an undefined pointer addresses no block; block 0 is never
            # allocated, so the access through it faults as a memory error
            # rather than plain undefined behavior
            return 0, 0, t.elem
        return v.block, v.off, t.elem
    if isinstance(p, Field):
        b, off, t = _resolve(s, fr, p.base)
        assert isinstance(t, StructType)
        ft = s.module.composites.field_type(t.id, p.label)
        return b, off + s.layout.field_offset(t.id, p.label), ft
    if isinstance(p, Downcast):
        b, off, t = _resolve(s, fr, p.base)
        assert isinstance(t, EnumType)
        tag = s.memory.load(b, off, "i32")
        if isinstance(tag, VUndef):
            raise _Stuck("undef-use")
        idx = s.module.composites.variant_index(t.id, p.variant)
        if tag.n != idx:
            raise _Stuck("wrong-variant-downcast")
        pt = s.module.composites.field_type(t.id, p.variant)
        return b, off + s.layout.payload_offset(t.id), pt
    raise TypeError(p)


def _load_value(s: LtsState, b: int, off: int, t: Type) -> Value:
    if is_scalar(t):
        return s.memory.load(b, off, chunk_of(t))
    return VBytes(tuple(s.memory.load_cells(b, off, s.layout.sizeof(t))))


def _store_value(s: LtsState, b: int, off: int, t: Type, v: Value) -> None:
    if is_scalar(t):
        s.memory.store(b, off, chunk_of(t), v)
    else:
        assert isinstance(v, VBytes) and len(v.cells) == s.layout.sizeof(t), \
            f"composite store mismatch at {t}"
        s.memory.store_cells(b, off, list(v.cells))


# ---------------------------------------------------------------------------
# Expression evaluation (moves update the frame's ownership state)


def _eval(s: LtsState, fr: Frame, e: Expr) -> Value:
    if isinstance(e, Const):
        if e.type == UNIT:
            return UNIT_V
        if e.type.name == "bool":
            return VBool(e.value)
        if e.type.name == "i32":
            return VInt32(_wrap32(e.value))
        return VFloat32(f32_round(e.value))
    if isinstance(e, ReadPlace):
        b, off, t = _resolve(s, fr, e.place)
        return _load_value(s, b, off, t)
    if isinstance(e, Move):
        b, off, t = _resolve(s, fr, e.place)
        v = _load_value(s, b, off, t)
        if fr.places.trackable(e.place) and owns_resources(s.module.composites, t):
            fr.ownst = fr.places.remove_full(fr.ownst, e.place)
        return v
    if isinstance(e, CheckTag):
        b, off, t = _resolve(s, fr, e.place)
        assert isinstance(t, EnumType)
        tag = s.memory.load(b, off, "i32")
        if isinstance(tag, VUndef):
            raise _Stuck("undef-use")
        return VBool(tag.n == s.module.composites.variant_index(t.id, e.variant))
    if isinstance(e, Unary):
        v = _scalar(_eval(s, fr, e.operand))
        if e.op == "!":
            return VBool(not v.b)
        if isinstance(v, VInt32):
            return VInt32(_wrap32(-v.n))
        return VFloat32(f32_round(-v.f))
    if isinstance(e, Binary):
        if e.op in ("&&", "||"):
            l = _scalar(_eval(s, fr, e.left))
            if e.op == "&&" and not l.b:
                return VBool(False)
            if e.op == "||" and l.b:
                return VBool(True)
            return VBool(_scalar(_eval(s, fr, e.right)).b)
        l = _scalar(_eval(s, fr, e.left))
        r = _scalar(_eval(s, fr, e.right))
        return _binop(e.op, l, r)
    raise TypeError(e)


def _scalar(v: Value) -> Value:
    if isinstance(v, VUndef):
        raise _Stuck("undef-use")
    return v


def _binop(op: str, l: Value, r: Value) -> Value:
    if op in ("==", "!="):
        a = l.n if isinstance(l, VInt32) else l.f if isinstance(l, VFloat32) else l.b
        b = r.n if isinstance(r, VInt32) else r.f if isinstance(r, VFloat32) else r.b
        return VBool((a == b) if op == "==" else (a != b))
    if op in ("<", "<=", ">", ">="):
        a = l.n if isinstance(l, VInt32) else l.f
        b = r.n if isinstance(r, VInt32) else r.f
        return VBool({"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b}[op])
    if isinstance(l, VInt32):
        a, b = l.n, r.n
        if op == "+":
            return VInt32(_wrap32(a + b))
        if op == "-":
            return VInt32(_wrap32(a - b))
        if op == "*":
            return VInt32(_wrap32(a * b))
        if b == 0:
            raise _Stuck("div-by-zero")
        q = abs(a) // abs(b)
        if (a < 0) != (b < 0):
            q = -q
        return VInt32(_wrap32(q if op == "/" else a - q * b))
    a, b = l.f, r.f
    if op == "+":
        return VFloat32(f32_round(a + b))
    if op == "-":
        return VFloat32(f32_round(a - b))
    if op == "*":
        return VFloat32(f32_round(a * b))
    if op == "/":
        if b == 0.0:
            if a == 0.0 or math.isnan(a):
                return VFloat32(math.nan)
            sign = math.copysign(1.0, a) * math.copysign(1.0, b)
            return VFloat32(math.copysign(math.inf, sign))
        return VFloat32(f32_round(a / b))
    if op == "%":
        try:
            return VFloat32(f32_round(math.fmod(a, b)))
        except ValueError:
            return VFloat32(math.nan)
    raise ValueError(op)


# ---------------------------------------------------------------------------
# Dropping


def _free_value(s: LtsState, t: Type, b: int, off: int) -> None:
    """Free every block owned by the value of type t stored at (b, off):
    pointees before their box block, struct fields in declaration order,
    the active enum payload by stored tag."""
    cenv = s.module.composites
    if isinstance(t, BoxType):
        v = s.memory.load(b, off, "ptr")
        if isinstance(v, VUndef):
            v = VPtr(0, 0)  # wild pointer: the free below faults as memerr
        _free_value(s, t.elem, v.block, v.off)
        s.memory.free(v.block)
        return
    if isinstance(t, StructType):
        for lbl, ft in cenv[t.id].fields:
            if owns_resources(cenv, ft):
                _free_value(s, ft, b, off + s.layout.field_offset(t.id, lbl))
        return
    if isinstance(t, EnumType) and owns_resources(cenv, t):
        tag = s.memory.load(b, off, "i32")
        if isinstance(tag, VUndef) or not 0 <= tag.n < len(cenv[t.id].fields):
            raise _Stuck("undef-use")
        _, pt = cenv[t.id].fields[tag.n]
        if owns_resources(cenv, pt):
            _free_value(s, pt, b, off + s.layout.payload_offset(t.id))
        return
    # scalars own nothing


def _free_place(s: LtsState, fr: Frame, p: Place) -> None:
    b, off, t = _resolve(s, fr, p)
    _free_value(s, t, b, off)


def exec_drop(s: LtsState, p: Place) -> LtsState:
    """Ownership-gated drop (the plain `drop` statement): if the dynamic
    state says p is owned, free its value's footprint and give p up;
    otherwise do nothing."""
    fr = s.top
    if fr.places.covered(fr.ownst, p):
        _free_place(s, fr, p)
        fr.ownst = fr.places.remove_full(fr.ownst, p)
    return s


def _exec_static_drop(s: LtsState, fr: Frame, p: Place) -> None:
    _free_place(s, fr, p)
    fr.ownst = fr.places.remove_full(fr.ownst, p)


def _exec_flagged_drop(s: LtsState, fr: Frame, p: Place, flag: str) -> None:
    fb, _ = fr.slots[flag]
    v = s.memory.load(fb, 0, "i32")
    if isinstance(v, VUndef):
        raise _Stuck("undef-use")
    if v.n != 0:
        _free_place(s, fr, p)
        fr.ownst = fr.places.remove_full(fr.ownst, p)
        s.memory.store(fb, 0, "i32", VInt32(0))


def _top_moves(e: Optional[Expr]) -> list[Place]:
    return [e.place] if isinstance(e, Move) else []


def _overlap(a: Place, b: Place) -> bool:
    return is_prefix(a, b) or is_prefix(b, a)


def _implicit_predrop(s: LtsState, fr: Frame, dest: Place, moves: list[Place]) -> None:
    """Surface reassignment frees the old value first, except leaves the
    statement itself moves away."""
    for u in drop_units(s.module.composites, fr.places.ctx, dest):
        if any(_overlap(mv, u) for mv in moves):
            continue
        exec_drop(s, u)


# ---------------------------------------------------------------------------
# Statement execution


def step(s: LtsState) -> LtsState:
    """One internal transition. Every failure lands in a terminal mode."""
    assert s.mode == "running", f"step on {s.mode} state"
    try:
        _step_inner(s)
    except MemFault as e:
        s.mode = "memerr"
        s.err = e.err
    except _Stuck as e:
        s.mode = "stuck"
        s.reason = e.reason
    return s


def _step_inner(s: LtsState) -> None:
    fr = s.top
    while True:
        if not fr.kont:
            if fr.fn.ret == UNIT:
                _exec_return(s, fr, None, implicit=True)
                return
            raise _Stuck("missing-return")
        top = fr.kont[-1]
        if top[0] == "stmts":
            if not top[1]:
                fr.kont.pop()
                continue
            st = top[1].pop(0)
            if isinstance(st, Seq):
                top[1][0:0] = list(st.stmts)
                continue
            s.last_pc = (fr.fn.name, st.span.line)
            _exec_stmt(s, fr, st)
            return
        if top[0] == "loop":
            fr.kont.append(("stmts", [top[1]]))
            continue
        # scope exit: drop locals in reverse declaration order, then release
        fr.kont.pop()
        s.last_pc = (fr.fn.name, 0)
        _close_scope(s, fr, top)
        return


def _exec_stmt(s: LtsState, fr: Frame, st: Stmt) -> None:
    cenv = s.module.composites
    if isinstance(st, Skip):
        return
    if isinstance(st, Assign):
        if s.surface:
            _implicit_predrop(s, fr, st.place, _top_moves(st.expr))
        v = _eval(s, fr, st.expr)
        b, off, t = _resolve(s, fr, st.place)
        _store_value(s, b, off, t, v)
        _own_dest(s, fr, st.place, t)
        return
    if isinstance(st, AssignBox):
        if s.surface:
            _implicit_predrop(s, fr, st.place, _top_moves(st.expr))
        v = _eval(s, fr, st.expr)
        bt = fr.places.type_of(st.place)
        assert isinstance(bt, BoxType)
        nb = s.memory.alloc(s.layout.sizeof(bt.elem), "heap")
        _store_value(s, nb, 0, bt.elem, v)
        b, off, _ = _resolve(s, fr, st.place)
        s.memory.store(b, off, "ptr", VPtr(nb, 0))
        _own_dest(s, fr, st.place, bt)
        return
    if isinstance(st, AssignVariant):
        if s.surface:
            _implicit_predrop(s, fr, st.place, _top_moves(st.expr))
        v = _eval(s, fr, st.expr) if st.expr is not None else None
        b, off, t = _resolve(s, fr, st.place)
        assert isinstance(t, EnumType)
        s.memory.store(b, off, "i32", VInt32(cenv.variant_index(t.id, st.variant)))
        if v is not None:
            pt = cenv.field_type(t.id, st.variant)
            _store_value(s, b, off + s.layout.payload_offset(t.id), pt, v)
        _own_dest(s, fr, st.place, t)
        return
    if isinstance(st, Call):
        _exec_call(s, fr, st)
        return
    if isinstance(st, If):
        c = _eval(s, fr, st.cond)
        if isinstance(c, VUndef):
            raise _Stuck("undef-use")
        fr.kont.append(("stmts", [st.then if c.b else st.els]))
        return
    if isinstance(st, Loop):
        fr.kont.append(("loop", st.body))
        return
    if isinstance(st, Break):
        while fr.kont:
            top = fr.kont.pop()
            if top[0] == "loop":
                return
            if top[0] == "scope":
                _close_scope(s, fr, top)
        raise RuntimeError("break outside loop")
    if isinstance(st, Continue):
        while fr.kont:
            if fr.kont[-1][0] == "loop":
                return
            top = fr.kont.pop()
            if top[0] == "scope":
                _close_scope(s, fr, top)
        raise RuntimeError("continue outside loop")
    if isinstance(st, Return):
        _exec_return(s, fr, st.place)
        return
    if isinstance(st, Let):
        saved = []
        names = []
        for name, t in st.decls:
            saved.append((name, fr.slots.get(name), fr.places.ctx.get(name)))
            b = s.memory.alloc(s.layout.sizeof(t), "stack")
            fr.slots[name] = (b, t)
            fr.places.ctx[name] = t
            names.append(name)
        fr.kont.append(("scope", names, saved))
        fr.kont.append(("stmts", [st.body]))
        return
    if isinstance(st, Drop):
        exec_drop(s, st.place)
        return
    if isinstance(st, StaticDrop):
        _exec_static_drop(s, fr, st.place)
        return
    if isinstance(st, FlaggedDrop):
        _exec_flagged_drop(s, fr, st.place, st.flag)
        return
    raise TypeError(st)


def _own_dest(s: LtsState, fr: Frame, dest: Place, t: Type) -> None:
    if fr.places.trackable(dest) and owns_resources(s.module.composites, t):
        fr.ownst = fr.places.add_full(fr.ownst, dest)


def _close_scope(s: LtsState, fr: Frame, top) -> None:
    _, names, saved = top
    for name in reversed(names):
        for u in drop_units(s.module.composites, fr.places.ctx, Var(name)):
            exec_drop(s, u)
    for name, old_slot, old_ty in reversed(saved):
        b, _ = fr.slots[name]
        s.memory.free(b)
        if old_slot is None:
            del fr.slots[name]
            del fr.places.ctx[name]
        else:
            fr.slots[name] = old_slot
            fr.places.ctx[name] = old_ty
    fr.ownst = frozenset(q for q in fr.ownst if place_root(q) in fr.slots)


def _exec_call(s: LtsState, fr: Frame, st: Call) -> None:
    callee = s.module.get_fn(st.callee)
    if callee is None:
        raise RuntimeError(f"unknown callee {st.callee!r}")
    if s.surface and st.dest is not None:
        moves = [p for a in st.args for p in _top_moves(a)]
        _implicit_predrop(s, fr, st.dest, moves)
    args = [_eval(s, fr, a) for a in st.args]
    if isinstance(callee, ExternFn):
        q = Query(st.callee, fn_signature(callee), tuple(args), s.memory)
        s.mode = "awaiting"
        s.pending = (q, st.dest)
        return
    fr.pending_dest = st.dest
    _push_frame(s, callee, args)


def _exec_return(s: LtsState, fr: Frame, place: Optional[Place], implicit: bool = False) -> None:
    if place is None:
        value: Value = UNIT_V
    else:
        b, off, t = _resolve(s, fr, place)
        value = _load_value(s, b, off, t)
        if fr.places.trackable(place) and owns_resources(s.module.composites, t):
            fr.ownst = fr.places.remove_full(fr.ownst, place)
    if not implicit:
        # surface scope and parameter cleanup; explicit IR returns follow
        # drops lowering already placed, so their konts hold no scopes
        while fr.kont:
            top = fr.kont.pop()
            if top[0] == "scope":
                _close_scope(s, fr, top)
        if s.surface:
            for name, _ in reversed(fr.fn.params):
                for u in drop_units(s.module.composites, fr.places.ctx, Var(name)):
                    exec_drop(s, u)
    for b, _ in fr.slots.values():
        s.memory.free(b)
    s.frames.pop()
    if not s.frames:
        s.mode = "final"
        s.reply = Reply(value, s.memory)
        return
    caller = s.top
    dest = caller.pending_dest
    caller.pending_dest = None
    if dest is not None:
        b, off, t = _resolve(s, caller, dest)
        _store_value(s, b, off, t, value)
        _own_dest(s, caller, dest, t)


def resume(s: LtsState, r: Reply) -> LtsState:
    """Feed the reply to the pending outgoing query back in."""
    if s.mode != "awaiting":
        raise ValueError(f"resume on {s.mode} state")
    q, dest = s.pending
    s.pending = None
    s.memory = r.memory
    _, ret = q.sig
    if not decodes_at(r.value, ret):
        s.mode = "stuck"
        s.reason = "bad-reply"
        return s
    s.mode = "running"
    if dest is not None:
        fr = s.top
        try:
            b, off, t = _resolve(s, fr, dest)
            _store_value(s, b, off, t, r.value)
        except MemFault as e:
            s.mode = "memerr"
            s.err = e.err
            return s
        except _Stuck as e:
            s.mode = "stuck"
            s.reason = e.reason
            return s
        _own_dest(s, fr, dest, t)
    return s


# ---------------------------------------------------------------------------
# Driver


Host = Mapping[str, Callable[[list, Memory], tuple[Value, Memory]]]


@dataclass
class Outcome:
    kind: str  # "final" | "stuck" | "memerr" | "fuel"
    state: LtsState
    reply: Optional[Reply] = None
    reason: Optional[str] = None
    err: Optional[MemErr] = None
    ret: Optional[Type] = None  # declared return type of the queried function

    @property
    def live_heap(self) -> list[int]:
        """All heap blocks still allocated, including the reply's own."""
        return self.state.memory.leaked_heap_blocks()


def leak_report(out: Outcome) -> list[int]:
    """Live heap blocks nobody owns: on a final outcome the reply's
    footprint is the caller's to free, so it does not count."""
    live = set(out.state.memory.leaked_heap_blocks())
    if out.kind == "final" and out.ret is not None:
        try:
            fp = footprint(out.state.memory, out.state.layout, out.ret, out.reply.value)
            live -= set(fp)
        except IllFormed:
            pass  # a malformed reply owns nothing it can prove
    return sorted(live)


def run(mod: Module, q: Query, host: Host, fuel: int,
        trace: Optional[list] = None) -> Outcome:
    """Drive a query to completion, answering outgoing queries from `host`
    (name -> callable(args, memory) -> (value, memory)). Stops after `fuel`
    transitions. With `trace`, appends one dict per transition: kind
    (internal/query/reply/final), pc, the top frame's ownership state, and
    the memory operations performed."""
    assert fuel > 0
    s = init_lts(mod, q)
    if s is None:
        raise ValueError(f"{q.callee!r} cannot receive queries")
    logging = trace is not None
    if logging:
        s.memory.log = []
        _trace(trace, s, "internal")
    while fuel > 0:
        if s.mode == "running":
            step(s)
            fuel -= 1
            if logging:
                _trace(trace, s, _kind_of(s))
        elif s.mode == "awaiting":
            pending_q, _ = s.pending
            fn = host.get(pending_q.callee)
            if fn is None:
                raise ValueError(f"no host function for {pending_q.callee!r}")
            value, mem = fn(list(pending_q.args), pending_q.memory)
            resume(s, Reply(value, mem))
            fuel -= 1
            if logging:
                _trace(trace, s, "reply")
        else:
            break
    ret = q.sig[1]
    if s.mode == "final":
        return Outcome("final", s, reply=s.reply, ret=ret)
    if s.mode == "stuck":
        return Outcome("stuck", s, reason=s.reason, ret=ret)
    if s.mode == "memerr":
        return Outcome("memerr", s, err=s.err, ret=ret)
    return Outcome("fuel", s, ret=ret)


def _kind_of(s: LtsState) -> str:
    if s.mode == "awaiting":
        return "query"
    if s.mode == "final":
        return "final"
    return "internal"


def _trace(out: list, s: LtsState, kind: str) -> None:
    delta, s.memory.log = s.memory.log, []
    ownst = sorted(place_str(p) for p in s.top.ownst) if s.frames else []
    out.append({
        "kind": kind,
        "pc": list(s.last_pc),
        "ownst": ownst,
        "memdelta": [list(e) for e in delta],
    })


# ---------------------------------------------------------------------------
# State well-formedness helpers (used by tests and the link monitor)


def ownst_disjoint(S) -> bool:
    """No place in S claims bytes another claims: one may extend another
    only across a deref (the pointee lives in a different block)."""
    for p in S:
        for q in S:
            if p != q and _extends_without_deref(p, q):
                return False
    return True


def _extends_without_deref(a: Place, b: Place) -> bool:
    """b strictly extends a and no step between them crosses a deref."""
    if a == b:
        return False
    cur = b
    crossed = False
    while cur != a:
        if isinstance(cur, Var):
            return False
        if isinstance(cur, Deref):
            crossed = True
        cur = cur.base
    return not crossed
