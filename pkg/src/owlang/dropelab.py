"""Drop elaboration: turning dynamically-gated drops into static code.

The ownership analyses classify every drop target as certainly owned,
certainly not owned, or path-dependent. The first two become StaticDrop or
disappear; the rest get an i32 flag local (`__df_<place>`) that is zeroed
in a function prologue, set after every statement granting ownership of the
place, and cleared after every statement taking it away. A FlaggedDrop
consumes its flag when it fires, so re-entrant paths (loops) stay exact.

init_analysis exposes the underlying facts as Owned/Unowned sets per
program point: Owned over-approximates ownership, Unowned over-approximates
its absence, and every trackable resource place lands in at least one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

from .ast import (
    Assign, AssignBox, AssignVariant, BoxType, Call, Const, Deref, Downcast,
    Drop, EnumType, ExternFn, Field, FlaggedDrop, I32, If, InternalFn, Let,
    Loop, Module, Place, Return, Seq, Skip, StaticDrop, Stmt, StructType,
    Var, is_prefix, owns_resources, place_str, seq,
)
from .owncheck import (
    BOTTOM, Cfg, Places, _Checker, _expr_reads_moves, analyze, build_cfg,
    may_analyze, _may_own,
)


@dataclass(frozen=True)
class InitState:
    owned: frozenset    # places that may hold ownership here
    unowned: frozenset  # places that may lack ownership here


def enumerate_places(U: Places) -> list[Place]:
    """Every trackable resource-owning place of the function, finitely:
    roots, struct fields, enum variant views, and the single box-param hop."""
    out: list[Place] = []

    def expand(p: Place):
        if not U.resource(p):
            return
        out.append(p)
        t = U.type_of(p)
        if isinstance(t, StructType):
            for lbl, _ in U.cenv[t.id].fields:
                expand(Field(p, lbl))
        elif isinstance(t, EnumType):
            for v, vt in U.cenv[t.id].fields:
                if owns_resources(U.cenv, vt):
                    expand(Downcast(p, v))
        elif isinstance(t, BoxType):
            hop = Deref(p)
            if U.trackable(hop):
                expand(hop)

    for n, _ in list(U.fn.params) + list(U.fn.locals):
        expand(Var(n))
    return out


def init_analysis(cenv, fn: InternalFn, cfg: Optional[Cfg] = None) -> dict:
    """Owned/Unowned pair at each label; BOTTOM for unreachable points."""
    cfg = cfg or build_cfg(fn)
    U = Places(cenv, fn)
    must = analyze(cenv, fn, cfg)
    may = may_analyze(cenv, fn, cfg)
    universe = enumerate_places(U)
    out = {}
    for label, st in must.items():
        if st is BOTTOM:
            out[label] = BOTTOM
            continue
        owned = frozenset(p for p in universe if _may_own(U, may[label], p))
        unowned = frozenset(p for p in universe if not U.covered(st, p))
        out[label] = InitState(owned, unowned)
    return out


# ---------------------------------------------------------------------------
# Rewriting


def mangle(p: Place) -> str:
    if isinstance(p, Var):
        return p.name
    if isinstance(p, Field):
        return f"{mangle(p.base)}_{p.label}"
    if isinstance(p, Deref):
        return f"d_{mangle(p.base)}"
    if isinstance(p, Downcast):
        return f"{mangle(p.base)}_as_{p.variant}"
    raise TypeError(p)


def _has_plain_drop(s: Stmt) -> bool:
    if isinstance(s, Drop):
        return True
    if isinstance(s, Seq):
        return any(_has_plain_drop(x) for x in s.stmts)
    if isinstance(s, If):
        return _has_plain_drop(s.then) or _has_plain_drop(s.els)
    if isinstance(s, Loop):
        return _has_plain_drop(s.body)
    if isinstance(s, Let):
        return _has_plain_drop(s.body)
    return False


class _ElabFn:
    def __init__(self, cenv, fn: InternalFn):
        self.cenv = cenv
        self.fn = fn
        self.checker = _Checker(cenv, fn)
        # classification per drop statement object, in label order
        self.actions: dict[int, str] = {}
        self.flags: dict[Place, str] = {}
        taken = {n for n, _ in fn.params} | {n for n, _ in fn.locals}
        for node in self.checker.cfg:
            if node.kind != "drop" or not isinstance(node.stmt, Drop):
                continue
            cls = self.checker.classify_drop(node.label, node.stmt.place)
            self.actions[id(node.stmt)] = cls
            if cls == "flagged" and node.stmt.place not in self.flags:
                base = f"__df_{mangle(node.stmt.place)}"
                name, i = base, 2
                while name in taken:
                    name = f"{base}_{i}"
                    i += 1
                taken.add(name)
                self.flags[node.stmt.place] = name

    def run(self) -> InternalFn:
        body = self.walk(self.fn.body)
        if self.flags:
            prologue = [Assign(Var(f), Const(0, I32)) for f in self.flags.values()]
            body = seq(prologue + [body])
        locals_ = tuple(self.fn.locals) + tuple(
            (f, I32) for f in self.flags.values())
        return InternalFn(self.fn.name, self.fn.params, self.fn.ret,
                          locals_, body, self.fn.span)

    # -- flag updates ---------------------------------------------------------

    def updates_after(self, s: Stmt) -> list[Stmt]:
        """Flag writes reflecting the net ownership effect of one statement."""
        moves: list[Place] = []
        dest: Optional[Place] = None
        if isinstance(s, (Assign, AssignBox)):
            _, moves, _ = _expr_reads_moves(s.expr)
            dest = s.place
        elif isinstance(s, AssignVariant):
            if s.expr is not None:
                _, moves, _ = _expr_reads_moves(s.expr)
            dest = s.place
        elif isinstance(s, Call):
            for a in s.args:
                _, m, _ = _expr_reads_moves(a)
                moves.extend(m)
            dest = s.dest
        elif isinstance(s, StaticDrop):
            moves = [s.place]
        out = []
        for p, flag in self.flags.items():
            if dest is not None and is_prefix(dest, p):
                out.append(Assign(Var(flag), Const(1, I32)))
            elif any(is_prefix(mp, p) for mp in moves):
                out.append(Assign(Var(flag), Const(0, I32)))
        return out

    # -- structure ------------------------------------------------------------

    def walk(self, s: Stmt) -> Stmt:
        if isinstance(s, Seq):
            return seq([self.walk(x) for x in s.stmts])
        if isinstance(s, If):
            return If(s.cond, self.walk(s.then), self.walk(s.els), s.span)
        if isinstance(s, Loop):
            return Loop(self.walk(s.body), s.span)
        if isinstance(s, Drop):
            act = self.actions.get(id(s))
            if act == "dead":
                return Skip()
            if act == "flagged":
                return FlaggedDrop(s.place, self.flags[s.place], s.span)
            # "static"; "mixed" cannot reach elaboration (check_module gate)
            new = StaticDrop(s.place, s.span)
            ups = self.updates_after(new)
            return seq([new] + ups) if ups else new
        ups = self.updates_after(s)
        return seq([s] + ups) if ups else s


def elaborate(m: Module) -> Module:
    """Rewrite every plain Drop into StaticDrop / nothing / FlaggedDrop.

    Requires a lowered module that passed check_module. Already-elaborated
    modules pass through unchanged.
    """
    fns = {}
    changed = False
    for name, f in m.functions.items():
        if isinstance(f, ExternFn) or not _has_plain_drop(f.body):
            fns[name] = f
            continue
        fns[name] = _ElabFn(m.composites, f).run()
        changed = True
    if not changed:
        return m
    return Module(m.name, m.composites, fns, m.file)
