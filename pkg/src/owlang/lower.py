"""Lowering: surface modules to scope-free IR with explicit drops.

Let scopes disappear: locals are hoisted to the function frame (shadowing
is rejected upstream, sibling binders get renamed), and every place that
owns resources receives Drop statements at the points where its value
would otherwise be lost:

  - before a reassignment, unless the statement's own moves consume the
    destination (then the old value has a new owner and must not be freed);
  - at scope exit, in reverse declaration order, struct fields expanded to
    their resource leaves in field order;
  - on every Return / Break / Continue path, returns excluding anything
    the returned place covers.

A first-assignment pass skips drops for locals that cannot have been
initialized yet, so straight-line initialization stays drop-free. Drops in
the IR dialect are still dynamic (they free whatever the ownership state
says is owned); elaboration later commits them to unconditional or flagged
form.
"""

from __future__ import annotations

from .ast import (
    Assign, AssignBox, AssignVariant, BoxType, Break, Call, Continue, Deref,
    Downcast, Drop, EnumType, ExternFn, Expr, Field, If, InternalFn, Let,
    Loop, Module, Move, Place, ReadPlace, Return, Seq, Skip, StaticDrop,
    Stmt, StructType, Type, Var, FlaggedDrop, is_prefix, owns_resources,
    place_root, seq, type_of_place,
)


def drop_units(cenv, ctx, p: Place) -> list[Place]:
    """Expand a place into the leaf places a drop must free.

    Structs split into their resource-owning fields recursively; boxes and
    enums are atomic units.
    """
    t = type_of_place(cenv, ctx, p)
    return _units_of(cenv, ctx, p, t)


def _units_of(cenv, ctx, p: Place, t: Type) -> list[Place]:
    if isinstance(t, StructType):
        out = []
        for lbl, ft in cenv[t.id].fields:
            if owns_resources(cenv, ft):
                out.extend(_units_of(cenv, ctx, Field(p, lbl), ft))
        return out
    if isinstance(t, (BoxType, EnumType)) and owns_resources(cenv, t):
        return [p]
    return []


def is_ir_module(m: Module) -> bool:
    """Heuristic dialect check: hoisted locals or any drop marks IR."""
    for f in m.internal_functions():
        if f.locals:
            return True
        if _has_drop(f.body):
            return True
    return False


def _has_drop(s: Stmt) -> bool:
    if isinstance(s, (Drop, StaticDrop, FlaggedDrop)):
        return True
    if isinstance(s, Seq):
        return any(_has_drop(x) for x in s.stmts)
    if isinstance(s, Let):
        return _has_drop(s.body)
    if isinstance(s, If):
        return _has_drop(s.then) or _has_drop(s.els)
    if isinstance(s, Loop):
        return _has_drop(s.body)
    return False


def lower(m: Module) -> Module:
    """Surface -> IR. Already-lowered modules pass through unchanged."""
    if is_ir_module(m):
        return m
    fns = {}
    for name, f in m.functions.items():
        if isinstance(f, ExternFn):
            fns[name] = f
        else:
            fns[name] = _LowerFn(m.composites, f).run()
    return Module(m.name, m.composites, fns, m.file)


class _LowerFn:
    def __init__(self, cenv, fn: InternalFn):
        self.cenv = cenv
        self.fn = fn
        self.ctx: dict[str, Type] = dict(fn.params)
        self.locals: list[tuple[str, Type]] = []
        self.scopes: list = []  # "loop" markers or lists of local names
        # places possibly written so far; params arrive initialized
        self.touched: set[Place] = {Var(n) for n, _ in fn.params}

    def run(self) -> InternalFn:
        body = seq(self.stmt(self.fn.body))
        return InternalFn(self.fn.name, self.fn.params, self.fn.ret,
                          tuple(self.locals), body, self.fn.span)

    # -- helpers --------------------------------------------------------------

    def fresh_local(self, name: str, t: Type) -> str:
        if name not in self.ctx:
            self.ctx[name] = t
            self.locals.append((name, t))
            return name
        if self.ctx[name] == t:
            return name  # sibling scope reusing an identical slot
        n = 2
        while f"{name}__{n}" in self.ctx:
            n += 1
        fresh = f"{name}__{n}"
        self.ctx[fresh] = t
        self.locals.append((fresh, t))
        return fresh

    def drops_for(self, names, exclude: Place = None) -> list[Stmt]:
        out = []
        for name in names:
            for u in drop_units(self.cenv, self.ctx, Var(name)):
                if exclude is not None and (is_prefix(u, exclude) or is_prefix(exclude, u)):
                    continue
                out.append(Drop(u))
        return out

    def scope_exit_drops(self, upto_loop: bool, exclude: Place = None) -> list[Stmt]:
        out = []
        for entry in reversed(self.scopes):
            if entry == "loop":
                if upto_loop:
                    return out
                continue
            out.extend(self.drops_for(reversed(entry), exclude))
        if not upto_loop:
            out.extend(self.drops_for(
                reversed([n for n, _ in self.fn.params]), exclude))
        return out

    def predrop(self, dest: Place, moves: list[Place]) -> list[Stmt]:
        t = type_of_place(self.cenv, self.ctx, dest)
        if not owns_resources(self.cenv, t):
            return []
        out = []
        for u in drop_units(self.cenv, self.ctx, dest):
            if not any(_overlap(tp, u) for tp in self.touched):
                continue  # this leaf cannot have been initialized yet
            if any(_overlap(mv, u) for mv in moves):
                continue  # the old value is being moved away, not lost
            out.append(Drop(u))
        return out

    # -- statement walk --------------------------------------------------------

    def stmt(self, s: Stmt) -> list[Stmt]:
        if isinstance(s, Skip):
            return []
        if isinstance(s, Seq):
            out = []
            for sub in s.stmts:
                out.extend(self.stmt(sub))
            return out
        if isinstance(s, Let):
            renames = {}
            names = []
            for name, t in s.decls:
                fresh = self.fresh_local(name, t)
                if fresh != name:
                    renames[name] = fresh
                names.append(fresh)
            body = _rename(s.body, renames) if renames else s.body
            self.scopes.append(names)
            out = self.stmt(body)
            self.scopes.pop()
            if not _exits(seq(out)):
                out.extend(self.drops_for(reversed(names)))
            return out
        if isinstance(s, (Assign, AssignBox)):
            pre = self.predrop(s.place, _move_places(s.expr))
            self.touched.add(_strip_spans(s.place))
            return pre + [s]
        if isinstance(s, AssignVariant):
            moves = _move_places(s.expr) if s.expr is not None else []
            pre = self.predrop(s.place, moves)
            self.touched.add(_strip_spans(s.place))
            return pre + [s]
        if isinstance(s, Call):
            moves = [p for a in s.args for p in _move_places(a)]
            pre = []
            if s.dest is not None:
                pre = self.predrop(s.dest, moves)
                self.touched.add(_strip_spans(s.dest))
            return pre + [s]
        if isinstance(s, If):
            saved = set(self.touched)
            then = seq(self.stmt(s.then))
            after_then = self.touched
            self.touched = saved
            els = seq(self.stmt(s.els))
            self.touched = self.touched | after_then
            return [If(s.cond, then, els, s.span)]
        if isinstance(s, Loop):
            self.touched |= _assigned_places(s.body)
            self.scopes.append("loop")
            body = seq(self.stmt(s.body))
            self.scopes.pop()
            return [Loop(body, s.span)]
        if isinstance(s, Break):
            return self.scope_exit_drops(upto_loop=True) + [s]
        if isinstance(s, Continue):
            return self.scope_exit_drops(upto_loop=True) + [s]
        if isinstance(s, Return):
            return self.scope_exit_drops(upto_loop=False, exclude=s.place) + [s]
        if isinstance(s, (Drop, StaticDrop, FlaggedDrop)):
            return [s]
        raise TypeError(s)


def _move_places(e: Expr) -> list[Place]:
    return [e.place] if isinstance(e, Move) else []


def _assigned_places(s: Stmt) -> set:
    out = set()

    def walk(s):
        if isinstance(s, Seq):
            for x in s.stmts:
                walk(x)
        elif isinstance(s, Let):
            walk(s.body)
        elif isinstance(s, If):
            walk(s.then)
            walk(s.els)
        elif isinstance(s, Loop):
            walk(s.body)
        elif isinstance(s, (Assign, AssignBox, AssignVariant)):
            out.add(_strip_spans(s.place))
        elif isinstance(s, Call) and s.dest is not None:
            out.add(_strip_spans(s.dest))

    walk(s)
    return out


def _overlap(a: Place, b: Place) -> bool:
    return is_prefix(a, b) or is_prefix(b, a)


def _strip_spans(p: Place) -> Place:
    if isinstance(p, Var):
        return Var(p.name)
    if isinstance(p, Deref):
        return Deref(_strip_spans(p.base))
    if isinstance(p, Field):
        return Field(_strip_spans(p.base), p.label)
    if isinstance(p, Downcast):
        return Downcast(_strip_spans(p.base), p.variant)
    raise TypeError(p)


def _exits(s: Stmt) -> bool:
    """Control cannot fall out of the end of s."""
    if isinstance(s, (Return, Break, Continue)):
        return True
    if isinstance(s, Seq):
        return bool(s.stmts) and _exits(s.stmts[-1])
    if isinstance(s, If):
        return _exits(s.then) and _exits(s.els)
    if isinstance(s, Let):
        return _exits(s.body)
    return False


def _rename(s: Stmt, sub: dict) -> Stmt:
    """Rename free variables in a statement (used for hoist collisions)."""

    def rp(p: Place) -> Place:
        if isinstance(p, Var):
            return Var(sub.get(p.name, p.name), p.span)
        if isinstance(p, Deref):
            return Deref(rp(p.base), p.span)
        if isinstance(p, Field):
            return Field(rp(p.base), p.label, p.span)
        if isinstance(p, Downcast):
            return Downcast(rp(p.base), p.variant, p.span)
        raise TypeError(p)

    def re_(e):
        if e is None or isinstance(e, type(None)):
            return e
        from .ast import Binary, CheckTag, Const, Unary
        if isinstance(e, Const):
            return e
        if isinstance(e, ReadPlace):
            return ReadPlace(rp(e.place), e.span)
        if isinstance(e, Move):
            return Move(rp(e.place), e.span)
        if isinstance(e, CheckTag):
            return CheckTag(rp(e.place), e.variant, e.span)
        if isinstance(e, Unary):
            return Unary(e.op, re_(e.operand), e.span)
        if isinstance(e, Binary):
            return Binary(e.op, re_(e.left), re_(e.right), e.span)
        raise TypeError(e)

    def rs(s: Stmt) -> Stmt:
        if isinstance(s, Skip):
            return s
        if isinstance(s, Seq):
            return Seq(tuple(rs(x) for x in s.stmts), s.span)
        if isinstance(s, Let):
            inner = {k: v for k, v in sub.items() if k not in {n for n, _ in s.decls}}
            return Let(s.decls, _rename(s.body, inner) if inner else s.body, s.span)
        if isinstance(s, Assign):
            return Assign(rp(s.place), re_(s.expr), s.span)
        if isinstance(s, AssignBox):
            return AssignBox(rp(s.place), re_(s.expr), s.span)
        if isinstance(s, AssignVariant):
            return AssignVariant(rp(s.place), s.enum_id, s.variant,
                                 re_(s.expr) if s.expr is not None else None, s.span)
        if isinstance(s, Call):
            dest = rp(s.dest) if s.dest is not None else None
            return Call(dest, s.callee, tuple(re_(a) for a in s.args), s.span)
        if isinstance(s, If):
            return If(re_(s.cond), rs(s.then), rs(s.els), s.span)
        if isinstance(s, Loop):
            return Loop(rs(s.body), s.span)
        if isinstance(s, (Break, Continue)):
            return s
        if isinstance(s, Return):
            return Return(rp(s.place) if s.place is not None else None, s.span)
        if isinstance(s, Drop):
            return Drop(rp(s.place), s.span)
        if isinstance(s, StaticDrop):
            return StaticDrop(rp(s.place), s.span)
        if isinstance(s, FlaggedDrop):
            return FlaggedDrop(rp(s.place), sub.get(s.flag, s.flag), s.span)
        raise TypeError(s)

    return rs(s)
