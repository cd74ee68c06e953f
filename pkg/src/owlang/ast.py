"""Abstract syntax for Owlang and Owl-IR.

Types, places, expressions, statements, the composite environment, and the
structural well-formedness checks shared by every pass. Values here are
immutable; passes build new trees instead of mutating.

Dialects: surface modules contain Let scopes and no drop statements; lowered
IR has hoisted locals and explicit Drop; elaborated IR replaces Drop with
StaticDrop / FlaggedDrop.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Union


# ---------------------------------------------------------------------------
# Source positions and diagnostics


@dataclass(frozen=True)
class Span:
    line: int = 0
    col: int = 0


NOSPAN = Span()


@dataclass(frozen=True)
class Diagnostic:
    """A compiler diagnostic with a stable code.

    Codes: PARxxx parse, WFxxx well-formedness, OWNxxx ownership check,
    CGxxx C generation.
    """

    code: str
    message: str
    file: str = "<input>"
    line: int = 0
    col: int = 0

    def to_json(self) -> dict:
        return {
            "code": self.code,
            "message": self.message,
            "file": self.file,
            "line": self.line,
            "col": self.col,
        }

    def render(self) -> str:
        return f"{self.file}:{self.line}:{self.col}: error[{self.code}]: {self.message}"


# ---------------------------------------------------------------------------
# Types


@dataclass(frozen=True)
class BaseType:
    name: str  # unit | bool | i32 | f32

    def __str__(self) -> str:
        return self.name


@dataclass(frozen=True)
class BoxType:
    elem: "Type"

    def __str__(self) -> str:
        return f"Box<{self.elem}>"


@dataclass(frozen=True)
class StructType:
    id: str

    def __str__(self) -> str:
        return self.id


@dataclass(frozen=True)
class EnumType:
    id: str

    def __str__(self) -> str:
        return self.id


@dataclass(frozen=True)
class FnType:
    params: tuple["Type", ...]
    ret: "Type"

    def __str__(self) -> str:
        ps = ", ".join(str(p) for p in self.params)
        return f"fn({ps}) -> {self.ret}"


Type = Union[BaseType, BoxType, StructType, EnumType, FnType]

UNIT = BaseType("unit")
BOOL = BaseType("bool")
I32 = BaseType("i32")
F32 = BaseType("f32")

BASE_TYPES = {"unit": UNIT, "bool": BOOL, "i32": I32, "f32": F32}


def is_copy_type(t: Type) -> bool:
    """Base types are the copy types; everything else moves."""
    return isinstance(t, (BaseType, FnType))


# ---------------------------------------------------------------------------
# Composite environment


@dataclass(frozen=True)
class CompositeDef:
    kind: str  # "struct" | "enum"
    fields: tuple[tuple[str, Type], ...]  # struct fields or enum variants


class CompositeEnv:
    """Maps struct/enum identifiers to their field lists.

    Recursion between composites is allowed only under Box, so sizes stay
    finite; wf_module enforces that.
    """

    def __init__(self, defs: Optional[dict[str, CompositeDef]] = None):
        self.defs: dict[str, CompositeDef] = dict(defs or {})
        self._owns_cache: dict[str, bool] = {}

    def __contains__(self, name: str) -> bool:
        return name in self.defs

    def __getitem__(self, name: str) -> CompositeDef:
        return self.defs[name]

    def get(self, name: str) -> Optional[CompositeDef]:
        return self.defs.get(name)

    def add(self, name: str, kind: str, fields: list[tuple[str, Type]]) -> None:
        self.defs[name] = CompositeDef(kind, tuple(fields))
        self._owns_cache.clear()

    def field_type(self, name: str, label: str) -> Optional[Type]:
        d = self.defs.get(name)
        if d is None:
            return None
        for lbl, t in d.fields:
            if lbl == label:
                return t
        return None

    def variant_index(self, name: str, label: str) -> Optional[int]:
        d = self.defs.get(name)
        if d is None or d.kind != "enum":
            return None
        for i, (lbl, _) in enumerate(d.fields):
            if lbl == label:
                return i
        return None

    def items(self):
        return self.defs.items()


# ---------------------------------------------------------------------------
# Places


@dataclass(frozen=True)
class Var:
    name: str
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class Deref:
    base: "Place"
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class Field:
    base: "Place"
    label: str
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class Downcast:
    base: "Place"
    variant: str
    span: Span = field(default=NOSPAN, compare=False)


Place = Union[Var, Deref, Field, Downcast]


def place_str(p: Place) -> str:
    if isinstance(p, Var):
        return p.name
    if isinstance(p, Deref):
        return f"*{place_str(p.base)}"
    if isinstance(p, Field):
        return f"{place_str(p.base)}.{p.label}"
    if isinstance(p, Downcast):
        return f"({place_str(p.base)} as {p.variant})"
    raise TypeError(p)


def place_root(p: Place) -> str:
    while not isinstance(p, Var):
        p = p.base
    return p.name


def place_span(p: Place) -> Span:
    return p.span


def is_prefix(a: Place, b: Place) -> bool:
    """True iff a equals b or a is a proper prefix of b's access path."""
    while True:
        if a == b:
            return True
        if isinstance(b, Var):
            return False
        b = b.base


class TypedPlaceError(Exception):
    def __init__(self, msg: str, span: Span = NOSPAN):
        super().__init__(msg)
        self.span = span


def type_of_place(cenv: CompositeEnv, ctx: dict[str, Type], p: Place) -> Type:
    """The unique type of a place; raises TypedPlaceError on ill-typed bases."""
    if isinstance(p, Var):
        t = ctx.get(p.name)
        if t is None:
            raise TypedPlaceError(f"unknown variable '{p.name}'", p.span)
        return t
    if isinstance(p, Deref):
        bt = type_of_place(cenv, ctx, p.base)
        if not isinstance(bt, BoxType):
            raise TypedPlaceError(
                f"cannot dereference non-Box place '{place_str(p.base)}' of type {bt}", p.span
            )
        return bt.elem
    if isinstance(p, Field):
        bt = type_of_place(cenv, ctx, p.base)
        if not isinstance(bt, StructType):
            raise TypedPlaceError(
                f"field access on non-struct place '{place_str(p.base)}' of type {bt}", p.span
            )
        ft = cenv.field_type(bt.id, p.label)
        if ft is None:
            raise TypedPlaceError(f"struct {bt.id} has no field '{p.label}'", p.span)
        return ft
    if isinstance(p, Downcast):
        bt = type_of_place(cenv, ctx, p.base)
        if not isinstance(bt, EnumType):
            raise TypedPlaceError(
                f"downcast on non-enum place '{place_str(p.base)}' of type {bt}", p.span
            )
        pt = cenv.field_type(bt.id, p.variant)
        if pt is None:
            raise TypedPlaceError(f"enum {bt.id} has no variant '{p.variant}'", p.span)
        return pt
    raise TypeError(p)


def owns_resources(cenv: CompositeEnv, t: Type) -> bool:
    """True iff t transitively contains a Box constructor."""
    if isinstance(t, BoxType):
        return True
    if isinstance(t, (BaseType, FnType)):
        return False
    name = t.id
    cached = cenv._owns_cache.get(name)
    if cached is not None:
        return cached
    d = cenv.get(name)
    if d is None:
        return False
    # Recursion through composites only happens under non-Box fields, which
    # wf_module keeps acyclic; seed False to be safe against bad input.
    cenv._owns_cache[name] = False
    result = any(owns_resources(cenv, ft) for _, ft in d.fields)
    cenv._owns_cache[name] = result
    return result


def place_children(cenv: CompositeEnv, ctx: dict[str, Type], p: Place) -> list[Place]:
    """Resource-owning field expansions of a struct-typed place.

    Enums split only through an explicit downcast; Box and base types have
    no children.
    """
    t = type_of_place(cenv, ctx, p)
    if not isinstance(t, StructType):
        return []
    d = cenv.get(t.id)
    if d is None:
        return []
    return [Field(p, lbl) for lbl, ft in d.fields if owns_resources(cenv, ft)]


# ---------------------------------------------------------------------------
# Expressions


@dataclass(frozen=True)
class Const:
    value: object  # int | float | bool | None (unit)
    type: Type
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class ReadPlace:
    place: Place
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class Unary:
    op: str  # "-" | "!"
    operand: "Expr"
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class Binary:
    op: str  # + - * / % == != < <= > >= && ||
    left: "Expr"
    right: "Expr"
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class CheckTag:
    place: Place
    variant: str
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class Move:
    place: Place
    span: Span = field(default=NOSPAN, compare=False)


Expr = Union[Const, ReadPlace, Unary, Binary, CheckTag, Move]

ARITH_OPS = {"+", "-", "*", "/", "%"}
CMP_OPS = {"==", "!=", "<", "<=", ">", ">="}
BOOL_OPS = {"&&", "||"}


# ---------------------------------------------------------------------------
# Statements


@dataclass(frozen=True)
class Skip:
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class Assign:
    place: Place
    expr: Expr
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class AssignVariant:
    place: Place
    enum_id: str
    variant: str
    expr: Optional[Expr]  # None for unit payloads
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class AssignBox:
    place: Place
    expr: Expr
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class Call:
    dest: Optional[Place]  # None discards a unit result
    callee: str
    args: tuple[Expr, ...]
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class Let:
    decls: tuple[tuple[str, Type], ...]
    body: "Stmt"
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class Seq:
    stmts: tuple["Stmt", ...]
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class If:
    cond: Expr
    then: "Stmt"
    els: "Stmt"
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class Loop:
    body: "Stmt"
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class Break:
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class Continue:
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class Return:
    place: Optional[Place]
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class Drop:
    """IR-only: conditional drop gated by the dynamic ownership state."""

    place: Place
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class StaticDrop:
    """Post-elaboration: unconditional drop."""

    place: Place
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class FlaggedDrop:
    """Post-elaboration: drop gated by an i32 flag local; clears the flag."""

    place: Place
    flag: str
    span: Span = field(default=NOSPAN, compare=False)


Stmt = Union[
    Skip, Assign, AssignVariant, AssignBox, Call, Let, Seq, If, Loop,
    Break, Continue, Return, Drop, StaticDrop, FlaggedDrop,
]


def seq(stmts: list[Stmt]) -> Stmt:
    """Flatten a statement list into Skip / a single stmt / a Seq."""
    flat: list[Stmt] = []
    for s in stmts:
        if isinstance(s, Seq):
            flat.extend(s.stmts)
        elif isinstance(s, Skip):
            continue
        else:
            flat.append(s)
    if not flat:
        return Skip()
    if len(flat) == 1:
        return flat[0]
    return Seq(tuple(flat))


# ---------------------------------------------------------------------------
# Functions and modules


@dataclass(frozen=True)
class InternalFn:
    name: str
    params: tuple[tuple[str, Type], ...]
    ret: Type
    locals: tuple[tuple[str, Type], ...]  # empty in the surface dialect
    body: Stmt
    span: Span = field(default=NOSPAN, compare=False)


@dataclass(frozen=True)
class ExternFn:
    name: str
    params: tuple[tuple[str, Type], ...]
    ret: Type
    span: Span = field(default=NOSPAN, compare=False)


Fn = Union[InternalFn, ExternFn]


@dataclass
class Module:
    name: str
    composites: CompositeEnv
    functions: dict[str, Fn]  # insertion-ordered
    file: str = "<input>"

    def internal_functions(self) -> Iterator[InternalFn]:
        for f in self.functions.values():
            if isinstance(f, InternalFn):
                yield f

    def get_fn(self, name: str) -> Optional[Fn]:
        return self.functions.get(name)


# ---------------------------------------------------------------------------
# Expression typing (shared by wf_module and the parser's move inference)


class ExprTypeError(Exception):
    def __init__(self, msg: str, span: Span = NOSPAN):
        super().__init__(msg)
        self.span = span


def type_of_expr(cenv: CompositeEnv, ctx: dict[str, Type], e: Expr) -> Type:
    if isinstance(e, Const):
        return e.type
    if isinstance(e, ReadPlace):
        return type_of_place(cenv, ctx, e.place)
    if isinstance(e, Move):
        return type_of_place(cenv, ctx, e.place)
    if isinstance(e, CheckTag):
        t = type_of_place(cenv, ctx, e.place)
        if not isinstance(t, EnumType):
            raise ExprTypeError(f"tag test on non-enum place '{place_str(e.place)}'", e.span)
        if cenv.variant_index(t.id, e.variant) is None:
            raise ExprTypeError(f"enum {t.id} has no variant '{e.variant}'", e.span)
        return BOOL
    if isinstance(e, Unary):
        t = type_of_expr(cenv, ctx, e.operand)
        if e.op == "-" and t in (I32, F32):
            return t
        if e.op == "!" and t == BOOL:
            return BOOL
        raise ExprTypeError(f"operator '{e.op}' not defined on {t}", e.span)
    if isinstance(e, Binary):
        lt = type_of_expr(cenv, ctx, e.left)
        rt = type_of_expr(cenv, ctx, e.right)
        if lt != rt:
            raise ExprTypeError(f"operands of '{e.op}' differ: {lt} vs {rt}", e.span)
        if e.op in ARITH_OPS:
            if lt == I32 or (lt == F32 and e.op != "%"):
                return lt
            raise ExprTypeError(f"operator '{e.op}' not defined on {lt}", e.span)
        if e.op in CMP_OPS:
            if lt in (I32, F32) or (lt == BOOL and e.op in ("==", "!=")):
                return BOOL
            raise ExprTypeError(f"cannot compare values of type {lt}", e.span)
        if e.op in BOOL_OPS:
            if lt == BOOL:
                return BOOL
            raise ExprTypeError(f"operator '{e.op}' needs bool operands, got {lt}", e.span)
        raise ExprTypeError(f"unknown operator '{e.op}'", e.span)
    raise TypeError(e)


# ---------------------------------------------------------------------------
# Well-formedness


def _expr_places(e: Expr) -> Iterator[tuple[Place, bool]]:
    """Yield (place, is_move) for every place read in an expression."""
    if isinstance(e, ReadPlace):
        yield e.place, False
    elif isinstance(e, Move):
        yield e.place, True
    elif isinstance(e, CheckTag):
        yield e.place, False
    elif isinstance(e, Unary):
        yield from _expr_places(e.operand)
    elif isinstance(e, Binary):
        yield from _expr_places(e.left)
        yield from _expr_places(e.right)


def _has_nested_move(e: Expr) -> bool:
    """Move may appear only at the top of an expression tree."""
    def nested(x: Expr) -> bool:
        if isinstance(x, Move):
            return True
        if isinstance(x, Unary):
            return nested(x.operand)
        if isinstance(x, Binary):
            return nested(x.left) or nested(x.right)
        return False

    if isinstance(x := e, (Unary, Binary)):
        return nested(x)
    return False


class _WfChecker:
    def __init__(self, m: Module, dialect: str):
        self.m = m
        self.dialect = dialect  # "surface" | "ir" | "elab"
        self.diags: list[Diagnostic] = []

    def err(self, code: str, msg: str, span: Span) -> None:
        self.diags.append(Diagnostic(code, msg, self.m.file, span.line, span.col))

    def check_type(self, t: Type, span: Span) -> None:
        if isinstance(t, BoxType):
            self.check_type(t.elem, span)
        elif isinstance(t, (StructType, EnumType)):
            d = self.m.composites.get(t.id)
            if d is None:
                self.err("WF001", f"unknown composite type '{t.id}'", span)
            elif isinstance(t, StructType) and d.kind != "struct":
                self.err("WF001", f"'{t.id}' is an enum, not a struct", span)
            elif isinstance(t, EnumType) and d.kind != "enum":
                self.err("WF001", f"'{t.id}' is a struct, not an enum", span)
        elif isinstance(t, FnType):
            for p in t.params:
                self.check_type(p, span)
            self.check_type(t.ret, span)

    def check_composites(self) -> None:
        cenv = self.m.composites
        for name, d in cenv.items():
            labels = [lbl for lbl, _ in d.fields]
            if len(labels) != len(set(labels)):
                self.err("WF002", f"duplicate field label in '{name}'", NOSPAN)
            for _, ft in d.fields:
                self.check_type(ft, NOSPAN)
        # Cycle detection through non-Box fields.
        color: dict[str, int] = {}

        def visit(name: str) -> bool:
            if color.get(name) == 2:
                return True
            if color.get(name) == 1:
                return False
            color[name] = 1
            d = cenv.get(name)
            if d is not None:
                for _, ft in d.fields:
                    for ref in _nonbox_refs(ft):
                        if not visit(ref):
                            color[name] = 2
                            return False
            color[name] = 2
            return True

        def _nonbox_refs(t: Type) -> list[str]:
            if isinstance(t, (StructType, EnumType)):
                return [t.id]
            return []

        for name in list(cenv.defs):
            if not visit(name):
                self.err("WF003", f"composite '{name}' is recursive without Box", NOSPAN)
                break

    def check_module(self) -> list[Diagnostic]:
        self.check_composites()
        seen: set[str] = set()
        for name, f in self.m.functions.items():
            if name in seen:
                self.err("WF004", f"duplicate function '{name}'", f.span)
            seen.add(name)
            for _, t in f.params:
                self.check_type(t, f.span)
            self.check_type(f.ret, f.span)
            if isinstance(f, InternalFn):
                self.check_fn(f)
        return self.diags

    def check_fn(self, f: InternalFn) -> None:
        ctx: dict[str, Type] = {}
        for n, t in f.params:
            if n in ctx:
                self.err("WF013", f"duplicate parameter '{n}' in '{f.name}'", f.span)
            ctx[n] = t
        for n, t in f.locals:
            if n in ctx:
                self.err("WF013", f"duplicate local '{n}' in '{f.name}'", f.span)
            ctx[n] = t
            self.check_type(t, f.span)
        self.check_stmt(f, f.body, dict(ctx), in_loop=False)

    def place_type(self, ctx: dict[str, Type], p: Place, span: Span) -> Optional[Type]:
        try:
            return type_of_place(self.m.composites, ctx, p)
        except TypedPlaceError as e:
            self.err("WF011", str(e), e.span if e.span != NOSPAN else span)
            return None

    def expr_type(self, ctx: dict[str, Type], e: Expr) -> Optional[Type]:
        if _has_nested_move(e):
            self.err("WF008", "move inside pure expression", e.span)
            return None
        try:
            t = type_of_expr(self.m.composites, ctx, e)
        except (TypedPlaceError, ExprTypeError) as ex:
            self.err("WF011", str(ex), ex.span)
            return None
        # Resource-owning values must move, never silently copy.
        if isinstance(e, ReadPlace) and owns_resources(self.m.composites, t):
            self.err(
                "WF014",
                f"place '{place_str(e.place)}' owns resources and must be moved",
                e.span,
            )
        for pl, is_move in _expr_places(e):
            pt = self.place_type(ctx, pl, e.span)
            if pt is not None and is_move and is_copy_type(pt):
                # Harmless, but the parser never produces it; normalize away.
                pass
        return t

    def check_stmt(self, f: InternalFn, s: Stmt, ctx: dict[str, Type], in_loop: bool) -> None:
        cenv = self.m.composites
        if isinstance(s, Skip):
            return
        if isinstance(s, (Drop, StaticDrop, FlaggedDrop)):
            if self.dialect == "surface":
                self.err("WF010", "drop statements are not surface syntax", s.span)
            elif self.dialect == "ir" and not isinstance(s, Drop):
                self.err("WF010", "elaborated drop in pre-elaboration IR", s.span)
            elif self.dialect == "elab" and isinstance(s, Drop):
                self.err("WF010", "plain drop survived elaboration", s.span)
            if isinstance(s, FlaggedDrop) and ctx.get(s.flag) != I32:
                self.err("WF011", f"drop flag '{s.flag}' is not an i32 local", s.span)
            self.place_type(ctx, s.place, s.span)
            return
        if isinstance(s, Assign):
            pt = self.place_type(ctx, s.place, s.span)
            et = self.expr_type(ctx, s.expr)
            if pt is not None and et is not None and pt != et:
                self.err("WF007", f"assigning {et} to place of type {pt}", s.span)
            return
        if isinstance(s, AssignBox):
            pt = self.place_type(ctx, s.place, s.span)
            et = self.expr_type(ctx, s.expr)
            if pt is not None:
                if not isinstance(pt, BoxType):
                    self.err("WF015", f"Box(...) assigned to non-Box place of type {pt}", s.span)
                elif et is not None and pt.elem != et:
                    self.err("WF007", f"Box payload has type {et}, expected {pt.elem}", s.span)
            return
        if isinstance(s, AssignVariant):
            pt = self.place_type(ctx, s.place, s.span)
            if pt is not None and (not isinstance(pt, EnumType) or pt.id != s.enum_id):
                self.err("WF016", f"variant of '{s.enum_id}' assigned to place of type {pt}", s.span)
            payload = cenv.field_type(s.enum_id, s.variant)
            if s.enum_id not in cenv or payload is None:
                self.err("WF016", f"unknown variant '{s.enum_id}::{s.variant}'", s.span)
                return
            if payload == UNIT:
                if s.expr is not None:
                    et = self.expr_type(ctx, s.expr)
                    if et != UNIT:
                        self.err("WF007", f"variant '{s.variant}' takes no payload", s.span)
            else:
                if s.expr is None:
                    self.err("WF007", f"variant '{s.variant}' needs a payload", s.span)
                else:
                    et = self.expr_type(ctx, s.expr)
                    if et is not None and et != payload:
                        self.err("WF007", f"payload has type {et}, expected {payload}", s.span)
            return
        if isinstance(s, Call):
            callee = self.m.functions.get(s.callee)
            if callee is None:
                self.err("WF005", f"call to unknown function '{s.callee}'", s.span)
                return
            if len(s.args) != len(callee.params):
                self.err(
                    "WF006",
                    f"'{s.callee}' takes {len(callee.params)} arguments, got {len(s.args)}",
                    s.span,
                )
            for a, (_, pt) in zip(s.args, callee.params):
                at = self.expr_type(ctx, a)
                if at is not None and at != pt:
                    self.err("WF006", f"argument has type {at}, expected {pt}", s.span)
            if s.dest is not None:
                dt = self.place_type(ctx, s.dest, s.span)
                if dt is not None and dt != callee.ret:
                    self.err("WF007", f"'{s.callee}' returns {callee.ret}, stored into {dt}", s.span)
            elif callee.ret != UNIT:
                self.err("WF007", f"discarded non-unit result of '{s.callee}'", s.span)
            return
        if isinstance(s, Let):
            if self.dialect != "surface":
                self.err("WF012", "let scope in lowered IR", s.span)
            inner = dict(ctx)
            for n, t in s.decls:
                if n in inner:
                    self.err("WF013", f"shadowing declaration of '{n}'", s.span)
                self.check_type(t, s.span)
                inner[n] = t
            self.check_stmt(f, s.body, inner, in_loop)
            return
        if isinstance(s, Seq):
            for sub in s.stmts:
                self.check_stmt(f, sub, ctx, in_loop)
            return
        if isinstance(s, If):
            ct = self.expr_type(ctx, s.cond)
            if ct is not None and ct != BOOL:
                self.err("WF017", f"if condition has type {ct}, expected bool", s.span)
            self.check_stmt(f, s.then, ctx, in_loop)
            self.check_stmt(f, s.els, ctx, in_loop)
            return
        if isinstance(s, Loop):
            self.check_stmt(f, s.body, ctx, True)
            return
        if isinstance(s, (Break, Continue)):
            if not in_loop:
                self.err("WF009", "break/continue outside loop", s.span)
            return
        if isinstance(s, Return):
            if s.place is None:
                if f.ret != UNIT:
                    self.err("WF018", f"'{f.name}' must return {f.ret}", s.span)
            else:
                pt = self.place_type(ctx, s.place, s.span)
                if pt is not None and pt != f.ret:
                    self.err("WF018", f"returning {pt} from function returning {f.ret}", s.span)
            return
        raise TypeError(s)


def wf_module(m: Module, dialect: str = "surface") -> list[Diagnostic]:
    """Structural well-formedness; empty list iff the module is clean.

    dialect selects which drop forms are legal: "surface" forbids all drops
    and allows Let; "ir" allows Drop; "elab" allows StaticDrop/FlaggedDrop.
    """
    return _WfChecker(m, dialect).check_module()
