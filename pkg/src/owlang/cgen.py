"""C99 emission for elaborated modules.

Input must be fully elaborated: hoisted locals, StaticDrop/FlaggedDrop only.
Emitted code depends on owl_runtime.h for owl_alloc/owl_free/owl_trap and
mirrors the interpreter's arithmetic: i32 ops wrap via uint32_t, division
traps on a zero divisor and wraps INT32_MIN / -1, f32 runs at native float
precision. Each function f becomes owl_f; extern declarations become
prototypes the linking harness must provide.
"""

from __future__ import annotations

from .ast import (
    Assign, AssignBox, AssignVariant, BOOL, BaseType, Binary, BoxType, Break,
    Call, CheckTag, CompositeEnv, Const, Continue, Deref, Downcast, Drop,
    EnumType, ExternFn, F32, Field, FlaggedDrop, I32, If, InternalFn, Let,
    Loop, Module, Move, Place, ReadPlace, Return, Seq, Skip, StaticDrop,
    StructType, Type, UNIT, Unary, Var, owns_resources, type_of_expr,
)

C_KEYWORDS = {
    "auto", "break", "case", "char", "const", "continue", "default", "do",
    "double", "else", "enum", "extern", "float", "for", "goto", "if",
    "inline", "int", "long", "register", "restrict", "return", "short",
    "signed", "sizeof", "static", "struct", "switch", "typedef", "union",
    "unsigned", "void", "volatile", "while", "main",
}

RUNTIME_NAMES = {"owl_alloc", "owl_free", "owl_trap", "owl_live"}


class CgenError(Exception):
    pass


def mangle(t: Type) -> str:
    if isinstance(t, BaseType):
        return t.name
    if isinstance(t, BoxType):
        return "box_" + mangle(t.elem)
    if isinstance(t, (StructType, EnumType)):
        return t.id
    raise CgenError(f"no mangling for {t}")


def emit_c(mod: Module) -> str:
    return _Cgen(mod).emit()


class _Cgen:
    def __init__(self, mod: Module):
        self.mod = mod
        self.cenv: CompositeEnv = mod.composites
        self.out: list[str] = []
        self.indent = 0
        self.tmp = 0
        self.renames: dict[str, str] = {}
        self.ctx: dict[str, Type] = {}
        self.uses_f32 = False
        self.uses_fmod = False
        self.uses_div = False
        self.uses_mod = False

    # -- plumbing -------------------------------------------------------------

    def line(self, text: str = "") -> None:
        self.out.append(("    " * self.indent + text) if text else "")

    def fresh_tmp(self) -> str:
        self.tmp += 1
        return f"owl_t{self.tmp}"

    def ctype(self, t: Type) -> str:
        if t == I32:
            return "int32_t"
        if t == BOOL:
            return "uint8_t"
        if t == F32:
            self.uses_f32 = True
            return "float"
        if isinstance(t, BoxType):
            return self.ctype(t.elem) + "*"
        if isinstance(t, (StructType, EnumType)):
            if t.id not in self.cenv:
                raise CgenError(f"unknown composite {t.id}")
            return t.id
        if t == UNIT:
            raise CgenError("unit has no value representation")
        raise CgenError(f"no C type for {t}")

    def cname(self, name: str) -> str:
        return self.renames[name]

    def _bind_names(self, f: InternalFn) -> None:
        self.renames = {}
        used = set(C_KEYWORDS) | set(RUNTIME_NAMES) | set(self.cenv.defs)
        for name, _ in list(f.params) + list(f.locals):
            c = name.lstrip("_") or "v"
            if c[0].isdigit():
                c = "v" + c
            while c in used:
                c += "_"
            used.add(c)
            self.renames[name] = c
        self.ctx = {n: t for n, t in list(f.params) + list(f.locals)}

    # -- types and drop helpers -------------------------------------------------

    def composite_order(self) -> list[str]:
        """By-value field dependencies first, so struct bodies compile."""
        order, seen = [], set()

        def visit(name: str):
            if name in seen:
                return
            seen.add(name)
            for _, t in self.cenv[name].fields:
                if isinstance(t, (StructType, EnumType)):
                    visit(t.id)
            order.append(name)

        for name in self.cenv.defs:
            visit(name)
        return order

    def emit_composites(self) -> None:
        for name in self.cenv.defs:
            self.line(f"typedef struct {name} {name};")
        if self.cenv.defs:
            self.line()
        for name in self.composite_order():
            d = self.cenv[name]
            self.line(f"struct {name} {{")
            self.indent += 1
            if d.kind == "struct":
                for fname, ft in d.fields:
                    self.line(f"{self.ctype(ft)} {fname};")
            else:
                self.line("int32_t tag;")
                payloads = [(v, t) for v, t in d.fields if t != UNIT]
                if payloads:
                    self.line("union {")
                    self.indent += 1
                    for v, t in payloads:
                        self.line(f"{self.ctype(t)} {v};")
                    self.indent -= 1
                    self.line("} u;")
            self.indent -= 1
            self.line("};")
            self.line()

    def drop_types(self) -> list[Type]:
        """Every resource type a drop may be asked for, dependency-closed."""
        seen: dict[str, Type] = {}

        def visit(t: Type):
            if not owns_resources(self.cenv, t):
                return
            m = mangle(t)
            if m in seen:
                return
            seen[m] = t
            if isinstance(t, BoxType):
                visit(t.elem)
            elif isinstance(t, (StructType, EnumType)):
                for _, ft in self.cenv[t.id].fields:
                    visit(ft)

        for name, d in self.cenv.items():
            kind = StructType if d.kind == "struct" else EnumType
            visit(kind(name))
            for _, ft in d.fields:
                visit(ft)
        for f in self.mod.functions.values():
            for _, t in f.params:
                visit(t)
            visit(f.ret)
            if isinstance(f, InternalFn):
                for _, t in f.locals:
                    visit(t)
        return list(seen.values())

    def drop_sig(self, t: Type) -> str:
        return f"void owl_drop_{mangle(t)}({self.ctype(t)} v)"

    def emit_drops(self, types: list[Type]) -> None:
        for t in types:
            self.line(self.drop_sig(t) + ";")
        if types:
            self.line()
        for t in types:
            self.line(self.drop_sig(t) + " {")
            self.indent += 1
            if isinstance(t, BoxType):
                if owns_resources(self.cenv, t.elem):
                    self.line(f"owl_drop_{mangle(t.elem)}(*v);")
                self.line("owl_free(v);")
            elif isinstance(t, StructType):
                for fname, ft in self.cenv[t.id].fields:
                    if owns_resources(self.cenv, ft):
                        self.line(f"owl_drop_{mangle(ft)}(v.{fname});")
            else:
                self.line("switch (v.tag) {")
                for i, (v, pt) in enumerate(self.cenv[t.id].fields):
                    if owns_resources(self.cenv, pt):
                        self.line(f"case {i}: owl_drop_{mangle(pt)}(v.u.{v}); break;")
                self.line("default: break;")
                self.line("}")
            self.indent -= 1
            self.line("}")
            self.line()

    # -- expressions ------------------------------------------------------------

    def place(self, p: Place) -> str:
        if isinstance(p, Var):
            return self.cname(p.name)
        if isinstance(p, Deref):
            return f"(*{self.place(p.base)})"
        if isinstance(p, Field):
            return f"{self.place(p.base)}.{p.label}"
        if isinstance(p, Downcast):
            return f"{self.place(p.base)}.u.{p.variant}"
        raise CgenError(f"unknown place {p!r}")

    def expr(self, e) -> str:
        if isinstance(e, Const):
            if e.type == I32:
                n = e.value
                # INT32_MIN has no plain decimal spelling in C
                return f"({n + 1} - 1)" if n == -(2 ** 31) else str(n)
            if e.type == BOOL:
                return "1" if e.value else "0"
            if e.type == F32:
                self.uses_f32 = True
                return f"{float(e.value):.9g}f"
            raise CgenError(f"cannot emit constant of type {e.type}")
        if isinstance(e, (ReadPlace, Move)):
            return self.place(e.place)
        if isinstance(e, Unary):
            x = self.expr(e.operand)
            if e.op == "!":
                return f"(uint8_t)(!{x})"
            t = type_of_expr(self.cenv, self.ctx, e.operand)
            if t == F32:
                return f"(-{x})"
            return f"(int32_t)(0u - (uint32_t){x})"
        if isinstance(e, Binary):
            return self.binary(e)
        if isinstance(e, CheckTag):
            idx = self.cenv.variant_index(self._enum_name(e.place), e.variant)
            return f"(uint8_t)({self.place(e.place)}.tag == {idx})"
        raise CgenError(f"unknown expr {e!r}")

    def _enum_name(self, p: Place) -> str:
        from .ast import type_of_place
        t = type_of_place(self.cenv, self.ctx, p)
        assert isinstance(t, EnumType)
        return t.id

    def binary(self, e: Binary) -> str:
        a, b = self.expr(e.left), self.expr(e.right)
        lt = type_of_expr(self.cenv, self.ctx, e.left)
        if e.op in ("&&", "||"):
            return f"(uint8_t)({a} {e.op} {b})"
        if e.op in ("==", "!=", "<", "<=", ">", ">="):
            return f"(uint8_t)({a} {e.op} {b})"
        if lt == F32:
            if e.op == "%":
                self.uses_fmod = True
                return f"fmodf({a}, {b})"
            return f"({a} {e.op} {b})"
        if e.op == "/":
            self.uses_div = True
            return f"owl_div({a}, {b})"
        if e.op == "%":
            self.uses_mod = True
            return f"owl_mod({a}, {b})"
        return f"(int32_t)((uint32_t){a} {e.op} (uint32_t){b})"

    # -- statements ---------------------------------------------------------

    def stmt(self, s) -> None:
        if isinstance(s, Skip):
            return
        if isinstance(s, Seq):
            for x in s.stmts:
                self.stmt(x)
            return
        if isinstance(s, Assign):
            self.line(f"{self.place(s.place)} = {self.expr(s.expr)};")
            return
        if isinstance(s, AssignBox):
            t = self.ctx_type(s.place)
            assert isinstance(t, BoxType)
            ct = self.ctype(t.elem)
            tmp = self.fresh_tmp()
            self.line(f"{ct}* {tmp} = ({ct}*)owl_alloc(sizeof({ct}));")
            self.line(f"*{tmp} = {self.expr(s.expr)};")
            self.line(f"{self.place(s.place)} = {tmp};")
            return
        if isinstance(s, AssignVariant):
            idx = self.cenv.variant_index(s.enum_id, s.variant)
            if s.expr is None:
                self.line(f"{self.place(s.place)}.tag = {idx};")
                return
            pt = self.cenv.field_type(s.enum_id, s.variant)
            tmp = self.fresh_tmp()
            self.line(f"{self.ctype(pt)} {tmp} = {self.expr(s.expr)};")
            self.line(f"{self.place(s.place)}.tag = {idx};")
            self.line(f"{self.place(s.place)}.u.{s.variant} = {tmp};")
            return
        if isinstance(s, Call):
            args = ", ".join(self.expr(a) for a in s.args)
            call = f"owl_{s.callee}({args})"
            if s.dest is None:
                f = self.mod.get_fn(s.callee)
                self.line(f"{call};" if f.ret == UNIT else f"(void){call};")
            else:
                self.line(f"{self.place(s.dest)} = {call};")
            return
        if isinstance(s, If):
            self.line(f"if ({self.expr(s.cond)}) {{")
            self.indent += 1
            self.stmt(s.then)
            self.indent -= 1
            if isinstance(s.els, Skip):
                self.line("}")
            else:
                self.line("} else {")
                self.indent += 1
                self.stmt(s.els)
                self.indent -= 1
                self.line("}")
            return
        if isinstance(s, Loop):
            self.line("for (;;) {")
            self.indent += 1
            self.stmt(s.body)
            self.indent -= 1
            self.line("}")
            return
        if isinstance(s, Break):
            self.line("break;")
            return
        if isinstance(s, Continue):
            self.line("continue;")
            return
        if isinstance(s, Return):
            if s.place is None:
                self.line("return;")
            else:
                self.line(f"return {self.place(s.place)};")
            return
        if isinstance(s, StaticDrop):
            t = self.ctx_type(s.place)
            self.line(f"owl_drop_{mangle(t)}({self.place(s.place)});")
            return
        if isinstance(s, FlaggedDrop):
            t = self.ctx_type(s.place)
            flag = self.cname(s.flag)
            self.line(f"if ({flag}) {{")
            self.indent += 1
            self.line(f"owl_drop_{mangle(t)}({self.place(s.place)});")
            self.line(f"{flag} = 0;")
            self.indent -= 1
            self.line("}")
            return
        if isinstance(s, (Let, Drop)):
            raise CgenError("module must be elaborated before emission")
        raise CgenError(f"unknown stmt {s!r}")

    def ctx_type(self, p: Place) -> Type:
        from .ast import type_of_place
        return type_of_place(self.cenv, self.ctx, p)

    # -- functions ---------------------------------------------------------

    def fn_sig(self, f) -> str:
        ret = "void" if f.ret == UNIT else self.ctype(f.ret)
        if not f.params:
            return f"{ret} owl_{f.name}(void)"
        if isinstance(f, InternalFn):
            params = ", ".join(f"{self.ctype(t)} {self.cname(n)}"
                               for n, t in f.params)
        else:
            params = ", ".join(self.ctype(t) for _, t in f.params)
        return f"{ret} owl_{f.name}({params})"

    def emit_fn(self, f: InternalFn) -> None:
        self._bind_names(f)
        self.tmp = 0
        self.line(self.fn_sig(f) + " {")
        self.indent += 1
        for name, t in f.locals:
            init = " = 0" if name.startswith("__df_") else ""
            self.line(f"{self.ctype(t)} {self.cname(name)}{init};")
        self.stmt(f.body)
        # falling off the end of a unit function is the implicit return;
        # anywhere else it is a stuck state, kept observable as a trap
        if f.ret != UNIT and not _ends_in_return(f.body):
            self.line("owl_trap(OWL_TRAP_UNREACHABLE);")
            ret = self.ctype(f.ret)
            zero = "0" if not isinstance(f.ret, (StructType, EnumType)) else "{0}"
            self.line(f"{{ {ret} owl_z = {zero}; return owl_z; }}")
        self.indent -= 1
        self.line("}")
        self.line()

    def emit(self) -> str:
        for f in self.mod.internal_functions():
            _reject_unelaborated(f.body)

        body_out: list[str] = []
        self.out = body_out
        self.emit_composites()
        self.emit_drops(self.drop_types())
        for f in self.mod.functions.values():
            if isinstance(f, ExternFn):
                self._bind_names_extern(f)
                self.line(self.fn_sig(f) + ";")
        self.line()
        protos = []
        for f in self.mod.internal_functions():
            self._bind_names(f)
            protos.append(self.fn_sig(f) + ";")
        for p in protos:
            self.line(p)
        self.line()
        for f in self.mod.internal_functions():
            self.emit_fn(f)

        head: list[str] = []
        self.out = head
        self.line(f"/* generated from {self.mod.name} */")
        self.line("#include <stdint.h>")
        if self.uses_fmod:
            self.line("#include <math.h>")
        self.line('#include "owl_runtime.h"')
        self.line()
        if self.uses_div:
            self.line("static int32_t owl_div(int32_t a, int32_t b) {")
            self.line("    if (b == 0) owl_trap(OWL_TRAP_DIV);")
            self.line("    if (b == -1) return (int32_t)(0u - (uint32_t)a);")
            self.line("    return a / b;")
            self.line("}")
            self.line()
        if self.uses_mod:
            self.line("static int32_t owl_mod(int32_t a, int32_t b) {")
            self.line("    if (b == 0) owl_trap(OWL_TRAP_DIV);")
            self.line("    if (b == -1) return 0;")
            self.line("    return a % b;")
            self.line("}")
            self.line()
        return "\n".join(head + body_out) + "\n"

    def _bind_names_extern(self, f: ExternFn) -> None:
        self.renames = {n: n for n, _ in f.params}
        self.ctx = {}


def _ends_in_return(s) -> bool:
    if isinstance(s, Return):
        return True
    if isinstance(s, Seq):
        return bool(s.stmts) and _ends_in_return(s.stmts[-1])
    if isinstance(s, If):
        return _ends_in_return(s.then) and _ends_in_return(s.els)
    if isinstance(s, Loop):
        return not _loop_breaks(s.body)
    return False


def _loop_breaks(s) -> bool:
    if isinstance(s, Break):
        return True
    if isinstance(s, Seq):
        return any(_loop_breaks(x) for x in s.stmts)
    if isinstance(s, If):
        return _loop_breaks(s.then) or _loop_breaks(s.els)
    return False  # a nested Loop consumes its own breaks


def _reject_unelaborated(s) -> None:
    if isinstance(s, (Let, Drop)):
        raise CgenError("module must be elaborated before emission")
    if isinstance(s, Seq):
        for x in s.stmts:
            _reject_unelaborated(x)
    elif isinstance(s, If):
        _reject_unelaborated(s.then)
        _reject_unelaborated(s.els)
    elif isinstance(s, Loop):
        _reject_unelaborated(s.body)
