"""Surface parser and pretty printer.

Rust-like grammar over a hand-rolled lexer. Parsing desugars `match` into
if/CheckTag/Downcast chains (binders move out of the scrutinee after a
successful tag test), desugars struct literals into per-field assignments,
and infers `move` on whole-expression reads of resource-owning places, so
the output AST is already in the core surface dialect.

Grammar sketch (see README for the full version):

    module  := (struct | enum | extern | fn)*
    struct  := "struct" ID "{" (ID ":" type),* "}"
    enum    := "enum" ID "{" (ID (":" type)?),* "}"
    fn      := "fn" ID "(" (ID ":" type),* ")" ("->" type)? block
    stmt    := "let" ID (":" type)? ("=" rhs)? ";"
             | place "=" rhs ";" | ID "(" args ")" ";"
             | "if" expr block ("else" (block | if-stmt))?
             | "loop" block | "break" ";" | "continue" ";"
             | "return" place? ";" | "match" place "{" arm* "}" | block
    rhs     := "Box" "(" expr ")" | ID "::" ID ("(" expr ")")?
             | ID "{" (ID ":" rhs),* "}" | ID "(" args ")" | expr
    place   := "*" place | (ID | "(" place "as" ID ")") (". " ID)*
    expr    := precedence climbing over || && cmp + - * / % unary;
               atoms: literals, "()", "(" expr ")", place, place "is" ID,
               "move" place
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass

from .ast import (
    Assign, AssignBox, AssignVariant, BASE_TYPES, BOOL, Binary, BoxType,
    Break, Call, CheckTag, CompositeEnv, Const, Continue, Deref, Diagnostic,
    Downcast, Drop, EnumType, ExternFn, F32, Field, FlaggedDrop, I32, If,
    InternalFn, Let, Loop, Module, Move, Place, ReadPlace, Return, Seq, Skip,
    Span, StaticDrop, Stmt, StructType, Type, TypedPlaceError, UNIT, Unary,
    Var, owns_resources, place_str, seq, type_of_place,
)

KEYWORDS = {
    "fn", "let", "struct", "enum", "extern", "if", "else", "loop", "break",
    "continue", "return", "move", "match", "is", "as", "true", "false", "Box",
}

_PUNCT = [
    "::", "==", "!=", "<=", ">=", "&&", "||", "->", "=>",
    "(", ")", "{", "}", "<", ">", ",", ";", ":", ".", "*",
    "+", "-", "/", "%", "=", "!",
]

_TOKEN_RE = re.compile(
    r"(?P<ws>\s+|//[^\n]*)"
    r"|(?P<float>\d+(?:\.\d+(?:[eE][+-]?\d+)?|[eE][+-]?\d+))"
    r"|(?P<int>\d+)"
    r"|(?P<ident>[A-Za-z_][A-Za-z0-9_]*)"
    r"|(?P<punct>" + "|".join(re.escape(p) for p in _PUNCT) + r")"
)


@dataclass(frozen=True)
class SourceFile:
    path: str
    text: str

    @classmethod
    def from_path(cls, path: str) -> "SourceFile":
        with open(path, encoding="utf-8") as f:
            return cls(path, f.read())

    @property
    def stem(self) -> str:
        base = os.path.basename(self.path)
        return base[:-4] if base.endswith(".owl") else base


@dataclass(frozen=True)
class Token:
    kind: str  # kw | ident | int | float | punct | eof
    text: str
    line: int
    col: int

    @property
    def span(self) -> Span:
        return Span(self.line, self.col)


class ParseError(Exception):
    def __init__(self, diag: Diagnostic):
        super().__init__(diag.render())
        self.diag = diag


def tokenize(src: SourceFile) -> list[Token]:
    out = []
    pos, line, line_start = 0, 1, 0
    text = src.text
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError(Diagnostic(
                "PAR001", f"unexpected character {text[pos]!r}",
                src.path, line, pos - line_start + 1))
        col = pos - line_start + 1
        if m.lastgroup == "ws":
            nl = m.group().count("\n")
            if nl:
                line += nl
                line_start = m.start() + m.group().rindex("\n") + 1
        elif m.lastgroup == "ident":
            kind = "kw" if m.group() in KEYWORDS else "ident"
            out.append(Token(kind, m.group(), line, col))
        else:
            out.append(Token(m.lastgroup, m.group(), line, col))
        pos = m.end()
    out.append(Token("eof", "", line, len(text) - line_start + 1))
    return out


class _Parser:
    def __init__(self, src: SourceFile):
        self.src = src
        self.toks = tokenize(src)
        self.i = 0
        self.cenv = CompositeEnv()
        self.fn_names: set[str] = set()
        self.scopes: list[dict[str, Type]] = []
        self.tmp_count = 0
        # pre-scan item heads so types can be referenced before definition
        self.composite_kinds: dict[str, str] = {}
        for j, tok in enumerate(self.toks[:-1]):
            if tok.kind == "kw" and tok.text in ("struct", "enum") \
                    and self.toks[j + 1].kind == "ident":
                self.composite_kinds[self.toks[j + 1].text] = tok.text

    # -- token plumbing ------------------------------------------------------

    def peek(self, k: int = 0) -> Token:
        j = min(self.i + k, len(self.toks) - 1)
        return self.toks[j]

    def next(self) -> Token:
        t = self.toks[self.i]
        if t.kind != "eof":
            self.i += 1
        return t

    def at(self, text: str) -> bool:
        return self.peek().text == text and self.peek().kind in ("punct", "kw")

    def eat(self, text: str) -> bool:
        if self.at(text):
            self.next()
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            t = self.peek()
            self.fail("PAR002", f"expected '{text}', found '{t.text or 'end of input'}'", t)
        return self.next()

    def expect_ident(self, what: str = "identifier") -> Token:
        t = self.peek()
        if t.kind != "ident":
            self.fail("PAR002", f"expected {what}, found '{t.text or 'end of input'}'", t)
        return self.next()

    def fail(self, code: str, msg: str, tok: Token):
        raise ParseError(Diagnostic(code, msg, self.src.path, tok.line, tok.col))

    # -- scopes --------------------------------------------------------------

    def ctx(self) -> dict[str, Type]:
        flat: dict[str, Type] = {}
        for s in self.scopes:
            flat.update(s)
        return flat

    def declare(self, name: str, t: Type, tok: Token):
        if name in BASE_TYPES:
            self.fail("PAR003", f"'{name}' is a type name", tok)
        self.scopes[-1][name] = t

    def place_type(self, p: Place, tok: Token) -> Type:
        try:
            return type_of_place(self.cenv, self.ctx(), p)
        except TypedPlaceError as e:
            self.fail("PAR009", str(e.args[0]), tok)

    # -- module --------------------------------------------------------------

    def parse_module(self) -> Module:
        fns: dict = {}
        bodies: list[tuple[InternalFn, int]] = []
        while self.peek().kind != "eof":
            t = self.peek()
            if self.at("struct") or self.at("enum"):
                self.parse_composite()
            elif self.at("extern"):
                f = self.parse_extern()
                self._add_fn(fns, f, t)
            elif self.at("fn"):
                f, body_at = self.parse_fn_sig_skip_body()
                self._add_fn(fns, f, t)
                bodies.append((f, body_at))
            else:
                self.fail("PAR002", f"expected item, found '{t.text}'", t)
        for f, body_at in bodies:
            self.i = body_at
            self.scopes = [dict(f.params)]
            self.tmp_count = 0
            body = self.parse_block()
            if not _ends_with_return(body):
                body = seq([body, Return(None)]) if f.ret == UNIT else body
            fns[f.name] = InternalFn(f.name, f.params, f.ret, (), body, f.span)
        return Module(self.src.stem, self.cenv, fns, self.src.path)

    def _add_fn(self, fns, f, tok):
        if f.name in fns:
            self.fail("PAR004", f"function '{f.name}' defined twice", tok)
        fns[f.name] = f
        self.fn_names.add(f.name)

    def parse_composite(self):
        kind = self.next().text  # struct | enum
        name = self.expect_ident("type name").text
        self.expect("{")
        fields = []
        while not self.at("}"):
            lbl = self.expect_ident("label").text
            if kind == "struct":
                self.expect(":")
                ft = self.parse_type()
            else:
                ft = self.parse_type() if self.eat(":") else UNIT
            fields.append((lbl, ft))
            if not self.eat(","):
                break
        self.expect("}")
        if self.cenv.get(name) is not None:
            self.fail("PAR004", f"type '{name}' defined twice", self.peek())
        self.cenv.add(name, kind, fields)

    def parse_extern(self) -> ExternFn:
        self.expect("extern")
        self.expect("fn")
        t = self.peek()
        name = self.expect_ident("function name").text
        params = self.parse_params()
        ret = self.parse_type() if self.eat("->") else UNIT
        self.expect(";")
        return ExternFn(name, params, ret, t.span)

    def parse_fn_sig_skip_body(self) -> tuple[InternalFn, int]:
        self.expect("fn")
        t = self.peek()
        name = self.expect_ident("function name").text
        params = self.parse_params()
        ret = self.parse_type() if self.eat("->") else UNIT
        body_at = self.i
        self.expect("{")
        depth = 1
        while depth:
            tok = self.next()
            if tok.kind == "eof":
                self.fail("PAR002", "unterminated function body", tok)
            if tok.text == "{":
                depth += 1
            elif tok.text == "}":
                depth -= 1
        return InternalFn(name, params, ret, (), Skip(), t.span), body_at

    def parse_params(self) -> tuple:
        self.expect("(")
        params = []
        seen = set()
        while not self.at(")"):
            t = self.peek()
            name = self.expect_ident("parameter name").text
            if name in seen or name in BASE_TYPES:
                self.fail("PAR004", f"bad parameter name '{name}'", t)
            seen.add(name)
            self.expect(":")
            params.append((name, self.parse_type()))
            if not self.eat(","):
                break
        self.expect(")")
        return tuple(params)

    def parse_type(self) -> Type:
        t = self.peek()
        if t.text == "Box":
            self.next()
            self.expect("<")
            elem = self.parse_type()
            self.expect(">")
            return BoxType(elem)
        if t.kind == "ident":
            self.next()
            base = BASE_TYPES.get(t.text)
            if base is not None:
                return base
            return self.composite_type(t.text, t)
        self.fail("PAR003", f"expected type, found '{t.text}'", t)

    def composite_type(self, name: str, tok: Token) -> Type:
        kind = self.composite_kinds.get(name)
        if kind is None:
            self.fail("PAR003", f"unknown type '{name}'", tok)
        return StructType(name) if kind == "struct" else EnumType(name)

    # -- statements ----------------------------------------------------------

    def parse_block(self) -> Stmt:
        self.expect("{")
        s = self._block_rest_open()
        self.expect("}")
        return s

    def _parse_let_rest(self) -> Stmt:
        """`let` consumes the remainder of the enclosing block as its scope."""
        self.expect("let")
        t = self.peek()
        name = self.expect_ident("variable name").text
        if self.eat(":"):
            ty = self.parse_type()
            init_sugar = None
        else:
            init_sugar = self._peek_inferable_rhs(t)
            ty = init_sugar
        init: list[Stmt] = []
        self.scopes.append({})
        self.declare(name, ty, t)
        if self.eat("="):
            init.append(self.parse_rhs_into(Var(name, t.span), t))
        self.expect(";")
        body = self._block_rest_open()
        self.scopes.pop()
        return Let(((name, ty),), seq(init + [body]), t.span)

    def _peek_inferable_rhs(self, t: Token) -> Type:
        """Type inference for `let x = ...` is limited to constructor forms."""
        if not self.at("="):
            self.fail("PAR006", f"'let {t.text}' needs a type annotation", t)
        nxt, nxt2 = self.peek(1), self.peek(2)
        if nxt.kind == "ident" and nxt2.text == "{":
            d = self.cenv.get(nxt.text)
            if d is not None and d.kind == "struct":
                return StructType(nxt.text)
        if nxt.kind == "ident" and nxt2.text == "::":
            return self.composite_type(nxt.text, nxt)
        self.fail("PAR006",
                  "only struct/enum constructor initializers may omit the type", t)

    def _block_rest_open(self) -> Stmt:
        """Statements up to the enclosing `}` (left for the caller to consume).

        `let` and call-conditioned `if` open scopes that extend to the end of
        the block, so both swallow the remaining statements.
        """
        stmts: list[Stmt] = []
        while not self.at("}"):
            t = self.peek()
            if t.kind == "eof":
                self.fail("PAR002", "unterminated block", t)
            if self.at("let"):
                stmts.append(self._parse_let_rest())
                break
            if self.at("if") and self._call_cond_ahead():
                stmts.append(self._parse_hoisted_if_rest())
                break
            stmts.append(self.parse_stmt())
        return seq(stmts)

    def _call_cond_ahead(self) -> bool:
        nt = self.peek(1)
        return (nt.kind == "ident" and self.peek(2).text == "("
                and nt.text in self.fn_names)

    def _parse_hoisted_if_rest(self) -> Stmt:
        """`if f(..) {..}` runs the call into a fresh bool temp whose scope,
        like a let, covers the rest of the block."""
        t = self.expect("if")
        nt = self.next()
        args = self.parse_args()
        tmp = f"__c{self.tmp_count}"
        self.tmp_count += 1
        self.scopes.append({})
        self.declare(tmp, BOOL, nt)
        call = Call(Var(tmp, nt.span), nt.text, args, nt.span)
        then = self.parse_block()
        els: Stmt = Skip()
        if self.eat("else"):
            els = self.parse_if() if self.at("if") else self.parse_block()
        iff = If(ReadPlace(Var(tmp, nt.span), nt.span), then, els, t.span)
        rest = self._block_rest_open()
        self.scopes.pop()
        return Let(((tmp, BOOL),), seq([call, iff, rest]), t.span)

    def parse_stmt(self) -> Stmt:
        t = self.peek()
        if self.at("if"):
            return self.parse_if()
        if self.at("loop"):
            self.next()
            return Loop(self.parse_block(), t.span)
        if self.at("break"):
            self.next()
            self.expect(";")
            return Break(t.span)
        if self.at("continue"):
            self.next()
            self.expect(";")
            return Continue(t.span)
        if self.at("return"):
            self.next()
            if self.eat(";"):
                return Return(None, t.span)
            p = self.parse_place()
            self.expect(";")
            return Return(p, t.span)
        if self.at("match"):
            return self.parse_match()
        if self.at("{"):
            self.scopes.append({})
            body = self.parse_block()
            self.scopes.pop()
            return Let((), body, t.span)
        if t.kind == "ident" and self.peek(1).text == "(" and t.text in self.fn_names:
            self.next()
            args = self.parse_args()
            self.expect(";")
            return Call(None, t.text, args, t.span)
        # assignment
        p = self.parse_place()
        eq = self.expect("=")
        s = self.parse_rhs_into(p, eq)
        self.expect(";")
        return s

    def parse_if(self) -> Stmt:
        if self._call_cond_ahead():
            # e.g. `else if f(..)`: the hoist scope is just this statement
            t = self.peek()
            self.scopes.append({})
            s = self._parse_hoisted_if_rest_single()
            self.scopes.pop()
            return s
        t = self.expect("if")
        cond = self.parse_expr()
        then = self.parse_block()
        els: Stmt = Skip()
        if self.eat("else"):
            els = self.parse_if() if self.at("if") else self.parse_block()
        return If(cond, then, els, t.span)

    def _parse_hoisted_if_rest_single(self) -> Stmt:
        t = self.expect("if")
        nt = self.next()
        args = self.parse_args()
        tmp = f"__c{self.tmp_count}"
        self.tmp_count += 1
        self.declare(tmp, BOOL, nt)
        call = Call(Var(tmp, nt.span), nt.text, args, nt.span)
        then = self.parse_block()
        els: Stmt = Skip()
        if self.eat("else"):
            els = self.parse_if() if self.at("if") else self.parse_block()
        iff = If(ReadPlace(Var(tmp, nt.span), nt.span), then, els, t.span)
        return Let(((tmp, BOOL),), seq([call, iff]), t.span)

    def parse_args(self) -> tuple:
        self.expect("(")
        args = []
        while not self.at(")"):
            args.append(self.infer_move(self.parse_expr()))
            if not self.eat(","):
                break
        self.expect(")")
        return tuple(args)

    def parse_rhs_into(self, dest: Place, tok: Token) -> Stmt:
        """Assignment right-hand sides, including the constructor sugars."""
        t = self.peek()
        if self.at("Box") and self.peek(1).text == "(":
            self.next()
            self.expect("(")
            e = self.infer_move(self.parse_expr())
            self.expect(")")
            return AssignBox(dest, e, t.span)
        if t.kind == "ident" and self.peek(1).text == "::":
            enum_id = self.next().text
            self.next()
            variant = self.expect_ident("variant name").text
            d = self.cenv.get(enum_id)
            if d is None or d.kind != "enum":
                self.fail("PAR003", f"'{enum_id}' is not an enum", t)
            if self.cenv.variant_index(enum_id, variant) is None:
                self.fail("PAR005", f"enum '{enum_id}' has no variant '{variant}'", t)
            e = None
            if self.eat("("):
                e = self.infer_move(self.parse_expr())
                self.expect(")")
            return AssignVariant(dest, enum_id, variant, e, t.span)
        if t.kind == "ident" and self.peek(1).text == "{":
            d = self.cenv.get(t.text)
            if d is not None and d.kind == "struct":
                return self.parse_struct_literal_into(dest)
        if t.kind == "ident" and self.peek(1).text == "(" and t.text in self.fn_names:
            self.next()
            args = self.parse_args()
            return Call(dest, t.text, args, t.span)
        return Assign(dest, self.infer_move(self.parse_expr()), tok.span)

    def parse_struct_literal_into(self, dest: Place) -> Stmt:
        t = self.next()  # struct name
        sid = t.text
        self.expect("{")
        given: dict[str, Stmt] = {}
        while not self.at("}"):
            ft = self.peek()
            lbl = self.expect_ident("field label").text
            if self.cenv.field_type(sid, lbl) is None:
                self.fail("PAR010", f"struct '{sid}' has no field '{lbl}'", ft)
            if lbl in given:
                self.fail("PAR010", f"field '{lbl}' given twice", ft)
            self.expect(":")
            given[lbl] = self.parse_rhs_into(Field(dest, lbl, ft.span), ft)
            if not self.eat(","):
                break
        self.expect("}")
        missing = [lbl for lbl, _ in self.cenv[sid].fields if lbl not in given]
        if missing:
            self.fail("PAR010", f"struct literal missing field '{missing[0]}'", t)
        # write fields in declaration order so allocation order is canonical
        return seq([given[lbl] for lbl, _ in self.cenv[sid].fields])

    # -- match ----------------------------------------------------------------

    def parse_match(self) -> Stmt:
        t = self.expect("match")
        scrut = self.parse_place()
        st = self.place_type(scrut, t)
        if not isinstance(st, EnumType):
            self.fail("PAR007", f"match scrutinee '{place_str(scrut)}' is not an enum", t)
        variants = dict(self.cenv[st.id].fields)
        self.expect("{")
        arms: list[tuple[str, str, Stmt, Token]] = []  # (variant, binder|None, body)
        covered = set()
        while not self.at("}"):
            at = self.peek()
            first = self.expect_ident("variant pattern").text
            if self.eat("::"):
                if first != st.id:
                    self.fail("PAR005", f"pattern names enum '{first}', expected '{st.id}'", at)
                variant = self.expect_ident("variant name").text
            else:
                variant = first
            if variant not in variants:
                self.fail("PAR005", f"enum '{st.id}' has no variant '{variant}'", at)
            if variant in covered:
                self.fail("PAR005", f"duplicate arm for '{variant}'", at)
            covered.add(variant)
            binder = None
            if self.eat("("):
                binder = self.expect_ident("binder name").text
                self.expect(")")
            self.expect("=>")
            self.scopes.append({})
            if binder is not None:
                self.declare(binder, variants[variant], at)
            body = self.parse_block()
            self.scopes.pop()
            arms.append((variant, binder, body, at))
            self.eat(",")
        self.expect("}")
        missing = [v for v in variants if v not in covered]
        if missing:
            self.fail("PAR007", f"match is missing arm for '{missing[0]}'", t)
        return self.desugar_match(scrut, st, arms)

    def desugar_match(self, scrut: Place, st: EnumType, arms) -> Stmt:
        def arm_stmt(variant, binder, body, tok):
            if binder is None:
                return body
            payload = dict(self.cenv[st.id].fields)[variant]
            src = Downcast(scrut, variant, tok.span)
            e = Move(src, tok.span) if owns_resources(self.cenv, payload) \
                else ReadPlace(src, tok.span)
            bind = Assign(Var(binder, tok.span), e, tok.span)
            return Let(((binder, payload),), seq([bind, body]), tok.span)

        out = arm_stmt(*arms[-1])
        for variant, binder, body, tok in reversed(arms[:-1]):
            out = If(CheckTag(scrut, variant, tok.span),
                     arm_stmt(variant, binder, body, tok), out, tok.span)
        return out

    # -- places and expressions ------------------------------------------------

    def parse_place(self) -> Place:
        t = self.peek()
        if self.eat("*"):
            return Deref(self.parse_place(), t.span)
        if self.eat("("):
            base = self.parse_place()
            self.expect("as")
            v = self.expect_ident("variant name")
            self.expect(")")
            p: Place = Downcast(base, v.text, t.span)
        elif t.kind == "ident":
            self.next()
            p = Var(t.text, t.span)
        else:
            self.fail("PAR002", f"expected place, found '{t.text}'", t)
        while self.at("."):
            self.next()
            lbl = self.expect_ident("field label")
            p = Field(p, lbl.text, lbl.span)
        return p

    def infer_move(self, e):
        """Whole-expression reads of resource places become moves."""
        if isinstance(e, ReadPlace):
            try:
                t = type_of_place(self.cenv, self.ctx(), e.place)
            except TypedPlaceError:
                return e
            if owns_resources(self.cenv, t):
                return Move(e.place, e.span)
        return e

    def parse_expr(self):
        return self.parse_binary(0)

    _LEVELS = [["||"], ["&&"], ["==", "!=", "<", "<=", ">", ">="],
               ["+", "-"], ["*", "/", "%"]]

    def parse_binary(self, lvl: int):
        if lvl == len(self._LEVELS):
            return self.parse_unary()
        e = self.parse_binary(lvl + 1)
        while any(self.at(op) for op in self._LEVELS[lvl]):
            op = self.next()
            rhs = self.parse_binary(lvl + 1)
            e = Binary(op.text, e, rhs, op.span)
        return e

    def parse_unary(self):
        t = self.peek()
        if self.at("-") or self.at("!"):
            self.next()
            return Unary(t.text, self.parse_unary(), t.span)
        return self.parse_atom()

    def parse_atom(self):
        t = self.peek()
        if t.kind == "int":
            self.next()
            return Const(int(t.text), I32, t.span)
        if t.kind == "float":
            self.next()
            return Const(float(t.text), F32, t.span)
        if self.at("true") or self.at("false"):
            self.next()
            return Const(t.text == "true", BOOL, t.span)
        if self.at("move"):
            self.next()
            return Move(self.parse_place(), t.span)
        if self.at("("):
            if self.peek(1).text == ")":
                self.next()
                self.next()
                return Const(None, UNIT, t.span)
            # Could be a parenthesized expression or a downcast place.
            save = self.i
            try:
                self.next()
                e = self.parse_expr()
                if self.at("as"):
                    raise ParseError(Diagnostic("PAR000", "backtrack"))
                self.expect(")")
                return e
            except ParseError as err:
                if err.diag.code not in ("PAR000", "PAR002", "PAR009"):
                    raise
                self.i = save
                return self.finish_place_expr()
        if t.kind == "ident" or self.at("*"):
            return self.finish_place_expr()
        self.fail("PAR002", f"expected expression, found '{t.text or 'end of input'}'", t)

    def finish_place_expr(self):
        t = self.peek()
        p = self.parse_place()
        if self.eat("is"):
            v = self.expect_ident("variant name")
            return CheckTag(p, v.text, t.span)
        return ReadPlace(p, t.span)


def parse_module(src: SourceFile) -> Module:
    """Parse surface text; raises ParseError with a PARxxx diagnostic."""
    return _Parser(src).parse_module()


def parse_text(text: str, path: str = "<input>") -> Module:
    return parse_module(SourceFile(path, text))


def _ends_with_return(s: Stmt) -> bool:
    if isinstance(s, Return):
        return True
    if isinstance(s, Seq) and s.stmts:
        return _ends_with_return(s.stmts[-1])
    if isinstance(s, Let):
        return _ends_with_return(s.body)
    if isinstance(s, If):
        return _ends_with_return(s.then) and _ends_with_return(s.els)
    return False


# ---------------------------------------------------------------------------
# Pretty printer


def type_str(t: Type) -> str:
    return str(t)


def expr_str(e) -> str:
    if isinstance(e, Const):
        if e.type == UNIT:
            return "()"
        if e.type == BOOL:
            return "true" if e.value else "false"
        return repr(e.value)
    if isinstance(e, ReadPlace):
        return place_str(e.place)
    if isinstance(e, Move):
        return f"move {place_str(e.place)}"
    if isinstance(e, CheckTag):
        return f"{place_str(e.place)} is {e.variant}"
    if isinstance(e, Unary):
        return f"{e.op}{_wrap(e.operand)}"
    if isinstance(e, Binary):
        return f"{_wrap(e.left)} {e.op} {_wrap(e.right)}"
    raise TypeError(e)


def _wrap(e) -> str:
    s = expr_str(e)
    if isinstance(e, (Binary, CheckTag)):
        return f"({s})"
    return s


class _Printer:
    def __init__(self):
        self.lines: list[str] = []
        self.depth = 0

    def emit(self, s: str):
        self.lines.append("    " * self.depth + s)

    def block(self, s: Stmt, header: str):
        self.emit(header + " {")
        self.depth += 1
        self.stmts(s)
        self.depth -= 1
        self.emit("}")

    def stmts(self, s: Stmt):
        if isinstance(s, Seq):
            for sub in s.stmts:
                self.stmts(sub)
        elif isinstance(s, Skip):
            pass
        elif isinstance(s, Let) and s.decls:
            for name, t in s.decls:
                self.emit(f"let {name}: {type_str(t)};")
            self.stmts(s.body)
        else:
            self.stmt(s)

    def stmt(self, s: Stmt):
        if isinstance(s, Let):  # decl-less: a plain scope
            self.block(s.body, "")
        elif isinstance(s, Assign):
            self.emit(f"{place_str(s.place)} = {expr_str(s.expr)};")
        elif isinstance(s, AssignBox):
            self.emit(f"{place_str(s.place)} = Box({expr_str(s.expr)});")
        elif isinstance(s, AssignVariant):
            payload = f"({expr_str(s.expr)})" if s.expr is not None else ""
            self.emit(f"{place_str(s.place)} = {s.enum_id}::{s.variant}{payload};")
        elif isinstance(s, Call):
            args = ", ".join(expr_str(a) for a in s.args)
            dest = f"{place_str(s.dest)} = " if s.dest is not None else ""
            self.emit(f"{dest}{s.callee}({args});")
        elif isinstance(s, If):
            self.emit(f"if {expr_str(s.cond)} {{")
            self.depth += 1
            self.stmts(s.then)
            self.depth -= 1
            if isinstance(s.els, Skip):
                self.emit("}")
            else:
                self.emit("} else {")
                self.depth += 1
                self.stmts(s.els)
                self.depth -= 1
                self.emit("}")
        elif isinstance(s, Loop):
            self.block(s.body, "loop")
        elif isinstance(s, Break):
            self.emit("break;")
        elif isinstance(s, Continue):
            self.emit("continue;")
        elif isinstance(s, Return):
            self.emit(f"return {place_str(s.place)};" if s.place else "return;")
        elif isinstance(s, Drop):
            self.emit(f"drop {place_str(s.place)};")
        elif isinstance(s, StaticDrop):
            self.emit(f"static_drop {place_str(s.place)};")
        elif isinstance(s, FlaggedDrop):
            self.emit(f"flagged_drop {place_str(s.place)} if {s.flag};")
        else:
            raise TypeError(s)


def module_to_text(m: Module) -> str:
    """Surface rendering; lowered/elaborated modules render their drops in an
    IR-only syntax that the parser does not accept back."""
    pr = _Printer()
    for name, d in m.composites.items():
        if d.kind == "struct":
            fields = ", ".join(f"{l}: {type_str(t)}" for l, t in d.fields)
            pr.emit(f"struct {name} {{ {fields} }}")
        else:
            vs = ", ".join(l if t == UNIT else f"{l}: {type_str(t)}"
                           for l, t in d.fields)
            pr.emit(f"enum {name} {{ {vs} }}")
    for f in m.functions.values():
        params = ", ".join(f"{n}: {type_str(t)}" for n, t in f.params)
        ret = "" if f.ret == UNIT else f" -> {type_str(f.ret)}"
        if isinstance(f, ExternFn):
            pr.emit(f"extern fn {f.name}({params}){ret};")
            continue
        pr.emit(f"fn {f.name}({params}){ret} {{")
        pr.depth += 1
        for n, t in f.locals:
            pr.emit(f"let {n}: {type_str(t)};")
        pr.stmts(f.body)
        pr.depth -= 1
        pr.emit("}")
    return "\n".join(pr.lines) + "\n"
