"""Seeded random program generation for differential and safety testing.

Programs are built ownership-correct by construction: the generator tracks
which resources are live in each scope and only emits moves/reads the
checker will accept, while still covering branches that leave ownership
path-dependent (flag-dropped), bounded loops with per-iteration
allocations, struct/enum payload shuffling, helper calls that transfer
boxes, and nondeterministic branching on a host choice function.

`gen_module(seed, bug=...)` plants exactly one of three bug shapes instead:
a double move, a move into an inner scope followed by a use, or a read of
an uninitialized box. Those programs must be rejected by the checker, and
running them anyway demonstrates the dangers are real (double frees,
use-after-free loads, undefined-value derefs).
"""

from __future__ import annotations

import random

COMPOSITES = """\
struct Pair { a: Box<i32>, b: Box<i32> }
struct Wrap { v: Box<i32>, n: i32 }
enum Opt { None, Some: Box<i32> }
enum Chain { End, Link: Box<Chain> }
"""

HELPERS = {
    "mk": """\
fn mk(n: i32) -> Box<i32> {
    let r: Box<i32>;
    r = Box(n);
    return r;
}
""",
    "dup": """\
fn dup(b: Box<i32>) -> Box<i32> {
    let r: Box<i32>;
    r = Box(*b + *b);
    return r;
}
""",
    "use_up": """\
fn use_up(b: Box<i32>) -> i32 {
    let n: i32;
    n = *b;
    return n;
}
""",
}

BUGS = ("double-move", "use-after-scope", "uninit-use")


class _Var:
    def __init__(self, name: str, kind: str, state: str):
        self.name = name
        self.kind = kind  # i32 | box | pair | opt | chain
        self.state = state  # boxes: full/empty/maybe; pairs: per-field dict
        self.fields = {}  # pair only: {"a": state, "b": state}
        # a box written through (*b = e) can never be gated by a drop flag,
        # and a box that ever needed a flag can never be written through
        self.wrote = False
        self.frozen = False


class _Gen:
    def __init__(self, rng: random.Random, bug: str | None):
        self.rng = rng
        self.bug = bug
        self.lines: list[str] = []
        self.depth = 1
        self.names = 0
        self.rand_budget = 2
        self.helpers: set[str] = set()
        self.scopes: list[list[_Var]] = [[]]
        self.uses_rand = False
        self.in_branch = 0
        self.sibling_moved: set[int] = set()

    # -- bookkeeping ----------------------------------------------------------

    def fresh(self, prefix: str) -> str:
        self.names += 1
        return f"{prefix}{self.names}"

    def emit(self, text: str) -> None:
        self.lines.append("    " * self.depth + text)

    def declare(self, kind: str, state: str) -> _Var:
        prefix = {"i32": "n", "box": "b", "pair": "p", "opt": "o", "chain": "c"}[kind]
        v = _Var(self.fresh(prefix), kind, state)
        if kind == "pair":
            v.fields = {"a": "empty", "b": "empty"}
        ty = {"i32": "i32", "box": "Box<i32>", "pair": "Pair",
              "opt": "Opt", "chain": "Chain"}[kind]
        self.emit(f"let {v.name}: {ty};")
        self.scopes[-1].append(v)
        return v

    def visible(self, kind: str, state=None) -> list[_Var]:
        out = []
        for scope in self.scopes:
            for v in scope:
                if v.kind == kind and (state is None or v.state == state):
                    out.append(v)
        return out

    def movable_boxes(self) -> list[_Var]:
        """Full boxes a move may consume here. Inside a branch arm, consuming
        a written-through outer box would leave it needing a drop flag it
        cannot have, so those are excluded."""
        out = self.visible("box", "full")
        if self.in_branch:
            local = set(id(v) for v in self.scopes[-1])
            out = [v for v in out if id(v) in local or not v.wrote]
        return out

    # -- expressions ----------------------------------------------------------

    def iexpr(self, depth: int = 0) -> str:
        r = self.rng
        opts = ["const"]
        if self.visible("i32"):
            opts += ["var", "var"]
        if self.visible("box", "full"):
            opts += ["deref"]
        if depth < 2:
            opts += ["arith", "arith"]
        pick = r.choice(opts)
        if pick == "const":
            return str(r.randrange(0, 50))
        if pick == "var":
            return r.choice(self.visible("i32")).name
        if pick == "deref":
            return f"*{r.choice(self.visible('box', 'full')).name}"
        a, b = self.iexpr(depth + 1), self.iexpr(depth + 1)
        op = r.choice(["+", "-", "*", "/", "%"])
        if op in ("/", "%"):
            b = str(r.randrange(2, 9))  # keep denominators concrete and nonzero
        return f"({a} {op} {b})"

    def cond(self) -> str:
        r = self.rng
        a = self.iexpr(1)
        op = r.choice(["==", "!=", "<", "<=", ">", ">="])
        return f"{a} {op} {r.randrange(0, 40)}"

    # -- statements -----------------------------------------------------------

    def stmt_new_box(self):
        init = self.iexpr()  # build before declaring, so it can't self-reference
        v = self.declare("box", "full")
        self.emit(f"{v.name} = Box({init});")

    def stmt_acc(self):
        self.emit(f"acc = acc + {self.iexpr()};")

    def stmt_box_write(self):
        boxes = [v for v in self.visible("box", "full")
                 if not v.frozen and id(v) not in self.sibling_moved]
        if not boxes:
            return self.stmt_new_box()
        v = self.rng.choice(boxes)
        self.emit(f"*{v.name} = {self.iexpr()};")
        v.wrote = True

    def stmt_move_box(self):
        srcs = self.movable_boxes()
        if not srcs:
            return self.stmt_new_box()
        src = self.rng.choice(srcs)
        # moving onto a still-full box exercises the implicit pre-drop
        dests = [v for v in self.visible("box") if v is not src]
        if self.in_branch:
            local = set(id(v) for v in self.scopes[-1])
            dests = [v for v in dests if id(v) in local or not v.wrote]
        if dests and self.rng.random() < 0.5:
            dest = self.rng.choice(dests)
        else:
            dest = self.declare("box", "empty")
        self.emit(f"{dest.name} = move {src.name};")
        src.state = "empty"
        dest.state = "full"

    def stmt_pair(self):
        v = self.declare("pair", "built")
        self.emit(f"{v.name}.a = Box({self.iexpr()});")
        self.emit(f"{v.name}.b = Box({self.iexpr()});")
        v.fields = {"a": "full", "b": "full"}

    def stmt_pair_take(self):
        pairs = [p for p in self.visible("pair")
                 if "full" in p.fields.values()]
        if not pairs:
            return self.stmt_pair()
        p = self.rng.choice(pairs)
        f = self.rng.choice([k for k, st in p.fields.items() if st == "full"])
        dest = self.declare("box", "empty")
        self.emit(f"{dest.name} = move {p.name}.{f};")
        p.fields[f] = "empty"
        dest.state = "full"
        if self.rng.random() < 0.4:
            self.emit(f"{p.name}.{f} = Box({self.iexpr()});")
            p.fields[f] = "full"

    def stmt_opt(self):
        srcs = self.movable_boxes()
        v = self.declare("opt", "uninit")
        if srcs and self.rng.random() < 0.7:
            src = self.rng.choice(srcs)
            self.emit(f"{v.name} = Opt::Some(move {src.name});")
            src.state = "empty"
            v.state = "some"
        else:
            self.emit(f"{v.name} = Opt::None;")
            v.state = "none"

    def stmt_opt_match(self):
        opts = [o for o in self.visible("opt")
                if o.state in ("some", "none", "owned")]
        if not opts:
            return self.stmt_opt()
        o = self.rng.choice(opts)
        binder = self.fresh("v")
        self.emit(f"match {o.name} {{")
        self.depth += 1
        self.emit("None => {")
        self.depth += 1
        self.emit(f"acc = acc + {self.rng.randrange(1, 9)};")
        self.depth -= 1
        self.emit("}")
        self.emit(f"Some({binder}) => {{")
        self.depth += 1
        self.emit(f"acc = acc + *{binder};")
        # restore unit ownership so the scope-exit drop stays decidable
        self.emit(f"{o.name} = Opt::None;")
        self.depth -= 1
        self.emit("}")
        self.depth -= 1
        self.emit("}")
        o.state = "none"

    def stmt_chain(self):
        v = self.declare("chain", "built")
        self.emit(f"{v.name} = Chain::End;")
        v.state = "empty"
        cur = v.name
        for _ in range(self.rng.randrange(1, 4)):
            bx = self.fresh("cb")
            self.emit(f"let {bx}: Box<Chain>;")
            self.emit(f"{bx} = Box(move {cur});")
            nxt = self.fresh("c")
            self.emit(f"let {nxt}: Chain;")
            self.emit(f"{nxt} = Chain::Link(move {bx});")
            cur = nxt
        # only the outermost link is still owned; track it for the drop
        self.scopes[-1].append(_Var(cur, "chain", "full"))

    def stmt_call(self):
        r = self.rng
        srcs = self.movable_boxes()
        kind = r.choice(["mk", "dup", "use_up"]) if srcs else "mk"
        self.helpers.add(kind)
        if kind == "mk":
            dest = self.declare("box", "empty")
            self.emit(f"{dest.name} = mk({self.iexpr()});")
            dest.state = "full"
        elif kind == "dup":
            src = r.choice(srcs)
            dest = self.declare("box", "empty")
            self.emit(f"{dest.name} = dup(move {src.name});")
            src.state = "empty"
            dest.state = "full"
        else:
            src = r.choice(srcs)
            self.emit(f"acc = use_up(move {src.name});")
            src.state = "empty"

    def stmt_if(self, budget: int):
        r = self.rng
        use_rand = self.rand_budget > 0 and r.random() < 0.55
        if use_rand:
            self.rand_budget -= 1
            self.uses_rand = True
            head = "if rand() {"
        else:
            head = f"if {self.cond()} {{"

        # the branch-asymmetric move: both arms fill the same destination
        # from different sources, leaving the sources flag-dropped
        pairs = [p for p in self.visible("pair")
                 if p.fields["a"] == "full" and p.fields["b"] == "full"]
        if pairs and r.random() < 0.5:
            p = r.choice(pairs)
            dest = self.declare("box", "empty")
            self.emit(head)
            self.depth += 1
            self.emit(f"{dest.name} = move {p.name}.a;")
            self.depth -= 1
            self.emit("} else {")
            self.depth += 1
            self.emit(f"{dest.name} = move {p.name}.b;")
            self.depth -= 1
            self.emit("}")
            dest.state = "full"
            p.fields["a"] = p.fields["b"] = "maybe"
            return

        self.emit(head)
        before = self._snapshot()
        self.in_branch += 1
        self.depth += 1
        self.scopes.append([])
        self.block(max(1, budget // 2), allow_nesting=False)
        self.scopes.pop()
        self.depth -= 1
        after_then = self._snapshot()
        self.emit("} else {")
        self._restore(before)
        moved = set()
        for scope in self.scopes:
            for v in scope:
                if v.kind == "box" and id(v) in after_then \
                        and after_then[id(v)][0] != v.state:
                    moved.add(id(v))
        outer_sibling, self.sibling_moved = self.sibling_moved, moved
        self.depth += 1
        self.scopes.append([])
        self.block(max(1, budget // 2), allow_nesting=False)
        self.scopes.pop()
        self.depth -= 1
        self.in_branch -= 1
        self.sibling_moved = outer_sibling
        self.emit("}")
        self._merge(after_then)

    def stmt_loop(self, budget: int):
        i = self.declare("i32", "full")
        self.emit(f"{i.name} = 0;")
        bound = self.rng.randrange(2, 7)
        self.emit("loop {")
        self.depth += 1
        self.emit(f"if {i.name} >= {bound} {{")
        self.depth += 1
        self.emit("break;")
        self.depth -= 1
        self.emit("}")
        # per-iteration allocation, consumed by the scope every time around
        self.scopes.append([])
        t = self.declare("box", "full")
        self.emit(f"{t.name} = Box({i.name});")
        self.emit(f"acc = acc + *{t.name};")
        if self.rng.random() < 0.4:
            self.emit(f"*{t.name} = acc % 97;")
            self.emit(f"acc = acc + *{t.name};")
        self.scopes.pop()
        self.emit(f"{i.name} = {i.name} + 1;")
        self.depth -= 1
        self.emit("}")

    def stmt_early_return(self):
        self.emit(f"if acc > {self.rng.randrange(4000, 9000)} {{")
        self.depth += 1
        self.emit("return acc;")
        self.depth -= 1
        self.emit("}")

    # branch-state tracking: snapshot/restore/merge box-ish states so code
    # after an if only relies on what both arms kept alive

    def _snapshot(self):
        snap = {}
        for scope in self.scopes:
            for v in scope:
                snap[id(v)] = (v.state, dict(v.fields))
        return snap

    def _restore(self, snap):
        for scope in self.scopes:
            for v in scope:
                if id(v) in snap:
                    v.state, fields = snap[id(v)]
                    v.fields = dict(fields)

    def _merge(self, other):
        owned_opt = ("some", "none", "owned")
        for scope in self.scopes:
            for v in scope:
                if id(v) not in other:
                    continue
                ostate, ofields = other[id(v)]
                if v.state != ostate:
                    if v.kind == "opt" and v.state in owned_opt and ostate in owned_opt:
                        v.state = "owned"  # variant differs, ownership does not
                    else:
                        v.state = "maybe"
                        v.frozen = True
                for k in v.fields:
                    if v.fields[k] != ofields.get(k, v.fields[k]):
                        v.fields[k] = "maybe"

    # -- blocks and the whole module -------------------------------------------

    def block(self, budget: int, allow_nesting: bool = True):
        r = self.rng
        menu = [
            (self.stmt_acc, 3), (self.stmt_new_box, 3), (self.stmt_box_write, 2),
            (self.stmt_move_box, 2), (self.stmt_pair, 2), (self.stmt_pair_take, 2),
            (self.stmt_opt, 1), (self.stmt_opt_match, 2), (self.stmt_chain, 1),
            (self.stmt_call, 2),
        ]
        names = [f for f, w in menu for _ in range(w)]
        n = 0
        while n < budget:
            if allow_nesting and r.random() < 0.22:
                kind = r.choice(["if", "loop", "ret"])
                if kind == "if":
                    self.stmt_if(3)
                elif kind == "loop":
                    self.stmt_loop(3)
                else:
                    self.stmt_early_return()
                n += 2
                continue
            r.choice(names)()
            n += 1

    def plant_bug(self):
        srcs = self.visible("box", "full")
        if not srcs:
            self.stmt_new_box()
            srcs = self.visible("box", "full")
        src = self.rng.choice(srcs)
        if self.bug == "double-move":
            a = self.declare("box", "empty")
            b = self.declare("box", "empty")
            self.emit(f"{a.name} = move {src.name};")
            self.emit(f"{b.name} = move {src.name};")
        elif self.bug == "use-after-scope":
            self.emit("if 1 == 1 {")
            self.depth += 1
            t = self.fresh("t")
            self.emit(f"let {t}: Box<i32>;")
            self.emit(f"{t} = move {src.name};")
            self.emit(f"acc = acc + *{t};")
            self.depth -= 1
            self.emit("}")
            self.emit(f"acc = acc + *{src.name};")
        else:  # uninit-use
            u = self.fresh("u")
            self.emit(f"let {u}: i32;")
            self.emit(f"acc = acc + {u};")

    def module(self) -> str:
        self.emit("let acc: i32;")
        self.scopes[-1].append(_Var("acc", "i32", "full"))
        self.emit("acc = 0;")
        self.block(self.rng.randrange(5, 14))
        if self.bug:
            self.plant_bug()
        self.emit("return acc;")

        parts = [COMPOSITES]
        if self.uses_rand:
            parts.append("extern fn rand() -> bool;\n")
        for h in sorted(self.helpers):
            parts.append(HELPERS[h])
        body = "\n".join(self.lines)
        parts.append(f"fn main() -> i32 {{\n{body}\n}}\n")
        return "\n".join(parts)


def gen_module(seed: int, bug: str | None = None) -> str:
    """Deterministic program text for a seed; `bug` picks a planted defect."""
    assert bug is None or bug in BUGS
    return _Gen(random.Random(seed), bug).module()


def bug_for(seed: int) -> str:
    """Weighted defect choice: half double moves, then scope escapes, then
    uninitialized reads."""
    r = random.Random(seed ^ 0x5EED).random()
    if r < 0.5:
        return "double-move"
    if r < 0.8:
        return "use-after-scope"
    return "uninit-use"
