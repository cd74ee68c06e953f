"""Ownership checking: Kildall dataflow over the IR control-flow graph.

Each function body becomes a CFG whose nodes are labeled L0, L1, ... in
source order (calls take two nodes so the moment after argument transfer is
addressable). Three forward analyses run over it:

  - must-own: places certainly holding full ownership (meet = intersection);
  - may-own: places possibly owning (join = union); drives leak checks and
    drop elaboration decisions;
  - must-init: places certainly written (meet = intersection).

Ownership states are normalized sets of maximal trackable places. Moving a
place splits its owning ancestor: siblings along Field steps survive,
Downcast steps carry everything, and a Deref step leaves the box pointer
itself owned. Assigning a place restores its whole subtree. Trackable
places never chain through a Deref except the single hop `*p` on a
box-typed parameter; deeper heap structure is summarized by its owning box.

Errors:
  OWN001 use of a place whose pointer chain is not owned
  OWN002 move of a place not certainly owned
  OWN003 drop target untrackable or not statically full/empty/gateable
  OWN004 use of a possibly uninitialized place
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Callable, Optional

from .ast import (
    Assign, AssignBox, AssignVariant, BaseType, Binary, BoxType, Break, Call,
    CheckTag, Const, Continue, Deref, Diagnostic, Downcast, Drop, EnumType,
    Expr, Field, FlaggedDrop, If, InternalFn, Let, Loop, Module, Move, Place,
    ReadPlace, Return, Seq, Skip, StaticDrop, Stmt, StructType, Type, Unary,
    Var, is_prefix, owns_resources, place_str, type_of_place,
)

# ---------------------------------------------------------------------------
# Control-flow graph


@dataclass
class CfgNode:
    label: int
    kind: str  # stmt | branch | call | callret | drop | return | exit
    stmt: object  # Stmt for stmt-ish kinds, Expr for branch, None for exit
    succs: list


class Cfg:
    def __init__(self, fn: InternalFn):
        self.fn = fn
        self.nodes: dict[int, CfgNode] = {}
        self.entry = 0

    def new(self, kind: str, stmt, succs=None) -> CfgNode:
        n = CfgNode(len(self.nodes), kind, stmt, succs or [])
        self.nodes[n.label] = n
        return n

    def __iter__(self):
        return iter(self.nodes.values())


def build_cfg(fn: InternalFn) -> Cfg:
    """Label IR statements in source order; calls get a second (return) node."""
    cfg = Cfg(fn)
    # Nodes are allocated in a first pass (source order), wired in a second.
    seqs: list[tuple[CfgNode, object]] = []

    def alloc(s: Stmt) -> list:
        """Returns a chain spec: list of (node, kind-specific info)."""
        if isinstance(s, Skip):
            return []
        if isinstance(s, Seq):
            out = []
            for sub in s.stmts:
                out.extend(alloc(sub))
            return out
        if isinstance(s, (Assign, AssignBox, AssignVariant)):
            return [("lin", cfg.new("stmt", s))]
        if isinstance(s, Call):
            c = cfg.new("call", s)
            r = cfg.new("callret", s)
            c.succs = [r.label]
            return [("lin", c), ("lin", r)]
        if isinstance(s, (Drop, StaticDrop, FlaggedDrop)):
            return [("lin", cfg.new("drop", s))]
        if isinstance(s, If):
            b = cfg.new("branch", s.cond)
            return [("if", b, alloc(s.then), alloc(s.els))]
        if isinstance(s, Loop):
            body = alloc(s.body)
            if not body:
                body = [("lin", cfg.new("stmt", Skip()))]
            return [("loop", body)]
        if isinstance(s, Break):
            return [("break", cfg.new("stmt", s))]
        if isinstance(s, Continue):
            return [("continue", cfg.new("stmt", s))]
        if isinstance(s, Return):
            return [("return", cfg.new("return", s))]
        if isinstance(s, Let):
            raise ValueError("Let in IR body")
        raise TypeError(s)

    chain = alloc(fn.body)
    exit_node = cfg.new("exit", None)
    ret_tail = cfg.new("return", Return(None))
    ret_tail.succs = [exit_node.label]
    cfg.exit_label = exit_node.label

    def wire(chain, succ: int, brk: Optional[int], cont: Optional[int]) -> int:
        """Wire a chain so it flows to succ; returns the chain entry label."""
        entry = succ
        for item in reversed(chain):
            tag = item[0]
            if tag == "lin":
                node = item[1]
                if node.kind != "call":
                    # call -> callret edge is fixed at allocation; the
                    # callret node (next in chain) was wired already
                    node.succs = [entry]
                entry = node.label
            elif tag == "if":
                _, b, then_c, else_c = item
                t_entry = wire(then_c, entry, brk, cont)
                e_entry = wire(else_c, entry, brk, cont)
                b.succs = [t_entry, e_entry]
                entry = b.label
            elif tag == "loop":
                _, body_c = item
                # the loop head is the body entry; break exits past the loop
                head = _chain_entry(body_c)
                wire(body_c, head, entry, head)
                entry = head
            elif tag == "break":
                node = item[1]
                assert brk is not None
                node.succs = [brk]
                entry = node.label
            elif tag == "continue":
                node = item[1]
                assert cont is not None
                node.succs = [cont]
                entry = node.label
            elif tag == "return":
                node = item[1]
                node.succs = [exit_node.label]
                entry = node.label
            else:
                raise ValueError(tag)
        return entry

    def _chain_entry(chain) -> Optional[int]:
        if not chain:
            return None
        item = chain[0]
        if item[0] in ("lin", "break", "continue", "return"):
            return item[1].label
        if item[0] == "if":
            return item[1].label
        if item[0] == "loop":
            return _chain_entry(item[1]) or None
        raise ValueError(item)

    cfg.entry = wire(chain, ret_tail.label, None, None)
    if not chain:
        cfg.entry = ret_tail.label
    return cfg


# ---------------------------------------------------------------------------
# Worklist engine (generic; also used directly by the random-CFG tests)


BOTTOM = object()  # unreachable


def kildall(succs: dict, entry, init, transfer: Callable, join: Callable) -> dict:
    """Forward fixpoint. succs: label -> list of labels; transfer(label, st);
    join(a, b) on non-bottom states. Returns entry-state per label."""
    states = {l: BOTTOM for l in succs}
    states[entry] = init
    wl = deque([entry])
    while wl:
        l = wl.popleft()
        st = states[l]
        if st is BOTTOM:
            continue
        out = transfer(l, st)
        for s in succs[l]:
            cur = states[s]
            new = out if cur is BOTTOM else join(cur, out)
            if new != cur:
                states[s] = new
                wl.append(s)
    return states


# ---------------------------------------------------------------------------
# Place algebra


class Places:
    """Trackable-place helpers for one function."""

    def __init__(self, cenv, fn: InternalFn):
        self.cenv = cenv
        self.fn = fn
        self.ctx: dict[str, Type] = dict(fn.params) | dict(fn.locals)
        self.param_boxes = {n for n, t in fn.params if isinstance(t, BoxType)}

    def type_of(self, p: Place) -> Type:
        return type_of_place(self.cenv, self.ctx, p)

    def resource(self, p: Place) -> bool:
        return owns_resources(self.cenv, self.type_of(p))

    def trackable(self, p: Place) -> bool:
        if isinstance(p, Var):
            return p.name in self.ctx
        if isinstance(p, Deref):
            b = p.base
            return isinstance(b, Var) and b.name in self.param_boxes
        if isinstance(p, (Field, Downcast)):
            return self.trackable(p.base)
        return False

    def children(self, p: Place, mode: str) -> list[Place]:
        """One-level family used for normalization merges."""
        t = self.type_of(p)
        if isinstance(t, StructType):
            out = []
            for lbl, ft in self.cenv[t.id].fields:
                if mode == "init" or owns_resources(self.cenv, ft):
                    out.append(Field(p, lbl))
            return out
        return []

    def entry_own(self) -> frozenset:
        S = set()
        for n, t in self.fn.params:
            if owns_resources(self.cenv, t):
                S.add(Var(n))
                if isinstance(t, BoxType) and owns_resources(self.cenv, t.elem):
                    S.add(Deref(Var(n)))
        return frozenset(S)

    def entry_init(self) -> frozenset:
        return frozenset(Var(n) for n, _ in self.fn.params)

    # -- coverage -----------------------------------------------------------

    def covered(self, S: frozenset, q: Place, mode: str = "own") -> bool:
        """Is q's full subtree owned (own) / written (init) under S?

        Walking upward, a trackable Deref must itself be present (a box does
        not vouch for separately-tracked contents); untrackable Derefs are
        summarized by their box. Init coverage crosses every Deref (heap
        cells are always written whole at allocation).
        """
        cur = q
        while True:
            if cur in S:
                return True
            if isinstance(cur, Var):
                return False
            if isinstance(cur, Deref):
                if mode == "own" and self.trackable(cur):
                    return False
                cur = cur.base
            else:
                cur = cur.base

    def deref_bases(self, q: Place) -> list[Place]:
        out = []
        cur = q
        while not isinstance(cur, Var):
            if isinstance(cur, Deref):
                out.append(cur.base)
            cur = cur.base
        return out

    def downcast_bases(self, q: Place) -> list[Place]:
        out = []
        cur = q
        while not isinstance(cur, Var):
            if isinstance(cur, Downcast):
                out.append(cur.base)
            cur = cur.base
        return out

    # -- normalized-set operations -------------------------------------------

    def normalize(self, S: set, mode: str = "own") -> frozenset:
        S = set(S)
        changed = True
        while changed:
            changed = False
            for p in list(S):
                if isinstance(p, Field):
                    fam = self.children(p.base, mode)
                    if fam and all(c in S for c in fam):
                        S.difference_update(fam)
                        S.add(p.base)
                        changed = True
                        break
                if mode == "own" and isinstance(p, Downcast):
                    S.discard(p)
                    S.add(p.base)
                    changed = True
                    break
        # drop elements already covered by a surviving ancestor
        out = set()
        for p in S:
            if not self.covered(frozenset(S - {p}), p, mode):
                out.add(p)
        return frozenset(out)

    def add_full(self, S: frozenset, p: Place, mode: str = "own") -> frozenset:
        S2 = {q for q in S if not is_prefix(p, q)}
        S2.add(p)
        if mode == "own":
            t = self.type_of(p)
            if isinstance(t, BoxType) and owns_resources(self.cenv, t.elem):
                hop = Deref(p)
                if self.trackable(hop):
                    S2.add(hop)
        return self.normalize(S2, mode)

    def remove_full(self, S: frozenset, p: Place, mode: str = "own") -> frozenset:
        """Transfer for a move/drop/return of place p."""
        S2 = {q for q in S if not is_prefix(p, q)}
        # find the deepest owning ancestor on p's chain and split it
        chain = _prefix_chain(p)  # root ... p
        anc = None
        for q in chain[:-1]:
            if q in S2:
                anc = q  # keep scanning: deepest wins
        if anc is not None:
            S2.discard(anc)
            i = chain.index(anc)
            for child in chain[i + 1:]:
                if isinstance(child, Field):
                    for sib in self.children(child.base, mode):
                        if sib != child:
                            S2.add(sib)
                elif isinstance(child, Deref):
                    S2.add(child.base)  # the pointer cell stays owned
                # Downcast: the payload is everything; nothing survives
        return self.normalize(S2, mode)

    def meet(self, S1: frozenset, S2: frozenset, mode: str = "own") -> frozenset:
        cands = set(S1) | set(S2)
        out = {p for p in cands
               if self.covered(S1, p, mode) and self.covered(S2, p, mode)}
        return self.normalize(out, mode)

    def union(self, S1: frozenset, S2: frozenset, mode: str = "own") -> frozenset:
        return self.normalize(set(S1) | set(S2), mode)


def _prefix_chain(p: Place) -> list[Place]:
    out = []
    cur = p
    while True:
        out.append(cur)
        if isinstance(cur, Var):
            break
        cur = cur.base
    out.reverse()
    return out


# ---------------------------------------------------------------------------
# Transfers


def _expr_reads_moves(e: Expr):
    """(reads, moves, tagchecks) of one expression, in evaluation order."""
    reads, moves, tags = [], [], []

    def walk(e):
        if isinstance(e, Const):
            return
        if isinstance(e, ReadPlace):
            reads.append(e.place)
        elif isinstance(e, Move):
            moves.append(e.place)
        elif isinstance(e, CheckTag):
            tags.append(e.place)
        elif isinstance(e, Unary):
            walk(e.operand)
        elif isinstance(e, Binary):
            walk(e.left)
            walk(e.right)
        else:
            raise TypeError(e)

    walk(e)
    return reads, moves, tags


def step_own(U: Places, S: frozenset, node: CfgNode) -> frozenset:
    k, s = node.kind, node.stmt
    if k in ("branch", "exit"):
        return S
    if k == "stmt":
        if isinstance(s, (Break, Continue, Skip)):
            return S
        exprs = []
        if isinstance(s, (Assign, AssignBox)):
            exprs = [s.expr]
        elif isinstance(s, AssignVariant):
            exprs = [s.expr] if s.expr is not None else []
        for e in exprs:
            _, moves, _ = _expr_reads_moves(e)
            for mp in moves:
                if U.trackable(mp) and U.resource(mp):
                    S = U.remove_full(S, mp)
        dest = s.place
        if U.trackable(dest) and U.resource(dest):
            S = U.add_full(S, dest)
        return S
    if k == "call":
        for a in s.args:
            _, moves, _ = _expr_reads_moves(a)
            for mp in moves:
                if U.trackable(mp) and U.resource(mp):
                    S = U.remove_full(S, mp)
        return S
    if k == "callret":
        if s.dest is not None and U.trackable(s.dest) and U.resource(s.dest):
            S = U.add_full(S, s.dest)
        return S
    if k == "drop":
        p = s.place
        if U.trackable(p):
            S = U.remove_full(S, p)
        return S
    if k == "return":
        if s.place is not None and U.trackable(s.place):
            S = U.remove_full(S, s.place)
        return S
    raise ValueError(k)


def step_init(U: Places, S: frozenset, node: CfgNode) -> frozenset:
    k, s = node.kind, node.stmt
    if k == "stmt" and isinstance(s, (Assign, AssignBox, AssignVariant)):
        if U.trackable(s.place):
            return U.add_full(S, s.place, mode="init")
        return S
    if k == "callret" and s.dest is not None and U.trackable(s.dest):
        return U.add_full(S, s.dest, mode="init")
    return S


def analyze(cenv, fn: InternalFn, cfg: Optional[Cfg] = None) -> dict:
    """Must-own state at each label's entry."""
    cfg = cfg or build_cfg(fn)
    U = Places(cenv, fn)
    succs = {n.label: n.succs for n in cfg}
    return kildall(succs, cfg.entry, U.entry_own(),
                   lambda l, st: step_own(U, st, cfg.nodes[l]),
                   lambda a, b: U.meet(a, b))


def may_analyze(cenv, fn: InternalFn, cfg: Optional[Cfg] = None) -> dict:
    cfg = cfg or build_cfg(fn)
    U = Places(cenv, fn)
    succs = {n.label: n.succs for n in cfg}
    return kildall(succs, cfg.entry, U.entry_own(),
                   lambda l, st: step_own(U, st, cfg.nodes[l]),
                   lambda a, b: U.union(a, b))


def init_analyze(cenv, fn: InternalFn, cfg: Optional[Cfg] = None) -> dict:
    cfg = cfg or build_cfg(fn)
    U = Places(cenv, fn)
    succs = {n.label: n.succs for n in cfg}
    return kildall(succs, cfg.entry, U.entry_init(),
                   lambda l, st: step_init(U, st, cfg.nodes[l]),
                   lambda a, b: U.meet(a, b, mode="init"))


# ---------------------------------------------------------------------------
# Checking


@dataclass
class OwnError:
    code: str  # OWN001..OWN004
    kind: str
    fn: str
    label: int
    place: str
    message: str

    def to_diagnostic(self, file: str) -> Diagnostic:
        return Diagnostic(self.code, f"{self.fn}:L{self.label}: {self.message}", file)


KINDS = {
    "OWN001": "use-of-moved",
    "OWN002": "move-of-moved",
    "OWN003": "drop-target-unknown",
    "OWN004": "uninitialized-use",
}


@dataclass
class FnReport:
    fn: str
    cfg: Cfg
    own: dict
    may: dict
    init: dict
    errors: list


class _Checker:
    def __init__(self, cenv, fn: InternalFn):
        self.U = Places(cenv, fn)
        self.fn = fn
        self.cfg = build_cfg(fn)
        self.own = analyze(cenv, fn, self.cfg)
        self.may = may_analyze(cenv, fn, self.cfg)
        self.init = init_analyze(cenv, fn, self.cfg)
        self.errors: list[OwnError] = []

    def err(self, code, label, place, msg):
        self.errors.append(OwnError(code, KINDS[code], self.fn.name, label,
                                    place_str(place), msg))

    def run(self) -> FnReport:
        for node in self.cfg:
            own = self.own[node.label]
            init = self.init[node.label]
            if own is BOTTOM:
                continue  # unreachable
            self.check_node(node, own, init)
        return FnReport(self.fn.name, self.cfg, self.own, self.may,
                        self.init, self.errors)

    # -- per-node ------------------------------------------------------------

    def check_node(self, node: CfgNode, own, init):
        U, l = self.U, node.label
        k, s = node.kind, node.stmt
        st = {"own": own, "init": init}  # threaded through intra-node steps

        def check_read(q):
            # reads need a valid pointer chain and initialized bytes
            for b in U.deref_bases(q):
                if not U.covered(st["own"], b):
                    self.err("OWN001", l, q,
                             f"read of '{place_str(q)}' dereferences "
                             f"'{place_str(b)}' which is not owned")
                    return
            if not U.covered(st["init"], q, mode="init"):
                self.err("OWN004", l, q,
                         f"'{place_str(q)}' may be used uninitialized")

        def check_move(q):
            if not U.resource(q):
                check_read(q)  # moving a copy value is just a read
                return
            if not U.trackable(q):
                self.err("OWN002", l, q,
                         f"cannot move '{place_str(q)}' out of the heap; "
                         f"move its owning box instead")
                return
            if not U.covered(st["init"], q, mode="init"):
                self.err("OWN004", l, q,
                         f"'{place_str(q)}' may be moved before initialization")
            elif not U.covered(st["own"], q):
                self.err("OWN002", l, q,
                         f"move of '{place_str(q)}' which is not owned here")
            st["own"] = U.remove_full(st["own"], q)

        def check_tag(q):
            check_read(q)
            if not U.covered(st["own"], q):
                self.err("OWN001", l, q,
                         f"tag test on '{place_str(q)}' which is not owned")

        def check_expr(e):
            reads, moves, tags = _expr_reads_moves(e)
            for q in reads:
                check_read(q)
            for q in tags:
                check_tag(q)
            for q in moves:
                check_move(q)

        def check_dest(dest):
            for b in U.deref_bases(dest):
                if not U.covered(st["own"], b):
                    self.err("OWN001", l, dest,
                             f"store through '{place_str(b)}' which is not owned")
                if not U.covered(st["init"], b, mode="init"):
                    self.err("OWN004", l, dest,
                             f"store through possibly uninitialized "
                             f"'{place_str(b)}'")
            for b in U.downcast_bases(dest):
                if not U.covered(st["init"], b, mode="init"):
                    self.err("OWN004", l, dest,
                             f"store into variant of possibly uninitialized "
                             f"'{place_str(b)}'")

        if k == "branch":
            check_expr(s)
        elif k == "stmt":
            if isinstance(s, (Skip, Break, Continue)):
                return
            if isinstance(s, (Assign, AssignBox)):
                check_expr(s.expr)
                check_dest(s.place)
            elif isinstance(s, AssignVariant):
                if s.expr is not None:
                    check_expr(s.expr)
                check_dest(s.place)
        elif k == "call":
            for a in s.args:
                check_expr(a)
        elif k == "callret":
            if s.dest is not None:
                check_dest(s.dest)
        elif k == "drop":
            self.check_drop(node, s, own, init)
        elif k == "return":
            if s.place is not None:
                check_read(s.place)
                if U.resource(s.place):
                    if not U.trackable(s.place) or not U.covered(own, s.place):
                        self.err("OWN002", l, s.place,
                                 f"return moves '{place_str(s.place)}' "
                                 f"which is not owned")
            # leak check: nothing may remain possibly-owned
            may = self.may[l]
            if may is not BOTTOM:
                rest = may
                if s.place is not None and U.trackable(s.place):
                    rest = U.remove_full(rest, s.place, mode="own")
                if rest:
                    q = sorted(rest, key=place_str)[0]
                    self.err("OWN003", l, q,
                             f"'{place_str(q)}' may still be owned at return")

    def check_drop(self, node: CfgNode, s, own, init):
        U, l = self.U, node.label
        p = s.place
        if not U.trackable(p):
            self.err("OWN003", l, p, f"cannot drop untrackable '{place_str(p)}'")
            return
        if not U.resource(p):
            self.err("OWN003", l, p, f"drop of non-resource '{place_str(p)}'")
            return
        cls = self.classify_drop(node.label, p)
        if cls == "mixed":
            self.err("OWN003", l, p,
                     f"ownership of '{place_str(p)}' is not statically "
                     f"decidable as a unit here")

    def drop_scope(self, p: Place) -> list[Place]:
        """Trackable resource places whose state a drop of p commits to."""
        out = [p]
        t = self.U.type_of(p)
        if isinstance(t, BoxType):
            hop = Deref(p)
            if self.U.trackable(hop) and owns_resources(self.U.cenv, t.elem):
                out.append(hop)
        return out

    def classify_drop(self, label: int, p: Place) -> str:
        """static | dead | flagged | mixed, from the must/may states."""
        own = self.own[label]
        may = self.may[label]
        states = []
        for q in self.drop_scope(p):
            if self.U.covered(own, q):
                states.append("full")
            elif not _may_own(self.U, may, q):
                states.append("empty")
            else:
                states.append("unknown")
        if all(st == "full" for st in states):
            return "static"
        if all(st == "empty" for st in states):
            return "dead"
        if all(st == "unknown" for st in states) and self.whole_place_only(p):
            return "flagged"
        return "mixed"

    def whole_place_only(self, p: Place) -> bool:
        """True if every move/assign that touches p targets p (or an ancestor)
        whole, so one flag can gate it."""
        ok = True

        def visit(q: Place):
            nonlocal ok
            if is_prefix(p, q) and q != p:
                ok = False

        def expr(e):
            if isinstance(e, (Move, ReadPlace, CheckTag)):
                if isinstance(e, Move):
                    visit(e.place)
            elif isinstance(e, Unary):
                expr(e.operand)
            elif isinstance(e, Binary):
                expr(e.left)
                expr(e.right)

        def walk(s):
            if isinstance(s, Seq):
                for x in s.stmts:
                    walk(x)
            elif isinstance(s, If):
                expr(s.cond)
                walk(s.then)
                walk(s.els)
            elif isinstance(s, Loop):
                walk(s.body)
            elif isinstance(s, (Assign, AssignBox)):
                visit(s.place)
                expr(s.expr)
            elif isinstance(s, AssignVariant):
                visit(s.place)
                if s.expr is not None:
                    expr(s.expr)
            elif isinstance(s, Call):
                if s.dest is not None:
                    visit(s.dest)
                for a in s.args:
                    expr(a)

        walk(self.fn.body)
        return ok


def _may_own(U: Places, may, q: Place) -> bool:
    """Could any part of q's subtree be owned under the may-state?
    An ancestor box across a Deref boundary does not vouch for contents."""
    return U.covered(may, q) or any(is_prefix(q, x) and x != q for x in may)


def check_module(m: Module) -> tuple[list[Diagnostic], dict]:
    """Returns (diagnostics, per-function reports). Empty diagnostics means
    the module passes ownership checking."""
    diags: list[Diagnostic] = []
    reports: dict[str, FnReport] = {}
    for f in m.internal_functions():
        rep = _Checker(m.composites, f).run()
        reports[f.name] = rep
        for e in rep.errors:
            diags.append(e.to_diagnostic(m.file))
    return diags, reports


def ownst_json(m: Module) -> dict:
    """--emit-ownst payload: per function, label -> sorted place strings."""
    out = {}
    for f in m.internal_functions():
        cfg = build_cfg(f)
        states = analyze(m.composites, f, cfg)
        fn_out = {}
        for label in sorted(states):
            st = states[label]
            fn_out[f"L{label}"] = ("unreachable" if st is BOTTOM
                                   else sorted(place_str(p) for p in st))
        out[f.name] = fn_out
    return out
