"""Linking interpreted modules with native hosts, plus the safety layer:
boundary-event monitoring against ownership and user contracts, and a
bounded exhaustive explorer.

A linked run lets an Owlang module and a table of native host functions
call each other freely. Every call that crosses the boundary is recorded
as a pair of events (query, reply) carrying memory snapshots, so monitors
can be evaluated after the fact:

  - `monitor_rsown` enforces the ownership discipline at the boundary:
    arguments carry a duplicate-free, well-typed footprint; the callee may
    touch only that footprint (plus fresh blocks); the result's footprint
    contains only transferred or fresh blocks and is well-typed again.
  - `ContractSpec` expresses per-function pre/postconditions with a world
    chosen at call time; specs compose by conjunction (`conjoin`) and by
    callee dispatch (`disjoint_union`).

`explore` closes the loop: it reruns a linked program over every declared
host choice (e.g. rand in {true, false}) up to a step bound and reports
Safe, a stuck/memory-error witness, and per-path leak audits.
"""

from __future__ import annotations

import importlib
from dataclasses import dataclass, field

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib
from typing import Callable, Optional

from .ast import (
    BaseType, BoxType, EnumType, ExternFn, InternalFn, Module, StructType,
    Type, UNIT, owns_resources,
)
from .memory import (
    IllFormed, Layout, MemFault, Memory, VBool, VBytes, VFloat32, VInt32,
    VPtr, VUnit, Value, footprint, unchanged_on, wt_val,
)
from .sem import (
    Query, Reply, decodes_at, fn_signature, init_lts, leak_report, resume,
    step,
)


# ---------------------------------------------------------------------------
# Boundary events and verdicts


@dataclass(frozen=True)
class BoundaryEvent:
    """One half of a cross-boundary call. The query/reply carry memory
    snapshots taken at the boundary, so monitors can replay them later."""

    kind: str  # "query" | "reply"
    query: Query
    reply: Optional[Reply]
    index: int
    caller: str  # "module" | "host"


@dataclass(frozen=True)
class Violation:
    side: str   # "caller" | "callee"
    rule: str   # dup-footprint | args-not-wt | frame-touched |
                # stale-fresh-block | ret-not-wt | pre | post
    index: int  # event index
    message: str = ""

    def __str__(self):
        return f"{self.rule} by {self.side} at event {self.index}: {self.message}"


# ---------------------------------------------------------------------------
# Contracts


@dataclass(frozen=True)
class ContractSpec:
    """A safety interface: a world picked per call, a precondition on the
    query, a postcondition on the reply. `governs` limits which callees the
    spec claims (None claims every call)."""

    name: str
    world: str  # human description of the world type
    choose: Callable[[Query], object]
    pre: Callable[[object, Query], tuple[bool, str]]
    post: Callable[[object, Reply], tuple[bool, str]]
    governs: Optional[frozenset] = None


TOP = ContractSpec(
    name="top", world="unit",
    choose=lambda q: None,
    pre=lambda w, q: (True, ""),
    post=lambda w, r: (True, ""),
)


def check_contract(spec: ContractSpec, event: BoundaryEvent, worlds: list) -> tuple[bool, str]:
    """Evaluate one event; `worlds` threads the chosen world from each call
    to its matching return (callers keep one list per monitored trace)."""
    if event.kind == "query":
        w = spec.choose(event.query)
        worlds.append(w)
        return spec.pre(w, event.query)
    w = worlds.pop()
    return spec.post(w, event.reply)


def monitor_contract(spec: ContractSpec, trace: list) -> Optional[Violation]:
    """Run a spec over a whole trace; None means every event passed."""
    worlds: list = []
    for ev in trace:
        ok, msg = check_contract(spec, ev, worlds)
        if not ok:
            side = "caller" if ev.kind == "query" else "callee"
            rule = "pre" if ev.kind == "query" else "post"
            return Violation(side, rule, ev.index, msg)
    return None


def conjoin(a: ContractSpec, b: ContractSpec) -> ContractSpec:
    """Both interfaces must hold; worlds pair up."""
    def pre(w, q):
        ok, msg = a.pre(w[0], q)
        if not ok:
            return False, msg
        return b.pre(w[1], q)

    def post(w, r):
        ok, msg = a.post(w[0], r)
        if not ok:
            return False, msg
        return b.post(w[1], r)

    return ContractSpec(
        name=f"({a.name} and {b.name})", world=f"{a.world} x {b.world}",
        choose=lambda q: (a.choose(q), b.choose(q)), pre=pre, post=post,
    )


def disjoint_union(a: ContractSpec, b: ContractSpec) -> ContractSpec:
    """Dispatch by callee: calls a claims go to a, the rest to b."""
    def _pick(q) -> bool:
        if a.governs is not None and q.callee in a.governs:
            return True
        if b.governs is not None and q.callee in b.governs:
            return False
        return a.governs is None

    def choose(q):
        return ("a", a.choose(q)) if _pick(q) else ("b", b.choose(q))

    def pre(w, q):
        tag, inner = w
        return (a if tag == "a" else b).pre(inner, q)

    def post(w, r):
        tag, inner = w
        return (a if tag == "a" else b).post(inner, r)

    governs = None
    if a.governs is not None and b.governs is not None:
        governs = a.governs | b.governs
    return ContractSpec(
        name=f"({a.name} or {b.name})", world=f"{a.world} + {b.world}",
        choose=choose, pre=pre, post=post, governs=governs,
    )


# ---------------------------------------------------------------------------
# The ownership boundary monitor


@dataclass(frozen=True)
class RsownWorld:
    """What a call hands over: the transferred blocks and the memory as it
    looked at the call, for the frame comparison on return."""

    footprint: Optional[tuple]  # None when the arguments could not be walked
    snapshot: Memory
    bad_arg: str = ""


def _transferred(layout: Layout, q: Query) -> RsownWorld:
    fp: list = []
    params, _ = q.sig
    for i, (v, t) in enumerate(zip(q.args, params)):
        if not owns_resources(layout.cenv, t):
            continue
        try:
            afp = footprint(q.memory, layout, t, v)
        except IllFormed as e:
            return RsownWorld(None, q.memory, f"argument {i}: {e}")
        if not wt_val(q.memory, layout, t, afp, v):
            return RsownWorld(None, q.memory, f"argument {i} is not well-typed for {t}")
        fp.extend(afp)
    return RsownWorld(tuple(fp), q.memory)


def _rsown_pre(layout: Layout, w: RsownWorld, q: Query) -> tuple[bool, str]:
    if w.footprint is None:
        return False, f"args-not-wt: {w.bad_arg}"
    if len(set(w.footprint)) != len(w.footprint):
        return False, "dup-footprint: arguments share a block"
    return True, ""


def _rsown_post(layout: Layout, w: RsownWorld, q: Query, r: Reply) -> tuple[bool, str]:
    if w.footprint is None:
        return True, ""  # already rejected at the query
    exclude = set(w.footprint)
    if not unchanged_on(w.snapshot, r.memory, w.snapshot.all_bytes_except(exclude)):
        return False, "frame-touched: memory outside the transferred footprint changed"
    _, ret = q.sig
    if not decodes_at(r.value, ret):
        return False, f"ret-not-wt: reply {r.value!r} does not decode at {ret}"
    if owns_resources(layout.cenv, ret):
        try:
            rfp = footprint(r.memory, layout, ret, r.value)
        except IllFormed as e:
            return False, f"ret-not-wt: {e}"
        if not wt_val(r.memory, layout, ret, rfp, r.value):
            return False, f"ret-not-wt: result is not well-typed for {ret}"
        for b in rfp:
            if b not in exclude and w.snapshot.valid_block(b):
                return False, f"stale-fresh-block: block {b} was live at the call but not transferred"
    return True, ""


def monitor_rsown(trace: list, layout: Layout) -> Optional[Violation]:
    """Check a boundary trace against the ownership discipline. Returns the
    first violation (rule named after the broken clause) or None."""
    stack: list[tuple[BoundaryEvent, RsownWorld]] = []
    for ev in trace:
        if ev.kind == "query":
            w = _transferred(layout, ev.query)
            stack.append((ev, w))
            ok, msg = _rsown_pre(layout, w, ev.query)
            if not ok:
                rule, _, detail = msg.partition(": ")
                return Violation("caller", rule, ev.index, detail)
        else:
            _, w = stack.pop()
            ok, msg = _rsown_post(layout, w, ev.query, ev.reply)
            if not ok:
                rule, _, detail = msg.partition(": ")
                return Violation("callee", rule, ev.index, detail)
    return None


def rsown_contract(layout: Layout) -> ContractSpec:
    """rsown packaged for conjoin/disjoint_union: the post closes over the
    query by smuggling it through the world."""
    def choose(q):
        return (_transferred(layout, q), q)

    return ContractSpec(
        name="rsown", world="transferred footprint + memory snapshot",
        choose=choose,
        pre=lambda w, q: _rsown_pre(layout, w[0], q),
        post=lambda w, r: _rsown_post(layout, w[0], w[1], r),
    )


# ---------------------------------------------------------------------------
# Streaming monitors
#
# Snapshot-based monitoring clones the whole memory at every boundary event,
# which swamps long runs. These observers ride along with the run instead:
# memory version counters tell them which blocks were written inside a call
# window, so the frame rule needs no copies at all. The snapshot monitor
# above stays as the reference oracle; agreement is pinned by tests. The one
# semantic difference is deliberate: a write outside the footprint counts
# even if it happens to store back the same bytes, since the discipline is
# about access, not observed change.


class RsownMonitor:
    """Zero-copy ownership monitor; attach via `LinkedLts.run(monitors=...)`.
    Keeps the first violation and stays quiet afterwards."""

    def __init__(self, layout: Layout):
        self.layout = layout
        self.stack: list[tuple] = []  # (transferred block set, version, world)
        self.violation: Optional[Violation] = None
        self.index = 0

    def on_query(self, q: Query):
        i = self.index
        self.index += 1
        w = _transferred(self.layout, q)
        self.stack.append((set(w.footprint or ()), q.memory.version, w))
        if self.violation is None:
            ok, msg = _rsown_pre(self.layout, w, q)
            if not ok:
                rule, _, detail = msg.partition(": ")
                self.violation = Violation("caller", rule, i, detail)

    def on_reply(self, q: Query, r: Reply):
        i = self.index
        self.index += 1
        fp, v0, w = self.stack.pop()
        if self.violation is not None:
            return
        mem = r.memory
        for b, blk in mem.blocks.items():
            if blk.birth <= v0 and blk.mtime > v0 and b not in fp:
                self.violation = Violation(
                    "callee", "frame-touched", i,
                    f"block {b} was written outside the transferred footprint")
                return
        _, ret = q.sig
        if not decodes_at(r.value, ret):
            self.violation = Violation(
                "callee", "ret-not-wt", i, f"reply {r.value!r} does not decode at {ret}")
            return
        if owns_resources(self.layout.cenv, ret):
            try:
                rfp = footprint(mem, self.layout, ret, r.value)
            except IllFormed as e:
                self.violation = Violation("callee", "ret-not-wt", i, str(e))
                return
            if not wt_val(mem, self.layout, ret, rfp, r.value):
                self.violation = Violation(
                    "callee", "ret-not-wt", i, f"result is not well-typed for {ret}")
                return
            for b in rfp:
                if b not in fp and mem.blocks[b].birth <= v0:
                    self.violation = Violation(
                        "callee", "stale-fresh-block", i,
                        f"block {b} was live at the call but not transferred")
                    return


class ContractMonitor:
    """Streams a ContractSpec over the boundary; value-level only."""

    def __init__(self, spec: ContractSpec):
        self.spec = spec
        self.worlds: list = []
        self.violation: Optional[Violation] = None
        self.index = 0

    def on_query(self, q: Query):
        i = self.index
        self.index += 1
        ok, msg = check_contract(self.spec, BoundaryEvent("query", q, None, i, ""), self.worlds)
        if not ok and self.violation is None:
            self.violation = Violation("caller", "pre", i, msg)

    def on_reply(self, q: Query, r: Reply):
        i = self.index
        self.index += 1
        ok, msg = check_contract(self.spec, BoundaryEvent("reply", q, r, i, ""), self.worlds)
        if not ok and self.violation is None:
            self.violation = Violation("callee", "post", i, msg)


# ---------------------------------------------------------------------------
# Hosts


@dataclass
class HostFn:
    """A native function. Either `impl(args, memory, ctx) -> (value, memory)`
    or a finite `choices` tuple of pure return values (the explorer forks on
    those; plain runs cycle through them)."""

    name: str
    impl: Optional[Callable] = None
    choices: Optional[tuple] = None

    def __post_init__(self):
        assert (self.impl is None) != (self.choices is None), \
            f"{self.name}: exactly one of impl/choices"


class HostEnv:
    def __init__(self, fns: dict[str, HostFn]):
        self.fns = dict(fns)

    def __contains__(self, name: str) -> bool:
        return name in self.fns


class HostCtx:
    """Handed to host implementations: `call` re-enters the linked program
    (crossing back into the module is monitored), `layout` describes the
    module's composites for direct memory work."""

    def __init__(self, run: "_Run"):
        self._run = run
        self.layout = run.linked.layout

    def call(self, name: str, args: list) -> Value:
        return self._run.call_from_host(name, args).value


# ---------------------------------------------------------------------------
# Linking


class UnresolvedExternal(Exception):
    pass


class _NeedChoice(Exception):
    def __init__(self, options: tuple):
        super().__init__("choice needed")
        self.options = options


class _Halted(Exception):
    def __init__(self, kind: str, reason=None, err=None, pc=None):
        super().__init__(kind)
        self.kind = kind
        self.reason = reason
        self.err = err
        self.pc = pc


class _OutOfBudget(Exception):
    pass


@dataclass
class LinkOutcome:
    kind: str  # "final" | "stuck" | "memerr" | "depth"
    value: Optional[Value] = None
    memory: Optional[Memory] = None
    reason: Optional[str] = None
    err: object = None
    pc: object = None
    steps: int = 0
    max_boundary_depth: int = 0
    events: Optional[list] = None


class LinkedLts:
    """An Owlang module and a host table joined at their call boundary."""

    def __init__(self, mod: Module, host: HostEnv):
        self.mod = mod
        self.host = host
        self.layout = Layout(mod.composites)
        clash = [n for n in host.fns if isinstance(mod.get_fn(n), InternalFn)]
        if clash:
            raise ValueError(f"host redefines module functions: {clash}")

    def open_names(self) -> set:
        """Extern names the host does not provide."""
        return {f.name for f in self.mod.functions.values()
                if isinstance(f, ExternFn) and f.name not in self.host}

    def run(self, callee: str, args: tuple, memory: Memory, depth: int,
            script: Optional[list] = None, record: bool = False,
            monitors: tuple = ()) -> LinkOutcome:
        """Execute one incoming query against the linked program.

        `script` pins host choices in call order (exhausting it raises the
        explorer's fork signal); without it, choice functions cycle through
        their options. With `record`, boundary events are collected (each
        carrying a memory snapshot; expensive on long runs). `monitors` are
        streaming observers (`RsownMonitor`, `ContractMonitor`) notified at
        every boundary crossing; inspect their `.violation` afterwards."""
        r = _Run(self, depth, script, record, monitors)
        try:
            value, mem = r.entry(callee, list(args), memory)
        except _Halted as h:
            return LinkOutcome(h.kind, reason=h.reason, err=h.err, pc=h.pc,
                               steps=r.steps, max_boundary_depth=r.max_depth,
                               events=r.events)
        except _OutOfBudget:
            return LinkOutcome("depth", steps=r.steps,
                               max_boundary_depth=r.max_depth, events=r.events)
        return LinkOutcome("final", value=value, memory=mem, steps=r.steps,
                           max_boundary_depth=r.max_depth, events=r.events)


def link(mod: Module, host: HostEnv) -> LinkedLts:
    return LinkedLts(mod, host)


class _Run:
    def __init__(self, linked: LinkedLts, depth: int, script, record: bool,
                 monitors: tuple = ()):
        self.linked = linked
        self.budget = depth
        self.steps = 0
        self.script = script
        self.cursor = 0
        self.rr: dict[str, int] = {}
        self.events: Optional[list] = [] if record else None
        self.monitors = monitors
        self.depth = 0
        self.max_depth = 0

    def tick(self):
        if self.budget <= 0:
            raise _OutOfBudget()
        self.budget -= 1
        self.steps += 1

    # -- dispatch ------------------------------------------------------------

    def entry(self, callee: str, args: list, memory: Memory):
        if callee in self.linked.host:
            rep = self.host_call(Query(callee, ((), UNIT), tuple(args), memory))
            return rep.value, rep.memory
        f = self.linked.mod.get_fn(callee)
        if not isinstance(f, InternalFn):
            raise ValueError(f"unknown entry {callee!r}")
        rep = self.module_call(Query(callee, fn_signature(f), tuple(args), memory))
        return rep.value, rep.memory

    def call_from_host(self, name: str, args: list) -> Reply:
        f = self.linked.mod.get_fn(name)
        if isinstance(f, InternalFn):
            q = Query(name, fn_signature(f), tuple(args), self._mem)
            return self.boundary(q, caller="host", target="module")
        if name in self.linked.host:
            return self.host_call(Query(name, ((), UNIT), tuple(args), self._mem))
        raise UnresolvedExternal(name)

    def boundary(self, q: Query, caller: str, target: str) -> Reply:
        self.depth += 1
        self.max_depth = max(self.max_depth, self.depth)
        if self.events is not None:
            snap = q.memory.clone()
            self.events.append(BoundaryEvent(
                "query", Query(q.callee, q.sig, q.args, snap), None,
                len(self.events), caller))
        for mon in self.monitors:
            mon.on_query(q)
        reply = self.module_call(q) if target == "module" else self.host_call(q)
        if self.events is not None:
            snap = reply.memory.clone()
            self.events.append(BoundaryEvent(
                "reply", q, Reply(reply.value, snap), len(self.events), caller))
        for mon in self.monitors:
            mon.on_reply(q, reply)
        self.depth -= 1
        return reply

    # -- component execution ---------------------------------------------------

    def module_call(self, q: Query) -> Reply:
        s = init_lts(self.linked.mod, q)
        if s is None:
            raise ValueError(f"{q.callee!r} is not callable")
        self._mem = s.memory
        while True:
            if s.mode == "running":
                self.tick()
                step(s)
            elif s.mode == "awaiting":
                pq, _ = s.pending
                if pq.callee not in self.linked.host:
                    raise UnresolvedExternal(pq.callee)
                rep = self.boundary(pq, caller="module", target="host")
                self.tick()
                resume(s, rep)
                self._mem = s.memory
            elif s.mode == "final":
                return s.reply
            elif s.mode == "stuck":
                raise _Halted("stuck", reason=s.reason, pc=s.last_pc)
            else:
                raise _Halted("memerr", err=s.err, pc=s.last_pc)

    def host_call(self, q: Query) -> Reply:
        fn = self.linked.host.fns[q.callee]
        self.tick()
        if fn.choices is not None:
            return Reply(self.take_choice(q.callee, fn.choices), q.memory)
        self._mem = q.memory
        try:
            value, mem = fn.impl(list(q.args), q.memory, HostCtx(self))
        except MemFault as e:
            raise _Halted("memerr", err=e.err, pc=(q.callee, 0))
        self._mem = mem
        return Reply(value, mem)

    def take_choice(self, name: str, options: tuple) -> Value:
        if self.script is None:
            i = self.rr.get(name, 0)
            self.rr[name] = i + 1
            return options[i % len(options)]
        if self.cursor < len(self.script):
            v = self.script[self.cursor]
            self.cursor += 1
            return v
        raise _NeedChoice(tuple(options))


# ---------------------------------------------------------------------------
# Bounded exploration


@dataclass
class SafetyVerdict:
    verdict: str  # "safe" | "stuck" | "memerr"
    depth: int
    witness: Optional[dict] = None
    leaks: list = field(default_factory=list)  # [{"choices": [...], "blocks": [...]}]
    finals: list = field(default_factory=list)  # [{"choices": [...], "value": ...}]
    states_visited: int = 0
    paths: int = 0
    truncated: int = 0

    def to_json(self) -> dict:
        out = {"verdict": self.verdict, "leaks": self.leaks,
               "statesVisited": self.states_visited, "depth": self.depth,
               "paths": self.paths, "truncated": self.truncated,
               "finals": self.finals}
        if self.witness is not None:
            out["witness"] = self.witness
        return out


def value_json(v: Value):
    if isinstance(v, VInt32):
        return v.n
    if isinstance(v, VBool):
        return v.b
    if isinstance(v, VFloat32):
        return v.f
    if isinstance(v, VUnit):
        return None
    if isinstance(v, VPtr):
        return {"block": v.block, "off": v.off}
    if isinstance(v, VBytes):
        return {"bytes": len(v.cells)}
    return {"undef": True}


def explore(linked: LinkedLts, callee: str, args: tuple = (), depth: int = 100_000,
            mem_factory: Callable[[], Memory] = Memory,
            record: bool = False) -> tuple[SafetyVerdict, list]:
    """Bounded exhaustive run over every combination of host choices.

    The program must be closed (no unresolved externals). Each path reruns
    from a fresh memory with one more choice pinned; Safe means no path
    reached a stuck state or memory error within the bound. Returns the
    verdict and the boundary traces of completed paths (empty unless
    `record`)."""
    opens = linked.open_names()
    if opens:
        raise ValueError(f"cannot explore an open program; unresolved: {sorted(opens)}")
    frontier: list[tuple] = [()]
    verdict = SafetyVerdict("safe", depth)
    traces: list[list] = []
    while frontier:
        prefix = frontier.pop()
        try:
            out = linked.run(callee, args, mem_factory(), depth,
                             script=list(prefix), record=record)
        except _NeedChoice as c:
            frontier.extend(prefix + (opt,) for opt in c.options)
            continue
        verdict.states_visited += out.steps
        verdict.paths += 1
        choices = [value_json(v) for v in prefix]
        if out.kind == "final":
            blocks = _leak_audit(linked, callee, out)
            if blocks:
                verdict.leaks.append({"choices": choices, "blocks": blocks})
            verdict.finals.append({"choices": choices, "value": value_json(out.value)})
            if record and out.events is not None:
                traces.append(out.events)
        elif out.kind == "depth":
            verdict.truncated += 1
        else:
            verdict.verdict = out.kind
            verdict.witness = {
                "choices": choices,
                "pc": list(out.pc) if out.pc else None,
                "reason": out.reason if out.kind == "stuck" else str(out.err),
            }
            return verdict, traces
    return verdict, traces


def _leak_audit(linked: LinkedLts, callee: str, out: LinkOutcome) -> list:
    live = set(out.memory.leaked_heap_blocks())
    f = linked.mod.get_fn(callee)
    ret = f.ret if f is not None else None
    if ret is not None and owns_resources(linked.mod.composites, ret):
        try:
            live -= set(footprint(out.memory, linked.layout, ret, out.value))
        except IllFormed:
            pass
    return sorted(live)


# ---------------------------------------------------------------------------
# Host manifests


def parse_type(text: str, cenv) -> Type:
    """Owlang type syntax as used in manifests: scalars, Box<...>, and
    declared composite names."""
    t = text.strip()
    base = {"unit": UNIT, "bool": BaseType("bool"), "i32": BaseType("i32"),
            "f32": BaseType("f32")}
    if t in base:
        return base[t]
    if t.startswith("Box<") and t.endswith(">"):
        return BoxType(parse_type(t[4:-1], cenv))
    d = cenv.get(t)
    if d is None:
        raise ValueError(f"unknown type {text!r}")
    return StructType(t) if d.kind == "struct" else EnumType(t)


def _coerce(raw, t: Type) -> Value:
    if isinstance(t, BaseType):
        if t.name == "bool" and isinstance(raw, bool):
            return VBool(raw)
        if t.name == "i32" and isinstance(raw, int) and not isinstance(raw, bool):
            return VInt32(raw)
        if t.name == "f32" and isinstance(raw, (int, float)):
            return VFloat32(float(raw))
    raise ValueError(f"cannot use {raw!r} as {t}")


@dataclass
class Manifest:
    env: HostEnv
    contracts: list  # ContractSpecs to monitor
    entry: Optional[str]
    rsown: bool  # monitor the ownership discipline too


def load_manifest(path: str, mod: Module) -> Manifest:
    """Read a host manifest: per-function native symbols or choice sets,
    monitor contracts, and an optional entry point.

    Choice values are coerced using the module's own extern declaration;
    declared signatures, when present, are validated against it."""
    with open(path, "rb") as f:
        data = tomllib.load(f)
    fns: dict[str, HostFn] = {}
    for name, spec in data.get("hosts", {}).items():
        decl = mod.get_fn(name)
        if "params" in spec or "ret" in spec:
            if not isinstance(decl, ExternFn):
                raise ValueError(f"{name}: no extern declaration to validate against")
            want_p = tuple(parse_type(x, mod.composites) for x in spec.get("params", []))
            want_r = parse_type(spec.get("ret", "unit"), mod.composites)
            have_p, have_r = fn_signature(decl)
            if (want_p, want_r) != (have_p, have_r):
                raise ValueError(f"{name}: manifest signature disagrees with the module")
        if "choices" in spec:
            if not isinstance(decl, ExternFn):
                raise ValueError(f"{name}: choices need an extern declaration for the type")
            vals = tuple(_coerce(x, decl.ret) for x in spec["choices"])
            fns[name] = HostFn(name, choices=vals)
        else:
            modname, _, sym = spec["symbol"].partition(":")
            impl = getattr(importlib.import_module(modname), sym)
            fns[name] = HostFn(name, impl=impl)
    contracts = []
    mon = data.get("monitor", {})
    for ref in mon.get("contracts", []):
        modname, _, sym = ref.partition(":")
        contracts.append(getattr(importlib.import_module(modname), sym))
    return Manifest(HostEnv(fns), contracts, data.get("entry"),
                    bool(mon.get("rsown", False)))
