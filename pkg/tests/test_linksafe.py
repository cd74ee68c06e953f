"""Linked-run tests: the hashmap driver end to end, boundary monitors on
well-behaved and broken hosts, contract composition, and the explorer."""

import pytest

from conftest import build_list

from owlang.ast import BoxType, CompositeEnv, I32, UNIT
from owlang.hosts import buks, std
from owlang.linksafe import (
    TOP, BoundaryEvent, ContractMonitor, HostEnv, HostFn, LinkedLts, Query,
    Reply, RsownMonitor, SafetyVerdict, UnresolvedExternal, check_contract,
    conjoin, disjoint_union, explore, link, load_manifest, monitor_contract,
    monitor_rsown, rsown_contract, value_json,
)
from owlang.memory import Layout, Memory, VBool, VInt32, VPtr, VUnit
from owlang.parser import parse_text
from owlang.sem import init_lts, resume, step


def load(path):
    return parse_text(open(path).read(), path)


@pytest.fixture(scope="module")
def hashmap_mod():
    return load("programs/hashmap.owl")


def hash_sig():
    return ((I32, I32), I32)


# ---------------------------------------------------------------------------
# The closed hashmap program


def test_hashmap_driver_matches_model(hashmap_mod):
    linked = link(hashmap_mod, buks.make_env())
    rs = RsownMonitor(linked.layout)
    ct = ContractMonitor(buks.bucket_checks)
    out = linked.run("hmap_main", (VInt32(40),), Memory(), 200_000, monitors=(rs, ct))
    assert out.kind == "final"
    assert out.value == VInt32(buks.expected_total(40))
    assert out.memory.leaked_heap_blocks() == []
    assert rs.violation is None
    assert ct.violation is None
    assert rs.index == ct.index and rs.index > 0


def test_hashmap_explore_safe_no_leaks(hashmap_mod):
    linked = link(hashmap_mod, buks.make_env())
    v, _ = explore(linked, "hmap_main", (VInt32(40),), depth=200_000)
    assert v.verdict == "safe"
    assert v.leaks == []
    assert v.truncated == 0
    assert v.paths == 1  # no choice functions: deterministic


def test_recorded_events_pair_up(hashmap_mod):
    linked = link(hashmap_mod, buks.make_env())
    out = linked.run("hmap_main", (VInt32(8),), Memory(), 50_000, record=True)
    kinds = [e.kind for e in out.events]
    assert kinds.count("query") == kinds.count("reply")
    assert monitor_rsown(out.events, linked.layout) is None
    assert monitor_contract(buks.bucket_checks, out.events) is None
    # every hash call the driver makes passes through the boundary
    assert sum(1 for e in out.events if e.kind == "query" and e.query.callee == "hash") == 16


# ---------------------------------------------------------------------------
# Broken hosts: one discipline clause each, streaming and snapshot monitors
# must agree on the rule


@pytest.mark.parametrize("make_env,rule", [
    (buks.make_bad_frame_env, "frame-touched"),
    (buks.make_bad_stale_env, "stale-fresh-block"),
    (buks.make_bad_ret_env, "ret-not-wt"),
])
def test_broken_hosts_flagged_with_rule(hashmap_mod, make_env, rule):
    linked = link(hashmap_mod, make_env())
    rs = RsownMonitor(linked.layout)
    out = linked.run("hmap_main", (VInt32(4),), Memory(), 50_000,
                     monitors=(rs,), record=True)
    assert rs.violation is not None
    assert rs.violation.rule == rule
    assert rs.violation.side == "callee"
    oracle = monitor_rsown(out.events, linked.layout)
    assert oracle is not None
    assert (oracle.rule, oracle.side, oracle.index) == \
        (rs.violation.rule, rs.violation.side, rs.violation.index)


def test_bad_range_host_rejected_by_contract(hashmap_mod):
    linked = link(hashmap_mod, buks.make_bad_range_env())
    rs = RsownMonitor(linked.layout)
    ct = ContractMonitor(buks.bucket_checks)
    out = linked.run("hmap_main", (VInt32(4),), Memory(), 50_000, monitors=(rs, ct))
    assert out.kind == "stuck"  # the module then divides by zero
    assert rs.violation is None  # ownership was never broken
    assert ct.violation is not None
    assert ct.violation.rule == "pre"
    assert ct.violation.side == "caller"
    assert "greater than 0" in ct.violation.message


# ---------------------------------------------------------------------------
# Contract specs as values


def test_bucket_range_pre_and_post():
    worlds = []
    bad = Query("hash", hash_sig(), (VInt32(3), VInt32(0)), Memory())
    ok, msg = check_contract(buks.bucket_range, BoundaryEvent("query", bad, None, 0, "host"), worlds)
    assert not ok and "greater than 0" in msg

    worlds = []
    good = Query("hash", hash_sig(), (VInt32(3), VInt32(8)), Memory())
    ok, _ = check_contract(buks.bucket_range, BoundaryEvent("query", good, None, 0, "host"), worlds)
    assert ok
    ok, msg = check_contract(
        buks.bucket_range,
        BoundaryEvent("reply", good, Reply(VInt32(9), Memory()), 1, "host"), worlds)
    assert not ok and "[0, 8)" in msg


def test_top_accepts_anything():
    q = Query("whatever", ((), UNIT), (), Memory())
    worlds = []
    assert check_contract(TOP, BoundaryEvent("query", q, None, 0, "host"), worlds) == (True, "")
    assert check_contract(TOP, BoundaryEvent("reply", q, Reply(VUnit(), Memory()), 1, "host"), worlds)[0]


def test_disjoint_union_dispatches_by_callee():
    spec = buks.bucket_checks  # bucket-range on hash, top elsewhere
    worlds = []
    other = Query("process", ((BoxType(I32),), BoxType(I32)), (VPtr(1, 0),), Memory())
    ok, _ = check_contract(spec, BoundaryEvent("query", other, None, 0, "module"), worlds)
    assert ok  # top side: no opinion on process
    bad = Query("hash", hash_sig(), (VInt32(3), VInt32(-1)), Memory())
    ok, msg = check_contract(spec, BoundaryEvent("query", bad, None, 1, "host"), worlds)
    assert not ok and "greater than 0" in msg


def test_conjoin_requires_both(hashmap_mod):
    linked = link(hashmap_mod, buks.make_env())
    both = conjoin(buks.bucket_checks, rsown_contract(linked.layout))
    good = linked.run("hmap_main", (VInt32(6),), Memory(), 50_000, record=True)
    assert monitor_contract(both, good.events) is None

    bad = link(hashmap_mod, buks.make_bad_ret_env()).run(
        "hmap_main", (VInt32(4),), Memory(), 50_000, record=True)
    v = monitor_contract(both, bad.events)
    assert v is not None and v.rule == "post" and "ret-not-wt" in v.message

    zero = link(hashmap_mod, buks.make_bad_range_env()).run(
        "hmap_main", (VInt32(4),), Memory(), 50_000, record=True)
    v = monitor_contract(both, zero.events)
    assert v is not None and v.rule == "pre"


# ---------------------------------------------------------------------------
# Caller-side ownership rules (synthetic events)


def two_box_query(mem, a, b):
    sig = ((BoxType(I32), BoxType(I32)), UNIT)
    return Query("f", sig, (a, b), mem)


def test_dup_footprint_blamed_on_caller():
    mem = Memory()
    b = mem.alloc(4, "heap")
    mem.store(b, 0, "i32", VInt32(1))
    q = two_box_query(mem, VPtr(b, 0), VPtr(b, 0))
    layout = Layout(CompositeEnv())
    v = monitor_rsown([BoundaryEvent("query", q, None, 0, "module")], layout)
    assert v is not None and (v.side, v.rule) == ("caller", "dup-footprint")
    mon = RsownMonitor(layout)
    mon.on_query(q)
    assert mon.violation is not None
    assert (mon.violation.side, mon.violation.rule) == ("caller", "dup-footprint")


def test_args_not_wt_blamed_on_caller():
    mem = Memory()
    a = mem.alloc(4, "heap")
    mem.store(a, 0, "i32", VInt32(1))
    dead = mem.alloc(4, "heap")
    mem.store(dead, 0, "i32", VInt32(2))
    mem.free(dead)
    q = two_box_query(mem, VPtr(a, 0), VPtr(dead, 0))
    layout = Layout(CompositeEnv())
    v = monitor_rsown([BoundaryEvent("query", q, None, 0, "module")], layout)
    assert v is not None and (v.side, v.rule) == ("caller", "args-not-wt")
    mon = RsownMonitor(layout)
    mon.on_query(q)
    assert (mon.violation.side, mon.violation.rule) == ("caller", "args-not-wt")


# ---------------------------------------------------------------------------
# Explorer


RAND_TREE = """
extern fn rand() -> bool;

fn main2() -> i32 {
    let x: i32;
    if rand() {
        if rand() {
            x = 3;
        } else {
            x = 4;
        }
    } else {
        x = 5;
    }
    return x;
}
"""


def test_point_explore_forks_both_branches():
    linked = link(load("programs/point.owl"), std.make_env())
    v, _ = explore(linked, "test", depth=10_000)
    assert v.verdict == "safe"
    assert v.paths == 2
    assert v.leaks == []


def test_explore_completeness_vs_brute_force():
    mod = parse_text(RAND_TREE)
    linked = link(mod, std.make_env())
    v, _ = explore(linked, "main2", depth=10_000)
    assert v.verdict == "safe"
    assert v.paths == 3  # (false,), (true,true), (true,false)
    got = {(tuple(f["choices"]), f["value"]) for f in v.finals}
    assert got == {((False,), 5), ((True, True), 3), ((True, False), 4)}

    # brute force over all scripts of maximal length
    brute = set()
    for s in [(True, True), (True, False), (False, True), (False, False)]:
        out = linked.run("main2", (), Memory(), 10_000,
                         script=[VBool(x) for x in s])
        assert out.kind == "final"
        brute.add(out.value.n)
    assert brute == {f["value"] for f in v.finals}


def test_explore_stuck_witness():
    mod = parse_text("""
extern fn rand() -> bool;

fn main3() -> i32 {
    let x: i32;
    let y: i32;
    x = 1;
    if rand() {
        y = x / 0;
    } else {
        y = 2;
    }
    return y;
}
""")
    linked = link(mod, std.make_env())
    v, _ = explore(linked, "main3", depth=10_000)
    assert v.verdict == "stuck"
    assert v.witness["choices"] == [True]
    assert v.witness["reason"] == "div-by-zero"


def test_explore_confluent_under_choice_order():
    mod = parse_text(RAND_TREE)
    flipped = HostEnv({"rand": HostFn("rand", choices=(VBool(False), VBool(True)))})
    v1, _ = explore(link(mod, std.make_env()), "main2", depth=10_000)
    v2, _ = explore(link(mod, flipped), "main2", depth=10_000)
    assert (v1.verdict, v1.paths) == (v2.verdict, v2.paths)
    assert {(tuple(f["choices"]), f["value"]) for f in v1.finals} == \
        {(tuple(f["choices"]), f["value"]) for f in v2.finals}


def test_explore_reports_host_kept_blocks_as_leaks():
    mod = parse_text("""
extern fn keep(v: Box<i32>) -> unit;

fn main4() {
    let b: Box<i32>;
    b = Box(7);
    keep(move b);
    return;
}
""")
    host = HostEnv({"keep": HostFn("keep", impl=lambda args, mem, ctx: (VUnit(), mem))})
    linked = link(mod, host)
    v, _ = explore(linked, "main4", depth=10_000)
    assert v.verdict == "safe"  # no fault, but the box was never freed
    assert len(v.leaks) == 1
    assert len(v.leaks[0]["blocks"]) == 1


def test_explore_requires_closed_program(hashmap_mod):
    linked = link(hashmap_mod, HostEnv({"hmap_main": HostFn("hmap_main", impl=buks.hmap_main)}))
    assert linked.open_names() == {"process"}
    with pytest.raises(ValueError, match="unresolved"):
        explore(linked, "hmap_main", (VInt32(1),), depth=1000)


def test_unresolved_external_raises(hashmap_mod):
    linked = link(hashmap_mod, HostEnv({}))
    mem = Memory()
    l = build_list(mem, Layout(hashmap_mod.composites), [(1, 5)])
    with pytest.raises(UnresolvedExternal):
        linked.run("find_process", (l, VInt32(1)), mem, 10_000)


def test_link_rejects_shadowing_host(hashmap_mod):
    bad = HostEnv({"hash": HostFn("hash", impl=lambda a, m, c: (VInt32(0), m))})
    with pytest.raises(ValueError, match="redefines"):
        link(hashmap_mod, bad)


def test_depth_bound_reported():
    mod = parse_text("""
fn spin() -> i32 {
    let x: i32;
    x = 0;
    loop {
        x = x + 1;
    }
    return x;
}
""")
    linked = link(mod, HostEnv({}))
    out = linked.run("spin", (), Memory(), 500)
    assert out.kind == "depth"
    assert out.steps == 500


# ---------------------------------------------------------------------------
# Mutual recursion across the boundary


PING = """
extern fn pong(n: i32) -> i32;

fn ping(n: i32) -> i32 {
    let r: i32;
    if n <= 0 {
        r = 0;
        return r;
    }
    r = pong(n - 1);
    return r;
}
"""


def test_ping_pong_depth_and_event_order():
    mod = parse_text(PING)

    def pong(args, mem, ctx):
        (n,) = args
        return VInt32(ctx.call("ping", [n]).n + 100), mem

    linked = link(mod, HostEnv({"pong": HostFn("pong", impl=pong)}))
    out = linked.run("ping", (VInt32(3),), Memory(), 10_000, record=True)
    assert out.kind == "final"
    assert out.value == VInt32(300)  # one +100 per pong hop
    assert out.max_boundary_depth == 6  # pong(2) ping(2) pong(1) ping(1) pong(0) ping(0)

    calls = [(e.kind, e.query.callee, e.query.args[0].n) for e in out.events]
    assert calls == [
        ("query", "pong", 2), ("query", "ping", 2),
        ("query", "pong", 1), ("query", "ping", 1),
        ("query", "pong", 0), ("query", "ping", 0),
        ("reply", "ping", 0), ("reply", "pong", 0),
        ("reply", "ping", 1), ("reply", "pong", 1),
        ("reply", "ping", 2), ("reply", "pong", 2),
    ]
    # scalar traffic only: the ownership monitor has nothing to object to
    assert monitor_rsown(out.events, linked.layout) is None


# ---------------------------------------------------------------------------
# After an accepted reply, the caller's retained places are still well-typed


def test_retained_places_stay_wt_after_reply(hashmap_mod):
    from owlang.ast import owns_resources
    from owlang.memory import footprint_of_region, wt_val
    from owlang.sem import Query as Q, _load_value, _resolve, fn_signature

    mem = Memory()
    layout = Layout(hashmap_mod.composites)
    l = build_list(mem, layout, [(5, 10), (7, 14)])
    f = hashmap_mod.get_fn("find_process")
    s = init_lts(hashmap_mod, Q("find_process", fn_signature(f), (l, VInt32(7)), mem))
    while s.mode == "running":
        step(s)
    assert s.mode == "awaiting"
    pq, _ = s.pending
    assert pq.callee == "process"

    (p,) = pq.args
    v = s.memory.load(p.block, 0, "i32")
    s.memory.free(p.block)
    nb = s.memory.alloc(4, "heap")
    s.memory.store(nb, 0, "i32", VInt32(v.n ^ 42))
    resume(s, Reply(VPtr(nb, 0), s.memory))
    step(s)  # lands the reply in its destination

    fr = s.frames[-1]
    checked = 0
    for place in fr.ownst:
        t = fr.places.type_of(place)
        if not owns_resources(hashmap_mod.composites, t):
            continue
        b, off, t2 = _resolve(s, fr, place)
        fp = footprint_of_region(s.memory, s.layout, t2, b, off)
        val = _load_value(s, b, off, t2)
        assert wt_val(s.memory, s.layout, t2, fp, val), f"{place} broken"
        checked += 1
    assert checked >= 2  # the list handle plus the binder's resources


# ---------------------------------------------------------------------------
# Manifests


def test_manifest_roundtrip(hashmap_mod):
    man = load_manifest("programs/buks.toml", hashmap_mod)
    assert man.entry == "hmap_main"
    assert man.rsown is True
    assert [c.name for c in man.contracts] == [buks.bucket_checks.name]
    assert set(man.env.fns) == {"process", "hmap_main"}

    linked = link(hashmap_mod, man.env)
    out = linked.run(man.entry, (VInt32(12),), Memory(), 50_000)
    assert out.kind == "final"
    assert out.value == VInt32(buks.expected_total(12))


def test_manifest_choices_and_explore():
    mod = load("programs/point.owl")
    man = load_manifest("programs/point_hosts.toml", mod)
    assert man.entry == "test"
    assert man.env.fns["rand"].choices == (VBool(True), VBool(False))
    v, _ = explore(link(mod, man.env), man.entry, depth=10_000)
    assert v.verdict == "safe" and v.paths == 2


def test_manifest_signature_mismatch(tmp_path, hashmap_mod):
    bad = tmp_path / "bad.toml"
    bad.write_text('[hosts.process]\nsymbol = "owlang.hosts.buks:process"\n'
                   'params = ["Box<i32>"]\nret = "i32"\n')
    with pytest.raises(ValueError, match="disagrees"):
        load_manifest(str(bad), hashmap_mod)


def test_verdict_json_keys():
    v = SafetyVerdict("safe", 100)
    j = v.to_json()
    for key in ("verdict", "leaks", "statesVisited", "depth"):
        assert key in j
    assert "witness" not in j
    v2 = SafetyVerdict("stuck", 100, witness={"choices": []})
    assert "witness" in v2.to_json()


def test_value_json_shapes():
    assert value_json(VInt32(-3)) == -3
    assert value_json(VBool(True)) is True
    assert value_json(VUnit()) is None
    assert value_json(VPtr(4, 0)) == {"block": 4, "off": 0}
