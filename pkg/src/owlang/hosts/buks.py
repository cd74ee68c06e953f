"""Bucket-store host: drives the hashmap module end to end.

The bucket array is a raw block on the host side (eight pointer slots);
only list heads, keys, and values ever cross the boundary. `process`
replaces a stored box with its payload xor 42. The `make_bad_*` variants
each break exactly one clause of the ownership discipline, for checking
that the boundary monitor assigns blame to the right rule.
"""

from ..ast import EnumType
from ..linksafe import TOP, ContractSpec, HostEnv, HostFn, disjoint_union
from ..memory import VInt32, VPtr

RANGE = 8


def process(args, mem, ctx):
    (p,) = args
    v = mem.load(p.block, 0, "i32")
    mem.free(p.block)
    nb = mem.alloc(4, "heap")
    mem.store(nb, 0, "i32", VInt32(v.n ^ 42))
    return VPtr(nb, 0), mem


def hmap_main(args, mem, ctx):
    """Insert n keyed values, process every key once, drain all buckets.

    Returns the sum of the stored values after processing. Invoked with
    no argument (as the manifest entry point) it drives 40 elements."""
    n = args[0] if args else VInt32(40)
    list_t = EnumType("List")
    hm = mem.alloc(8 * RANGE, "heap")
    for i in range(RANGE):
        b = mem.alloc(ctx.layout.sizeof(list_t), "heap")
        mem.store(b, 0, "i32", VInt32(0))
        mem.store(hm, 8 * i, "ptr", VPtr(b, 0))

    def bucket_of(k):
        return ctx.call("hash", [VInt32(k), VInt32(RANGE)]).n

    for i in range(n.n):
        k = i % 13
        idx = bucket_of(k)
        head = mem.load(hm, 8 * idx, "ptr")
        head = ctx.call("insert", [head, VInt32(k), VInt32(i * 3)])
        mem.store(hm, 8 * idx, "ptr", head)
    for i in range(n.n):
        k = i % 13
        idx = bucket_of(k)
        head = mem.load(hm, 8 * idx, "ptr")
        head = ctx.call("find_process", [head, VInt32(k)])
        mem.store(hm, 8 * idx, "ptr", head)
    total = 0
    for i in range(RANGE):
        head = mem.load(hm, 8 * i, "ptr")
        total += ctx.call("sum_list", [head]).n
    mem.free(hm)
    return VInt32(total), mem


def expected_total(n: int) -> int:
    """Reference model of hmap_main: plain Python dict of bucket lists."""
    buckets = {i: [] for i in range(RANGE)}
    for i in range(n):
        k = i % 13
        buckets[k % RANGE].insert(0, [k, i * 3])
    for i in range(n):
        k = i % 13
        for entry in buckets[k % RANGE]:
            if entry[0] == k:
                entry[1] ^= 42
                break
    return sum(v for chain in buckets.values() for _, v in chain)


def make_env() -> HostEnv:
    return HostEnv({
        "process": HostFn("process", impl=process),
        "hmap_main": HostFn("hmap_main", impl=hmap_main),
    })


# ---------------------------------------------------------------------------
# The bucket-range contract: hash is called with a positive range and must
# answer inside it.


def _range_pre(w, q):
    if q.callee != "hash":
        return False, f"bucket-range only covers hash, not {q.callee}"
    if w is None or w <= 0:
        return False, "range must be greater than 0"
    return True, ""


def _range_post(w, r):
    if isinstance(r.value, VInt32) and w is not None and 0 <= r.value.n < w:
        return True, ""
    return False, f"hash result must lie in [0, {w})"


bucket_range = ContractSpec(
    name="bucket-range",
    world="the requested bucket count",
    choose=lambda q: q.args[1].n if len(q.args) == 2 and isinstance(q.args[1], VInt32) else None,
    pre=_range_pre,
    post=_range_post,
    governs=frozenset({"hash"}),
)

# hash answers to bucket-range, every other callee is unconstrained
bucket_checks = disjoint_union(bucket_range, TOP)


# ---------------------------------------------------------------------------
# Broken variants, one discipline clause each


def make_bad_frame_env() -> HostEnv:
    """process scribbles on the box it handed back last time: the caller
    owns that block again, so the write lands outside the footprint."""
    last = []

    def bad(args, mem, ctx):
        (p,) = args
        if last and mem.valid_block(last[0]):
            mem.store(last[0], 0, "i32", VInt32(0))
        v = mem.load(p.block, 0, "i32")
        mem.free(p.block)
        nb = mem.alloc(4, "heap")
        mem.store(nb, 0, "i32", VInt32(v.n ^ 42))
        last[:] = [nb]
        return VPtr(nb, 0), mem

    return HostEnv({
        "process": HostFn("process", impl=bad),
        "hmap_main": HostFn("hmap_main", impl=hmap_main),
    })


def make_bad_stale_env() -> HostEnv:
    """process answers with a block the caller already owns instead of a
    fresh or transferred one."""
    last = []

    def bad(args, mem, ctx):
        (p,) = args
        if last and mem.valid_block(last[0]):
            stale = last[0]
            last[:] = []
            return VPtr(stale, 0), mem
        v = mem.load(p.block, 0, "i32")
        mem.free(p.block)
        nb = mem.alloc(4, "heap")
        mem.store(nb, 0, "i32", VInt32(v.n ^ 42))
        last[:] = [nb]
        return VPtr(nb, 0), mem

    return HostEnv({
        "process": HostFn("process", impl=bad),
        "hmap_main": HostFn("hmap_main", impl=hmap_main),
    })


def make_bad_ret_env() -> HostEnv:
    """process frees the box and returns the dangling pointer."""
    def bad(args, mem, ctx):
        (p,) = args
        mem.load(p.block, 0, "i32")
        mem.free(p.block)
        return VPtr(p.block, 0), mem

    return HostEnv({
        "process": HostFn("process", impl=bad),
        "hmap_main": HostFn("hmap_main", impl=hmap_main),
    })


def make_bad_range_env() -> HostEnv:
    """the driver asks for bucket 3 of 0: rejected by bucket-range before
    the module even divides by zero."""
    def main(args, mem, ctx):
        idx = ctx.call("hash", [VInt32(3), VInt32(0)])
        return idx, mem

    return HostEnv({
        "process": HostFn("process", impl=process),
        "hmap_main": HostFn("hmap_main", impl=main),
    })
