"""Worklist fixpoints vs exhaustive path enumeration on small CFGs.

All three dataflow passes run on one worklist engine. These tests swap
the engine for collecting semantics: enumerate every reachable path
state per label (the state space is finite, so this terminates), fold
them with the pass's own join, and demand exact agreement with the
fixpoint. The transfers are gen/kill style and distribute over the
joins, so any gap would mean the worklist converged somewhere short of
meet-over-all-paths.
"""

import random
from collections import Counter

import pytest

from owlang.ast import (I32, UNIT, Assign, AssignBox, AssignVariant, Binary,
                        BoxType, Break, Call, CompositeDef, CompositeEnv,
                        Const, Continue, Downcast, Drop, EnumType, Field, If,
                        InternalFn, Loop, Move, ReadPlace, Return, Seq, Skip,
                        StructType, Var)
from owlang.dropelab import InitState, enumerate_places, init_analysis
from owlang.owncheck import (BOTTOM, Places, _may_own, analyze, build_cfg,
                             init_analyze, may_analyze, place_str, step_init,
                             step_own)

CENV = CompositeEnv({
    "Pair": CompositeDef("struct", (("x", BoxType(I32)), ("y", BoxType(I32)))),
    "Opt": CompositeDef("enum", (("None", UNIT), ("Some", BoxType(I32)))),
})

X, A, B, P, O, Q = (Var(n) for n in ("x", "a", "b", "p", "o", "q"))
PX, PY = Field(P, "x"), Field(P, "y")
BOX_PLACES = (A, B, PX, PY, Q)
COND = Binary("==", ReadPlace(X), Const(0, I32))

LOCALS = (("x", I32), ("a", BoxType(I32)), ("b", BoxType(I32)),
          ("p", StructType("Pair")), ("o", EnumType("Opt")))


def _leaf(rng):
    roll = rng.random()
    if roll < 0.30:
        dst, src = rng.sample(BOX_PLACES, 2)
        return Assign(dst, Move(src))
    if roll < 0.45:
        return AssignBox(rng.choice(BOX_PLACES), Const(rng.randrange(9), I32))
    if roll < 0.62:
        return Drop(rng.choice(BOX_PLACES + (P, O, Downcast(O, "Some"))))
    if roll < 0.72:
        if rng.random() < 0.5:
            return AssignVariant(O, "Opt", "Some", Move(rng.choice(BOX_PLACES)))
        return AssignVariant(O, "Opt", "None", None)
    if roll < 0.82:
        dest = rng.choice((None, B, PX))
        if rng.random() < 0.6:
            args = (Move(rng.choice(BOX_PLACES)),)
        else:
            args = (ReadPlace(X),)
        return Call(dest, "f", args)
    if roll < 0.92:
        return Assign(X, Const(rng.randrange(5), I32))
    return Return(rng.choice((None, Q, A)))


def _block(rng, depth):
    stmts = []
    for _ in range(rng.randrange(1, 4)):
        r = rng.random()
        if depth > 0 and r < 0.25:
            els = _block(rng, depth - 1) if rng.random() < 0.7 else Skip()
            stmts.append(If(COND, _block(rng, depth - 1), els))
        elif depth > 0 and r < 0.40:
            exit_ = Continue() if rng.random() < 0.25 else Break()
            body = [_leaf(rng), If(COND, exit_, Skip())]
            rng.shuffle(body)
            stmts.append(Loop(Seq(tuple(body))))
        else:
            stmts.append(_leaf(rng))
    return Seq(tuple(stmts))


def _make_fn(seed):
    rng = random.Random(seed)
    body = Seq((_block(rng, 2), Return(None)))
    return InternalFn(f"g{seed}", (("q", BoxType(I32)),), UNIT, LOCALS, body)


def _corpus():
    """500 functions whose CFGs have at most twelve nodes."""
    out = []
    seed = 0
    while len(out) < 500:
        fn = _make_fn(seed)
        cfg = build_cfg(fn)
        if 2 <= len(cfg.nodes) <= 12:
            out.append((seed, fn, cfg))
        seed += 1
        assert seed < 5000, "generator stopped fitting the node budget"
    return out


@pytest.fixture(scope="module")
def corpus():
    return _corpus()


def _mop(succs, entry, init, transfer, join):
    """Meet over all paths by brute force.

    Tracks the set of distinct path states reaching each label, then
    folds each set with the join in a deterministic order."""
    seen = {l: set() for l in succs}
    seen[entry].add(init)
    frontier = [(entry, init)]
    while frontier:
        l, st = frontier.pop()
        out = transfer(l, st)
        for nxt in succs[l]:
            if out not in seen[nxt]:
                seen[nxt].add(out)
                frontier.append((nxt, out))
    result = {}
    for l, states in seen.items():
        if not states:
            result[l] = BOTTOM
            continue
        ordered = sorted(states,
                         key=lambda s: tuple(sorted(place_str(p) for p in s)))
        acc = ordered[0]
        for st in ordered[1:]:
            acc = join(acc, st)
        result[l] = acc
    return result


def all_fixpoints_match(fn, cfg):
    """Every analysis vs its path-enumeration oracle for one function."""
    U = Places(CENV, fn)
    succs = {n.label: n.succs for n in cfg}

    def own(l, st):
        return step_own(U, st, cfg.nodes[l])

    omust = _mop(succs, cfg.entry, U.entry_own(), own, U.meet)
    if analyze(CENV, fn, cfg) != omust:
        return False
    omay = _mop(succs, cfg.entry, U.entry_own(), own, U.union)
    if may_analyze(CENV, fn, cfg) != omay:
        return False
    oinit = _mop(succs, cfg.entry, U.entry_init(),
                 lambda l, st: step_init(U, st, cfg.nodes[l]),
                 lambda a, b: U.meet(a, b, mode="init"))
    if init_analyze(CENV, fn, cfg) != oinit:
        return False
    universe = enumerate_places(U)
    derived = {}
    for label, st in omust.items():
        if st is BOTTOM:
            derived[label] = BOTTOM
            continue
        derived[label] = InitState(
            frozenset(p for p in universe if _may_own(U, omay[label], p)),
            frozenset(p for p in universe if not U.covered(st, p)))
    return init_analysis(CENV, fn, cfg) == derived


def _has_cycle(cfg):
    state = {}

    def visit(l):
        state[l] = 1
        for s in cfg.nodes[l].succs:
            if state.get(s) == 1:
                return True
            if s not in state and visit(s):
                return True
        state[l] = 2
        return False

    return visit(cfg.entry)


def test_the_corpus_is_plentiful_and_varied(corpus):
    assert len(corpus) == 500
    kinds = Counter(n.kind for _, _, cfg in corpus for n in cfg)
    assert kinds["branch"] >= 250
    assert kinds["drop"] >= 150
    assert kinds["call"] >= 100
    loops = sum(1 for _, _, cfg in corpus if _has_cycle(cfg))
    assert loops >= 60


def test_must_own_fixpoint_equals_path_enumeration(corpus):
    unreachable = 0
    for seed, fn, cfg in corpus:
        U = Places(CENV, fn)
        succs = {n.label: n.succs for n in cfg}
        got = analyze(CENV, fn, cfg)
        want = _mop(succs, cfg.entry, U.entry_own(),
                    lambda l, st: step_own(U, st, cfg.nodes[l]),
                    U.meet)
        assert got == want, f"seed {seed}"
        unreachable += sum(1 for v in got.values() if v is BOTTOM)
    # both sides must agree that dead labels stay at bottom
    assert unreachable >= 50


def test_may_own_fixpoint_equals_path_enumeration(corpus):
    for seed, fn, cfg in corpus:
        U = Places(CENV, fn)
        succs = {n.label: n.succs for n in cfg}
        got = may_analyze(CENV, fn, cfg)
        want = _mop(succs, cfg.entry, U.entry_own(),
                    lambda l, st: step_own(U, st, cfg.nodes[l]),
                    U.union)
        assert got == want, f"seed {seed}"


def test_init_fixpoint_equals_path_enumeration(corpus):
    for seed, fn, cfg in corpus:
        U = Places(CENV, fn)
        succs = {n.label: n.succs for n in cfg}
        got = init_analyze(CENV, fn, cfg)
        want = _mop(succs, cfg.entry, U.entry_init(),
                    lambda l, st: step_init(U, st, cfg.nodes[l]),
                    lambda a, b: U.meet(a, b, mode="init"))
        assert got == want, f"seed {seed}"


def test_derived_init_states_agree_with_the_oracle(corpus):
    """init_analysis composes must and may; rebuild it from the
    enumerated fixpoints and compare whole."""
    for seed, fn, cfg in corpus:
        U = Places(CENV, fn)
        succs = {n.label: n.succs for n in cfg}
        omust = _mop(succs, cfg.entry, U.entry_own(),
                     lambda l, st: step_own(U, st, cfg.nodes[l]),
                     U.meet)
        omay = _mop(succs, cfg.entry, U.entry_own(),
                    lambda l, st: step_own(U, st, cfg.nodes[l]),
                    U.union)
        universe = enumerate_places(U)
        want = {}
        for label, st in omust.items():
            if st is BOTTOM:
                want[label] = BOTTOM
                continue
            owned = frozenset(p for p in universe
                              if _may_own(U, omay[label], p))
            unowned = frozenset(p for p in universe
                                if not U.covered(st, p))
            want[label] = InitState(owned, unowned)
        assert init_analysis(CENV, fn, cfg) == want, f"seed {seed}"
