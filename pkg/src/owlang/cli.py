"""owlc: check, build, run, explore, and dump Owlang programs.

Exit codes follow compiler convention: 0 clean, 1 diagnostics were
emitted (including unsafe exploration verdicts), 2 usage or I/O errors.
Every --json payload carries a schema tag so downstream tooling can
detect format changes.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from typing import Optional

from .ast import (UNIT, Assign, AssignBox, AssignVariant, Binary, Break,
                  Call, CheckTag, Const, Continue, Diagnostic, Drop, ExternFn,
                  FlaggedDrop, If, InternalFn, Let, Loop, Module, Move,
                  ReadPlace, Return, Seq, Skip, StaticDrop, Unary, wf_module)
from .cgen import CgenError, emit_c
from .dropelab import elaborate
from .linksafe import (ContractMonitor, HostEnv, RsownMonitor, _leak_audit,
                       explore, link, load_manifest, value_json)
from .lower import lower
from .memory import Memory
from .owncheck import check_module, ownst_json, place_str
from .parser import ParseError, parse_text

SCHEMA = "owlc/1"


class _Fail(Exception):
    """Usage or I/O failure; maps to exit code 2."""


def _want_color() -> bool:
    env = os.environ.get("OWLC_COLOR")
    if env == "1":
        return True
    if env == "0":
        return False
    return sys.stderr.isatty()


def _print_diags(diags: list[Diagnostic]) -> None:
    color = _want_color()
    for d in diags:
        if color:
            line = (f"{d.file}:{d.line}:{d.col}: "
                    f"\x1b[1;31merror[{d.code}]\x1b[0m: {d.message}")
        else:
            line = d.render()
        print(line, file=sys.stderr)


def _read_source(path: str) -> str:
    try:
        with open(path, encoding="utf-8") as f:
            return f.read()
    except OSError as e:
        raise _Fail(f"cannot read {path}: {e.strerror or e}") from e


def _front(path: str):
    """Parse, well-formedness, lowering, ownership check.

    Returns (surface, ir, diagnostics); each stage runs only if the one
    before it was clean, so `ir is None` means the ownership check never
    got a chance (parse or wf failure, always fatal)."""
    text = _read_source(path)
    try:
        surface = parse_text(text, path)
    except ParseError as e:
        return None, None, [e.diag]
    diags = wf_module(surface)
    if diags:
        return surface, None, diags
    ir = lower(surface)
    diags, _ = check_module(ir)
    return surface, ir, diags


# -- check --------------------------------------------------------------


def _cmd_check(args) -> int:
    _, _, diags = _front(args.file)
    if args.json:
        print(json.dumps({"schema": SCHEMA, "command": "check",
                          "diagnostics": [d.to_json() for d in diags]},
                         indent=2))
    else:
        _print_diags(diags)
    return 1 if diags else 0


# -- build --------------------------------------------------------------


def _cmd_build(args) -> int:
    surface, ir, diags = _front(args.file)
    skipped = bool(diags) and ir is not None and args.unchecked
    if diags and not skipped:
        if args.json:
            print(json.dumps({"schema": SCHEMA, "command": "build",
                              "diagnostics": [d.to_json() for d in diags],
                              "output": None}, indent=2))
        else:
            _print_diags(diags)
        return 1
    try:
        text = emit_c(elaborate(ir))
    except (CgenError, ValueError) as e:
        d = Diagnostic("CG001", str(e), args.file)
        if args.json:
            print(json.dumps({"schema": SCHEMA, "command": "build",
                              "diagnostics": [d.to_json()],
                              "output": None}, indent=2))
        else:
            _print_diags([d])
        return 1
    out = args.output
    if out is None:
        base = os.path.basename(args.file)
        out = os.path.splitext(base)[0] + ".c"
    try:
        with open(out, "w", encoding="utf-8") as f:
            f.write(text)
    except OSError as e:
        raise _Fail(f"cannot write {out}: {e.strerror or e}") from e
    if args.json:
        print(json.dumps({"schema": SCHEMA, "command": "build",
                          "diagnostics": [d.to_json() for d in diags],
                          "output": out}, indent=2))
    elif skipped:
        _print_diags(diags)
        print(f"warning: built with {len(diags)} ownership error(s) ignored",
              file=sys.stderr)
    return 0


# -- run / explore ------------------------------------------------------


def _load_environment(args, mod: Module):
    manifest = None
    if args.hosts:
        try:
            manifest = load_manifest(args.hosts, mod)
        except OSError as e:
            raise _Fail(f"cannot read {args.hosts}: {e.strerror or e}") from e
        except (ValueError, KeyError) as e:
            raise _Fail(f"bad manifest {args.hosts}: {e}") from e
    env = manifest.env if manifest else HostEnv({})
    entry = args.entry or (manifest.entry if manifest else None)
    if entry is None:
        raise _Fail("no entry point: pass --entry or set one in the manifest")
    f = mod.get_fn(entry)
    if entry in env:
        pass  # host-side driver; it calls back into the module
    elif isinstance(f, InternalFn):
        if f.params:
            raise _Fail(f"entry {entry!r} takes arguments; only nullary "
                        "entries can be invoked from the command line")
    else:
        raise _Fail(f"entry {entry!r} is neither a module function nor a "
                    "host function")
    try:
        linked = link(mod, env)
    except ValueError as e:
        raise _Fail(str(e)) from e
    return linked, manifest, entry


def _gate(args):
    """Front-end for the dynamic commands; honours --unchecked."""
    surface, ir, diags = _front(args.file)
    if diags and (ir is None or not args.unchecked):
        if args.json:
            print(json.dumps({"schema": SCHEMA, "command": args.command,
                              "diagnostics": [d.to_json() for d in diags]},
                             indent=2))
        else:
            _print_diags(diags)
        return None
    return surface


def _cmd_run(args) -> int:
    mod = _gate(args)
    if mod is None:
        return 1
    linked, manifest, entry = _load_environment(args, mod)
    monitors = []
    if manifest and manifest.rsown:
        monitors.append(RsownMonitor(linked.layout))
    if manifest:
        monitors.extend(ContractMonitor(s) for s in manifest.contracts)
    out = linked.run(entry, (), Memory(), args.fuel,
                     monitors=tuple(monitors))
    violations = [m.violation for m in monitors if m.violation is not None]
    payload = {"outcome": out.kind, "steps": out.steps}
    if out.kind == "final":
        payload["value"] = value_json(out.value)
        payload["leaks"] = _leak_audit(linked, entry, out)
    elif out.kind == "stuck":
        payload["reason"] = out.reason
    elif out.kind == "memerr":
        payload["error"] = str(out.err)
    payload["violations"] = [{"side": v.side, "rule": v.rule,
                              "index": v.index, "message": v.message}
                             for v in violations]
    if args.json:
        print(json.dumps({"schema": SCHEMA, "command": "run", **payload},
                         indent=2))
    else:
        if out.kind == "final":
            print(f"{entry} finished in {out.steps} steps: "
                  f"{json.dumps(payload['value'])}")
            if payload["leaks"]:
                print(f"leaked heap blocks: {payload['leaks']}")
        elif out.kind == "depth":
            print(f"{entry} still running after {out.steps} steps "
                  "(raise --fuel)")
        else:
            detail = payload.get("reason") or payload.get("error")
            print(f"{entry} ended in {out.kind} after {out.steps} steps: "
                  f"{detail}", file=sys.stderr)
        for v in violations:
            print(f"monitor violation: {v}", file=sys.stderr)
    ok = out.kind == "final" and not violations and not payload.get("leaks")
    return 0 if ok else 1


def _cmd_explore(args) -> int:
    mod = _gate(args)
    if mod is None:
        return 1
    linked, _, entry = _load_environment(args, mod)
    verdict, _ = explore(linked, entry, depth=args.depth)
    doc = verdict.to_json()
    if args.json:
        print(json.dumps({"schema": SCHEMA, "command": "explore", **doc},
                         indent=2))
    else:
        print(f"verdict: {doc['verdict']}")
        print(f"paths: {verdict.paths}  states: {doc['statesVisited']}  "
              f"depth bound: {doc['depth']}")
        if verdict.truncated:
            print(f"truncated paths: {verdict.truncated}")
        print(f"leaks: {len(doc['leaks'])}")
        for leak in doc["leaks"]:
            print(f"  blocks {leak['blocks']} under choices {leak['choices']}")
        if doc.get("witness"):
            print(f"witness: {json.dumps(doc['witness'])}")
    safe = doc["verdict"] == "safe" and not doc["leaks"] and not verdict.truncated
    return 0 if safe else 1


# -- dump ---------------------------------------------------------------


def _cmd_dump(args) -> int:
    surface, ir, diags = _front(args.file)
    if ir is None:
        # parse or wf failure: nothing downstream exists to dump
        _print_diags(diags)
        return 1
    if args.emit_ownst:
        payload = ownst_json(ir)
        if args.json:
            print(json.dumps({"schema": SCHEMA, "command": "dump",
                              "kind": "ownst", "functions": payload},
                             indent=2))
        else:
            print(json.dumps(payload, indent=2))
        return 0
    if args.emit_elab:
        if diags:
            # drop elaboration relies on a clean ownership analysis
            _print_diags(diags)
            return 1
        text = unparse(elaborate(ir))
        kind = "elab"
    else:
        text = unparse(ir)
        kind = "ir"
    if args.json:
        print(json.dumps({"schema": SCHEMA, "command": "dump",
                          "kind": kind, "text": text}, indent=2))
    else:
        print(text, end="")
    return 0


# -- module pretty-printer (debug output, not meant to re-parse) --------


def _expr_str(e) -> str:
    if isinstance(e, Const):
        if e.type == UNIT:
            return "()"
        if e.value is True:
            return "true"
        if e.value is False:
            return "false"
        return repr(e.value) if isinstance(e.value, float) else str(e.value)
    if isinstance(e, ReadPlace):
        return place_str(e.place)
    if isinstance(e, Move):
        return f"move {place_str(e.place)}"
    if isinstance(e, Unary):
        return f"{e.op}{_expr_str(e.operand)}"
    if isinstance(e, Binary):
        return f"({_expr_str(e.left)} {e.op} {_expr_str(e.right)})"
    if isinstance(e, CheckTag):
        return f"{place_str(e.place)} is {e.variant}"
    raise AssertionError(f"unhandled expr {type(e).__name__}")


class _Writer:
    def __init__(self):
        self.lines: list[str] = []
        self.depth = 0

    def put(self, text: str) -> None:
        self.lines.append("    " * self.depth + text)

    def stmt(self, s) -> None:
        if isinstance(s, Skip):
            self.put(";")
        elif isinstance(s, Seq):
            for sub in s.stmts:
                if not isinstance(sub, Skip):
                    self.stmt(sub)
        elif isinstance(s, Assign):
            self.put(f"{place_str(s.place)} = {_expr_str(s.expr)};")
        elif isinstance(s, AssignBox):
            self.put(f"{place_str(s.place)} = Box({_expr_str(s.expr)});")
        elif isinstance(s, AssignVariant):
            head = f"{place_str(s.place)} = {s.enum_id}::{s.variant}"
            if s.expr is not None:
                head += f"({_expr_str(s.expr)})"
            self.put(head + ";")
        elif isinstance(s, Call):
            call = f"{s.callee}({', '.join(_expr_str(a) for a in s.args)})"
            if s.dest is not None:
                call = f"{place_str(s.dest)} = {call}"
            self.put(call + ";")
        elif isinstance(s, Let):
            self.put("{")
            self.depth += 1
            for name, t in s.decls:
                self.put(f"let {name}: {t};")
            self.stmt(s.body)
            self.depth -= 1
            self.put("}")
        elif isinstance(s, If):
            self.put(f"if {_expr_str(s.cond)} {{")
            self.depth += 1
            self.stmt(s.then)
            self.depth -= 1
            if not isinstance(s.els, Skip):
                self.put("} else {")
                self.depth += 1
                self.stmt(s.els)
                self.depth -= 1
            self.put("}")
        elif isinstance(s, Loop):
            self.put("loop {")
            self.depth += 1
            self.stmt(s.body)
            self.depth -= 1
            self.put("}")
        elif isinstance(s, Break):
            self.put("break;")
        elif isinstance(s, Continue):
            self.put("continue;")
        elif isinstance(s, Return):
            if s.place is None:
                self.put("return;")
            else:
                self.put(f"return {place_str(s.place)};")
        elif isinstance(s, Drop):
            self.put(f"drop {place_str(s.place)};")
        elif isinstance(s, StaticDrop):
            self.put(f"drop {place_str(s.place)};")
        elif isinstance(s, FlaggedDrop):
            self.put(f"drop {place_str(s.place)} if {s.flag};")
        else:
            raise AssertionError(f"unhandled stmt {type(s).__name__}")


def unparse(m: Module) -> str:
    """Render a module back to readable source-like text.

    Lowered and elaborated dialects print hoisted slots as `local` lines
    and drops as `drop p;` (with `if flag` for the gated form); this is a
    debugging view, not input syntax."""
    w = _Writer()
    for name, d in m.composites.items():
        if d.kind == "struct":
            body = ", ".join(f"{f}: {t}" for f, t in d.fields)
        else:
            body = ", ".join(f if t == UNIT else f"{f}: {t}"
                             for f, t in d.fields)
        w.put(f"{d.kind} {name} {{ {body} }}")
        w.put("")
    for f in m.functions.values():
        params = ", ".join(f"{n}: {t}" for n, t in f.params)
        ret = "" if f.ret == UNIT else f" -> {f.ret}"
        if isinstance(f, ExternFn):
            w.put(f"extern fn {f.name}({params}){ret};")
            w.put("")
            continue
        w.put(f"fn {f.name}({params}){ret} {{")
        w.depth += 1
        for name, t in f.locals:
            w.put(f"local {name}: {t};")
        w.stmt(f.body)
        w.depth -= 1
        w.put("}")
        w.put("")
    return "\n".join(w.lines).rstrip() + "\n"


# -- argument parsing ---------------------------------------------------


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="owlc",
        description="Verifying compiler and safety harness for Owlang.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("file", help="Owlang source file")
        sp.add_argument("--json", action="store_true",
                        help="machine-readable output")

    sp = sub.add_parser("check", help="parse, well-formedness and "
                        "ownership checks; exits 0 only when clean")
    common(sp)
    sp.set_defaults(fn=_cmd_check)

    sp = sub.add_parser("build", help="compile to C99")
    common(sp)
    sp.add_argument("-o", "--output", default=None,
                    help="output path (default: <stem>.c)")
    sp.add_argument("--unchecked", action="store_true",
                    help="build even if the ownership check fails")
    sp.set_defaults(fn=_cmd_build)

    sp = sub.add_parser("run", help="interpret one entry call")
    common(sp)
    sp.add_argument("--entry", default=None, help="function to call "
                    "(default: the manifest's entry)")
    sp.add_argument("--hosts", default=None, help="host manifest (TOML)")
    sp.add_argument("--fuel", type=int, default=100_000,
                    help="step budget (default 100000)")
    sp.add_argument("--unchecked", action="store_true",
                    help="run even if the ownership check fails")
    sp.set_defaults(fn=_cmd_run)

    sp = sub.add_parser("explore", help="enumerate all host choice "
                        "paths and report a safety verdict")
    common(sp)
    sp.add_argument("--entry", default=None)
    sp.add_argument("--hosts", default=None, help="host manifest (TOML)")
    sp.add_argument("--depth", type=int, default=100_000,
                    help="per-path step bound (default 100000)")
    sp.add_argument("--unchecked", action="store_true")
    sp.set_defaults(fn=_cmd_explore)

    sp = sub.add_parser("dump", help="print intermediate artifacts")
    common(sp)
    g = sp.add_mutually_exclusive_group(required=True)
    g.add_argument("--emit-ir", action="store_true",
                   help="lowered module with explicit drops")
    g.add_argument("--emit-ownst", action="store_true",
                   help="per-label must-own sets as JSON")
    g.add_argument("--emit-elab", action="store_true",
                   help="elaborated module with static/flagged drops")
    sp.set_defaults(fn=_cmd_dump)

    return p


def main(argv: Optional[list[str]] = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except _Fail as e:
        print(f"owlc: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
