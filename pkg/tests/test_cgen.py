"""C emission: structure of the generated code, and a native differential
against the interpreter for deterministic generated programs."""

import shutil
import subprocess
from pathlib import Path

import pytest

from owlang.cgen import CgenError, emit_c
from owlang.corpus import gen_module
from owlang.dropelab import elaborate
from owlang.hosts.std import make_env
from owlang.linksafe import explore, link
from owlang.lower import lower
from owlang.parser import parse_text

RUNTIME_STUB = """\
#ifndef OWL_RUNTIME_H
#define OWL_RUNTIME_H
#include <stdint.h>
#include <stddef.h>
#include <stdlib.h>
#define OWL_TRAP_OOM 107
#define OWL_TRAP_DIV 108
#define OWL_TRAP_UNREACHABLE 109
static long owl_live = 0;
static void owl_trap(int code) { exit(code); }
static void* owl_alloc(size_t n) {
    void* p = malloc(n ? n : 1);
    if (!p) owl_trap(OWL_TRAP_OOM);
    owl_live++;
    return p;
}
static void owl_free(void* p) { owl_live--; free(p); }
#endif
"""

CC = shutil.which("cc") or shutil.which("gcc")
STRICT = ["-std=c99", "-pedantic", "-Wall", "-Wextra", "-Werror"]

PROGRAMS = Path(__file__).resolve().parent.parent / "programs"
POINT_SRC = (PROGRAMS / "point.owl").read_text()
HASHMAP_SRC = (PROGRAMS / "hashmap.owl").read_text()


def emit(src, name="t.owl"):
    return emit_c(elaborate(lower(parse_text(src, name))))


def test_rejects_unelaborated_input():
    src = """
    fn main() -> i32 {
        let a: Box<i32>;
        let t: i32;
        a = Box(1);
        t = *a;
        return t;
    }
    """
    surface = parse_text(src, "t.owl")
    with pytest.raises(CgenError, match="elaborated"):
        emit_c(surface)  # Let scopes are a surface construct
    with pytest.raises(CgenError, match="elaborated"):
        emit_c(lower(surface))  # state-gated Drop is an IR construct


def test_point_flags_gate_the_branch_dependent_drops():
    c = emit(POINT_SRC, "point.owl")
    assert "owl_drop_box_i32(a);" in c
    assert "if (df_p_x) {" in c and "if (df_p_y) {" in c
    assert c.count("df_p_x = 1;") == 1 and c.count("df_p_x = 0;") >= 2
    assert "owl_rand" in c


def test_hashmap_union_layout_and_recursive_drops():
    c = emit(HASHMAP_SRC, "hashmap.owl")
    assert "typedef struct Node Node;" in c
    assert "int32_t tag;" in c and "Node Cons;" in c
    # by-value payload forces Node's body before List's
    assert c.index("struct Node {") < c.index("struct List {")
    assert "owl_drop_List(*v);" in c and "owl_free(v);" in c
    assert "int32_t* owl_process(int32_t*);" in c


def test_emission_is_deterministic():
    assert emit(HASHMAP_SRC) == emit(HASHMAP_SRC)


def test_arithmetic_wraps_and_division_traps():
    src = """
    fn main() -> i32 {
        let a: i32;
        a = 2000000000 + 2000000000;
        a = a / 3;
        a = a % 7;
        return a;
    }
    """
    c = emit(src)
    assert "(int32_t)((uint32_t)" in c
    assert "owl_div(" in c and "owl_mod(" in c
    assert "owl_trap(OWL_TRAP_DIV)" in c


def test_helpers_omitted_when_unused():
    c = emit("fn main() -> i32 { let a: i32; a = 1 + 2; return a; }")
    assert "owl_div" not in c and "owl_mod" not in c


def test_c_keywords_and_underscored_names_are_renamed():
    src = """
    fn main() -> i32 {
        let int: i32;
        let register: i32;
        int = 3;
        register = int + 1;
        return register;
    }
    """
    c = emit(src)
    assert "int32_t int_;" in c
    assert "int32_t register_;" in c
    assert " int;" not in c


def test_unit_function_calls_have_no_result_cast():
    src = """
    fn tick() { return; }
    fn main() -> i32 {
        let a: i32;
        tick();
        a = 5;
        return a;
    }
    """
    c = emit(src)
    assert "void owl_tick(void)" in c
    assert "owl_tick();" in c
    assert "(void)owl_tick" not in c


needs_cc = pytest.mark.skipif(CC is None, reason="no C compiler on PATH")


def _compile(tmp_path, c_text, driver):
    tmp_path.mkdir(parents=True, exist_ok=True)
    (tmp_path / "owl_runtime.h").write_text(RUNTIME_STUB)
    src = tmp_path / "prog.c"
    src.write_text(c_text + driver)
    exe = tmp_path / "prog"
    subprocess.run([CC, *STRICT, "-I", str(tmp_path), "-o", str(exe), str(src)],
                   check=True, capture_output=True, text=True)
    return exe


DRIVER = """
#include <stdio.h>
int main(void) {
    int32_t r = owl_main();
    printf("%d %ld\\n", (int)r, owl_live);
    return 0;
}
"""


@needs_cc
def test_strict_c99_compilation_of_generated_programs(tmp_path):
    for seed in (5, 17, 42):
        c = emit(gen_module(seed), f"g{seed}.owl")
        (tmp_path / "owl_runtime.h").write_text(RUNTIME_STUB)
        src = tmp_path / f"g{seed}.c"
        src.write_text(c)
        subprocess.run([CC, *STRICT, "-fsyntax-only", "-I", str(tmp_path), str(src)],
                       check=True, capture_output=True, text=True)


@needs_cc
def test_native_results_match_the_interpreter(tmp_path):
    done = 0
    for seed in range(100):
        src = gen_module(seed)
        if "rand()" in src:
            continue
        mod = parse_text(src, f"g{seed}.owl")
        v, _ = explore(link(mod, make_env()), "main", depth=100_000)
        assert v.verdict == "safe" and v.paths == 1
        want = v.finals[0]["value"]
        exe = _compile(tmp_path / str(seed), emit(src), DRIVER)
        out = subprocess.run([str(exe)], check=True, capture_output=True,
                             text=True).stdout.split()
        assert int(out[0]) == want, f"seed {seed}: native {out[0]} != {want}"
        assert out[1] == "0", f"seed {seed}: {out[1]} blocks leaked natively"
        done += 1
        if done == 6:
            break
    assert done == 6
