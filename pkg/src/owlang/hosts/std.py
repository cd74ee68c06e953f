"""Small standard host table: nondeterministic primitives with declared
finite choice sets, so closed programs stay explorable."""

from ..linksafe import HostEnv, HostFn
from ..memory import VBool


def make_env() -> HostEnv:
    return HostEnv({
        "rand": HostFn("rand", choices=(VBool(True), VBool(False))),
    })
