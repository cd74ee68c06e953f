"""Owlang: an ownership-checked systems language toolchain.

Compiler pipeline (parse -> lower -> ownership check -> drop elaboration ->
C emission), a differential interpreter for every pipeline stage, and an
open-system explorer that monitors component boundaries for ownership
violations.
"""

__version__ = "0.1.0"
