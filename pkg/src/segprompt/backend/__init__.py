"""Backend selection for the numeric kernels.

Two interchangeable implementations exist: a compiled extension
(``_kernels``, built from Cython at install time) and a plain numpy
module (``pykernels``).  The compiled one is preferred when present.
Set ``SEGPROMPT_BACKEND=python`` to force the fallback, or
``SEGPROMPT_BACKEND=compiled`` to insist on the extension (raising if
it was never built).
"""

import os

_requested = os.environ.get("SEGPROMPT_BACKEND", "").strip().lower()

if _requested == "python":
    from . import pykernels as kernels
elif _requested == "compiled":
    from . import _kernels as kernels  # type: ignore[no-redef]
elif _requested == "":
    try:
        from . import _kernels as kernels  # type: ignore[no-redef]
    except ImportError:
        from . import pykernels as kernels  # type: ignore[no-redef]
else:
    raise ValueError(
        f"SEGPROMPT_BACKEND must be 'compiled' or 'python', got {_requested!r}"
    )

BACKEND = kernels.NAME

__all__ = ["kernels", "BACKEND"]
