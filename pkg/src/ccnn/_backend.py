"""Pick the compiled core when it is importable, else the numpy fallback.

Set ``CCNN_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _core_py

core = _core_py
NAME = "python"

if os.environ.get("CCNN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _core as core  # noqa: F811
        NAME = "cython"
    except ImportError:
        pass


def get(name: str | None = None):
    """Return a specific backend module (``"cython"`` or ``"python"``), or the active one."""
    if name is None:
        return core
    if name == "python":
        return _core_py
    if name == "cython":
        from . import _core
        return _core
    raise ValueError(f"unknown backend {name!r}")
