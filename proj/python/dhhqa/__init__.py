"""Digital-human-head quality assessment: python bindings over the C++ core."""

from __future__ import annotations

import importlib
import os
import sys


def _load_core():
    try:
        from . import _core  # installed layout: extension sits inside the package
        return _core
    except ImportError:
        # development layout: the extension lives in the CMake build tree,
        # pointed at by DHHQA_EXT_DIR
        ext_dir = os.environ.get("DHHQA_EXT_DIR")
        if not ext_dir:
            raise
        if ext_dir not in sys.path:
            sys.path.insert(0, ext_dir)
        return importlib.import_module("_core")


_core = _load_core()

__all__ = [name for name in dir(_core) if not name.startswith("_")]
globals().update({name: getattr(_core, name) for name in __all__})

__version__ = "0.1.0"
