"""Kernel selection: the compiled extension when importable, else numpy.

Set ``RSPMLE_BACKEND=python`` to force the fallback.
"""

import os

if os.environ.get("RSPMLE_BACKEND", "").lower() == "python":
    from . import _core_py as impl
    BACKEND = "python"
else:
    try:
        from . import _core as impl
        BACKEND = "compiled"
    except ImportError:  # extension not built
        from . import _core_py as impl
        BACKEND = "python"

chain_series = impl.chain_series
sample_walk = impl.sample_walk

LAW_UNIFORM, LAW_GIVEN, LAW_GEOMETRIC = 0, 1, 2
