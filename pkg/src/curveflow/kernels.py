"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy
implementation is used. Setting ``CURVEFLOW_PURE_PYTHON=1`` forces the numpy
path (useful for comparing the two, see ``benchmarks/bench_kernels.py``).
"""

import os

from . import _kernels_py

BACKEND = "python"
mlp_forward = _kernels_py.mlp_forward
mlp_backward = _kernels_py.mlp_backward

if os.environ.get("CURVEFLOW_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _ext
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "compiled"
        mlp_forward = _ext.mlp_forward
        mlp_backward = _ext.mlp_backward
