"""Select the Gibbs chain kernel: compiled if available, else pure Python.

Set ``ICR_PURE_PYTHON=1`` to force the fallback.  ``BACKEND`` names the
active implementation.
"""

import os

from . import _kernels_py

run_chain_py = _kernels_py.run_chain

try:
    if os.environ.get("ICR_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure Python requested")
    from ._kernels import run_chain as run_chain_c
except ImportError:
    run_chain_c = None

if run_chain_c is not None:
    run_chain = run_chain_c
    BACKEND = "cython"
else:
    run_chain = run_chain_py
    BACKEND = "python"
