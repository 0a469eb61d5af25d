"""Backend selection for the circular-convolution gather/scatter kernels.

The compiled extension is used when it was built; set
``NLPRECODE_PURE_PYTHON=1`` to force the numpy fallback.
"""

import os

from . import _kernels_py

BACKEND = "python"
im2col = _kernels_py.im2col
col2im = _kernels_py.col2im

if not os.environ.get("NLPRECODE_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        BACKEND = "cython"
        im2col = _compiled.im2col
        col2im = _compiled.col2im
