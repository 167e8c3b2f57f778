"""Hot-loop kernels with a compiled backend and a pure-Python fallback.

The compiled extension is used when it imports; set ``SPLATMARK_KERNELS=python``
to force the fallback. ``BACKEND`` names the active implementation.
"""

import os

import numpy as np

from splatmark._kernels import _pykernels

_impl = _pykernels
BACKEND = "python"

if os.environ.get("SPLATMARK_KERNELS", "").lower() != "python":
    try:
        from splatmark._kernels import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels


def fisher_yates(words, T):
    return _impl.fisher_yates(np.ascontiguousarray(words, dtype=np.uint32), int(T))


def composite(means2d, conics, opacities, colors, bboxes, width, height, background):
    return _impl.composite(
        np.ascontiguousarray(means2d, dtype=np.float64).reshape(-1, 2),
        np.ascontiguousarray(conics, dtype=np.float64).reshape(-1, 3),
        np.ascontiguousarray(opacities, dtype=np.float64).reshape(-1),
        np.ascontiguousarray(colors, dtype=np.float64).reshape(-1, 3),
        np.ascontiguousarray(bboxes, dtype=np.int64).reshape(-1, 4),
        int(width),
        int(height),
        np.asarray(background, dtype=np.float64),
    )


def greedy_assign(orig_idx, susp_idx, n_orig, n_susp):
    return _impl.greedy_assign(
        np.ascontiguousarray(orig_idx, dtype=np.int64),
        np.ascontiguousarray(susp_idx, dtype=np.int64),
        int(n_orig),
        int(n_susp),
    )


def backends():
    """Available implementations keyed by name (for equivalence tests and benchmarks)."""
    out = {"python": _pykernels}
    try:
        from splatmark._kernels import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
