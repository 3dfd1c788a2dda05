"""Kernel backend selection.

CONVQG_BACKEND picks the lane: "numba" (default when importable) or
"numpy". Within one lane all results are deterministic; across lanes
results agree to rounding but not bit-exactly (summation order differs).
"""

import os

_requested = os.environ.get("CONVQG_BACKEND", "").strip().lower()

if _requested not in ("", "numba", "numpy"):
    raise RuntimeError(
        f"CONVQG_BACKEND={_requested!r} is not a backend (use 'numba' or 'numpy')"
    )

if _requested == "numpy":
    from . import numpy_impl as _impl

    BACKEND = "numpy"
elif _requested == "numba":
    from . import numba_impl as _impl

    BACKEND = "numba"
else:
    try:
        from . import numba_impl as _impl

        BACKEND = "numba"
    except ImportError:
        from . import numpy_impl as _impl

        BACKEND = "numpy"


def backend() -> str:
    """Name of the active kernel lane."""
    return BACKEND


softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
layer_norm_fwd = _impl.layer_norm_fwd
layer_norm_bwd = _impl.layer_norm_bwd
gelu_fwd = _impl.gelu_fwd
gelu_bwd = _impl.gelu_bwd
attention_fwd = _impl.attention_fwd
attention_bwd = _impl.attention_bwd
ce_fwd = _impl.ce_fwd
ce_bwd = _impl.ce_bwd
attn_sublayer_fwd = _impl.attn_sublayer_fwd
attn_sublayer_bwd = _impl.attn_sublayer_bwd
ffn_sublayer_fwd = _impl.ffn_sublayer_fwd
ffn_sublayer_bwd = _impl.ffn_sublayer_bwd
adamw_update = _impl.adamw_update
