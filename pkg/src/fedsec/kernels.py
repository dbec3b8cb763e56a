"""Backend selection for the aggregation kernels.

The compiled extension is used when it imports; set ``FEDSEC_PURE_PYTHON=1``
to force the numpy fallback. ``BACKEND`` names the active one.
"""

import os

from . import _pykernels

_NAMES = (
    "coord_median", "trimmed_mean", "column_mean", "pairwise_sq_dists", "krum_scores",
    "row_norms", "clip_mean", "sign_mean", "weiszfeld", "max_cosine",
)


def _load_compiled():
    if os.environ.get("FEDSEC_PURE_PYTHON", "") not in ("", "0"):
        return None
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels


_compiled = _load_compiled()
_active = _compiled if _compiled is not None else _pykernels
BACKEND = "compiled" if _compiled is not None else "python"

coord_median = _active.coord_median
trimmed_mean = _active.trimmed_mean
column_mean = _active.column_mean
pairwise_sq_dists = _active.pairwise_sq_dists
krum_scores = _active.krum_scores
row_norms = _active.row_norms
clip_mean = _active.clip_mean
sign_mean = _active.sign_mean
weiszfeld = _active.weiszfeld
max_cosine = _active.max_cosine


def backends():
    """Every importable backend module keyed by name (for tests and benchmarks)."""
    out = {"python": _pykernels}
    if _compiled is not None:
        out["compiled"] = _compiled
    else:
        try:
            from . import _ckernels
            out["compiled"] = _ckernels
        except ImportError:
            pass
    return out
