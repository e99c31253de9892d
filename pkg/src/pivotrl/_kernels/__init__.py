"""Hot numeric kernels with a compiled backend and a pure-Python fallback.

The Cython extension is used when it was built and importable. Setting
``PIVOTRL_PURE_PYTHON=1`` forces the fallback. ``BACKEND`` names the choice.
"""

from __future__ import annotations

import os

from . import _pure

if os.environ.get("PIVOTRL_PURE_PYTHON", "") not in ("", "0"):
    _impl = _pure
else:
    try:
        from . import _ckernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _pure

BACKEND = "cython" if _impl is not _pure else "python"

N_PARAMS = _pure.N_PARAMS
SLOT_BLOCK = _pure.SLOT_BLOCK
PERC_KW_BLOCK = _pure.PERC_KW_BLOCK
PERC_PLAIN_BLOCK = _pure.PERC_PLAIN_BLOCK
ANSWER_BLOCK = _pure.ANSWER_BLOCK

sample_episode = _impl.sample_episode
decision_logprobs = _impl.decision_logprobs
decision_jacobian = _impl.decision_jacobian
clipped_surrogate = _impl.clipped_surrogate
accumulate_rows = _impl.accumulate_rows
group_advantages = _impl.group_advantages


def compiled():
    """The compiled module, or None when the extension is unavailable."""
    try:
        from . import _ckernels
    except ImportError:
        return None
    return _ckernels
