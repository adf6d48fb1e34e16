"""Kernel selection: compiled extension when available, pure twin otherwise.

MEMDB_PURE=1 forces the fallback; the benchmark uses that to compare paths.
"""

import os

from memdb._kernels import _pure

if os.environ.get("MEMDB_PURE") == "1":
    _impl = _pure
else:
    try:
        from memdb._kernels import _native as _impl  # type: ignore[no-redef]
    except ImportError:  # extension not built: stay correct, just slower
        _impl = _pure

crc32c = _impl.crc32c
topk = _impl.topk
HAVE_NATIVE = _impl is not _pure

__all__ = ["crc32c", "topk", "HAVE_NATIVE"]
