"""Pure-Python twins of the compiled kernels. Same contracts, no speed."""

import numpy as np

_POLY = 0x82F63B78


def _make_table():
    table = []
    for i in range(256):
        c = i
        for _ in range(8):
            c = (_POLY ^ (c >> 1)) if c & 1 else c >> 1
        table.append(c)
    return tuple(table)


_TABLE = _make_table()


def crc32c(data, crc=0):
    """CRC-32C (Castagnoli) of ``data``, continuing from ``crc``."""
    c = crc ^ 0xFFFFFFFF
    table = _TABLE
    for b in bytes(data):
        c = table[(c ^ b) & 0xFF] ^ (c >> 8)
    return (c ^ 0xFFFFFFFF) & 0xFFFFFFFF


def topk(scores, keys, k):
    """Indices of the ``k`` best scores, ordered by (score desc, key asc)."""
    scores = np.asarray(scores, dtype=np.float64)
    keys = np.asarray(keys, dtype=np.int64)
    if scores.shape[0] != keys.shape[0]:
        raise ValueError("scores and keys must have equal length")
    k = min(k, scores.shape[0])
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    order = np.lexsort((keys, -scores))
    return order[:k].astype(np.int64, copy=False)
