# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels.

Two inner loops dominate the engine's runtime and are not served well by
numpy: CRC-32C over log entry bytes (sequential byte fold on every write,
read, and recovery replay) and top-k selection with a deterministic tie
rule (score descending, then key ascending). Both have bit-identical
pure-Python twins in ``_pure.py``; ``memdb bench`` compares the two.
"""

from libc.stdint cimport int64_t, uint8_t, uint32_t

import numpy as np

cdef uint32_t[256] CRC_TABLE
cdef uint32_t _POLY = <uint32_t>0x82F63B78
cdef uint32_t _MASK = <uint32_t>0xFFFFFFFF


cdef void _init_table() noexcept nogil:
    cdef uint32_t i, j, c
    for i in range(256):
        c = i
        for j in range(8):
            if c & 1:
                c = _POLY ^ (c >> 1)
            else:
                c = c >> 1
        CRC_TABLE[i] = c


_init_table()


def crc32c(const uint8_t[::1] data, uint32_t crc=0):
    """CRC-32C (Castagnoli) of ``data``, continuing from ``crc``."""
    cdef Py_ssize_t i, n = data.shape[0]
    cdef uint32_t c = crc ^ _MASK
    with nogil:
        for i in range(n):
            c = CRC_TABLE[(c ^ data[i]) & 0xFF] ^ (c >> 8)
    return c ^ _MASK


cdef inline bint _worse(double s1, int64_t k1, double s2, int64_t k2) noexcept nogil:
    # True when (s1, k1) ranks strictly worse than (s2, k2):
    # lower score loses; equal scores, higher key loses.
    if s1 != s2:
        return s1 < s2
    return k1 > k2


def topk(const double[::1] scores, const int64_t[::1] keys, Py_ssize_t k):
    """Indices of the ``k`` best scores, ordered by (score desc, key asc).

    Single pass with a bounded min-heap keyed by rank: O(n log k) and no
    O(n) temporaries, versus the fallback's full lexsort.
    """
    cdef Py_ssize_t n = scores.shape[0]
    if keys.shape[0] != n:
        raise ValueError("scores and keys must have equal length")
    if k > n:
        k = n
    if k <= 0:
        return np.empty(0, dtype=np.int64)

    out_arr = np.empty(k, dtype=np.int64)
    hs_arr = np.empty(k, dtype=np.float64)
    hk_arr = np.empty(k, dtype=np.int64)
    hi_arr = np.empty(k, dtype=np.int64)
    cdef int64_t[::1] out = out_arr
    cdef double[::1] hs = hs_arr
    cdef int64_t[::1] hk = hk_arr
    cdef int64_t[::1] hi = hi_arr

    cdef Py_ssize_t size = 0, i, pos, parent, child, right
    cdef double cs
    cdef int64_t ck, ci

    with nogil:
        for i in range(n):
            cs = scores[i]
            ck = keys[i]
            if size < k:
                # sift up from the bottom; root holds the worst kept item
                pos = size
                size += 1
                while pos > 0:
                    parent = (pos - 1) >> 1
                    if not _worse(cs, ck, hs[parent], hk[parent]):
                        break
                    hs[pos] = hs[parent]
                    hk[pos] = hk[parent]
                    hi[pos] = hi[parent]
                    pos = parent
                hs[pos] = cs
                hk[pos] = ck
                hi[pos] = i
            elif _worse(hs[0], hk[0], cs, ck):
                # candidate beats the current worst: replace root, sift down
                pos = 0
                while True:
                    child = 2 * pos + 1
                    if child >= k:
                        break
                    right = child + 1
                    if right < k and _worse(hs[right], hk[right], hs[child], hk[child]):
                        child = right
                    if _worse(hs[child], hk[child], cs, ck):
                        hs[pos] = hs[child]
                        hk[pos] = hk[child]
                        hi[pos] = hi[child]
                        pos = child
                    else:
                        break
                hs[pos] = cs
                hk[pos] = ck
                hi[pos] = i

        # pop worst-first, filling the output from the back
        for i in range(k - 1, -1, -1):
            out[i] = hi[0]
            size -= 1
            cs = hs[size]
            ck = hk[size]
            ci = hi[size]
            pos = 0
            while True:
                child = 2 * pos + 1
                if child >= size:
                    break
                right = child + 1
                if right < size and _worse(hs[right], hk[right], hs[child], hk[child]):
                    child = right
                if _worse(hs[child], hk[child], cs, ck):
                    hs[pos] = hs[child]
                    hk[pos] = hk[child]
                    hi[pos] = hi[child]
                    pos = child
                else:
                    break
            hs[pos] = cs
            hk[pos] = ck
            hi[pos] = ci

    return out_arr
