"""Hot inner loops of the analysis chain.

Each kernel is written once as a plain Python function over numpy arrays and
compiled with numba's @njit when available.  Setting the environment variable
``TELEPORTSIM_NO_NUMBA=1`` (before import) selects the uncompiled fallback,
which is slow but bit-identical; ``benchmarks/bench_kernels.py`` compares the
two paths.
"""
from __future__ import annotations

import os

import numpy as np

USE_NUMBA = os.environ.get("TELEPORTSIM_NO_NUMBA", "0").lower() not in ("1", "true", "yes")

if USE_NUMBA:
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a declared dependency
        USE_NUMBA = False

if not USE_NUMBA:
    def njit(*args, **kwargs):
        if args and callable(args[0]):
            return args[0]
        return lambda f: f


@njit(cache=True)
def greedy_pair_indices(times_a, times_b, window_ps):
    """Greedy earliest-match pairing of two sorted int64 tag-time arrays.

    Scans both streams in time order; a pair forms as soon as
    |t_a - t_b| <= window_ps (boundary inclusive) and each tag joins at most
    one pair.  Equivalent to matching each a-tag, in order, with the earliest
    unused b-tag inside the window.  Returns index arrays into a and b.
    """
    na = times_a.shape[0]
    nb = times_b.shape[0]
    cap = na if na < nb else nb
    out_a = np.empty(cap, dtype=np.int64)
    out_b = np.empty(cap, dtype=np.int64)
    i = 0
    j = 0
    n = 0
    while i < na and j < nb:
        d = times_a[i] - times_b[j]
        if d > window_ps:
            j += 1
        elif d < -window_ps:
            i += 1
        else:
            out_a[n] = i
            out_b[n] = j
            n += 1
            i += 1
            j += 1
    return out_a[:n], out_b[:n]


@njit(cache=True)
def lag_histogram(times_a, times_b, lo_ps, hi_ps, bin_ps):
    """Histogram of pairwise differences (t_b - t_a) within [lo_ps, hi_ps].

    Both inputs sorted int64; two-pointer sweep so only in-range pairs are
    touched.  Bin k covers [lo_ps + k*bin_ps, lo_ps + (k+1)*bin_ps).
    """
    nbins = int((hi_ps - lo_ps) // bin_ps) + 1
    counts = np.zeros(nbins, dtype=np.int64)
    nb = times_b.shape[0]
    j_lo = 0
    for i in range(times_a.shape[0]):
        lo_edge = times_a[i] + lo_ps
        hi_edge = times_a[i] + hi_ps
        while j_lo < nb and times_b[j_lo] < lo_edge:
            j_lo += 1
        j = j_lo
        while j < nb and times_b[j] <= hi_edge:
            k = (times_b[j] - lo_edge) // bin_ps
            if k < nbins:
                counts[k] += 1
            j += 1
    return counts


# channel codes shared with the ttag format: t..d = 0..4 at the sender
_PAIR_LABEL_LUT = np.full((5, 5), -1, dtype=np.int8)
_PAIR_LABEL_LUT[1, 4] = 0  # a,d -> psi minus
_PAIR_LABEL_LUT[2, 3] = 0  # b,c -> psi minus
_PAIR_LABEL_LUT[1, 2] = 1  # a,b -> psi plus
_PAIR_LABEL_LUT[3, 4] = 1  # c,d -> psi plus
_PAIR_LABEL_LUT.setflags(write=False)


@njit(cache=True)
def group_triples(times, channels, window_ps, pair_label_lut):
    """Identify trigger-anchored detector triples in one sorted tag stream.

    For every unused trigger tag (channel 0), the two nearest unused
    non-trigger tags within +-window_ps are consumed; the channel pair then
    classifies the event via ``pair_label_lut`` (label >= 0) or discards it.
    Returns (triple_times, labels, n_valid, n_discarded, n_incomplete);
    triple time is the trigger tag time.
    """
    n = times.shape[0]
    used = np.zeros(n, dtype=np.bool_)
    out_times = np.empty(n, dtype=np.int64)
    out_labels = np.empty(n, dtype=np.uint8)
    n_valid = 0
    n_discarded = 0
    n_incomplete = 0
    for idx in range(n):
        if used[idx] or channels[idx] != 0:
            continue
        t0 = times[idx]
        # nearest two unused non-trigger tags inside the window
        best1 = -1
        best2 = -1
        d1 = window_ps + 1
        d2 = window_ps + 1
        k = idx - 1
        while k >= 0 and t0 - times[k] <= window_ps:
            if not used[k] and channels[k] != 0:
                d = t0 - times[k]
                if d < d1 or (d == d1 and best1 == -1):
                    best2 = best1
                    d2 = d1
                    best1 = k
                    d1 = d
                elif d < d2:
                    best2 = k
                    d2 = d
            k -= 1
        k = idx + 1
        while k < n and times[k] - t0 <= window_ps:
            if not used[k] and channels[k] != 0:
                d = times[k] - t0
                if d < d1:
                    best2 = best1
                    d2 = d1
                    best1 = k
                    d1 = d
                elif d < d2:
                    best2 = k
                    d2 = d
            k += 1
        if best1 < 0 or best2 < 0:
            n_incomplete += 1
            continue
        used[idx] = True
        used[best1] = True
        used[best2] = True
        c1 = channels[best1]
        c2 = channels[best2]
        if c1 > c2:
            c1, c2 = c2, c1
        label = pair_label_lut[c1, c2] if c1 != c2 else -1
        if label < 0:
            n_discarded += 1
        else:
            out_times[n_valid] = t0
            out_labels[n_valid] = label
            n_valid += 1
    return out_times[:n_valid], out_labels[:n_valid], n_valid, n_discarded, n_incomplete


def classify_triples(times, channels, window_ps):
    """Wrapper binding the detector-pair lookup table."""
    return group_triples(
        np.ascontiguousarray(times, dtype=np.int64),
        np.ascontiguousarray(channels, dtype=np.uint8),
        np.int64(window_ps),
        _PAIR_LABEL_LUT,
    )


def in_any_interval(times, centers, half_width_ps):
    """Boolean mask: which times fall within +-half_width of any center.

    Vectorized numpy (searchsorted); not a jit kernel because it is already
    array-parallel.
    """
    times = np.asarray(times, dtype=np.int64)
    centers = np.ascontiguousarray(centers, dtype=np.int64)
    if centers.size == 0:
        return np.zeros(times.shape, dtype=bool)
    pos = np.searchsorted(centers, times)
    left = np.clip(pos - 1, 0, centers.size - 1)
    right = np.clip(pos, 0, centers.size - 1)
    near_left = np.abs(times - centers[left]) <= half_width_ps
    near_right = np.abs(times - centers[right]) <= half_width_ps
    return near_left | near_right
