"""Numba-compiled kernels. Same contracts as np_backend."""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def conv1d(Z, W, b, stride, n_rows):
    """Pre-activations of a 1-D convolution over the first n_rows windows."""
    C, w, e = W.shape
    out = np.empty((n_rows, C), dtype=np.float64)
    for t in range(n_rows):
        j0 = t * stride
        for c in range(C):
            acc = 0.0
            for i in range(w):
                row = j0 + i
                for m in range(e):
                    acc += W[c, i, m] * Z[row, m]
            out[t, c] = acc + b[c]
    return out


@njit(cache=True, nogil=True)
def pool_backward_to_z(tstar, dur, dus, Wr, Ws, stride, d):
    """Scatter per-filter pooled-window gradients back onto embedded rows."""
    C, w, e = Wr.shape
    dZ = np.zeros((d, e), dtype=np.float64)
    for c in range(C):
        j0 = tstar[c] * stride
        gr = dur[c]
        gs = dus[c]
        for i in range(w):
            for m in range(e):
                dZ[j0 + i, m] += gr * Wr[c, i, m] + gs * Ws[c, i, m]
    return dZ


@njit(cache=True, nogil=True)
def select_bytes_batch(Zp, Wg, M, cur):
    """Per-position descent-line byte choice over 256 embedding candidates."""
    q, e = Zp.shape
    n_cand = M.shape[0]
    out = np.empty(q, dtype=np.int64)
    for p in range(q):
        out[p] = cur[p]
        nn = 0.0
        for m in range(e):
            nn += Wg[p, m] * Wg[p, m]
        if nn <= 0.0:
            continue
        inv = 1.0 / np.sqrt(nn)
        best = -1
        best_d2 = np.inf
        for i in range(n_cand):
            s = 0.0
            for m in range(e):
                s += (Wg[p, m] * inv) * (M[i, m] - Zp[p, m])
            if s <= 0.0:
                continue
            d2 = 0.0
            for m in range(e):
                r = M[i, m] - (Zp[p, m] + s * (Wg[p, m] * inv))
                d2 += r * r
            if d2 < best_d2:  # strict: lowest byte value wins ties
                best_d2 = d2
                best = i
        if best >= 0:
            out[p] = best
    return out
