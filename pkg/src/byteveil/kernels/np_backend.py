"""Pure-NumPy implementations of the hot kernels."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

# Bound on the (positions x 256 x e) scratch arrays in select_bytes_batch.
_SELECT_CHUNK = 4096


def conv1d(Z, W, b, stride, n_rows):
    """Pre-activations of a 1-D convolution over the first n_rows windows.

    Z: (d, e) float64 rows, W: (C, w, e) filters, b: (C,) bias. Window t
    covers rows [t*stride, t*stride + w). Returns (n_rows, C).
    """
    C, w, e = W.shape
    if n_rows == 0:
        return np.zeros((0, C), dtype=np.float64)
    windows = sliding_window_view(Z, (w, e))[: (n_rows - 1) * stride + 1 : stride, 0]
    return windows.reshape(n_rows, w * e) @ W.reshape(C, w * e).T + b


def pool_backward_to_z(tstar, dur, dus, Wr, Ws, stride, d):
    """Scatter per-filter pooled-window gradients back onto embedded rows.

    tstar[c] is filter c's argmax window; dur/dus are the pre-activation
    gradients of the two branches at that window. Returns dZ of shape (d, e).
    """
    C, w, e = Wr.shape
    dZ = np.zeros((d, e), dtype=np.float64)
    for c in range(C):
        j0 = int(tstar[c]) * stride
        dZ[j0 : j0 + w] += dur[c] * Wr[c] + dus[c] * Ws[c]
    return dZ


def select_bytes_batch(Zp, Wg, M, cur):
    """Per-position descent-line byte choice over 256 embedding candidates.

    For each position p with direction n = Wg[p]/||Wg[p]||, computes
    s_i = n.(M[i] - Zp[p]) and the distance from M[i] to the line point
    Zp[p] + s_i*n, then picks the closest candidate among those with
    s_i > 0 (lowest byte value on ties). Positions with zero gradient or
    no candidate strictly ahead keep cur[p].
    """
    q, e = Zp.shape
    out = np.asarray(cur, dtype=np.int64).copy()
    norms = np.sqrt((Wg * Wg).sum(axis=1))
    for lo in range(0, q, _SELECT_CHUNK):
        hi = min(lo + _SELECT_CHUNK, q)
        ok = norms[lo:hi] > 0.0
        if not ok.any():
            continue
        N = np.zeros_like(Wg[lo:hi])
        N[ok] = Wg[lo:hi][ok] / norms[lo:hi][ok, None]
        A = M[None, :, :] - Zp[lo:hi, None, :]          # (chunk, 256, e)
        S = np.einsum("pie,pe->pi", A, N)               # (chunk, 256)
        R = A - S[:, :, None] * N[:, None, :]
        D2 = (R * R).sum(axis=2)
        feasible = S > 0.0
        D2 = np.where(feasible, D2, np.inf)
        best = np.argmin(D2, axis=1)                    # first minimum wins
        take = ok & feasible.any(axis=1)
        out[lo:hi][take] = best[take]
    return out
