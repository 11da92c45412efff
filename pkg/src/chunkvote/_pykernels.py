"""Pure-numpy implementations of the ensemble hot kernels.

Each function mirrors one in ``_ckernels.pyx`` exactly; ``kernels`` picks
one backend at import time.
"""
import numpy as np

ZERO_NORM = 1e-12


def cosine_similarity(u, v):
    nu = np.sqrt(np.dot(u, u))
    nv = np.sqrt(np.dot(v, v))
    if nu < ZERO_NORM or nv < ZERO_NORM:
        return 1.0 if (nu < ZERO_NORM and nv < ZERO_NORM) else 0.0
    s = float(np.dot(u, v)) / (nu * nv)
    return min(1.0, max(-1.0, s))


def similarities_to_last(cands):
    """Cosine similarity of every row against the last row; last entry is 1."""
    m = cands.shape[0]
    ref = cands[m - 1]
    sims = np.empty(m)
    for k in range(m - 1):
        sims[k] = cosine_similarity(cands[k], ref)
    sims[m - 1] = 1.0
    return sims


def centered_mean(cands, mask):
    # anchored at the last row so unanimous inputs reproduce it bit-for-bit
    ref = cands[-1]
    sel = cands[mask.astype(bool)]
    return ref + (sel - ref).sum(axis=0) / sel.shape[0]


def centered_weighted_mean(cands, weights):
    ref = cands[-1]
    return ref + weights @ (cands - ref)


def vote(cands, tau, tie_high):
    sims = similarities_to_last(cands)
    high = (sims > tau).astype(np.uint8)
    n_high = int(high.sum())
    n_low = cands.shape[0] - n_high
    if n_high > n_low or (tie_high and n_high == n_low):
        chosen = centered_mean(cands, high)
    else:
        chosen = centered_mean(cands, 1 - high)
    return sims, high, chosen
