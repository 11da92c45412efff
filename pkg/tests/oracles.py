"""Independent reference implementations used as test oracles.

These are deliberately naive (plain loops, ``math``) and share no code
with the package paths they check.
"""
import math

import numpy as np


def naive_head_forward(h, W, b, gamma, beta, eps, relu_output=True):
    """Loop-by-loop evaluation of the four-stage residual head, in float64."""
    x = [float(v) for v in h]
    n_stages = len(W)
    for i in range(n_stages):
        width = len(x)
        mu = sum(x) / width
        var = sum((v - mu) ** 2 for v in x) / width
        inv = 1.0 / math.sqrt(var + float(eps))
        y = [(x[j] - mu) * inv * float(gamma[i][j]) + float(beta[i][j]) for j in range(width)]
        fan_out = W[i].shape[1]
        z = []
        for o in range(fan_out):
            acc = float(b[i][o])
            for j in range(width):
                acc += y[j] * float(W[i][j, o])
            z.append(acc)
        last = i == n_stages - 1
        r = [max(v, 0.0) for v in z] if (not last or relu_output) else z
        if i in (1, 2):
            x = [x[j] + r[j] for j in range(width)]
        else:
            x = r
    return x


def central_difference(f, arr, step):
    """d f / d arr by central differences; perturbs ``arr`` in place and restores it."""
    grad = np.zeros_like(arr, dtype=np.float64)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        orig = arr[idx]
        arr[idx] = orig + step
        up = f()
        arr[idx] = orig - step
        down = f()
        arr[idx] = orig
        grad[idx] = (up - down) / (2 * step)
    return grad


def brute_cosine(u, v):
    nu = math.sqrt(sum(x * x for x in u))
    nv = math.sqrt(sum(x * x for x in v))
    if nu < 1e-12 and nv < 1e-12:
        return 1.0
    if nu < 1e-12 or nv < 1e-12:
        return 0.0
    return max(-1.0, min(1.0, sum(a * c for a, c in zip(u, v)) / (nu * nv)))


def brute_vote(cands, tau, tie_high=False):
    """Enumerate candidates, split by similarity to the last one, average the winner."""
    current = list(cands[-1])
    high, low = [], []
    for k, c in enumerate(cands):
        s = 1.0 if k == len(cands) - 1 else brute_cosine(current, list(c))
        (high if s > tau else low).append(k)
    pick = high if (len(high) > len(low) or (tie_high and len(high) == len(low))) else low
    dim = len(current)
    mean = [sum(float(cands[k][d]) for k in pick) / len(pick) for d in range(dim)]
    mean[-1] = 1.0 if mean[-1] >= 0.5 else 0.0
    return high, low, mean


def brute_mean(cands):
    dim = len(cands[0])
    return [sum(float(c[d]) for c in cands) / len(cands) for d in range(dim)]


def sorted_percentile(values, q):
    """Percentile by sorting and linear interpolation between closest ranks."""
    v = sorted(float(x) for x in values)
    pos = (len(v) - 1) * q / 100.0
    lo = int(math.floor(pos))
    hi = min(lo + 1, len(v) - 1)
    return v[lo] + (v[hi] - v[lo]) * (pos - lo)
