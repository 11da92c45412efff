"""Vote-based adaptive action ensemble and baseline aggregators.

At step t the committee holds the prediction for t from each retained chunk
(predicted at t-k, read at offset k), ordered oldest first, with the current
prediction last. Voting splits the committee by cosine similarity to the
current prediction at threshold ``tau`` and averages the larger side; on a
tie the low-similarity side wins unless ``tie_break="high_set"``.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import kernels
from .action_core import ActionChunk, binarize_gripper
from .errors import EmptyCandidates, MissingCurrent, NonMonotonicStep

STRATEGIES = ("vote", "naive_average", "static_weighted", "none")
TIE_BREAKS = ("low_set", "high_set")


@dataclass(frozen=True)
class EnsembleConfig:
    K: int = 4
    tau: float = 0.5
    strategy: str = "vote"
    static_weight_decay: float = 0.5
    tie_break: str = "low_set"

    def __post_init__(self):
        if self.K < 0:
            raise ValueError("K must be >= 0")
        if not -1.0 < self.tau < 1.0:
            raise ValueError("tau must lie in (-1, 1)")
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.tie_break not in TIE_BREAKS:
            raise ValueError(f"tie_break must be one of {TIE_BREAKS}")
        if self.static_weight_decay < 0:
            raise ValueError("static_weight_decay must be >= 0")

    def full_committee(self, N):
        return self.K + 1 <= N


@dataclass
class VoteResult:
    action: np.ndarray
    high: list
    low: list
    similarities: np.ndarray

    @property
    def chose_high(self):
        return len(self.high) > len(self.low)


class HistoryBuffer:
    """Ring of the K+1 most recent chunks, keyed by origin step."""

    def __init__(self, K):
        if K < 0:
            raise ValueError("K must be >= 0")
        self.K = K
        self._chunks = deque(maxlen=K + 1)

    def __len__(self):
        return len(self._chunks)

    def __iter__(self):
        return iter(self._chunks)

    @property
    def steps(self):
        return [c.origin_step for c in self._chunks]

    def push(self, chunk: ActionChunk):
        if self._chunks and chunk.origin_step <= self._chunks[-1].origin_step:
            raise NonMonotonicStep(
                f"step {chunk.origin_step} does not follow {self._chunks[-1].origin_step}")
        self._chunks.append(chunk)

    def get(self, step):
        for c in self._chunks:
            if c.origin_step == step:
                return c
        return None


def push_prediction(buf: HistoryBuffer, chunk: ActionChunk):
    buf.push(chunk)


def candidates_for(buf: HistoryBuffer, t, K=None):
    """Predictions for step ``t``, oldest first; the current one (from step t) is last.

    Returns ``(actions, ages)`` where ``ages[i]`` is how many steps before
    ``t`` the i-th candidate was predicted.
    """
    K = buf.K if K is None else K
    if buf.get(t) is None:
        raise MissingCurrent(f"no chunk predicted at step {t}")
    acts, ages = [], []
    for k in range(K, -1, -1):
        chunk = buf.get(t - k)
        if chunk is not None and k < chunk.size:
            acts.append(chunk.actions[k])
            ages.append(k)
    return acts, ages


def _as_matrix(cands):
    if len(cands) == 0:
        raise EmptyCandidates("no candidates to aggregate")
    return np.ascontiguousarray(np.vstack(cands), dtype=np.float64)


def vote_ensemble(cands, tau=0.5, tie_break="low_set", binarize=True):
    """Cosine-similarity vote over ``cands`` (last entry is the current prediction)."""
    m = _as_matrix(cands)
    sims, high, chosen = kernels.vote(m, float(tau), tie_break == "high_set")
    hi = [int(i) for i in np.flatnonzero(high)]
    lo = [int(i) for i in np.flatnonzero(high == 0)]
    if binarize:
        chosen = binarize_gripper(chosen)
    return VoteResult(chosen, hi, lo, np.asarray(sims))


def naive_average(cands, binarize=True):
    m = _as_matrix(cands)
    out = kernels.centered_mean(m, np.ones(m.shape[0], dtype=np.uint8))
    return binarize_gripper(out) if binarize else out


def static_weights(ages, decay):
    """Normalized weights proportional to exp(-decay * age)."""
    ages = np.asarray(ages, dtype=np.float64)
    if math.isinf(decay):
        w = (ages == ages.min()).astype(np.float64)
    else:
        w = np.exp(-decay * (ages - ages.min()))
    return w / w.sum()


def static_weighted(cands, decay, ages=None, binarize=True):
    """Exponentially age-decayed mean; ``ages`` default to oldest-first, current = 0."""
    m = _as_matrix(cands)
    if decay < 0:
        raise ValueError("decay must be >= 0")
    if ages is None:
        ages = np.arange(m.shape[0] - 1, -1, -1)
    out = kernels.centered_weighted_mean(m, static_weights(ages, decay))
    return binarize_gripper(out) if binarize else out


def aggregate(cands, cfg: EnsembleConfig, ages=None):
    """Apply ``cfg.strategy``; returns ``(action, VoteResult or None)``."""
    if cfg.strategy == "vote":
        res = vote_ensemble(cands, cfg.tau, cfg.tie_break)
        return res.action, res
    if cfg.strategy == "naive_average":
        return naive_average(cands), None
    if cfg.strategy == "static_weighted":
        return static_weighted(cands, cfg.static_weight_decay, ages), None
    if len(cands) == 0:
        raise EmptyCandidates("no candidates to aggregate")
    return binarize_gripper(np.asarray(cands[-1], dtype=np.float64)), None


def trace_record(t, cands, cfg: EnsembleConfig, ages=None):
    """One ensemble-trace record for step ``t``.

    Similarities and the high/low split are reported for every strategy so
    traces of different aggregators line up.
    """
    action, res = aggregate(cands, cfg, ages)
    if res is None:
        res = vote_ensemble(cands, cfg.tau, cfg.tie_break)
    return {
        "t": int(t),
        "similarities": [float(s) for s in res.similarities],
        "high": res.high,
        "low": res.low,
        "strategy": cfg.strategy,
        "action": [float(x) for x in action],
    }


def dumps_record(rec):
    return json.dumps(rec, separators=(",", ":"))
