"""Actions, action chunks, normalization statistics and cosine similarity.

An action is a length-7 float vector ``(dx, dy, dz, dphi, dtheta, dpsi, g)``.
The first six entries are continuous deltas; ``g`` is the gripper command.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import (
    DegenerateDimension,
    EmptyDataset,
    LengthMismatch,
    OutOfRange,
    ShapeMismatch,
)

ACTION_DIM = 7
CONTINUOUS_DIM = 6
GRIPPER = 6
FIELDS = ("dx", "dy", "dz", "dphi", "dtheta", "dpsi", "g")

# target interval of the affine map, keyed by NormalizationStats.range
RANGES = {"unit": (0.0, 1.0), "symmetric": (-1.0, 1.0)}
ROUNDTRIP_SLACK = 1e-9


def make_action(dx=0.0, dy=0.0, dz=0.0, dphi=0.0, dtheta=0.0, dpsi=0.0, g=0.0):
    return np.array([dx, dy, dz, dphi, dtheta, dpsi, g], dtype=np.float64)


def binarize_gripper(action):
    """Copy of ``action`` with the gripper rounded to {0, 1} at 0.5."""
    out = np.array(action, dtype=np.float64, copy=True)
    out[..., GRIPPER] = (out[..., GRIPPER] >= 0.5).astype(np.float64)
    return out


@dataclass
class ActionChunk:
    """N consecutive actions predicted from the observation at ``origin_step``.

    ``actions[k]`` is the prediction for absolute step ``origin_step + k``.
    """

    actions: np.ndarray
    origin_step: int = 0

    def __post_init__(self):
        self.actions = np.atleast_2d(np.asarray(self.actions, dtype=np.float64))
        if self.actions.ndim != 2 or self.actions.shape[0] == 0:
            raise ShapeMismatch(f"chunk must be (N, A) with N > 0, got {self.actions.shape}")

    def __len__(self):
        return self.actions.shape[0]

    @property
    def size(self):
        return self.actions.shape[0]

    def action_for(self, step):
        """Prediction for absolute ``step``, or None when outside the chunk."""
        k = step - self.origin_step
        if 0 <= k < self.size:
            return self.actions[k]
        return None


@dataclass(frozen=True)
class NormalizationStats:
    """Per-dimension bounds for the six continuous action dimensions."""

    q_low: np.ndarray
    q_high: np.ndarray
    range: str = "unit"

    def __post_init__(self):
        lo = np.asarray(self.q_low, dtype=np.float64).reshape(-1)
        hi = np.asarray(self.q_high, dtype=np.float64).reshape(-1)
        if lo.shape != (CONTINUOUS_DIM,) or hi.shape != (CONTINUOUS_DIM,):
            raise ShapeMismatch("q_low and q_high need 6 entries each")
        bad = np.nonzero(~(lo < hi))[0]
        if bad.size:
            raise DegenerateDimension(f"q_low >= q_high in dimension(s) {bad.tolist()}")
        if self.range not in RANGES:
            raise ValueError(f"range must be one of {sorted(RANGES)}, got {self.range!r}")
        object.__setattr__(self, "q_low", lo)
        object.__setattr__(self, "q_high", hi)

    @property
    def target(self):
        return RANGES[self.range]

    def to_dict(self):
        return {"q_low": self.q_low.tolist(), "q_high": self.q_high.tolist(), "range": self.range}

    def to_json(self):
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["q_low"]), np.asarray(d["q_high"]), d.get("range", "unit"))

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    @classmethod
    def symmetric_bounds(cls, bound):
        """Stats mapping ``[-bound, bound]`` onto ``[-1, 1]`` (zero stays zero)."""
        b = np.broadcast_to(np.asarray(bound, dtype=np.float64), (CONTINUOUS_DIM,))
        return cls(-b, b.copy(), "symmetric")


def compute_stats(dataset, range="unit", low_pct=1.0, high_pct=99.0):
    """1st/99th-percentile bounds of each continuous dimension over ``dataset``."""
    data = np.asarray(dataset, dtype=np.float64)
    if data.size == 0:
        raise EmptyDataset("cannot compute statistics of an empty dataset")
    data = np.atleast_2d(data)
    if data.shape[1] != ACTION_DIM:
        raise ShapeMismatch(f"actions must have {ACTION_DIM} dims, got {data.shape[1]}")
    lo = np.percentile(data[:, :CONTINUOUS_DIM], low_pct, axis=0)
    hi = np.percentile(data[:, :CONTINUOUS_DIM], high_pct, axis=0)
    flat = np.nonzero(lo >= hi)[0]
    if flat.size:
        raise DegenerateDimension(f"zero spread in dimension(s) {[FIELDS[i] for i in flat]}")
    return NormalizationStats(lo, hi, range)


def normalize_action(a, s: NormalizationStats):
    """Affine map of the continuous dims onto the target range, clipped; ``g`` unchanged.

    Works on a single action or any array whose last axis is the action axis.
    """
    a = np.asarray(a, dtype=np.float64)
    t_lo, t_hi = s.target
    out = a.copy()
    unit = (a[..., :CONTINUOUS_DIM] - s.q_low) / (s.q_high - s.q_low)
    out[..., :CONTINUOUS_DIM] = np.clip(t_lo + unit * (t_hi - t_lo), t_lo, t_hi)
    return out


def denormalize_action(a_norm, s: NormalizationStats):
    """Inverse of ``normalize_action``; the gripper is rounded at 0.5."""
    a_norm = np.asarray(a_norm, dtype=np.float64)
    t_lo, t_hi = s.target
    cont = a_norm[..., :CONTINUOUS_DIM]
    if np.any(cont < t_lo - ROUNDTRIP_SLACK) or np.any(cont > t_hi + ROUNDTRIP_SLACK):
        raise OutOfRange(f"normalized values must lie in [{t_lo}, {t_hi}]")
    out = binarize_gripper(a_norm)
    unit = (np.clip(cont, t_lo, t_hi) - t_lo) / (t_hi - t_lo)
    out[..., :CONTINUOUS_DIM] = s.q_low + unit * (s.q_high - s.q_low)
    return out


def cosine_similarity(u, v):
    """Cosine similarity in [-1, 1].

    A vector with norm below 1e-12 counts as idle: two idle vectors are
    fully similar (1), an idle and a moving one are unrelated (0).
    """
    u = np.ascontiguousarray(u, dtype=np.float64).reshape(-1)
    v = np.ascontiguousarray(v, dtype=np.float64).reshape(-1)
    if u.shape != v.shape:
        raise LengthMismatch(f"vectors differ in length: {u.shape[0]} vs {v.shape[0]}")
    return float(kernels.cosine_similarity(u, v))
