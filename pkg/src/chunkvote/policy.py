"""Backbone-to-head contract: ``<ACT>`` extraction, pass accounting, chunk assembly.

``PseudoBackbone`` stands in for the language model. It is a fixed,
seed-derived affine map from (observation, instruction ids) to a sequence of
hidden states, with configurable matmul busy-work so timing experiments see
a realistic split between prompt prefill and per-token decoding.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from . import tensorfile
from .action_core import ActionChunk, NormalizationStats, denormalize_action
from .errors import InvalidDims, NoActToken, ShapeMismatch
from .head import HeadParams, head_forward


@dataclass
class HiddenSequence:
    hidden: np.ndarray      # (L, H)
    act_mask: np.ndarray    # (L,) bool, True at <ACT> positions

    def __post_init__(self):
        self.act_mask = np.asarray(self.act_mask, dtype=bool)
        if self.hidden.ndim != 2 or self.act_mask.shape != (self.hidden.shape[0],):
            raise ShapeMismatch(
                f"mask length {self.act_mask.shape} does not match sequence {self.hidden.shape}")


@dataclass
class PassCounter:
    decoder_forward_passes: int = 0

    def tick(self, n=1):
        if n < 0:
            raise ValueError("pass counter only moves forward")
        self.decoder_forward_passes += n


def extract_act_hidden(seq: HiddenSequence):
    """Hidden vectors at the ``<ACT>`` positions, in sequence order."""
    idx = np.flatnonzero(seq.act_mask)
    if idx.size == 0:
        raise NoActToken("sequence has no <ACT> position")
    return [seq.hidden[i] for i in idx]


def _seed_from(*parts):
    digest = hashlib.sha256(repr(parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


class PseudoBackbone:
    """Deterministic stand-in for the decoder.

    Cost model: the prompt (instruction ids plus one observation slot) is
    prefilled in one batched pass that does not count as a decoder pass;
    every generated position then costs one pass through ``work_layers``
    square matrices of size ``work_width``.
    """

    def __init__(self, H, obs_dim=8, vocab_size=32, seed=0, work_width=256, work_layers=2,
                 max_len=512):
        if min(H, obs_dim, vocab_size, work_width, max_len) <= 0 or work_layers < 0:
            raise InvalidDims("backbone dimensions must be positive")
        rng = np.random.default_rng(_seed_from("pseudo-backbone", H, obs_dim, vocab_size, seed))
        self.H, self.obs_dim, self.vocab_size = H, obs_dim, vocab_size
        self.act_id = vocab_size  # reserved id just past the instruction vocabulary
        self.embed = rng.standard_normal((vocab_size + 1, H)) / math.sqrt(H)
        self.pos = rng.standard_normal((max_len, H)) * 0.1 / math.sqrt(H)
        self.obs_map = rng.standard_normal((obs_dim, H)) / math.sqrt(obs_dim)
        self.w_in = rng.standard_normal((H, work_width)) / math.sqrt(H)
        self.work = [rng.standard_normal((work_width, work_width)) / math.sqrt(work_width)
                     for _ in range(work_layers)]
        self.w_out = rng.standard_normal((work_width, H)) / math.sqrt(work_width)
        self.max_len = max_len

    @property
    def param_count(self):
        return sum(m.size for m in self.work) + self.w_in.size + self.w_out.size

    def _layers(self, rows):
        x = rows @ self.w_in
        for m in self.work:
            x = x @ m
        return x @ self.w_out

    def _prefill(self, obs, instr):
        obs = np.asarray(obs, dtype=np.float64).reshape(-1)
        if obs.shape != (self.obs_dim,):
            raise ShapeMismatch(f"observation must have {self.obs_dim} entries")
        instr = np.asarray(instr, dtype=np.int64).reshape(-1)
        if np.any(instr < 0) or np.any(instr >= self.vocab_size):
            raise ValueError("instruction ids outside the vocabulary")
        L = instr.size
        rows = self.embed[instr] + self.pos[:L] + obs @ self.obs_map
        prompt = self._layers(rows) if L else np.zeros((0, self.H))
        context = prompt.mean(axis=0) if L else np.zeros(self.H)
        return prompt, context, obs @ self.obs_map

    def _decode_step(self, token_id, position, context, obs_term, counter):
        row = self.embed[token_id] + self.pos[position] + obs_term + context
        if counter is not None:
            counter.tick()
        return self._layers(row[None, :])[0]

    def __call__(self, obs, instr, n_act=1, counter=None):
        """Run prefill then generate ``n_act`` ``<ACT>`` positions at the tail."""
        prompt, context, obs_term = self._prefill(obs, instr)
        L = prompt.shape[0]
        if L + n_act > self.max_len:
            raise ShapeMismatch("sequence longer than the position table")
        gen = [self._decode_step(self.act_id, L + j, context, obs_term, counter)
               for j in range(n_act)]
        hidden = np.vstack([prompt] + [g[None, :] for g in gen]) if gen else prompt
        mask = np.zeros(L + n_act, dtype=bool)
        mask[L:] = True
        return HiddenSequence(hidden, mask)

    def serial_decode(self, obs, instr, n_steps, counter=None):
        """Autoregressive token-by-token decode of ``n_steps`` positions (values discarded)."""
        prompt, context, obs_term = self._prefill(obs, instr)
        L = prompt.shape[0]
        token = self.act_id
        for j in range(n_steps):
            h = self._decode_step(token, min(L + j, self.max_len - 1), context, obs_term, counter)
            token = int(np.argmax(h[: self.vocab_size]))
        return n_steps


def pseudo_backbone(obs, instr, seed=0, H=64, n_act=1, counter=None, **kw):
    """One-shot convenience wrapper around ``PseudoBackbone``."""
    obs = np.asarray(obs, dtype=np.float64).reshape(-1)
    bb = PseudoBackbone(H, obs_dim=obs.size, seed=seed, **kw)
    return bb(obs, instr, n_act=n_act, counter=counter)


def decode_hidden(hvecs, head: HeadParams, stats: NormalizationStats | None = None,
                  origin_step=0):
    """Run the head on each ``<ACT>`` vector and concatenate into one chunk.

    Head outputs are clipped to the normalized range before denormalizing,
    since an unbounded ReLU output may overshoot it.
    """
    hvecs = np.atleast_2d(np.asarray(hvecs))
    out = head_forward(hvecs, head).reshape(-1, head.A).astype(np.float64)
    if stats is not None:
        lo, hi = stats.target
        out[:, :6] = np.clip(out[:, :6], lo, hi)
        out = denormalize_action(out, stats)
    return ActionChunk(out, origin_step)


def predict_chunk(obs, instr, head: HeadParams, tokens=1, backbone: PseudoBackbone | None = None,
                  stats=None, counter=None, origin_step=0, seed=0):
    """Full pipeline: backbone, ``<ACT>`` extraction, head, concatenation.

    Returns a chunk of ``tokens * head.N`` actions.
    """
    if tokens < 1:
        raise InvalidDims("tokens must be >= 1")
    if backbone is None:
        backbone = PseudoBackbone(head.H, obs_dim=np.asarray(obs).size, seed=seed)
    if backbone.H != head.H:
        raise ShapeMismatch(f"backbone width {backbone.H} != head width {head.H}")
    seq = backbone(obs, instr, n_act=tokens, counter=counter)
    hvecs = extract_act_hidden(seq)
    if len(hvecs) != tokens:
        raise ShapeMismatch(f"expected {tokens} <ACT> vectors, got {len(hvecs)}")
    return decode_hidden(np.vstack(hvecs), head, stats, origin_step)


def serial_decode_baseline(obs, instr, N, A, backbone: PseudoBackbone | None = None,
                           counter=None, seed=0):
    """Emulate one-token-per-dimension autoregressive decoding; returns N*A passes."""
    if N < 1 or A < 1:
        raise InvalidDims("N and A must be >= 1")
    if backbone is None:
        backbone = PseudoBackbone(16, obs_dim=np.asarray(obs).size, seed=seed, work_layers=0)
    local = PassCounter()
    backbone.serial_decode(obs, instr, N * A, counter=local)
    if counter is not None:
        counter.tick(local.decoder_forward_passes)
    return local.decoder_forward_passes


class HiddenReplay:
    """Captured ``<ACT>`` hidden states, tensors named ``h_act/<step>`` of shape (tokens, H)."""

    PREFIX = "h_act/"

    def __init__(self, tensors, meta=None):
        self.meta = dict(meta or {})
        self.steps = {}
        for name, arr in tensors.items():
            if not name.startswith(self.PREFIX):
                continue
            try:
                step = int(name[len(self.PREFIX):])
            except ValueError as exc:
                raise ValueError(f"bad replay tensor name {name!r}") from exc
            self.steps[step] = np.atleast_2d(arr)

    @classmethod
    def load(cls, path):
        manifest, tensors = tensorfile.load(path)
        manifest.pop("tensors", None)
        return cls(tensors, manifest)

    def save(self, path):
        tensorfile.dump(path, {f"{self.PREFIX}{s}": h for s, h in sorted(self.steps.items())},
                        self.meta)

    def __len__(self):
        return len(self.steps)

    def __getitem__(self, step):
        return self.steps[step]

    def predict(self, step, head, stats=None):
        return decode_hidden(self.steps[step], head, stats, origin_step=step)
