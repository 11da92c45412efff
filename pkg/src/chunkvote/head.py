"""Residual MLP action head, its losses, and a toy trainer.

The head maps one ``<ACT>`` hidden state of width H to a chunk of N
normalized actions of dimension A::

    x1 = ReLU(LN1(x0) W1 + b1)
    x2 = x1 + ReLU(LN2(x1) W2 + b2)
    x3 = x2 + ReLU(LN3(x2) W3 + b3)
    a  = act(LN4(x3) W4 + b4)        act = ReLU (default) or identity

Row-vector convention throughout: ``W_i`` has shape (fan_in, fan_out).
Parameters and outputs keep the parameter dtype (float32 at runtime);
forward and backward accumulate in float64.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from . import tensorfile
from .errors import Diverged, InvalidDims, NonFiniteInput, ShapeMismatch

STAGES = 4
ACTIVATIONS = ("relu", "linear")


@dataclass
class HeadParams:
    W: list
    b: list
    gamma: list
    beta: list
    N: int
    A: int
    eps: float = 1e-5
    output_activation: str = "relu"

    def __post_init__(self):
        if self.output_activation not in ACTIVATIONS:
            raise ValueError(f"output_activation must be one of {ACTIVATIONS}")
        H = self.W[0].shape[0]
        for i in range(STAGES - 1):
            if self.W[i].shape != (H, H):
                raise ShapeMismatch(f"W{i + 1} must be {H}x{H}, got {self.W[i].shape}")
        if self.W[3].shape != (H, self.N * self.A):
            raise ShapeMismatch(f"W4 must be {H}x{self.N * self.A}, got {self.W[3].shape}")

    @property
    def H(self):
        return self.W[0].shape[0]

    @property
    def dtype(self):
        return self.W[0].dtype

    def named(self):
        """Name -> array view of every parameter tensor, in a fixed order."""
        out = {}
        for i in range(STAGES):
            out[f"W{i + 1}"] = self.W[i]
            out[f"b{i + 1}"] = self.b[i]
            out[f"gamma{i + 1}"] = self.gamma[i]
            out[f"beta{i + 1}"] = self.beta[i]
        return out

    def astype(self, dtype):
        cast = lambda xs: [np.array(x, dtype=dtype) for x in xs]
        return HeadParams(cast(self.W), cast(self.b), cast(self.gamma), cast(self.beta),
                          self.N, self.A, self.eps, self.output_activation)

    def copy(self):
        return self.astype(self.dtype)

    def is_finite(self):
        return all(np.all(np.isfinite(t)) for t in self.named().values())


def init_params(H, N, A, seed=0, dtype=np.float32, output_activation="relu", eps=1e-5):
    """He-normal weights, zero biases, unit LN gains, zero LN offsets."""
    if min(H, N, A) <= 0:
        raise InvalidDims(f"H, N, A must be positive, got {(H, N, A)}")
    rng = np.random.default_rng(seed)
    outs = [H, H, H, N * A]
    W = [(rng.standard_normal((H, o)) * math.sqrt(2.0 / H)).astype(dtype) for o in outs]
    b = [np.zeros(o, dtype=dtype) for o in outs]
    gamma = [np.ones(H, dtype=dtype) for _ in range(STAGES)]
    beta = [np.zeros(H, dtype=dtype) for _ in range(STAGES)]
    return HeadParams(W, b, gamma, beta, N, A, eps, output_activation)


def _layernorm(x, gamma, beta, eps):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + eps)
    xhat = xc * rstd
    return xhat * gamma + beta, xhat, rstd


def _layernorm_backward(dy, xhat, rstd, gamma):
    dxhat = dy * gamma
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dgamma, dbeta


def _forward(x0, p):
    cache = []
    x = x0
    for i in range(STAGES):
        y, xhat, rstd = _layernorm(x, p.gamma[i], p.beta[i], p.eps)
        z = y @ p.W[i] + p.b[i]
        if i < STAGES - 1 or p.output_activation == "relu":
            r = np.maximum(z, 0)
        else:
            r = z
        cache.append((y, xhat, rstd, z))
        x = r if i == 0 or i == STAGES - 1 else x + r
    return x, cache


def _check_input(h, p):
    h = np.asarray(h)
    if h.shape[-1] != p.H:
        raise ShapeMismatch(f"hidden width {h.shape[-1]} != head width {p.H}")
    if not np.all(np.isfinite(h)):
        raise NonFiniteInput("hidden state contains NaN or Inf")
    return h.astype(np.float64, copy=False)


def head_forward(h_act, p: HeadParams):
    """Decode hidden state(s) into normalized action chunk(s).

    ``h_act`` of shape (H,) gives (N, A); shape (B, H) gives (B, N, A).
    """
    h = _check_input(h_act, p)
    out, _ = _forward(np.atleast_2d(h), p)
    out = out.astype(p.dtype).reshape(-1, p.N, p.A)
    return out[0] if h.ndim == 1 else out


def head_backward(h_act, p: HeadParams, grad_output):
    """Gradients of ``sum(grad_output * head_forward(h_act, p))``.

    Returns a dict keyed like ``HeadParams.named()`` plus ``"h_act"``.
    """
    h = _check_input(h_act, p)
    single = h.ndim == 1
    x0 = np.atleast_2d(h)
    g = np.asarray(grad_output, dtype=np.float64).reshape(x0.shape[0], p.N * p.A)
    if not np.all(np.isfinite(g)):
        raise NonFiniteInput("grad_output contains NaN or Inf")
    _, cache = _forward(x0, p)
    grads = {}
    dx = g
    for i in reversed(range(STAGES)):
        y, xhat, rstd, z = cache[i]
        if i < STAGES - 1 or p.output_activation == "relu":
            dz = dx * (z > 0)
        else:
            dz = dx
        grads[f"W{i + 1}"] = y.T @ dz
        grads[f"b{i + 1}"] = dz.sum(axis=0)
        dy = dz @ p.W[i].T
        dln, grads[f"gamma{i + 1}"], grads[f"beta{i + 1}"] = _layernorm_backward(dy, xhat, rstd, p.gamma[i])
        # stages 2 and 3 carry the residual path
        dx = dln + dx if i in (1, 2) else dln
    grads["h_act"] = dx[0] if single else dx
    return {k: v.astype(p.dtype) for k, v in grads.items()}


def head_param_count(H, N, A):
    """Total scalar parameters: four weight/bias pairs and four layer norms."""
    if min(H, N, A) <= 0:
        raise InvalidDims(f"H, N, A must be positive, got {(H, N, A)}")
    return 3 * (H * H + H) + H * N * A + N * A + STAGES * 2 * H


def oft_first_layer_count(H, D):
    """Weights of a first layer fed the concatenation of D hidden states of width H."""
    if H <= 0 or D <= 0:
        raise InvalidDims(f"H and D must be positive, got {(H, D)}")
    return (H * D) * H


def output_width_delta(H, chunk_width, base_width):
    """Extra output-layer weights from widening ``base_width`` to ``chunk_width``."""
    if min(H, chunk_width, base_width) <= 0:
        raise InvalidDims("dimensions must be positive")
    return H * (chunk_width - base_width)


# ---------------------------------------------------------------- losses


@dataclass(frozen=True)
class LossWeights:
    lambda_token: float = 0.01
    lambda_action: float = 0.99

    def __post_init__(self):
        if self.lambda_token < 0 or self.lambda_action < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lambda_token + self.lambda_action <= 0:
            raise ValueError("loss weights must not both be zero")


@dataclass
class TokenTarget:
    """Target token ids (instruction then ``<ACT>``) with predicted logits."""

    tokens: np.ndarray
    logits: np.ndarray
    act_id: int = 0

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        self.logits = np.asarray(self.logits)
        if self.logits.shape[:-1] != self.tokens.shape:
            raise ShapeMismatch(
                f"logits {self.logits.shape} do not match targets {self.tokens.shape}")
        if not 0 <= self.act_id < self.logits.shape[-1]:
            raise ShapeMismatch("vocabulary does not contain the <ACT> id")


def l1_action_loss(pred, target):
    """Mean absolute error over every (batch, step, dim) entry."""
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pred {pred.shape} vs target {target.shape}")
    return float(np.mean(np.abs(pred - target)))


def l1_action_grad(pred, target):
    return np.sign(pred - target) / pred.size


def _log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    shifted = logits - m
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def token_ce_loss(t: TokenTarget):
    """Mean cross-entropy over every supervised position."""
    logp = _log_softmax(np.asarray(t.logits, dtype=np.float64))
    picked = np.take_along_axis(logp, t.tokens[..., None], axis=-1)
    return float(-picked.mean())


def token_ce_grad(t: TokenTarget):
    logits = np.asarray(t.logits, dtype=np.float64)
    prob = np.exp(_log_softmax(logits))
    np.put_along_axis(prob, t.tokens[..., None],
                      np.take_along_axis(prob, t.tokens[..., None], axis=-1) - 1.0, axis=-1)
    return prob / t.tokens.size


def total_loss(t, pred, target, w: LossWeights = LossWeights()):
    action = l1_action_loss(pred, target)
    if w.lambda_token == 0:
        return w.lambda_action * action
    return w.lambda_token * token_ce_loss(t) + w.lambda_action * action


def combine_losses(ce, l1, w: LossWeights = LossWeights()):
    return w.lambda_token * ce + w.lambda_action * l1


# ------------------------------------------------------------ weights I/O


def save_params(path, p: HeadParams):
    meta = {"H": p.H, "N": p.N, "A": p.A, "eps": p.eps,
            "output_activation": p.output_activation}
    tensorfile.dump(path, p.named(), meta)


def load_params(path):
    manifest, t = tensorfile.load(path)
    try:
        return HeadParams(
            [t[f"W{i + 1}"] for i in range(STAGES)],
            [t[f"b{i + 1}"] for i in range(STAGES)],
            [t[f"gamma{i + 1}"] for i in range(STAGES)],
            [t[f"beta{i + 1}"] for i in range(STAGES)],
            int(manifest["N"]), int(manifest["A"]), float(manifest["eps"]),
            manifest.get("output_activation", "relu"),
        )
    except KeyError as exc:
        raise ValueError(f"{path}: missing field or tensor {exc}") from exc


# ---------------------------------------------------------------- trainer


@dataclass
class ToyConfig:
    H: int = 64
    N: int = 8
    A: int = 7
    latent_dim: int = 8
    n_samples: int = 5000
    vocab_size: int = 16
    instr_len: int = 6
    n_tasks: int = 4
    seed: int = 0
    lr: float = 2e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 128
    max_steps: int = 20000
    eval_every: int = 50
    threshold: float = 0.04
    weights: LossWeights = field(default_factory=LossWeights)
    output_activation: str = "relu"

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "weights" in d and not isinstance(d["weights"], LossWeights):
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


@dataclass
class ToyDataset:
    hidden: np.ndarray      # (S, H) stand-in <ACT> hidden states
    actions: np.ndarray     # (S, N, A) normalized targets
    tokens: np.ndarray      # (S, instr_len + 1) instruction ids then <ACT>
    act_id: int


def make_toy_dataset(cfg: ToyConfig):
    """Hidden states are a fixed random linear map of latent task vectors;
    targets are a smooth function of the latent."""
    rng = np.random.default_rng([cfg.seed, 1])
    d, S = cfg.latent_dim, cfg.n_samples
    z = rng.standard_normal((S, d))
    embed = rng.standard_normal((d, cfg.H)) / math.sqrt(d)
    hidden = z @ embed
    base = rng.standard_normal((d, cfg.A)) / math.sqrt(d)
    drift = rng.standard_normal((d, cfg.A)) / math.sqrt(d)
    phase = np.linspace(0.0, 1.0, cfg.N)[None, :, None]
    pre = (z @ base)[:, None, :] + phase * (z @ drift)[:, None, :]
    actions = 0.5 + 0.4 * np.tanh(pre)
    # id 0 is <ACT>; instructions draw from the rest of the vocabulary
    act_id = 0
    table = rng.integers(1, cfg.vocab_size, size=(cfg.n_tasks, cfg.instr_len))
    task = np.argmax(z[:, : cfg.n_tasks], axis=1)
    tokens = np.concatenate([table[task], np.full((S, 1), act_id)], axis=1)
    return ToyDataset(hidden.astype(np.float32), actions.astype(np.float32), tokens, act_id)


def _token_features(hidden, seq_len):
    """Classifier input per position: the hidden state plus a position one-hot."""
    S = hidden.shape[0]
    pos = np.broadcast_to(np.eye(seq_len, dtype=hidden.dtype), (S, seq_len, seq_len))
    h = np.broadcast_to(hidden[:, None, :], (S, seq_len, hidden.shape[1]))
    return np.concatenate([h, pos], axis=-1)


class Adam:
    def __init__(self, shapes, lr, beta1, beta2, eps, dtype):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros(s, dtype=dtype) for k, s in shapes.items()}
        self.v = {k: np.zeros(s, dtype=dtype) for k, s in shapes.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        c1 = 1.0 - self.beta1 ** self.t
        c2 = 1.0 - self.beta2 ** self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] *= self.beta1
            self.m[k] += (1 - self.beta1) * g
            self.v[k] *= self.beta2
            self.v[k] += (1 - self.beta2) * g * g
            p -= (self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)).astype(p.dtype)


@dataclass
class TrainResult:
    params: HeadParams
    token_W: np.ndarray
    trace: list            # rows of (step, l1, ce, total)
    converged: bool
    steps: int

    @property
    def final_l1(self):
        return self.trace[-1][1]


def _evaluate(params, token_W, data, weights):
    pred = head_forward(data.hidden, params)
    l1 = l1_action_loss(pred, data.actions)
    feats = _token_features(data.hidden, data.tokens.shape[1])
    ce = token_ce_loss(TokenTarget(data.tokens, feats @ token_W, data.act_id))
    return l1, ce, combine_losses(ce, l1, weights)


def train_toy(cfg: ToyConfig = ToyConfig()):
    """Train the head and a linear token classifier on the synthetic task.

    Stops at the first evaluation whose full-dataset action L1 is below
    ``cfg.threshold``, or when ``cfg.max_steps`` is spent.
    """
    data = make_toy_dataset(cfg)
    params = init_params(cfg.H, cfg.N, cfg.A, seed=cfg.seed, dtype=np.float32,
                         output_activation=cfg.output_activation)
    seq_len = data.tokens.shape[1]
    token_W = np.zeros((cfg.H + seq_len, cfg.vocab_size), dtype=np.float32)
    trainable = params.named()
    trainable["token_W"] = token_W
    opt = Adam({k: v.shape for k, v in trainable.items()}, cfg.lr, cfg.beta1, cfg.beta2,
               cfg.adam_eps, np.float32)
    rng = np.random.default_rng([cfg.seed, 2])
    w = cfg.weights

    trace = [(0, *_evaluate(params, token_W, data, w))]
    converged = trace[-1][1] < cfg.threshold
    step = 0
    order = rng.permutation(cfg.n_samples)
    cursor = 0
    while not converged and step < cfg.max_steps:
        if cursor + cfg.batch_size > cfg.n_samples:
            order = rng.permutation(cfg.n_samples)
            cursor = 0
        idx = order[cursor:cursor + cfg.batch_size]
        cursor += cfg.batch_size
        h, target, tok = data.hidden[idx], data.actions[idx], data.tokens[idx]

        pred = head_forward(h, params)
        grads = head_backward(h, params, w.lambda_action * l1_action_grad(pred, target))
        feats = _token_features(h, seq_len)
        tgt = TokenTarget(tok, feats @ token_W, data.act_id)
        dlogits = w.lambda_token * token_ce_grad(tgt)
        grads["token_W"] = np.einsum("blf,blv->fv", feats, dlogits).astype(np.float32)
        grads = {k: np.asarray(v, dtype=np.float32) for k, v in grads.items()}
        opt.step(trainable, grads)
        step += 1

        if step % cfg.eval_every == 0 or step == cfg.max_steps:
            row = (step, *_evaluate(params, token_W, data, w))
            if not all(math.isfinite(x) for x in row[1:]):
                raise Diverged(f"loss became non-finite at step {step}")
            trace.append(row)
            converged = row[1] < cfg.threshold
    return TrainResult(params, token_W, trace, converged, step)


def write_trace(path, trace):
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["step", "l1", "ce", "total"])
        for step, l1, ce, total in trace:
            wr.writerow([step, f"{l1:.8g}", f"{ce:.8g}", f"{total:.8g}"])
