"""Closed-loop point-mass manipulation environment for aggregation ablations.

The policy in the loop is a scripted expert whose normalized chunk
predictions are corrupted by a ``NoiseModel``: small per-dimension Gaussian
noise plus, with probability ``outlier_prob``, a whole-chunk gross
misprediction (direction reversed and scaled). Each step the executed action
comes from one aggregation strategy over the history of predictions.
"""
from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .action_core import (
    ACTION_DIM,
    CONTINUOUS_DIM,
    GRIPPER,
    ActionChunk,
    NormalizationStats,
    denormalize_action,
    normalize_action,
)
from .ensemble import STRATEGIES, EnsembleConfig, HistoryBuffer, aggregate, candidates_for
from .errors import EpisodeOver

RUNNING, SUCCESS, FAILURE = "running", "success", "failure"
MODES = ("per_step", "open_loop_chunk")
CSV_COLUMNS = ("strategy", "noise_p", "sigma", "success_rate", "mean_traj_error", "episodes")


@dataclass(frozen=True)
class EnvConfig:
    task: str = "pick"
    chunk_size: int = 5
    step_budget: int = 120
    eps_pos: float = 0.05
    trans_cap: float = 0.1
    rot_cap: float = 0.1
    gain: float = 1.0
    grasp_radius: float = 0.1
    action_bound: float = 0.3       # raw delta mapped to +-1 when normalizing
    workspace: float = 2.0          # half-width of the allowed box
    table_z: float = 0.0
    shelf_z: float = 0.3
    start_box: float = 0.5
    place_box: float = 0.6
    min_dist: float = 0.6
    max_dist: float = 1.0
    rot_range: float = 0.5

    def __post_init__(self):
        if self.task not in ("pick", "reach"):
            raise ValueError("task must be 'pick' or 'reach'")
        if self.chunk_size < 1 or self.step_budget < 1:
            raise ValueError("chunk_size and step_budget must be >= 1")
        if not self.trans_cap <= self.action_bound:
            raise ValueError("expert step cap exceeds the action bound")

    @property
    def stats(self):
        return NormalizationStats.symmetric_bounds(self.action_bound)


@dataclass
class EnvState:
    """Point-mass end effector plus one graspable object.

    ``pick``: grasp the object (resting on the table) and carry it to the
    goal; opening the gripper while carrying drops the object onto the table
    below. ``reach``: move the end effector to the goal.
    """

    pose: np.ndarray            # x, y, z, phi, theta, psi
    gripper: float
    goal: np.ndarray            # goal pose, same layout as ``pose``
    obj: np.ndarray
    start: np.ndarray
    holding: bool = False
    step: int = 0
    status: str = RUNNING

    def copy(self):
        return EnvState(self.pose.copy(), self.gripper, self.goal.copy(), self.obj.copy(),
                        self.start.copy(), self.holding, self.step, self.status)

    @property
    def distance(self):
        return float(np.linalg.norm(self.pose[:3] - self.goal[:3]))

    def target(self, task):
        """Position the expert is currently heading for."""
        if task == "pick" and not self.holding:
            return self.obj
        return self.goal[:3]


@dataclass(frozen=True)
class NoiseModel:
    sigma: float | tuple = 0.0
    outlier_prob: float = 0.0
    outlier_scale: float = 3.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.outlier_prob <= 1.0:
            raise ValueError("outlier_prob must lie in [0, 1]")
        if np.any(np.asarray(self.sigma) < 0):
            raise ValueError("sigma must be non-negative")

    @property
    def active(self):
        return self.outlier_prob > 0 or np.any(np.asarray(self.sigma) > 0)


@dataclass
class EpisodeLog:
    seed: int
    strategy: str
    execution_mode: str
    actions: list = field(default_factory=list)
    candidates: list = field(default_factory=list)
    status: str = RUNNING
    traj_error: float = 0.0
    steps: int = 0
    drops: int = 0

    def to_dict(self):
        return {
            "seed": self.seed,
            "strategy": self.strategy,
            "execution_mode": self.execution_mode,
            "status": self.status,
            "steps": self.steps,
            "drops": self.drops,
            "traj_error": self.traj_error,
            "actions": [[float(x) for x in a] for a in self.actions],
            "candidates": [[[float(x) for x in c] for c in cs] for cs in self.candidates],
        }


def _sample_at_distance(rng, origin, box, z, env):
    while True:
        p = np.array([*rng.uniform(-box, box, 2), z])
        if env.min_dist <= np.linalg.norm(p - origin) <= env.max_dist:
            return p


def reset(env: EnvConfig, rng):
    start = np.array([*rng.uniform(-env.start_box, env.start_box, 2),
                      rng.uniform(env.shelf_z, 2 * env.shelf_z)])
    if env.task == "pick":
        obj = _sample_at_distance(rng, start, env.place_box, env.table_z, env)
        goal = _sample_at_distance(rng, obj, env.place_box, env.shelf_z, env)
    else:
        goal = _sample_at_distance(rng, start, env.place_box, env.shelf_z, env)
        obj = goal.copy()
    rot_goal = rng.uniform(-env.rot_range, env.rot_range, 3)
    return EnvState(
        pose=np.concatenate([start, np.zeros(3)]),
        gripper=0.0,
        goal=np.concatenate([goal, rot_goal]),
        obj=obj,
        start=start.copy(),
    )


def _capped(delta, gain, cap):
    step = gain * delta
    n = np.linalg.norm(step)
    return step * (cap / n) if n > cap else step


def _expert_action(state: EnvState, env: EnvConfig):
    a = np.zeros(ACTION_DIM)
    target = state.target(env.task)
    a[:3] = _capped(target - state.pose[:3], env.gain, env.trans_cap)
    a[3:6] = _capped(state.goal[3:6] - state.pose[3:6], env.gain, env.rot_cap)
    if env.task == "pick":
        # aim well inside the grasp radius so small execution noise still grasps
        close = state.holding or \
            np.linalg.norm(state.pose[:3] + a[:3] - target) <= 0.5 * env.grasp_radius
        a[GRIPPER] = float(close)
    return a


def _transition(state: EnvState, action, env: EnvConfig):
    """Apply one action in place: additive pose, binary gripper, grasp/drop."""
    state.pose = state.pose + np.asarray(action[:CONTINUOUS_DIM], dtype=np.float64)
    state.gripper = 1.0 if action[GRIPPER] >= 0.5 else 0.0
    if env.task == "pick":
        pos = state.pose[:3]
        if state.holding and state.gripper == 0.0:
            state.holding = False
            state.obj = np.array([pos[0], pos[1], env.table_z])
        elif not state.holding and state.gripper == 1.0 \
                and np.linalg.norm(pos - state.obj) <= env.grasp_radius:
            state.holding = True
        if state.holding:
            state.obj = pos.copy()
    state.step += 1


def _check(state: EnvState, env: EnvConfig):
    grip_ok = env.task != "pick" or state.holding
    if state.distance <= env.eps_pos and grip_ok:
        state.status = SUCCESS
    elif np.any(np.abs(state.pose[:3]) > env.workspace) or state.step >= env.step_budget:
        state.status = FAILURE


def apply_action(state: EnvState, action, env: EnvConfig):
    """Execute ``action`` (raw units) and update the episode status in place."""
    if state.status != RUNNING:
        raise EpisodeOver(f"episode already ended with {state.status}")
    _transition(state, action, env)
    _check(state, env)
    return state


def expert_chunk(state: EnvState, N, env: EnvConfig = EnvConfig(), executed=None):
    """N capped proportional-control actions rolled out from ``state`` (raw units).

    ``executed`` maps a planned action to the one the environment will really
    apply (e.g. a normalization round trip); the look-ahead uses it so that
    noise-free plans from earlier steps agree exactly with later ones.
    """
    if state.status != RUNNING:
        raise EpisodeOver(f"episode already ended with {state.status}")
    sim = state.copy()
    out = np.empty((N, ACTION_DIM))
    for k in range(N):
        a = _expert_action(sim, env)
        out[k] = a
        _transition(sim, a if executed is None else executed(a), env)
    return ActionChunk(out, state.step)


def corrupt(chunk: ActionChunk, nm: NoiseModel, rng=None, bound=1.0):
    """Gaussian noise on every entry, then a whole-chunk outlier with prob ``outlier_prob``.

    An outlier reverses and scales the continuous deltas and inverts the
    gripper command.

    Both random draws happen unconditionally so that runs differing only in
    ``sigma`` or ``outlier_prob`` share one random stream. Continuous dims are
    clipped to ``[-bound, bound]``.
    """
    if rng is None:
        rng = np.random.default_rng(nm.seed)
    acts = chunk.actions
    z = rng.standard_normal(acts.shape)
    u = rng.random()
    noisy = acts + z * np.asarray(nm.sigma, dtype=np.float64)
    if u < nm.outlier_prob:
        noisy[:, :CONTINUOUS_DIM] *= -nm.outlier_scale
        noisy[:, GRIPPER] = 1.0 - noisy[:, GRIPPER]
    noisy[:, :CONTINUOUS_DIM] = np.clip(noisy[:, :CONTINUOUS_DIM], -bound, bound)
    if not nm.active:
        noisy = acts.copy()
    return ActionChunk(noisy, chunk.origin_step)


def _segment_distance(p, a, b):
    ab = b - a
    L2 = float(ab @ ab)
    s = 0.0 if L2 == 0 else min(1.0, max(0.0, float((p - a) @ ab) / L2))
    return float(np.linalg.norm(p - (a + s * ab)))


def _path_distance(p, waypoints):
    """Distance from ``p`` to the noise-free expert path (a polyline)."""
    return min(_segment_distance(p, a, b) for a, b in zip(waypoints, waypoints[1:]))


def run_episode(env: EnvConfig, strategy: EnsembleConfig, execution_mode="per_step",
                nm: NoiseModel = NoiseModel(), seed=0, record_candidates=False):
    """Roll out one episode; the env draw and the noise stream derive from ``seed``."""
    if execution_mode not in MODES:
        raise ValueError(f"execution_mode must be one of {MODES}")
    env_ss, noise_ss = np.random.SeedSequence(seed).spawn(2)
    state = reset(env, np.random.default_rng(env_ss))
    rng = np.random.default_rng(noise_ss)
    stats = env.stats
    N = env.chunk_size
    log = EpisodeLog(seed, strategy.strategy, execution_mode)
    buf = HistoryBuffer(strategy.K)
    path_err = []

    def roundtrip(a):
        return denormalize_action(normalize_action(a, stats), stats)

    def predict():
        raw = expert_chunk(state, N, env, executed=roundtrip)
        norm = ActionChunk(normalize_action(raw.actions, stats), raw.origin_step)
        return corrupt(norm, nm, rng)

    waypoints = [state.start, state.obj.copy(), state.goal[:3]] if env.task == "pick" \
        else [state.start, state.goal[:3]]
    pending = []
    while state.status == RUNNING:
        t = state.step
        if execution_mode == "per_step":
            buf.push(predict())
            cands, ages = candidates_for(buf, t, strategy.K)
            a_norm, _ = aggregate(cands, strategy, ages)
            if record_candidates:
                log.candidates.append([c.copy() for c in cands])
        else:
            if not pending:
                pending = list(predict().actions)
            a_norm = pending.pop(0)
            if record_candidates:
                log.candidates.append([a_norm.copy()])
        action = denormalize_action(a_norm, stats)
        was_holding = state.holding
        apply_action(state, action, env)
        log.drops += int(was_holding and not state.holding)
        log.actions.append(action)
        path_err.append(_path_distance(state.pose[:3], waypoints))

    log.status = state.status
    log.steps = state.step
    log.traj_error = float(np.mean(path_err)) if path_err else 0.0
    return log


# ------------------------------------------------------------- evaluation


@dataclass
class SuiteConfig:
    episodes: int = 200
    seed: int = 0
    noise_levels: tuple = (0.0, 0.1, 0.2, 0.3)
    sigma: float = 0.05
    outlier_scale: float = 3.0
    strategies: tuple = STRATEGIES
    execution_mode: str = "per_step"
    K: int = 4
    tau: float = 0.5
    static_weight_decay: float = 0.5
    tie_break: str = "low_set"
    env: EnvConfig = field(default_factory=EnvConfig)
    workers: int = 1

    def __post_init__(self):
        self.noise_levels = tuple(float(p) for p in self.noise_levels)
        self.strategies = tuple(self.strategies)
        if not self.strategies or not self.noise_levels or self.episodes < 1:
            raise ValueError("suite needs >= 1 strategy, >= 1 noise level and >= 1 episode")
        for s in self.strategies:
            if s not in STRATEGIES:
                raise ValueError(f"unknown strategy {s!r}")
        if self.execution_mode not in MODES:
            raise ValueError(f"execution_mode must be one of {MODES}")
        if isinstance(self.env, dict):
            self.env = EnvConfig(**self.env)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        if "seeds" in d:
            # explicit seed lists are not supported; the first one is the root
            seeds = d.pop("seeds")
            d.setdefault("seed", seeds[0] if isinstance(seeds, list) else seeds)
        if "noise" in d:
            d["noise_levels"] = d.pop("noise")
        return cls(**d)

    def to_dict(self):
        d = asdict(self)
        d["noise_levels"] = list(self.noise_levels)
        d["strategies"] = list(self.strategies)
        return d

    def episode_seeds(self):
        """Per-episode seeds, shared by every strategy and noise level."""
        ss = np.random.SeedSequence(self.seed)
        return [int(c.generate_state(1, np.uint64)[0]) for c in ss.spawn(self.episodes)]

    def ensemble(self, strategy):
        return EnsembleConfig(self.K, self.tau, strategy, self.static_weight_decay, self.tie_break)

    def noise(self, p):
        return NoiseModel(self.sigma, p, self.outlier_scale, self.seed)


@dataclass
class SuiteRow:
    strategy: str
    noise_p: float
    sigma: float
    success_rate: float
    mean_traj_error: float
    episodes: int


def _run_job(job):
    env, ens, mode, nm, seed = job
    log = run_episode(env, ens, mode, nm, seed)
    return log.status == SUCCESS, log.traj_error


def evaluate(suite: SuiteConfig, log_sink=None):
    """Success-rate table over strategies x noise levels, in a fixed row order.

    ``log_sink``, if given, is called with every ``EpisodeLog`` in seed order.
    """
    seeds = suite.episode_seeds()
    rows = []
    pool = ProcessPoolExecutor(suite.workers) if suite.workers > 1 and log_sink is None else None
    try:
        for strategy in suite.strategies:
            ens = suite.ensemble(strategy)
            for p in suite.noise_levels:
                nm = suite.noise(p)
                if log_sink is not None:
                    results = []
                    for s in seeds:
                        log = run_episode(suite.env, ens, suite.execution_mode, nm, s)
                        log_sink(log)
                        results.append((log.status == SUCCESS, log.traj_error))
                else:
                    jobs = [(suite.env, ens, suite.execution_mode, nm, s) for s in seeds]
                    results = list(pool.map(_run_job, jobs, chunksize=16) if pool else map(_run_job, jobs))
                ok = [r[0] for r in results]
                err = [r[1] for r in results]
                rows.append(SuiteRow(strategy, p, float(suite.sigma), float(np.mean(ok)),
                                     float(np.mean(err)), len(results)))
    finally:
        if pool is not None:
            pool.shutdown()
    return rows


def rows_to_csv(rows):
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(CSV_COLUMNS)
    for r in rows:
        wr.writerow([r.strategy, f"{r.noise_p:g}", f"{r.sigma:g}", f"{r.success_rate:.6f}",
                     f"{r.mean_traj_error:.6f}", r.episodes])
    return buf.getvalue()


def table(rows):
    """``{strategy: {noise_p: success_rate}}`` view of evaluation rows."""
    out = {}
    for r in rows:
        out.setdefault(r.strategy, {})[r.noise_p] = r.success_rate
    return out


def write_episode_log(f, log: EpisodeLog):
    f.write(json.dumps(log.to_dict(), separators=(",", ":")) + "\n")

