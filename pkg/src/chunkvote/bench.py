"""Chunk latency / throughput measurement against the pseudo-backbone.

Each query is timed end to end (backbone prefill, decoding, head) with a
monotonic clock; warmup queries run first and are not part of the samples.
Throughput is actions per second: chunk size over mean chunk latency.
"""
from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InvalidInput, MissingBaseline
from .head import init_params
from .policy import PassCounter, PseudoBackbone, predict_chunk, serial_decode_baseline

MIN_WARMUP = 10
CSV_COLUMNS = ("config_name", "chunk_size", "tokens", "mean_ms", "p50_ms", "p95_ms",
               "throughput_hz", "speedup", "decoder_passes")


@dataclass
class BenchConfig:
    """One measured configuration.

    ``mode="chunk"`` decodes ``tokens`` ``<ACT>`` positions, each expanded by
    the head into N actions. ``mode="serial"`` emulates one decoder pass per
    action dimension for N actions (the autoregressive baseline).
    """

    name: str = "chunk"
    H: int = 64
    N: int = 8
    A: int = 7
    tokens: int = 1
    queries: int = 100
    warmup: int = MIN_WARMUP
    mode: str = "chunk"
    prompt_len: int = 64
    obs_dim: int = 16
    work_width: int = 256
    work_layers: int = 4
    seed: int = 0
    workers: int = 0

    def __post_init__(self):
        if self.mode not in ("chunk", "serial"):
            raise InvalidInput(f"mode must be 'chunk' or 'serial', got {self.mode!r}")
        if min(self.H, self.N, self.A, self.tokens, self.queries) < 1:
            raise InvalidInput("H, N, A, tokens and queries must be >= 1")
        if self.warmup < MIN_WARMUP:
            raise InvalidInput(f"warmup must be >= {MIN_WARMUP} queries")

    @property
    def chunk_size(self):
        return self.N if self.mode == "serial" else self.tokens * self.N


@dataclass
class LatencyStats:
    name: str
    samples_ms: list
    chunk_size: int
    tokens: int
    decoder_passes: int
    mean_ms: float = field(init=False)
    p50_ms: float = field(init=False)
    p95_ms: float = field(init=False)
    throughput_hz: float = field(init=False)

    def __post_init__(self):
        s = np.asarray(self.samples_ms, dtype=np.float64)
        self.mean_ms = float(s.mean())
        self.p50_ms = float(np.percentile(s, 50))
        self.p95_ms = float(np.percentile(s, 95))
        self.throughput_hz = throughput(self.chunk_size, self.mean_ms)

    @property
    def actions_per_second(self):
        return self.throughput_hz

    @property
    def per_action_ms(self):
        return self.mean_ms / self.chunk_size


def throughput(chunk_size, mean_latency_ms):
    """Actions per second for a chunk produced in ``mean_latency_ms``."""
    if not chunk_size > 0 or not mean_latency_ms > 0:
        raise InvalidInput("chunk size and latency must be positive")
    return chunk_size / (mean_latency_ms / 1000.0)


def bench_forward(cfg: BenchConfig):
    if cfg.workers != 0:
        raise InvalidInput("measurement is single-threaded; workers must be 0")
    backbone = PseudoBackbone(cfg.H, obs_dim=cfg.obs_dim, seed=cfg.seed,
                              work_width=cfg.work_width, work_layers=cfg.work_layers)
    head = init_params(cfg.H, cfg.N, cfg.A, seed=cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    obs = rng.standard_normal(cfg.obs_dim)
    instr = rng.integers(0, backbone.vocab_size, cfg.prompt_len)

    if cfg.mode == "serial":
        def query(counter):
            serial_decode_baseline(obs, instr, cfg.N, cfg.A, backbone=backbone, counter=counter)
    else:
        def query(counter):
            predict_chunk(obs, instr, head, tokens=cfg.tokens, backbone=backbone, counter=counter)

    for _ in range(cfg.warmup):
        query(None)
    samples = []
    passes = set()
    for _ in range(cfg.queries):
        counter = PassCounter()
        t0 = time.perf_counter_ns()
        query(counter)
        samples.append((time.perf_counter_ns() - t0) / 1e6)
        passes.add(counter.decoder_forward_passes)
    if len(passes) != 1:
        raise RuntimeError(f"pass count varied between queries: {sorted(passes)}")
    tokens = cfg.N * cfg.A if cfg.mode == "serial" else cfg.tokens
    return LatencyStats(cfg.name, samples, cfg.chunk_size, tokens, passes.pop())


def default_configs(queries=100, **kw):
    """Autoregressive baseline plus the one- and two-token chunk variants."""
    return [
        BenchConfig(name="serial", mode="serial", N=1, queries=queries, **kw),
        BenchConfig(name="chunk8", N=8, tokens=1, queries=queries, **kw),
        BenchConfig(name="chunk16", N=8, tokens=2, queries=queries, **kw),
    ]


def _baseline_index(stats, baseline):
    if not stats:
        raise MissingBaseline("no measurements to compare against")
    if isinstance(baseline, int):
        if not 0 <= baseline < len(stats):
            raise MissingBaseline(f"baseline index {baseline} out of range")
        return baseline
    for i, s in enumerate(stats):
        if s.name == baseline:
            return i
    raise MissingBaseline(f"no configuration named {baseline!r}")


def report_rows(stats, baseline=0):
    """Report rows with speedup = throughput / baseline throughput."""
    base = stats[_baseline_index(stats, baseline)]
    rows = []
    for s in stats:
        rows.append({
            "config_name": s.name,
            "chunk_size": s.chunk_size,
            "tokens": s.tokens,
            "mean_ms": s.mean_ms,
            "p50_ms": s.p50_ms,
            "p95_ms": s.p95_ms,
            "throughput_hz": s.throughput_hz,
            "speedup": s.throughput_hz / base.throughput_hz,
            "decoder_passes": s.decoder_passes,
        })
    return rows


def report(stats, baseline=0, csv_path=None, json_path=None, meta=None):
    """Write the CSV and/or JSON report; returns the rows."""
    rows = report_rows(stats, baseline)
    if csv_path is not None:
        with open(csv_path, "w", newline="") as f:
            wr = csv.DictWriter(f, fieldnames=CSV_COLUMNS, lineterminator="\n")
            wr.writeheader()
            for r in rows:
                wr.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()})
    if json_path is not None:
        header = {"warmup_excluded": True, "clock": "perf_counter_ns"}
        header.update(meta or {})
        with open(json_path, "w") as f:
            json.dump({"meta": header, "rows": rows,
                       "samples_ms": {s.name: s.samples_ms for s in stats}}, f, indent=2)
    return rows


def config_dict(cfg: BenchConfig):
    return asdict(cfg)
