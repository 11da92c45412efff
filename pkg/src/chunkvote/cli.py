"""Command-line entry point.

Exit codes: 0 success, 1 error (bad flags, I/O, invalid input, divergence),
2 training budget spent without reaching the L1 threshold.
"""
from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import bench, ensemble, head, sim
from .action_core import ActionChunk, NormalizationStats, normalize_action
from .errors import ChunkVoteError, Diverged
from .policy import HiddenReplay

EXIT_OK, EXIT_ERROR, EXIT_NOT_CONVERGED = 0, 1, 2


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: error: {message}\n")


def _csv_list(kind):
    def parse(text):
        try:
            return [kind(x) for x in text.split(",") if x.strip()]
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return parse


def _load_config(path):
    if path is None:
        return {}
    try:
        with open(path) as f:
            cfg = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise CliError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(cfg, dict):
        raise CliError(f"config {path} must hold a JSON object")
    return cfg


def _out_dir(path):
    try:
        os.makedirs(path, exist_ok=True)
    except OSError as exc:
        raise CliError(f"cannot create output directory {path}: {exc}") from exc
    if not os.access(path, os.W_OK):
        raise CliError(f"output directory {path} is not writable")
    return path


def _overrides(args, mapping):
    return {key: getattr(args, attr) for attr, key in mapping.items()
            if getattr(args, attr) is not None}


# ---------------------------------------------------------------- commands


def cmd_train_toy(args):
    cfg = _load_config(args.config)
    cfg.update(_overrides(args, {"H": "H", "N": "N", "A": "A", "samples": "n_samples",
                                 "steps": "max_steps", "lr": "lr", "batch_size": "batch_size",
                                 "eval_every": "eval_every", "threshold": "threshold",
                                 "output_activation": "output_activation", "seed": "seed"}))
    if args.lambda_token is not None or args.lambda_action is not None:
        w = head.LossWeights()
        cfg["weights"] = {"lambda_token": w.lambda_token if args.lambda_token is None else args.lambda_token,
                          "lambda_action": w.lambda_action if args.lambda_action is None else args.lambda_action}
    toy = head.ToyConfig.from_dict(cfg)
    out = _out_dir(args.out)
    try:
        result = head.train_toy(toy)
    except Diverged as exc:
        print(f"train-toy: {exc}", file=sys.stderr)
        return EXIT_ERROR
    weights_path = os.path.join(out, "weights.bin")
    head.save_params(weights_path, result.params)
    head.write_trace(os.path.join(out, "loss_trace.csv"), result.trace)
    step, l1, ce, total = result.trace[-1]
    print(f"steps={result.steps} l1={l1:.5f} ce={ce:.5f} total={total:.5f} "
          f"converged={result.converged} weights={weights_path}")
    return EXIT_OK if result.converged else EXIT_NOT_CONVERGED


def cmd_eval(args):
    cfg = _load_config(args.config)
    cfg.update(_overrides(args, {"episodes": "episodes", "noise": "noise_levels", "sigma": "sigma",
                                 "strategies": "strategies", "execution_mode": "execution_mode",
                                 "K": "K", "tau": "tau", "workers": "workers", "seed": "seed",
                                 "outlier_scale": "outlier_scale"}))
    suite = sim.SuiteConfig.from_dict(cfg)
    out = _out_dir(args.out)
    log_file = open(os.path.join(out, "episodes.jsonl"), "w") if args.log else None
    try:
        sink = (lambda log: sim.write_episode_log(log_file, log)) if log_file else None
        rows = sim.evaluate(suite, log_sink=sink)
    finally:
        if log_file:
            log_file.close()
    text = sim.rows_to_csv(rows)
    with open(os.path.join(out, "suite.csv"), "w") as f:
        f.write(text)
    meta = suite.to_dict()
    meta["episode_seeds"] = suite.episode_seeds()
    with open(os.path.join(out, "suite.meta.json"), "w") as f:
        json.dump(meta, f, indent=2)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_bench(args):
    cfg = _load_config(args.config)
    common = dict(cfg.get("common", {}))
    common.update(_overrides(args, {"queries": "queries", "warmup": "warmup", "H": "H", "A": "A",
                                    "work_width": "work_width", "work_layers": "work_layers",
                                    "prompt_len": "prompt_len", "workers": "workers",
                                    "seed": "seed"}))
    if args.tokens is not None or args.chunk is not None:
        tokens = args.tokens or 1
        n = args.chunk or 8
        configs = [bench.BenchConfig(name="serial", mode="serial", N=1, **common),
                   bench.BenchConfig(name=f"t{tokens}n{n}", tokens=tokens, N=n, **common)]
    elif "configs" in cfg:
        configs = [bench.BenchConfig(**{**common, **c}) for c in cfg["configs"]]
    else:
        configs = bench.default_configs(**common)
    names = [c.name for c in configs]
    if args.baseline not in names:
        raise CliError(f"baseline {args.baseline!r} is not among the configurations {names}")
    out = _out_dir(args.out)
    stats = [bench.bench_forward(c) for c in configs]
    rows = bench.report(stats, args.baseline, os.path.join(out, "bench.csv"),
                        os.path.join(out, "bench.json"),
                        meta={"baseline": args.baseline,
                              "configs": [bench.config_dict(c) for c in configs]})
    for r in rows:
        print(f"{r['config_name']:>10}  chunk={r['chunk_size']:<3} passes={r['decoder_passes']:<3} "
              f"mean={r['mean_ms']:.3f}ms  {r['throughput_hz']:.1f}Hz  x{r['speedup']:.2f}")
    return EXIT_OK


def _read_chunks(path):
    """Parse a JSONL file of ``{"origin_step": int, "actions": [[...], ...]}`` records."""
    chunks = []
    try:
        f = open(path)
    except OSError as exc:
        raise CliError(f"cannot read {path}: {exc}") from exc
    with f:
        for lineno, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                chunk = ActionChunk(np.asarray(rec["actions"], dtype=np.float64),
                                    int(rec["origin_step"]))
                if chunk.actions.ndim != 2:
                    raise ValueError("actions must be a list of action vectors")
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise CliError(f"{path}: line {lineno}: malformed chunk record ({exc})") from exc
            chunks.append((lineno, chunk))
    return chunks


def cmd_ensemble_trace(args):
    cfg = _load_config(args.config)
    cfg.update(_overrides(args, {"K": "K", "tau": "tau", "strategy": "strategy",
                                 "decay": "static_weight_decay", "tie_break": "tie_break"}))
    ens = ensemble.EnsembleConfig(**cfg)
    stats = None
    if args.stats:
        with open(args.stats) as f:
            stats = NormalizationStats.from_json(f.read())
    chunks = _read_chunks(args.input)
    out = _out_dir(args.out)
    buf = ensemble.HistoryBuffer(ens.K)
    path = os.path.join(out, "trace.jsonl")
    with open(path, "w") as f:
        for lineno, chunk in chunks:
            if stats is not None:
                chunk = ActionChunk(normalize_action(chunk.actions, stats), chunk.origin_step)
            try:
                buf.push(chunk)
            except ChunkVoteError as exc:
                raise CliError(f"{args.input}: line {lineno}: {exc}") from exc
            cands, ages = ensemble.candidates_for(buf, chunk.origin_step, ens.K)
            rec = ensemble.trace_record(chunk.origin_step, cands, ens, ages)
            f.write(ensemble.dumps_record(rec) + "\n")
    print(f"wrote {len(chunks)} records to {path}")
    return EXIT_OK


def cmd_inspect_weights(args):
    try:
        params = head.load_params(args.weights)
    except OSError as exc:
        raise CliError(f"cannot read {args.weights}: {exc}") from exc
    summary = {
        "H": params.H, "N": params.N, "A": params.A, "eps": params.eps,
        "output_activation": params.output_activation,
        "param_count": head.head_param_count(params.H, params.N, params.A),
        "tensors": {k: list(v.shape) for k, v in params.named().items()},
        "finite": bool(params.is_finite()),
    }
    print(json.dumps(summary, indent=2))
    if args.replay:
        replay = HiddenReplay.load(args.replay)
        stats = None
        if args.stats:
            with open(args.stats) as f:
                stats = NormalizationStats.from_json(f.read())
        out = _out_dir(args.out)
        path = os.path.join(out, "chunks.jsonl")
        with open(path, "w") as f:
            for step in sorted(replay.steps):
                chunk = replay.predict(step, params, stats)
                f.write(json.dumps({"origin_step": step,
                                    "actions": chunk.actions.tolist()}) + "\n")
        print(f"decoded {len(replay)} replay steps to {path}", file=sys.stderr)
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="root seed for every random stream")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--config", default=None, help="JSON file with configuration defaults")

    p = _Parser(prog="chunkvote", description=__doc__,
                formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train-toy", parents=[common], help="train the action head on a synthetic task")
    t.add_argument("--H", type=int, help="hidden width (default 64)")
    t.add_argument("--N", type=int, help="actions per chunk (default 8)")
    t.add_argument("--A", type=int, help="action dimension (default 7)")
    t.add_argument("--samples", type=int, help="synthetic dataset size (default 5000)")
    t.add_argument("--steps", type=int, help="optimizer step budget (default 20000)")
    t.add_argument("--lr", type=float, help="Adam learning rate (default 2e-3)")
    t.add_argument("--batch-size", type=int, help="minibatch size (default 128)")
    t.add_argument("--eval-every", type=int, help="steps between full-dataset evaluations (default 50)")
    t.add_argument("--threshold", type=float, help="stop once action L1 drops below this (default 0.04)")
    t.add_argument("--lambda-token", type=float, help="token loss weight (default 0.01)")
    t.add_argument("--lambda-action", type=float, help="action loss weight (default 0.99)")
    t.add_argument("--output-activation", choices=head.ACTIVATIONS, help="final activation (default relu)")
    t.set_defaults(func=cmd_train_toy)

    e = sub.add_parser("eval", parents=[common], help="closed-loop ablation over strategies and noise levels")
    e.add_argument("--episodes", type=int, help="episodes per row (default 200)")
    e.add_argument("--noise", type=_csv_list(float), help="comma-separated outlier probabilities")
    e.add_argument("--sigma", type=float, help="Gaussian noise std in normalized units (default 0.05)")
    e.add_argument("--outlier-scale", type=float, help="outlier reversal scale (default 3)")
    e.add_argument("--strategies", type=_csv_list(str), help="comma-separated subset of " + ",".join(ensemble.STRATEGIES))
    e.add_argument("--execution-mode", choices=sim.MODES, help="default per_step")
    e.add_argument("--K", type=int, help="history horizon (default 4)")
    e.add_argument("--tau", type=float, help="similarity threshold (default 0.5)")
    e.add_argument("--workers", type=int, help="parallel episode workers (default 1)")
    e.add_argument("--log", action="store_true", help="also write episodes.jsonl")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", parents=[common], help="latency/throughput of chunk decoding")
    b.add_argument("--queries", type=int, help="timed queries per configuration (default 100)")
    b.add_argument("--warmup", type=int, help="untimed warmup queries, >= 10 (default 10)")
    b.add_argument("--tokens", type=int, help="<ACT> tokens per query for a single custom row")
    b.add_argument("--chunk", type=int, help="actions decoded per <ACT> token for the custom row")
    b.add_argument("--baseline", default="serial", help="configuration the speedup is relative to")
    b.add_argument("--H", type=int, help="hidden width (default 64)")
    b.add_argument("--A", type=int, help="action dimension (default 7)")
    b.add_argument("--work-width", type=int, help="pseudo-backbone layer width (default 256)")
    b.add_argument("--work-layers", type=int, help="pseudo-backbone layer count (default 4)")
    b.add_argument("--prompt-len", type=int, help="prompt tokens prefilled per query (default 64)")
    b.add_argument("--workers", type=int, help="must be 0: measurement is single-threaded")
    b.set_defaults(func=cmd_bench)

    r = sub.add_parser("ensemble-trace", parents=[common], help="replay JSONL chunks through the ensemble")
    r.add_argument("--input", required=True, help="JSONL with origin_step and actions per line")
    r.add_argument("--K", type=int, help="history horizon (default 4)")
    r.add_argument("--tau", type=float, help="similarity threshold (default 0.5)")
    r.add_argument("--strategy", choices=ensemble.STRATEGIES, help="aggregator (default vote)")
    r.add_argument("--decay", type=float, help="age decay of static_weighted (default 0.5)")
    r.add_argument("--tie-break", choices=ensemble.TIE_BREAKS, help="set chosen on a tie (default low_set)")
    r.add_argument("--stats", help="normalization stats JSON; input actions are normalized first")
    r.set_defaults(func=cmd_ensemble_trace)

    w = sub.add_parser("inspect-weights", parents=[common], help="summarize a weights file")
    w.add_argument("--weights", required=True, help="weights file written by train-toy")
    w.add_argument("--replay", help="hidden-state replay file to decode into chunks.jsonl")
    w.add_argument("--stats", help="normalization stats JSON used to denormalize decoded chunks")
    w.set_defaults(func=cmd_inspect_weights)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (CliError, ChunkVoteError, ValueError, TypeError, OSError) as exc:
        print(f"chunkvote {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
