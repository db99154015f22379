"""Command-line entry points: train, evaluate, sweep, oracle, dump-config.

Exit codes: 0 success, 1 configuration error, 2 runtime abort (partial
results are flushed by the harness before aborting).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys

from . import nn
from .baselines import dp_oracle
from .config import ConfigError, dump_config, load_config
from .harness import evaluate_policy, frozen_trace_config, run_experiment, train_ppo_for


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="TOML config file")
    parser.add_argument("--seed", type=int, default=None, help="override network.seed")
    parser.add_argument("--out", default=None, help="output directory")
    parser.add_argument(
        "--override", action="append", default=[], metavar="KEY=VALUE",
        help="override a config key, e.g. network.num_elements=64 (repeatable)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="aris-aoi",
        description="Aerial-RIS AoI simulator: PPO training, baselines, sweeps",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a PPO policy, write curve + checkpoint")
    _common(p)

    p = sub.add_parser("evaluate", help="evaluate one policy on the configured network")
    _common(p)
    p.add_argument("--policy", required=True,
                   choices=["random_walk", "hovering_greedy", "trained_ppo", "dp_oracle"])
    p.add_argument("--checkpoint", default=None, help="checkpoint for trained_ppo")

    p = sub.add_parser("sweep", help="run the configured experiment sweep")
    _common(p)

    p = sub.add_parser("oracle", help="exact DP solution of a small fixed-trace instance")
    _common(p)
    p.add_argument("--trace-seed", type=int, default=0,
                   help="episode seed used to freeze a Bernoulli activation trace")

    p = sub.add_parser("dump-config", help="print the resolved configuration")
    _common(p)
    return parser


def _load(args):
    overrides = list(args.override)
    if args.seed is not None:
        overrides.append(f"network.seed={args.seed}")
    return load_config(args.config, overrides)


def _outdir(args, spec) -> str:
    out = args.out or spec.output_dir
    os.makedirs(out, exist_ok=True)
    return out


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw, network, ppo_cfg, spec = _load(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "dump-config":
            text = dump_config(raw)
            if args.out:
                os.makedirs(args.out, exist_ok=True)
                path = os.path.join(args.out, "resolved_config.toml")
                with open(path, "w") as fh:
                    fh.write(text)
                print(path)
            else:
                print(text)
            return 0

        if args.command == "train":
            out = _outdir(args, spec)
            curve = os.path.join(out, "training_curve.csv")
            result = train_ppo_for(network, ppo_cfg, train_seed=network.seed,
                                   metrics_path=curve)
            ckpt = os.path.join(out, "policy.ckpt")
            nn.save_checkpoint(ckpt, result.spec, result.params, network.seed,
                               step=len(result.metrics))
            print(f"wrote {curve} and {ckpt}")
            return 0

        if args.command == "evaluate":
            params = None
            if args.policy == "trained_ppo":
                if not args.checkpoint:
                    print("config error: trained_ppo needs --checkpoint", file=sys.stderr)
                    return 1
                _, params, _, _ = nn.load_checkpoint(args.checkpoint)
            config = network
            if args.policy == "dp_oracle":
                config = frozen_trace_config(network, trace_seed=0)
            res = evaluate_policy(args.policy, config, spec.episodes_per_point,
                                  spec.seeds, params)
            print(f"policy={args.policy} esa={res.mean_esa:.6f} std={res.std_esa:.6f} "
                  f"mean_reward={res.mean_reward:.6f}")
            print("per_device_ages=" + ",".join(f"{a:.4f}" for a in res.per_device_ages))
            return 0

        if args.command == "sweep":
            if args.out:
                spec = type(spec)(**{**spec.__dict__, "output_dir": args.out})
            path = run_experiment(raw, spec, ppo_cfg)
            print(f"wrote {path}")
            return 0

        if args.command == "oracle":
            config = frozen_trace_config(network, trace_seed=args.trace_seed)
            result = dp_oracle(config)
            out = _outdir(args, spec)
            path = os.path.join(out, "oracle.csv")
            with open(path, "w", newline="") as fh:
                writer = csv.writer(fh)
                writer.writerow(["instance_id", "optimal_esa", "runtime_ms"])
                writer.writerow([f"seed{network.seed}_trace{args.trace_seed}",
                                 f"{result.optimal_esa:.9f}", f"{result.runtime_ms:.3f}"])
            print(f"optimal_esa={result.optimal_esa:.6f} ({path})")
            return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - report and signal partial abort
        print(f"runtime abort: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
