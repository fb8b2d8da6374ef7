"""Command-line entry point.

Subcommands: ``plan train``, ``plan infer``, ``plan recompute``,
``plan windows``, ``plan vae-tiles``, ``buckets check``, ``simulate``.
Exit codes: 0 success, 2 config error, 3 infeasible, 4 I/O error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .buckets import check_token_balance
from .config import ParallelConfig, load_config
from .errors import ConfigError, InfeasibleError, PlanningError
from .inference import plan_cache, plan_temporal_windows, plan_vae_tiles
from .memory import BUILTIN_CHUNKS, MIB, chunk_retained_bytes, load_chunk_table
from .recompute import memory_latency_ratio, plan_recompute
from .report import render, require_feasible, run_train_plan
from .simulate import simulate_stages

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_INFEASIBLE = 3
EXIT_IO = 4


def _write_out(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _emit_json(payload: dict, out: str | None) -> None:
    _write_out(json.dumps(payload, indent=2) + "\n", out)


def _add_common(parser: argparse.ArgumentParser, config_required: bool = False) -> None:
    parser.add_argument("--config", required=config_required, help="planning config JSON")
    parser.add_argument("--out", default=None, help="write output here instead of stdout")
    parser.add_argument("--format", default="json", choices=("json", "table", "csv"))
    parser.add_argument("--seed", type=int, default=0, help="reserved; no stochastic behavior yet")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ditplan",
        description="Planning and what-if simulation for long-context video DiT training and inference.",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    plan = subs.add_parser("plan", help="produce a plan")
    plan_subs = plan.add_subparsers(dest="plan_command", required=True)

    train = plan_subs.add_parser("train", help="enumerate, balance and rank training plans")
    _add_common(train, config_required=True)
    train.add_argument("--offload", default="auto", choices=("auto", "off", "optimizer-only"))
    train.add_argument("--workers", type=int, default=1, help="candidate evaluation threads")
    train.add_argument("--chunk-table", default=None, help="chunk table JSON (default: built-in)")

    infer = plan_subs.add_parser("infer", help="diffusion cache schedule")
    _add_common(infer)
    infer.add_argument("--steps", type=int, required=True)
    infer.add_argument("--warmup", type=int, default=10)
    infer.add_argument("--interval", type=int, default=3)
    infer.add_argument("--mode", default="dit", choices=("dit", "attn"))
    infer.add_argument("--cached-cost-fraction", type=float, default=0.25)

    rec = plan_subs.add_parser("recompute", help="select chunks to recompute")
    _add_common(rec)
    rec.add_argument("--required-mb", type=float, required=True, help="savings target, MiB/layer")
    rec.add_argument("--chunk-table", default=None, help="chunk table JSON (default: built-in)")

    windows = plan_subs.add_parser("windows", help="temporal sliding-window plan")
    _add_common(windows)
    windows.add_argument("--n-prime", type=int, required=True, help="latent length")
    windows.add_argument("--n", type=int, required=True, help="window length")
    windows.add_argument("--stride", type=int, required=True)

    tiles = plan_subs.add_parser("vae-tiles", help="VAE decode tiling plan")
    _add_common(tiles)
    tiles.add_argument("--latent", required=True, help="T,H,W latent dims")
    tiles.add_argument("--tile", required=True, help="T,H,W tile size")
    tiles.add_argument("--overlap", default="0,0,0", help="T,H,W overlap")
    tiles.add_argument("--devices", type=int, default=1)

    buckets = subs.add_parser("buckets", help="bucket utilities")
    bucket_subs = buckets.add_subparsers(dest="bucket_command", required=True)
    check = bucket_subs.add_parser("check", help="token-balance check across buckets")
    _add_common(check, config_required=True)
    check.add_argument("--tolerance", type=float, default=0.01)

    sim = subs.add_parser("simulate", help="per-stage step estimates")
    _add_common(sim, config_required=True)
    sim.add_argument("--stage", default=None, help="only this stage name")
    sim.add_argument("--chunk-table", default=None)

    return parser


def _parse_triple(text: str, flag: str) -> tuple[int, int, int]:
    parts = text.split(",")
    if len(parts) != 3:
        raise ConfigError("expected T,H,W", flag)
    try:
        t, h, w = (int(p) for p in parts)
    except ValueError as exc:
        raise ConfigError("expected three integers", flag) from exc
    return (t, h, w)


def _chunks_from(args: argparse.Namespace):
    table = getattr(args, "chunk_table", None)
    return load_chunk_table(table) if table else BUILTIN_CHUNKS


def _cmd_plan_train(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    report = run_train_plan(
        config, chunks=_chunks_from(args), offload_mode=args.offload, workers=args.workers
    )
    _write_out(render(report, args.format), args.out)
    require_feasible(report)
    return EXIT_OK


def _cmd_plan_infer(args: argparse.Namespace) -> int:
    mode = "dit-layer-cache" if args.mode == "dit" else "attention-cache"
    schedule = plan_cache(
        args.steps, args.warmup, args.interval, args.cached_cost_fraction, mode
    )
    payload = {
        "total_steps": schedule.total_steps,
        "warmup": schedule.warmup,
        "interval": schedule.interval,
        "mode": schedule.mode,
        "cached_cost_fraction": schedule.cached_cost_fraction,
        "full_steps": schedule.full_steps,
        "cached_steps": schedule.cached_steps,
        "speedup": round(schedule.speedup, 3),
        "per_step_full": [int(f) for f in schedule.per_step_full],
    }
    _emit_json(payload, args.out)
    return EXIT_OK


def _cmd_plan_recompute(args: argparse.Namespace) -> int:
    chunks = _chunks_from(args)
    ref = (chunks.ref_batch, chunks.ref_seqlen, chunks.ref_hidden, chunks.ref_heads, chunks.ref_tp)
    required = int(args.required_mb * MIB)
    plan = plan_recompute(chunks, required, *ref)
    lines = [
        f"{'chunk':<28} {'retained_mib':>12} {'latency_ms':>10} {'ratio':>8} {'selected':>9}"
    ]
    for chunk in sorted(chunks.chunks, key=lambda c: -memory_latency_ratio(c, *ref)):
        retained = chunk_retained_bytes(chunk, *ref)
        ratio = memory_latency_ratio(chunk, *ref)
        mark = "yes" if chunk.name in plan.selected else ""
        lines.append(
            f"{chunk.name:<28} {retained / MIB:>12.1f} {chunk.fwd_latency_ms:>10.2f} "
            f"{ratio:>8.1f} {mark:>9}"
        )
    lines.append(
        f"required {args.required_mb:.0f} MiB/layer -> saved {plan.mib_saved_per_layer:.1f} MiB, "
        f"+{plan.latency_added_per_layer_ms:.2f} ms/layer, feasible={plan.feasible}"
    )
    _write_out("\n".join(lines) + "\n", args.out)
    return EXIT_OK if plan.feasible else EXIT_INFEASIBLE


def _cmd_plan_windows(args: argparse.Namespace) -> int:
    plan = plan_temporal_windows(args.n_prime, args.n, args.stride)
    payload = {
        "n_prime": plan.n_prime,
        "window": plan.window,
        "stride": plan.stride,
        "num_clips": plan.num_clips,
        "clips": [list(c) for c in plan.clips],
        "multiplicity": plan.multiplicity().tolist(),
    }
    _emit_json(payload, args.out)
    return EXIT_OK


def _cmd_plan_vae_tiles(args: argparse.Namespace) -> int:
    plan = plan_vae_tiles(
        _parse_triple(args.latent, "--latent"),
        _parse_triple(args.tile, "--tile"),
        _parse_triple(args.overlap, "--overlap"),
        args.devices,
    )
    payload = {
        "latent": list(plan.latent),
        "overlap": list(plan.overlap),
        "devices": plan.devices,
        "num_tiles": len(plan.tiles),
        "parallel_speedup": round(plan.parallel_speedup, 3),
        "tiles": [
            {"start": list(t.start), "size": list(t.size), "device": t.device}
            for t in plan.tiles
        ],
    }
    _emit_json(payload, args.out)
    return EXIT_OK


def _cmd_buckets_check(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    if not config.buckets:
        raise ConfigError("config has no buckets", "buckets")
    report = check_token_balance(config.buckets, args.tolerance, arch=config.model)
    payload = {
        "tolerance": args.tolerance,
        "balanced": report.balanced,
        "max_deviation": round(report.max_deviation, 6),
        "buckets": [
            {
                "bucket": list(e.bucket.key()),
                "snapped": list(e.snapped.key()),
                "tokens_per_sample": e.tokens,
                "tokens_per_batch": e.tokens_batch,
            }
            for e in report.entries
        ],
        "flagged": [
            {"left": left, "right": right, "deviation": round(dev, 6)}
            for left, right, dev in report.flagged
        ],
    }
    _emit_json(payload, args.out)
    return EXIT_OK


def _cmd_simulate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    stages = list(config.stages)
    if args.stage is not None:
        stages = [s for s in stages if s.name == args.stage]
        if not stages:
            raise ConfigError(f"no stage named {args.stage!r}", "stages")
    if not stages:
        raise ConfigError("config has no stages", "stages")
    par = config.parallel.pinned or ParallelConfig(
        tp=min(config.cluster.devices_per_node, 8),
        cp=1,
        dp=max(
            1, config.cluster.total_devices // min(config.cluster.devices_per_node, 8)
        ),
        zero_stage=config.parallel.zero_stage,
        grad_accum=config.parallel.grad_accum,
    )
    results = simulate_stages(
        stages,
        config.model,
        config.cluster,
        par,
        config.dtypes,
        chunks=_chunks_from(args),
        overlap=config.overlap,
    )
    rows = []
    for r in results:
        est = r.estimate
        rows.append(
            {
                "stage": r.stage,
                "bucket_kind": r.bucket_kind,
                "bucket": list(r.bucket.key()),
                "parallel": {"tp": par.tp, "cp": par.cp, "dp": par.dp},
                "tokens_per_batch": est.tokens,
                "recompute": {
                    "selected": list(r.recompute.selected) if r.recompute else []
                },
                "offload": {"optimizer_offloaded": False, "activation_set": []},
                "memory": {
                    "params_gb": round(est.memory.params / 1e9, 3),
                    "grads_gb": round(est.memory.grads / 1e9, 3),
                    "optimizer_gb": round(est.memory.optimizer / 1e9, 3),
                    "activations_gb": round(est.memory.activations_peak / 1e9, 3),
                    "peak_gb": round(est.peak_mem_bytes / 1e9, 3),
                },
                "timing": {
                    "t_compute_ms": round(est.t_compute_ms, 3),
                    "t_recompute_ms": round(est.t_recompute_ms, 3),
                    "t_exposed_comm_ms": round(est.t_exposed_comm_ms, 3),
                    "t_exposed_offload_ms": round(est.t_exposed_offload_ms, 3),
                    "step_time_ms": round(est.step_time_ms, 3),
                },
                "step_time_ms": round(est.step_time_ms, 3),
                "mfu": round(est.mfu, 3),
                "peak_gb": round(est.peak_mem_bytes / 1e9, 3),
            }
        )
    if args.format == "csv":
        header = "stage,bucket_kind,bucket,tokens_per_batch,step_time_ms,mfu,peak_gb"
        lines = [header] + [
            f"{r['stage']},{r['bucket_kind']},{'x'.join(str(v) for v in r['bucket'])},"
            f"{r['tokens_per_batch']},{r['step_time_ms']:.3f},{r['mfu']:.3f},{r['peak_gb']:.3f}"
            for r in rows
        ]
        _write_out("\n".join(lines) + "\n", args.out)
    elif args.format == "table":
        lines = [
            f"{'stage':<24} {'kind':<6} {'bucket':<16} {'tokens':>9} {'step_ms':>12} {'mfu':>6} {'peak_gb':>8}"
        ]
        for r in rows:
            lines.append(
                f"{r['stage']:<24} {r['bucket_kind']:<6} "
                f"{'x'.join(str(v) for v in r['bucket']):<16} {r['tokens_per_batch']:>9} "
                f"{r['step_time_ms']:>12.3f} {r['mfu']:>6.3f} {r['peak_gb']:>8.3f}"
            )
        _write_out("\n".join(lines) + "\n", args.out)
    else:
        _emit_json({"parallel": {"tp": par.tp, "cp": par.cp, "dp": par.dp}, "stages": rows}, args.out)
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "plan":
            if args.plan_command == "train":
                return _cmd_plan_train(args)
            if args.plan_command == "infer":
                return _cmd_plan_infer(args)
            if args.plan_command == "recompute":
                return _cmd_plan_recompute(args)
            if args.plan_command == "windows":
                return _cmd_plan_windows(args)
            if args.plan_command == "vae-tiles":
                return _cmd_plan_vae_tiles(args)
        if args.command == "buckets":
            return _cmd_buckets_check(args)
        if args.command == "simulate":
            return _cmd_simulate(args)
        raise ConfigError(f"unknown command {args.command!r}", "command")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PlanningError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def console_main() -> None:
    sys.exit(main())
