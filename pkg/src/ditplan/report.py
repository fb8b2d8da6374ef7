"""Plan-search driver and report emission.

``run_train_plan`` walks every stage bucket, enumerates candidate
parallel layouts, balances offload/recompute per candidate and simulates
the step, producing one ranked report. Emission is byte-stable: fixed key
order, floats at three decimals, so identical configs yield identical
bytes regardless of worker count.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .buckets import Bucket, VaeSpec, check_token_balance, token_count
from .comm import build_comm_plan, cp_gate_and_comm, enumerate_parallel_configs
from .config import (
    ParallelConfig,
    PlanningConfig,
    StageScenario,
    resolved_param_count,
    validate,
)
from .errors import ConfigError, InfeasibleError, MemoryOverflowError
from .memory import BUILTIN_CHUNKS, ChunkTable, activation_per_layer, model_states_bytes
from .offload import (
    ActivationOffloadPlan,
    OffloadPlan,
    balance_strategies,
    effective_pcie_bw,
    plan_optimizer_offload,
)
from .recompute import plan_recompute
from .simulate import estimate_step, flops_per_microstep

OFFLOAD_MODES = ("auto", "off", "optimizer-only")


def _round_floats(value: Any, digits: int = 3) -> Any:
    if isinstance(value, float):
        rounded = round(value, digits)
        return 0.0 if rounded == 0 else rounded
    if isinstance(value, dict):
        return {k: _round_floats(v, digits) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round_floats(v, digits) for v in value]
    return value


@dataclass
class PlanReport:
    """Deterministic, emission-ready planning report."""

    document: dict[str, Any]

    @property
    def feasible_count(self) -> int:
        return sum(len(s["plans"]) for s in self.document["stages"])

    @property
    def infeasible_count(self) -> int:
        return sum(len(s["infeasible"]) for s in self.document["stages"])

    def warnings(self) -> list[str]:
        return list(self.document["warnings"])


def _echo_input(config: PlanningConfig, chunks: ChunkTable) -> dict[str, Any]:
    model = config.model
    return {
        "model": {
            "hidden_size": model.hidden_size,
            "num_heads": model.num_heads,
            "num_layers": model.num_layers,
            "ffn_multiplier": model.ffn_multiplier,
            "adaln_mode": model.adaln_mode,
            "patch": [model.patch_t, model.patch_h, model.patch_w],
            "param_count": resolved_param_count(model),
            "param_count_source": "supplied" if model.param_count is not None else "estimated",
            "extra_unpartitioned_layers": list(model.extra_unpartitioned_layers),
            "fitted_fields": list(config.fitted_fields),
        },
        "cluster": {
            "num_nodes": config.cluster.num_nodes,
            "devices_per_node": config.cluster.devices_per_node,
            "device_mem": config.cluster.device_mem,
            "peak_flops_per_device": config.cluster.peak_flops_per_device,
            "intra_node_bw": config.cluster.intra_node_bw,
            "inter_node_bw": config.cluster.inter_node_bw,
            "pcie_bw_per_device": config.cluster.pcie_bw_per_device,
            "host_write_bw_per_numa": config.cluster.host_write_bw_per_numa,
            "devices_per_numa": config.cluster.devices_per_numa,
            "host_mem": config.cluster.host_mem,
        },
        "dtypes": {
            "param_bytes": config.dtypes.param_bytes,
            "grad_bytes": config.dtypes.grad_bytes,
            "master_bytes": config.dtypes.master_bytes,
            "moment_bytes": config.dtypes.moment_bytes,
            "ema_bytes": config.dtypes.ema_bytes,
            "act_bytes": config.dtypes.act_bytes,
        },
        "assumptions": {
            "tp_sp_overlap_fraction": config.overlap.tp_sp_fraction,
            "tp_sp_overlap_is_assumed": True,
            "compute_efficiency": config.overlap.efficiency,
            "collective_latency_ms": config.overlap.collective_latency_ms,
            "mfu_counts_recompute_flops": False,
            "chunk_table_ref_seqlen": chunks.ref_seqlen,
        },
    }


def _bucket_doc(bucket: Bucket) -> list[int]:
    return [bucket.batch, bucket.frames, bucket.height, bucket.width]


@dataclass(frozen=True)
class _Candidate:
    stage: str
    bucket_kind: str
    bucket: Bucket
    par: ParallelConfig


def _evaluate_candidate(
    cand: _Candidate,
    config: PlanningConfig,
    chunks: ChunkTable,
    vae: VaeSpec,
    offload_mode: str,
) -> dict[str, Any]:
    """Balance strategies for one candidate and simulate it.

    Returns a plan entry dict; infeasible candidates carry
    ``feasible=False`` plus a diagnostic instead of timings.
    """
    arch, cluster, dtypes = config.model, config.cluster, config.dtypes
    par = cand.par
    bucket = cand.bucket
    shape = token_count(bucket, vae, arch)
    B, S = bucket.batch, shape.tokens
    s_shard = S // par.cp if par.cp > 1 else S
    P = resolved_param_count(arch)
    L = max(1, arch.num_layers)

    base = {
        "parallel": {
            "tp": par.tp,
            "cp": par.cp,
            "dp": par.dp,
            "zero_stage": par.zero_stage,
            "grad_accum": par.grad_accum,
        },
        "tokens_per_sample": shape.tokens,
        "tokens_per_batch": shape.tokens_batch,
    }

    gate = cp_gate_and_comm(
        shape.tokens_batch,
        B,
        S,
        arch.hidden_size,
        par.cp,
        dtypes.act_bytes,
        cluster.inter_node_bw,
        config.overlap.collective_latency_ms,
    )
    if gate.violation is not None:
        return {**base, "feasible": False, "diagnostic": gate.violation}

    states = model_states_bytes(P, dtypes, par)
    full_act = activation_per_layer(
        chunks, B, s_shard, arch.hidden_size, arch.num_heads, par.tp
    )
    fwd_flops = flops_per_microstep(arch, B, S)
    eff_share = config.overlap.efficiency * cluster.peak_flops_per_device * par.tp * par.cp
    fwd_microstep_ms = fwd_flops / eff_share * 1e3
    block_compute_ms = fwd_microstep_ms / L
    bwd_window_ms = 2 * fwd_microstep_ms
    pcie = effective_pcie_bw(cluster, cluster.devices_per_numa)

    attempts: list[tuple[bool, bool]]  # (offload_optimizer, offload_activations)
    if offload_mode == "auto":
        attempts = [(False, True), (True, True)]
    elif offload_mode == "off":
        attempts = [(False, False)]
    else:
        attempts = [(True, False)]

    last_diag = "no strategy attempted"
    for opt_off, act_off in attempts:
        states_resident = states.total - (states.optimizer if opt_off else 0.0)
        act_budget = cluster.device_mem - states_resident
        if act_budget < 0:
            last_diag = (
                f"model states ({states_resident / 1e9:.1f} GB) alone exceed device "
                f"memory ({cluster.device_mem / 1e9:.1f} GB)"
            )
            continue
        required = max(0, full_act - math.floor(act_budget / L))

        if act_off:
            strategy = balance_strategies(
                lambda _cp: required,
                chunks,
                cluster,
                [par.cp],
                block_compute_ms,
                L,
                B,
                S,
                arch.hidden_size,
                arch.num_heads,
                par.tp,
            )
            if not strategy.feasible:
                last_diag = strategy.diagnostic or "strategy balancing failed"
                continue
            recompute = strategy.recompute
            act_plan = strategy.offload
        else:
            recompute = plan_recompute(
                chunks, required, B, s_shard, arch.hidden_size, arch.num_heads, par.tp
            )
            if not recompute.feasible:
                last_diag = (
                    f"deficit {required / 1e6:.0f} MB/layer exceeds recomputable savings "
                    f"{recompute.bytes_saved_per_layer / 1e6:.0f} MB/layer"
                )
                continue
            act_plan = ActivationOffloadPlan((), 0, 0.0, 0.0, True)

        opt_transfer = opt_exposed = 0.0
        if opt_off:
            opt_transfer, opt_exposed = plan_optimizer_offload(
                states.optimizer, pcie, fwd_microstep_ms, bwd_window_ms
            )
        offload = OffloadPlan(
            optimizer_offloaded=opt_off,
            optimizer_transfer_ms=opt_transfer,
            optimizer_exposed_ms=opt_exposed,
            activation_offload_set=act_plan.selected,
            activation_bytes_per_layer=act_plan.bytes_per_layer,
            activation_transfer_ms_per_layer=act_plan.transfer_ms_per_layer,
            activation_exposed_ms_per_microstep=act_plan.exposed_ms_per_layer * L,
            effective_pcie_bw=pcie,
        )
        comm = build_comm_plan(
            arch,
            cluster,
            dtypes,
            par,
            B,
            S,
            P,
            config.overlap,
            first_fwd_window_ms=fwd_microstep_ms,
            last_bwd_window_ms=bwd_window_ms,
        )
        try:
            est = estimate_step(
                arch,
                bucket,
                par,
                cluster,
                dtypes,
                recompute=recompute,
                offload=offload,
                comm=comm,
                chunks=chunks,
                efficiency=config.overlap.efficiency,
                vae=vae,
            )
        except MemoryOverflowError as exc:
            last_diag = str(exc)
            continue
        return {
            **base,
            "feasible": True,
            "comm": {
                "tp_sp_raw_ms_per_layer": comm.tp_sp_raw_ms_per_layer,
                "tp_sp_exposed_ms_per_layer": comm.tp_sp_exposed_ms_per_layer,
                "cp_ms_per_layer": comm.cp_ms_per_layer,
                "dp_raw_ms_per_step": comm.dp_raw_ms_per_step,
                "dp_exposed_ms_per_step": comm.dp_exposed_ms_per_step,
            },
            "recompute": {
                "selected": list(recompute.selected),
                "mib_saved_per_layer": recompute.mib_saved_per_layer,
                "latency_ms_per_layer": recompute.latency_added_per_layer_ms,
            },
            "offload": {
                "optimizer_offloaded": offload.optimizer_offloaded,
                "optimizer_exposed_ms": offload.optimizer_exposed_ms,
                "activation_set": list(offload.activation_offload_set),
                "activation_exposed_ms_per_microstep": offload.activation_exposed_ms_per_microstep,
            },
            "memory": {
                "params_gb": est.memory.params / 1e9,
                "grads_gb": est.memory.grads / 1e9,
                "optimizer_gb": est.memory.optimizer / 1e9,
                "activations_gb": est.memory.activations_peak / 1e9,
                "peak_gb": est.peak_mem_bytes / 1e9,
            },
            "timing": {
                "t_compute_ms": est.t_compute_ms,
                "t_recompute_ms": est.t_recompute_ms,
                "t_exposed_comm_ms": est.t_exposed_comm_ms,
                "t_exposed_offload_ms": est.t_exposed_offload_ms,
                "step_time_ms": est.step_time_ms,
            },
            "mfu": est.mfu,
        }
    return {**base, "feasible": False, "diagnostic": last_diag}


def run_train_plan(
    config: PlanningConfig,
    chunks: ChunkTable | None = None,
    vae: VaeSpec = VaeSpec(),
    offload_mode: str = "auto",
    workers: int = 1,
    balance_tolerance: float = 0.01,
) -> PlanReport:
    """Enumerate, balance, simulate and rank plans for every stage bucket.

    Output is deterministic for identical input: candidates are evaluated
    independently (optionally across ``workers`` threads) and a final
    sort fixes the order.
    """
    if offload_mode not in OFFLOAD_MODES:
        raise ConfigError(f"offload mode must be one of {OFFLOAD_MODES}", "offload")
    chunks = chunks or BUILTIN_CHUNKS
    arch, cluster = config.model, config.cluster
    pinned = config.parallel.pinned
    violations = validate(arch, cluster, pinned or ParallelConfig(tp=1, cp=1, dp=1))
    if violations:
        raise ConfigError("; ".join(violations), "config")

    warnings: list[str] = []
    if len(config.buckets) >= 2:
        balance = check_token_balance(config.buckets, balance_tolerance, vae, arch)
        for left, right, dev in balance.flagged:
            warnings.append(
                f"bucket imbalance: {left} vs {right} differ by {dev * 100:.1f}% "
                f"(tolerance {balance_tolerance * 100:.1f}%)"
            )

    stages: list[StageScenario] = list(config.stages)
    if not stages:
        if not config.buckets:
            raise ConfigError("config has neither stages nor buckets", "stages")
        stages = [
            StageScenario(name=f"bucket-{b.label()}", video_bucket=b) for b in config.buckets
        ]

    candidates: list[_Candidate] = []
    stage_keys: list[tuple[str, str, Bucket]] = []
    for stage in stages:
        for kind, bucket in stage.buckets():
            stage_keys.append((stage.name, kind, bucket))
            if pinned is not None:
                pars = [pinned]
            else:
                pars = enumerate_parallel_configs(
                    arch,
                    cluster,
                    bucket,
                    config.dtypes,
                    config.overlap,
                    vae,
                    zero_stage=config.parallel.zero_stage,
                    grad_accum=config.parallel.grad_accum,
                )
                if not pars:
                    warnings.append(f"no parallel candidates for {stage.name}/{kind}")
            candidates.extend(
                _Candidate(stage=stage.name, bucket_kind=kind, bucket=bucket, par=p)
                for p in pars
            )

    def job(cand: _Candidate) -> tuple[_Candidate, dict[str, Any]]:
        return cand, _evaluate_candidate(cand, config, chunks, vae, offload_mode)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(job, candidates))
    else:
        results = [job(c) for c in candidates]

    stage_docs = []
    for stage_name, kind, bucket in stage_keys:
        entries = [
            entry
            for cand, entry in results
            if cand.stage == stage_name and cand.bucket_kind == kind and cand.bucket == bucket
        ]
        feasible = [e for e in entries if e["feasible"]]
        infeasible = [e for e in entries if not e["feasible"]]
        feasible.sort(
            key=lambda e: (
                round(e["timing"]["step_time_ms"], 6),
                e["parallel"]["cp"],
                e["parallel"]["tp"],
                e["parallel"]["dp"],
            )
        )
        infeasible.sort(
            key=lambda e: (e["parallel"]["cp"], e["parallel"]["tp"], e["parallel"]["dp"])
        )
        for entry in infeasible:
            warnings.append(
                f"{stage_name}/{kind} tp={entry['parallel']['tp']} cp={entry['parallel']['cp']} "
                f"dp={entry['parallel']['dp']}: {entry['diagnostic']}"
            )
        stage_docs.append(
            {
                "stage": stage_name,
                "bucket_kind": kind,
                "bucket": _bucket_doc(bucket),
                "plans": feasible,
                "infeasible": infeasible,
            }
        )

    document = {
        "input": _echo_input(config, chunks),
        "buckets": [_bucket_doc(b) for b in config.buckets],
        "stages": stage_docs,
        "warnings": warnings,
    }
    return PlanReport(document=_round_floats(document))


# ---------------------------------------------------------------------------
# Emission
# ---------------------------------------------------------------------------

_CSV_COLUMNS = [
    "stage",
    "bucket_kind",
    "bucket",
    "tp",
    "cp",
    "dp",
    "zero_stage",
    "grad_accum",
    "feasible",
    "step_time_ms",
    "mfu",
    "peak_gb",
    "t_compute_ms",
    "t_recompute_ms",
    "t_exposed_comm_ms",
    "t_exposed_offload_ms",
    "recompute_set",
    "offload_set",
    "optimizer_offloaded",
    "diagnostic",
]


def _csv_rows(document: dict[str, Any]) -> list[dict[str, Any]]:
    rows = []
    for stage in document["stages"]:
        for entry in list(stage["plans"]) + list(stage["infeasible"]):
            par = entry["parallel"]
            row = {
                "stage": stage["stage"],
                "bucket_kind": stage["bucket_kind"],
                "bucket": "x".join(str(v) for v in stage["bucket"]),
                "tp": par["tp"],
                "cp": par["cp"],
                "dp": par["dp"],
                "zero_stage": par["zero_stage"],
                "grad_accum": par["grad_accum"],
                "feasible": entry["feasible"],
            }
            if entry["feasible"]:
                row.update(
                    {
                        "step_time_ms": f"{entry['timing']['step_time_ms']:.3f}",
                        "mfu": f"{entry['mfu']:.3f}",
                        "peak_gb": f"{entry['memory']['peak_gb']:.3f}",
                        "t_compute_ms": f"{entry['timing']['t_compute_ms']:.3f}",
                        "t_recompute_ms": f"{entry['timing']['t_recompute_ms']:.3f}",
                        "t_exposed_comm_ms": f"{entry['timing']['t_exposed_comm_ms']:.3f}",
                        "t_exposed_offload_ms": f"{entry['timing']['t_exposed_offload_ms']:.3f}",
                        "recompute_set": "+".join(entry["recompute"]["selected"]),
                        "offload_set": "+".join(entry["offload"]["activation_set"]),
                        "optimizer_offloaded": entry["offload"]["optimizer_offloaded"],
                        "diagnostic": "",
                    }
                )
            else:
                row.update(
                    {
                        "step_time_ms": "",
                        "mfu": "",
                        "peak_gb": "",
                        "t_compute_ms": "",
                        "t_recompute_ms": "",
                        "t_exposed_comm_ms": "",
                        "t_exposed_offload_ms": "",
                        "recompute_set": "",
                        "offload_set": "",
                        "optimizer_offloaded": "",
                        "diagnostic": entry["diagnostic"],
                    }
                )
            rows.append(row)
    return rows


def render(report: PlanReport, format: str = "json") -> str:
    """Serialize a report; identical reports yield identical bytes."""
    document = report.document
    if format == "json":
        return json.dumps(document, indent=2) + "\n"
    if format == "csv":
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=_CSV_COLUMNS, lineterminator="\n")
        writer.writeheader()
        for row in _csv_rows(document):
            writer.writerow(row)
        return buffer.getvalue()
    if format == "table":
        lines = []
        header = (
            f"{'stage':<24} {'bucket':<16} {'tp':>3} {'cp':>3} {'dp':>3} "
            f"{'step_ms':>12} {'mfu':>6} {'peak_gb':>8}  plan"
        )
        lines.append(header)
        lines.append("-" * len(header))
        for row in _csv_rows(document):
            if row["feasible"]:
                plan = row["recompute_set"] or "-"
                if row["offload_set"]:
                    plan += f" | offload {row['offload_set']}"
                if row["optimizer_offloaded"] is True:
                    plan += " | opt->host"
                lines.append(
                    f"{row['stage']:<24} {row['bucket']:<16} {row['tp']:>3} {row['cp']:>3} "
                    f"{row['dp']:>3} {row['step_time_ms']:>12} {row['mfu']:>6} "
                    f"{row['peak_gb']:>8}  {plan}"
                )
            else:
                lines.append(
                    f"{row['stage']:<24} {row['bucket']:<16} {row['tp']:>3} {row['cp']:>3} "
                    f"{row['dp']:>3} {'infeasible':>12} {'':>6} {'':>8}  {row['diagnostic']}"
                )
        for warning in document["warnings"]:
            lines.append(f"warning: {warning}")
        return "\n".join(lines) + "\n"
    raise ConfigError(f"unknown format {format!r}", "format")


def emit(report: PlanReport, format: str = "json", path: str | Path | None = None) -> str:
    """Render and optionally write a report. Returns the rendered text."""
    text = render(report, format)
    if path is not None:
        Path(path).write_text(text)
    return text


def require_feasible(report: PlanReport) -> None:
    """Raise :class:`InfeasibleError` when no candidate plan fits."""
    if report.feasible_count == 0:
        raise InfeasibleError(
            "no feasible plan; diagnostics: " + "; ".join(report.warnings()[:5])
        )
