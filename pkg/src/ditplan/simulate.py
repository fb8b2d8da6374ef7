"""Analytical step-time, peak-memory and MFU estimation.

Compute is costed from model FLOPs: attention's 4*B*S^2*H score/value
matmuls per layer dominate the 2*B*S*params linear term once S grows past
H. Backward counts twice the forward; recomputation re-runs selected
chunk forwards using the reference latency table, rescaled S^2 for
attention-class chunks and S for the rest. MFU counts only the model's
forward+backward FLOPs in the numerator (recompute FLOPs are overhead,
not model throughput).
"""

from __future__ import annotations

from dataclasses import dataclass

from .buckets import Bucket, VaeSpec, token_count
from .comm import CommPlan, build_comm_plan
from .config import (
    ClusterSpec,
    DTypePolicy,
    ModelArch,
    OverlapConfig,
    ParallelConfig,
    StageScenario,
    estimate_param_count,
    resolved_param_count,
)
from .errors import ConfigError, MemoryOverflowError
from .memory import ChunkTable, MemoryBreakdown, activation_per_layer, model_states_bytes
from .offload import NO_OFFLOAD, OffloadPlan
from .recompute import RecomputePlan

BACKWARD_FLOPS_FACTOR = 2.0  # backward = 2x forward, standard


@dataclass(frozen=True)
class StepEstimate:
    flops_per_microstep_fwd: float
    flops_per_step: float
    t_compute_ms: float
    t_recompute_ms: float
    t_exposed_comm_ms: float
    t_exposed_offload_ms: float
    peak_mem_bytes: float
    memory: MemoryBreakdown
    mfu: float
    efficiency: float
    tokens: int

    @property
    def step_time_ms(self) -> float:
        return (
            self.t_compute_ms
            + self.t_recompute_ms
            + self.t_exposed_comm_ms
            + self.t_exposed_offload_ms
        )


def flops_per_microstep(arch: ModelArch, B: int, S: int) -> float:
    """Forward FLOPs of one micro-batch.

    Per layer: 4*B*S^2*H for the two attention matmuls plus 2*B*S*p for
    the token-processing linears (p = 4H^2 attention projections +
    2*ffn_multiplier*H^2 FFN; modulation layers act per sample, not per
    token, and are negligible here). Patchify/head projections add the
    small tail term.
    """
    H = arch.hidden_size
    params_per_layer = 4 * H**2 + 2 * arch.ffn_multiplier * H**2
    per_layer = 4 * B * S**2 * H + 2 * B * S * params_per_layer
    head = 2 * B * S * estimate_param_count(arch).embedding_head
    return arch.num_layers * per_layer + head


def _recompute_ms_per_microstep(
    recompute: RecomputePlan, chunks: ChunkTable, arch: ModelArch, B: int, S: int
) -> float:
    """Re-run cost of the selected chunk forwards, rescaled from the table's shape."""
    total = 0.0
    for name in recompute.selected:
        chunk = chunks.by_name(name)
        scale = B / chunks.ref_batch
        if chunk.is_attention_class:
            scale *= (S / chunks.ref_seqlen) ** 2
        else:
            scale *= S / chunks.ref_seqlen
        total += chunk.fwd_latency_ms * scale
    return total * arch.num_layers


def estimate_step(
    arch: ModelArch,
    bucket: Bucket,
    par: ParallelConfig,
    cluster: ClusterSpec,
    dtypes: DTypePolicy = DTypePolicy(),
    recompute: RecomputePlan | None = None,
    offload: OffloadPlan = NO_OFFLOAD,
    comm: CommPlan | None = None,
    chunks: ChunkTable | None = None,
    efficiency: float = 0.5,
    vae: VaeSpec = VaeSpec(),
    enforce_capacity: bool = True,
) -> StepEstimate:
    """Simulate one optimizer step of one bucket under a full strategy.

    Raises :class:`MemoryOverflowError` naming the gap when the projected
    peak exceeds device memory (suppress with ``enforce_capacity=False``
    to inspect infeasible points).
    """
    if not 0.0 < efficiency <= 1.0:
        raise ConfigError("efficiency must be in (0, 1]", "overlap.efficiency")
    from .memory import BUILTIN_CHUNKS

    chunks = chunks or BUILTIN_CHUNKS
    if recompute is None:
        recompute = RecomputePlan((), 0, 0.0, True)
    overlap_names = set(recompute.selected) & set(offload.activation_offload_set)
    if overlap_names:
        raise ConfigError(
            f"chunks both recomputed and offloaded: {sorted(overlap_names)}", "plan"
        )

    shape = token_count(bucket, vae, arch)
    B, S = bucket.batch, shape.tokens
    s_shard = S // par.cp if par.cp > 1 else S

    fwd_flops = flops_per_microstep(arch, B, S)
    device_share = efficiency * cluster.peak_flops_per_device * par.tp * par.cp
    t_compute = par.grad_accum * (1 + BACKWARD_FLOPS_FACTOR) * fwd_flops / device_share * 1e3
    t_recompute = par.grad_accum * _recompute_ms_per_microstep(
        recompute, chunks, arch, B, s_shard
    )
    t_comm = comm.exposed_ms_per_step(par.grad_accum) if comm is not None else 0.0
    t_offload = (
        par.grad_accum * offload.activation_exposed_ms_per_microstep
        + offload.optimizer_exposed_ms
    )

    states = model_states_bytes(resolved_param_count(arch), dtypes, par)
    retained = activation_per_layer(
        chunks,
        B,
        s_shard,
        arch.hidden_size,
        arch.num_heads,
        par.tp,
        recompute_set=recompute.selected,
        offload_set=offload.activation_offload_set,
    )
    memory = states.with_activations(float(retained * arch.num_layers))
    if offload.optimizer_offloaded:
        memory = MemoryBreakdown(
            params=memory.params,
            grads=memory.grads,
            master=0.0,
            moments=0.0,
            ema=0.0,
            activations_peak=memory.activations_peak,
        )
    peak = memory.total
    if enforce_capacity and peak > cluster.device_mem:
        raise MemoryOverflowError(int(peak), int(cluster.device_mem))

    step_ms = t_compute + t_recompute + t_comm + t_offload
    # MFU = model-FLOP throughput over aggregate peak. Equals
    # ideal_time / step_time, which keeps the identity case exactly 1.0.
    ideal_ms = (
        par.grad_accum
        * (1 + BACKWARD_FLOPS_FACTOR)
        * fwd_flops
        / (cluster.peak_flops_per_device * par.tp * par.cp)
        * 1e3
    )
    mfu = ideal_ms / step_ms if step_ms > 0 else 0.0
    return StepEstimate(
        flops_per_microstep_fwd=fwd_flops,
        flops_per_step=(1 + BACKWARD_FLOPS_FACTOR) * fwd_flops * par.grad_accum * par.dp,
        t_compute_ms=t_compute,
        t_recompute_ms=t_recompute,
        t_exposed_comm_ms=t_comm,
        t_exposed_offload_ms=t_offload,
        peak_mem_bytes=peak,
        memory=memory,
        mfu=mfu,
        efficiency=efficiency,
        tokens=shape.tokens_batch,
    )


@dataclass(frozen=True)
class StageEstimate:
    stage: str
    bucket_kind: str
    bucket: Bucket
    estimate: StepEstimate
    recompute: RecomputePlan | None = None


def simulate_stages(
    stages: list[StageScenario] | tuple[StageScenario, ...],
    arch: ModelArch,
    cluster: ClusterSpec,
    par: ParallelConfig,
    dtypes: DTypePolicy = DTypePolicy(),
    chunks: ChunkTable | None = None,
    overlap: OverlapConfig = OverlapConfig(),
    vae: VaeSpec = VaeSpec(),
    auto_recompute: bool = True,
) -> list[StageEstimate]:
    """One estimate per stage bucket (images and videos reported separately).

    With ``auto_recompute``, each bucket gets the minimal recompute plan
    that fits device memory; buckets that cannot fit even with full
    recomputation propagate :class:`MemoryOverflowError`.
    """
    from .memory import BUILTIN_CHUNKS
    from .recompute import plan_recompute

    chunks = chunks or BUILTIN_CHUNKS
    results = []
    for stage in stages:
        for kind, bucket in stage.buckets():
            shape = token_count(bucket, vae, arch)
            s_shard = shape.tokens // par.cp if par.cp > 1 else shape.tokens
            recompute = None
            if auto_recompute:
                states = model_states_bytes(resolved_param_count(arch), dtypes, par)
                full = activation_per_layer(
                    chunks, bucket.batch, s_shard, arch.hidden_size, arch.num_heads, par.tp
                )
                budget = cluster.device_mem - states.total
                deficit = full - budget / max(1, arch.num_layers)
                required = max(0, int(deficit))
                recompute = plan_recompute(
                    chunks,
                    required,
                    bucket.batch,
                    s_shard,
                    arch.hidden_size,
                    arch.num_heads,
                    par.tp,
                )
            comm = build_comm_plan(
                arch,
                cluster,
                dtypes,
                par,
                bucket.batch,
                shape.tokens,
                resolved_param_count(arch),
                overlap,
            )
            estimate = estimate_step(
                arch,
                bucket,
                par,
                cluster,
                dtypes,
                recompute=recompute,
                comm=comm,
                chunks=chunks,
                efficiency=overlap.efficiency,
                vae=vae,
            )
            results.append(
                StageEstimate(
                    stage=stage.name,
                    bucket_kind=kind,
                    bucket=bucket,
                    estimate=estimate,
                    recompute=recompute,
                )
            )
    return results
