"""Communication volumes, times and overlap for TP-SP, CP and data parallelism.

Collectives are costed with the ring model: a degree-k all-gather or
reduce-scatter moves (k-1)/k of the tensor per rank, plus a small fixed
launch latency per operation. Context parallelism is priced at inter-node
bandwidth because TP-SP already occupies the node; it is gated on
ultra-long sequences (above 200k tokens) since cross-node all-to-all is
the dominant bottleneck otherwise.
"""

from __future__ import annotations

from dataclasses import dataclass

from .buckets import Bucket, VaeSpec, token_count
from .config import ClusterSpec, DTypePolicy, ModelArch, OverlapConfig, ParallelConfig
from .errors import ConfigError

CP_TOKEN_GATE = 200_000

DEFAULT_COLLECTIVE_LATENCY_MS = 0.02

# Backward mirrors the forward collectives (all-gather and reduce-scatter
# swap roles), so one micro-step carries two forward-sized comm legs.
FWD_BWD_COMM_LEGS = 2.0


def tp_sp_layer_comm(
    B: int,
    S: int,
    H: int,
    tp: int,
    act_bytes: int,
    intra_bw: float,
    overlap_fraction: float,
    collective_latency_ms: float = DEFAULT_COLLECTIVE_LATENCY_MS,
) -> tuple[float, float]:
    """Per-layer forward TP-SP time in ms: (raw, exposed).

    Two collectives per layer (all-gather of the sequence-sharded input,
    reduce-scatter of the output), each moving B*S*H*act_bytes*(tp-1)/tp.
    Fused matmul-collective pipelining hides ``overlap_fraction`` of it.
    """
    if tp < 1:
        raise ConfigError("tp must be >= 1", "parallel.tp")
    if not 0.0 <= overlap_fraction <= 1.0:
        raise ConfigError("overlap fraction must be in [0, 1]", "overlap.tp_sp_fraction")
    if tp == 1:
        return (0.0, 0.0)
    volume = 2 * B * S * H * act_bytes * (tp - 1) / tp
    raw = volume / intra_bw * 1e3 + 2 * collective_latency_ms
    exposed = raw * (1.0 - overlap_fraction)
    return (raw, exposed)


@dataclass(frozen=True)
class CpGateResult:
    """Outcome of the context-parallel gate plus the per-layer all-to-all cost."""

    enabled: bool
    time_ms: float
    violation: str | None = None


def cp_gate_and_comm(
    tokens_batch: int,
    B: int,
    S: int,
    H: int,
    cp: int,
    act_bytes: int,
    inter_bw: float,
    collective_latency_ms: float = DEFAULT_COLLECTIVE_LATENCY_MS,
) -> CpGateResult:
    """Gate CP on the 200k-token threshold and cost its per-layer transposes.

    A cp > 1 request below the gate is recorded as a violation (the plan
    is rejected downstream, this never raises). Two all-to-alls bracket
    each attention, each moving B*S*H*act_bytes*(cp-1)/cp.
    """
    if cp < 1:
        raise ConfigError("cp must be >= 1", "parallel.cp")
    if cp == 1:
        return CpGateResult(enabled=False, time_ms=0.0)
    if tokens_batch <= CP_TOKEN_GATE:
        return CpGateResult(
            enabled=False,
            time_ms=0.0,
            violation=(
                f"cp={cp} rejected: {tokens_batch} tokens is below the "
                f"{CP_TOKEN_GATE} ultra-long-sequence threshold"
            ),
        )
    volume = 2 * B * S * H * act_bytes * (cp - 1) / cp
    time_ms = volume / inter_bw * 1e3 + 2 * collective_latency_ms
    return CpGateResult(enabled=True, time_ms=time_ms)


def dp_comm(
    P: float,
    dtypes: DTypePolicy,
    tp: int,
    dp: int,
    grad_accum: int,
    inter_bw: float,
    first_fwd_window_ms: float = 0.0,
    last_bwd_window_ms: float = 0.0,
    collective_latency_ms: float = DEFAULT_COLLECTIVE_LATENCY_MS,
) -> tuple[float, float]:
    """Per-optimizer-step data-parallel time in ms: (raw, exposed).

    One parameter all-gather and one gradient reduce-scatter per step
    (once per accumulation cycle, not per micro-step). The all-gather
    hides under the first forward micro-step, the reduce-scatter under
    the last backward micro-step; whatever does not fit is exposed.
    """
    if dp < 1 or tp < 1 or grad_accum < 1:
        raise ConfigError("degrees and grad_accum must be >= 1", "parallel")
    if dp == 1:
        return (0.0, 0.0)
    shard = P / tp
    ring = (dp - 1) / dp
    ag_ms = shard * dtypes.param_bytes * ring / inter_bw * 1e3 + collective_latency_ms
    rs_ms = shard * dtypes.grad_bytes * ring / inter_bw * 1e3 + collective_latency_ms
    raw = ag_ms + rs_ms
    exposed = max(0.0, ag_ms - first_fwd_window_ms) + max(0.0, rs_ms - last_bwd_window_ms)
    return (raw, exposed)


@dataclass(frozen=True)
class CommPlan:
    """Assembled communication picture for one (bucket, parallel config) pair."""

    tp_sp_raw_ms_per_layer: float
    tp_sp_exposed_ms_per_layer: float
    cp_ms_per_layer: float
    dp_raw_ms_per_step: float
    dp_exposed_ms_per_step: float
    overlap_fraction: float
    num_layers: int

    @property
    def exposed_ms_per_microstep(self) -> float:
        # Both classes pay a forward and a backward leg per layer; CP
        # all-to-alls sit on the critical path around attention.
        per_layer = (
            self.tp_sp_exposed_ms_per_layer + self.cp_ms_per_layer
        ) * FWD_BWD_COMM_LEGS
        return per_layer * self.num_layers

    def exposed_ms_per_step(self, grad_accum: int) -> float:
        return self.exposed_ms_per_microstep * grad_accum + self.dp_exposed_ms_per_step


def build_comm_plan(
    arch: ModelArch,
    cluster: ClusterSpec,
    dtypes: DTypePolicy,
    par: ParallelConfig,
    B: int,
    S: int,
    P: float,
    overlap: OverlapConfig = OverlapConfig(),
    first_fwd_window_ms: float = 0.0,
    last_bwd_window_ms: float = 0.0,
) -> CommPlan:
    """Cost every communication class for one candidate layout.

    ``S`` is the full per-sample sequence; CP shards it, so TP-SP inside a
    CP group only sees S/cp tokens.
    """
    s_shard = S // par.cp if par.cp > 1 else S
    tp_raw, tp_exposed = tp_sp_layer_comm(
        B,
        s_shard,
        arch.hidden_size,
        par.tp,
        dtypes.act_bytes,
        cluster.intra_node_bw,
        overlap.tp_sp_fraction,
        overlap.collective_latency_ms,
    )
    gate = cp_gate_and_comm(
        B * S,
        B,
        S,
        arch.hidden_size,
        par.cp,
        dtypes.act_bytes,
        cluster.inter_node_bw,
        overlap.collective_latency_ms,
    )
    if gate.violation is not None:
        raise ConfigError(gate.violation, "parallel.cp")
    dp_raw, dp_exposed = dp_comm(
        P,
        dtypes,
        par.tp,
        par.dp,
        par.grad_accum,
        cluster.inter_node_bw,
        first_fwd_window_ms,
        last_bwd_window_ms,
        overlap.collective_latency_ms,
    )
    return CommPlan(
        tp_sp_raw_ms_per_layer=tp_raw,
        tp_sp_exposed_ms_per_layer=tp_exposed,
        cp_ms_per_layer=gate.time_ms,
        dp_raw_ms_per_step=dp_raw,
        dp_exposed_ms_per_step=dp_exposed,
        overlap_fraction=overlap.tp_sp_fraction,
        num_layers=arch.num_layers,
    )


def _divisors(n: int) -> list[int]:
    return [d for d in range(1, n + 1) if n % d == 0]


def enumerate_parallel_configs(
    arch: ModelArch,
    cluster: ClusterSpec,
    bucket: Bucket,
    dtypes: DTypePolicy = DTypePolicy(),
    overlap: OverlapConfig = OverlapConfig(),
    vae: VaeSpec = VaeSpec(),
    zero_stage: str = "optimizer-partitioned",
    grad_accum: int = 1,
) -> list[ParallelConfig]:
    """All placement-rule-respecting (tp, cp, dp) splits, ranked by exposed comm.

    TP stays inside a node (divisor of devices_per_node, must divide H);
    CP takes power-of-two degrees only above the token gate; DP absorbs
    the rest. Lower CP ranks first on ties, keeping context parallelism
    minimally viable.
    """
    from .config import resolved_param_count

    shape = token_count(bucket, vae, arch)
    P = resolved_param_count(arch)
    total = cluster.total_devices
    candidates: list[tuple[tuple[float, int, int], ParallelConfig]] = []
    for tp in _divisors(cluster.devices_per_node):
        if arch.hidden_size % tp != 0:
            continue
        cp = 1
        while tp * cp <= total:
            if cp > 1 and shape.tokens_batch <= CP_TOKEN_GATE:
                break
            # A further doubling is viable only while the previous degree
            # still leaves per-rank shards above the gate; once shards fit
            # TP-SP alone, higher CP is not minimally viable.
            if cp > 1 and shape.tokens_batch / (cp // 2) <= CP_TOKEN_GATE:
                break
            if total % (tp * cp) == 0:
                dp = total // (tp * cp)
                par = ParallelConfig(
                    tp=tp,
                    cp=cp,
                    dp=dp,
                    zero_stage=zero_stage if dp > 1 else "none",
                    grad_accum=grad_accum,
                )
                plan = build_comm_plan(
                    arch, cluster, dtypes, par, bucket.batch, shape.tokens, P, overlap
                )
                exposed = plan.exposed_ms_per_step(grad_accum)
                candidates.append(((round(exposed, 6), cp, tp), par))
            cp *= 2
    candidates.sort(key=lambda item: item[0])
    return [par for _, par in candidates]


@dataclass(frozen=True)
class SyncAuditEntry:
    layer: str
    partitioned: bool
    needs_explicit_grad_sync: bool


@dataclass(frozen=True)
class SyncAuditReport:
    entries: tuple[SyncAuditEntry, ...]

    def flagged(self) -> tuple[str, ...]:
        return tuple(e.layer for e in self.entries if e.needs_explicit_grad_sync)


# Transformer-stack layer classes and whether TP partitions them. The
# unpartitioned ones live inside the sequence-parallel region, whose
# reduce-scatter already synchronizes their gradients.
_STACK_LAYERS = (
    ("qkv_linear", True),
    ("attn_out_linear", True),
    ("ffn_linear1", True),
    ("ffn_linear2", True),
    ("adaln_linear", True),
    ("layernorm", False),
)


def sync_audit(arch: ModelArch, par: ParallelConfig) -> SyncAuditReport:
    """Which parameters need explicit gradient synchronization under TP.

    Everything inside the transformer stack is either partitioned by TP
    or synchronized by SP. Modules outside it (patchify, final
    projection) are replicated with no sync path, so numerically unstable
    backward kernels make their replicas drift without an explicit
    gradient all-reduce.
    """
    if par.tp < 2:
        return SyncAuditReport(entries=())
    entries = [
        SyncAuditEntry(layer=name, partitioned=partitioned, needs_explicit_grad_sync=False)
        for name, partitioned in _STACK_LAYERS
    ]
    for layer in arch.extra_unpartitioned_layers:
        entries.append(
            SyncAuditEntry(layer=layer, partitioned=False, needs_explicit_grad_sync=True)
        )
    return SyncAuditReport(entries=tuple(entries))
