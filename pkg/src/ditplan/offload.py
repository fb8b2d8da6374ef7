"""Optimizer-state and activation offloading plans, and strategy balancing.

Offloading trades PCIe traffic for device memory. Transfers only pay off
when they hide under computation: optimizer shards ride the first forward
and last backward micro-steps, per-block activations ride the adjacent
block's compute. Concurrent devices in one NUMA domain share host DDR
write bandwidth, capping the per-device PCIe rate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

from .config import ClusterSpec
from .errors import ConfigError
from .memory import MIB, ChunkSpec, ChunkTable, chunk_retained_bytes
from .recompute import RecomputePlan, plan_recompute

# Tensors below this size are not worth an offload round trip.
DEFAULT_OFFLOAD_THRESHOLD_BYTES = 64 * MIB


def plan_optimizer_offload(
    opt_bytes_per_rank: float,
    pcie_bw: float,
    first_fwd_window_ms: float,
    last_bwd_window_ms: float,
) -> tuple[float, float]:
    """Optimizer-state staging cost per step in ms: (transfer, exposed).

    States move device-to-host after the update and back before the next
    one; the D2H leg hides under the first forward micro-step, the H2D
    leg under the last backward micro-step.
    """
    if first_fwd_window_ms < 0 or last_bwd_window_ms < 0:
        raise ConfigError("overlap windows must be >= 0", "offload.windows")
    if opt_bytes_per_rank <= 0:
        return (0.0, 0.0)
    leg_ms = opt_bytes_per_rank / pcie_bw * 1e3
    exposed = max(0.0, leg_ms - first_fwd_window_ms) + max(0.0, leg_ms - last_bwd_window_ms)
    return (2 * leg_ms, exposed)


def effective_pcie_bw(cluster: ClusterSpec, concurrent_devices: int) -> float:
    """Per-device transfer bandwidth once NUMA-domain host writes saturate."""
    if concurrent_devices < 1:
        raise ConfigError("concurrent_devices must be >= 1", "offload.concurrent_devices")
    sharing = min(concurrent_devices, cluster.devices_per_numa)
    return min(cluster.pcie_bw_per_device, cluster.host_write_bw_per_numa / sharing)


@dataclass(frozen=True)
class ActivationOffloadPlan:
    selected: tuple[str, ...]
    bytes_per_layer: int
    transfer_ms_per_layer: float
    exposed_ms_per_layer_per_direction: float
    deficit_covered: bool

    @property
    def exposed_ms_per_layer(self) -> float:
        return 2 * self.exposed_ms_per_layer_per_direction


def plan_activation_offload(
    chunks: ChunkTable | Sequence[ChunkSpec],
    block_compute_ms: float,
    effective_bw: float,
    memory_deficit_bytes: int,
    B: int = 1,
    S: int = 115_200,
    H: int = 3072,
    A: int = 24,
    tp: int = 8,
    exclude: Sequence[str] = (),
    threshold_bytes: int = DEFAULT_OFFLOAD_THRESHOLD_BYTES,
) -> ActivationOffloadPlan:
    """Stage the largest offload-eligible activations until the deficit is covered.

    ``exclude`` holds chunks already recomputed (the two sets must stay
    disjoint). Each direction's transfer overlaps one adjacent block's
    compute; the shortfall is exposed, per layer, per direction.
    """
    chunk_list = chunks.chunks if isinstance(chunks, ChunkTable) else tuple(chunks)
    excluded = set(exclude)
    eligible = [
        c
        for c in chunk_list
        if c.offloadable
        and c.name not in excluded
        and chunk_retained_bytes(c, B, S, H, A, tp) >= threshold_bytes
    ]
    eligible.sort(key=lambda c: (-chunk_retained_bytes(c, B, S, H, A, tp), c.name))
    selected: list[ChunkSpec] = []
    covered = 0
    for chunk in eligible:
        if covered >= memory_deficit_bytes:
            break
        selected.append(chunk)
        covered += chunk_retained_bytes(chunk, B, S, H, A, tp)
    transfer_ms = covered / effective_bw * 1e3 if covered else 0.0
    return ActivationOffloadPlan(
        selected=tuple(sorted(c.name for c in selected)),
        bytes_per_layer=covered,
        transfer_ms_per_layer=transfer_ms,
        exposed_ms_per_layer_per_direction=max(0.0, transfer_ms - block_compute_ms),
        deficit_covered=covered >= memory_deficit_bytes,
    )


@dataclass(frozen=True)
class OffloadPlan:
    """Combined optimizer + activation offload outcome for one layout."""

    optimizer_offloaded: bool
    optimizer_transfer_ms: float
    optimizer_exposed_ms: float
    activation_offload_set: tuple[str, ...]
    activation_bytes_per_layer: int
    activation_transfer_ms_per_layer: float
    activation_exposed_ms_per_microstep: float
    effective_pcie_bw: float


NO_OFFLOAD = OffloadPlan(
    optimizer_offloaded=False,
    optimizer_transfer_ms=0.0,
    optimizer_exposed_ms=0.0,
    activation_offload_set=(),
    activation_bytes_per_layer=0,
    activation_transfer_ms_per_layer=0.0,
    activation_exposed_ms_per_microstep=0.0,
    effective_pcie_bw=0.0,
)


@dataclass(frozen=True)
class StrategyPlan:
    """Result of balancing offload, recomputation and context parallelism."""

    cp: int
    recompute: RecomputePlan
    offload: ActivationOffloadPlan
    feasible: bool
    diagnostic: str | None = None

    @property
    def bytes_saved_per_layer(self) -> int:
        return self.recompute.bytes_saved_per_layer + self.offload.bytes_per_layer


def balance_strategies(
    deficit_for_cp: Callable[[int], int],
    chunks: ChunkTable | Sequence[ChunkSpec],
    cluster: ClusterSpec,
    cp_candidates: Sequence[int],
    block_compute_ms: float,
    num_layers: int,
    B: int = 1,
    S: int = 115_200,
    H: int = 3072,
    A: int = 24,
    tp: int = 8,
    threshold_bytes: int = DEFAULT_OFFLOAD_THRESHOLD_BYTES,
) -> StrategyPlan:
    """Cover a per-layer memory deficit with the cheapest mix of techniques.

    In order: (1) offload whatever transfers hide fully under block
    compute, compute-expensive attention chunks first so their costly
    recomputation is avoided; (2) recompute the rest of the deficit;
    (3) only if that still falls short, step context parallelism up to
    the next gated degree and retry. ``deficit_for_cp`` maps a CP degree
    to the remaining per-layer deficit at that degree; ``S`` is the full
    sequence (sharded by cp internally).
    """
    chunk_list = chunks.chunks if isinstance(chunks, ChunkTable) else tuple(chunks)
    if not cp_candidates:
        raise ConfigError("no context-parallel candidates", "parallel.cp")
    bw = effective_pcie_bw(cluster, cluster.devices_per_numa)
    last_diag = None
    for cp in sorted(cp_candidates):
        deficit = deficit_for_cp(cp)
        s_shard = S // cp
        if deficit <= 0:
            return StrategyPlan(
                cp=cp,
                recompute=plan_recompute(chunk_list, 0, B, s_shard, H, A, tp),
                offload=plan_activation_offload(
                    chunk_list, block_compute_ms, bw, 0, B, s_shard, H, A, tp
                ),
                feasible=True,
            )

        # (1) offload only what hides completely: attention-class first,
        # then by bytes, stopping at the deficit.
        sized = [
            (c, chunk_retained_bytes(c, B, s_shard, H, A, tp))
            for c in chunk_list
            if c.offloadable
        ]
        overlappable = [
            (c, size)
            for c, size in sized
            if size >= threshold_bytes and size / bw * 1e3 <= block_compute_ms
        ]
        overlappable.sort(key=lambda item: (not item[0].is_attention_class, -item[1], item[0].name))
        offload_sel: list[ChunkSpec] = []
        offload_bytes = 0
        for chunk, size in overlappable:
            if offload_bytes >= deficit:
                break
            offload_sel.append(chunk)
            offload_bytes += size

        # (2) recompute whatever deficit remains.
        remaining = max(0, deficit - offload_bytes)
        recompute = plan_recompute(
            chunk_list,
            remaining,
            B,
            s_shard,
            H,
            A,
            tp,
            exclude=[c.name for c in offload_sel],
        )
        transfer_ms = offload_bytes / bw * 1e3 if offload_bytes else 0.0
        offload = ActivationOffloadPlan(
            selected=tuple(sorted(c.name for c in offload_sel)),
            bytes_per_layer=offload_bytes,
            transfer_ms_per_layer=transfer_ms,
            exposed_ms_per_layer_per_direction=max(0.0, transfer_ms - block_compute_ms),
            deficit_covered=offload_bytes + recompute.bytes_saved_per_layer >= deficit,
        )
        host_needed = offload_bytes * num_layers
        if host_needed > cluster.host_mem:
            last_diag = (
                f"cp={cp}: offloaded activations ({host_needed / 1e9:.1f} GB) "
                f"exceed host memory ({cluster.host_mem / 1e9:.1f} GB)"
            )
            continue
        if recompute.feasible and offload.deficit_covered:
            return StrategyPlan(cp=cp, recompute=recompute, offload=offload, feasible=True)
        last_diag = (
            f"cp={cp}: deficit {deficit / MIB:.0f} MiB/layer exceeds offloadable "
            f"+ recomputable savings {(offload_bytes + recompute.bytes_saved_per_layer) / MIB:.0f} MiB/layer"
        )
    return StrategyPlan(
        cp=max(cp_candidates),
        recompute=plan_recompute(chunk_list, 0, B, S, H, A, tp),
        offload=plan_activation_offload(chunk_list, block_compute_ms, bw, 0, B, S, H, A, tp),
        feasible=False,
        diagnostic=last_diag or "no feasible strategy combination",
    )
