"""Shared test oracles: random timeline generation and from-scratch peak."""

from __future__ import annotations

import numpy as np

from ditplan.memory import ActivationTimeline, TimelineEvent


def make_random_timeline(rng: np.random.Generator, max_pairs: int = 100) -> ActivationTimeline:
    """A well-formed alloc/free sequence with some lifecycle-tagged frees."""
    n_pairs = int(rng.integers(1, max_pairs + 1))
    events: list[TimelineEvent] = []
    live: list[tuple[str, int, int]] = []  # (name, bytes, alloc_time)
    time = 0
    allocated = 0
    while allocated < n_pairs or live:
        do_alloc = allocated < n_pairs and (not live or rng.random() < 0.55)
        if do_alloc:
            name = f"buf{allocated}"
            size = int(rng.integers(0, 1 << 20))
            events.append(TimelineEvent(time=time, kind="alloc", name=name, bytes=size))
            live.append((name, size, time))
            allocated += 1
        else:
            idx = int(rng.integers(0, len(live)))
            name, size, alloc_time = live.pop(idx)
            tag = None
            last_consumer = None
            if rng.random() < 0.4:
                tag = "shared-storage" if rng.random() < 0.5 else "merged-redundant"
                last_consumer = int(rng.integers(alloc_time, time + 1))
            events.append(
                TimelineEvent(
                    time=time,
                    kind="free",
                    name=name,
                    bytes=size,
                    tag=tag,
                    last_consumer_time=last_consumer,
                )
            )
        # occasional time ties exercise the stable ordering
        if rng.random() < 0.8:
            time += 1
    return ActivationTimeline.build(events)


def prefix_max_peak(timeline: ActivationTimeline) -> int:
    """Oracle: re-sum every prefix from scratch and take the maximum."""
    sizes = {}
    deltas = []
    for event in timeline.events:
        if event.kind == "alloc":
            sizes[event.name] = event.bytes
            deltas.append(event.bytes)
        else:
            deltas.append(-sizes[event.name])
    arr = np.asarray(deltas, dtype=np.int64)
    peak = 0
    for i in range(len(arr)):
        peak = max(peak, int(arr[: i + 1].sum()))
    return peak
