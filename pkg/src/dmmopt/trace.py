"""Allocation traces: data model, text format, synthetic workloads.

A trace is an ordered sequence of allocation/deallocation events, one
event per line in the on-disk form::

    <object_id> <A|F> <size> <address>

`A` lines allocate `size` bytes for `object_id`; `F` lines free it
(their size field is written as 0 and resolved from the matching
allocation on parse). Addresses are carried verbatim but are purely
informational: the heap simulator lays out its own address space.
Lines starting with `#` are comments.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Iterable, Iterator, Sequence


class TraceError(ValueError):
    """Malformed trace text or an event stream violating liveness rules."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class EventKind(Enum):
    ALLOC = "A"
    FREE = "F"


@dataclass(frozen=True)
class TraceEvent:
    object_id: int
    kind: EventKind
    size: int
    address: int = 0

    def __post_init__(self):
        if self.object_id < 0:
            raise TraceError(f"negative object id {self.object_id}")
        if self.kind is EventKind.ALLOC and self.size < 1:
            raise TraceError(f"allocation of {self.size} bytes (minimum is 1)")


@dataclass(frozen=True)
class TraceStats:
    distinct_sizes: tuple[int, ...]  # sorted ascending
    max_live_bytes: int
    event_count: int
    alloc_count: int

    @property
    def min_size(self) -> int:
        return self.distinct_sizes[0]

    @property
    def max_size(self) -> int:
        return self.distinct_sizes[-1]


def _check_events(events: Sequence[TraceEvent]) -> None:
    """Validate liveness: frees match a live alloc, ids are live at most once."""
    live: dict[int, int] = {}
    for pos, ev in enumerate(events):
        if ev.kind is EventKind.ALLOC:
            if ev.object_id in live:
                raise TraceError(f"object {ev.object_id} allocated while still live", pos + 1)
            live[ev.object_id] = ev.size
        else:
            if ev.object_id not in live:
                raise TraceError(f"free of object {ev.object_id} without matching alloc", pos + 1)
            expected = live.pop(ev.object_id)
            if ev.size not in (0, expected):
                raise TraceError(
                    f"free of object {ev.object_id} carries size {ev.size}, alloc was {expected}",
                    pos + 1,
                )


def _resolve_free_sizes(events: Iterable[TraceEvent]) -> tuple[TraceEvent, ...]:
    live: dict[int, int] = {}
    out: list[TraceEvent] = []
    for ev in events:
        if ev.kind is EventKind.ALLOC:
            live[ev.object_id] = ev.size
            out.append(ev)
        else:
            size = live.pop(ev.object_id)
            out.append(TraceEvent(ev.object_id, EventKind.FREE, size, ev.address))
    return tuple(out)


@dataclass(frozen=True)
class Trace:
    """Immutable, validated event sequence.

    Construct through :meth:`from_events`, :func:`parse_trace` or
    :func:`synth_workload`; all of them enforce the liveness invariants,
    and free events carry the size resolved from their matching alloc.
    """

    events: tuple[TraceEvent, ...]

    @classmethod
    def from_events(cls, events: Iterable[TraceEvent]) -> "Trace":
        events = tuple(events)
        _check_events(events)
        return cls(_resolve_free_sizes(events))

    def __iter__(self) -> Iterator[TraceEvent]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    @cached_property
    def stats(self) -> TraceStats:
        sizes = set()
        live = 0
        max_live = 0
        allocs = 0
        for ev in self.events:
            if ev.kind is EventKind.ALLOC:
                sizes.add(ev.size)
                allocs += 1
                live += ev.size
                if live > max_live:
                    max_live = live
            else:
                live -= ev.size
        return TraceStats(
            distinct_sizes=tuple(sorted(sizes)),
            max_live_bytes=max_live,
            event_count=len(self.events),
            alloc_count=allocs,
        )


def trace_stats(trace: Trace) -> TraceStats:
    return trace.stats


def parse_trace(text: str | bytes) -> Trace:
    """Parse trace text, reporting the 1-based line number on any error."""
    if isinstance(text, bytes):
        text = text.decode("utf-8")
    events: list[TraceEvent] = []
    live: dict[int, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 4:
            raise TraceError(f"expected 4 fields, got {len(parts)}: {raw!r}", lineno)
        try:
            object_id = int(parts[0])
            size = int(parts[2])
            address = int(parts[3], 0)
        except ValueError as exc:
            raise TraceError(f"non-numeric field in {raw!r}", lineno) from exc
        if parts[1] == "A":
            if object_id in live:
                raise TraceError(f"object {object_id} allocated while still live", lineno)
            if size < 1:
                raise TraceError(f"allocation of {size} bytes (minimum is 1)", lineno)
            live[object_id] = size
            events.append(TraceEvent(object_id, EventKind.ALLOC, size, address))
        elif parts[1] == "F":
            if object_id not in live:
                raise TraceError(f"free of object {object_id} without matching alloc", lineno)
            events.append(TraceEvent(object_id, EventKind.FREE, live.pop(object_id), address))
        else:
            raise TraceError(f"unknown operation {parts[1]!r} (expected A or F)", lineno)
    return Trace(tuple(events))


def serialize_trace(trace: Trace) -> str:
    """Inverse of :func:`parse_trace`; free lines carry size 0."""
    lines = []
    for ev in trace.events:
        size = ev.size if ev.kind is EventKind.ALLOC else 0
        lines.append(f"{ev.object_id} {ev.kind.value} {size} {ev.address}")
    return "".join(line + "\n" for line in lines)


@dataclass(frozen=True)
class WorkloadSpec:
    """Parameters of a synthetic workload.

    Exactly one of `sizes` (discrete, optionally weighted) or `size_range`
    (uniform integer range) selects the size distribution. `events` counts
    allocs plus frees and must be even: every object is freed by trace end.
    """

    events: int
    live_cap: int
    sizes: tuple[int, ...] | None = None
    weights: tuple[float, ...] | None = None
    size_range: tuple[int, int] | None = None
    seed: int = 0
    alloc_ratio: float = 0.5

    def __post_init__(self):
        if (self.sizes is None) == (self.size_range is None):
            raise ValueError("exactly one of sizes/size_range must be given")
        if self.sizes is not None:
            if not self.sizes or min(self.sizes) < 1:
                raise ValueError("sizes must be non-empty and >= 1 byte")
            if self.weights is not None and len(self.weights) != len(self.sizes):
                raise ValueError("weights must match sizes in length")
        if self.size_range is not None:
            lo, hi = self.size_range
            if lo < 1 or hi < lo:
                raise ValueError(f"bad size range {self.size_range}")
        if self.events < 0 or self.events % 2:
            raise ValueError("events must be a non-negative even number")
        if self.events and self.live_cap < 1:
            raise ValueError("live_cap 0 with allocations requested is infeasible")
        if not 0.0 < self.alloc_ratio < 1.0:
            raise ValueError("alloc_ratio must be strictly between 0 and 1")


def parse_workload_spec(text: str) -> WorkloadSpec:
    """Read the key-value workload file (sizes, weights, events, live_cap, seed)."""
    fields: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TraceError(f"expected key = value, got {raw!r}", lineno)
        key, value = (part.strip() for part in line.split("=", 1))
        fields[key] = value

    def require(key: str) -> str:
        if key not in fields:
            raise TraceError(f"workload spec is missing required field {key!r}")
        return fields[key]

    sizes_text = require("sizes")
    sizes: tuple[int, ...] | None = None
    size_range: tuple[int, int] | None = None
    if ".." in sizes_text:
        lo, hi = (int(s) for s in sizes_text.split("..", 1))
        size_range = (lo, hi)
    else:
        sizes = tuple(int(s) for s in sizes_text.split(","))
    weights = None
    if "weights" in fields:
        weights = tuple(float(w) for w in fields["weights"].split(","))
    return WorkloadSpec(
        events=int(require("events")),
        live_cap=int(require("live_cap")),
        sizes=sizes,
        weights=weights,
        size_range=size_range,
        seed=int(fields.get("seed", "0")),
        alloc_ratio=float(fields.get("alloc_ratio", "0.5")),
    )


def synth_workload(spec: WorkloadSpec, seed: int | None = None) -> Trace:
    """Generate a valid trace: deterministic in (spec, seed), all objects freed.

    At every step an alloc is legal while allocations remain and the live
    set is below `live_cap`; a free is legal while anything is live. When
    both are legal the generator allocates with probability `alloc_ratio`.
    """
    rng = random.Random(spec.seed if seed is None else seed)
    n_allocs = spec.events // 2
    remaining_allocs = n_allocs
    live_ids: list[int] = []
    next_id = 1
    next_addr = 0x10000
    events: list[TraceEvent] = []
    sizes, weights, size_range = spec.sizes, spec.weights, spec.size_range

    while len(events) < spec.events:
        can_alloc = remaining_allocs > 0 and len(live_ids) < spec.live_cap
        can_free = bool(live_ids)
        if can_alloc and (not can_free or rng.random() < spec.alloc_ratio):
            if size_range is not None:
                size = rng.randint(*size_range)
            elif weights is not None:
                size = rng.choices(sizes, weights)[0]
            else:
                size = rng.choice(sizes)
            events.append(TraceEvent(next_id, EventKind.ALLOC, size, next_addr))
            live_ids.append(next_id)
            next_id += 1
            next_addr += size + 16
            remaining_allocs -= 1
        else:
            pos = rng.randrange(len(live_ids))
            # swap-pop keeps free-target choice O(1) without biasing the rng stream
            live_ids[pos], live_ids[-1] = live_ids[-1], live_ids[pos]
            events.append(TraceEvent(live_ids.pop(), EventKind.FREE, 0, 0))
    return Trace.from_events(events)
