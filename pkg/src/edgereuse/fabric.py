"""Node behaviors for the three layers and hash-range forwarding.

Devices try their own cache before offloading, routers try theirs before
forwarding by hash range, and servers fall back from whole-task reuse to
per-stage reuse to execution. Node operations are synchronous decisions
("state in, steps out"): they mutate store recency immediately but hand any
deferred effects (the server's entry insert, counters) back to the caller so
a clock-driven harness can apply them at completion time.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, replace
from typing import Callable, Mapping

import numpy as np

from .core import ReuseLayer, TaskEnvelope
from .hashing import FORWARDING_SPACE, LshFamily, forwarding_hash
from .services import ServiceSpec, execute_stage, label_of
from .store import ReuseEntry, ReuseStore

HASH_MAX = FORWARDING_SPACE - 1


class UnknownServiceError(KeyError):
    """The task names a service the server's catalog does not offer."""


@dataclass(frozen=True)
class HashRange:
    lo: int
    hi: int
    server_id: str

    def __post_init__(self):
        if not 0 <= self.lo <= self.hi <= HASH_MAX:
            raise ValueError(f"invalid hash range [{self.lo}, {self.hi}]")

    @property
    def width(self) -> int:
        return self.hi - self.lo + 1


class ForwardingTable:
    """Ordered contiguous hash ranges covering [0, 65535] exactly once."""

    def __init__(self, ranges, version: int = 1):
        self.ranges = tuple(ranges)
        self.version = version
        if not self.ranges:
            raise ValueError("forwarding table needs at least one range")
        if self.ranges[0].lo != 0 or self.ranges[-1].hi != HASH_MAX:
            raise ValueError(f"ranges must cover [0, {HASH_MAX}]")
        for a, b in zip(self.ranges, self.ranges[1:]):
            if b.lo != a.hi + 1:
                raise ValueError(f"gap or overlap between [{a.lo},{a.hi}] and [{b.lo},{b.hi}]")
        self._los = [r.lo for r in self.ranges]

    def server_for(self, h: int) -> str:
        if not 0 <= h <= HASH_MAX:
            raise ValueError(f"forwarding hash {h} outside [0, {HASH_MAX}]")
        return self.ranges[bisect.bisect_right(self._los, h) - 1].server_id

    def server_ids(self) -> list[str]:
        return sorted({r.server_id for r in self.ranges})


def partition_hash_space(server_ids) -> ForwardingTable:
    """Equal split of [0, 65535]: floor(65536/N) values per server in
    ascending id order, remainder folded into the last range."""
    ids = sorted(server_ids)
    if not ids:
        raise ValueError("cannot partition hash space over zero servers")
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate server ids")
    n = len(ids)
    width = FORWARDING_SPACE // n
    ranges = []
    lo = 0
    for i, sid in enumerate(ids):
        hi = HASH_MAX if i == n - 1 else lo + width - 1
        ranges.append(HashRange(lo, hi, sid))
        lo = hi + 1
    return ForwardingTable(ranges, version=1)


@dataclass(frozen=True)
class LoadReport:
    """Per-server counters over a reporting window (cumulative in a run)."""

    executed_count: Mapping[str, int]
    reused_count: Mapping[str, int]
    stored_bytes: Mapping[str, int]

    def __post_init__(self):
        for name, counts in (("executed_count", self.executed_count),
                             ("reused_count", self.reused_count),
                             ("stored_bytes", self.stored_bytes)):
            for sid, v in counts.items():
                if v < 0:
                    raise ValueError(f"{name}[{sid}] is negative")


def rebalance(table: ForwardingTable, report: LoadReport, step_fraction: float) -> ForwardingTable:
    """Move part of the most-loaded server's range to a lighter neighbor.

    Load is executed_count. If the most- and least-loaded servers' ranges
    are adjacent the hash values move between them directly; otherwise the
    donor's boundary shifts toward whichever of its adjacent neighbors is
    lighter. The donor always keeps at least one hash value, and an
    (effectively) balanced table is returned unchanged.
    """
    if not 0 < step_fraction <= 0.5:
        raise ValueError(f"step_fraction must be in (0, 0.5], got {step_fraction}")
    servers = table.server_ids()
    missing = [s for s in servers if s not in report.executed_count]
    if missing:
        raise ValueError(f"load report missing servers: {missing}")
    loads = {s: report.executed_count[s] for s in servers}
    hot = max(servers, key=lambda s: loads[s])
    cold = min(servers, key=lambda s: loads[s])
    if loads[hot] - loads[cold] <= 1:
        return table

    donor_indices = [i for i, r in enumerate(table.ranges) if r.server_id == hot]
    donor_idx = max(donor_indices, key=lambda i: (table.ranges[i].width, -table.ranges[i].lo))
    donor = table.ranges[donor_idx]

    neighbors = [i for i in (donor_idx - 1, donor_idx + 1) if 0 <= i < len(table.ranges)]
    cold_adjacent = [i for i in neighbors if table.ranges[i].server_id == cold]
    if cold_adjacent:
        recipient_idx = min(cold_adjacent)
    else:
        recipient_idx = min(
            neighbors,
            key=lambda i: (loads[table.ranges[i].server_id], table.ranges[i].lo))

    amount = max(1, math.floor(donor.width * step_fraction))
    amount = min(amount, donor.width - 1)
    if amount < 1:
        return table

    new_ranges = list(table.ranges)
    recipient = table.ranges[recipient_idx]
    if recipient_idx < donor_idx:
        new_ranges[recipient_idx] = replace(recipient, hi=recipient.hi + amount)
        new_ranges[donor_idx] = replace(donor, lo=donor.lo + amount)
    else:
        new_ranges[recipient_idx] = replace(recipient, lo=recipient.lo - amount)
        new_ranges[donor_idx] = replace(donor, hi=donor.hi - amount)
    return ForwardingTable(new_ranges, version=table.version + 1)


def _check_store(node_id: str, store: ReuseStore | None) -> None:
    if store is not None and not isinstance(store, ReuseStore):
        raise TypeError(f"node {node_id}: store must be a ReuseStore or None")


def _store_enabled(store: ReuseStore | None) -> bool:
    return store is not None and store.enabled


@dataclass
class DeviceNode:
    node_id: str
    router_id: str
    link_delay_us: int
    can_hash: bool
    hash_time_us: int
    store: ReuseStore | None = None

    def __post_init__(self):
        if self.link_delay_us <= 0:
            raise ValueError(f"device {self.node_id}: link delay must be > 0")
        if self.hash_time_us < 0:
            raise ValueError(f"device {self.node_id}: hash_time_us must be >= 0")
        _check_store(self.node_id, self.store)
        if _store_enabled(self.store) and not self.can_hash:
            raise ValueError(
                f"device {self.node_id}: a local reuse cache needs hashing capability; "
                "set can_hash or disable the store")

    @property
    def store_enabled(self) -> bool:
        return _store_enabled(self.store)


@dataclass
class RouterNode:
    node_id: str
    server_delays: dict[str, int]
    hash_time_us: int
    store: ReuseStore | None = None

    def __post_init__(self):
        if not self.server_delays:
            raise ValueError(f"router {self.node_id}: needs at least one server link")
        for sid, d in self.server_delays.items():
            if d <= 0:
                raise ValueError(f"router {self.node_id}: link delay to {sid} must be > 0")
        if self.hash_time_us < 0:
            raise ValueError(f"router {self.node_id}: hash_time_us must be >= 0")
        _check_store(self.node_id, self.store)

    @property
    def store_enabled(self) -> bool:
        return _store_enabled(self.store)


@dataclass
class ServerNode:
    node_id: str
    catalog: dict[str, ServiceSpec]
    store: ReuseStore | None = None
    executed_count: int = 0
    reused_count: int = 0
    busy_us: int = 0

    def __post_init__(self):
        _check_store(self.node_id, self.store)

    @property
    def store_enabled(self) -> bool:
        return _store_enabled(self.store)


@dataclass(frozen=True)
class CostedStep:
    """One accountable unit of node work, in processing order."""

    kind: str        # "lookup" | "hash" | "stage_lookup" | "stage_exec"
    detail: str
    cost_us: int


@dataclass(frozen=True)
class ResultPayload:
    output: np.ndarray
    label: int
    reuse_layer: ReuseLayer
    source_entry: int | None = None


@dataclass(frozen=True)
class DeviceOutcome:
    steps: tuple[CostedStep, ...]
    envelope: TaskEnvelope
    payload: ResultPayload | None = None


@dataclass(frozen=True)
class RouterOutcome:
    steps: tuple[CostedStep, ...]
    envelope: TaskEnvelope
    payload: ResultPayload | None = None
    next_server: str | None = None


@dataclass(frozen=True)
class ServerOutcome:
    steps: tuple[CostedStep, ...]
    payload: ResultPayload
    entry: ReuseEntry | None
    executed_stages: int
    reused_stages: int
    exec_busy_us: int


def _service_filter(service_id: str) -> Callable[[ReuseEntry], bool]:
    # A cached result only substitutes for the same service's execution.
    return lambda entry: entry.service_id == service_id


def device_offload(dev: DeviceNode, task: TaskEnvelope, family: LshFamily,
                   lookup_time_us: int, now: int = 0) -> DeviceOutcome:
    """First reuse layer: serve from the device cache or hand the task to
    the network with a forwarding hash attached (when the device can hash)."""
    if task.device_id != dev.node_id:
        raise ValueError(f"task for device {task.device_id} offered to {dev.node_id}")
    steps = []
    elapsed = 0
    if dev.store_enabled:
        elapsed += lookup_time_us
        found = dev.store.lookup(task.input, task.threshold, now=now + elapsed,
                                 where=_service_filter(task.service_id))
        steps.append(CostedStep("lookup", f"device:{'hit' if found.hit else 'miss'}", lookup_time_us))
        if found.hit:
            entry = dev.store.get(found.entry_id)
            payload = ResultPayload(entry.output, entry.label, ReuseLayer.DEVICE, found.entry_id)
            return DeviceOutcome(tuple(steps), task, payload)
    envelope = task
    if dev.can_hash and task.forwarding_hash is None:
        envelope = replace(task, forwarding_hash=forwarding_hash(family, task.input))
        steps.append(CostedStep("hash", "hash", dev.hash_time_us))
    return DeviceOutcome(tuple(steps), envelope)


def router_forward(router: RouterNode, task: TaskEnvelope, family: LshFamily,
                   lookup_time_us: int, table: ForwardingTable, now: int = 0) -> RouterOutcome:
    """Second reuse layer: attach the hash if the device could not, serve
    from the in-network cache, or forward to the range-owning server."""
    steps = []
    elapsed = 0
    envelope = task
    if envelope.forwarding_hash is None:
        envelope = replace(task, forwarding_hash=forwarding_hash(family, task.input))
        steps.append(CostedStep("hash", "hash", router.hash_time_us))
        elapsed += router.hash_time_us
    if router.store_enabled:
        elapsed += lookup_time_us
        found = router.store.lookup(envelope.input, envelope.threshold, now=now + elapsed,
                                    where=_service_filter(envelope.service_id))
        steps.append(CostedStep("lookup", f"network:{'hit' if found.hit else 'miss'}", lookup_time_us))
        if found.hit:
            entry = router.store.get(found.entry_id)
            payload = ResultPayload(entry.output, entry.label, ReuseLayer.NETWORK, found.entry_id)
            return RouterOutcome(tuple(steps), envelope, payload)
    next_server = table.server_for(envelope.forwarding_hash)
    if next_server not in router.server_delays:
        raise ValueError(f"router {router.node_id} has no link to server {next_server}")
    return RouterOutcome(tuple(steps), envelope, next_server=next_server)


def server_handle(server: ServerNode, task: TaskEnvelope, lookup_time_us: int,
                  now: int = 0) -> ServerOutcome:
    """Final layer: whole-task reuse, then per-stage reuse, then execution.

    Every stage is either reused (costing one lookup) or executed (costing
    its execution time); stage lookups that miss are free. When anything was
    executed and the server keeps a store, the outcome carries a fully
    populated entry for the caller to insert at completion time, so in-flight
    results are never visible early. Counter updates are deferred to the
    caller for the same reason.
    """
    svc = server.catalog.get(task.service_id)
    if svc is None:
        raise UnknownServiceError(f"server {server.node_id} offers no service {task.service_id!r}")
    steps = []
    elapsed = 0
    if server.store_enabled:
        elapsed += lookup_time_us
        found = server.store.lookup(task.input, task.threshold, now=now + elapsed,
                                    where=_service_filter(task.service_id))
        steps.append(CostedStep("lookup", f"server:{'hit' if found.hit else 'miss'}", lookup_time_us))
        if found.hit:
            entry = server.store.get(found.entry_id)
            payload = ResultPayload(entry.output, entry.label, ReuseLayer.SERVER, found.entry_id)
            return ServerOutcome(tuple(steps), payload, None, 0, 0, 0)

    current = task.input
    stage_outputs: dict[str, np.ndarray] = {}
    reused = 0
    executed = 0
    busy = 0
    for stage in svc.stages:
        reused_here = False
        if server.store_enabled:
            found = server.store.lookup_stage(stage.stage_id, task.input, task.threshold,
                                              now=now + elapsed + lookup_time_us)
            if found.hit:
                current = server.store.get(found.entry_id).stage_outputs[stage.stage_id]
                steps.append(CostedStep("stage_lookup", f"stage:{stage.stage_id}:reused", lookup_time_us))
                elapsed += lookup_time_us
                reused += 1
                reused_here = True
            else:
                steps.append(CostedStep("stage_lookup", f"stage:{stage.stage_id}:miss", 0))
        if not reused_here:
            current = execute_stage(stage, current)
            steps.append(CostedStep("stage_exec", f"stage:{stage.stage_id}", stage.exec_time_us))
            elapsed += stage.exec_time_us
            executed += 1
            busy += stage.exec_time_us
        stage_outputs[stage.stage_id] = current

    label = label_of(svc, current)
    layer = ReuseLayer.NONE if reused == 0 else ReuseLayer.PARTIAL_SERVER
    payload = ResultPayload(current, label, layer)
    entry = None
    if executed > 0 and server.store_enabled:
        entry = ReuseEntry(task.input, task.service_id, stage_outputs, current, label)
    return ServerOutcome(tuple(steps), payload, entry, executed, reused, busy)
