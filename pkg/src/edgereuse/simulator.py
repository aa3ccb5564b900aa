"""Deterministic discrete-event replay of a task trace over a topology.

Simulated time is integer microseconds; events are processed in (time, seq)
order where seq is the enqueue counter, so identical configs and seeds give
byte-identical outputs. Node decisions run synchronously when a task reaches
the node, but their deferred effects (a server's entry insert, its load
counters) apply at the simulated completion time, so an in-flight result is
never reusable before it would exist.
"""

from __future__ import annotations

import csv
import heapq
import json
from dataclasses import dataclass

import numpy as np

from .core import ReuseLayer, TaskEnvelope, TaskResult, results_equal
from .fabric import (DeviceNode, ForwardingTable, LoadReport, ResultPayload, RouterNode,
                     ServerNode, device_offload, partition_hash_space, rebalance,
                     router_forward, server_handle)
from .hashing import LshFamily
from .services import ServiceSpec, oracle
from .store import ReuseEntry, ReuseStore
from .workload import TraceRow, read_trace_csv, read_vectors_csv

EVENT_TASK_ARRIVAL = "TaskArrival"
EVENT_LINK_DELIVERY = "LinkDelivery"
EVENT_EXECUTION_DONE = "ExecutionDone"
EVENT_LOOKUP_DONE = "LookupDone"
EVENT_CONTROL_WINDOW = "ControlWindow"

_STEP_EVENT_KIND = {
    "lookup": EVENT_LOOKUP_DONE,
    "stage_lookup": EVENT_LOOKUP_DONE,
    "hash": EVENT_EXECUTION_DONE,
    "stage_exec": EVENT_EXECUTION_DONE,
}

LAYER_ORDER = [ReuseLayer.NONE, ReuseLayer.DEVICE, ReuseLayer.NETWORK,
               ReuseLayer.SERVER, ReuseLayer.PARTIAL_SERVER]

PER_TASK_HEADER = ["task_id", "device_id", "service_id", "created_at_us",
                   "completed_at_us", "completion_us", "reuse_layer", "accurate"]
EVENTS_HEADER = ["time_us", "seq", "kind", "node_id", "task_id", "detail", "cost_us"]


class SimulationError(Exception):
    """The trace or its referenced data cannot be replayed."""


@dataclass
class _Event:
    time_us: int
    seq: int
    kind: str
    node_id: str
    task_id: int | None
    detail: str
    cost_us: int
    action: str
    journey: "_Journey | None" = None

    def __lt__(self, other):
        return (self.time_us, self.seq) < (other.time_us, other.seq)


@dataclass
class _Journey:
    task_id: int
    row: TraceRow
    envelope: TaskEnvelope
    device_id: str
    router_id: str
    server_id: str | None = None
    next_server: str | None = None
    payload: ResultPayload | None = None
    outcome: object = None


@dataclass
class TaskRecord:
    task_id: int
    device_id: str
    service_id: str
    vector_id: int
    created_at: int
    completed_at: int
    reuse_layer: ReuseLayer
    accurate: bool | None

    @property
    def completion_us(self) -> int:
        return self.completed_at - self.created_at


class MetricsReport:
    """Per-task records, aggregate figures, and the optional event log."""

    def __init__(self, records: list[TaskRecord], aggregates: dict, events: list | None):
        self.records = records
        self.aggregates = aggregates
        self.events = events

    def write_per_task_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(PER_TASK_HEADER)
            for r in self.records:
                accurate = "na" if r.accurate is None else ("true" if r.accurate else "false")
                writer.writerow([r.task_id, r.device_id, r.service_id, r.created_at,
                                 r.completed_at, r.completion_us, r.reuse_layer.value, accurate])

    def write_metrics_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.aggregates, fh, indent=2, sort_keys=True)
            fh.write("\n")

    def write_events_csv(self, path) -> None:
        if self.events is None:
            raise ValueError("run() was invoked without event_log=True")
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(EVENTS_HEADER)
            for row in self.events:
                writer.writerow(row)

    def summary_line(self) -> str:
        a = self.aggregates
        mean = a["mean_completion_ms"]
        acc = a["accuracy_pct"]
        return ("tasks={} mean_completion={} reuse={}% accuracy={}".format(
            a["tasks"],
            "n/a" if mean is None else f"{mean:.2f}ms",
            f"{a['reuse_pct']:.1f}",
            "n/a" if acc is None else f"{acc:.1f}%"))


class Simulation:
    """One replay of a trace over a topology; single use, single thread."""

    def __init__(self, config, *, threshold_override: float | None = None):
        self.config = config
        self.family = LshFamily(config.dim, k=config.lsh.k, tables=config.lsh.tables,
                                seed=config.seed)
        self.catalog: dict[str, ServiceSpec] = config.service_map()
        self._build_nodes()
        self.table = partition_hash_space([s.node_id for s in self.servers.values()])
        self._load_inputs(threshold_override)
        self.heap: list[_Event] = []
        self.seq = 0
        self.clock = 0
        self.records: list[TaskRecord] = []
        self.event_rows: list[tuple] | None = None
        self.outstanding = 0
        self.window_samples: list[dict] = []
        self._oracle_cache: dict[tuple[str, int], object] = {}

    def _build_store(self, store_cfg) -> ReuseStore | None:
        if store_cfg is None:
            return None
        radius = store_cfg.probe_radius
        if radius is None:
            radius = self.config.lsh.probe_radius
        return ReuseStore(self.family, store_cfg.capacity_entries, store_cfg.capacity_bytes,
                          policy=store_cfg.policy, probe_radius=radius)

    def _build_nodes(self) -> None:
        cfg = self.config
        self.devices: dict[str, DeviceNode] = {}
        self.routers: dict[str, RouterNode] = {}
        self.servers: dict[str, ServerNode] = {}
        for d in cfg.topology.devices:
            hash_us = cfg.cost.hash_time_us if d.hash_time_us is None else d.hash_time_us
            self.devices[d.node_id] = DeviceNode(
                d.node_id, d.router, d.delay_us, d.can_hash, hash_us,
                self._build_store(d.store))
        for r in cfg.topology.routers:
            hash_us = cfg.cost.hash_time_us if r.hash_time_us is None else r.hash_time_us
            self.routers[r.node_id] = RouterNode(
                r.node_id, dict(r.server_delays), hash_us, self._build_store(r.store))
        for s in cfg.topology.servers:
            self.servers[s.node_id] = ServerNode(s.node_id, self.catalog,
                                                 self._build_store(s.store))

    def _load_inputs(self, threshold_override: float | None) -> None:
        cfg = self.config
        try:
            self.vectors = read_vectors_csv(cfg.vectors_path)
            rows = read_trace_csv(cfg.trace_path)
        except ValueError as exc:
            raise SimulationError(str(exc)) from None
        if self.vectors.size and self.vectors.shape[1] != cfg.dim:
            raise SimulationError(
                f"{cfg.vectors_path}: vectors have dim {self.vectors.shape[1]}, experiment dim is {cfg.dim}")
        norms = np.linalg.norm(self.vectors, axis=1) if self.vectors.size else np.array([])
        zero = np.nonzero(norms == 0.0)[0]
        if zero.size:
            raise SimulationError(f"{cfg.vectors_path}: vector {int(zero[0])} is all-zero")
        self.rows = []
        for i, row in enumerate(rows):
            lineno = i + 2
            if row.device_id not in self.devices:
                raise SimulationError(f"{cfg.trace_path}: row {lineno}: unknown device {row.device_id!r}")
            if row.service_id not in self.catalog:
                raise SimulationError(f"{cfg.trace_path}: row {lineno}: unknown service {row.service_id!r}")
            if not 0 <= row.vector_id < len(self.vectors):
                raise SimulationError(f"{cfg.trace_path}: row {lineno}: unknown vector {row.vector_id}")
            if row.time_us < 0:
                raise SimulationError(f"{cfg.trace_path}: row {lineno}: negative time")
            threshold = row.threshold
            if threshold_override is not None:
                threshold = threshold_override
            else:
                threshold = cfg.thresholds.get(row.service_id, threshold)
            if not 0.0 <= threshold <= 1.0:
                raise SimulationError(f"{cfg.trace_path}: row {lineno}: threshold {threshold} outside [0, 1]")
            self.rows.append((row, threshold))

    # -- event plumbing -----------------------------------------------------

    def _push(self, time_us: int, kind: str, node_id: str, task_id: int | None,
              detail: str, cost_us: int, action: str, journey=None) -> None:
        ev = _Event(time_us, self.seq, kind, node_id, task_id, detail, cost_us, action, journey)
        self.seq += 1
        heapq.heappush(self.heap, ev)

    def _schedule_steps(self, journey, node_id: str, t0: int, steps, final_action: str) -> None:
        """Audit events for each costed step; the last one carries the move."""
        t = t0
        for i, step in enumerate(steps):
            t += step.cost_us
            action = final_action if i == len(steps) - 1 else "audit"
            self._push(t, _STEP_EVENT_KIND[step.kind], node_id, journey.task_id,
                       step.detail, step.cost_us, action, journey)

    # -- node visit handlers ------------------------------------------------

    def _handle_arrival(self, ev: _Event) -> None:
        journey = ev.journey
        dev = self.devices[journey.device_id]
        outcome = device_offload(dev, journey.envelope, self.family,
                                 self.config.cost.lookup_time_us, now=ev.time_us)
        journey.envelope = outcome.envelope
        if outcome.payload is not None:
            journey.payload = outcome.payload
            self._schedule_steps(journey, dev.node_id, ev.time_us, outcome.steps, "complete_local")
        elif outcome.steps:
            self._schedule_steps(journey, dev.node_id, ev.time_us, outcome.steps, "leave_device")
        else:
            self._leave_device(journey, ev.time_us)

    def _leave_device(self, journey, now: int) -> None:
        dev = self.devices[journey.device_id]
        self._push(now + dev.link_delay_us, EVENT_LINK_DELIVERY, dev.router_id,
                   journey.task_id, f"{dev.node_id}->{dev.router_id}", dev.link_delay_us,
                   "arrive_router", journey)

    def _handle_arrive_router(self, ev: _Event) -> None:
        journey = ev.journey
        router = self.routers[journey.router_id]
        outcome = router_forward(router, journey.envelope, self.family,
                                 self.config.cost.lookup_time_us, self.table, now=ev.time_us)
        journey.envelope = outcome.envelope
        if outcome.payload is not None:
            journey.payload = outcome.payload
            self._schedule_steps(journey, router.node_id, ev.time_us, outcome.steps,
                                 "respond_from_router")
        elif outcome.steps:
            journey.next_server = outcome.next_server
            self._schedule_steps(journey, router.node_id, ev.time_us, outcome.steps, "leave_router")
        else:
            journey.next_server = outcome.next_server
            self._leave_router(journey, ev.time_us)

    def _leave_router(self, journey, now: int) -> None:
        router = self.routers[journey.router_id]
        sid = journey.next_server
        delay = router.server_delays[sid]
        journey.server_id = sid
        self._push(now + delay, EVENT_LINK_DELIVERY, sid, journey.task_id,
                   f"{router.node_id}->{sid}", delay, "arrive_server", journey)

    def _handle_arrive_server(self, ev: _Event) -> None:
        journey = ev.journey
        server = self.servers[journey.server_id]
        outcome = server_handle(server, journey.envelope,
                                self.config.cost.lookup_time_us, now=ev.time_us)
        journey.outcome = outcome
        journey.payload = outcome.payload
        self._schedule_steps(journey, server.node_id, ev.time_us, outcome.steps, "server_finalize")

    def _handle_server_finalize(self, ev: _Event) -> None:
        journey = ev.journey
        server = self.servers[journey.server_id]
        outcome = journey.outcome
        if outcome.entry is not None:
            outcome.entry.insert_time = ev.time_us
            outcome.entry.last_access = ev.time_us
            server.store.insert(outcome.entry)
        if outcome.executed_stages > 0:
            server.executed_count += 1
            server.busy_us += outcome.exec_busy_us
        if outcome.payload.reuse_layer in (ReuseLayer.SERVER, ReuseLayer.PARTIAL_SERVER):
            server.reused_count += 1
        router = self.routers[journey.router_id]
        delay = router.server_delays[server.node_id]
        self._push(ev.time_us + delay, EVENT_LINK_DELIVERY, router.node_id, journey.task_id,
                   f"{server.node_id}->{router.node_id}", delay, "respond_at_router", journey)

    def _response_entry(self, journey) -> ReuseEntry:
        p = journey.payload
        return ReuseEntry(journey.envelope.input, journey.envelope.service_id, {},
                          p.output, p.label)

    def _handle_respond_at_router(self, ev: _Event) -> None:
        journey = ev.journey
        router = self.routers[journey.router_id]
        if router.store_enabled:
            entry = self._response_entry(journey)
            entry.insert_time = entry.last_access = ev.time_us
            router.store.insert(entry)
        self._forward_response_to_device(journey, ev.time_us)

    def _handle_respond_from_router(self, ev: _Event) -> None:
        self._forward_response_to_device(ev.journey, ev.time_us)

    def _forward_response_to_device(self, journey, now: int) -> None:
        dev = self.devices[journey.device_id]
        self._push(now + dev.link_delay_us, EVENT_LINK_DELIVERY, dev.node_id,
                   journey.task_id, f"{dev.router_id}->{dev.node_id}", dev.link_delay_us,
                   "respond_at_device", journey)

    def _handle_respond_at_device(self, ev: _Event) -> None:
        journey = ev.journey
        dev = self.devices[journey.device_id]
        if dev.store_enabled:
            entry = self._response_entry(journey)
            entry.insert_time = entry.last_access = ev.time_us
            dev.store.insert(entry)
        self._complete(journey, ev.time_us)

    def _complete(self, journey, now: int) -> None:
        payload = journey.payload
        result = TaskResult(journey.task_id, journey.envelope.service_id, payload.output,
                            payload.label, payload.reuse_layer, completed_at=now)
        accurate = None
        if payload.reuse_layer is not ReuseLayer.NONE:
            truth = self._oracle_for(journey)
            truth_result = TaskResult(journey.task_id, journey.envelope.service_id,
                                      truth.output, truth.label, ReuseLayer.NONE,
                                      completed_at=now)
            accurate = results_equal(truth_result, result)
        self.records.append(TaskRecord(
            journey.task_id, journey.device_id, journey.envelope.service_id,
            journey.row.vector_id, journey.envelope.created_at, now,
            payload.reuse_layer, accurate))
        self.outstanding -= 1

    def _oracle_for(self, journey):
        key = (journey.envelope.service_id, journey.row.vector_id)
        cached = self._oracle_cache.get(key)
        if cached is None:
            cached = oracle(self.catalog[journey.envelope.service_id], journey.envelope.input)
            self._oracle_cache[key] = cached
        return cached

    # -- control plane ------------------------------------------------------

    def _handle_control_window(self, ev: _Event) -> None:
        self._sample_window(ev.time_us)
        if self.config.control.rebalance and len(self.servers) >= 2:
            report = self._load_report()
            new_table = rebalance(self.table, report, self.config.control.step_fraction)
            if new_table.version != self.table.version:
                self.table = new_table
        if self.outstanding > 0:
            self._push(ev.time_us + self.config.control.window_us, EVENT_CONTROL_WINDOW,
                       "controller", None, f"window:v{self.table.version}", 0, "control")

    def _load_report(self) -> LoadReport:
        return LoadReport(
            executed_count={s.node_id: s.executed_count for s in self.servers.values()},
            reused_count={s.node_id: s.reused_count for s in self.servers.values()},
            stored_bytes={s.node_id: (s.store.total_bytes if s.store else 0)
                          for s in self.servers.values()})

    def _sample_window(self, time_us: int) -> None:
        self.window_samples.append({
            "time_us": time_us,
            "table_version": self.table.version,
            "servers": {s.node_id: {
                "executed_count": s.executed_count,
                "reused_count": s.reused_count,
                "stored_bytes": s.store.total_bytes if s.store else 0,
                "busy_us": s.busy_us,
            } for s in sorted(self.servers.values(), key=lambda n: n.node_id)},
        })

    # -- main loop ----------------------------------------------------------

    def run(self, *, event_log: bool = False) -> MetricsReport:
        if event_log:
            self.event_rows = []
        self.outstanding = len(self.rows)
        for task_id, (row, threshold) in enumerate(self.rows):
            envelope = TaskEnvelope(task_id, row.device_id, row.service_id,
                                    self.vectors[row.vector_id], threshold,
                                    created_at=row.time_us)
            journey = _Journey(task_id, row, envelope, row.device_id,
                               self.devices[row.device_id].router_id)
            self._push(row.time_us, EVENT_TASK_ARRIVAL, row.device_id, task_id,
                       "", 0, "arrival", journey)
        if self.rows and self.config.control.window_us > 0:
            self._push(self.config.control.window_us, EVENT_CONTROL_WINDOW,
                       "controller", None, "window:v1", 0, "control")

        handlers = {
            "arrival": self._handle_arrival,
            "leave_device": lambda ev: self._leave_device(ev.journey, ev.time_us),
            "arrive_router": self._handle_arrive_router,
            "leave_router": lambda ev: self._leave_router(ev.journey, ev.time_us),
            "arrive_server": self._handle_arrive_server,
            "server_finalize": self._handle_server_finalize,
            "respond_at_router": self._handle_respond_at_router,
            "respond_from_router": self._handle_respond_from_router,
            "respond_at_device": self._handle_respond_at_device,
            "complete_local": lambda ev: self._complete(ev.journey, ev.time_us),
            "control": self._handle_control_window,
            "audit": lambda ev: None,
        }
        while self.heap:
            ev = heapq.heappop(self.heap)
            if ev.time_us < self.clock:
                raise SimulationError("event queue violated clock monotonicity")
            self.clock = ev.time_us
            if self.event_rows is not None:
                self.event_rows.append((ev.time_us, ev.seq, ev.kind, ev.node_id,
                                        "" if ev.task_id is None else ev.task_id,
                                        ev.detail, ev.cost_us))
            handlers[ev.action](ev)

        if self.outstanding != 0:
            raise SimulationError(f"{self.outstanding} tasks never completed")
        self.records.sort(key=lambda r: r.task_id)
        self._sample_window(self.clock)
        return MetricsReport(self.records, self._aggregate(), self.event_rows)

    def _aggregate(self) -> dict:
        records = self.records
        n = len(records)
        makespan = self.clock
        per_layer = {}
        for layer in LAYER_ORDER:
            group = [r.completion_us for r in records if r.reuse_layer is layer]
            per_layer[layer.value] = {
                "count": len(group),
                "mean_completion_ms": (sum(group) / len(group) / 1000.0) if group else None,
            }
        reused = [r for r in records if r.reuse_layer is not ReuseLayer.NONE]
        judged = [r for r in reused if r.accurate is not None]
        servers = {}
        for s in sorted(self.servers.values(), key=lambda x: x.node_id):
            servers[s.node_id] = {
                "executed_count": s.executed_count,
                "reused_count": s.reused_count,
                "stored_bytes": s.store.total_bytes if s.store else 0,
                "busy_us": s.busy_us,
                "busy_fraction": (s.busy_us / makespan) if makespan else 0.0,
            }
        total_busy = sum(s.busy_us for s in self.servers.values())
        return {
            "tasks": n,
            "makespan_us": makespan,
            "mean_completion_ms": (sum(r.completion_us for r in records) / n / 1000.0) if n else None,
            "reuse_pct": (100.0 * len(reused) / n) if n else 0.0,
            "accuracy_pct": (100.0 * sum(1 for r in judged if r.accurate) / len(judged)) if judged else None,
            "per_layer": per_layer,
            "servers": servers,
            "busy_fraction": (total_busy / (len(self.servers) * makespan)) if makespan else 0.0,
            "table_version": self.table.version,
            "windows": self.window_samples,
        }


def run_experiment(config, *, event_log: bool = False,
                   threshold_override: float | None = None) -> MetricsReport:
    """Build a fresh simulation for the config and replay it once."""
    return Simulation(config, threshold_override=threshold_override).run(event_log=event_log)


def sweep_thresholds(config, thresholds) -> list[dict]:
    """One full run per threshold over the same trace and seed.

    Returns one row per threshold: the threshold, reuse percentage,
    accuracy percentage (None when nothing was reused), and the full report.
    """
    values = [float(t) for t in thresholds]
    if not values:
        raise ValueError("no thresholds given")
    if any(not 0.0 <= t <= 1.0 for t in values):
        raise ValueError(f"thresholds must lie in [0, 1]: {values}")
    if values != sorted(values):
        raise ValueError(f"thresholds must be sorted ascending: {values}")
    out = []
    for t in values:
        report = run_experiment(config, threshold_override=t)
        out.append({
            "threshold": t,
            "reuse_pct": report.aggregates["reuse_pct"],
            "accuracy_pct": report.aggregates["accuracy_pct"],
            "report": report,
        })
    return out


def write_sweep_csv(path, rows) -> None:
    """Threshold sweep table: one data row per threshold."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["threshold", "reuse_pct", "accuracy_pct"])
        for row in rows:
            acc = row["accuracy_pct"]
            writer.writerow([repr(float(row["threshold"])),
                             f"{row['reuse_pct']:.4f}",
                             "" if acc is None else f"{acc:.4f}"])
