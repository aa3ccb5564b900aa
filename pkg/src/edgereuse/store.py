"""Similarity-indexed reuse cache shared by devices, routers, and servers.

Entries are indexed under their LSH signature in every table; lookup gathers
the buckets along the multi-probe sequence, scores candidates by exact cosine
similarity, and accepts the best one only if it clears the caller's
threshold. Eviction is LRU by default, LFU optionally, both pluggable.
"""

from __future__ import annotations

import csv
import heapq
from dataclasses import dataclass, field

import numpy as np

from .core import SELF_SIMILARITY_SNAP, as_feature_vector, check_threshold
from .hashing import LshFamily, probe_sequence

BYTES_PER_ELEMENT = 8
VECTOR_OVERHEAD_BYTES = 64


def vector_bytes(v) -> int:
    """Accounted storage cost of one vector: 8 bytes per element plus a
    64-byte fixed overhead for metadata and indexing."""
    return BYTES_PER_ELEMENT * len(v) + VECTOR_OVERHEAD_BYTES


class OversizedEntryError(ValueError):
    """The entry can never fit this store; nothing was evicted for it."""


@dataclass
class ReuseEntry:
    """A stored task: its input vector, per-stage outputs, and final result.

    stage_outputs carries every stage of the producing pipeline (keyed by
    globally unique stage id) when the entry comes from an execution; entries
    cached from response traffic only hold the final result and leave it
    empty.
    """

    key_input: np.ndarray
    service_id: str
    stage_outputs: dict[str, np.ndarray]
    output: np.ndarray
    label: int
    insert_time: int = 0
    last_access: int = 0
    hit_count: int = 0
    size_bytes: int = field(init=False)

    def __post_init__(self):
        self.key_input = as_feature_vector(self.key_input)
        self.stage_outputs = {sid: as_feature_vector(v) for sid, v in self.stage_outputs.items()}
        self.output = as_feature_vector(self.output)
        size = vector_bytes(self.key_input) + vector_bytes(self.output)
        for v in self.stage_outputs.values():
            size += vector_bytes(v)
        self.size_bytes = size
        if self.last_access < self.insert_time:
            self.last_access = self.insert_time


@dataclass(frozen=True)
class LookupOutcome:
    hit: bool
    entry_id: int | None
    similarity: float | None
    probes_used: int


class EvictionPolicy:
    """Orders entries for eviction; the smallest key goes first."""

    name = "base"

    def key(self, entry: ReuseEntry) -> tuple:
        raise NotImplementedError


class LruPolicy(EvictionPolicy):
    name = "lru"

    def key(self, entry):
        return (entry.last_access,)


class LfuPolicy(EvictionPolicy):
    name = "lfu"

    def key(self, entry):
        return (entry.hit_count, entry.last_access)


_POLICIES = {"lru": LruPolicy, "lfu": LfuPolicy}


def _resolve_policy(policy) -> EvictionPolicy:
    if isinstance(policy, EvictionPolicy):
        return policy
    try:
        return _POLICIES[str(policy).lower()]()
    except KeyError:
        raise ValueError(f"unknown eviction policy {policy!r}; expected one of {sorted(_POLICIES)}")


class ReuseStore:
    """Multi-table LSH index over ReuseEntry with capacity enforcement.

    Single-writer, multi-reader contract: concurrent lookups are safe with
    each other only if nothing mutates; insert and evict need exclusive
    access. The simulator drives it single-threaded.
    """

    def __init__(self, family: LshFamily, capacity_entries: int, capacity_bytes: int,
                 policy="lru", probe_radius: int = 0):
        if capacity_entries < 0 or capacity_bytes < 0:
            raise ValueError("capacities must be non-negative")
        if not 0 <= probe_radius <= family.k:
            raise ValueError(f"probe_radius must be in [0, {family.k}], got {probe_radius}")
        self.family = family
        self.capacity_entries = capacity_entries
        self.capacity_bytes = capacity_bytes
        self.policy = _resolve_policy(policy)
        self.probe_radius = probe_radius
        self._entries: dict[int, ReuseEntry] = {}
        self._tables: list[dict[int, list[int]]] = [{} for _ in range(family.tables)]
        self._sig_bits: dict[int, tuple[int, ...]] = {}
        self._key_norms: dict[int, float] = {}
        self._heap: list[tuple[tuple, int]] = []
        self._next_id = 0
        self._total_bytes = 0

    @property
    def enabled(self) -> bool:
        return self.capacity_entries > 0 and self.capacity_bytes > 0

    def __len__(self) -> int:
        return len(self._entries)

    @property
    def total_bytes(self) -> int:
        return self._total_bytes

    def get(self, entry_id: int) -> ReuseEntry:
        return self._entries[entry_id]

    def entry_ids(self) -> list[int]:
        return sorted(self._entries)

    def _touch(self, entry_id: int, entry: ReuseEntry) -> None:
        heapq.heappush(self._heap, (self.policy.key(entry), entry_id))

    def insert(self, entry: ReuseEntry) -> int:
        """Index the entry under every table, evicting first if needed."""
        if entry.key_input.size != self.family.dim:
            raise ValueError(f"entry dim {entry.key_input.size} != store dim {self.family.dim}")
        if self.capacity_entries < 1 or entry.size_bytes > self.capacity_bytes:
            raise OversizedEntryError(
                f"entry of {entry.size_bytes} bytes can never fit store capacity "
                f"({self.capacity_entries} entries, {self.capacity_bytes} bytes)")
        self.evict(needed_bytes=entry.size_bytes, needed_entries=1)
        entry_id = self._next_id
        self._next_id += 1
        bits = tuple(self.family.signature_bits(entry.key_input, t) for t in range(self.family.tables))
        for t, b in enumerate(bits):
            self._tables[t].setdefault(b, []).append(entry_id)
        self._entries[entry_id] = entry
        self._sig_bits[entry_id] = bits
        self._key_norms[entry_id] = float(np.linalg.norm(entry.key_input))
        self._total_bytes += entry.size_bytes
        self._touch(entry_id, entry)
        return entry_id

    def _candidates(self, query: np.ndarray, where) -> tuple[list[int], int]:
        ids: set[int] = set()
        probes_per_table = 0
        for t in range(self.family.tables):
            sig = self.family.signature(query, t)
            probes = probe_sequence(sig, self.probe_radius)
            probes_per_table = len(probes)
            table = self._tables[t]
            for p in probes:
                bucket = table.get(p.bits)
                if bucket:
                    ids.update(bucket)
        ordered = sorted(ids)
        if where is not None:
            ordered = [i for i in ordered if where(self._entries[i])]
        return ordered, self.family.tables * probes_per_table

    def lookup(self, query, threshold, *, now: int = 0, where=None) -> LookupOutcome:
        """Best stored neighbor of the query, gated by the threshold.

        Candidates come from the union of probed buckets across all tables;
        ties on similarity go to the smallest entry id. A hit updates the
        entry's recency and hit count.
        """
        q = as_feature_vector(query, self.family.dim)
        t = check_threshold(threshold)
        qn = float(np.linalg.norm(q))
        if qn == 0.0:
            raise ValueError("cannot look up an all-zero vector")
        ids, probes_used = self._candidates(q, where)
        if not ids:
            return LookupOutcome(False, None, None, probes_used)
        keys = np.stack([self._entries[i].key_input for i in ids])
        norms = np.array([self._key_norms[i] for i in ids])
        sims = (keys @ q) / (norms * qn)
        sims[sims > 1.0 - SELF_SIMILARITY_SNAP] = 1.0
        np.clip(sims, 0.0, 1.0, out=sims)
        best = int(np.argmax(sims))
        best_id = ids[best]
        best_sim = float(sims[best])
        if best_sim < t:
            return LookupOutcome(False, None, None, probes_used)
        entry = self._entries[best_id]
        entry.last_access = max(entry.last_access, now)
        entry.hit_count += 1
        self._touch(best_id, entry)
        return LookupOutcome(True, best_id, best_sim, probes_used)

    def lookup_stage(self, stage_id: str, query, threshold, *, now: int = 0) -> LookupOutcome:
        """As lookup, restricted to entries that recorded the given stage."""
        return self.lookup(query, threshold, now=now,
                           where=lambda e: stage_id in e.stage_outputs)

    def evict(self, needed_bytes: int = 0, needed_entries: int = 0) -> list[int]:
        """Remove entries in policy order until both headrooms are free."""
        evicted = []
        while (self.capacity_bytes - self._total_bytes < needed_bytes
               or self.capacity_entries - len(self._entries) < needed_entries):
            victim = self._pop_victim()
            if victim is None:
                break
            self._remove(victim)
            evicted.append(victim)
        return evicted

    def _pop_victim(self) -> int | None:
        # Lazy-deletion heap: stale keys (access happened after the push)
        # are skipped; the fresher key is already in the heap.
        while self._heap:
            key, entry_id = heapq.heappop(self._heap)
            entry = self._entries.get(entry_id)
            if entry is None:
                continue
            if self.policy.key(entry) != key:
                continue
            return entry_id
        return None

    def _remove(self, entry_id: int) -> None:
        entry = self._entries.pop(entry_id)
        for t, b in enumerate(self._sig_bits.pop(entry_id)):
            bucket = self._tables[t][b]
            bucket.remove(entry_id)
            if not bucket:
                del self._tables[t][b]
        del self._key_norms[entry_id]
        self._total_bytes -= entry.size_bytes

    def audit(self) -> None:
        """Walk every invariant; raises AssertionError on violation."""
        assert len(self._entries) <= self.capacity_entries, "entry capacity exceeded"
        assert self._total_bytes <= self.capacity_bytes, "byte capacity exceeded"
        assert self._total_bytes == sum(e.size_bytes for e in self._entries.values())
        for entry_id in self._entries:
            bits = self._sig_bits[entry_id]
            assert len(bits) == self.family.tables
            for t, b in enumerate(bits):
                assert self._tables[t].get(b, []).count(entry_id) == 1, \
                    f"entry {entry_id} not indexed exactly once in table {t}"
        live = sum(len(bucket) for table in self._tables for bucket in table.values())
        assert live == len(self._entries) * self.family.tables, "dangling bucket references"

    def write_snapshot(self, path) -> None:
        """One CSV row per entry: id, per-table signature bits, size, hits."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["entry_id"]
                            + [f"bits_{t}" for t in range(self.family.tables)]
                            + ["size_bytes", "hit_count"])
            for entry_id in sorted(self._entries):
                entry = self._entries[entry_id]
                writer.writerow([entry_id, *self._sig_bits[entry_id],
                                 entry.size_bytes, entry.hit_count])
