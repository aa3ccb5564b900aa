"""A similarity-indexed reuse cache: insert, threshold lookup, eviction.

Entries are indexed by LSH signature, so a lookup only scores the buckets
the query lands in (plus optional multi-probe neighbors). The threshold
decides how similar a stored input must be before its result is returned.
"""

import numpy as np

from edgereuse import LshFamily, ReuseEntry, ReuseStore

rng = np.random.default_rng(21)
dim = 16
family = LshFamily(dim, k=8, tables=2, seed=21)


def unit(v):
    return v / np.linalg.norm(v)


store = ReuseStore(family, capacity_entries=4, capacity_bytes=1 << 20,
                   policy="lru", probe_radius=1)

base = unit(rng.standard_normal(dim))
print("== populate ==")
for i in range(3):
    key = unit(base + 0.05 * i * rng.standard_normal(dim))
    entry_id = store.insert(ReuseEntry(key, "detect", {}, key[:4], label=i))
    print(f"inserted entry {entry_id} (label {i})")

print()
print("== lookups ==")
near = unit(base + 0.02 * rng.standard_normal(dim))
far = unit(rng.standard_normal(dim))
for name, q, threshold in (("identical", base, 0.9),
                           ("near", near, 0.9),
                           ("near, strict", near, 0.9999),
                           ("unrelated", far, 0.9)):
    outcome = store.lookup(q, threshold, now=10)
    verdict = f"hit entry {outcome.entry_id} sim={outcome.similarity:.4f}" if outcome.hit else "miss"
    print(f"{name:>13} @ threshold {threshold}: {verdict} "
          f"(probed {outcome.probes_used} buckets)")

print()
print("== multi-probe raises recall ==")
for radius in (0, 1, 2):
    probing = ReuseStore(family, capacity_entries=64, capacity_bytes=1 << 20,
                         probe_radius=radius)
    keys = unit(rng.standard_normal(dim))
    probing.insert(ReuseEntry(keys, "detect", {}, keys[:4], 0))
    hits = 0
    for _ in range(200):
        q = unit(keys + 0.15 * rng.standard_normal(dim))
        if probing.lookup(q, 0.8).hit:
            hits += 1
    print(f"radius {radius}: {hits}/200 noisy queries recovered")

print()
print("== eviction under a 4-entry budget ==")
print(f"before: entries {store.entry_ids()}, {store.total_bytes} bytes")
for i in range(3, 6):
    key = unit(rng.standard_normal(dim))
    store.insert(ReuseEntry(key, "detect", {}, key[:4], label=i))
print(f"after 3 more inserts: entries {store.entry_ids()} (oldest evicted first)")
store.audit()
print("audit: index, sizes, and heap are consistent")
