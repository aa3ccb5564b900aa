"""Sign-random-projection LSH and feature hashing.

An LshFamily fingerprints feature vectors: vectors at a small angle agree on
most signature bits (per-bit agreement probability is 1 - angle/pi). The
table-0 signature with k=16 doubles as the forwarding hash that routers
partition among servers, so its value range is [0, 65535].
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass

import numpy as np

from .core import as_feature_vector

FORWARDING_BITS = 16
FORWARDING_SPACE = 1 << FORWARDING_BITS

_MAX_SEED = 1 << 64


@dataclass(frozen=True)
class LshSignature:
    """One table's k-bit fingerprint of a vector."""

    bits: int
    table_index: int
    k: int

    def __post_init__(self):
        if not 1 <= self.k <= 32:
            raise ValueError(f"signature width must be in [1, 32], got {self.k}")
        if not 0 <= self.bits < (1 << self.k):
            raise ValueError(f"signature bits {self.bits} out of range for k={self.k}")
        if self.table_index < 0:
            raise ValueError(f"negative table index: {self.table_index}")


class LshFamily:
    """A seeded family of `tables` sign-random-projection signatures.

    Hyperplanes are normalized Gaussian rows derived purely from the seed, so
    equal (seed, dim, k, tables) always produce identical fingerprints. Bit j
    of a signature is 1 iff the query has a strictly positive dot product
    with hyperplane j; an exact zero maps to 0.
    """

    def __init__(self, dim: int, k: int = 16, tables: int = 4, seed: int = 0):
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        if not 1 <= k <= 32:
            raise ValueError(f"k must be in [1, 32], got {k}")
        if tables < 1:
            raise ValueError(f"tables must be >= 1, got {tables}")
        if not 0 <= seed < _MAX_SEED:
            raise ValueError("seed must be a 64-bit non-negative integer")
        self.dim = dim
        self.k = k
        self.tables = tables
        self.seed = seed
        rng = np.random.default_rng(seed)
        planes = rng.standard_normal((tables, k, dim))
        planes /= np.linalg.norm(planes, axis=2, keepdims=True)
        planes.setflags(write=False)
        self.hyperplanes = planes
        self._bit_weights = (1 << np.arange(k, dtype=np.uint64))

    def _check_table(self, table: int) -> None:
        if not 0 <= table < self.tables:
            raise ValueError(f"table index {table} out of range [0, {self.tables})")

    def signature_bits(self, v, table: int = 0) -> int:
        """The k-bit integer fingerprint of one vector under one table."""
        self._check_table(table)
        v = as_feature_vector(v, self.dim)
        if not np.any(v):
            raise ValueError("cannot fingerprint an all-zero vector")
        dots = self.hyperplanes[table] @ v
        return int(((dots > 0).astype(np.uint64) * self._bit_weights).sum())

    def signature(self, v, table: int = 0) -> LshSignature:
        return LshSignature(self.signature_bits(v, table), table, self.k)

    def batch_signature_bits(self, vectors: np.ndarray, table: int = 0) -> np.ndarray:
        """Fingerprints for a (n, dim) matrix of row vectors, as uint64."""
        self._check_table(table)
        m = np.asarray(vectors, dtype=np.float64)
        if m.ndim != 2 or m.shape[1] != self.dim:
            raise ValueError(f"expected shape (n, {self.dim}), got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise ValueError("vectors contain NaN or Inf")
        if np.any(~m.any(axis=1)):
            raise ValueError("cannot fingerprint an all-zero vector")
        dots = m @ self.hyperplanes[table].T
        return ((dots > 0).astype(np.uint64) * self._bit_weights).sum(axis=1)


def forwarding_hash(family: LshFamily, v) -> int:
    """Canonical 16-bit routing hash: the table-0 signature of the input.

    Requires a 16-bit family so the value always fits [0, 65535]. Positive
    scaling of the input never changes the hash (sign projections are
    scale-invariant), which is what makes hash-range routing converge
    similar tasks on one server.
    """
    if family.k != FORWARDING_BITS:
        raise ValueError(f"forwarding hash needs a k={FORWARDING_BITS} family, got k={family.k}")
    return family.signature_bits(v, 0)


def probe_sequence(sig: LshSignature, radius: int) -> list[LshSignature]:
    """Multi-probe order: sig itself, then everything at Hamming distance
    1, 2, ... up to radius.

    Within one distance class, probes are ordered lexicographically by the
    tuple of flipped bit indices. Total length is sum over d of C(k, d); at
    radius == k the sequence enumerates the whole signature space, which
    turns bucketed lookup into exact search.
    """
    if not 0 <= radius <= sig.k:
        raise ValueError(f"radius must be in [0, {sig.k}], got {radius}")
    out = []
    for d in range(radius + 1):
        for flips in itertools.combinations(range(sig.k), d):
            bits = sig.bits
            for i in flips:
                bits ^= 1 << i
            out.append(LshSignature(bits, sig.table_index, sig.k))
    return out


def _token_hash(token: str, seed: int, person: bytes) -> int:
    # Python's builtin hash() is salted per process; a keyed blake2b keeps
    # feature hashing reproducible across runs and machines.
    h = hashlib.blake2b(
        token.encode("utf-8"),
        digest_size=8,
        key=seed.to_bytes(8, "little"),
        person=person,
    )
    return int.from_bytes(h.digest(), "little")


def feature_hash(tokens, dim: int, seed: int = 0) -> np.ndarray:
    """Vectorize (token, value) pairs into a fixed-dimension vector.

    Each token is routed to one output index by a seeded string hash and
    accumulated with a hashed sign of +/-1, so the result is independent of
    token order and linear in the values. An empty token list yields the
    zero vector, which callers must not feed to the LSH layer.
    """
    if dim < 1:
        raise ValueError(f"dim must be >= 1, got {dim}")
    if not 0 <= seed < _MAX_SEED:
        raise ValueError("seed must be a 64-bit non-negative integer")
    out = np.zeros(dim, dtype=np.float64)
    for token, value in tokens:
        if not isinstance(token, str):
            raise TypeError(f"token must be a string, got {type(token).__name__}")
        value = float(value)
        if not np.isfinite(value):
            raise ValueError(f"token {token!r} has non-finite value")
        idx = _token_hash(token, seed, b"fh-index") % dim
        sign = 1.0 if _token_hash(token, seed, b"fh-sign") & 1 else -1.0
        out[idx] += sign * value
    out.setflags(write=False)
    return out
