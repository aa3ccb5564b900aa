"""Shared domain types and the similarity metric used by every layer.

Tasks carry a fixed-dimension feature vector as their input data; cosine
similarity (clamped at 0) between those vectors is the single notion of
"similar enough to reuse" across devices, routers, and servers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

SELF_SIMILARITY_SNAP = 1e-12
RESULT_ATOL = 1e-9


class ReuseLayer(enum.Enum):
    """Where a task's result came from."""

    NONE = "none"
    DEVICE = "device"
    NETWORK = "network"
    SERVER = "server"
    PARTIAL_SERVER = "partial_server"


def as_feature_vector(values, dim: int | None = None) -> np.ndarray:
    """Validate and freeze a feature vector.

    Returns a read-only float64 1-D array. Rejects empty, non-finite, or
    wrong-dimension input.
    """
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ValueError(f"feature vector must be 1-D and non-empty, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError("feature vector contains NaN or Inf")
    if dim is not None and v.size != dim:
        raise ValueError(f"feature vector has dim {v.size}, expected {dim}")
    v = v.copy()
    v.setflags(write=False)
    return v


def check_threshold(value: float) -> float:
    """Validate a similarity threshold (a fraction in [0, 1])."""
    t = float(value)
    if math.isnan(t) or not 0.0 <= t <= 1.0:
        raise ValueError(f"similarity threshold must be in [0, 1], got {value}")
    return t


@dataclass(frozen=True)
class TaskEnvelope:
    """An offloaded task in flight.

    ``forwarding_hash`` is attached by the device (or the first router when
    the device cannot hash) and is never recomputed downstream.
    """

    task_id: int
    device_id: str
    service_id: str
    input: np.ndarray
    threshold: float
    forwarding_hash: int | None = None
    created_at: int = 0

    def __post_init__(self):
        object.__setattr__(self, "input", as_feature_vector(self.input))
        object.__setattr__(self, "threshold", check_threshold(self.threshold))
        if self.forwarding_hash is not None and not 0 <= self.forwarding_hash <= 0xFFFF:
            raise ValueError(f"forwarding hash out of range: {self.forwarding_hash}")


@dataclass(frozen=True)
class TaskResult:
    """Final outcome of one task: output vector, derived label, provenance."""

    task_id: int
    service_id: str
    output: np.ndarray
    label: int
    reuse_layer: ReuseLayer
    completed_at: int = 0


def similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity clamped to [0, 1].

    Values within 1e-12 of 1.0 snap to exactly 1.0 so that identical inputs
    satisfy a threshold of 1.0. Zero vectors have no defined angle and are
    rejected.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("similarity of an all-zero vector is undefined")
    c = float(np.dot(a, b)) / (na * nb)
    if c > 1.0 - SELF_SIMILARITY_SNAP:
        return 1.0
    return max(c, 0.0)


def results_equal(r1: TaskResult, r2: TaskResult) -> bool:
    """True iff two results for the same service agree.

    Agreement = equal labels and element-wise equal outputs within 1e-9.
    This is the predicate behind the reuse-accuracy metric.
    """
    if r1.service_id != r2.service_id:
        raise ValueError(f"results are for different services: {r1.service_id!r} vs {r2.service_id!r}")
    if r1.label != r2.label:
        return False
    o1 = np.asarray(r1.output)
    o2 = np.asarray(r2.output)
    if o1.shape != o2.shape:
        return False
    return bool(np.allclose(o1, o2, rtol=0.0, atol=RESULT_ATOL))
