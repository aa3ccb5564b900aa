"""Synthetic workload generation and the trace/vector file formats.

A workload is a stream of offloaded tasks whose input vectors come from a
seeded cluster model: orthonormal cluster centers plus Gaussian perturbation
calibrated to hit a target mean intra-cluster cosine, with a configurable
fraction of tasks repeating a recently emitted vector exactly. Repeats are
what the caches can serve verbatim; cluster neighbors exercise the
similarity thresholds.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .core import check_threshold

_CALIBRATION_PAIRS = 384
_CALIBRATION_ROUNDS = 6
_CALIBRATION_TOL = 0.005
_VERIFY_TOL = 0.02
_MIN_VERIFY_PAIRS = 100
_MAX_STAT_PAIRS = 2000


class CalibrationError(ValueError):
    """The generator could not realize the requested cluster spread."""


@dataclass(frozen=True)
class WorkloadProfile:
    """Knobs for one synthetic workload.

    intra_cosine is the target mean pairwise cosine between fresh vectors of
    one cluster; repeat_fraction is the chance a task re-submits one of the
    last repeat_window vectors of its cluster instead of drawing fresh.
    """

    name: str
    dim: int = 64
    n_clusters: int = 8
    intra_cosine: float = 0.8
    repeat_fraction: float = 0.5
    tasks: int = 2000
    mean_interarrival_us: int = 60_000
    arrival: str = "exponential"
    threshold: float = 0.8
    services: tuple[str, ...] = ("cognitive-assist", "traffic-count", "voice-command", "scene-render")
    devices: tuple[str, ...] = ("dev0", "dev1")
    repeat_window: int = 25

    def __post_init__(self):
        if not self.name:
            raise ValueError("profile name must be non-empty")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if not 1 <= self.n_clusters <= self.dim:
            raise ValueError(f"n_clusters must be in [1, dim={self.dim}], got {self.n_clusters}")
        if self.intra_cosine > 1.0:
            raise CalibrationError(f"target intra-cluster cosine {self.intra_cosine} exceeds 1")
        if self.intra_cosine <= 0.0:
            raise CalibrationError(f"target intra-cluster cosine must be positive, got {self.intra_cosine}")
        if not 0.0 <= self.repeat_fraction <= 1.0:
            raise ValueError("repeat_fraction must be in [0, 1]")
        if self.tasks < 0:
            raise ValueError("tasks must be >= 0")
        if self.mean_interarrival_us < 1:
            raise ValueError("mean_interarrival_us must be >= 1")
        if self.arrival not in ("fixed", "exponential"):
            raise ValueError(f"arrival must be 'fixed' or 'exponential', got {self.arrival!r}")
        check_threshold(self.threshold)
        if not self.services:
            raise ValueError("profile needs at least one service")
        if not self.devices:
            raise ValueError("profile needs at least one device")
        if self.repeat_window < 1:
            raise ValueError("repeat_window must be >= 1")


@dataclass(frozen=True)
class TraceRow:
    time_us: int
    device_id: str
    service_id: str
    vector_id: int
    threshold: float


@dataclass
class Workload:
    """Generated vectors plus the task schedule referencing them."""

    vectors: np.ndarray
    rows: list[TraceRow]
    stats: dict


def builtin_profiles() -> dict[str, WorkloadProfile]:
    """Four similarity tiers (high to low) plus a layered default.

    The tiers differ in how often inputs repeat exactly and how tight the
    clusters are; 'mixed' is shaped so that a default topology sees traffic
    at every reuse layer.
    """
    profiles = [
        WorkloadProfile("cctv-like", n_clusters=6, intra_cosine=0.82,
                        repeat_fraction=0.75, tasks=1200),
        WorkloadProfile("pandaset-like", n_clusters=12, intra_cosine=0.78,
                        repeat_fraction=0.60, tasks=1200),
        WorkloadProfile("mobile-ar-like", n_clusters=20, intra_cosine=0.74,
                        repeat_fraction=0.45, tasks=1200),
        WorkloadProfile("mnist-like", n_clusters=40, intra_cosine=0.68,
                        repeat_fraction=0.30, tasks=1200),
        WorkloadProfile("mixed", n_clusters=10, intra_cosine=0.80,
                        repeat_fraction=0.60, tasks=10_000),
    ]
    return {p.name: p for p in profiles}


def _orthonormal_centers(rng: np.random.Generator, dim: int, n: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.standard_normal((dim, n)))
    return q.T[:n]


def _pairwise_mean_cosine(vectors: np.ndarray) -> float:
    v = vectors / np.linalg.norm(vectors, axis=1, keepdims=True)
    g = v @ v.T
    n = len(v)
    return float((g.sum() - n) / (n * (n - 1)))


def _calibrate_sigma(rng: np.random.Generator, center: np.ndarray, target: float) -> float:
    """Find the perturbation scale whose mean pairwise cosine hits the target.

    Starts from the analytic estimate 1/(1 + sigma^2 * dim) = target and
    refines by the measured/target ratio on a throwaway sample stream.
    """
    if target >= 1.0:
        return 0.0
    dim = center.size
    sigma = np.sqrt((1.0 / target - 1.0) / dim)
    for _ in range(_CALIBRATION_ROUNDS):
        sample = center + sigma * rng.standard_normal((_CALIBRATION_PAIRS, dim))
        measured = _pairwise_mean_cosine(sample)
        if abs(measured - target) <= _CALIBRATION_TOL:
            break
        if measured <= 0.0:
            sigma *= 0.5
            continue
        sigma *= np.sqrt(max((1.0 / target - 1.0), 1e-12) / max((1.0 / measured - 1.0), 1e-12))
    return float(sigma)


def generate_trace(profile: WorkloadProfile, seed: int) -> Workload:
    """Deterministic workload: vectors, schedule, and measured statistics.

    The spread is verified post hoc: the mean pairwise cosine of fresh
    same-cluster vectors must land within 0.02 of the profile target, else
    generation fails rather than emit a mislabeled workload.
    """
    ss = np.random.SeedSequence(seed)
    rng_centers, rng_sigma, rng_tasks, rng_arrival = (np.random.default_rng(c) for c in ss.spawn(4))

    centers = _orthonormal_centers(rng_centers, profile.dim, profile.n_clusters)
    sigma = _calibrate_sigma(rng_sigma, centers[0], profile.intra_cosine)

    vectors: list[np.ndarray] = []
    rows: list[TraceRow] = []
    cluster_history: list[list[int]] = [[] for _ in range(profile.n_clusters)]
    fresh_by_cluster: list[list[int]] = [[] for _ in range(profile.n_clusters)]
    cluster_of: list[int] = []
    repeats = 0

    time_us = 0
    for i in range(profile.tasks):
        if profile.arrival == "fixed":
            gap = profile.mean_interarrival_us
        else:
            gap = max(1, int(round(rng_arrival.exponential(profile.mean_interarrival_us))))
        time_us += gap
        device = profile.devices[i % len(profile.devices)]
        cluster = int(rng_tasks.integers(profile.n_clusters))
        service = profile.services[cluster % len(profile.services)]
        history = cluster_history[cluster]
        if history and rng_tasks.random() < profile.repeat_fraction:
            window = history[-profile.repeat_window:]
            vector_id = window[int(rng_tasks.integers(len(window)))]
            repeats += 1
        else:
            v = centers[cluster] + sigma * rng_tasks.standard_normal(profile.dim)
            v /= np.linalg.norm(v)
            vector_id = len(vectors)
            vectors.append(v)
            cluster_of.append(cluster)
            fresh_by_cluster[cluster].append(vector_id)
        history.append(vector_id)
        rows.append(TraceRow(time_us, device, service, vector_id, profile.threshold))

    matrix = np.stack(vectors) if vectors else np.zeros((0, profile.dim))
    stats = _measure_stats(matrix, fresh_by_cluster, profile, repeats, len(rows))
    # Tiny traces cannot estimate the spread reliably, so the hard gate only
    # applies once there are enough same-cluster pairs behind the mean.
    if stats["intra_pairs"] >= _MIN_VERIFY_PAIRS:
        intra = stats["intra_cosine_measured"]
        if abs(intra - profile.intra_cosine) > _VERIFY_TOL:
            raise CalibrationError(
                f"measured intra-cluster cosine {intra:.4f} misses target "
                f"{profile.intra_cosine:.4f} by more than {_VERIFY_TOL}")
    return Workload(matrix, rows, stats)


def _measure_stats(matrix: np.ndarray, fresh_by_cluster: list[list[int]],
                   profile: WorkloadProfile, repeats: int, n_tasks: int) -> dict:
    intra_samples = []
    for ids in fresh_by_cluster:
        if len(ids) < 2:
            continue
        take = ids[: int(np.sqrt(2 * _MAX_STAT_PAIRS / max(1, profile.n_clusters))) + 2]
        sub = matrix[take]
        g = sub @ sub.T
        n = len(sub)
        iu = np.triu_indices(n, k=1)
        intra_samples.extend(g[iu].tolist())
    inter = None
    heads = [ids[0] for ids in fresh_by_cluster if ids]
    if len(heads) >= 2:
        sub = matrix[heads]
        g = sub @ sub.T
        iu = np.triu_indices(len(sub), k=1)
        inter = float(np.mean(g[iu]))
    return {
        "tasks": n_tasks,
        "unique_vectors": int(matrix.shape[0]),
        "repeat_tasks": repeats,
        "intra_cosine_target": profile.intra_cosine,
        "intra_cosine_measured": float(np.mean(intra_samples)) if intra_samples else None,
        "intra_pairs": len(intra_samples),
        "inter_cosine_measured": inter,
    }


def write_vectors_csv(path, vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors, dtype=np.float64)
    dim = vectors.shape[1] if vectors.ndim == 2 and vectors.size else vectors.shape[-1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["vector_id"] + [f"v{i}" for i in range(dim)])
        for vid, row in enumerate(vectors):
            writer.writerow([vid] + [repr(float(x)) for x in row])


def read_vectors_csv(path) -> np.ndarray:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[0] != "vector_id":
            raise ValueError(f"{path}: not a vectors file (bad header)")
        dim = len(header) - 1
        out = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != dim + 1:
                raise ValueError(f"{path}: row {lineno}: expected {dim + 1} fields, got {len(row)}")
            try:
                vid = int(row[0])
                values = [float(x) for x in row[1:]]
            except ValueError as exc:
                raise ValueError(f"{path}: row {lineno}: {exc}") from None
            if vid != len(out):
                raise ValueError(f"{path}: row {lineno}: vector ids must be dense and ordered")
            out.append(values)
    return np.array(out, dtype=np.float64).reshape(len(out), dim)


TRACE_HEADER = ["time_us", "device_id", "service_id", "vector_id", "threshold"]


def write_trace_csv(path, rows: list[TraceRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(TRACE_HEADER)
        for r in rows:
            writer.writerow([r.time_us, r.device_id, r.service_id, r.vector_id, repr(float(r.threshold))])


def read_trace_csv(path) -> list[TraceRow]:
    path = Path(path)
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACE_HEADER:
            raise ValueError(f"{path}: not a trace file (expected header {','.join(TRACE_HEADER)})")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 5:
                raise ValueError(f"{path}: row {lineno}: expected 5 fields, got {len(row)}")
            try:
                rows.append(TraceRow(int(row[0]), row[1], row[2], int(row[3]), float(row[4])))
            except ValueError as exc:
                raise ValueError(f"{path}: row {lineno}: {exc}") from None
    return rows


def with_threshold(rows: list[TraceRow], threshold: float) -> list[TraceRow]:
    """The same schedule with every task's threshold replaced."""
    t = check_threshold(threshold)
    return [replace(r, threshold=t) for r in rows]
