"""Deterministic synthetic edge services.

A service is a pipeline of named stages; stages with the same id are the
same computation, which is what makes intermediate results shareable across
services. Each stage applies a seeded random linear map followed by tanh, so
near-identical inputs give near-identical outputs and every result is exactly
reproducible for the accuracy oracle.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .core import as_feature_vector

_MAX_SEED = 1 << 64


@dataclass(frozen=True)
class StageSpec:
    """One pipeline stage. Equal stage_id must mean an equal spec."""

    stage_id: str
    transform_seed: int
    out_dim: int
    exec_time_us: int

    def __post_init__(self):
        if not self.stage_id:
            raise ValueError("stage_id must be non-empty")
        if not 0 <= self.transform_seed < _MAX_SEED:
            raise ValueError(f"stage {self.stage_id}: transform_seed out of range")
        if self.out_dim < 1:
            raise ValueError(f"stage {self.stage_id}: out_dim must be >= 1")
        if self.exec_time_us < 0:
            raise ValueError(f"stage {self.stage_id}: exec_time_us must be >= 0")


@dataclass(frozen=True)
class ServiceSpec:
    """A named pipeline plus the label space of its final classifier."""

    service_id: str
    input_dim: int
    stages: tuple[StageSpec, ...]
    label_classes: int = 10

    def __post_init__(self):
        object.__setattr__(self, "stages", tuple(self.stages))
        if not self.service_id:
            raise ValueError("service_id must be non-empty")
        if self.input_dim < 1:
            raise ValueError(f"service {self.service_id}: input_dim must be >= 1")
        if not self.stages:
            raise ValueError(f"service {self.service_id}: needs at least one stage")
        if self.label_classes < 2:
            raise ValueError(f"service {self.service_id}: label_classes must be >= 2")

    @property
    def total_exec_us(self) -> int:
        return sum(s.exec_time_us for s in self.stages)

    def stage_input_dims(self) -> list[int]:
        dims = [self.input_dim]
        for stage in self.stages[:-1]:
            dims.append(stage.out_dim)
        return dims

    @property
    def output_dim(self) -> int:
        return self.stages[-1].out_dim


@dataclass(frozen=True)
class ServiceResult:
    """What a completed service invocation hands back."""

    output: np.ndarray
    label: int


@lru_cache(maxsize=512)
def _transform_matrix(seed: int, out_dim: int, in_dim: int) -> np.ndarray:
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((out_dim, in_dim)) / np.sqrt(in_dim)
    m.setflags(write=False)
    return m


def execute_stage(stage: StageSpec, x) -> np.ndarray:
    """Pure function: tanh of a seeded random linear map of the input."""
    v = as_feature_vector(x)
    m = _transform_matrix(stage.transform_seed, stage.out_dim, v.size)
    out = np.tanh(m @ v)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=512)
def _class_projections(service_id: str, classes: int, dim: int) -> np.ndarray:
    digest = hashlib.blake2b(service_id.encode("utf-8"), digest_size=8,
                             person=b"label-proj").digest()
    rng = np.random.default_rng(int.from_bytes(digest, "little"))
    p = rng.standard_normal((classes, dim))
    p.setflags(write=False)
    return p


def label_of(svc: ServiceSpec, output) -> int:
    """Derived classification of a final output: argmax over the service's
    seeded class projections, with zero biases. Ties resolve to the smallest
    class index, so the zero vector always labels as class 0."""
    v = as_feature_vector(output, svc.output_dim)
    scores = _class_projections(svc.service_id, svc.label_classes, svc.output_dim) @ v
    return int(np.argmax(scores))


def execute_service(svc: ServiceSpec, x) -> ServiceResult:
    """Fold the whole pipeline over the input and label the final output."""
    v = as_feature_vector(x, svc.input_dim)
    for stage in svc.stages:
        v = execute_stage(stage, v)
    return ServiceResult(v, label_of(svc, v))


def oracle(svc: ServiceSpec, x) -> ServiceResult:
    """Ground-truth result of executing the task from scratch.

    Identical to execute_service; the metrics layer invokes it for every
    task, outside the simulated clock, to judge whether a reused result
    matches what the task's own execution would have produced.
    """
    return execute_service(svc, x)
