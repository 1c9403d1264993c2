"""Core value types.

Every type validates its invariants on construction and is immutable
afterwards; numpy payloads are copied and flagged read-only.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .exceptions import ContractError, DomainError

#: ``transform_index`` of an iteration that scales every row by one
#: temperature without grouping (plain temperature scaling maps).
GLOBAL_TRANSFORM_INDEX = -1


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.array(array, copy=True)
    array.flags.writeable = False
    return array


class TransformationKind(str, enum.Enum):
    ZOOM_OUT = "zoom_out"
    BRIGHTNESS = "brightness"
    SYNTHETIC_LOSSY = "synthetic_lossy"

    @classmethod
    def parse(cls, value) -> "TransformationKind":
        """Accept an enum member, its value, or a one-letter code (z, b, s)."""
        if isinstance(value, cls):
            return value
        aliases = {"z": cls.ZOOM_OUT, "zoom": cls.ZOOM_OUT,
                   "b": cls.BRIGHTNESS, "s": cls.SYNTHETIC_LOSSY,
                   "synth": cls.SYNTHETIC_LOSSY}
        try:
            return aliases.get(value) or cls(value)
        except ValueError:
            raise ContractError(f"unknown transformation kind {value!r}") from None


class ComparisonMode(str, enum.Enum):
    """How the transformed-input confidence is read when grouping.

    ``TRANSFORMED_MAX`` uses the transformed input's own max-softmax
    probability; ``ORIGINAL_INDEX`` reads the transformed softmax at the
    original prediction's class.
    """

    TRANSFORMED_MAX = "transformed_max"
    ORIGINAL_INDEX = "original_index"

    @classmethod
    def parse(cls, value) -> "ComparisonMode":
        try:
            return cls(value)
        except ValueError:
            raise ContractError(f"unknown comparison mode {value!r}") from None


class LogitsTable:
    """N x K raw classifier scores with optional integer labels.

    Parameters
    ----------
    logits : array-like of shape (n_samples, n_classes)
        Finite real scores, ``n_classes >= 2``.
    labels : array-like of shape (n_samples,), optional
        Class indices in ``0..n_classes-1``. ``None`` for unlabeled data.
    """

    __slots__ = ("logits", "labels")

    def __init__(self, logits, labels=None):
        z = np.asarray(logits, dtype=np.float64)
        if z.ndim != 2:
            raise ContractError(f"logits must be 2-D, got shape {z.shape}")
        n, k = z.shape
        if n < 1:
            raise ContractError("a logits table needs at least one sample")
        if k < 2:
            raise ContractError("a logits table needs at least two classes")
        if not np.all(np.isfinite(z)):
            raise DomainError("logits must be finite")
        y = None
        if labels is not None:
            raw = np.asarray(labels)
            if raw.ndim != 1 or raw.shape[0] != n:
                raise ContractError(
                    f"expected {n} labels, got array of shape {raw.shape}")
            if raw.size and not np.all(np.equal(np.mod(raw, 1), 0)):
                raise ContractError("labels must be integers")
            y = raw.astype(np.int64)
            if np.any(y < 0) or np.any(y >= k):
                raise ContractError(f"labels must lie in 0..{k - 1}")
        object.__setattr__(self, "logits", _frozen(z))
        object.__setattr__(self, "labels", None if y is None else _frozen(y))

    def __setattr__(self, name, value):
        raise AttributeError("LogitsTable is immutable")

    def __repr__(self):
        state = "labeled" if self.is_labeled else "unlabeled"
        return f"LogitsTable(n_samples={self.n_samples}, n_classes={self.n_classes}, {state})"

    def __eq__(self, other):
        if not isinstance(other, LogitsTable):
            return NotImplemented
        if (self.labels is None) != (other.labels is None):
            return False
        same_labels = self.labels is None or np.array_equal(self.labels, other.labels)
        return same_labels and np.array_equal(self.logits, other.logits)

    __hash__ = None

    @property
    def n_samples(self) -> int:
        return self.logits.shape[0]

    @property
    def n_classes(self) -> int:
        return self.logits.shape[1]

    @property
    def is_labeled(self) -> bool:
        return self.labels is not None

    def require_labels(self) -> np.ndarray:
        if self.labels is None:
            raise ContractError("operation requires a labeled logits table")
        return self.labels

    def with_logits(self, logits) -> "LogitsTable":
        """Same labels, new scores."""
        return LogitsTable(logits, self.labels)

    def take(self, index) -> "LogitsTable":
        """Row subset (index array or boolean mask)."""
        labels = None if self.labels is None else self.labels[index]
        return LogitsTable(self.logits[index], labels)


@dataclass(frozen=True)
class TransformationSpec:
    kind: TransformationKind
    parameter: float

    def __post_init__(self):
        object.__setattr__(self, "kind", TransformationKind.parse(self.kind))
        p = float(self.parameter)
        if not (0.0 < p <= 1.0):
            raise DomainError(f"transformation parameter must lie in (0, 1], got {p}")
        object.__setattr__(self, "parameter", p)


@dataclass(frozen=True)
class TransformationPool:
    entries: Tuple[TransformationSpec, ...]
    seed: int
    range_low: float
    range_high: float

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        if not entries:
            raise ContractError("a transformation pool needs at least one entry")
        if not (0.0 < self.range_low <= self.range_high <= 1.0):
            raise ContractError(
                f"pool range must satisfy 0 < low <= high <= 1, "
                f"got ({self.range_low}, {self.range_high})")
        if not (0 <= int(self.seed) < 2**64):
            raise ContractError("seed must be a 64-bit unsigned integer")
        object.__setattr__(self, "seed", int(self.seed))
        kinds = {e.kind for e in entries}
        if len(kinds) != 1:
            raise ContractError("a pool holds a single transformation kind")
        for e in entries:
            if not (self.range_low <= e.parameter <= self.range_high):
                raise ContractError(
                    f"parameter {e.parameter} outside pool range "
                    f"[{self.range_low}, {self.range_high}]")

    def __len__(self):
        return len(self.entries)

    @property
    def kind(self) -> TransformationKind:
        return self.entries[0].kind

    @property
    def parameters(self) -> Tuple[float, ...]:
        return tuple(e.parameter for e in self.entries)


class GroupPartition:
    """Disjoint, exhaustive four-way split of ``0..n-1``.

    ``groups[k]`` holds the sorted sample indices of group ``k + 1``.
    """

    __slots__ = ("groups", "n_samples")

    def __init__(self, groups: Sequence, n_samples: int):
        if len(groups) != 4:
            raise ContractError("a group partition has exactly four groups")
        arrays = tuple(_frozen(np.sort(np.asarray(g, dtype=np.int64))) for g in groups)
        seen = np.zeros(n_samples, dtype=np.int64)
        for g in arrays:
            if g.size and (g[0] < 0 or g[-1] >= n_samples):
                raise ContractError("group index out of range")
            np.add.at(seen, g, 1)
        if not np.all(seen == 1):
            raise ContractError("groups must be pairwise disjoint and cover every sample")
        object.__setattr__(self, "groups", arrays)
        object.__setattr__(self, "n_samples", int(n_samples))

    def __setattr__(self, name, value):
        raise AttributeError("GroupPartition is immutable")

    def __repr__(self):
        return f"GroupPartition(sizes={self.sizes})"

    @classmethod
    def from_group_numbers(cls, numbers) -> "GroupPartition":
        numbers = np.asarray(numbers)
        return cls([np.flatnonzero(numbers == k) for k in (1, 2, 3, 4)], numbers.size)

    @property
    def sizes(self) -> Tuple[int, int, int, int]:
        return tuple(int(g.size) for g in self.groups)

    def group_numbers(self) -> np.ndarray:
        out = np.empty(self.n_samples, dtype=np.int64)
        for k, g in enumerate(self.groups, start=1):
            out[g] = k
        return out


def _between(value: float, a: float, b: float) -> bool:
    return min(a, b) <= value <= max(a, b)


@dataclass(frozen=True)
class CalibrationIteration:
    transform_index: int
    temperatures: Tuple[float, float, float, float]
    raw_temperatures: Tuple[float, float, float, float]
    group_sizes: Tuple[int, int, int, int]
    validation_ece_after: float

    def __post_init__(self):
        temps = tuple(float(t) for t in self.temperatures)
        raw = tuple(float(t) for t in self.raw_temperatures)
        sizes = tuple(int(s) for s in self.group_sizes)
        if not (len(temps) == len(raw) == len(sizes) == 4):
            raise ContractError("an iteration carries exactly four groups")
        for t in temps + raw:
            if not (math.isfinite(t) and t > 0):
                raise DomainError(f"temperatures must be finite and positive, got {t}")
        for t, r in zip(temps, raw):
            if not _between(t, 1.0, r):
                raise ContractError(f"temperature {t} not between 1 and raw {r}")
        if any(s < 0 for s in sizes):
            raise ContractError("group sizes must be non-negative")
        ece = float(self.validation_ece_after)
        if not (0.0 <= ece <= 1.0):
            raise DomainError(f"validation ECE must lie in [0, 1], got {ece}")
        object.__setattr__(self, "transform_index", int(self.transform_index))
        object.__setattr__(self, "temperatures", temps)
        object.__setattr__(self, "raw_temperatures", raw)
        object.__setattr__(self, "group_sizes", sizes)
        object.__setattr__(self, "validation_ece_after", ece)


@dataclass(frozen=True)
class FitConfig:
    """Settings recorded alongside a fitted map."""

    max_iterations: int = 100
    stopping_delta: float = 1e-4
    ece_bins: int = 15
    confidence_comparison_mode: ComparisonMode = ComparisonMode.TRANSFORMED_MAX
    method: str = "recal"

    def __post_init__(self):
        object.__setattr__(self, "confidence_comparison_mode",
                           ComparisonMode.parse(self.confidence_comparison_mode))
        if int(self.max_iterations) < 1:
            raise ContractError("max_iterations must be >= 1")
        if not (float(self.stopping_delta) >= 0):
            raise ContractError("stopping_delta must be >= 0")
        if int(self.ece_bins) < 1:
            raise ContractError("ece_bins must be >= 1")
        if self.method not in ("recal", "ts"):
            raise ContractError(f"unknown method {self.method!r}")
        object.__setattr__(self, "max_iterations", int(self.max_iterations))
        object.__setattr__(self, "stopping_delta", float(self.stopping_delta))
        object.__setattr__(self, "ece_bins", int(self.ece_bins))


@dataclass(frozen=True)
class CalibrationMap:
    """Everything needed to replay a fit on new data.

    ``pool`` is ``None`` only for maps whose iterations all use
    :data:`GLOBAL_TRANSFORM_INDEX` (plain temperature scaling).
    """

    pool: Optional[TransformationPool]
    iterations: Tuple[CalibrationIteration, ...]
    config: FitConfig
    fingerprint: str
    initial_validation_ece: float
    validation_size: int = field(default=0)

    def __post_init__(self):
        iterations = tuple(self.iterations)
        object.__setattr__(self, "iterations", iterations)
        if len(iterations) > self.config.max_iterations:
            raise ContractError("more iterations than max_iterations")
        pool_size = 0 if self.pool is None else len(self.pool)
        for it in iterations:
            if it.transform_index == GLOBAL_TRANSFORM_INDEX:
                continue
            if not (0 <= it.transform_index < pool_size):
                raise ContractError(
                    f"transform_index {it.transform_index} out of range for pool of {pool_size}")
        sums = {sum(it.group_sizes) for it in iterations}
        if len(sums) > 1:
            raise ContractError("group sizes must sum to the same validation size")
        if sums and self.validation_size and sums != {self.validation_size}:
            raise ContractError("group sizes do not sum to validation_size")
        if not (0.0 <= float(self.initial_validation_ece) <= 1.0):
            raise DomainError("initial validation ECE must lie in [0, 1]")
        object.__setattr__(self, "initial_validation_ece", float(self.initial_validation_ece))

    @property
    def n_iterations(self) -> int:
        return len(self.iterations)

    def referenced_transforms(self) -> Tuple[int, ...]:
        """Sorted pool indices that :func:`recal.recursive.apply` will read."""
        return tuple(sorted({it.transform_index for it in self.iterations
                             if it.transform_index != GLOBAL_TRANSFORM_INDEX}))


class ImageTensorSet:
    """N x C x H x W float32 image stack with values in [0, 1]."""

    __slots__ = ("values",)

    def __init__(self, values):
        v = np.asarray(values, dtype=np.float32)
        if v.ndim != 4 or min(v.shape) < 1:
            raise ContractError(f"expected a non-empty N x C x H x W array, got shape {v.shape}")
        if not np.all((v >= 0.0) & (v <= 1.0)):
            raise DomainError("image values must lie in [0, 1]")
        object.__setattr__(self, "values", _frozen(v))

    def __setattr__(self, name, value):
        raise AttributeError("ImageTensorSet is immutable")

    def __eq__(self, other):
        if not isinstance(other, ImageTensorSet):
            return NotImplemented
        return np.array_equal(self.values, other.values)

    __hash__ = None

    def __repr__(self):
        return f"ImageTensorSet(dims={self.dims})"

    @property
    def dims(self) -> Tuple[int, int, int, int]:
        return tuple(int(d) for d in self.values.shape)
