"""Shared domain types for attribution: datasets, coalitions, RNG streams.

Everything downstream (value functions, engines, experiments) builds on the
small vocabulary defined here.  Models are batch evaluators mapping an
(n, d) float array to an (n,) float array; instances are plain 1-D numpy
vectors validated through :func:`as_instance`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

# Batch model evaluator: rows (n, d) -> outputs (n,).
Model = Callable[[np.ndarray], np.ndarray]


class ShaplabError(Exception):
    """Base class for errors raised by this package."""


class DataFormatError(ShaplabError):
    """A data file could not be parsed into a valid dataset."""


class ConfigError(ShaplabError):
    """A configuration mapping is malformed or references unknown names."""


def as_instance(values: Sequence[float] | np.ndarray) -> np.ndarray:
    """Validate and return a single input point as a read-only float vector.

    Raises ValueError when the input is not 1-D, is empty, or contains
    non-finite entries.
    """
    x = np.asarray(values, dtype=float)
    if x.ndim != 1:
        raise ValueError(f"instance must be a 1-D vector, got shape {x.shape}")
    if x.size < 1:
        raise ValueError("instance must have at least one feature")
    if not np.all(np.isfinite(x)):
        raise ValueError("instance contains non-finite values")
    x = x.copy()
    x.setflags(write=False)
    return x


@dataclass(frozen=True)
class Coalition:
    """Subset of feature indices over a fixed dimension, stored as a bitmask.

    Bit i set means feature i belongs to the coalition.  The dimension d is
    carried along so complements are well defined.
    """

    mask: int
    d: int

    def __post_init__(self) -> None:
        if self.d < 1:
            raise ValueError("coalition dimension must be >= 1")
        if self.mask < 0 or self.mask >= (1 << self.d):
            raise ValueError(f"mask {self.mask} out of range for d={self.d}")

    @classmethod
    def empty(cls, d: int) -> "Coalition":
        return cls(0, d)

    @classmethod
    def full(cls, d: int) -> "Coalition":
        return cls((1 << d) - 1, d)

    @classmethod
    def from_members(cls, members: Iterable[int], d: int) -> "Coalition":
        mask = 0
        for i in members:
            if not 0 <= i < d:
                raise ValueError(f"feature index {i} out of range for d={d}")
            mask |= 1 << i
        return cls(mask, d)

    @property
    def size(self) -> int:
        return self.mask.bit_count()

    @property
    def is_empty(self) -> bool:
        return self.mask == 0

    @property
    def is_full(self) -> bool:
        return self.mask == (1 << self.d) - 1

    def contains(self, i: int) -> bool:
        return bool((self.mask >> i) & 1)

    def add(self, i: int) -> "Coalition":
        if not 0 <= i < self.d:
            raise ValueError(f"feature index {i} out of range for d={self.d}")
        return Coalition(self.mask | (1 << i), self.d)

    def members(self) -> np.ndarray:
        """Member indices in increasing order."""
        return np.flatnonzero([(self.mask >> i) & 1 for i in range(self.d)])

    def complement_members(self) -> np.ndarray:
        """Non-member indices in increasing order."""
        return np.flatnonzero([not (self.mask >> i) & 1 for i in range(self.d)])


@dataclass(frozen=True)
class Dataset:
    """Immutable table of feature rows with optional targets.

    rows has shape (n, d) and must be finite; feature_names are unique and
    match d.  target, when present, has length n.
    """

    rows: np.ndarray
    feature_names: tuple[str, ...]
    target: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2:
            raise ValueError(f"rows must be 2-D, got shape {rows.shape}")
        n, d = rows.shape
        if n < 1 or d < 1:
            raise ValueError("dataset must have at least one row and one feature")
        if not np.all(np.isfinite(rows)):
            raise ValueError("dataset rows contain non-finite values")
        names = tuple(self.feature_names)
        if len(names) != d:
            raise ValueError(f"{len(names)} feature names for {d} columns")
        if len(set(names)) != len(names):
            raise ValueError("feature names must be unique")
        rows = rows.copy()
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "feature_names", names)
        if self.target is not None:
            target = np.asarray(self.target, dtype=float)
            if target.shape != (n,):
                raise ValueError(f"target shape {target.shape} does not match {n} rows")
            if not np.all(np.isfinite(target)):
                raise ValueError("target contains non-finite values")
            target = target.copy()
            target.setflags(write=False)
            object.__setattr__(self, "target", target)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def d(self) -> int:
        return self.rows.shape[1]


@dataclass(frozen=True)
class Attribution:
    """Per-feature attribution with estimator diagnostics.

    phi holds one value per feature.  value_empty and value_full are the
    value-function endpoints v(empty) and v(all features) as seen by the
    engine that produced this attribution.  n_samples counts value-function
    evaluations; std_errors, when present, are per-feature standard errors.
    The degenerate flag marks attributions whose L1 mass was zero at
    normalization time.
    """

    phi: np.ndarray
    value_empty: float
    value_full: float
    n_samples: int
    std_errors: Optional[np.ndarray] = None
    degenerate: bool = False

    def __post_init__(self) -> None:
        phi = np.asarray(self.phi, dtype=float)
        if phi.ndim != 1 or phi.size < 1:
            raise ValueError("phi must be a non-empty 1-D vector")
        phi = phi.copy()
        phi.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        if self.std_errors is not None:
            se = np.asarray(self.std_errors, dtype=float)
            if se.shape != phi.shape:
                raise ValueError("std_errors shape must match phi")
            se = se.copy()
            se.setflags(write=False)
            object.__setattr__(self, "std_errors", se)

    @property
    def d(self) -> int:
        return self.phi.size


@dataclass(frozen=True)
class RngStream:
    """Deterministic, forkable random stream.

    A stream is identified by a root seed plus a path of child indices.
    Identical (seed, path) pairs produce bit-identical generators no matter
    how many workers are running or in which order streams are consumed.
    """

    seed: int
    path: tuple[int, ...] = ()

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if any(i < 0 for i in self.path):
            raise ValueError("stream path indices must be non-negative")

    def child(self, *indices: int) -> "RngStream":
        """Derive a sub-stream by extending the path."""
        if any(i < 0 for i in indices):
            raise ValueError("stream path indices must be non-negative")
        return RngStream(self.seed, self.path + tuple(indices))

    def generator(self) -> np.random.Generator:
        """Fresh generator for this stream; same stream, same bit sequence."""
        return np.random.default_rng(
            np.random.SeedSequence(entropy=self.seed, spawn_key=self.path)
        )


def shapley_weight(s_size: int, d: int) -> float:
    """Weight |S|! (d - |S| - 1)! / d! of a coalition of size s_size.

    Uses exact factorials for d <= 20 and log-gamma evaluation above that
    to avoid overflow.  s_size must lie in [0, d - 1].
    """
    if d < 1:
        raise ValueError("d must be >= 1")
    if not 0 <= s_size <= d - 1:
        raise ValueError(f"coalition size {s_size} outside [0, {d - 1}]")
    if d <= 20:
        return math.factorial(s_size) * math.factorial(d - s_size - 1) / math.factorial(d)
    log_w = math.lgamma(s_size + 1) + math.lgamma(d - s_size) - math.lgamma(d + 1)
    return math.exp(log_w)


def top_feature(attribution: Attribution) -> int:
    """Index of the feature with the largest |phi|, lowest index on ties."""
    return int(np.argmax(np.abs(attribution.phi)))


def normalize_l1(attribution: Attribution) -> Attribution:
    """Rescale phi (and std_errors) so that sum |phi_i| = 1.

    A zero-mass attribution is returned unchanged with the degenerate flag
    set.  value_empty and value_full are left untouched; normalized
    attributions are for cross-method comparison, not for the efficiency
    identity.
    """
    total = float(np.sum(np.abs(attribution.phi)))
    if total == 0.0:
        return replace(attribution, degenerate=True)
    se = None if attribution.std_errors is None else attribution.std_errors / total
    return replace(attribution, phi=attribution.phi / total, std_errors=se)


def load_dataset_csv(path: str | Path, has_target: bool = False) -> Dataset:
    """Load a Dataset from a CSV file with a header row.

    Every cell must parse as a finite float.  With has_target the last
    column becomes the target.  Ragged rows and non-numeric or non-finite
    cells raise DataFormatError naming the offending row and column.
    """
    path = Path(path)
    try:
        handle = path.open(newline="")
    except OSError as exc:
        raise DataFormatError(f"cannot open {path}: {exc}") from exc
    with handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: file is empty, expected a header row")
        header = [name.strip() for name in header]
        if len(header) < (2 if has_target else 1):
            raise DataFormatError(f"{path}: too few columns for has_target={has_target}")
        values: list[list[float]] = []
        for row_number, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataFormatError(
                    f"{path}: row {row_number} has {len(row)} cells, expected {len(header)}"
                )
            parsed = []
            for name, cell in zip(header, row):
                try:
                    value = float(cell)
                except ValueError:
                    raise DataFormatError(
                        f"{path}: row {row_number}, column {name!r}: "
                        f"cannot parse {cell!r} as a number"
                    ) from None
                if not math.isfinite(value):
                    raise DataFormatError(
                        f"{path}: row {row_number}, column {name!r}: "
                        f"non-finite value {cell!r}"
                    )
                parsed.append(value)
            values.append(parsed)
    if not values:
        raise DataFormatError(f"{path}: no data rows")
    matrix = np.asarray(values, dtype=float)
    if has_target:
        return Dataset(
            rows=matrix[:, :-1],
            feature_names=tuple(header[:-1]),
            target=matrix[:, -1],
        )
    return Dataset(rows=matrix, feature_names=tuple(header))
