"""Data-manifold estimation: KDE densities, threshold sets, OOD classifier.

A manifold here is any object with ``contains_batch`` mapping an (n, d)
array to a boolean vector.  The two density-threshold variants implement
the sets {x : p(x) > eps}; the k-NN classifier variant separates real rows
from synthetically perturbed ones and uses the vote as the membership
indicator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import logsumexp

from .core import Dataset, RngStream

DensityFn = Callable[[np.ndarray], np.ndarray]

_QUERY_CHUNK = 512


class KdeEstimator:
    """Gaussian product-kernel density estimate with per-dimension bandwidths."""

    def __init__(self, references: np.ndarray, bandwidths: np.ndarray) -> None:
        references = np.asarray(references, dtype=float)
        bandwidths = np.asarray(bandwidths, dtype=float)
        if references.ndim != 2 or references.shape[0] < 1:
            raise ValueError("references must be a non-empty (n, d) matrix")
        if bandwidths.shape != (references.shape[1],):
            raise ValueError("one bandwidth per dimension required")
        if np.any(bandwidths <= 0):
            raise ValueError("bandwidths must be strictly positive")
        self.references = references
        self.bandwidths = bandwidths

    @property
    def d(self) -> int:
        return self.references.shape[1]

    def log_density(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.d:
            raise ValueError(f"queries have {x.shape[1]} columns, expected {self.d}")
        n_ref = self.references.shape[0]
        norm = (
            math.log(n_ref)
            + 0.5 * self.d * math.log(2.0 * math.pi)
            + float(np.sum(np.log(self.bandwidths)))
        )
        out = np.empty(x.shape[0])
        scaled_ref = self.references / self.bandwidths
        for start in range(0, x.shape[0], _QUERY_CHUNK):
            chunk = x[start : start + _QUERY_CHUNK] / self.bandwidths
            # (chunk, n_ref) squared distances in bandwidth units
            sq = (
                np.sum(chunk * chunk, axis=1)[:, None]
                - 2.0 * chunk @ scaled_ref.T
                + np.sum(scaled_ref * scaled_ref, axis=1)[None, :]
            )
            np.maximum(sq, 0.0, out=sq)
            out[start : start + _QUERY_CHUNK] = logsumexp(-0.5 * sq, axis=1) - norm
        return out

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return np.exp(self.log_density(x))


def fit_kde(
    data: Union[Dataset, np.ndarray],
    bandwidth_rule: Union[str, float, np.ndarray] = "scott",
) -> KdeEstimator:
    """Fit a Gaussian-kernel KDE on the rows of ``data``.

    ``bandwidth_rule`` is "scott" (h_j = sigma_j * n^(-1/(d+4))), a positive
    scalar applied to every dimension, or an explicit per-dimension vector.
    A zero-variance feature cannot be smoothed and raises ValueError.
    """
    rows = data.rows if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    rows = np.atleast_2d(rows)
    n, d = rows.shape
    if n < 2:
        raise ValueError("KDE needs at least 2 reference rows")
    if isinstance(bandwidth_rule, str):
        if bandwidth_rule != "scott":
            raise ValueError(f"unknown bandwidth rule {bandwidth_rule!r}")
        sigma = rows.std(axis=0, ddof=1)
        if np.any(sigma == 0):
            bad = int(np.flatnonzero(sigma == 0)[0])
            raise ValueError(
                f"feature column {bad} has zero variance; add jitter or drop it "
                "before fitting a KDE"
            )
        bandwidths = sigma * n ** (-1.0 / (d + 4))
    elif np.isscalar(bandwidth_rule):
        bandwidths = np.full(d, float(bandwidth_rule))
    else:
        bandwidths = np.asarray(bandwidth_rule, dtype=float)
    return KdeEstimator(rows, bandwidths)


def threshold_for_mass(
    density: DensityFn, calibration: Union[Dataset, np.ndarray], alpha: float
) -> float:
    """Density threshold whose super-level set holds about alpha of the mass.

    Computed as the empirical (1 - alpha) quantile of density values on the
    calibration rows, which should be disjoint from any rows used to fit the
    density.  alpha = 1 maps to threshold 0 (the full support).
    """
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")
    if alpha == 1.0:
        return 0.0
    rows = calibration.rows if isinstance(calibration, Dataset) else np.asarray(calibration, dtype=float)
    rows = np.atleast_2d(rows)
    if rows.shape[0] < 1:
        raise ValueError("calibration set is empty")
    values = np.asarray(density(rows), dtype=float)
    return float(np.quantile(values, 1.0 - alpha))


@dataclass(frozen=True)
class DensityManifold:
    """Super-level set {x : density(x) > eps}; boundary ties count as out."""

    density: DensityFn
    eps: float

    def __post_init__(self) -> None:
        if self.eps < 0:
            raise ValueError("eps must be non-negative")

    def contains_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.asarray(self.density(x), dtype=float) > self.eps

    def contains(self, x: np.ndarray) -> bool:
        return bool(self.contains_batch(np.atleast_2d(x))[0])


@dataclass(frozen=True)
class MassManifold(DensityManifold):
    """Density manifold whose threshold was calibrated to hold alpha mass."""

    alpha: float = 1.0

    @classmethod
    def fit(
        cls,
        density: DensityFn,
        calibration: Union[Dataset, np.ndarray],
        alpha: float,
    ) -> "MassManifold":
        eps = threshold_for_mass(density, calibration, alpha)
        return cls(density=density, eps=eps, alpha=alpha)


class OodClassifier:
    """k-NN vote separating real rows from coordinate-perturbed copies.

    Distances are Euclidean after z-scoring by the real-data location and
    scale recorded at fit time.  A point is inside when the majority of its
    k nearest training points are real.
    """

    def __init__(
        self,
        points: np.ndarray,
        labels: np.ndarray,
        k: int,
        loc: np.ndarray,
        scale: np.ndarray,
    ) -> None:
        points = np.asarray(points, dtype=float)
        labels = np.asarray(labels, dtype=float)
        if points.ndim != 2 or labels.shape != (points.shape[0],):
            raise ValueError("points must be (n, d) with one label per row")
        if not 1 <= k <= points.shape[0]:
            raise ValueError(f"k={k} outside [1, {points.shape[0]}]")
        if np.any(np.asarray(scale) <= 0):
            raise ValueError("scale entries must be positive")
        self.points = points
        self.labels = labels
        self.k = k
        self.loc = np.asarray(loc, dtype=float)
        self.scale = np.asarray(scale, dtype=float)
        self._tree = cKDTree((points - self.loc) / self.scale)

    @property
    def d(self) -> int:
        return self.points.shape[1]

    def contains_batch(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        _, idx = self._tree.query((x - self.loc) / self.scale, k=self.k)
        idx = np.atleast_2d(idx)
        if idx.shape[0] != x.shape[0]:  # k == 1 collapses the axis
            idx = idx.T
        votes = self.labels[idx].mean(axis=1)
        return votes > 0.5

    def contains(self, x: np.ndarray) -> bool:
        return bool(self.contains_batch(np.atleast_2d(x))[0])


def fit_ood_classifier(
    data: Union[Dataset, np.ndarray],
    stream: RngStream,
    n_perturbed_per_point: int = 1,
    perturb_fraction: float = 0.5,
    perturb_scale: float = 3.0,
    k: int = 5,
) -> OodClassifier:
    """Fit the real-versus-perturbed k-NN membership classifier.

    Each real row contributes ``n_perturbed_per_point`` negative examples
    obtained by shifting ceil(perturb_fraction * d) randomly chosen
    coordinates by N(0, (perturb_scale * sigma_j)^2) noise.
    """
    rows = data.rows if isinstance(data, Dataset) else np.asarray(data, dtype=float)
    rows = np.atleast_2d(rows)
    n, d = rows.shape
    if n < 2:
        raise ValueError("need at least 2 rows to fit the classifier")
    if n_perturbed_per_point < 1:
        raise ValueError("n_perturbed_per_point must be >= 1; the classifier needs negatives")
    if not 0.0 < perturb_fraction <= 1.0:
        raise ValueError("perturb_fraction must lie in (0, 1]")
    if perturb_scale <= 0:
        raise ValueError("perturb_scale must be positive")
    sigma = rows.std(axis=0, ddof=1)
    if np.any(sigma == 0):
        bad = int(np.flatnonzero(sigma == 0)[0])
        raise ValueError(
            f"feature column {bad} has zero variance; add jitter or drop it "
            "before fitting the classifier"
        )
    n_coords = math.ceil(perturb_fraction * d)
    gen = stream.generator()
    negatives = np.repeat(rows, n_perturbed_per_point, axis=0)
    for row in negatives:
        coords = gen.choice(d, size=n_coords, replace=False)
        row[coords] += gen.standard_normal(n_coords) * perturb_scale * sigma[coords]
    points = np.vstack([rows, negatives])
    labels = np.concatenate([np.ones(n), np.zeros(negatives.shape[0])])
    if k > points.shape[0]:
        raise ValueError(f"k={k} exceeds the {points.shape[0]} training points")
    return OodClassifier(points=points, labels=labels, k=k, loc=rows.mean(axis=0), scale=sigma)


Manifold = Union[DensityManifold, MassManifold, OodClassifier]


def save_manifold(manifold: Manifold, prefix: Union[str, Path]) -> tuple[Path, Path]:
    """Serialize a fitted manifold to <prefix>.params.json + <prefix>.points.csv.

    Density manifolds are serializable only when backed by a KdeEstimator;
    closed-form densities have no finite representation here.
    """
    prefix = Path(prefix)
    params_path = prefix.with_name(prefix.name + ".params.json")
    points_path = prefix.with_name(prefix.name + ".points.csv")
    if isinstance(manifold, OodClassifier):
        params = {
            "kind": "ood",
            "k": manifold.k,
            "loc": manifold.loc.tolist(),
            "scale": manifold.scale.tolist(),
        }
        matrix = np.column_stack([manifold.points, manifold.labels])
        header = [f"x{i}" for i in range(manifold.d)] + ["label"]
    elif isinstance(manifold, DensityManifold):
        if not isinstance(manifold.density, KdeEstimator):
            raise ValueError("only KDE-backed density manifolds are serializable")
        params = {
            "kind": "mass" if isinstance(manifold, MassManifold) else "density",
            "eps": manifold.eps,
            "bandwidths": manifold.density.bandwidths.tolist(),
        }
        if isinstance(manifold, MassManifold):
            params["alpha"] = manifold.alpha
        matrix = manifold.density.references
        header = [f"x{i}" for i in range(manifold.density.d)]
    else:
        raise ValueError(f"cannot serialize manifold of type {type(manifold).__name__}")
    params_path.write_text(json.dumps(params, sort_keys=True, indent=2) + "\n")
    lines = [",".join(header)]
    lines.extend(",".join(repr(float(v)) for v in row) for row in matrix)
    points_path.write_text("\n".join(lines) + "\n")
    return params_path, points_path


def load_manifold(prefix: Union[str, Path]) -> Manifold:
    """Reconstruct a manifold saved by :func:`save_manifold`."""
    prefix = Path(prefix)
    params_path = prefix.with_name(prefix.name + ".params.json")
    points_path = prefix.with_name(prefix.name + ".points.csv")
    params = json.loads(params_path.read_text())
    matrix = np.loadtxt(points_path, delimiter=",", skiprows=1, ndmin=2)
    kind = params["kind"]
    if kind == "ood":
        return OodClassifier(
            points=matrix[:, :-1],
            labels=matrix[:, -1],
            k=int(params["k"]),
            loc=np.asarray(params["loc"], dtype=float),
            scale=np.asarray(params["scale"], dtype=float),
        )
    kde = KdeEstimator(matrix, np.asarray(params["bandwidths"], dtype=float))
    if kind == "mass":
        return MassManifold(density=kde, eps=float(params["eps"]), alpha=float(params["alpha"]))
    if kind == "density":
        return DensityManifold(density=kde, eps=float(params["eps"]))
    raise ValueError(f"unknown manifold kind {kind!r}")
