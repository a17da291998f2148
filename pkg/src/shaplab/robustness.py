"""Robustness verification for value functions under model perturbation.

The verifier compares a value function applied to a model f1 against the
same value function applied to a perturbed model f2, using shared random
streams so that any difference comes from the models and not the draws.
Two bound flavors are covered: the subspace form (perturbations supported
off a set Z', claimed |v1 - v2| <= T * sup_{Z'} |f1 - f2|) and the
density-weighted form on a density super-level set (claimed
|v1 - v2| <= delta / eps when sup |f1 - f2| p <= delta).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Optional, Sequence, Union

import numpy as np

from .core import Coalition, Model, RngStream
from .manifold import DensityFn


@dataclass(frozen=True)
class RegressionShift:
    """g(x) = f(x) + delta * x_feature off the manifold."""

    delta: float
    feature: int = 1


@dataclass(frozen=True)
class ClassifierShift:
    """g(x) = f(x) on the manifold, 1((1 - delta) x_feature > threshold) off it."""

    delta: float
    feature: int = 0
    threshold: float = 0.5


@dataclass(frozen=True)
class OffManifoldGate:
    """g(x) = f(x) on the manifold, 1(x_feature > 0) off it."""

    feature: int = 1


@dataclass(frozen=True)
class AdditiveOffset:
    """g(x) = f(x) + k off the manifold."""

    k: float


@dataclass(frozen=True)
class DensityScaledShift:
    """g(x) = f(x) + delta * c(x) / p(x) wherever p(x) > p_floor.

    With |c| <= 1 this keeps sup |g - f| p <= delta by construction, the
    premise of the density-weighted robustness bound.  No manifold is
    involved.
    """

    delta: float
    density: DensityFn
    ripple: Model
    p_floor: float = 0.0


PerturbationSpec = Union[
    RegressionShift, ClassifierShift, OffManifoldGate, AdditiveOffset, DensityScaledShift
]


@dataclass(frozen=True)
class PerturbedModel:
    """Model built from a base model, a manifold, and a perturbation spec."""

    base: Model
    manifold: Optional[object]
    spec: PerturbationSpec

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        spec = self.spec
        if isinstance(spec, DensityScaledShift):
            p = np.asarray(spec.density(x), dtype=float)
            ripple = np.clip(np.asarray(spec.ripple(x), dtype=float), -1.0, 1.0)
            shift = np.where(p > spec.p_floor, spec.delta * ripple / np.maximum(p, 1e-300), 0.0)
            return np.asarray(self.base(x), dtype=float) + shift
        if self.manifold is None:
            raise ValueError(f"{type(spec).__name__} requires a manifold")
        inside = np.asarray(self.manifold.contains_batch(x), dtype=bool)
        outside = ~inside
        if isinstance(spec, RegressionShift):
            return np.asarray(self.base(x), dtype=float) + spec.delta * x[:, spec.feature] * outside
        if isinstance(spec, ClassifierShift):
            alt = ((1.0 - spec.delta) * x[:, spec.feature] > spec.threshold).astype(float)
            return np.asarray(self.base(x), dtype=float) * inside + alt * outside
        if isinstance(spec, OffManifoldGate):
            alt = (x[:, spec.feature] > 0).astype(float)
            return np.asarray(self.base(x), dtype=float) * inside + alt * outside
        if isinstance(spec, AdditiveOffset):
            return np.asarray(self.base(x), dtype=float) + spec.k * outside
        raise ValueError(f"unknown perturbation spec {type(spec).__name__}")


def build_perturbed(f: Model, manifold: Optional[object], spec: PerturbationSpec) -> PerturbedModel:
    """Bind a base model, manifold, and perturbation spec into a model."""
    return PerturbedModel(base=f, manifold=manifold, spec=spec)


def random_ripple(d: int, stream: RngStream, freq_scale: float = 1.0) -> Model:
    """A smooth function with |c(x)| <= 1: cos(w . x + b), random w and b."""
    gen = stream.generator()
    w = gen.standard_normal(d) * freq_scale
    b = gen.uniform(0.0, 2.0 * np.pi)

    def ripple(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.cos(x @ w + b)

    return ripple


@dataclass(frozen=True)
class RobustnessRow:
    coalition_mask: int
    v1: float
    v2: float
    absdiff: float


@dataclass(frozen=True)
class RobustnessReport:
    """Outcome of one robustness check.

    delta_hat is the probe-estimated perturbation norm (sup |f1 - f2| for
    the subspace form, sup |f1 - f2| p for the density-weighted form);
    bound is the claimed ceiling on |v1 - v2| and passed records whether
    every row respected it.
    """

    rows: tuple[RobustnessRow, ...]
    delta_hat: float
    t_claimed: float
    bound: float
    max_absdiff: float
    passed: bool
    n_probes: int
    kind: str

    def write_csv(self, path: Union[str, Path]) -> None:
        path = Path(path)
        with path.open("w", newline="") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(["coalition", "v1", "v2", "absdiff", "bound", "pass"])
            for row in self.rows:
                ok = row.absdiff <= self.bound + 1e-12
                writer.writerow(
                    [
                        row.coalition_mask,
                        repr(row.v1),
                        repr(row.v2),
                        repr(row.absdiff),
                        repr(self.bound),
                        str(bool(ok)).lower(),
                    ]
                )


def _paired_rows(
    vf_factory: Callable[[Model], object],
    f1: Model,
    f2: Model,
    coalitions: Sequence[Coalition],
    x: np.ndarray,
    stream: RngStream,
) -> list[RobustnessRow]:
    vf1 = vf_factory(f1)
    vf2 = vf_factory(f2)
    rows = []
    for coalition in coalitions:
        # Identical stream per coalition: differences isolate the models.
        v1 = float(vf1.evaluate(coalition, x, stream))
        v2 = float(vf2.evaluate(coalition, x, stream))
        rows.append(RobustnessRow(coalition.mask, v1, v2, abs(v1 - v2)))
    return rows


def check_subspace_robustness(
    vf_factory: Callable[[Model], object],
    f1: Model,
    f2: Model,
    zprime: Optional[object],
    probes: np.ndarray,
    coalitions: Sequence[Coalition],
    x: np.ndarray,
    stream: RngStream,
    t_claimed: float = 1.0,
) -> RobustnessReport:
    """Check |v1(S) - v2(S)| <= T * sup_{Z'} |f1 - f2| over the coalitions.

    probes must carry at least 1000 candidate points for the sup estimate;
    when ``zprime`` is given only probes inside it are used.  Value pairs
    share streams, so a value function that never reads f off Z' produces
    exact zeros.
    """
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if probes.shape[0] < 1000:
        raise ValueError("need at least 1000 probe points for the sup estimate")
    if zprime is not None:
        keep = np.asarray(zprime.contains_batch(probes), dtype=bool)
        probes = probes[keep]
        if probes.shape[0] == 0:
            raise ValueError("no probe points fall inside the given subspace")
    gap = np.abs(np.asarray(f1(probes), dtype=float) - np.asarray(f2(probes), dtype=float))
    delta_hat = float(gap.max())
    rows = _paired_rows(vf_factory, f1, f2, coalitions, x, stream)
    max_absdiff = max(row.absdiff for row in rows)
    bound = t_claimed * delta_hat
    return RobustnessReport(
        rows=tuple(rows),
        delta_hat=delta_hat,
        t_claimed=t_claimed,
        bound=bound,
        max_absdiff=max_absdiff,
        passed=max_absdiff <= bound + 1e-12,
        n_probes=probes.shape[0],
        kind="subspace",
    )


def check_t_robustness(
    vf_factory: Callable[[Model], object],
    f1: Model,
    perturbations: Sequence[Model],
    epsilon: float,
    delta: float,
    coalitions: Sequence[Coalition],
    x: np.ndarray,
    probes: np.ndarray,
    density: DensityFn,
    stream: RngStream,
    slack: float = 0.0,
) -> RobustnessReport:
    """Check |v1(S) - v2(S)| <= delta / epsilon over a perturbation family.

    The family must satisfy sup |f1 - f2| p <= delta by construction;
    delta_hat reports the probe-measured density-weighted sup as a sanity
    check.  ``slack`` widens the bound (for estimators whose claim carries
    a standard-error allowance).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if delta < 0:
        raise ValueError("delta must be non-negative")
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    p_vals = np.asarray(density(probes), dtype=float)
    f1_vals = np.asarray(f1(probes), dtype=float)
    rows: list[RobustnessRow] = []
    delta_hat = 0.0
    for f2 in perturbations:
        gap = np.abs(np.asarray(f2(probes), dtype=float) - f1_vals) * p_vals
        delta_hat = max(delta_hat, float(gap.max()))
        rows.extend(_paired_rows(vf_factory, f1, f2, coalitions, x, stream))
    max_absdiff = max(row.absdiff for row in rows)
    bound = delta / epsilon + slack
    return RobustnessReport(
        rows=tuple(rows),
        delta_hat=delta_hat,
        t_claimed=1.0 / epsilon,
        bound=bound,
        max_absdiff=max_absdiff,
        passed=max_absdiff <= bound + 1e-12,
        n_probes=probes.shape[0],
        kind="t_robust",
    )


def tv_distance_discrete(
    p: Mapping[tuple, float], q: Mapping[tuple, float]
) -> float:
    """Total variation distance (1/2) sum |p - q| between two pmfs.

    Both pmfs must enumerate the same outcome space and sum to one within
    1e-9; a mismatched support enumeration raises.
    """
    if set(p.keys()) != set(q.keys()):
        raise ValueError("pmfs enumerate different outcome spaces")
    sum_p = sum(p.values())
    sum_q = sum(q.values())
    if abs(sum_p - 1.0) > 1e-9 or abs(sum_q - 1.0) > 1e-9:
        raise ValueError("pmfs must each sum to 1 within 1e-9")
    return 0.5 * sum(abs(p[key] - q[key]) for key in p)
