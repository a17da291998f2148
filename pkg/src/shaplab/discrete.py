"""Finite-outcome causal models evaluated by exact enumeration.

For models whose exogenous noise takes finitely many values, every value
function has a closed form: enumerate noise configurations, propagate the
structural assignments, and sum.  This backend gives attribution answers
with no Monte-Carlo error, which makes it the reference implementation the
sampling paths are tested against.  Latent (unobserved) nodes are allowed,
so confounded feature pairs can be represented explicitly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .core import Coalition, RngStream

# Scalar mechanism: (parent values in declared order, noise value) -> value.
ScalarMechanism = Callable[[tuple[float, ...], float], float]
# Batch membership indicator over feature rows, same contract as manifolds.
MemberFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class FiniteNode:
    """Structural assignment whose noise has finite support."""

    name: str
    parents: tuple[str, ...]
    mechanism: ScalarMechanism
    noise_support: tuple[tuple[float, float], ...]  # (value, probability) pairs
    observed: bool = True

    def __post_init__(self) -> None:
        probs = [p for _, p in self.noise_support]
        if not probs:
            raise ValueError(f"node {self.name!r} has empty noise support")
        if any(p < 0 for p in probs) or abs(sum(probs) - 1.0) > 1e-9:
            raise ValueError(f"node {self.name!r} noise probabilities must sum to 1")


class FiniteScm:
    """Topologically ordered finite SCM over named nodes."""

    def __init__(self, nodes: Sequence[FiniteNode]) -> None:
        names = [node.name for node in nodes]
        if len(set(names)) != len(names):
            raise ValueError("node names must be unique")
        seen: set[str] = set()
        for node in nodes:
            for parent in node.parents:
                if parent not in seen:
                    raise ValueError(
                        f"node {node.name!r} references parent {parent!r} "
                        "before it is defined; nodes must be in topological order"
                    )
            seen.add(node.name)
        self.nodes = tuple(nodes)
        self.feature_names = tuple(n.name for n in nodes if n.observed)
        if not self.feature_names:
            raise ValueError("finite SCM defines no observed features")

    @property
    def d(self) -> int:
        return len(self.feature_names)

    def _pmf(self, fixed: Optional[dict[str, float]] = None) -> dict[tuple[float, ...], float]:
        """Joint pmf of the observed features, optionally under do(fixed)."""
        fixed = fixed or {}
        for name in fixed:
            if name not in self.feature_names:
                raise ValueError(f"cannot intervene on unknown or latent node {name!r}")
        pmf: dict[tuple[float, ...], float] = {}
        supports = [node.noise_support for node in self.nodes]
        for config in itertools.product(*supports):
            prob = 1.0
            values: dict[str, float] = {}
            for node, (eps, p_eps) in zip(self.nodes, config):
                prob *= p_eps
                if node.name in fixed:
                    values[node.name] = fixed[node.name]
                else:
                    parents = tuple(values[p] for p in node.parents)
                    values[node.name] = float(node.mechanism(parents, eps))
            if prob == 0.0:
                continue
            key = tuple(values[name] for name in self.feature_names)
            pmf[key] = pmf.get(key, 0.0) + prob
        return pmf

    def observational_pmf(self) -> dict[tuple[float, ...], float]:
        return self._pmf()

    def interventional_pmf(
        self, coalition: Coalition, values: np.ndarray
    ) -> dict[tuple[float, ...], float]:
        """Feature pmf under do(X_S = x_S)."""
        self._check(coalition)
        fixed = {
            self.feature_names[i]: float(values[j])
            for j, i in enumerate(coalition.members())
        }
        return self._pmf(fixed)

    def conditional_pmf(
        self, coalition: Coalition, values: np.ndarray
    ) -> dict[tuple[float, ...], float]:
        """Feature pmf conditioned on X_S = x_S; zero-probability events raise."""
        self._check(coalition)
        members = coalition.members()
        target = np.asarray(values, dtype=float)
        joint = self._pmf()
        kept = {
            outcome: p
            for outcome, p in joint.items()
            if all(outcome[i] == target[j] for j, i in enumerate(members))
        }
        total = sum(kept.values())
        if total == 0.0:
            raise ValueError(
                f"conditioning event X_S = {target.tolist()} has zero probability"
            )
        return {outcome: p / total for outcome, p in kept.items()}

    def _check(self, coalition: Coalition) -> None:
        if coalition.d != self.d:
            raise ValueError(
                f"coalition over d={coalition.d} does not match model d={self.d}"
            )


def _splice(outcome: tuple[float, ...], coalition: Coalition, x: np.ndarray) -> tuple[float, ...]:
    spliced = list(outcome)
    for i in coalition.members():
        spliced[i] = float(x[i])
    return tuple(spliced)


def _expectation(f, pmf: dict[tuple[float, ...], float]) -> float:
    outcomes = np.asarray(list(pmf.keys()), dtype=float)
    probs = np.asarray(list(pmf.values()), dtype=float)
    return float(np.asarray(f(outcomes), dtype=float) @ probs)


def is_value_exact(f, fscm: FiniteScm, coalition: Coalition, x: np.ndarray) -> float:
    """E[f(X) | do(X_S = x_S)] by enumeration."""
    x = np.asarray(x, dtype=float)
    pmf = fscm.interventional_pmf(coalition, x[coalition.members()])
    return _expectation(f, pmf)


def ms_value_exact(f, fscm: FiniteScm, coalition: Coalition, x: np.ndarray) -> float:
    """E[f(x_S, X_bar_S)] with the complement drawn from its joint marginal."""
    x = np.asarray(x, dtype=float)
    pmf = fscm.observational_pmf()
    spliced: dict[tuple[float, ...], float] = {}
    for outcome, p in pmf.items():
        key = _splice(outcome, coalition, x)
        spliced[key] = spliced.get(key, 0.0) + p
    return _expectation(f, spliced)


def ces_value_exact(f, fscm: FiniteScm, coalition: Coalition, x: np.ndarray) -> float:
    """E[f(X) | X_S = x_S] by enumeration."""
    x = np.asarray(x, dtype=float)
    if coalition.is_empty:
        return _expectation(f, fscm.observational_pmf())
    pmf = fscm.conditional_pmf(coalition, x[coalition.members()])
    return _expectation(f, pmf)


def restricted_pmf(
    fscm: FiniteScm, member: MemberFn, coalition: Coalition, x: np.ndarray
) -> dict[tuple[float, ...], float]:
    """Interventional pmf restricted to the member set and renormalized.

    This is the restricted interventional distribution: mass outside the
    set is dropped and the remainder rescaled to sum to one.  Raises when
    the set has zero interventional mass.
    """
    x = np.asarray(x, dtype=float)
    pmf = fscm.interventional_pmf(coalition, x[coalition.members()])
    outcomes = list(pmf.keys())
    inside = np.asarray(member(np.asarray(outcomes, dtype=float)), dtype=bool)
    kept = {o: p for o, p, keep in zip(outcomes, pmf.values(), inside) if keep}
    total = sum(kept.values())
    if total == 0.0:
        raise ValueError("restriction set has zero mass under the intervention")
    return {o: p / total for o, p in kept.items()}


def manifold_value_exact(
    f, fscm: FiniteScm, member: MemberFn, coalition: Coalition, x: np.ndarray
) -> float:
    """Restricted interventional expectation E[f(X) | do(X_S = x_S), X in Z]."""
    return _expectation(f, restricted_pmf(fscm, member, coalition, x))


class EnumeratedValue:
    """Exact value function over a finite SCM, pluggable into the engines.

    kind selects the semantics: "is" (interventional), "ms" (marginal),
    "ces" (conditional), or "manifold" (restricted interventional, which
    requires ``member``).  Evaluation is deterministic; the stream argument
    exists only to satisfy the shared engine interface.
    """

    def __init__(
        self,
        f,
        fscm: FiniteScm,
        kind: str = "is",
        member: Optional[MemberFn] = None,
    ) -> None:
        if kind not in ("is", "ms", "ces", "manifold"):
            raise ValueError(f"unknown kind {kind!r}")
        if kind == "manifold" and member is None:
            raise ValueError("manifold kind requires a member function")
        self.f = f
        self.fscm = fscm
        self.kind = kind
        self.member = member

    @property
    def d(self) -> int:
        return self.fscm.d

    def evaluate(self, coalition: Coalition, x: np.ndarray, stream: RngStream) -> float:
        if self.kind == "is":
            return is_value_exact(self.f, self.fscm, coalition, x)
        if self.kind == "ms":
            return ms_value_exact(self.f, self.fscm, coalition, x)
        if self.kind == "ces":
            return ces_value_exact(self.f, self.fscm, coalition, x)
        return manifold_value_exact(self.f, self.fscm, self.member, coalition, x)


def make_confounded_binary_pair(p: float) -> FiniteScm:
    """Binary feature pair driven by a latent coin.

    Z ~ Bernoulli(1/2) is latent; X1 copies Z; X2 copies Z with probability
    p and flips it otherwise.  Interventions on either feature leave the
    other one untouched because the dependence runs through Z alone.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    nodes = [
        FiniteNode(
            "Z", (), lambda parents, eps: eps, ((0.0, 0.5), (1.0, 0.5)), observed=False
        ),
        FiniteNode("X1", ("Z",), lambda parents, eps: parents[0], ((0.0, 1.0),)),
        FiniteNode(
            "X2",
            ("Z",),
            lambda parents, eps: parents[0] if eps == 1.0 else 1.0 - parents[0],
            ((1.0, p), (0.0, 1.0 - p)),
        ),
    ]
    return FiniteScm(nodes)
