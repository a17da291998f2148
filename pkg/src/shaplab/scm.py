"""Structural causal models with observational and do-intervention sampling.

An Scm is an explicit Markovian model: a topologically ordered list of
nodes, each with named parents, a vectorized mechanism, and an exogenous
noise term.  Interventions follow the truncated factorization: intervened
nodes are pinned to their values, everything else evaluates its mechanism
with fresh noise, so descendants move and non-descendants keep their law.

Noise for node k is always drawn from the sub-stream ``stream.child(k)``,
and every stochastic node consumes its draws even when intervened.  Two
samples produced from the same stream therefore share noise realizations
node by node regardless of which coalition is pinned, which is what makes
common-random-number estimates across coalitions possible.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
from scipy import stats

from .core import Coalition, Dataset, Model, RngStream

# Mechanism contract: (parent_matrix (n, n_parents), noise (n,)) -> (n,).
Mechanism = Callable[[np.ndarray, np.ndarray], np.ndarray]
DensityFn = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Noise:
    """Exogenous noise specification: gaussian, bernoulli, or degenerate."""

    kind: str
    mu: float = 0.0
    std: float = 1.0
    q: float = 0.5
    value: float = 0.0

    @classmethod
    def gaussian(cls, mu: float = 0.0, std: float = 1.0) -> "Noise":
        if std < 0:
            raise ValueError("std must be non-negative")
        return cls(kind="gaussian", mu=mu, std=std)

    @classmethod
    def bernoulli(cls, q: float) -> "Noise":
        if not 0.0 <= q <= 1.0:
            raise ValueError("bernoulli parameter must lie in [0, 1]")
        return cls(kind="bernoulli", q=q)

    @classmethod
    def degenerate(cls, value: float = 0.0) -> "Noise":
        return cls(kind="degenerate", value=value)

    def sample(self, n: int, gen: np.random.Generator) -> np.ndarray:
        if self.kind == "gaussian":
            return self.mu + self.std * gen.standard_normal(n)
        if self.kind == "bernoulli":
            return (gen.random(n) < self.q).astype(float)
        if self.kind == "degenerate":
            return np.full(n, self.value)
        raise ValueError(f"unknown noise kind {self.kind!r}")

    def mean(self) -> float:
        """Noise value used when a mechanism is evaluated deterministically."""
        if self.kind == "gaussian":
            return self.mu
        if self.kind == "bernoulli":
            return self.q
        return self.value


@dataclass(frozen=True)
class ScmNode:
    """One structural assignment: value = mechanism(parents, noise)."""

    name: str
    parents: tuple[str, ...]
    mechanism: Mechanism
    noise: Noise
    observed: bool = True


class Scm:
    """Markovian SCM over named nodes, with an optional designated output.

    Feature nodes are the observed nodes other than the output; feature
    order follows node declaration order.  When the joint feature density
    is known in closed form it can be attached as ``oracle_density``.
    """

    def __init__(
        self,
        nodes: Sequence[ScmNode],
        output: Optional[str] = None,
        oracle_density: Optional[DensityFn] = None,
    ) -> None:
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
        if output is not None and output not in names:
            raise ValueError(f"output node {output!r} is not defined")
        self.nodes: tuple[ScmNode, ...] = tuple(nodes)
        self.output = output
        self.oracle_density = oracle_density
        self.feature_names: tuple[str, ...] = tuple(
            node.name for node in nodes if node.observed and node.name != output
        )
        if not self.feature_names:
            raise ValueError("SCM defines no feature nodes")
        self._index = {name: k for k, name in enumerate(names)}

    @property
    def d(self) -> int:
        return len(self.feature_names)

    def noise_generators(self, stream: RngStream) -> list[np.random.Generator]:
        """One generator per node, keyed by node position in the stream."""
        return [stream.child(k).generator() for k in range(len(self.nodes))]

    def draw_noise(self, gens: Sequence[np.random.Generator], n: int) -> list[np.ndarray]:
        return [node.noise.sample(n, gen) for node, gen in zip(self.nodes, gens)]

    def propagate(
        self, noise: Sequence[np.ndarray], fixed: Optional[Mapping[str, float]] = None
    ) -> dict[str, np.ndarray]:
        """Evaluate all assignments, pinning nodes listed in ``fixed``."""
        fixed = fixed or {}
        n = len(noise[0]) if noise else 0
        values: dict[str, np.ndarray] = {}
        for node, eps in zip(self.nodes, noise):
            if node.name in fixed:
                values[node.name] = np.full(n, float(fixed[node.name]))
            else:
                parents = np.column_stack([values[p] for p in node.parents]) if node.parents else np.empty((n, 0))
                values[node.name] = np.asarray(node.mechanism(parents, eps), dtype=float)
        return values

    def sample_observational(self, n: int, stream: RngStream) -> Dataset:
        """Draw n rows from the observational distribution.

        The target column is the output node's sampled value when an output
        is designated.
        """
        if n < 1:
            raise ValueError("n must be >= 1")
        gens = self.noise_generators(stream)
        values = self.propagate(self.draw_noise(gens, n))
        rows = np.column_stack([values[name] for name in self.feature_names])
        target = values[self.output] if self.output is not None else None
        return Dataset(rows=rows, feature_names=self.feature_names, target=target)

    def sample_interventional(
        self, spec: "InterventionSpec", n: int, stream: RngStream
    ) -> np.ndarray:
        """Sample the complement features under do(X_S = x_S).

        Returns an (n, d - |S|) matrix whose columns follow increasing
        feature index.  An empty coalition reduces to observational rows.
        """
        if n < 1:
            raise ValueError("n must be >= 1")
        if spec.coalition.d != self.d:
            raise ValueError(
                f"intervention over d={spec.coalition.d} does not match SCM d={self.d}"
            )
        fixed = {
            self.feature_names[i]: spec.values[j]
            for j, i in enumerate(spec.coalition.members())
        }
        gens = self.noise_generators(stream)
        values = self.propagate(self.draw_noise(gens, n), fixed=fixed)
        complement = spec.coalition.complement_members()
        if complement.size == 0:
            return np.empty((n, 0))
        return np.column_stack([values[self.feature_names[i]] for i in complement])

    def ground_truth_model(self) -> Model:
        """The output mechanism as a deterministic model of the features.

        Noise is suppressed at its mean, so for a noiseless output node this
        is the structural assignment itself.  All parents of the output must
        be feature nodes.
        """
        if self.output is None:
            raise ValueError("SCM has no designated output node")
        node = self.nodes[self._index[self.output]]
        feature_pos = {name: k for k, name in enumerate(self.feature_names)}
        for parent in node.parents:
            if parent not in feature_pos:
                raise ValueError(
                    f"output parent {parent!r} is not a feature; "
                    "ground-truth model needs feature-only parents"
                )
        cols = [feature_pos[p] for p in node.parents]
        noise_mean = node.noise.mean()

        def model(x: np.ndarray) -> np.ndarray:
            x = np.atleast_2d(np.asarray(x, dtype=float))
            parents = x[:, cols] if cols else np.empty((x.shape[0], 0))
            eps = np.full(x.shape[0], noise_mean)
            return np.asarray(node.mechanism(parents, eps), dtype=float)

        return model


@dataclass(frozen=True)
class InterventionSpec:
    """do(X_S = x_S): a coalition together with the pinned values."""

    coalition: Coalition
    values: np.ndarray

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.coalition.size,):
            raise ValueError(
                f"{values.size} values for a coalition of size {self.coalition.size}"
            )
        if not np.all(np.isfinite(values)):
            raise ValueError("intervention values must be finite")
        values = values.copy()
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def conditional_moments(
    mean: np.ndarray, cov: np.ndarray, s_idx: np.ndarray, x_s: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Mean and covariance of the complement coordinates given X_S = x_S.

    Standard multivariate normal conditioning.  Raises ValueError when the
    conditioning block is singular.
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    d = mean.size
    s_idx = np.asarray(s_idx, dtype=int)
    c_idx = np.setdiff1d(np.arange(d), s_idx)
    if s_idx.size == 0:
        return mean.copy(), cov.copy()
    sigma_ss = cov[np.ix_(s_idx, s_idx)]
    try:
        solve = np.linalg.solve(sigma_ss, np.eye(s_idx.size))
    except np.linalg.LinAlgError as exc:
        raise ValueError("conditioning block of the covariance is singular") from exc
    if c_idx.size == 0:
        return np.empty(0), np.empty((0, 0))
    sigma_cs = cov[np.ix_(c_idx, s_idx)]
    regression = sigma_cs @ solve
    mu_bar = mean[c_idx] + regression @ (np.asarray(x_s, dtype=float) - mean[s_idx])
    cov_bar = cov[np.ix_(c_idx, c_idx)] - regression @ sigma_cs.T
    return mu_bar, cov_bar


@dataclass(frozen=True)
class GaussianConditional:
    """Conditional law of the complement of S under a joint Gaussian."""

    mean: np.ndarray
    cov: np.ndarray
    coalition: Coalition
    values: np.ndarray

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if mean.ndim != 1 or cov.shape != (mean.size, mean.size):
            raise ValueError("mean must be (d,), cov must be (d, d)")
        if not np.allclose(cov, cov.T):
            raise ValueError("covariance must be symmetric")
        if self.coalition.d != mean.size:
            raise ValueError("coalition dimension does not match the Gaussian")
        values = np.asarray(self.values, dtype=float)
        if values.shape != (self.coalition.size,):
            raise ValueError("values must match the coalition size")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "values", values)


def gaussian_conditional_sample(
    conditional: GaussianConditional, n: int, stream: RngStream
) -> np.ndarray:
    """Draw n samples of the complement coordinates given X_S = x_S.

    Conditioning on all features yields an (n, 0) matrix: the conditional
    is a point mass and there is nothing left to draw.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    mu_bar, cov_bar = conditional_moments(
        conditional.mean,
        conditional.cov,
        conditional.coalition.members(),
        conditional.values,
    )
    if mu_bar.size == 0:
        return np.empty((n, 0))
    try:
        chol = np.linalg.cholesky(cov_bar)
    except np.linalg.LinAlgError as exc:
        raise ValueError("conditional covariance is not positive definite") from exc
    z = stream.generator().standard_normal((n, mu_bar.size))
    return mu_bar + z @ chol.T


def mvn_density(mean: np.ndarray, cov: np.ndarray) -> DensityFn:
    """Vectorized multivariate normal density as a plain callable."""
    frozen = stats.multivariate_normal(mean=mean, cov=cov)

    def density(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return np.atleast_1d(frozen.pdf(x))

    return density


def _check_rho(rho: float) -> float:
    if not -1.0 < rho < 1.0:
        raise ValueError(f"correlation must lie strictly inside (-1, 1), got {rho}")
    return float(rho)


def make_dag_scm(rho: float = 0.85) -> Scm:
    """Two-feature chain X1 -> X2 with output Y = X1.

    X1 is standard normal and X2 = rho X1 + sqrt(1 - rho^2) eps, so the
    features are jointly normal with unit variances and correlation rho,
    but an intervention on X2 leaves X1 untouched.
    """
    rho = _check_rho(rho)
    scale = math.sqrt(1.0 - rho * rho)
    nodes = [
        ScmNode("X1", (), lambda p, e: e, Noise.gaussian()),
        ScmNode("X2", ("X1",), lambda p, e: rho * p[:, 0] + scale * e, Noise.gaussian()),
        ScmNode("Y", ("X1",), lambda p, e: p[:, 0], Noise.degenerate()),
    ]
    cov = np.array([[1.0, rho], [rho, 1.0]])
    return Scm(nodes, output="Y", oracle_density=mvn_density(np.zeros(2), cov))


def make_corr_gaussian_2d(rho: float = 0.90) -> Scm:
    """Correlated Gaussian pair with binary output Y = 1(X1 > 1/2)."""
    rho = _check_rho(rho)
    scale = math.sqrt(1.0 - rho * rho)
    nodes = [
        ScmNode("X1", (), lambda p, e: e, Noise.gaussian()),
        ScmNode("X2", ("X1",), lambda p, e: rho * p[:, 0] + scale * e, Noise.gaussian()),
        ScmNode("Y", ("X1",), lambda p, e: (p[:, 0] > 0.5).astype(float), Noise.degenerate()),
    ]
    cov = np.array([[1.0, rho], [rho, 1.0]])
    return Scm(nodes, output="Y", oracle_density=mvn_density(np.zeros(2), cov))


def make_sine_scm() -> Scm:
    """Sine-shaped manifold: X1 ~ N(0, 4), X2 | X1 ~ N(sin X1, 0.01), Y = X1."""
    nodes = [
        ScmNode("X1", (), lambda p, e: e, Noise.gaussian(std=2.0)),
        ScmNode("X2", ("X1",), lambda p, e: np.sin(p[:, 0]) + e, Noise.gaussian(std=0.1)),
        ScmNode("Y", ("X1",), lambda p, e: p[:, 0], Noise.degenerate()),
    ]

    def density(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p1 = stats.norm.pdf(x[:, 0], scale=2.0)
        p2 = stats.norm.pdf(x[:, 1], loc=np.sin(x[:, 0]), scale=0.1)
        return p1 * p2

    return Scm(nodes, output="Y", oracle_density=density)


def make_indep_gaussian_2d() -> Scm:
    """Two independent standard normal features, no designated output."""
    nodes = [
        ScmNode("X1", (), lambda p, e: e, Noise.gaussian()),
        ScmNode("X2", (), lambda p, e: e, Noise.gaussian()),
    ]
    return Scm(nodes, oracle_density=mvn_density(np.zeros(2), np.eye(2)))


def make_equicorrelated(d: int, rho: float = 0.9) -> Scm:
    """d equicorrelated unit-variance Gaussians via a shared latent factor.

    cov(X_i, X_j) = rho for i != j, realized as
    X_i = sqrt(rho) G + sqrt(1 - rho) eps_i with latent G.  Output Y = X1.
    Requires rho in [0, 1) so the factor construction is real.
    """
    if d < 2:
        raise ValueError("d must be >= 2")
    if not 0.0 <= rho < 1.0:
        raise ValueError(f"equicorrelated construction needs rho in [0, 1), got {rho}")
    load = math.sqrt(rho)
    resid = math.sqrt(1.0 - rho)
    nodes = [ScmNode("G", (), lambda p, e: e, Noise.gaussian(), observed=False)]
    for i in range(1, d + 1):
        nodes.append(
            ScmNode(
                f"X{i}",
                ("G",),
                lambda p, e, a=load, b=resid: a * p[:, 0] + b * e,
                Noise.gaussian(),
            )
        )
    nodes.append(ScmNode("Y", ("X1",), lambda p, e: p[:, 0], Noise.degenerate()))
    cov = (1.0 - rho) * np.eye(d) + rho * np.ones((d, d))
    return Scm(nodes, output="Y", oracle_density=mvn_density(np.zeros(d), cov))


SCM_BUILDERS: dict[str, Callable[..., Scm]] = {
    "dag_rho": make_dag_scm,
    "corr_gaussian_2d": make_corr_gaussian_2d,
    "sine": make_sine_scm,
    "indep_gaussian_2d": make_indep_gaussian_2d,
    "equicorrelated": make_equicorrelated,
}
