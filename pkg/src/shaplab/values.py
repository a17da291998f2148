"""Coalition value functions shared by the attribution engines.

Every variant exposes ``evaluate(coalition, x, stream) -> float`` and is a
pure function of its inputs: the same stream always reproduces the same
bits.  Monte-Carlo variants draw their randomness through sampler sessions
whose sequences depend only on the stream, never on the model under
explanation, so two models evaluated against the same stream see exactly
the same sample points.  That discipline is what makes linearity exact,
lets the full-coalition value collapse to f(x), and makes
manifold-restricted values bit-identical across models that differ only
off the manifold.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Protocol, Union

import numpy as np

from .core import Coalition, Dataset, Model, RngStream, ShaplabError
from .discrete import FiniteScm, ces_value_exact, is_value_exact
from .manifold import DensityFn
from .scm import Scm, InterventionSpec, conditional_moments

_MIN_CHUNK = 32


class AcceptanceFailure(ShaplabError):
    """Rejection sampling produced no accepted point within its budget."""

    def __init__(self, coalition: Coalition, attempts: int, detail: str = "") -> None:
        self.coalition_mask = coalition.mask
        self.attempts = attempts
        message = (
            f"no sample accepted for coalition mask {coalition.mask} "
            f"after {attempts} draws"
        )
        if detail:
            message += f" ({detail})"
        super().__init__(message)


class SamplerSession(Protocol):
    def draw(self, k: int) -> np.ndarray: ...


class ComplementSampler(Protocol):
    """Draws complement features for a pinned coalition.

    ``start`` opens a session whose consecutive ``draw`` calls consume one
    deterministic sequence; splitting a request into chunks changes nothing
    about the values drawn.
    """

    @property
    def d(self) -> int: ...

    def start(self, coalition: Coalition, x: np.ndarray, stream: RngStream) -> SamplerSession: ...


def compose(x: np.ndarray, coalition: Coalition, complement: np.ndarray) -> np.ndarray:
    """Assemble full points from pinned coalition values and drawn complements."""
    k = complement.shape[0]
    points = np.tile(np.asarray(x, dtype=float), (k, 1))
    comp_idx = coalition.complement_members()
    if comp_idx.size:
        points[:, comp_idx] = complement
    return points


class _RowSession:
    def __init__(self, rows: np.ndarray, comp_idx: np.ndarray, gen: np.random.Generator) -> None:
        self._rows = rows
        self._comp_idx = comp_idx
        self._gen = gen

    def draw(self, k: int) -> np.ndarray:
        idx = self._gen.integers(0, self._rows.shape[0], size=k)
        return self._rows[np.ix_(idx, self._comp_idx)]


@dataclass(frozen=True)
class RowSampler:
    """Complement draws by resampling dataset rows with replacement.

    This is both the marginal sampler and the interventional sampler for
    the structure where each input feature is a leaf of its own latent
    cause, since intervening there coincides with marginalization.
    """

    data: Dataset

    @property
    def d(self) -> int:
        return self.data.d

    def start(self, coalition: Coalition, x: np.ndarray, stream: RngStream) -> _RowSession:
        return _RowSession(self.data.rows, coalition.complement_members(), stream.generator())


class _ScmSession:
    def __init__(self, scm: Scm, fixed: Optional[dict], comp_idx: np.ndarray, gens) -> None:
        self._scm = scm
        self._fixed = fixed
        self._comp_idx = comp_idx
        self._gens = gens

    def draw(self, k: int) -> np.ndarray:
        noise = self._scm.draw_noise(self._gens, k)
        values = self._scm.propagate(noise, fixed=self._fixed)
        names = self._scm.feature_names
        if self._comp_idx.size == 0:
            return np.empty((k, 0))
        return np.column_stack([values[names[i]] for i in self._comp_idx])


@dataclass(frozen=True)
class GraphSampler:
    """do-interventional complement draws via the truncated factorization."""

    scm: Scm

    @property
    def d(self) -> int:
        return self.scm.d

    def start(self, coalition: Coalition, x: np.ndarray, stream: RngStream) -> _ScmSession:
        # Validates coalition/value shapes up front.
        spec = InterventionSpec(coalition, np.asarray(x, dtype=float)[coalition.members()])
        fixed = {
            self.scm.feature_names[i]: float(spec.values[j])
            for j, i in enumerate(coalition.members())
        }
        return _ScmSession(self.scm, fixed, coalition.complement_members(), self.scm.noise_generators(stream))


@dataclass(frozen=True)
class ObservationalSampler:
    """Complement draws from fresh observational samples of an SCM.

    Use this where interventions reduce to marginalization; the intervened
    coordinates of each draw are simply discarded.
    """

    scm: Scm

    @property
    def d(self) -> int:
        return self.scm.d

    def start(self, coalition: Coalition, x: np.ndarray, stream: RngStream) -> _ScmSession:
        return _ScmSession(self.scm, None, coalition.complement_members(), self.scm.noise_generators(stream))


class _GaussianSession:
    def __init__(self, mu: np.ndarray, chol: np.ndarray, gen: np.random.Generator) -> None:
        self._mu = mu
        self._chol = chol
        self._gen = gen

    def draw(self, k: int) -> np.ndarray:
        if self._mu.size == 0:
            return np.empty((k, 0))
        z = self._gen.standard_normal((k, self._mu.size))
        return self._mu + z @ self._chol.T


class GaussianBackend:
    """Analytic conditional sampler for a joint Gaussian feature law.

    Per-coalition conditional moments are cached by mask, so repeated
    evaluations across points pay the linear algebra once.
    """

    def __init__(self, mean: np.ndarray, cov: np.ndarray) -> None:
        self.mean = np.asarray(mean, dtype=float)
        self.cov = np.asarray(cov, dtype=float)
        if self.mean.ndim != 1 or self.cov.shape != (self.mean.size, self.mean.size):
            raise ValueError("mean must be (d,), cov must be (d, d)")
        self._cache: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = {}

    @property
    def d(self) -> int:
        return self.mean.size

    def _blocks(self, coalition: Coalition) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        cached = self._cache.get(coalition.mask)
        if cached is not None:
            return cached
        s_idx = coalition.members()
        c_idx = coalition.complement_members()
        _, cov_bar = conditional_moments(self.mean, self.cov, s_idx, self.mean[s_idx])
        if s_idx.size:
            sigma_ss = self.cov[np.ix_(s_idx, s_idx)]
            regression = self.cov[np.ix_(c_idx, s_idx)] @ np.linalg.solve(sigma_ss, np.eye(s_idx.size))
        else:
            regression = np.empty((c_idx.size, 0))
        chol = np.linalg.cholesky(cov_bar) if cov_bar.size else np.empty((0, 0))
        blocks = (s_idx, c_idx, regression, chol)
        self._cache[coalition.mask] = blocks
        return blocks

    def start(self, coalition: Coalition, x: np.ndarray, stream: RngStream) -> _GaussianSession:
        s_idx, c_idx, regression, chol = self._blocks(coalition)
        x = np.asarray(x, dtype=float)
        mu = self.mean[c_idx] + regression @ (x[s_idx] - self.mean[s_idx])
        return _GaussianSession(mu, chol, stream.generator())


ValueBackend = Union[RowSampler, GraphSampler, ObservationalSampler, GaussianBackend]


class MonteCarloValue:
    """v(S) = mean of f over complement draws with x_S pinned.

    Covers marginal, interventional, and analytic-conditional values; the
    sampler decides the semantics.  The full coalition needs no draws and
    returns f(x) exactly.
    """

    def __init__(self, f: Model, sampler: ComplementSampler, m: int) -> None:
        if m < 1:
            raise ValueError("m must be >= 1")
        self.f = f
        self.sampler = sampler
        self.m = m

    @property
    def d(self) -> int:
        return self.sampler.d

    def evaluate(self, coalition: Coalition, x: np.ndarray, stream: RngStream) -> float:
        if coalition.is_full:
            return float(np.asarray(self.f(np.atleast_2d(x)))[0])
        session = self.sampler.start(coalition, x, stream)
        points = compose(x, coalition, session.draw(self.m))
        return float(np.mean(np.asarray(self.f(points), dtype=float)))


class CesSurrogate:
    """k-NN regression of f(X) on masked inputs, a direct estimate of CES.

    Training pairs hold the visible coordinates of a sampled row (the rest
    are masked out as NaN) together with the full-row model output.  A
    query (x_S, S) searches only training pairs whose visible set covers S
    and measures z-scored Euclidean distance over the S coordinates alone.
    """

    def __init__(
        self,
        values: np.ndarray,
        masks: np.ndarray,
        targets: np.ndarray,
        k: int,
        scale: np.ndarray,
    ) -> None:
        self.values = values
        self.masks = masks
        self.targets = targets
        self.k = k
        self.scale = scale

    @property
    def d(self) -> int:
        return self.values.shape[1]

    def predict(self, x: np.ndarray, coalition: Coalition) -> float:
        if coalition.is_empty:
            # Nothing to match on: the conditional mean is the plain mean.
            return float(self.targets.mean())
        candidates = np.flatnonzero((self.masks & coalition.mask) == coalition.mask)
        s_idx = coalition.members()
        x = np.asarray(x, dtype=float)
        diffs = (self.values[np.ix_(candidates, s_idx)] - x[s_idx]) / self.scale[s_idx]
        sq_dist = np.einsum("ij,ij->i", diffs, diffs)
        k = min(self.k, candidates.size)
        nearest = np.argpartition(sq_dist, k - 1)[:k] if k < candidates.size else np.arange(candidates.size)
        return float(self.targets[candidates[nearest]].mean())


class SurrogateValue:
    """Value function adapter around a fitted CES surrogate."""

    def __init__(self, surrogate: CesSurrogate) -> None:
        self.surrogate = surrogate

    @property
    def d(self) -> int:
        return self.surrogate.d

    def evaluate(self, coalition: Coalition, x: np.ndarray, stream: RngStream) -> float:
        return self.surrogate.predict(x, coalition)


class JointBaselineValue:
    """v(S) = f(x_S, b_comp) * p(x_S, b_comp) with a fixed auxiliary baseline."""

    def __init__(self, f: Model, density: DensityFn, baseline: np.ndarray) -> None:
        self.f = f
        self.density = density
        self.baseline = np.asarray(baseline, dtype=float)
        if self.baseline.ndim != 1:
            raise ValueError("baseline must be a 1-D point")

    @property
    def d(self) -> int:
        return self.baseline.size

    def evaluate(self, coalition: Coalition, x: np.ndarray, stream: RngStream) -> float:
        point = compose(x, coalition, self.baseline[coalition.complement_members()][None, :])
        return float(np.asarray(self.f(point))[0] * np.asarray(self.density(point))[0])


class RandomJointBaselineValue:
    """v(S) = E[f(x_S, B) p(x_S, B)] with B drawn from the marginal rows."""

    def __init__(self, f: Model, density: DensityFn, data: Dataset, m: int) -> None:
        if m < 1:
            raise ValueError("m must be >= 1")
        self.f = f
        self.density = density
        self._sampler = RowSampler(data)
        self.m = m

    @property
    def d(self) -> int:
        return self._sampler.d

    def evaluate(self, coalition: Coalition, x: np.ndarray, stream: RngStream) -> float:
        if coalition.is_full:
            point = np.atleast_2d(x)
            return float(np.asarray(self.f(point))[0] * np.asarray(self.density(point))[0])
        session = self._sampler.start(coalition, x, stream)
        points = compose(x, coalition, session.draw(self.m))
        f_vals = np.asarray(self.f(points), dtype=float)
        p_vals = np.asarray(self.density(points), dtype=float)
        return float(np.mean(f_vals * p_vals))


class ManifoldValue:
    """Restricted interventional value E[f(X) | do(X_S = x_S), X in Z].

    Two estimators are available.  "rejection" redraws until m points land
    inside Z, giving the restricted mean directly; the total draw budget is
    cap_factor * m, and exhausting it with zero acceptances raises
    AcceptanceFailure.  "ratio" draws m unrestricted points and returns
    sum(f over accepted) / count(accepted), the sample form of the
    indicator-ratio identity.  Either way f is evaluated only on points
    inside Z, so models that agree on Z produce bit-identical values.
    """

    def __init__(
        self,
        f: Model,
        manifold,
        sampler: ComplementSampler,
        m: int,
        estimator: str = "rejection",
        cap_factor: int = 200,
    ) -> None:
        if m < 1:
            raise ValueError("m must be >= 1")
        if estimator not in ("rejection", "ratio"):
            raise ValueError(f"unknown estimator {estimator!r}")
        if cap_factor < 1:
            raise ValueError("cap_factor must be >= 1")
        self.f = f
        self.manifold = manifold
        self.sampler = sampler
        self.m = m
        self.estimator = estimator
        self.cap_factor = cap_factor

    @property
    def d(self) -> int:
        return self.sampler.d

    def evaluate(self, coalition: Coalition, x: np.ndarray, stream: RngStream) -> float:
        if coalition.is_full:
            if not self.manifold.contains(np.asarray(x, dtype=float)):
                raise ValueError(
                    "instance lies outside the restriction set; the restricted "
                    "value is undefined there"
                )
            return float(np.asarray(self.f(np.atleast_2d(x)))[0])
        session = self.sampler.start(coalition, x, stream)
        if self.estimator == "ratio":
            points = compose(x, coalition, session.draw(self.m))
            keep = np.asarray(self.manifold.contains_batch(points), dtype=bool)
            n_in = int(keep.sum())
            if n_in == 0:
                raise AcceptanceFailure(coalition, self.m, "ratio estimator")
            return float(np.sum(np.asarray(self.f(points[keep]), dtype=float)) / n_in)
        budget = self.cap_factor * self.m
        drawn = 0
        accepted = 0
        total = 0.0
        while accepted < self.m and drawn < budget:
            k = min(budget - drawn, max(self.m - accepted, _MIN_CHUNK))
            points = compose(x, coalition, session.draw(k))
            drawn += k
            keep = np.asarray(self.manifold.contains_batch(points), dtype=bool)
            kept = points[keep]
            if kept.shape[0]:
                take = min(self.m - accepted, kept.shape[0])
                total += float(np.sum(np.asarray(self.f(kept[:take]), dtype=float)))
                accepted += take
        if accepted == 0:
            raise AcceptanceFailure(coalition, drawn, "rejection estimator")
        return total / accepted


def ms_value(
    f: Model, data: Dataset, coalition: Coalition, x: np.ndarray, m: int, stream: RngStream
) -> float:
    """Marginal value: complement features resampled from dataset rows."""
    return MonteCarloValue(f, RowSampler(data), m).evaluate(coalition, x, stream)


def _interventional_backend(backend) -> ComplementSampler:
    if isinstance(backend, Dataset):
        return RowSampler(backend)
    if isinstance(backend, Scm):
        return GraphSampler(backend)
    return backend


def is_value(
    f: Model, backend, coalition: Coalition, x: np.ndarray, m: int, stream: RngStream
) -> float:
    """Interventional value E[f(X) | do(X_S = x_S)].

    backend may be an Scm (truncated-factorization do), a Dataset (row
    resampling, for the structure where interventions marginalize), any
    complement sampler, or a FiniteScm for exact enumeration.
    """
    if isinstance(backend, FiniteScm):
        return is_value_exact(f, backend, coalition, np.asarray(x, dtype=float))
    return MonteCarloValue(f, _interventional_backend(backend), m).evaluate(coalition, x, stream)


def ces_value(
    f: Model, backend, coalition: Coalition, x: np.ndarray, m: int, stream: RngStream
) -> float:
    """Conditional value E[f(X) | X_S = x_S].

    backend may be a GaussianBackend (analytic conditional, Monte Carlo),
    a FiniteScm (exact enumeration; zero-probability conditioning raises),
    or a CesSurrogate (returns the regression output directly).
    """
    if isinstance(backend, FiniteScm):
        return ces_value_exact(f, backend, coalition, np.asarray(x, dtype=float))
    if isinstance(backend, CesSurrogate):
        return backend.predict(np.asarray(x, dtype=float), coalition)
    return MonteCarloValue(f, backend, m).evaluate(coalition, x, stream)


def jb_value(
    f: Model, density: DensityFn, baseline: np.ndarray, coalition: Coalition, x: np.ndarray
) -> float:
    """Joint-baseline value f(x_S, b) p(x_S, b); no sampling involved."""
    return JointBaselineValue(f, density, baseline).evaluate(coalition, x, RngStream(0))


def rjb_value(
    f: Model,
    density: DensityFn,
    data: Dataset,
    coalition: Coalition,
    x: np.ndarray,
    m: int,
    stream: RngStream,
) -> float:
    """Randomized joint-baseline value E[f(x_S, B) p(x_S, B)], B ~ marginal rows."""
    return RandomJointBaselineValue(f, density, data, m).evaluate(coalition, x, stream)


def manifold_value(
    f: Model,
    manifold,
    backend,
    coalition: Coalition,
    x: np.ndarray,
    m: int,
    stream: RngStream,
    estimator: str = "rejection",
    cap_factor: int = 200,
) -> float:
    """Restricted interventional value; see ManifoldValue for estimators."""
    sampler = _interventional_backend(backend)
    return ManifoldValue(f, manifold, sampler, m, estimator=estimator, cap_factor=cap_factor).evaluate(
        coalition, x, stream
    )


def median_baseline(data: Dataset) -> np.ndarray:
    """Component-wise median of the dataset rows, the default JB baseline."""
    return np.median(data.rows, axis=0)


def fit_ces_surrogate(
    f: Model,
    data: Dataset,
    stream: RngStream,
    n_coalition_draws: int = 20000,
    k: int = 25,
) -> CesSurrogate:
    """Fit the masked k-NN surrogate for conditional values.

    Training pairs are built by resampling dataset rows and drawing a
    coalition per row from the Shapley distribution (uniform permutation,
    uniform cut position), so coalition sizes appear with the weights the
    attribution formula uses.  Targets are the model outputs on the full
    rows.
    """
    if data.n < 10:
        raise ValueError("surrogate fitting needs at least 10 rows")
    if n_coalition_draws < 1:
        raise ValueError("n_coalition_draws must be >= 1")
    if k < 1:
        raise ValueError("k must be >= 1")
    n, d = data.n, data.d
    gen = stream.generator()
    row_idx = gen.integers(0, n, size=n_coalition_draws)
    rows = data.rows[row_idx]
    cuts = gen.integers(0, d + 1, size=n_coalition_draws)
    orders = np.argsort(gen.random((n_coalition_draws, d)), axis=1)
    masks = np.zeros(n_coalition_draws, dtype=np.int64)
    for j in range(d):
        active = cuts > j
        masks[active] |= np.int64(1) << orders[active, j].astype(np.int64)
    targets = np.asarray(f(rows), dtype=float)
    visible = (masks[:, None] >> np.arange(d)) & 1
    values = np.where(visible.astype(bool), rows, np.nan)
    scale = data.rows.std(axis=0, ddof=1)
    scale[scale == 0] = 1.0
    return CesSurrogate(values=values, masks=masks, targets=targets, k=k, scale=scale)
