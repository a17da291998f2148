"""Attribution engines: exact enumeration and permutation estimators.

All engines hand the value function streams derived from one base stream,
and the exact engine hands every coalition the *same* stream.  Monte-Carlo
value functions therefore see common random numbers across coalitions:
differences v(S u i) - v(S) are computed on shared draws, the efficiency
identity holds to rounding error rather than Monte-Carlo error, and value
functions that ignore a feature yield exact zeros for it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Attribution, Coalition, Model, RngStream, as_instance, shapley_weight
from .values import AcceptanceFailure, ComplementSampler, _interventional_backend, compose

_ACCEPT_CHUNK0 = 4
_ACCEPT_CHUNK_MAX = 256


class EvalCache:
    """Per-coalition memo for one (value function, x) pair.

    Each coalition is evaluated at most once; repeat queries return the
    stored float.  Query and evaluation counters are exposed so tests can
    assert the single-evaluation property.
    """

    def __init__(self, vf) -> None:
        self.vf = vf
        self._store: dict[int, float] = {}
        self.n_queries = 0
        self.n_evaluations = 0

    def value(self, coalition: Coalition, x: np.ndarray, stream: RngStream) -> float:
        self.n_queries += 1
        key = coalition.mask
        if key not in self._store:
            self.n_evaluations += 1
            self._store[key] = float(self.vf.evaluate(coalition, x, stream))
        return self._store[key]


@dataclass(frozen=True)
class PermutationPlan:
    """Stream layout for a permutation run: one child stream per index."""

    n_permutations: int
    base: RngStream

    def __post_init__(self) -> None:
        if self.n_permutations < 1:
            raise ValueError("n_permutations must be >= 1")

    def stream(self, k: int) -> RngStream:
        return self.base.child(k)


def exact_shapley(vf, x: np.ndarray, stream: RngStream, guard: int = 20) -> Attribution:
    """Exact Shapley attribution by full coalition enumeration.

    Evaluates all 2^d coalition values once through an EvalCache, passing
    every coalition the same stream (common random numbers).  Guarded
    against dimensions where 2^d enumeration is unreasonable; use a
    permutation engine beyond the guard.
    """
    x = as_instance(x)
    d = vf.d
    if x.size != d:
        raise ValueError(f"instance has {x.size} features, value function expects {d}")
    if d > guard:
        raise ValueError(
            f"d={d} exceeds the exact-enumeration guard ({guard}); "
            "use permutation_shapley instead"
        )
    cache = EvalCache(vf)
    n_masks = 1 << d
    v = np.empty(n_masks)
    for mask in range(n_masks):
        v[mask] = cache.value(Coalition(mask, d), x, stream)
    weights = np.array([shapley_weight(s, d) for s in range(d)])
    popcount = np.bitwise_count(np.arange(n_masks))
    masks = np.arange(n_masks)
    phi = np.empty(d)
    for i in range(d):
        bit = 1 << i
        without = masks[(masks & bit) == 0]
        phi[i] = float(np.sum(weights[popcount[without]] * (v[without | bit] - v[without])))
    return Attribution(
        phi=phi,
        value_empty=float(v[0]),
        value_full=float(v[n_masks - 1]),
        n_samples=cache.n_evaluations,
    )


def permutation_shapley(
    vf,
    x: np.ndarray,
    n_permutations: int,
    stream: RngStream,
    antithetic: bool = False,
) -> Attribution:
    """Unbiased permutation-sampling Shapley estimate.

    Each permutation walks its prefix chain with a dedicated stream;
    prefix evaluations inside one permutation share that stream, so
    Monte-Carlo value functions difference out common noise.  Standard
    errors come from the across-permutation variance of the per-feature
    contributions.  With ``antithetic``, odd permutations reverse their
    predecessor (an opt-in variance reduction; estimates stay unbiased).
    """
    x = as_instance(x)
    d = vf.d
    if x.size != d:
        raise ValueError(f"instance has {x.size} features, value function expects {d}")
    plan = PermutationPlan(n_permutations, stream)
    contrib = np.empty((n_permutations, d))
    empties = np.empty(n_permutations)
    fulls = np.empty(n_permutations)
    previous_perm: Optional[np.ndarray] = None
    for k in range(n_permutations):
        sk = plan.stream(k)
        if antithetic and k % 2 == 1 and previous_perm is not None:
            perm = previous_perm[::-1]
        else:
            perm = sk.child(0).generator().permutation(d)
        previous_perm = perm
        vstream = sk.child(1)
        mask = 0
        prev = float(vf.evaluate(Coalition.empty(d), x, vstream))
        empties[k] = prev
        for feat in perm:
            mask |= 1 << int(feat)
            cur = float(vf.evaluate(Coalition(mask, d), x, vstream))
            contrib[k, feat] = cur - prev
            prev = cur
        fulls[k] = prev
    phi = contrib.mean(axis=0)
    std_errors = (
        contrib.std(axis=0, ddof=1) / math.sqrt(n_permutations)
        if n_permutations > 1
        else None
    )
    return Attribution(
        phi=phi,
        value_empty=float(empties.mean()),
        value_full=float(fulls.mean()),
        n_samples=n_permutations * (d + 1),
        std_errors=std_errors,
    )


def _accept_one(
    f: Model,
    manifold,
    sampler: ComplementSampler,
    coalition: Coalition,
    x: np.ndarray,
    stream: RngStream,
    cap: int,
) -> float:
    """f at the first interventional draw that lands inside the manifold."""
    if coalition.is_full:
        return float(np.asarray(f(np.atleast_2d(x)))[0])
    session = sampler.start(coalition, x, stream)
    drawn = 0
    chunk = _ACCEPT_CHUNK0
    while drawn < cap:
        k = min(chunk, cap - drawn)
        points = compose(x, coalition, session.draw(k))
        drawn += k
        if manifold is None:
            return float(np.asarray(f(points[:1]))[0])
        keep = np.asarray(manifold.contains_batch(points), dtype=bool)
        hits = np.flatnonzero(keep)
        if hits.size:
            return float(np.asarray(f(points[hits[0] : hits[0] + 1]))[0])
        chunk = min(chunk * 2, _ACCEPT_CHUNK_MAX)
    raise AcceptanceFailure(coalition, drawn, "permutation prefix draw")


def manifold_permutation_shapley(
    f: Model,
    manifold,
    backend,
    x: np.ndarray,
    n_permutations: int,
    stream: RngStream,
    literal: bool = False,
    cap: int = 200,
) -> Attribution:
    """Permutation Shapley estimate of the manifold-restricted value.

    Per permutation and coalition, interventional draws are rejected until
    one lands inside the manifold, then the model is evaluated on that
    point alone; the model is never evaluated off the manifold.  The
    default walks each permutation's prefix chain, reusing one accepted
    point per prefix for the two adjacent features.  ``literal`` instead
    draws two fresh accepted points per feature (the textbook rejection
    estimator); both are unbiased, the shared walk just halves the
    sampling work.  Pass ``manifold=None`` for an unrestricted run, which
    reduces to plain interventional permutation sampling.

    Raises AcceptanceFailure, naming the coalition, when a prefix exhausts
    ``cap`` draws with no accepted point.
    """
    x = as_instance(x)
    sampler = _interventional_backend(backend)
    d = sampler.d
    if x.size != d:
        raise ValueError(f"instance has {x.size} features, sampler expects {d}")
    if cap < 1:
        raise ValueError("cap must be >= 1")
    if manifold is not None and not manifold.contains(x):
        raise ValueError(
            "instance lies outside the restriction set; restricted attribution "
            "is undefined there"
        )
    plan = PermutationPlan(n_permutations, stream)
    contrib = np.empty((n_permutations, d))
    empties = np.empty(n_permutations)
    fulls = np.empty(n_permutations)
    for k in range(n_permutations):
        sk = plan.stream(k)
        perm = sk.child(0).generator().permutation(d)
        vstream = sk.child(1)
        if literal:
            mask = 0
            empties[k] = _accept_one(f, manifold, sampler, Coalition.empty(d), x, vstream, cap)
            for feat in perm:
                feat = int(feat)
                with_i = Coalition(mask | (1 << feat), d)
                without_i = Coalition(mask, d)
                y = _accept_one(f, manifold, sampler, with_i, x, vstream, cap)
                z = _accept_one(f, manifold, sampler, without_i, x, vstream, cap)
                contrib[k, feat] = y - z
                mask |= 1 << feat
            fulls[k] = float(np.asarray(f(np.atleast_2d(x)))[0])
        else:
            mask = 0
            prev = _accept_one(f, manifold, sampler, Coalition.empty(d), x, vstream, cap)
            empties[k] = prev
            for feat in perm:
                feat = int(feat)
                mask |= 1 << feat
                cur = _accept_one(f, manifold, sampler, Coalition(mask, d), x, vstream, cap)
                contrib[k, feat] = cur - prev
                prev = cur
            fulls[k] = prev
    phi = contrib.mean(axis=0)
    std_errors = (
        contrib.std(axis=0, ddof=1) / math.sqrt(n_permutations)
        if n_permutations > 1
        else None
    )
    return Attribution(
        phi=phi,
        value_empty=float(empties.mean()),
        value_full=float(fulls.mean()),
        n_samples=n_permutations * (d + 1),
        std_errors=std_errors,
    )
