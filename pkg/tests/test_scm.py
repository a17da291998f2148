"""Structural causal models: sampling, interventions, Gaussian conditionals, builders."""

import numpy as np
import pytest
from scipy import stats

from shaplab import (
    Coalition,
    InterventionSpec,
    Noise,
    RngStream,
    Scm,
    ScmNode,
    conditional_moments,
    make_corr_gaussian_2d,
    make_dag_scm,
    make_equicorrelated,
    make_indep_gaussian_2d,
    make_sine_scm,
)
from shaplab.scm import SCM_BUILDERS, GaussianConditional, gaussian_conditional_sample


def spec_for(scm, members, values):
    return InterventionSpec(
        coalition=Coalition.from_members(members, scm.d),
        values=np.asarray(values, dtype=float),
    )


# ---------------------------------------------------------------------------
# Builders: observational laws
# ---------------------------------------------------------------------------


def test_chain_scm_observational_moments():
    scm = make_dag_scm(rho=0.85)
    data = scm.sample_observational(100_000, RngStream(0))
    corr = np.corrcoef(data.rows[:, 0], data.rows[:, 1])[0, 1]
    assert corr == pytest.approx(0.85, abs=0.01)
    assert data.rows[:, 0].mean() == pytest.approx(0.0, abs=0.02)
    assert data.rows[:, 1].var() == pytest.approx(1.0, abs=0.03)
    assert np.array_equal(data.target, data.rows[:, 0])


def test_chain_scm_oracle_density_matches_samples():
    scm = make_dag_scm(rho=0.85)
    data = scm.sample_observational(50_000, RngStream(1))
    # Average oracle density against the analytic value at the mode.
    peak = scm.oracle_density(np.zeros((1, 2)))[0]
    expected = 1.0 / (2 * np.pi * np.sqrt(1 - 0.85**2))
    assert peak == pytest.approx(expected, rel=1e-9)
    assert scm.oracle_density(data.rows[:5]).shape == (5,)


def test_sine_scm_conditional_mean_and_variance():
    scm = make_sine_scm()
    data = scm.sample_observational(10_000, RngStream(2))
    x1, x2 = data.rows[:, 0], data.rows[:, 1]
    assert np.mean(x2 - np.sin(x1)) == pytest.approx(0.0, abs=0.01)
    assert x1.var() == pytest.approx(4.0, abs=0.15)


def test_classifier_scm_output_is_threshold():
    scm = make_corr_gaussian_2d(rho=0.9)
    data = scm.sample_observational(5_000, RngStream(3))
    assert np.array_equal(data.target, (data.rows[:, 0] > 0.5).astype(float))
    corr = np.corrcoef(data.rows[:, 0], data.rows[:, 1])[0, 1]
    assert corr == pytest.approx(0.9, abs=0.02)


def test_equicorrelated_builder_covariance_structure():
    scm = make_equicorrelated(10, rho=0.9)
    assert scm.d == 10
    data = scm.sample_observational(30_000, RngStream(4))
    cov = np.cov(data.rows.T)
    off = cov[~np.eye(10, dtype=bool)]
    assert np.abs(np.diag(cov) - 1.0).max() < 0.05
    assert np.abs(off - 0.9).max() < 0.04
    # The analytic covariance has one factor eigenvalue and d-1 noise ones.
    analytic = 0.1 * np.eye(10) + 0.9 * np.ones((10, 10))
    eig = np.linalg.eigvalsh(analytic)
    assert eig[-1] == pytest.approx(1 + 9 * 0.9, rel=1e-12)
    assert np.allclose(eig[:-1], 0.1)


def test_builder_rho_bounds():
    for rho in (1.0, -1.0, 1.5):
        with pytest.raises(ValueError):
            make_dag_scm(rho=rho)
        with pytest.raises(ValueError):
            make_corr_gaussian_2d(rho=rho)
    with pytest.raises(ValueError):
        make_equicorrelated(10, rho=1.0)
    with pytest.raises(ValueError):
        make_equicorrelated(10, rho=-0.1)
    with pytest.raises(ValueError):
        make_equicorrelated(1, rho=0.5)


BUILDER_ARGS = {"equicorrelated": (4,)}


def test_builder_registry_names():
    assert set(SCM_BUILDERS) == {
        "dag_rho",
        "corr_gaussian_2d",
        "sine",
        "indep_gaussian_2d",
        "equicorrelated",
    }
    for name, builder in SCM_BUILDERS.items():
        scm = builder(*BUILDER_ARGS.get(name, ()))
        assert scm.d >= 2, name


# ---------------------------------------------------------------------------
# Interventions
# ---------------------------------------------------------------------------


def test_intervening_on_cause_shifts_effect():
    scm = make_dag_scm(rho=0.85)
    draws = scm.sample_interventional(spec_for(scm, [0], [1.0]), 20_000, RngStream(5))
    assert draws.shape == (20_000, 1)
    assert draws[:, 0].mean() == pytest.approx(0.85, abs=0.02)
    assert draws[:, 0].var() == pytest.approx(1 - 0.85**2, abs=0.02)


def test_intervening_on_effect_leaves_cause_marginal():
    scm = make_dag_scm(rho=0.85)
    draws = scm.sample_interventional(spec_for(scm, [1], [2.0]), 20_000, RngStream(6))
    assert draws.shape == (20_000, 1)
    assert draws[:, 0].mean() == pytest.approx(0.0, abs=0.02)
    obs = scm.sample_observational(20_000, RngStream(7)).rows[:, 0]
    assert stats.ks_2samp(draws[:, 0], obs).pvalue > 0.01


def test_intervene_versus_condition_asymmetry():
    # Setting the effect by intervention leaves the cause centered at zero,
    # while conditioning on the same value moves its mean to rho * value.
    scm = make_dag_scm(rho=0.85)
    do_mean = scm.sample_interventional(spec_for(scm, [1], [2.0]), 40_000, RngStream(8))[:, 0].mean()
    mu_bar, cov_bar = conditional_moments(
        np.zeros(2), np.array([[1.0, 0.85], [0.85, 1.0]]), np.array([1]), np.array([2.0])
    )
    assert do_mean == pytest.approx(0.0, abs=0.05)
    assert mu_bar[0] == pytest.approx(1.7, abs=1e-12)
    assert cov_bar[0, 0] == pytest.approx(1 - 0.85**2, abs=1e-12)


def test_empty_intervention_equals_observational_bitwise():
    scm = make_dag_scm(rho=0.85)
    spec = InterventionSpec(coalition=Coalition.empty(scm.d), values=np.empty(0))
    draws = scm.sample_interventional(spec, 500, RngStream(9))
    obs = scm.sample_observational(500, RngStream(9))
    assert draws.shape == (500, 2)
    assert np.array_equal(draws, obs.rows)


def test_intervened_node_still_consumes_its_noise_stream():
    # Pinning a node must not shift the noise draws of the others: the same
    # stream yields the same exogenous draws whether or not X1 is pinned.
    scm = make_dag_scm(rho=0.85)
    rho = 0.85
    obs = scm.sample_observational(200, RngStream(10)).rows
    do_x1 = scm.sample_interventional(spec_for(scm, [0], [5.0]), 200, RngStream(10))
    resid_obs = obs[:, 1] - rho * obs[:, 0]
    resid_do = do_x1[:, 0] - rho * 5.0
    assert np.allclose(resid_obs, resid_do, atol=1e-9)


@pytest.mark.parametrize("name", sorted(SCM_BUILDERS))
def test_intervention_never_moves_non_descendants(name):
    scm = SCM_BUILDERS[name](*BUILDER_ARGS.get(name, ()))
    last = scm.d - 1
    spec = spec_for(scm, [last], [0.3])
    draws = scm.sample_interventional(spec, 8_000, RngStream(11))
    obs = scm.sample_observational(8_000, RngStream(12)).rows
    # The first feature never descends from the last one in any builder.
    assert stats.ks_2samp(draws[:, 0], obs[:, 0]).pvalue > 0.01


def test_intervention_spec_validation():
    scm = make_dag_scm()
    with pytest.raises(ValueError):
        InterventionSpec(coalition=Coalition.from_members([0], 2), values=np.zeros(2))
    with pytest.raises(ValueError):
        InterventionSpec(
            coalition=Coalition.from_members([0], 2), values=np.array([np.nan])
        )
    with pytest.raises(ValueError):
        scm.sample_interventional(spec_for(scm, [0], [0.0]), 0, RngStream(0))


# ---------------------------------------------------------------------------
# Ground-truth models
# ---------------------------------------------------------------------------


def test_ground_truth_model_chain_returns_first_feature():
    f = make_dag_scm().ground_truth_model()
    x = np.array([[0.3, -1.2], [2.0, 0.0]])
    assert np.allclose(f(x), x[:, 0])


def test_ground_truth_model_classifier_thresholds():
    f = make_corr_gaussian_2d().ground_truth_model()
    x = np.array([[0.6, 0.0], [0.4, 9.0]])
    assert np.array_equal(f(x), [1.0, 0.0])


def test_indep_builder_has_no_output():
    scm = make_indep_gaussian_2d()
    with pytest.raises(ValueError):
        scm.ground_truth_model()
    data = scm.sample_observational(2_000, RngStream(13))
    assert data.target is None
    corr = np.corrcoef(data.rows[:, 0], data.rows[:, 1])[0, 1]
    assert abs(corr) < 0.08


# ---------------------------------------------------------------------------
# Gaussian conditionals
# ---------------------------------------------------------------------------


def test_gaussian_conditional_moments_match_samples():
    cov = np.array([[1.0, 0.9], [0.9, 1.0]])
    cond = GaussianConditional(
        mean=np.zeros(2),
        cov=cov,
        coalition=Coalition.from_members([0], 2),
        values=np.array([1.0]),
    )
    draws = gaussian_conditional_sample(cond, 10_000, RngStream(14))
    assert draws.shape == (10_000, 1)
    assert draws[:, 0].mean() == pytest.approx(0.9, abs=0.02)
    assert draws[:, 0].var() == pytest.approx(0.19, abs=0.02)


def test_gaussian_conditional_independent_case_is_marginal():
    mu_bar, cov_bar = conditional_moments(
        np.zeros(2), np.eye(2), np.array([0]), np.array([3.0])
    )
    assert mu_bar[0] == 0.0
    assert cov_bar[0, 0] == 1.0


def test_gaussian_conditional_full_coalition_is_point_mass():
    cond = GaussianConditional(
        mean=np.zeros(2),
        cov=np.eye(2),
        coalition=Coalition.full(2),
        values=np.array([1.0, 2.0]),
    )
    draws = gaussian_conditional_sample(cond, 5, RngStream(15))
    assert draws.shape == (5, 0)


def test_conditional_moments_singular_block_raises():
    # Features 0 and 1 are perfectly correlated, so conditioning on both
    # hits a singular block.
    cov = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    with pytest.raises(ValueError):
        conditional_moments(np.zeros(3), cov, np.array([0, 1]), np.array([1.0, 1.0]))


def test_gaussian_conditional_validation():
    with pytest.raises(ValueError):
        GaussianConditional(
            mean=np.zeros(2),
            cov=np.eye(3),
            coalition=Coalition.from_members([0], 2),
            values=np.array([1.0]),
        )
    with pytest.raises(ValueError):
        GaussianConditional(
            mean=np.zeros(2),
            cov=np.eye(2),
            coalition=Coalition.from_members([0], 2),
            values=np.array([1.0, 2.0]),
        )


# ---------------------------------------------------------------------------
# Scm construction and noise
# ---------------------------------------------------------------------------


def test_scm_rejects_parent_defined_after_child():
    nodes = (
        ScmNode("a", ("b",), lambda p, e: p[:, 0] + e, Noise.gaussian()),
        ScmNode("b", (), lambda p, e: e, Noise.gaussian()),
    )
    with pytest.raises(ValueError):
        Scm(nodes=nodes)


def test_scm_rejects_duplicate_names_and_unknown_output():
    node = ScmNode("a", (), lambda p, e: e, Noise.gaussian())
    with pytest.raises(ValueError):
        Scm(nodes=(node, node))
    with pytest.raises(ValueError):
        Scm(nodes=(node,), output="missing")


def test_noise_kinds():
    gen = RngStream(16).generator()
    assert Noise.degenerate(2.5).sample(4, gen).tolist() == [2.5] * 4
    bern = Noise.bernoulli(0.3).sample(20_000, gen)
    assert set(np.unique(bern)) <= {0.0, 1.0}
    assert bern.mean() == pytest.approx(0.3, abs=0.02)
    assert Noise.gaussian(mu=1.0, std=2.0).mean() == 1.0
    with pytest.raises(ValueError):
        Noise.bernoulli(1.5)
    with pytest.raises(ValueError):
        Noise.gaussian(std=-1.0)


def test_single_node_scm_mean():
    scm = Scm(nodes=(ScmNode("x", (), lambda p, e: e, Noise.gaussian()),))
    data = scm.sample_observational(20_000, RngStream(17))
    assert data.rows[:, 0].mean() == pytest.approx(0.0, abs=0.02)
