"""Manifold estimation: KDE, mass-calibrated thresholds, OOD classifier, persistence."""

import math

import numpy as np
import pytest

from shaplab import (
    DensityManifold,
    KdeEstimator,
    MassManifold,
    RngStream,
    fit_kde,
    fit_ood_classifier,
    load_manifold,
    make_corr_gaussian_2d,
    mvn_density,
    save_manifold,
    threshold_for_mass,
)

STD_NORMAL_2D = mvn_density(np.zeros(2), np.eye(2))
PEAK_2D = 1.0 / (2.0 * math.pi)


# ---------------------------------------------------------------------------
# KdeEstimator / fit_kde
# ---------------------------------------------------------------------------


def test_kde_single_reference_unit_bandwidth():
    kde = KdeEstimator(np.zeros((1, 2)), np.ones(2))
    assert kde(np.zeros((1, 2)))[0] == pytest.approx(PEAK_2D, rel=1e-12)
    # One bandwidth unit away the kernel drops by exp(-1/2).
    assert kde(np.array([[1.0, 0.0]]))[0] == pytest.approx(PEAK_2D * math.exp(-0.5), rel=1e-12)


def test_kde_recovers_standard_normal_peak():
    rows = RngStream(0).generator().standard_normal((10_000, 2))
    kde = fit_kde(rows)
    assert kde(np.zeros((1, 2)))[0] == pytest.approx(PEAK_2D, abs=0.02)


def test_kde_symmetric_references_give_symmetric_density():
    rows = RngStream(1).generator().standard_normal((500, 2))
    kde = fit_kde(np.vstack([rows, -rows]))
    probes = RngStream(2).generator().standard_normal((50, 2))
    assert np.allclose(kde(probes), kde(-probes), atol=1e-9)


def test_kde_integrates_to_one_in_1d():
    rows = RngStream(3).generator().standard_normal((200, 1))
    kde = fit_kde(rows)
    grid = np.linspace(-8, 8, 2001)[:, None]
    integral = np.trapezoid(kde(grid), grid[:, 0])
    assert integral == pytest.approx(1.0, abs=0.02)


def test_kde_chunked_queries_match_small_queries():
    rows = RngStream(4).generator().standard_normal((50, 2))
    kde = fit_kde(rows)
    queries = RngStream(5).generator().standard_normal((1100, 2))
    whole = kde.log_density(queries)
    parts = np.concatenate([kde.log_density(queries[:7]), kde.log_density(queries[7:])])
    assert np.allclose(whole, parts, atol=1e-12)


def test_fit_kde_bandwidth_rules():
    rows = RngStream(6).generator().standard_normal((100, 2))
    scott = fit_kde(rows)
    expected = rows.std(axis=0, ddof=1) * 100 ** (-1.0 / 6.0)
    assert np.allclose(scott.bandwidths, expected)
    scalar = fit_kde(rows, bandwidth_rule=0.5)
    assert np.allclose(scalar.bandwidths, [0.5, 0.5])
    vector = fit_kde(rows, bandwidth_rule=np.array([0.3, 0.7]))
    assert np.allclose(vector.bandwidths, [0.3, 0.7])


def test_fit_kde_validation():
    rows = RngStream(7).generator().standard_normal((100, 2))
    constant = rows.copy()
    constant[:, 1] = 2.0
    with pytest.raises(ValueError, match="column 1"):
        fit_kde(constant)
    with pytest.raises(ValueError):
        fit_kde(rows[:1])
    with pytest.raises(ValueError):
        fit_kde(rows, bandwidth_rule="silverman")
    with pytest.raises(ValueError):
        KdeEstimator(rows, np.array([1.0, -1.0]))
    with pytest.raises(ValueError):
        KdeEstimator(rows, np.ones(3))
    kde = fit_kde(rows)
    with pytest.raises(ValueError):
        kde(np.zeros((1, 3)))


# ---------------------------------------------------------------------------
# threshold_for_mass / DensityManifold / MassManifold
# ---------------------------------------------------------------------------


def test_threshold_alpha_one_is_zero():
    assert threshold_for_mass(STD_NORMAL_2D, np.zeros((10, 2)), 1.0) == 0.0


def test_threshold_alpha_bounds():
    calib = RngStream(8).generator().standard_normal((100, 2))
    for alpha in (0.0, -0.1, 1.2):
        with pytest.raises(ValueError):
            threshold_for_mass(STD_NORMAL_2D, calib, alpha)


@pytest.mark.parametrize("alpha,expected", [(0.99, 0.01 / (2 * math.pi)), (0.9, 0.1 / (2 * math.pi))])
def test_threshold_matches_analytic_level(alpha, expected):
    # For a standard bivariate normal the density value at the alpha-mass
    # contour is (1 - alpha) / (2 pi).
    calib = RngStream(9).generator().standard_normal((10_000, 2))
    eps = threshold_for_mass(STD_NORMAL_2D, calib, alpha)
    assert eps == pytest.approx(expected, rel=0.15)


@pytest.mark.parametrize("alpha", [0.8, 0.9, 0.99])
def test_mass_manifold_calibration(alpha):
    calib = RngStream(10).generator().standard_normal((10_000, 2))
    manifold = MassManifold.fit(STD_NORMAL_2D, calib, alpha)
    fresh = RngStream(11).generator().standard_normal((10_000, 2))
    inside = manifold.contains_batch(fresh).mean()
    assert inside == pytest.approx(alpha, abs=0.02)
    assert manifold.alpha == alpha


def test_mass_manifolds_nest_monotonically():
    calib = RngStream(12).generator().standard_normal((10_000, 2))
    probes = RngStream(13).generator().standard_normal((1_000, 2)) * 1.8
    eps_prev = -1.0
    inner_prev = None
    for alpha in (0.99, 0.9, 0.8):
        manifold = MassManifold.fit(STD_NORMAL_2D, calib, alpha)
        assert manifold.eps > eps_prev
        inside = manifold.contains_batch(probes)
        if inner_prev is not None:
            # Shrinking alpha raises the threshold, so membership only shrinks.
            assert np.all(inside <= inner_prev)
        eps_prev = manifold.eps
        inner_prev = inside


def test_density_manifold_membership():
    manifold = DensityManifold(density=STD_NORMAL_2D, eps=1e-3)
    assert manifold.contains(np.zeros(2))
    assert not manifold.contains(np.array([10.0, 10.0]))
    everything = DensityManifold(density=STD_NORMAL_2D, eps=0.0)
    probes = RngStream(14).generator().standard_normal((100, 2)) * 5
    assert everything.contains_batch(probes).all()


def test_density_manifold_boundary_ties_are_outside():
    flat = DensityManifold(density=lambda x: np.ones(len(np.atleast_2d(x))), eps=1.0)
    assert not flat.contains(np.zeros(2))


def test_density_manifold_rejects_negative_eps():
    with pytest.raises(ValueError):
        DensityManifold(density=STD_NORMAL_2D, eps=-0.1)


def test_minimal_volume_among_threshold_sets_on_grid():
    # Discretize a standard bivariate normal on a small grid and brute-force
    # every subset of cells: no subset capturing >= alpha of the grid mass
    # uses fewer cells than the density super-level set.
    from scipy.stats import norm

    edges = np.linspace(-2.5, 2.5, 5)
    band = np.diff(norm.cdf(edges))
    mass = np.outer(band, band).ravel()
    mass = mass / mass.sum()
    n_cells = mass.size
    alpha = 0.9

    order = np.argsort(mass)[::-1]
    take = int(np.searchsorted(np.cumsum(mass[order]), alpha) + 1)
    # Sanity: the top-density prefix really captures alpha.
    assert mass[order[:take]].sum() >= alpha

    subsets = np.arange(1 << n_cells, dtype=np.uint32)
    bits = (subsets[:, None] >> np.arange(n_cells, dtype=np.uint32)) & 1
    masses = bits @ mass
    counts = bits.sum(axis=1)
    best = counts[masses >= alpha].min()
    assert take == best


# ---------------------------------------------------------------------------
# OOD classifier
# ---------------------------------------------------------------------------


def test_ood_classifier_accepts_real_rows_rejects_far_points():
    scm = make_corr_gaussian_2d(rho=0.9)
    train = scm.sample_observational(800, RngStream(15)).rows
    held_out = scm.sample_observational(200, RngStream(16)).rows
    clf = fit_ood_classifier(train, RngStream(17), k=31)
    assert clf.contains_batch(held_out).mean() >= 0.9
    assert not clf.contains(np.array([10.0, 10.0]))
    assert not clf.contains(np.array([-10.0, 10.0]))


def test_ood_classifier_validation():
    rows = RngStream(18).generator().standard_normal((50, 2))
    with pytest.raises(ValueError):
        fit_ood_classifier(rows, RngStream(19), n_perturbed_per_point=0)
    with pytest.raises(ValueError):
        fit_ood_classifier(rows, RngStream(19), k=1000)


def test_ood_classifier_deterministic():
    rows = RngStream(20).generator().standard_normal((100, 2))
    probes = RngStream(21).generator().standard_normal((50, 2)) * 2
    a = fit_ood_classifier(rows, RngStream(22)).contains_batch(probes)
    b = fit_ood_classifier(rows, RngStream(22)).contains_batch(probes)
    assert np.array_equal(a, b)


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------


def test_save_load_roundtrip_mass_manifold(tmp_path):
    rows = RngStream(23).generator().standard_normal((300, 2))
    calib = RngStream(24).generator().standard_normal((2_000, 2))
    manifold = MassManifold.fit(fit_kde(rows), calib, alpha=0.95)
    params, points = save_manifold(manifold, tmp_path / "mass")
    assert params.exists() and points.exists()
    loaded = load_manifold(tmp_path / "mass")
    assert isinstance(loaded, MassManifold)
    assert loaded.eps == manifold.eps
    assert loaded.alpha == manifold.alpha
    probes = RngStream(25).generator().standard_normal((200, 2)) * 2
    assert np.array_equal(loaded.contains_batch(probes), manifold.contains_batch(probes))
    assert np.allclose(loaded.density(probes), manifold.density(probes), rtol=1e-12)


def test_save_load_roundtrip_ood_classifier(tmp_path):
    rows = RngStream(26).generator().standard_normal((200, 2))
    clf = fit_ood_classifier(rows, RngStream(27))
    save_manifold(clf, tmp_path / "ood")
    loaded = load_manifold(tmp_path / "ood")
    probes = RngStream(28).generator().standard_normal((100, 2)) * 2
    assert np.array_equal(loaded.contains_batch(probes), clf.contains_batch(probes))


def test_save_rejects_closed_form_density(tmp_path):
    manifold = DensityManifold(density=STD_NORMAL_2D, eps=0.01)
    with pytest.raises(ValueError):
        save_manifold(manifold, tmp_path / "oracle")


def test_load_missing_prefix_raises(tmp_path):
    with pytest.raises((OSError, ValueError)):
        load_manifold(tmp_path / "missing")
