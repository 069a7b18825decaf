import math
import warnings

import numpy as np
import pytest

from bceid.inference import (BidSample, bayesian_bootstrap_sets, bernstein_set,
                             bernstein_tolerances, bootstrap_weights, empirical_distribution,
                             hoeffding_tolerances, nonparam_moment_interval,
                             parametric_hoeffding_set, penalized_value, sample_variance,
                             subsample_cutoff, subsampling_confidence_set)
from bceid.model import SupportGrid
from bceid.montecarlo import generate_bce, sample_bids
from bceid.parametric import Family, ThetaGrid, density, parametric_identified_set
from bceid.sharp import build_bce_cv, consistency_rows, moment_bounds_cv
from oracles import hoeffding_closed_form


def test_empirical_distribution():
    s = BidSample(np.array([[1, 1], [0, 1], [1, 1], [1, 1]]))
    phi = empirical_distribution(s)
    assert phi.profiles.tolist() == [[0, 1], [1, 1]]
    assert phi.probs.tolist() == [0.25, 0.75]
    perm = BidSample(s.profiles[[3, 1, 0, 2]])
    assert np.array_equal(empirical_distribution(perm).probs, phi.probs)


def test_hoeffding_values():
    t = hoeffding_tolerances(20, 2, 21, 0.1, 10_000)
    sigma, eps = hoeffding_closed_form(20, 2, 21, 0.1, 10_000)
    assert t.sigma == pytest.approx(sigma, rel=1e-15)
    assert t.eps == pytest.approx(eps, rel=1e-15)
    assert abs(t.sigma - 1.2944) < 1e-3 and abs(t.eps - 0.7683) < 1e-3
    quarter = hoeffding_tolerances(20, 2, 21, 0.1, 40_000)
    assert quarter.sigma == pytest.approx(t.sigma / 2) and quarter.eps == pytest.approx(t.eps / 2)
    zero = hoeffding_tolerances(0, 2, 21, 0.1, 100)
    assert zero.sigma == 0 and zero.eps == 0
    for bad in (0.0, 1.0):
        with pytest.raises(ValueError):
            hoeffding_tolerances(20, 2, 21, bad, 100)


def test_parametric_tolerance_grows_with_grid():
    a = hoeffding_tolerances(20, 2, 21, 0.1, 1000, "parametric", 21, 10)
    b = hoeffding_tolerances(20, 2, 21, 0.1, 1000, "parametric", 21, 1000)
    assert b.sigma > a.sigma
    assert a.sigma == pytest.approx(40 * math.sqrt(math.log(10 * (2 * 441 + 21) / 0.1) / 1000))


def test_bernstein_closed_forms():
    t = bernstein_tolerances(20, 2, 21, 21, 50, 0.1, 1000)
    L = math.log(2 * 50 * (2 * 21 ** 2 + 21) / 0.1)
    assert abs(t.lam - math.sqrt(2 * L)) < 1e-12
    assert abs(t.sigma - 14 * 20 * L / (3 * 999)) < 1e-12


def test_sample_variance():
    assert sample_variance([3, 3, 3]) == 0.0
    assert sample_variance([0, 2]) == 2.0
    x = np.random.default_rng(0).random(30)
    pairs = sum((a - b) ** 2 for i, a in enumerate(x) for b in x[i + 1:])
    assert sample_variance(x) == pytest.approx(pairs / (30 * 29))
    assert sample_variance(x[::-1]) == pytest.approx(sample_variance(x))


def test_point_mass_sample_covers(tiny_grid):
    s = BidSample(np.tile([1, 1], (200, 1)))
    res = nonparam_moment_interval(s, tiny_grid, tiny_grid.values, 0.1)
    assert res.lower <= 1.0 and res.upper >= 2.0
    const = nonparam_moment_interval(s, tiny_grid, np.full(3, 1.5), 0.1)
    eps = res.diagnostics["eps"]
    assert const.interval() == pytest.approx((1.5 - eps, 1.5 + eps), abs=1e-9)
    plug = nonparam_moment_interval(s, tiny_grid, tiny_grid.values, 0.1, sigma=0, eps=0)
    assert plug.interval() == pytest.approx((1.0, 2.0), abs=1e-9)


@pytest.fixture(scope="module")
def normal_case():
    grid = SupportGrid.integer(8, 2)
    fam = Family("normal", 8)
    pi = density(fam, [4.0, 1.0], grid.values)
    phi = generate_bce(pi, grid, selector="max_entropy_surrogate", seed=3).phi
    thetas = ThetaGrid.product(fam, [3.0, 3.5, 4.0, 4.5, 5.0], [0.5, 1.0, 1.5, 2.0])
    sample = sample_bids(phi, 500, 11)
    return grid, fam, phi, thetas, sample


def test_large_sample_interval_close(normal_case):
    grid, fam, phi, thetas, _ = normal_case
    pop = moment_bounds_cv(grid.values, phi, grid)
    big = sample_bids(phi, 100_000, 5)
    res = nonparam_moment_interval(big, grid, grid.values, 0.1, sigma=0, eps=0)
    assert abs(res.lower - pop.lower) < 0.15 and abs(res.upper - pop.upper) < 0.15


def test_hoeffding_set_contains_population(normal_case):
    grid, fam, phi, thetas, sample = normal_case
    pop = parametric_identified_set(phi, grid, fam, thetas)
    est = parametric_hoeffding_set(sample, grid, fam, thetas, 0.1)
    assert est.contains(pop)
    wider = parametric_hoeffding_set(sample, grid, fam, thetas, 0.01)
    assert wider.tolerance > est.tolerance and wider.contains(est)


def test_bernstein_witness_rechecks(normal_case):
    grid, fam, phi, thetas, sample = normal_case
    res = bernstein_set(sample, grid, fam, thetas, 0.1)
    assert res.diagnostics["exclusion"] == "heuristic"
    sched = res.diagnostics["schedule"]
    phi_n = empirical_distribution(sample)
    base = build_bce_cv(phi_n, grid)
    _, counts = np.unique(sample.profiles, axis=0, return_counts=True)
    for k in np.flatnonzero(res.mask):
        name, x = res.diagnostics["witness"][k]
        system = base.stack(consistency_rows(base, density(fam, thetas.points[k], grid.values)))
        assert penalized_value(system, x, counts, sched["lam"]).value <= res.tolerance + 1e-9


def test_bernstein_zero_variance_reduces_to_plain(tiny_grid):
    s = BidSample(np.tile([1, 1], (50, 1)))
    fam = Family("binomial", 2)
    thetas = ThetaGrid(fam, [[0.1], [0.5], [0.9]])
    res = bernstein_set(s, tiny_grid, fam, thetas, 0.1, strategy="plain")
    pop = parametric_identified_set(empirical_distribution(s), tiny_grid, fam, thetas)
    assert np.allclose(res.values, pop.values, atol=1e-9)


def test_subsampling_cutoff_reproducible(normal_case):
    grid, fam, phi, thetas, sample = normal_case
    a = subsample_cutoff(sample, grid, fam, thetas, k=12, s=125, seed=4)
    b = subsample_cutoff(sample, grid, fam, thetas, k=12, s=125, seed=4)
    assert a.tau == b.tau and np.array_equal(a.stats, b.stats)
    assert a.tau >= 0
    # the cutoff is a quantile, so processing the subsamples in any order gives it back
    perm = np.random.default_rng(0).permutation(a.stats)
    assert a.tau == pytest.approx(max(np.quantile(perm, 0.95), 0) / math.sqrt(sample.N))


def test_subsampling_contains_zero_tolerance_set(normal_case):
    grid, fam, phi, thetas, sample = normal_case
    res = subsampling_confidence_set(sample, grid, fam, thetas, 0.05, 20, 125, seed=1)
    plug_in = parametric_identified_set(empirical_distribution(sample), grid, fam, thetas,
                                        values=res.values)
    assert res.contains(plug_in)
    full = subsampling_confidence_set(sample, grid, fam, thetas, tau=np.inf)
    assert full.mask.all()


def test_few_subsamples_warn(normal_case):
    grid, fam, phi, thetas, sample = normal_case
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        subsample_cutoff(sample, grid, fam, thetas, k=3, s=100, seed=0)
    assert any("fewer than 10" in str(x.message) for x in w)
    with pytest.raises(ValueError):
        subsample_cutoff(sample, grid, fam, thetas, k=3, s=500)


def test_bootstrap_weights_and_degenerate(tiny_grid):
    s = BidSample(np.array([[0, 0], [1, 1], [1, 1], [0, 1]]))
    W = bootstrap_weights(s, 5, 0)
    assert W.shape == (5, 3) and np.allclose(W.sum(axis=1), 1)
    assert np.array_equal(W, bootstrap_weights(s, 5, 0))
    const = BidSample(np.tile([1, 1], (30, 1)))
    sets = bayesian_bootstrap_sets(const, tiny_grid, 4, 0, moment=tiny_grid.values, tol=0.0)
    assert all(x.interval() == pytest.approx((1.0, 2.0), abs=1e-9) for x in sets)


def test_bootstrap_equal_weights_match_plug_in(tiny_grid):
    s = BidSample(np.array([[0, 0], [1, 1], [1, 1], [0, 1]]))
    phi = empirical_distribution(s)
    res = bayesian_bootstrap_sets(s, tiny_grid, moment=tiny_grid.values, tol=0.0,
                                  weights=phi.probs[None, :])[0]
    plug = moment_bounds_cv(tiny_grid.values, phi, tiny_grid)
    assert res.interval() == pytest.approx(plug.interval(), abs=1e-9)
    with pytest.raises(ValueError):
        bayesian_bootstrap_sets(s, tiny_grid)


def test_bootstrap_coverage_tiny_instance(tiny_grid):
    """Share of posterior draws covering the population interval [1, 2]."""
    s = BidSample(np.tile([1, 1], (1000, 1)))
    sets = bayesian_bootstrap_sets(s, tiny_grid, 20, 0, moment=tiny_grid.values)
    share = np.mean([x.lower <= 1 + 1e-9 and x.upper >= 2 - 1e-9 for x in sets])
    assert share >= 0.9
