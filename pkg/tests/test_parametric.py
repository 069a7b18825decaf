import math

import numpy as np
import pytest

from bceid.model import DomainError, SupportGrid
from bceid.parametric import (Family, ThetaGrid, density, mask_rows, moment_summary,
                              parametric_identified_set)
from bceid.sharp import membership_cv

V = np.arange(21.0)


def test_density_ratios():
    p = density(Family("truncated_poisson", 20), [4.0], V)
    assert p[4] / p[3] == pytest.approx(1.0, rel=1e-12)
    g = density(Family("truncated_geometric", 20), [0.2], V)
    assert np.allclose(g[1:] / g[:-1], 0.8, rtol=1e-12)
    n = density(Family("truncated_normal", 20), [4.0, 1.0], V)
    assert n[4] / n[3] == pytest.approx(math.e, rel=1e-12)


def test_binomial_matches_closed_form():
    p = density(Family("binomial", 20), [0.2], V)
    direct = np.array([math.comb(20, k) * 0.2 ** k * 0.8 ** (20 - k) for k in range(21)])
    assert np.allclose(p, direct, rtol=1e-12, atol=0)
    with pytest.raises(DomainError):
        density(Family("binomial", 20), [0.2], V + 0.5)


def test_moment_summaries():
    m, _ = moment_summary(Family("binomial", 20), [0.2], V)
    assert m == pytest.approx(4.0, abs=1e-12)
    m, _ = moment_summary(Family("truncated_poisson", 20), [4.0], V)
    assert abs(m - 4.0) < 1e-3
    m, s = moment_summary(Family("truncated_normal", 20), [7.0, 0.05], V)
    assert m == pytest.approx(7.0, abs=1e-6) and s < 1e-6


def test_parameter_box():
    fam = Family("normal", 20)
    assert fam.kind == "truncated_normal"
    for bad in ([21.0, 1.0], [4.0, 0.0], [4.0]):
        with pytest.raises(DomainError):
            fam.check(bad)
    with pytest.raises(DomainError):
        Family("binomial", 20).check([1.0])
    with pytest.raises(ValueError):
        Family("lognormal", 20)


def test_default_grids():
    assert len(Family("normal", 20).default_grid()) == 41 * 20
    assert len(Family("poisson", 20).default_grid()) == 40
    pts = Family("binomial", 20).default_grid().points
    assert pts[0, 0] == 0.01 and pts[-1, 0] == 0.99 and len(pts) == 99


@pytest.fixture(scope="module")
def generated():
    from bceid.montecarlo import generate_bce
    grid = SupportGrid.integer(8, 2)
    fam = Family("normal", 8)
    pi = density(fam, [4.0, 1.0], grid.values)
    phi = generate_bce(pi, grid, selector="max_entropy_surrogate", seed=3).phi
    thetas = ThetaGrid.product(fam, [3.0, 3.5, 4.0, 4.5, 5.0], [0.5, 1.0, 1.5])
    return grid, fam, phi, thetas


def test_generating_theta_in_population_set(generated):
    grid, fam, phi, thetas = generated
    res = parametric_identified_set(phi, grid, fam, thetas)
    k = np.flatnonzero(np.all(thetas.points == [4.0, 1.0], axis=1))[0]
    assert res.mask[k]
    assert res.values[k] <= 1e-8


def test_parametric_subset_of_nonparametric(generated):
    grid, fam, phi, thetas = generated
    res = parametric_identified_set(phi, grid, fam, thetas)
    for t in res.members():
        assert membership_cv(density(fam, t, grid.values), phi, grid)


def test_tolerance_monotone_and_infinite(generated):
    grid, fam, phi, thetas = generated
    base = parametric_identified_set(phi, grid, fam, thetas)
    for tol in (0.01, 0.1, 1.0):
        wider = parametric_identified_set(phi, grid, fam, thetas, tol, values=base.values)
        assert wider.contains(base)
    full = parametric_identified_set(phi, grid, fam, thetas, np.inf, values=base.values)
    assert full.mask.all()
    rows = mask_rows(base, fam)
    assert set(rows[0]) == {"mu", "sigma", "minimax", "tolerance", "feas_tol", "included"}
