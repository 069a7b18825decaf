import itertools

import numpy as np
import pytest

from bceid.model import (FIRST_PRICE, SECOND_PRICE, DomainError, SupportGrid, constant_metric,
                         revenue_metric)
from bceid.sharp import (BidDistribution, build_bce_cv, build_bce_general, build_bce_ipv,
                         build_bce_pv, counterfactual_bounds, covariate_beta_membership,
                         ipv_symmetric_moment_bounds, ipv_symmetry_test, membership_cv,
                         membership_ipv, membership_pv, moment_bounds_cv, moment_bounds_pv,
                         support_function, winning_bid_moment_bounds)
from oracles import fp_payoff, singleton


# ---------------------------------------------------------------------------
# distributions


def test_bid_distribution_normalizes_and_sorts(tiny_grid):
    phi = BidDistribution(np.array([[1, 1], [0, 0], [0, 1]]), [0.5, 0.5, 0.0])
    assert phi.profiles.tolist() == [[0, 0], [1, 1]]
    assert phi.dense(tiny_grid).tolist() == [0.5, 0, 0, 0.5]
    with pytest.raises(ValueError):
        BidDistribution(np.array([[0, 0]]), [0.9])
    with pytest.raises(ValueError):
        BidDistribution(np.array([[0, 0], [0, 0]]), [0.5, 0.5])


# ---------------------------------------------------------------------------
# builders


def test_cv_equals_general_embedding():
    grid = SupportGrid.integer(3, 2, bid_max=2)
    rng = np.random.default_rng(1)
    phi = BidDistribution.from_dense(grid, rng.random(grid.n_profiles))
    cv = build_bce_cv(phi, grid)

    def util(i, a, theta):
        return fp_payoff(i, tuple(grid.bids[list(a)]), grid.values[theta])

    gen = build_bce_general(phi, [grid.n_bids] * 2, grid.n_values, util)
    assert np.array_equal(cv.coef.toarray(), gen.coef.toarray())
    assert cv.labels == gen.labels
    assert np.array_equal(cv.recovery.toarray(), gen.recovery.toarray())


def test_row_counts_two_by_two_by_two():
    grid = SupportGrid.integer(1, 2)
    phi = BidDistribution.from_dense(grid, np.ones(4))
    assert build_bce_cv(phi, grid).n_rows == 8
    assert build_bce_pv(phi, grid).n_rows == 16
    ipv = build_bce_ipv(phi, grid)
    assert ipv.n_vars == 2 * 2 * phi.size


def test_single_action_has_no_binding_rows():
    grid = SupportGrid(2, [0.0, 1.0, 2.0], [1.0])
    phi = BidDistribution.from_bids(grid, {(1, 1): 1.0})
    system = build_bce_cv(phi, grid)
    assert system.coef.nnz == 0
    assert membership_cv([1, 0, 0], phi, grid)


def test_profile_width_mismatch(tiny_grid):
    phi = BidDistribution(np.array([[1, 1, 1]]), [1.0])
    with pytest.raises(DomainError):
        build_bce_cv(phi, tiny_grid)


# ---------------------------------------------------------------------------
# common values


def test_tiny_membership_examples(tiny_phi, tiny_grid):
    assert membership_cv([0, 0, 1], tiny_phi, tiny_grid)
    assert not membership_cv([1, 0, 0], tiny_phi, tiny_grid)
    assert membership_cv([0, 1, 0], tiny_phi, tiny_grid)
    mem = membership_cv([0.5, 0, 0.5], tiny_phi, tiny_grid)
    assert mem and mem.kernel is not None
    assert not membership_cv([0.6, 0, 0.4], tiny_phi, tiny_grid)


def test_tiny_moment_bounds(tiny_phi, tiny_grid):
    res = moment_bounds_cv(tiny_grid.values, tiny_phi, tiny_grid)
    assert res.interval() == pytest.approx((1.0, 2.0), abs=1e-9)
    assert res.diagnostics["minimize"]["duality_gap"] < 1e-6
    const = moment_bounds_cv(lambda v: 3.0, tiny_phi, tiny_grid)
    assert const.interval() == pytest.approx((3.0, 3.0), abs=1e-9)


def test_support_function(tiny_phi, tiny_grid):
    z = tiny_grid.values
    assert support_function(z, tiny_phi, tiny_grid) == pytest.approx(2.0)
    assert support_function(-z, tiny_phi, tiny_grid) == pytest.approx(-1.0)
    assert support_function(np.zeros(3), tiny_phi, tiny_grid) == pytest.approx(0.0)


@pytest.mark.parametrize("step", [1.0, 0.5, 0.25])
def test_singleton_interval_is_b_star_plus_two_steps(step):
    grid, phi = singleton(5.0, step)
    res = moment_bounds_cv(grid.values, phi, grid)
    assert res.interval() == pytest.approx((5.0, 5.0 + 2 * step), abs=1e-6)


def test_relaxation_widens(tiny_phi, tiny_grid):
    a = moment_bounds_cv(tiny_grid.values, tiny_phi, tiny_grid, tol=0.0)
    b = moment_bounds_cv(tiny_grid.values, tiny_phi, tiny_grid, tol=0.2)
    assert b.contains(a)
    # the tolerance relaxes consistency rows too, so delta_0 enters eventually
    flags = [bool(membership_cv([1, 0, 0], tiny_phi, tiny_grid, tol=t))
             for t in (1e-8, 0.1, 0.2, 0.5, 1.0)]
    assert flags == sorted(flags) and not flags[0] and flags[-1]


def test_generated_phi_sandwiches_true_mean():
    from bceid.montecarlo import generate_bce
    grid = SupportGrid.integer(6, 2)
    pi = np.random.default_rng(0).dirichlet(np.ones(7))
    phi = generate_bce(pi, grid, selector="random_objective", seed=2).phi
    lo, hi = moment_bounds_cv(grid.values, phi, grid).interval()
    assert lo - 1e-7 <= pi @ grid.values <= hi + 1e-7


# ---------------------------------------------------------------------------
# private values


def test_pv_symmetric_phi_feasible():
    grid = SupportGrid.integer(1, 2)
    phi = BidDistribution.from_bids(grid, {(0, 0): 0.5, (1, 1): 0.5})
    # values equal to bids make every recommendation a weak best response
    pi = np.zeros(4)
    pi[[0, 3]] = 0.5
    assert membership_pv(pi, phi, grid)
    # both values 0 but both bid 1: each prefers bidding 0
    assert not membership_pv([1.0, 0, 0, 0], BidDistribution.from_bids(grid, {(1, 1): 1.0}),
                             grid)
    res = moment_bounds_pv(grid.values, phi, grid)
    assert res.lower <= 0.5 <= res.upper


def _bne_profiles(grid, rho):
    """Pure symmetric-support IPV equilibria found by brute force."""
    nV, nB = grid.n_values, grid.n_bids
    found = []
    for s1, s2 in itertools.product(itertools.product(range(nB), repeat=nV), repeat=2):
        strat = (s1, s2)
        ok = True
        for i, vi in itertools.product(range(2), range(nV)):
            def payoff(bid):
                tot = 0.0
                for vj in range(nV):
                    b = [0, 0]
                    b[i], b[1 - i] = bid, strat[1 - i][vj]
                    tot += rho[vj] * fp_payoff(i, tuple(grid.bids[b]), grid.values[vi])
                return tot
            if payoff(strat[i][vi]) < max(payoff(d) for d in range(nB)) - 1e-12:
                ok = False
        if ok:
            masses = {}
            for v1, v2 in itertools.product(range(nV), repeat=2):
                key = (grid.bids[s1[v1]], grid.bids[s2[v2]])
                masses[key] = masses.get(key, 0.0) + rho[v1] * rho[v2]
            found.append(masses)
    return found


def test_ipv_bne_is_feasible():
    grid = SupportGrid.integer(1, 2)
    rho = np.array([0.5, 0.5])
    eqs = _bne_profiles(grid, rho)
    assert eqs
    for masses in eqs:
        phi = BidDistribution.from_bids(grid, masses)
        assert membership_ipv([rho, rho], phi, grid)


def test_ipv_symmetry(tiny_grid):
    sym = BidDistribution.from_bids(tiny_grid, {(0, 1): 0.5, (1, 0): 0.5})
    assert ipv_symmetry_test(sym, tiny_grid) == "consistent"
    equal = BidDistribution.from_bids(tiny_grid, {(1, 1): 1.0})
    assert ipv_symmetry_test(equal, tiny_grid) == "consistent"
    asym = BidDistribution.from_bids(tiny_grid, {(1, 0): 1.0})
    assert ipv_symmetry_test(asym, tiny_grid) == "refuted"
    assert ipv_symmetric_moment_bounds(tiny_grid.values, asym, tiny_grid).empty
    c = ipv_symmetric_moment_bounds(lambda v: 2.5, sym, tiny_grid)
    assert c.interval() == pytest.approx((2.5, 2.5))


# ---------------------------------------------------------------------------
# extensions


def test_winning_bid_bounds_wider(tiny_phi, tiny_grid):
    full = moment_bounds_cv(tiny_grid.values, tiny_phi, tiny_grid)
    win = winning_bid_moment_bounds(tiny_grid.values, [0.0, 1.0], tiny_grid)
    assert win.contains(full, atol=1e-9)
    with pytest.raises(DomainError):
        winning_bid_moment_bounds(tiny_grid.values, [0.5, 0.9], tiny_grid)


def test_covariate_intercept_reduces_to_moment_bounds(tiny_phi, tiny_grid):
    for beta, expected in [(1.5, True), (1.0, True), (2.5, False), (0.5, False)]:
        assert bool(covariate_beta_membership([beta], [tiny_phi], [[1.0]], tiny_grid)) is expected


def test_covariate_two_cells(tiny_grid):
    lo = BidDistribution.from_bids(tiny_grid, {(0, 0): 1.0})   # mean in [0, 1]
    hi = BidDistribution.from_bids(tiny_grid, {(1, 1): 1.0})   # mean in [1, 2]
    X = [[1.0, 0.0], [1.0, 1.0]]
    assert covariate_beta_membership([0.5, 1.0], [lo, hi], X, tiny_grid)
    assert not covariate_beta_membership([1.5, 1.0], [lo, hi], X, tiny_grid)


def test_counterfactual(tiny_phi, tiny_grid):
    sp_rev = counterfactual_bounds(tiny_phi, tiny_grid, revenue_metric(SECOND_PRICE), SECOND_PRICE)
    assert sp_rev.interval() == pytest.approx((0.0, 1.0), abs=1e-7)
    const = counterfactual_bounds(tiny_phi, tiny_grid, constant_metric(3.3), SECOND_PRICE)
    assert abs(const.lower - 3.3) < 1e-9 and abs(const.upper - 3.3) < 1e-9
    same = counterfactual_bounds(tiny_phi, tiny_grid, revenue_metric(FIRST_PRICE), FIRST_PRICE)
    # the observed first-price revenue is 1 and must lie in the interval
    assert same.lower - 1e-9 <= tiny_phi.expected_max_bid(tiny_grid) <= same.upper + 1e-9
