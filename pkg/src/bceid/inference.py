"""Finite-sample and resampling inference for BCE identified sets.

All procedures work on one constraint system built over the observed
support; bootstrap draws and subsamples only change the profile weights.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .lp import ConstraintSystem, epigraph_minimax, minimax, parallel_map
from .model import FIRST_PRICE, DomainError, SupportGrid, UtilityKernel
from .parametric import Family, ThetaGrid, density, minimax_over_grid, parametric_identified_set
from .sharp import (BidDistribution, IdentifiedSet, build_bce_cv, consistency_rows,
                    optimize_over, tabulate_moment)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BidSample:
    """``N`` observed bid-index profiles, with the seed that produced them."""

    profiles: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self):
        prof = np.asarray(self.profiles, dtype=np.int64)
        if prof.ndim != 2 or prof.shape[0] < 1:
            raise ValueError("a sample needs at least one profile")
        object.__setattr__(self, "profiles", prof)

    @property
    def N(self) -> int:
        return self.profiles.shape[0]

    def check(self, grid: SupportGrid) -> None:
        if self.profiles.shape[1] != grid.n:
            raise DomainError("sample width does not match the number of players")
        if self.profiles.min() < 0 or self.profiles.max() >= grid.n_bids:
            raise DomainError("sampled bid index outside the grid")

    @classmethod
    def from_bid_values(cls, grid: SupportGrid, bids, seed=None) -> "BidSample":
        bids = np.atleast_2d(np.asarray(bids, dtype=float))
        idx = np.searchsorted(grid.bids, bids)
        idx = np.clip(idx, 0, grid.n_bids - 1)
        lower = np.clip(idx - 1, 0, None)
        idx = np.where(np.abs(grid.bids[lower] - bids) < np.abs(grid.bids[idx] - bids), lower, idx)
        if np.any(np.abs(grid.bids[idx] - bids) > 1e-9):
            raise DomainError("sample contains bids that are not on the grid")
        return cls(idx, seed)


def empirical_distribution(sample: BidSample) -> BidDistribution:
    """Relative frequencies of the observed profiles."""
    prof, counts = np.unique(sample.profiles, axis=0, return_counts=True)
    return BidDistribution(prof, counts / counts.sum(), origin="empirical", n_obs=sample.N)


def _support_counts(sample: BidSample):
    """Observed support, per-observation support index and counts."""
    prof, inv, counts = np.unique(sample.profiles, axis=0, return_inverse=True,
                                  return_counts=True)
    return prof, inv.ravel(), counts


@dataclass(frozen=True)
class ToleranceSchedule:
    """Row tolerance ``sigma``, objective slack ``eps`` and the counts behind them."""

    sigma: float
    eps: float
    delta: float
    H: float
    N: int
    n_rows: int
    mode: str
    lam: float = float("nan")
    n_theta: int = 1

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("mode", "sigma", "eps", "lam", "delta", "H", "N", "n_rows", "n_theta")}


def _check_delta(delta: float) -> None:
    if not 0 < delta < 1:
        raise ValueError(f"delta must lie in (0, 1), got {delta}")


def hoeffding_tolerances(H: float, n: int, n_bids: int, delta: float, N: int,
                         mode: str = "nonparam_moment", n_values: int = 0,
                         n_theta: int = 1) -> ToleranceSchedule:
    """Hoeffding-plus-union-bound tolerances.

    ``nonparam_moment``: ``sigma = 2H sqrt(log(4 n |B|^2 / delta) / N)`` and
    ``eps = 2H sqrt(log(4 / delta) / N)``.  ``parametric``:
    ``sigma = 2H sqrt(log(|Theta| (n |B|^2 + |V|) / delta) / N)``.
    """
    _check_delta(delta)
    if N < 1:
        raise ValueError("N must be positive")
    br = n * n_bids ** 2
    if mode == "nonparam_moment":
        sigma = 2 * H * math.sqrt(math.log(4 * br / delta) / N)
        eps = 2 * H * math.sqrt(math.log(4 / delta) / N)
        return ToleranceSchedule(sigma, eps, delta, H, N, br, mode)
    if mode == "parametric":
        m = br + n_values
        sigma = 2 * H * math.sqrt(math.log(n_theta * m / delta) / N)
        return ToleranceSchedule(sigma, float("nan"), delta, H, N, m, mode, n_theta=n_theta)
    raise ValueError(f"unknown mode {mode!r}")


def bernstein_tolerances(H: float, n: int, n_bids: int, n_values: int, n_theta: int,
                         delta: float, N: int) -> ToleranceSchedule:
    """``lam = sqrt(2 log(2|Theta||M|/delta))``, ``sigma = 14 H log(2|Theta||M|/delta) / (3(N-1))``."""
    _check_delta(delta)
    if N < 2:
        raise ValueError("the empirical-Bernstein set needs N >= 2")
    m = n * n_bids ** 2 + n_values
    L = math.log(2 * n_theta * m / delta)
    return ToleranceSchedule(14 * H * L / (3 * (N - 1)), float("nan"), delta, H, N, m,
                             "bernstein", lam=math.sqrt(2 * L), n_theta=n_theta)


def sample_variance(values) -> float:
    """Unbiased variance, i.e. ``sum_{t<t'} (X_t - X_t')^2 / (N (N-1))``."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two observations")
    return float(np.var(x, ddof=1))


def nonparam_moment_interval(sample: BidSample, grid: SupportGrid, m, delta: float = 0.1,
                             u: UtilityKernel = FIRST_PRICE, H: Optional[float] = None,
                             sigma: Optional[float] = None,
                             eps: Optional[float] = None) -> IdentifiedSet:
    """``[L_N(sigma) - eps, U_N(sigma) + eps]`` against the empirical distribution.

    ``sigma`` and ``eps`` default to the Hoeffding values; either may be
    overridden (``0`` gives the plug-in interval).
    """
    sample.check(grid)
    H = grid.H if H is None else H
    sched = hoeffding_tolerances(H, grid.n, grid.n_bids, delta, sample.N)
    sigma = sched.sigma if sigma is None else float(sigma)
    eps = sched.eps if eps is None else float(eps)
    phi = empirical_distribution(sample)
    system = build_bce_cv(phi, grid, u)
    obj = tabulate_moment(m, grid.values) @ system.recovery_matrix()
    out = optimize_over(system, np.asarray(obj).ravel(), sigma)
    out.tolerance = sigma
    out.diagnostics.update(schedule=sched.as_dict(), eps=eps, N=sample.N)
    if out.empty:
        log.warning("relaxed moment LP infeasible at sigma=%.4g", sigma)
        return out
    out.lower -= eps
    out.upper += eps
    return out


def _sample_system(sample: BidSample, grid: SupportGrid, u: UtilityKernel):
    sample.check(grid)
    phi = empirical_distribution(sample)
    return phi, build_bce_cv(phi, grid, u)


def parametric_hoeffding_set(sample: BidSample, grid: SupportGrid, family: Family,
                             thetas: ThetaGrid, delta: float = 0.1,
                             u: UtilityKernel = FIRST_PRICE,
                             sigma: Optional[float] = None) -> IdentifiedSet:
    """Parametric set at the Hoeffding tolerance for ``|Theta|`` grid points."""
    sched = hoeffding_tolerances(grid.H, grid.n, grid.n_bids, delta, sample.N, "parametric",
                                 grid.n_values, len(thetas))
    phi = empirical_distribution(sample)
    out = parametric_identified_set(phi, grid, family, thetas,
                                    sched.sigma if sigma is None else sigma, u)
    out.diagnostics.update(schedule=sched.as_dict(), N=sample.N)
    return out


# ---------------------------------------------------------------------------
# empirical Bernstein


@dataclass
class PenalizedStats:
    """Per-row empirical means, standard errors and the penalized maximum."""

    mean: np.ndarray
    se: np.ndarray
    value: float


def penalized_value(system: ConstraintSystem, x, counts, lam: float) -> PenalizedStats:
    """``max_j (F_j^N(x) - lam sqrt(Var_N(f_j(x; w)) / N))`` from grouped counts.

    ``counts[k]`` is how often support profile ``k`` was observed.
    """
    counts = np.asarray(counts, dtype=float)
    N = counts.sum()
    P = system.per_profile(x) + system.offset[:, None]      # f_j(x; profile k)
    mean = P @ counts / N
    var = ((P - mean[:, None]) ** 2) @ counts / (N - 1)
    se = np.sqrt(np.maximum(var, 0.0) / N)
    return PenalizedStats(mean, se, float(np.max(mean - lam * se)))


def _se_gradient(system: ConstraintSystem, x, counts, stats: PenalizedStats) -> sp.csr_matrix:
    """Jacobian of the standard errors (rows with zero spread get zero)."""
    counts = np.asarray(counts, dtype=float)
    N = counts.sum()
    P = system.per_profile(x) + system.offset[:, None]
    d = (P - stats.mean[:, None]) * counts[None, :]
    scale = np.divide(1.0, stats.se * N * (N - 1), out=np.zeros_like(stats.se),
                      where=stats.se > 0)
    Wt = d * scale[:, None]                                   # rows x profiles
    C = system.coef.tocoo()
    data = C.data * Wt[C.row, system.var_profile[C.col]]
    return sp.csr_matrix((data, (C.row, C.col)), shape=C.shape)


def bernstein_candidates(system: ConstraintSystem, counts, lam: float, iters: int = 5,
                         strategy: str = "all"):
    """Yield ``(name, x, PenalizedStats)`` for the candidate kernels.

    ``plain`` is the minimax point, ``reweighted`` fixes the penalty at the
    plain point's standard errors, ``mm`` runs majorize-minimize steps: the
    tangent of the (convex) standard error gives an LP upper bound on the
    penalized objective, so each step never increases it.
    """
    counts = np.asarray(counts, dtype=float)
    weights = counts / counts.sum()
    G = system.matrix(weights)
    B = system.block_matrix()
    x0 = minimax(system, weights).x
    s0 = penalized_value(system, x0, counts, lam)
    yield "plain", x0, s0
    if strategy == "plain":
        return
    x1 = epigraph_minimax(G, system.offset - lam * s0.se, B).x
    yield "reweighted", x1, penalized_value(system, x1, counts, lam)
    if strategy == "reweighted":
        return
    x, s = x0, s0
    for _ in range(iters):
        D = _se_gradient(system, x, counts, s)
        x_new = epigraph_minimax(G - lam * D, system.offset, B).x
        s_new = penalized_value(system, x_new, counts, lam)
        if s_new.value >= s.value - 1e-10:
            break
        x, s = x_new, s_new
        yield "mm", x, s


def bernstein_set(sample: BidSample, grid: SupportGrid, family: Family, thetas: ThetaGrid,
                  delta: float = 0.1, strategy: str = "all", iters: int = 5,
                  u: UtilityKernel = FIRST_PRICE, sigma: Optional[float] = None) -> IdentifiedSet:
    """Sample-variance-penalized parametric set.

    A grid point is included when some candidate kernel has penalized value
    at most ``sigma``; the witness is stored.  Exclusion is heuristic since
    the penalized problem is not convex.
    """
    sched = bernstein_tolerances(grid.H, grid.n, grid.n_bids, grid.n_values, len(thetas),
                                 delta, sample.N)
    sigma = sched.sigma if sigma is None else float(sigma)
    prof, _, counts = _support_counts(sample)
    phi, base = _sample_system(sample, grid, u)
    values = np.empty(len(thetas))
    witness = []

    def one(t):
        system = base.stack(consistency_rows(base, density(family, t, grid.values)))
        best = (np.inf, None, None)
        for name, x, st in bernstein_candidates(system, counts, sched.lam, iters, strategy):
            if st.value < best[0]:
                best = (st.value, name, x)
            if st.value <= sigma:
                break
        return best

    for k, (val, name, x) in enumerate(parallel_map(one, thetas)):
        values[k] = val
        witness.append((name, x))
    mask = values <= sigma
    return IdentifiedSet("mask", thetas=thetas.points, mask=mask, values=values,
                         tolerance=sigma,
                         diagnostics={"schedule": sched.as_dict(), "exclusion": "heuristic",
                                      "strategy": strategy, "witness": witness,
                                      "family": family.kind})


# ---------------------------------------------------------------------------
# subsampling


@dataclass
class SubsampleStat:
    """Subsample statistics ``C^m`` and the resulting cutoff ``tau``."""

    k: int
    s: int
    alpha: float
    stats: np.ndarray
    tau: float
    theta_hat: np.ndarray
    rounds: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)


def _subsample_weights(inv: np.ndarray, n_support: int, N: int, k: int, s: int, seed) -> np.ndarray:
    """Profile weights of ``k`` size-``s`` subsamples, one seed stream per draw."""
    children = np.random.SeedSequence(seed).spawn(k)
    W = np.empty((k, n_support))
    for m, child in enumerate(children):
        idx = np.random.default_rng(child).choice(N, size=s, replace=False)
        W[m] = np.bincount(inv[idx], minlength=n_support) / s
    return W


def subsample_cutoff(sample: BidSample, grid: SupportGrid, family: Family, thetas: ThetaGrid,
                     theta_hat=None, k: int = 50, s: Optional[int] = None, alpha: float = 0.05,
                     refine_rounds: int = 2, seed: int = 0, u: UtilityKernel = FIRST_PRICE,
                     q_full: Optional[np.ndarray] = None) -> SubsampleStat:
    """Cutoff ``tau = max(q_{1-alpha}(C^m), 0) / sqrt(N)``, ``C^m = sqrt(s) sup Q_m``.

    ``theta_hat`` is a boolean mask over ``thetas``; by default the points
    minimizing the full-sample ``Q``.  After each round the preliminary set is
    replaced by ``{Q_N <= tau}``.
    """
    N = sample.N
    s = max(1, N // 4) if s is None else int(s)
    if not 0 < s < N:
        raise ValueError("subsample size must satisfy 0 < s < N")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    diag = {}
    if k < 10:
        warnings.warn("fewer than 10 subsamples; the quantile is unstable")
        diag["warning"] = "k < 10"
    prof, inv, counts = _support_counts(sample)
    phi, base = _sample_system(sample, grid, u)
    if q_full is None:
        q_full = minimax_over_grid(base, family, thetas, grid.values)
    if theta_hat is None:
        theta_hat = q_full <= q_full.min() + 1e-9
    theta_hat = np.asarray(theta_hat, dtype=bool)
    if not theta_hat.any():
        raise ValueError("preliminary set is empty")
    W = _subsample_weights(inv, prof.shape[0], N, k, s, seed)
    cache = np.full((k, len(thetas)), np.nan)
    rounds = []
    tau = 0.0
    for r in range(refine_rounds + 1):
        need = np.flatnonzero(theta_hat & np.isnan(cache[0]))
        if need.size:
            sub = ThetaGrid(family, thetas.points[need])
            for m in range(k):
                cache[m, need] = minimax_over_grid(base, family, sub, grid.values, W[m])
        C = math.sqrt(s) * np.max(cache[:, theta_hat], axis=1)
        tau = max(float(np.quantile(C, 1 - alpha)), 0.0) / math.sqrt(N)
        rounds.append({"round": r, "size": int(theta_hat.sum()), "tau": tau})
        if r == refine_rounds:
            break
        new_hat = q_full <= tau
        if not new_hat.any():
            new_hat = q_full <= q_full.min() + 1e-9
        if np.array_equal(new_hat, theta_hat):
            break
        theta_hat = new_hat
    return SubsampleStat(k, s, alpha, C, tau, theta_hat, rounds,
                         {**diag, "q_full": q_full, "N": N, "seed": seed})


def subsampling_confidence_set(sample: BidSample, grid: SupportGrid, family: Family,
                               thetas: ThetaGrid, alpha: float = 0.05, k: int = 50,
                               s: Optional[int] = None, refine_rounds: int = 2, seed: int = 0,
                               u: UtilityKernel = FIRST_PRICE,
                               tau: Optional[float] = None) -> IdentifiedSet:
    """``{theta : Q_N(theta) <= tau}`` with ``tau`` from :func:`subsample_cutoff`."""
    phi, base = _sample_system(sample, grid, u)
    q = minimax_over_grid(base, family, thetas, grid.values)
    stat = None
    if tau is None:
        stat = subsample_cutoff(sample, grid, family, thetas, None, k, s, alpha,
                                refine_rounds, seed, u, q_full=q)
        tau = stat.tau
    out = parametric_identified_set(phi, grid, family, thetas, tau, u, values=q)
    out.diagnostics.update(alpha=alpha, N=sample.N, cutoff=stat)
    return out


# ---------------------------------------------------------------------------
# Bayesian bootstrap


def bootstrap_weights(sample: BidSample, draws: int, seed: int) -> np.ndarray:
    """Normalized exponential observation weights aggregated onto the support."""
    if draws < 1:
        raise ValueError("need at least one bootstrap draw")
    prof, inv, _ = _support_counts(sample)
    children = np.random.SeedSequence(seed).spawn(draws)
    W = np.empty((draws, prof.shape[0]))
    for d, child in enumerate(children):
        w = np.random.default_rng(child).standard_exponential(sample.N)
        W[d] = np.bincount(inv, weights=w, minlength=prof.shape[0]) / w.sum()
    return W


def bayesian_bootstrap_sets(sample: BidSample, grid: SupportGrid, draws: int = 100,
                            seed: int = 0, moment=None, family: Optional[Family] = None,
                            thetas: Optional[ThetaGrid] = None, tol: Optional[float] = None,
                            delta: float = 0.1, u: UtilityKernel = FIRST_PRICE,
                            weights: Optional[np.ndarray] = None) -> list:
    """One identified set per posterior draw of the bid distribution.

    Give either ``moment`` (a function or table over values; returns
    intervals) or ``family`` with ``thetas`` (returns masks).  ``tol``
    defaults to the Hoeffding tolerance of the matching mode.  ``weights``
    may replace the random draws (rows over the observed support).
    """
    if (moment is None) == (family is None):
        raise ValueError("pass exactly one of moment or family")
    phi, base = _sample_system(sample, grid, u)
    W = bootstrap_weights(sample, draws, seed) if weights is None else np.atleast_2d(weights)
    if family is None:
        if tol is None:
            tol = hoeffding_tolerances(grid.H, grid.n, grid.n_bids, delta, sample.N).sigma
        fv = tabulate_moment(moment, grid.values)
        out = []
        for w in W:
            obj = np.asarray(fv @ base.recovery_matrix(w)).ravel()
            out.append(optimize_over(base.reweighted(w), obj, tol))
        return out
    if thetas is None:
        thetas = family.default_grid()
    if tol is None:
        tol = hoeffding_tolerances(grid.H, grid.n, grid.n_bids, delta, sample.N, "parametric",
                                   grid.n_values, len(thetas)).sigma
    out = []
    for w in W:
        q = minimax_over_grid(base, family, thetas, grid.values, w)
        out.append(parametric_identified_set(phi, grid, family, thetas, tol, u, values=q))
    return out
