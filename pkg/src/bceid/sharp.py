"""Sharp identification through Bayes-correlated-equilibrium linear programs.

Builders turn an observed bid distribution ``phi`` into a
:class:`~bceid.lp.ConstraintSystem` over conditional kernels ``x(.|b)``, one
probability block per support profile ``b``.  Best-response rows are stored
negated, ``F_j = sum phi(b) x (u_dev - u) <= 0``, with one row per
``(player, recommended bid, deviation)`` including the trivial
``deviation == recommendation`` rows, so a common-value system always has
``n |B|^2`` of them.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

import numpy as np
import scipy.sparse as sp

from .lp import FEAS_TOL, ConstraintSystem, make_lp, solve
from .model import FIRST_PRICE, DomainError, MetricFn, SupportGrid, UtilityKernel

log = logging.getLogger(__name__)

PROB_ATOL = 1e-12


@dataclass(frozen=True)
class BidDistribution:
    """Probability mass ``phi`` on bid-index profiles (rows of ``profiles``)."""

    profiles: np.ndarray
    probs: np.ndarray
    origin: str = "exact"
    n_obs: Optional[int] = None

    def __post_init__(self):
        prof = np.atleast_2d(np.asarray(self.profiles, dtype=np.int64))
        probs = np.asarray(self.probs, dtype=float).ravel()
        if prof.shape[0] != probs.size or probs.size == 0:
            raise ValueError("need one probability per profile and a nonempty support")
        if np.any(probs < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(probs.sum() - 1.0) > PROB_ATOL:
            raise ValueError(f"probabilities sum to {probs.sum()!r}, not 1")
        keep = probs > 0
        prof, probs = prof[keep], probs[keep]
        order = np.lexsort(prof.T[::-1])
        prof, probs = prof[order], probs[order]
        if len({tuple(r) for r in prof}) != len(prof):
            raise ValueError("duplicate profiles")
        object.__setattr__(self, "profiles", prof)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def from_bids(cls, grid: SupportGrid, masses: Mapping[tuple, float], **kw) -> "BidDistribution":
        """Build from ``{(bid values...): probability}``."""
        prof = [grid.profile_indices(b) for b in masses]
        return cls(np.array(prof), np.array(list(masses.values()), dtype=float), **kw)

    @classmethod
    def from_dense(cls, grid: SupportGrid, pmf, threshold: float = 0.0, **kw) -> "BidDistribution":
        """From a length-``|B|^n`` vector; entries ``<= threshold`` are dropped."""
        pmf = np.clip(np.asarray(pmf, dtype=float).ravel(), 0.0, None)
        keep = np.flatnonzero(pmf > threshold)
        p = pmf[keep] / pmf[keep].sum()
        return cls(grid.all_profiles()[keep], p, **kw)

    @property
    def size(self) -> int:
        return self.probs.size

    def dense(self, grid: SupportGrid) -> np.ndarray:
        out = np.zeros(grid.n_profiles)
        out[grid.encode(self.profiles)] = self.probs
        return out

    def bid_values(self, grid: SupportGrid) -> np.ndarray:
        return grid.bids[self.profiles]

    def expected_max_bid(self, grid: SupportGrid) -> float:
        return float(self.probs @ self.bid_values(grid).max(axis=1))


@dataclass
class IdentifiedSet:
    """An interval, a membership mask over a parameter grid, or a certificate.

    ``values`` holds the raw minimax statistic per grid point for masks.
    """

    kind: str
    lower: float = float("nan")
    upper: float = float("nan")
    thetas: Optional[np.ndarray] = None
    mask: Optional[np.ndarray] = None
    values: Optional[np.ndarray] = None
    tolerance: float = 0.0
    feas_tol: float = FEAS_TOL
    certificate: Optional[np.ndarray] = field(default=None, repr=False)
    diagnostics: dict = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        if self.kind == "interval":
            return not (np.isfinite(self.lower) and np.isfinite(self.upper))
        if self.kind == "mask":
            return not bool(np.any(self.mask))
        return self.certificate is None

    def contains(self, other: "IdentifiedSet", atol: float = 0.0) -> bool:
        if self.kind == "interval":
            return self.lower <= other.lower + atol and other.upper <= self.upper + atol
        return bool(np.all(self.mask[other.mask]))

    def interval(self) -> tuple:
        return (self.lower, self.upper)

    def members(self) -> np.ndarray:
        return self.thetas[self.mask]


@dataclass(frozen=True)
class Membership:
    member: bool
    kernel: Optional[np.ndarray]
    system: ConstraintSystem = field(repr=False)

    def __bool__(self):
        return self.member


# ---------------------------------------------------------------------------
# builders


def build_bce_general(phi: BidDistribution, n_actions: Sequence[int], n_states: int,
                      utility: Callable[[int, tuple, int], float],
                      signal_sizes: Optional[Sequence[int]] = None) -> ConstraintSystem:
    """Obedience rows for an arbitrary finite game.

    ``utility(i, a, theta)`` is player ``i``'s payoff at action profile ``a``
    (tuple of action indices) in state ``theta``.  The kernel
    ``x(theta, t | a)`` enumerates ``(theta, t_1, ..., t_n)`` with ``theta``
    most significant.  Rows are indexed ``(i, t_i, a_i, a_i')``.
    """
    n = len(n_actions)
    sig = tuple(signal_sizes) if signal_sizes is not None else (1,) * n
    if len(sig) != n:
        raise DomainError("one signal-space size per player")
    if phi.profiles.shape[1] != n:
        raise DomainError("profile width does not match the number of players")
    if np.any(phi.profiles >= np.asarray(n_actions)[None, :]):
        raise DomainError("profile uses an action outside the declared sets")
    states = list(itertools.product(range(n_states), *(range(s) for s in sig)))
    ns = len(states)
    K = phi.size
    row_index = {}
    labels = []
    for i in range(n):
        for t in range(sig[i]):
            for a in range(n_actions[i]):
                for d in range(n_actions[i]):
                    row_index[(i, t, a, d)] = len(labels)
                    labels.append(("br", i, t, a, d))
    rows, cols, vals = [], [], []
    for k, prof in enumerate(map(tuple, phi.profiles)):
        for i in range(n):
            for d in range(n_actions[i]):
                dev = prof[:i] + (d,) + prof[i + 1:]
                for s, (theta, *t) in enumerate(states):
                    rows.append(row_index[(i, t[i], prof[i], d)])
                    cols.append(k * ns + s)
                    vals.append(utility(i, dev, theta) - utility(i, prof, theta))
    coef = sp.csr_matrix((vals, (rows, cols)), shape=(len(labels), K * ns))
    coef.eliminate_zeros()
    rec = sp.csr_matrix(
        (np.ones(K * ns), (np.tile(np.arange(ns), K), np.arange(K * ns))), shape=(ns, K * ns))
    return ConstraintSystem(
        coef, np.zeros(len(labels)), np.repeat(np.arange(K), ns), np.repeat(np.arange(K), ns),
        phi.probs, tuple(labels), phi.profiles, "general", rec)


def _deviation_flats(grid: SupportGrid, profiles: np.ndarray, i: int) -> np.ndarray:
    """Flat indices of ``(b', b_-i)`` for every profile (rows) and deviation b' (cols)."""
    K = profiles.shape[0]
    dev = np.repeat(profiles[:, None, :], grid.n_bids, axis=1)
    dev[:, :, i] = np.arange(grid.n_bids)[None, :]
    return grid.encode(dev.reshape(K * grid.n_bids, grid.n)).reshape(K, grid.n_bids)


def build_bce_cv(phi: BidDistribution, grid: SupportGrid,
                 u: UtilityKernel = FIRST_PRICE) -> ConstraintSystem:
    """Common-value obedience rows over ``x(v | b)``, ``b`` in the support of ``phi``."""
    _check_phi(phi, grid)
    U = u.table(grid)
    nB, nV, K, n = grid.n_bids, grid.n_values, phi.size, grid.n
    flat = grid.encode(phi.profiles)
    rows, cols, vals = [], [], []
    for i in range(n):
        devs = _deviation_flats(grid, phi.profiles, i)              # K x nB
        delta = U[i][devs] - U[i][flat][:, None, :]                   # K x nB x nV
        r = (i * nB + phi.profiles[:, i])[:, None] * nB + np.arange(nB)[None, :]
        c = np.arange(K)[:, None] * nV + np.arange(nV)[None, :]
        rows.append(np.broadcast_to(r[:, :, None], delta.shape).ravel())
        cols.append(np.broadcast_to(c[:, None, :], delta.shape).ravel())
        vals.append(delta.ravel())
    m = n * nB * nB
    coef = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(m, K * nV))
    coef.eliminate_zeros()
    labels = tuple(("br", i, 0, a, d) for i in range(n) for a in range(nB) for d in range(nB))
    rec = sp.csr_matrix(
        (np.ones(K * nV), (np.tile(np.arange(nV), K), np.arange(K * nV))), shape=(nV, K * nV))
    blocks = np.repeat(np.arange(K), nV)
    return ConstraintSystem(coef, np.zeros(m), blocks, blocks.copy(), phi.probs, labels,
                            phi.profiles, "cv", rec)


def build_bce_pv(phi: BidDistribution, grid: SupportGrid,
                 u: UtilityKernel = FIRST_PRICE) -> ConstraintSystem:
    """Private values: kernel ``x(v_1..v_n | b)``; rows ``(i, v_i, b_i*, b_i')``."""
    _check_phi(phi, grid)
    U = u.table(grid)
    nB, nV, K, n = grid.n_bids, grid.n_values, phi.size, grid.n
    nJ = nV ** n
    joint = np.indices((nV,) * n).reshape(n, -1).T                    # nJ x n value indices
    flat = grid.encode(phi.profiles)
    rows, cols, vals = [], [], []
    for i in range(n):
        devs = _deviation_flats(grid, phi.profiles, i)
        delta = U[i][devs] - U[i][flat][:, None, :]                   # K x nB x nV
        own = joint[:, i]                                             # nJ
        d = delta[:, :, own]                                          # K x nB x nJ
        r = ((i * nV + own)[None, None, :] * nB + phi.profiles[:, i][:, None, None]) * nB \
            + np.arange(nB)[None, :, None]
        c = np.arange(K)[:, None, None] * nJ + np.arange(nJ)[None, None, :]
        rows.append(np.broadcast_to(r, d.shape).ravel())
        cols.append(np.broadcast_to(c, d.shape).ravel())
        vals.append(d.ravel())
    m = n * nV * nB * nB
    coef = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(m, K * nJ))
    coef.eliminate_zeros()
    labels = tuple(("br", i, v, a, d) for i in range(n) for v in range(nV)
                   for a in range(nB) for d in range(nB))
    rec = sp.csr_matrix(
        (np.ones(K * nJ), (np.tile(np.arange(nJ), K), np.arange(K * nJ))), shape=(nJ, K * nJ))
    blocks = np.repeat(np.arange(K), nJ)
    return ConstraintSystem(coef, np.zeros(m), blocks, blocks.copy(), phi.probs, labels,
                            phi.profiles, "pv", rec)


def build_bce_ipv(phi: BidDistribution, grid: SupportGrid,
                  u: UtilityKernel = FIRST_PRICE) -> ConstraintSystem:
    """Independent private values: per-player marginal kernels ``x_i(v_i | b)``.

    Variable ``((k * n) + i) * |V| + v``; one block per ``(profile, player)``.
    Recovery rows are ``(i, v)`` giving the marginals ``rho_i``.
    """
    _check_phi(phi, grid)
    U = u.table(grid)
    nB, nV, K, n = grid.n_bids, grid.n_values, phi.size, grid.n
    flat = grid.encode(phi.profiles)
    rows, cols, vals = [], [], []
    for i in range(n):
        devs = _deviation_flats(grid, phi.profiles, i)
        delta = U[i][devs] - U[i][flat][:, None, :]                   # K x nB x nV
        r = ((i * nV + np.arange(nV))[None, None, :] * nB + phi.profiles[:, i][:, None, None]) \
            * nB + np.arange(nB)[None, :, None]
        c = ((np.arange(K) * n + i) * nV)[:, None, None] + np.arange(nV)[None, None, :]
        rows.append(np.broadcast_to(r, delta.shape).ravel())
        cols.append(np.broadcast_to(c, delta.shape).ravel())
        vals.append(delta.ravel())
    m = n * nV * nB * nB
    nvar = K * n * nV
    coef = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                         shape=(m, nvar))
    coef.eliminate_zeros()
    labels = tuple(("br", i, v, a, d) for i in range(n) for v in range(nV)
                   for a in range(nB) for d in range(nB))
    var = np.arange(nvar)
    player = (var // nV) % n
    rec = sp.csr_matrix((np.ones(nvar), (player * nV + var % nV, var)), shape=(n * nV, nvar))
    return ConstraintSystem(coef, np.zeros(m), var // nV, var // (n * nV), phi.probs, labels,
                            phi.profiles, "ipv", rec)


def _check_phi(phi: BidDistribution, grid: SupportGrid) -> None:
    if phi.profiles.shape[1] != grid.n:
        raise DomainError(f"profiles have {phi.profiles.shape[1]} bids, grid has {grid.n} players")
    if phi.profiles.min() < 0 or phi.profiles.max() >= grid.n_bids:
        raise DomainError("profile bid index outside the grid")


def consistency_rows(system: ConstraintSystem, target) -> ConstraintSystem:
    """Two-sided rows pinning the recovered state distribution to ``target``.

    Per observation ``b``: ``target(s) - x(s|b) <= 0`` and its negation, so
    the population rows read ``pi(s) - sum_b phi(b) x(s|b) <= 0`` and back.
    """
    R = system.recovery
    if R is None:
        raise ValueError("system has no recovery map")
    target = np.asarray(target, dtype=float).ravel()
    if target.size != R.shape[0]:
        raise DomainError(f"target has {target.size} entries, expected {R.shape[0]}")
    labels = tuple(("density-", s) for s in range(R.shape[0])) \
        + tuple(("density+", s) for s in range(R.shape[0]))
    return ConstraintSystem(
        sp.vstack([-R, R], format="csr"), np.concatenate([target, -target]),
        system.var_block, system.var_profile, system.weights, labels, system.profiles,
        system.layout, system.recovery)


def _feasible(system: ConstraintSystem, tol: float, extra_eq=None):
    sol = solve(system.feasibility_lp(tol, extra_eq=extra_eq))
    return sol.x if sol.optimal else None


def membership_cv(pi, phi: BidDistribution, grid: SupportGrid, u: UtilityKernel = FIRST_PRICE,
                  tol: float = FEAS_TOL) -> Membership:
    """Is ``pi`` (mass over ``V``) in the sharp identified set of ``phi``?"""
    base = build_bce_cv(phi, grid, u)
    system = base.stack(consistency_rows(base, _as_distribution(pi, grid.n_values)))
    x = _feasible(system, tol)
    return Membership(x is not None, x, system)


def membership_pv(pi, phi: BidDistribution, grid: SupportGrid, u: UtilityKernel = FIRST_PRICE,
                  tol: float = FEAS_TOL) -> Membership:
    """``pi`` is a mass over ``V^n`` in flat (player-0-major) order."""
    base = build_bce_pv(phi, grid, u)
    system = base.stack(consistency_rows(base, _as_distribution(pi, grid.n_values ** grid.n)))
    x = _feasible(system, tol)
    return Membership(x is not None, x, system)


def membership_ipv(rhos, phi: BidDistribution, grid: SupportGrid, u: UtilityKernel = FIRST_PRICE,
                   tol: float = FEAS_TOL) -> Membership:
    """``rhos`` lists one value marginal per player."""
    rhos = [_as_distribution(r, grid.n_values) for r in rhos]
    if len(rhos) != grid.n:
        raise DomainError("need one marginal per player")
    base = build_bce_ipv(phi, grid, u)
    system = base.stack(consistency_rows(base, np.concatenate(rhos)))
    x = _feasible(system, tol)
    return Membership(x is not None, x, system)


def _as_distribution(pi, size: int) -> np.ndarray:
    pi = np.asarray(pi, dtype=float).ravel()
    if pi.size != size:
        raise DomainError(f"distribution has {pi.size} entries, expected {size}")
    if np.any(pi < -PROB_ATOL) or abs(pi.sum() - 1) > 1e-9:
        raise DomainError("not a probability vector")
    return pi


def optimize_over(system: ConstraintSystem, objective: np.ndarray, tol: float = 0.0,
                  extra_eq=None) -> IdentifiedSet:
    """Min and max of ``objective . x`` over kernels with every row ``F_j <= tol``."""
    bounds, xs, diag = [], [], {}
    for sense in ("minimize", "maximize"):
        sol = solve(system.feasibility_lp(tol, objective, sense, extra_eq=extra_eq))
        diag[sense] = {"status": sol.status, "max_violation": sol.max_violation,
                       "duality_gap": sol.duality_gap if sol.optimal else float("nan")}
        if not sol.optimal:
            log.info("moment LP %s: %s", sense, sol.status)
            return IdentifiedSet("interval", tolerance=tol, diagnostics=diag)
        bounds.append(sol.objective)
        xs.append(sol.x)
    lo, hi = bounds
    if hi < lo:  # solver noise at a point-identified optimum
        lo = hi = 0.5 * (lo + hi)
    return IdentifiedSet("interval", lo, hi, tolerance=tol, certificate=np.stack(xs),
                         diagnostics=diag)


def tabulate_moment(f, points: np.ndarray) -> np.ndarray:
    if callable(f):
        return np.array([float(f(p)) for p in points])
    arr = np.asarray(f, dtype=float).ravel()
    if arr.size == 1:
        return np.full(points.size, float(arr[0]))
    if arr.size != points.size:
        raise DomainError("moment function table has the wrong length")
    return arr


def moment_bounds_cv(f, phi: BidDistribution, grid: SupportGrid, u: UtilityKernel = FIRST_PRICE,
                     tol: float = 0.0) -> IdentifiedSet:
    """Sharp interval for ``E_pi[f(v)]``; ``f`` is a callable or a table over ``V``.

    ``tol`` relaxes every obedience row to ``F_j <= tol``.
    """
    system = build_bce_cv(phi, grid, u)
    fv = tabulate_moment(f, grid.values)
    obj = fv @ system.recovery_matrix()
    return optimize_over(system, np.asarray(obj).ravel(), tol)


def support_function(z, phi: BidDistribution, grid: SupportGrid,
                     u: UtilityKernel = FIRST_PRICE) -> float:
    """``h(z) = max_{pi in Pi_I} z . pi``."""
    return moment_bounds_cv(z, phi, grid, u).upper


def moment_bounds_pv(f, phi: BidDistribution, grid: SupportGrid, player: int = 0,
                     u: UtilityKernel = FIRST_PRICE, tol: float = 0.0) -> IdentifiedSet:
    """Bounds on ``E[f(v_player)]`` under correlated private values."""
    system = build_bce_pv(phi, grid, u)
    fv = tabulate_moment(f, grid.values)
    joint = np.indices((grid.n_values,) * grid.n).reshape(grid.n, -1)[player]
    obj = fv[joint] @ system.recovery_matrix()
    return optimize_over(system, np.asarray(obj).ravel(), tol)


def _symmetry_coupling(system: ConstraintSystem, n: int, nV: int):
    R = system.recovery_matrix()
    first = R[:nV]
    blocks = [first - R[i * nV:(i + 1) * nV] for i in range(1, n)]
    if not blocks:
        return None
    A = sp.vstack(blocks, format="csr")
    return A, np.zeros(A.shape[0])


def ipv_symmetric_moment_bounds(f, phi: BidDistribution, grid: SupportGrid,
                                u: UtilityKernel = FIRST_PRICE, tol: float = 0.0) -> IdentifiedSet:
    """Bounds on ``E_rho[f(v)]`` for symmetric IPV (``rho_i = rho`` for all ``i``).

    An empty interval refutes symmetric independent private values.
    """
    system = build_bce_ipv(phi, grid, u)
    fv = tabulate_moment(f, grid.values)
    obj = fv @ system.recovery_matrix()[:grid.n_values]
    out = optimize_over(system, np.asarray(obj).ravel(), tol,
                        extra_eq=_symmetry_coupling(system, grid.n, grid.n_values))
    out.diagnostics["refuted"] = out.empty
    return out


def ipv_symmetry_test(phi: BidDistribution, grid: SupportGrid, u: UtilityKernel = FIRST_PRICE,
                      tol: float = FEAS_TOL) -> str:
    """``"consistent"`` or ``"refuted"`` for symmetric IPV."""
    system = build_bce_ipv(phi, grid, u)
    x = _feasible(system, tol, extra_eq=_symmetry_coupling(system, grid.n, grid.n_values))
    return "consistent" if x is not None else "refuted"


def _block_diag(systems: Sequence[ConstraintSystem]) -> ConstraintSystem:
    vb, vp, w, off = [], [], [], []
    nb = npf = 0
    for s in systems:
        vb.append(s.var_block + nb)
        vp.append(s.var_profile + npf)
        nb += s.n_blocks
        npf += s.weights.size
        w.append(s.weights)
        off.append(s.offset)
    rec = None
    if all(s.recovery is not None for s in systems):
        rec = sp.block_diag([s.recovery for s in systems], format="csr")
    return ConstraintSystem(
        sp.block_diag([s.coef for s in systems], format="csr"), np.concatenate(off),
        np.concatenate(vb), np.concatenate(vp), np.concatenate(w),
        tuple(lab for s in systems for lab in s.labels), None, "stacked", rec)


def covariate_beta_membership(beta, phis: Sequence[BidDistribution], covariates,
                              grid: SupportGrid, u: UtilityKernel = FIRST_PRICE,
                              tol: float = FEAS_TOL) -> Membership:
    """Joint feasibility of ``E[v | x0] = x0' beta`` across covariate cells.

    ``phis[c]`` is the bid distribution in cell ``covariates[c]``.
    """
    X = np.atleast_2d(np.asarray(covariates, dtype=float))
    beta = np.asarray(beta, dtype=float).ravel()
    if X.shape[0] != len(phis):
        raise DomainError("one bid distribution per covariate value")
    if X.shape[1] != beta.size:
        raise DomainError(f"beta has {beta.size} entries, covariates have {X.shape[1]}")
    cells = [build_bce_cv(p, grid, u) for p in phis]
    system = _block_diag(cells)
    R = system.recovery_matrix()
    nV = grid.n_values
    mean_rows = sp.vstack([sp.csr_matrix(R[c * nV:(c + 1) * nV].T @ grid.values)
                           for c in range(len(cells))], format="csr")
    x = _feasible(system, tol, extra_eq=(mean_rows, X @ beta))
    return Membership(x is not None, x, system)


# ---------------------------------------------------------------------------
# joint (psi) formulations: winning bids, counterfactuals, equilibrium generation


def joint_obedience_rows(grid: SupportGrid, u: UtilityKernel,
                         profiles: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """Negated obedience rows in the joint variables ``psi(v, b)``.

    Variable ``k * |V| + v`` for the ``k``-th profile of ``profiles``
    (default: all of ``B^n``).  Rows ``(i, b_i*, b_i')``.
    """
    if profiles is None:
        profiles = grid.all_profiles()
    U = u.table(grid)
    nB, nV, n = grid.n_bids, grid.n_values, grid.n
    K = profiles.shape[0]
    flat = grid.encode(profiles)
    rows, cols, vals = [], [], []
    for i in range(n):
        devs = _deviation_flats(grid, profiles, i)
        delta = U[i][devs] - U[i][flat][:, None, :]
        r = (i * nB + profiles[:, i])[:, None] * nB + np.arange(nB)[None, :]
        c = np.arange(K)[:, None] * nV + np.arange(nV)[None, :]
        rows.append(np.broadcast_to(r[:, :, None], delta.shape).ravel())
        cols.append(np.broadcast_to(c[:, None, :], delta.shape).ravel())
        vals.append(delta.ravel())
    A = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n * nB * nB, K * nV))
    A.eliminate_zeros()
    return A


def winning_bid_constraints(F_win, grid: SupportGrid, u: UtilityKernel = FIRST_PRICE,
                            profiles: Optional[np.ndarray] = None) -> ConstraintSystem:
    """System in ``psi(v, b)`` when only the winning-bid CDF is observed.

    ``F_win[x]`` is the CDF of the maximum bid at each grid bid.  ``psi`` is a
    single probability block; rows are the joint obedience rows followed by
    two-sided CDF matching rows.
    """
    F = np.asarray(F_win, dtype=float).ravel()
    if F.size != grid.n_bids or np.any(np.diff(F) < -PROB_ATOL) or abs(F[-1] - 1) > 1e-9:
        raise DomainError("F_win must be a CDF over the bid grid")
    if profiles is None:
        profiles = grid.all_profiles()
    br = joint_obedience_rows(grid, u, profiles)
    nV, K = grid.n_values, profiles.shape[0]
    top = profiles.max(axis=1)
    below = (top[None, :] <= np.arange(grid.n_bids)[:, None]).astype(float)   # nB x K
    C = sp.csr_matrix(np.repeat(below, nV, axis=1))
    coef = sp.vstack([br, C, -C], format="csr")
    offset = np.concatenate([np.zeros(br.shape[0]), -F, F])
    labels = tuple(("br", i, 0, a, d) for i in range(grid.n) for a in range(grid.n_bids)
                   for d in range(grid.n_bids)) \
        + tuple(("cdf+", x) for x in range(grid.n_bids)) + tuple(("cdf-", x) for x in range(grid.n_bids))
    nvar = K * nV
    rec = sp.csr_matrix((np.ones(nvar), (np.arange(nvar) % nV, np.arange(nvar))), shape=(nV, nvar))
    return ConstraintSystem(coef, offset, np.zeros(nvar, dtype=np.int64),
                            np.zeros(nvar, dtype=np.int64), np.ones(1), labels, profiles,
                            "joint", rec)


def winning_bid_moment_bounds(f, F_win, grid: SupportGrid, u: UtilityKernel = FIRST_PRICE,
                              tol: float = 0.0) -> IdentifiedSet:
    system = winning_bid_constraints(F_win, grid, u)
    obj = tabulate_moment(f, grid.values) @ system.recovery_matrix()
    return optimize_over(system, np.asarray(obj).ravel(), tol)


def counterfactual_bounds(phi: BidDistribution, grid: SupportGrid, W: MetricFn,
                          u_alt: UtilityKernel, u: UtilityKernel = FIRST_PRICE,
                          tol: float = 0.0) -> IdentifiedSet:
    """Sharp bounds on ``E[W(v, b)]`` under any BCE of the alternative auction.

    One coupled program per bound: the current-auction kernel ``x(v|b)``
    (obedience under ``u`` against ``phi``) and the alternative joint
    ``psi~(v, b)`` (obedience under ``u_alt``) share the value marginal.
    """
    cur = build_bce_cv(phi, grid, u)
    nV, P = grid.n_values, grid.n_profiles
    alt = joint_obedience_rows(grid, u_alt)
    nx, npsi = cur.n_vars, nV * P
    G = sp.block_diag([cur.matrix(), alt], format="csr")
    offset = np.concatenate([cur.offset, np.zeros(alt.shape[0])])
    Rpsi = sp.csr_matrix((np.ones(npsi), (np.arange(npsi) % nV, np.arange(npsi))),
                         shape=(nV, npsi))
    link = sp.hstack([-cur.recovery_matrix(), Rpsi], format="csr")
    blocks = sp.hstack([cur.block_matrix(), sp.csr_matrix((cur.n_blocks, npsi))], format="csr")
    total = sp.hstack([sp.csr_matrix((1, nx)), sp.csr_matrix(np.ones((1, npsi)))], format="csr")
    Aeq = sp.vstack([blocks, link, total], format="csr")
    beq = np.concatenate([np.ones(cur.n_blocks), np.zeros(nV), [1.0]])
    Wt = W.table(grid)                                  # nV x P
    obj = np.concatenate([np.zeros(nx), Wt.T.ravel()])  # psi index p * nV + v
    tol_vec = np.full(G.shape[0], float(tol))
    out, diag = [], {}
    for sense in ("minimize", "maximize"):
        lp = make_lp(obj, sense, ub=(G, tol_vec - offset), eq=(Aeq, beq))
        sol = solve(lp)
        diag[sense] = {"status": sol.status, "max_violation": sol.max_violation}
        if not sol.optimal:
            return IdentifiedSet("interval", tolerance=tol, diagnostics=diag)
        out.append(sol.objective)
    return IdentifiedSet("interval", out[0], out[1], tolerance=tol, diagnostics=diag)
