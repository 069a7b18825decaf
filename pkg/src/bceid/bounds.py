"""Closed-form benchmarks: the BBM quantile constraint and mean bounds, and
the continuous IPV bid inversion.

The BBM bounds assume continuously differentiable value quantiles; applied
to discrete bid distributions they are approximations and reports say so.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .model import FIRST_PRICE, DomainError, SupportGrid, UtilityKernel
from .sharp import BidDistribution, moment_bounds_cv

CHECK_ATOL = 1e-9


@dataclass(frozen=True)
class QuantileFn:
    """Step quantile function: ``v(y) = values[k]`` for ``y`` in ``(q[k-1], q[k]]``.

    ``q`` is strictly increasing and ends at 1; ``q[-1]`` is implicitly 0.
    """

    q: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).ravel()
        v = np.asarray(self.values, dtype=float).ravel()
        if q.size == 0 or q.size != v.size:
            raise ValueError("need one value per breakpoint")
        if q[0] <= 0 or abs(q[-1] - 1) > 1e-12 or np.any(np.diff(q) <= 0):
            raise ValueError("breakpoints must increase strictly from (0, 1] to 1")
        if np.any(np.diff(v) < 0):
            raise ValueError("quantile values must be nondecreasing")
        q[-1] = 1.0
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, c: float) -> "QuantileFn":
        return cls([1.0], [c])

    @classmethod
    def from_distribution(cls, points, probs) -> "QuantileFn":
        """Quantile function of a discrete distribution (zero masses dropped)."""
        points = np.asarray(points, dtype=float)
        probs = np.asarray(probs, dtype=float)
        order = np.argsort(points)
        points, probs = points[order], probs[order]
        keep = probs > 0
        points, probs = points[keep], probs[keep]
        cdf = np.cumsum(probs) / probs.sum()
        return cls(cdf, points)

    @classmethod
    def two_point(cls, theta: float, H: float) -> "QuantileFn":
        """``0`` below quantile ``theta`` and ``H`` above it."""
        if not 0 <= theta < 1:
            raise ValueError("theta must lie in [0, 1)")
        if theta == 0:
            return cls.constant(H)
        return cls([theta, 1.0], [0.0, H])

    def __call__(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        k = np.searchsorted(self.q, y, side="left")
        return self.values[np.minimum(k, self.values.size - 1)]

    def mean(self) -> float:
        return float(np.diff(np.concatenate([[0.0], self.q])) @ self.values)

    def weighted_average(self, q, alpha: float) -> np.ndarray:
        """``q^-alpha * int_0^q alpha y^(alpha-1) v(y) dy``, exactly per step."""
        q = np.atleast_1d(np.asarray(q, dtype=float))
        lo = np.concatenate([[0.0], self.q[:-1]])
        upper = np.minimum(q[:, None], self.q[None, :])
        lower = np.minimum(q[:, None], lo[None, :])
        integral = (upper ** alpha - lower ** alpha) @ self.values
        return integral / q ** alpha


@dataclass
class BbmCheck:
    holds: bool
    violated_at: np.ndarray
    lhs: np.ndarray
    rhs: np.ndarray

    def __bool__(self):
        return self.holds


def bbm_constraint_check(v: QuantileFn, Bq: QuantileFn, n: int, q_grid=None,
                         atol: float = CHECK_ATOL) -> BbmCheck:
    """Check ``q^-a int_0^q a y^(a-1) v(y) dy <= B(q)`` with ``a = (n-1)/n``.

    By default the grid is the union of both functions' breakpoints and
    their midpoints, which is where a step-function violation can first occur.
    """
    if n < 2:
        raise DomainError("the BBM constraint needs at least two bidders")
    alpha = (n - 1) / n
    if q_grid is None:
        pts = np.union1d(v.q, Bq.q)
        mids = 0.5 * (pts[1:] + pts[:-1])
        q_grid = np.unique(np.concatenate([pts, mids, [pts[0] / 2]]))
    q = np.asarray(q_grid, dtype=float)
    if np.any(q <= 0) or np.any(q > 1):
        raise ValueError("quantiles must lie in (0, 1]")
    lhs = v.weighted_average(q, alpha)
    rhs = Bq(q)
    bad = lhs > rhs + atol
    return BbmCheck(not bad.any(), q[bad], lhs, rhs)


def bbm_mean_upper(R: float, H: float, n: int = 2, variant: str = "general",
                   L: Optional[float] = None) -> float:
    """Upper bound on the mean common value from observed revenue ``R``.

    ``general``: ``sqrt(2n/(n-1) H R)``.  ``two_bidder``: ``2 sqrt(R H) - R``.
    ``lipschitz``: ``R sqrt(2/(n-1)) + sqrt(2n/(n-1) L R)``.
    """
    if n < 2:
        raise DomainError("need at least two bidders")
    if R < 0 or (variant != "lipschitz" and R > H + 1e-12):
        raise DomainError("revenue must lie in [0, H]")
    if variant == "general":
        return math.sqrt(2 * n / (n - 1) * H * R)
    if variant == "two_bidder":
        if n != 2:
            raise DomainError("the two-bidder bound needs n = 2")
        return 2 * math.sqrt(R * H) - R
    if variant == "lipschitz":
        if L is None or L <= 0:
            raise DomainError("the Lipschitz bound needs L > 0")
        return R * math.sqrt(2 / (n - 1)) + math.sqrt(2 * n / (n - 1) * L * R)
    raise ValueError(f"unknown variant {variant!r}")


def bbm_vs_sharp_report(phi: BidDistribution, grid: SupportGrid,
                        u: UtilityKernel = FIRST_PRICE) -> dict:
    """Sharp mean interval next to the BBM closed forms at ``R = E[max bid]``.

    When the maximum bid is degenerate at ``b*``, the two-point value
    distribution with ``theta = ((H - b*)/H)^2`` satisfies the BBM
    constraint with mean ``2b* - b*^2/H``; its ratio to the sharp upper bound
    is reported.
    """
    sharp = moment_bounds_cv(grid.values, phi, grid, u)
    H, n = grid.H, grid.n
    maxb = phi.bid_values(grid).max(axis=1)
    R = float(phi.probs @ maxb)
    out = {"sharp_lower": sharp.lower, "sharp_upper": sharp.upper, "revenue": R, "H": H,
           "n": n, "bbm_general": bbm_mean_upper(R, H, n, "general"),
           "bbm_two_bidder": bbm_mean_upper(R, H, n, "two_bidder") if n == 2 else float("nan"),
           "two_point_mean": float("nan"), "two_point_check": None,
           "approximation": "closed forms assume continuous quantiles; phi is discrete"}
    if np.ptp(maxb) == 0 and n == 2:
        b = float(maxb[0])
        theta = ((H - b) / H) ** 2
        vq = QuantileFn.two_point(theta, H) if theta < 1 else QuantileFn.constant(0.0)
        out["two_point_mean"] = vq.mean()
        out["two_point_check"] = bool(bbm_constraint_check(vq, QuantileFn.constant(b), n))
    U = sharp.upper
    out["ratio_general"] = out["bbm_general"] / U if U > 0 else float("nan")
    out["ratio_two_point"] = out["two_point_mean"] / U if U > 0 else float("nan")
    out["sharp_below_general"] = bool(U <= out["bbm_general"] + 1e-9)
    return out


Fn = Union[Callable[[np.ndarray], np.ndarray], float]


def ipv_invert(b, G_max_given_b: Fn, g_max_given_b: Fn):
    """``v = b + G(b|b) / g(b|b)`` for the highest opposing bid's CDF and density."""
    b_arr = np.asarray(b, dtype=float)
    G = np.asarray(G_max_given_b(b_arr) if callable(G_max_given_b) else G_max_given_b,
                   dtype=float)
    g = np.asarray(g_max_given_b(b_arr) if callable(g_max_given_b) else g_max_given_b,
                   dtype=float)
    if np.any(g == 0) or not np.all(np.isfinite(g)):
        raise DomainError("conditional density must be positive and finite at the bid")
    v = b_arr + G / g
    return float(v) if np.ndim(v) == 0 else v
