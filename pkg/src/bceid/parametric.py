"""Parametric value families and identified sets over explicit parameter grids."""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import gammaln, logsumexp

from .lp import FEAS_TOL, ConstraintSystem, minimax, parallel_map
from .model import FIRST_PRICE, DomainError, SupportGrid, UtilityKernel
from .sharp import BidDistribution, IdentifiedSet, build_bce_cv, consistency_rows

log = logging.getLogger(__name__)

PARAM_NAMES = {
    "truncated_normal": ("mu", "sigma"),
    "truncated_poisson": ("lam",),
    "binomial": ("p",),
    "truncated_geometric": ("p",),
}
ALIASES = {"normal": "truncated_normal", "gaussian": "truncated_normal",
           "poisson": "truncated_poisson", "geometric": "truncated_geometric"}


def _canonical(kind: str) -> str:
    kind = ALIASES.get(kind, kind)
    if kind not in PARAM_NAMES:
        raise ValueError(f"unknown family {kind!r}; choose from {sorted(PARAM_NAMES)}")
    return kind


@dataclass(frozen=True)
class Family:
    """One of the four discretized value families on a support with max ``H``.

    The normal kernel is ``exp(-(v - mu)^2 / sigma^2)`` (no factor 2), the
    binomial uses ``H`` trials and needs integer values.
    """

    kind: str
    H: float

    def __post_init__(self):
        object.__setattr__(self, "kind", _canonical(self.kind))
        if not self.H > 0:
            raise DomainError("H must be positive")

    @property
    def param_names(self) -> tuple:
        return PARAM_NAMES[self.kind]

    @property
    def dim(self) -> int:
        return len(self.param_names)

    def check(self, theta) -> np.ndarray:
        t = np.atleast_1d(np.asarray(theta, dtype=float))
        if t.shape != (self.dim,) or not np.all(np.isfinite(t)):
            raise DomainError(f"{self.kind} takes parameters {self.param_names}")
        if self.kind == "truncated_normal":
            ok = 0 <= t[0] <= self.H and 0 < t[1] <= self.H
        elif self.kind == "truncated_poisson":
            ok = t[0] > 0
        else:
            ok = 0 < t[0] < 1
        if not ok:
            raise DomainError(f"theta {tuple(t)} outside the {self.kind} parameter box")
        return t

    def default_grid(self) -> "ThetaGrid":
        """The paper-figure grids: half-unit steps for normal and Poisson, 0.01 for p."""
        H = self.H
        if self.kind == "truncated_normal":
            mu = np.arange(0.0, H + 1e-9, 0.5)
            sd = np.arange(0.5, H / 2 + 1e-9, 0.5)
            pts = np.array([(m, s) for m in mu for s in sd])
        elif self.kind == "truncated_poisson":
            pts = np.arange(0.5, H + 1e-9, 0.5)[:, None]
        else:
            pts = np.round(np.arange(1, 100) * 0.01, 2)[:, None]
        return ThetaGrid(self, pts)


@dataclass(frozen=True)
class ThetaGrid:
    """A finite parameter set; its size enters the tolerance formulas."""

    family: Family
    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.shape[0] == 0:
            raise DomainError("empty parameter grid")
        for t in pts:
            self.family.check(t)
        object.__setattr__(self, "points", pts)

    @classmethod
    def product(cls, family: Family, *axes: Sequence[float]) -> "ThetaGrid":
        mesh = np.meshgrid(*[np.asarray(a, dtype=float) for a in axes], indexing="ij")
        return cls(family, np.stack([m.ravel() for m in mesh], axis=1))

    def __len__(self):
        return self.points.shape[0]

    def __iter__(self):
        return iter(self.points)


def density(family: Family, theta, values) -> np.ndarray:
    """Normalized mass of ``family`` at ``theta`` over the points ``values``."""
    t = family.check(theta)
    v = np.asarray(values, dtype=float)
    if family.kind == "truncated_normal":
        logw = -((v - t[0]) ** 2) / t[1] ** 2
    elif family.kind == "truncated_poisson":
        logw = v * np.log(t[0]) - gammaln(v + 1)
    elif family.kind == "binomial":
        k = np.rint(v)
        if np.any(np.abs(k - v) > 1e-9) or v.min() < 0 or v.max() > family.H:
            raise DomainError("binomial family needs integer values in [0, H]")
        logw = (gammaln(family.H + 1) - gammaln(k + 1) - gammaln(family.H - k + 1)
                + k * np.log(t[0]) + (family.H - k) * np.log1p(-t[0]))
    else:
        logw = v * np.log1p(-t[0])
    return np.exp(logw - logsumexp(logw))


def moment_summary(family: Family, theta, values) -> tuple:
    """Exact ``(mean, sd)`` of the discrete density."""
    p = density(family, theta, values)
    v = np.asarray(values, dtype=float)
    mean = float(p @ v)
    var = float(p @ (v - mean) ** 2)
    return mean, float(np.sqrt(max(var, 0.0)))


def minimax_over_grid(base: ConstraintSystem, family: Family, thetas: ThetaGrid,
                      values, weights=None) -> np.ndarray:
    """``Q(theta) = min_x max_j F_j(x; theta)`` for every grid point.

    ``base`` holds the obedience rows; density rows for each ``theta`` are
    appended.  ``weights`` re-weights the support (bootstrap, subsamples).
    """
    def one(t):
        system = base.stack(consistency_rows(base, density(family, t, values)))
        return minimax(system, weights).value
    return np.array(parallel_map(one, thetas), dtype=float)


def parametric_identified_set(phi: BidDistribution, grid: SupportGrid, family: Family,
                              thetas: Optional[ThetaGrid] = None, tol: float = 0.0,
                              u: UtilityKernel = FIRST_PRICE,
                              values: Optional[np.ndarray] = None) -> IdentifiedSet:
    """Mask of grid points with ``Q(theta) <= tol`` plus the raw ``Q`` values.

    At ``tol = 0`` a small solver allowance ``FEAS_TOL`` is added.  ``values``
    lets a caller reuse precomputed ``Q`` values.
    """
    thetas = family.default_grid() if thetas is None else thetas
    if values is None:
        values = minimax_over_grid(build_bce_cv(phi, grid, u), family, thetas, grid.values)
    mask = values <= tol + FEAS_TOL
    return IdentifiedSet("mask", thetas=thetas.points, mask=mask, values=np.asarray(values),
                         tolerance=float(tol),
                         diagnostics={"family": family.kind, "n_theta": len(thetas)})


def mask_rows(result: IdentifiedSet, family: Family) -> list:
    """CSV-ready rows: parameters, raw Q, tolerance, inclusion flag."""
    rows = []
    for t, q, m in zip(result.thetas, result.values, result.mask):
        row = {name: float(x) for name, x in zip(family.param_names, t)}
        row.update(minimax=float(q), tolerance=result.tolerance, feas_tol=result.feas_tol,
                   included=int(bool(m)))
        rows.append(row)
    return rows
