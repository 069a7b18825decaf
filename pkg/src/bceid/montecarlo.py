"""Synthetic equilibrium bid distributions, sampling and the experiment suite."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .inference import (BidSample, bernstein_set, nonparam_moment_interval,
                        parametric_hoeffding_set, subsampling_confidence_set)
from .io import versions, write_csv, write_json
from .lp import FEAS_TOL, SolverError, make_lp, solve
from .model import FIRST_PRICE, DomainError, SupportGrid, UtilityKernel
from .parametric import Family, ThetaGrid, density, mask_rows, parametric_identified_set
from .sharp import BidDistribution, IdentifiedSet, joint_obedience_rows, moment_bounds_cv

log = logging.getLogger(__name__)

SELECTORS = ("max_revenue", "min_revenue", "random_objective", "max_entropy_surrogate")
CLIP = 1e-12


@dataclass(frozen=True)
class BceSolution:
    """Joint ``psi(v, b)`` (shape ``|V| x |B|^n``) and its bid marginal."""

    psi: np.ndarray
    phi: BidDistribution
    selector: str
    objective: float


def solve_bce_joint(pi, grid: SupportGrid, u: UtilityKernel = FIRST_PRICE,
                    objective: Optional[np.ndarray] = None, sense: str = "maximize"):
    """Optimize ``objective . psi`` over common-value BCEs with value marginal ``pi``."""
    pi = np.asarray(pi, dtype=float).ravel()
    nV, P = grid.n_values, grid.n_profiles
    if pi.size != nV or np.any(pi < 0) or abs(pi.sum() - 1) > 1e-9:
        raise DomainError("pi must be a probability vector over the value grid")
    br = joint_obedience_rows(grid, u)
    nvar = nV * P
    marg = sp.csr_matrix((np.ones(nvar), (np.arange(nvar) % nV, np.arange(nvar))),
                         shape=(nV, nvar))
    c = np.zeros(nvar) if objective is None else np.asarray(objective, dtype=float)
    sol = solve(make_lp(c, sense, ub=(br, np.zeros(br.shape[0])), eq=(marg, pi)))
    if not sol.optimal:
        raise SolverError(f"BCE generation LP is {sol.status}")
    return sol.x.reshape(P, nV).T, sol.objective


def generate_bce(pi, grid: SupportGrid, u: UtilityKernel = FIRST_PRICE,
                 selector: str = "max_revenue", seed: int = 0, n_mix: int = 8) -> BceSolution:
    """A BCE bid distribution consistent with value distribution ``pi``.

    ``selector`` picks which equilibrium: revenue extremes, a random linear
    objective, or ``max_entropy_surrogate``, the average of ``n_mix``
    random-objective vertices (still a BCE by convexity, with wider support).
    Masses below 1e-12 are dropped before renormalizing.
    """
    if selector not in SELECTORS:
        raise ValueError(f"unknown selector {selector!r}")
    nV, P = grid.n_values, grid.n_profiles
    if selector in ("max_revenue", "min_revenue"):
        rev = np.tile(u.payments(grid).sum(axis=0)[:, None], (1, nV)).ravel()
        sense = "maximize" if selector == "max_revenue" else "minimize"
        psi, obj = solve_bce_joint(pi, grid, u, rev, sense)
    else:
        rng = np.random.default_rng(seed)
        reps = 1 if selector == "random_objective" else n_mix
        psis, objs = [], []
        for _ in range(reps):
            psi, obj = solve_bce_joint(pi, grid, u, rng.standard_normal(nV * P))
            psis.append(psi)
            objs.append(obj)
        psi, obj = np.mean(psis, axis=0), float(np.mean(objs))
    psi = np.where(psi > CLIP, psi, 0.0)
    phi = BidDistribution.from_dense(grid, psi.sum(axis=0) / psi.sum(), origin="exact")
    log.info("generated BCE with selector=%s seed=%s support=%d", selector, seed, phi.size)
    return BceSolution(psi / psi.sum(), phi, selector, float(obj))


def sample_bids(phi: BidDistribution, N: int, seed: int) -> BidSample:
    """``N`` i.i.d. draws from ``phi`` by inverse CDF over its ordered support."""
    if N < 1:
        raise ValueError("N must be positive")
    rng = np.random.default_rng(seed)
    cdf = np.cumsum(phi.probs)
    k = np.searchsorted(cdf, rng.random(N) * cdf[-1], side="right")
    k = np.minimum(k, phi.size - 1)
    return BidSample(phi.profiles[k], seed)


# ---------------------------------------------------------------------------
# experiment suite

PAPER_THETA0 = {"truncated_normal": (4.0, 1.0), "truncated_poisson": (4.0,),
                "binomial": (0.2,), "truncated_geometric": (0.2,)}


@dataclass(frozen=True)
class ExperimentConfig:
    """Keys of the JSON experiment file; every field has a paper-style default.

    ``theta_axes`` optionally lists one array of grid points per parameter
    (their product is the grid); otherwise the family's default grid is used.
    """

    family: str = "truncated_normal"
    theta0: Optional[tuple] = None
    H: int = 20
    n: int = 2
    N_list: tuple = (1000, 10000, 100000)
    selector: str = "max_entropy_surrogate"
    seed: int = 0
    delta: float = 0.1
    alpha: float = 0.05
    k: int = 50
    s_fraction: float = 0.25
    refine_rounds: int = 2
    theta_axes: Optional[tuple] = None
    methods: tuple = ("hoeffding", "bernstein", "subsampling")

    def __post_init__(self):
        fam = Family(self.family, self.H)
        object.__setattr__(self, "family", fam.kind)
        theta0 = PAPER_THETA0[fam.kind] if self.theta0 is None else self.theta0
        object.__setattr__(self, "theta0", tuple(float(t) for t in np.atleast_1d(theta0)))
        object.__setattr__(self, "N_list", tuple(int(N) for N in self.N_list))
        object.__setattr__(self, "methods", tuple(self.methods))
        unknown = set(self.methods) - {"hoeffding", "bernstein", "subsampling"}
        if unknown:
            raise ValueError(f"unknown methods {sorted(unknown)}")
        if self.selector not in SELECTORS:
            raise ValueError(f"unknown selector {self.selector!r}")
        if not 0 < self.s_fraction < 1:
            raise ValueError("s_fraction must lie in (0, 1)")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f for f in cls.__dataclass_fields__}
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        d = dict(d)
        for key in ("N_list", "methods", "theta0"):
            if key in d and d[key] is not None:
                d[key] = tuple(d[key])
        if d.get("theta_axes") is not None:
            d["theta_axes"] = tuple(tuple(a) for a in d["theta_axes"])
        return cls(**d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def as_dict(self) -> dict:
        return {f: getattr(self, f) for f in self.__dataclass_fields__}

    def grid(self) -> SupportGrid:
        return SupportGrid.integer(self.H, self.n)

    def family_obj(self) -> Family:
        return Family(self.family, self.H)

    def thetas(self) -> ThetaGrid:
        fam = self.family_obj()
        if self.theta_axes is None:
            return fam.default_grid()
        return ThetaGrid.product(fam, *self.theta_axes)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    phi: BidDistribution
    population: IdentifiedSet
    population_moments: dict
    sets: dict = field(default_factory=dict)
    intervals: dict = field(default_factory=dict)
    summary: list = field(default_factory=list)

    def write(self, out_dir, figures: bool = False) -> list:
        """CSV grids, a summary table and a manifest; returns written paths."""
        out = Path(out_dir)
        fam = self.config.family_obj()
        grid = self.config.grid()
        paths = [write_csv(out / "population_set.csv", mask_rows(self.population, fam))]
        phi_rows = [{**{f"bid_{i + 1}": float(b) for i, b in enumerate(grid.bids[p])},
                     "prob": float(q)} for p, q in zip(self.phi.profiles, self.phi.probs)]
        paths.append(write_csv(out / "phi.csv", phi_rows))
        for (method, N), res in sorted(self.sets.items()):
            paths.append(write_csv(out / f"set_{method}_N{N}.csv", mask_rows(res, fam)))
        mrows = [{"N": "population", "moment": k, "lower": v[0], "upper": v[1]}
                 for k, v in self.population_moments.items()]
        for (N, name), iv in sorted(self.intervals.items()):
            mrows.append({"N": N, "moment": name, "lower": iv.lower, "upper": iv.upper})
        paths.append(write_csv(out / "moment_intervals.csv", mrows))
        paths.append(write_csv(out / "summary.csv", self.summary))
        if figures:
            from .plotting import plot_parameter_set
            paths.append(plot_parameter_set(self.population, fam, out / "population_set.png"))
            for (method, N), res in sorted(self.sets.items()):
                paths.append(plot_parameter_set(res, fam, out / f"set_{method}_N{N}.png",
                                                reference=self.population))
        paths.append(write_json(out / "manifest.json", {
            "command": "mc-run", "config": self.config.as_dict(), "feas_tol": FEAS_TOL,
            "versions": versions(), "files": sorted(p.name for p in paths)}))
        return paths


def variance_superset(mean_iv, second_iv) -> tuple:
    """``[E2_min - E_max^2, E2_max - E_min^2]`` clipped at zero below."""
    lo = max(second_iv[0] - mean_iv[1] ** 2, 0.0)
    return lo, max(second_iv[1] - mean_iv[0] ** 2, lo)


def run_experiment(config: ExperimentConfig) -> ExperimentReport:
    """Generate a BCE at ``theta0``, sample it and compute every requested set."""
    grid, fam, thetas = config.grid(), config.family_obj(), config.thetas()
    pi = density(fam, config.theta0, grid.values)
    gen = generate_bce(pi, grid, FIRST_PRICE, config.selector, config.seed)
    phi = gen.phi
    population = parametric_identified_set(phi, grid, fam, thetas)
    mean_iv = moment_bounds_cv(grid.values, phi, grid).interval()
    second_iv = moment_bounds_cv(grid.values ** 2, phi, grid).interval()
    var_iv = variance_superset(mean_iv, second_iv)
    moments = {"mean": mean_iv, "second": second_iv, "variance_superset": var_iv,
               "sd_superset": (float(np.sqrt(var_iv[0])), float(np.sqrt(var_iv[1])))}
    report = ExperimentReport(config, phi, population, moments)
    children = np.random.SeedSequence(config.seed).spawn(len(config.N_list))
    for N, child in zip(config.N_list, children):
        seed = int(child.generate_state(1)[0])
        sample = sample_bids(phi, N, seed)
        for name, f in (("mean", grid.values), ("second", grid.values ** 2)):
            H = float(np.abs(f).max())
            report.intervals[(N, name)] = nonparam_moment_interval(sample, grid, f, config.delta,
                                                                   H=max(H, grid.H))
        for method in config.methods:
            if method == "hoeffding":
                res = parametric_hoeffding_set(sample, grid, fam, thetas, config.delta)
            elif method == "bernstein":
                res = bernstein_set(sample, grid, fam, thetas, config.delta)
            else:
                s = max(1, int(round(config.s_fraction * N)))
                res = subsampling_confidence_set(sample, grid, fam, thetas, config.alpha,
                                                 config.k, s, config.refine_rounds, seed)
            report.sets[(method, N)] = res
            diff = np.logical_xor(res.mask, population.mask).sum()
            report.summary.append({
                "N": N, "method": method, "size": int(res.mask.sum()),
                "population_size": int(population.mask.sum()),
                "sym_diff_fraction": float(diff / len(thetas)),
                "contains_population": int(res.contains(population)),
                "contains_theta0": int(_theta_in(res, config.theta0)),
                "tolerance": res.tolerance, "delta": config.delta, "alpha": config.alpha})
            log.info("N=%d %s: %d/%d points", N, method, res.mask.sum(), len(thetas))
    return report


def _theta_in(res: IdentifiedSet, theta0) -> bool:
    hit = np.all(np.isclose(res.thetas, np.asarray(theta0)[None, :]), axis=1)
    return bool(np.any(res.mask[hit]))
