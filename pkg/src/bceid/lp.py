"""Linear programs, constraint families and the minimax epigraph.

Every identification problem in the package reduces to an LP over
conditional kernels living in probability blocks.  :class:`ConstraintSystem`
stores the family ``F_j(x) = sum_k phi_k * a_jk . x_k + c_j`` (satisfied when
``F_j <= 0``) with the per-observation coefficients ``a_jk`` kept separate
from the weights ``phi`` so that empirical, bootstrap and subsample versions
share one structure.
"""
from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.optimize import linprog

from .model import DomainError

log = logging.getLogger(__name__)

FEAS_TOL = 1e-8
_HIGHS_OPTIONS = {
    "primal_feasibility_tolerance": 1e-9,
    "dual_feasibility_tolerance": 1e-9,
    "presolve": True,
}


class SolverError(RuntimeError):
    """The backend could not certify a status (numerical trouble, limits)."""


@dataclass(frozen=True)
class LinearProgram:
    """``opt c.x  s.t.  row_lo <= A x <= row_hi,  var_lo <= x <= var_hi``.

    ``sense`` is ``"minimize"``, ``"maximize"`` or ``"feasibility"``.
    """

    c: np.ndarray
    A: sp.csr_matrix
    row_lo: np.ndarray
    row_hi: np.ndarray
    var_lo: np.ndarray
    var_hi: np.ndarray
    sense: str = "minimize"
    var_names: Optional[Sequence[str]] = field(default=None, repr=False)
    row_names: Optional[Sequence[str]] = field(default=None, repr=False)

    def __post_init__(self):
        if self.sense not in ("minimize", "maximize", "feasibility"):
            raise ValueError(f"unknown sense {self.sense!r}")
        A = sp.csr_matrix(self.A)
        n = A.shape[1]
        for name in ("c", "var_lo", "var_hi"):
            if np.shape(getattr(self, name)) != (n,):
                raise ValueError(f"{name} must have one entry per variable")
        for name in ("row_lo", "row_hi"):
            if np.shape(getattr(self, name)) != (A.shape[0],):
                raise ValueError(f"{name} must have one entry per row")
        object.__setattr__(self, "A", A)

    @property
    def n_vars(self) -> int:
        return self.A.shape[1]

    @property
    def n_rows(self) -> int:
        return self.A.shape[0]


def make_lp(c, sense="minimize", ub=None, eq=None, lb=None, bounds=(0.0, np.inf),
            var_names=None) -> LinearProgram:
    """Assemble an LP from ``(A, rhs)`` blocks for ``<=``, ``=`` and ``>=`` rows."""
    c = np.asarray(c, dtype=float)
    n = c.size
    mats, lo, hi = [], [], []
    for pair, kind in ((ub, "ub"), (eq, "eq"), (lb, "lb")):
        if pair is None:
            continue
        A, rhs = sp.csr_matrix(pair[0]), np.asarray(pair[1], dtype=float).ravel()
        if A.shape != (rhs.size, n):
            raise ValueError(f"{kind} block has shape {A.shape}, expected ({rhs.size}, {n})")
        mats.append(A)
        lo.append(rhs if kind != "ub" else np.full(rhs.size, -np.inf))
        hi.append(rhs if kind != "lb" else np.full(rhs.size, np.inf))
    A = sp.vstack(mats, format="csr") if mats else sp.csr_matrix((0, n))
    vlo = np.broadcast_to(np.asarray(bounds[0], dtype=float), (n,)).copy()
    vhi = np.broadcast_to(np.asarray(bounds[1], dtype=float), (n,)).copy()
    return LinearProgram(
        c, A,
        np.concatenate(lo) if lo else np.zeros(0),
        np.concatenate(hi) if hi else np.zeros(0),
        vlo, vhi, sense, var_names,
    )


@dataclass(frozen=True)
class LpSolution:
    status: str
    x: Optional[np.ndarray]
    objective: float
    max_violation: float
    dual_objective: float = float("nan")
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    @property
    def duality_gap(self) -> float:
        return abs(self.objective - self.dual_objective)


def solve(lp: LinearProgram, tol: float = FEAS_TOL) -> LpSolution:
    """Solve ``lp`` with HiGHS; deterministic for identical input.

    Returns status ``optimal``, ``infeasible`` or ``unbounded``.  Any other
    backend outcome raises :class:`SolverError`.
    """
    A = lp.A
    eq = np.isfinite(lp.row_lo) & np.isfinite(lp.row_hi) & (lp.row_lo == lp.row_hi)
    up = np.isfinite(lp.row_hi) & ~eq
    dn = np.isfinite(lp.row_lo) & ~eq
    A_ub = sp.vstack([A[up], -A[dn]], format="csr") if (up.any() or dn.any()) else None
    b_ub = np.concatenate([lp.row_hi[up], -lp.row_lo[dn]]) if A_ub is not None else None
    A_eq = A[eq] if eq.any() else None
    b_eq = lp.row_lo[eq] if eq.any() else None

    sign = -1.0 if lp.sense == "maximize" else 1.0
    c = np.zeros(lp.n_vars) if lp.sense == "feasibility" else sign * lp.c
    bounds = np.column_stack([lp.var_lo, lp.var_hi])
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds,
                  method="highs", options=_HIGHS_OPTIONS)
    if res.status == 2:
        return LpSolution("infeasible", None, float("nan"), float("inf"), message=res.message)
    if res.status == 3:
        inf = -np.inf if lp.sense == "minimize" else np.inf
        return LpSolution("unbounded", None, sign * inf, float("nan"), message=res.message)
    if res.status != 0:
        raise SolverError(f"LP solver failed (status {res.status}): {res.message}")

    x = res.x
    viol = _max_violation(lp, x)
    if viol > 100 * tol:
        raise SolverError(f"optimal point violates constraints by {viol:.3g}")
    objective = float(lp.c @ x) if lp.sense != "feasibility" else 0.0
    dual = _dual_objective(res, b_ub, b_eq, bounds)
    if lp.sense == "maximize":
        dual = -dual
    elif lp.sense == "feasibility":
        dual = 0.0
    return LpSolution("optimal", x, objective, viol, dual, res.message)


def _max_violation(lp: LinearProgram, x: np.ndarray) -> float:
    ax = lp.A @ x
    parts = [0.0]
    if ax.size:
        parts.append(np.max(np.maximum(lp.row_lo - ax, 0.0), initial=0.0))
        parts.append(np.max(np.maximum(ax - lp.row_hi, 0.0), initial=0.0))
    parts.append(np.max(np.maximum(lp.var_lo - x, 0.0), initial=0.0))
    parts.append(np.max(np.maximum(x - lp.var_hi, 0.0), initial=0.0))
    return float(max(parts))


def _dual_objective(res, b_ub, b_eq, bounds) -> float:
    # scipy marginals are d(objective)/d(rhs); the dual value is rhs . marginals
    total = 0.0
    if b_ub is not None:
        total += float(b_ub @ res.ineqlin.marginals)
    if b_eq is not None:
        total += float(b_eq @ res.eqlin.marginals)
    lo = np.where(np.isfinite(bounds[:, 0]), bounds[:, 0], 0.0)
    hi = np.where(np.isfinite(bounds[:, 1]), bounds[:, 1], 0.0)
    total += float(lo @ res.lower.marginals) + float(hi @ res.upper.marginals)
    return total


@dataclass(frozen=True)
class ConstraintSystem:
    """Family of linear forms ``F_j`` over kernel variables in simplex blocks.

    ``coef`` holds the per-observation coefficients: the contribution of an
    observation equal to support profile ``k`` is ``coef[j, vars of k] . x``.
    ``F_j(x) = (coef * weights[var_profile]) x + offset_j`` and the system is
    satisfied when every ``F_j <= 0``.  Each block of variables
    (``var_block``) is a probability vector.  ``recovery`` (unweighted) maps
    kernel variables to the states they put mass on, so that the weighted
    product recovers the state distribution ``pi = sum_k phi_k x(.|k)``.
    """

    coef: sp.csr_matrix
    offset: np.ndarray
    var_block: np.ndarray
    var_profile: np.ndarray
    weights: np.ndarray
    labels: tuple = ()
    profiles: Optional[np.ndarray] = None
    layout: str = "cv"
    recovery: Optional[sp.csr_matrix] = field(default=None, repr=False)

    def __post_init__(self):
        coef = sp.csr_matrix(self.coef)
        object.__setattr__(self, "coef", coef)
        object.__setattr__(self, "offset", np.asarray(self.offset, dtype=float))
        object.__setattr__(self, "var_block", np.asarray(self.var_block, dtype=np.int64))
        object.__setattr__(self, "var_profile", np.asarray(self.var_profile, dtype=np.int64))
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        if self.offset.shape != (coef.shape[0],):
            raise ValueError("offset needs one entry per row")
        if self.var_block.shape != (coef.shape[1],) or self.var_profile.shape != (coef.shape[1],):
            raise ValueError("block and profile maps need one entry per variable")
        if self.labels and len(self.labels) != coef.shape[0]:
            raise ValueError("labels need one entry per row")

    @property
    def n_rows(self) -> int:
        return self.coef.shape[0]

    @property
    def n_vars(self) -> int:
        return self.coef.shape[1]

    @property
    def n_blocks(self) -> int:
        return int(self.var_block.max()) + 1 if self.n_vars else 0

    def var_weights(self, weights=None) -> np.ndarray:
        w = self.weights if weights is None else np.asarray(weights, dtype=float)
        return w[self.var_profile]

    def matrix(self, weights=None) -> sp.csr_matrix:
        """Weighted constraint matrix ``G`` with ``F(x) = G x + offset``."""
        return sp.csr_matrix(self.coef @ sp.diags(self.var_weights(weights)))

    def evaluate(self, x, weights=None) -> np.ndarray:
        return self.matrix(weights) @ np.asarray(x, dtype=float) + self.offset

    def recovery_matrix(self, weights=None) -> sp.csr_matrix:
        if self.recovery is None:
            raise ValueError(f"{self.layout} system has no state-recovery map")
        return sp.csr_matrix(self.recovery @ sp.diags(self.var_weights(weights)))

    def reweighted(self, weights) -> "ConstraintSystem":
        w = np.asarray(weights, dtype=float)
        if w.shape != self.weights.shape:
            raise ValueError("weights must cover the same support")
        return replace(self, weights=w)

    def per_profile(self, x) -> np.ndarray:
        """``P[j, k] = coef[j, vars of k] . x``: one observation's contribution."""
        n_prof = self.weights.size
        assign = sp.csr_matrix(
            (np.ones(self.n_vars), (np.arange(self.n_vars), self.var_profile)),
            shape=(self.n_vars, n_prof),
        )
        scaled = self.coef @ sp.diags(np.asarray(x, dtype=float))
        return np.asarray((scaled @ assign).todense())

    def block_matrix(self) -> sp.csr_matrix:
        """Rows summing each simplex block (``= 1``)."""
        return sp.csr_matrix(
            (np.ones(self.n_vars), (self.var_block, np.arange(self.n_vars))),
            shape=(self.n_blocks, self.n_vars),
        )

    def stack(self, other: "ConstraintSystem") -> "ConstraintSystem":
        """Append ``other``'s rows; both must share the variable layout."""
        if not (np.array_equal(self.var_block, other.var_block)
                and np.array_equal(self.var_profile, other.var_profile)):
            raise ValueError("systems use different variable layouts")
        return replace(
            self,
            coef=sp.vstack([self.coef, other.coef], format="csr"),
            offset=np.concatenate([self.offset, other.offset]),
            labels=tuple(self.labels) + tuple(other.labels),
        )

    def subset(self, rows) -> "ConstraintSystem":
        rows = np.asarray(rows)
        labels = tuple(self.labels[r] for r in np.arange(self.n_rows)[rows]) if self.labels else ()
        return replace(self, coef=self.coef[rows], offset=self.offset[rows], labels=labels)

    def uniform_point(self) -> np.ndarray:
        """The kernel that is uniform within every block (always admissible)."""
        sizes = np.bincount(self.var_block, minlength=self.n_blocks)
        return 1.0 / sizes[self.var_block]

    def feasibility_lp(self, tol: float = 0.0, objective=None, sense="feasibility",
                       extra_eq=None) -> LinearProgram:
        """LP over the kernel with every row relaxed to ``F_j <= tol``."""
        G = self.matrix()
        c = np.zeros(self.n_vars) if objective is None else np.asarray(objective, dtype=float)
        eq_A, eq_b = self.block_matrix(), np.ones(self.n_blocks)
        if extra_eq is not None:
            eq_A = sp.vstack([eq_A, sp.csr_matrix(extra_eq[0])], format="csr")
            eq_b = np.concatenate([eq_b, np.asarray(extra_eq[1], dtype=float)])
        tol_vec = np.broadcast_to(np.asarray(tol, dtype=float), (self.n_rows,))
        return make_lp(c, sense, ub=(G, tol_vec - self.offset), eq=(eq_A, eq_b))


@dataclass(frozen=True)
class MinimaxResult:
    value: float
    x: np.ndarray
    solution: LpSolution


def minimax(system: ConstraintSystem, weights=None) -> MinimaxResult:
    """``min_x max_j F_j(x)`` over the block simplices, via the epigraph LP.

    The optimum is also the smallest uniform tolerance at which the system
    becomes feasible.
    """
    if system.n_rows == 0:
        raise DomainError("minimax of an empty constraint family is undefined")
    return epigraph_minimax(system.matrix(weights), system.offset, system.block_matrix())


def epigraph_minimax(G, offset, blocks) -> MinimaxResult:
    """``min t  s.t.  G x + offset <= t``, each row of ``blocks`` summing x to one."""
    G = sp.csr_matrix(G)
    m, nv = G.shape
    nb = blocks.shape[0]
    A_ub = sp.hstack([G, -sp.csr_matrix(np.ones((m, 1)))], format="csr")
    B = sp.hstack([blocks, sp.csr_matrix((nb, 1))], format="csr")
    c = np.zeros(nv + 1)
    c[-1] = 1.0
    lo = np.zeros(nv + 1)
    lo[-1] = -np.inf
    lp = make_lp(c, "minimize", ub=(A_ub, -np.asarray(offset, dtype=float)),
                 eq=(B, np.ones(nb)), bounds=(lo, np.inf))
    sol = solve(lp)
    if not sol.optimal:
        raise SolverError(f"epigraph LP returned {sol.status}")
    return MinimaxResult(float(sol.x[-1]), sol.x[:-1], sol)


def minimax_value(system: ConstraintSystem, weights=None) -> float:
    return minimax(system, weights).value


def parallel_map(fn, items) -> list:
    """Ordered ``map`` over independent solves.

    Uses a thread pool when the ``BCEID_THREADS`` environment variable asks
    for more than one worker; results never depend on scheduling.
    """
    items = list(items)
    workers = int(os.environ.get("BCEID_THREADS", "1") or 1)
    if workers <= 1 or len(items) < 2:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def write_lp_file(lp: LinearProgram, path, comment: str = "") -> None:
    """Dump ``lp`` in the CPLEX LP text format (debugging aid)."""
    names = list(lp.var_names) if lp.var_names else [f"x{j}" for j in range(lp.n_vars)]
    rnames = list(lp.row_names) if lp.row_names else [f"c{r}" for r in range(lp.n_rows)]

    def expr(idx, vals):
        if len(idx) == 0:
            return f"0 {names[0]}" if names else "0"
        return " ".join(f"{'+' if v >= 0 else '-'} {abs(v):.17g} {names[j]}"
                        for j, v in zip(idx, vals))

    lines = []
    for ln in comment.splitlines():
        lines.append(f"\\ {ln}")
    head = "Maximize" if lp.sense == "maximize" else "Minimize"
    nz = np.flatnonzero(lp.c) if lp.sense != "feasibility" else np.array([], dtype=int)
    lines += [head, f" obj: {expr(nz, lp.c[nz])}", "Subject To"]
    A = lp.A.tocsr()
    for r in range(lp.n_rows):
        sl = slice(A.indptr[r], A.indptr[r + 1])
        e = expr(A.indices[sl], A.data[sl])
        lo, hi = lp.row_lo[r], lp.row_hi[r]
        if np.isfinite(lo) and lo == hi:
            lines.append(f" {rnames[r]}: {e} = {lo:.17g}")
            continue
        if np.isfinite(hi):
            lines.append(f" {rnames[r]}_u: {e} <= {hi:.17g}")
        if np.isfinite(lo):
            lines.append(f" {rnames[r]}_l: {e} >= {lo:.17g}")
    lines.append("Bounds")
    for j in range(lp.n_vars):
        lo, hi = lp.var_lo[j], lp.var_hi[j]
        if not np.isfinite(lo) and not np.isfinite(hi):
            lines.append(f" {names[j]} free")
        elif lo == 0 and not np.isfinite(hi):
            continue
        else:
            lo_s = f"{lo:.17g}" if np.isfinite(lo) else "-inf"
            hi_s = f"{hi:.17g}" if np.isfinite(hi) else "+inf"
            lines.append(f" {lo_s} <= {names[j]} <= {hi_s}")
    lines.append("End")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
