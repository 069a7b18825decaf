"""Discrete auction games: supports, payoff rules and outcome metrics.

Bids and values live on finite grids.  Players are indexed from 0.  A bid
profile is stored as a tuple of bid *indices* into ``SupportGrid.bids``;
profiles over the full product ``B^n`` are enumerated in mixed-radix order
with player 0 as the most significant digit.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

GRID_ATOL = 1e-9


class DomainError(ValueError):
    """Raised when an argument lies outside the declared game grid."""


@dataclass(frozen=True)
class SupportGrid:
    """Value support ``V``, bid support ``B`` and the number of bidders.

    ``signals`` gives the size of each player's minimal-signal space and
    defaults to singletons (no minimal information).
    """

    n: int
    values: np.ndarray
    bids: np.ndarray
    signals: tuple = ()

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float).ravel()
        bids = np.asarray(self.bids, dtype=float).ravel()
        if int(self.n) < 1:
            raise DomainError("need at least one player")
        for name, arr in (("values", values), ("bids", bids)):
            if arr.size == 0 or not np.all(np.isfinite(arr)):
                raise DomainError(f"{name} must be finite and nonempty")
            if np.any(np.diff(arr) <= 0):
                raise DomainError(f"{name} must be strictly increasing")
        H = values.max()
        if H <= 0:
            raise DomainError("max value H must be positive")
        if bids.min() < -GRID_ATOL or bids.max() > H + GRID_ATOL:
            raise DomainError("bids must lie in [0, H]")
        signals = tuple(int(s) for s in self.signals) or (1,) * int(self.n)
        if len(signals) != int(self.n) or min(signals) < 1:
            raise DomainError("one positive signal-space size per player")
        values.setflags(write=False)
        bids.setflags(write=False)
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "bids", bids)
        object.__setattr__(self, "signals", signals)

    @classmethod
    def integer(cls, H: int, n: int = 2, bid_max: Optional[int] = None) -> "SupportGrid":
        """``V = {0..H}`` and ``B = {0..bid_max}`` (``bid_max`` defaults to H)."""
        bid_max = H if bid_max is None else bid_max
        return cls(n, np.arange(H + 1, dtype=float), np.arange(bid_max + 1, dtype=float))

    @classmethod
    def uniform(cls, H: float, step: float, n: int = 2) -> "SupportGrid":
        """``V = B = {0, step, ..., H}``."""
        k = int(round(H / step))
        if not np.isclose(k * step, H):
            raise DomainError("H must be a multiple of step")
        pts = np.arange(k + 1) * float(step)
        return cls(n, pts, pts.copy())

    @property
    def H(self) -> float:
        return float(self.values[-1])

    @property
    def n_values(self) -> int:
        return self.values.size

    @property
    def n_bids(self) -> int:
        return self.bids.size

    @property
    def n_profiles(self) -> int:
        return self.n_bids ** self.n

    def bid_index(self, bid: float) -> int:
        return _grid_index(self.bids, bid, "bid")

    def value_index(self, value: float) -> int:
        return _grid_index(self.values, value, "value")

    def profile_indices(self, bid_values: Sequence[float]) -> tuple:
        if len(bid_values) != self.n:
            raise DomainError(f"profile must have {self.n} bids")
        return tuple(self.bid_index(b) for b in bid_values)

    def encode(self, profiles) -> np.ndarray:
        """Flat index into ``B^n`` for one or many bid-index profiles."""
        p = np.asarray(profiles, dtype=np.int64)
        flat = np.zeros(p.shape[:-1], dtype=np.int64)
        for i in range(self.n):
            flat = flat * self.n_bids + p[..., i]
        return flat

    def all_profiles(self) -> np.ndarray:
        """Every bid-index profile, shape ``(|B|^n, n)``, in flat-index order."""
        grids = np.indices((self.n_bids,) * self.n).reshape(self.n, -1)
        return grids.T.copy()


def _grid_index(points: np.ndarray, x: float, what: str) -> int:
    j = int(np.argmin(np.abs(points - float(x))))
    if abs(points[j] - float(x)) > GRID_ATOL:
        raise DomainError(f"{what} {x!r} is not on the grid")
    return j


def win_probabilities(bid_values: np.ndarray) -> np.ndarray:
    """Uniform tie-breaking allocation; last axis indexes players."""
    b = np.asarray(bid_values, dtype=float)
    top = b.max(axis=-1, keepdims=True)
    is_top = b == top
    k = is_top.sum(axis=-1, keepdims=True)
    return np.where(is_top, 1.0 / k, 0.0)


def _prices(kind: str, b: np.ndarray) -> np.ndarray:
    if kind == "first_price":
        return b.copy()
    n = b.shape[-1]
    if n == 1:
        return np.zeros_like(b)
    others = np.empty_like(b)
    for i in range(n):
        others[..., i] = np.delete(b, i, axis=-1).max(axis=-1)
    return others


@dataclass(frozen=True)
class UtilityKernel:
    """Payoff rule ``u_i(b; v)`` of a single-item auction.

    ``kind`` is ``"first_price"``, ``"second_price"`` or ``"custom_table"``.
    A custom kernel carries ``utility_table`` of shape ``(n, |B|^n, |V|)``
    and optionally ``payment_table`` of shape ``(n, |B|^n)``.  The same
    kernel serves common values (``v`` is the common value) and private
    values (``v`` is the bidder's own value).
    """

    kind: str = "first_price"
    utility_table: Optional[np.ndarray] = field(default=None, repr=False)
    payment_table: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.kind not in ("first_price", "second_price", "custom_table"):
            raise ValueError(f"unknown utility kind {self.kind!r}")
        if self.kind == "custom_table" and self.utility_table is None:
            raise ValueError("custom_table kernels need utility_table")

    def table(self, grid: SupportGrid) -> np.ndarray:
        """``u[i, flat_profile, value_index]`` over all of ``B^n x V``."""
        if self.kind == "custom_table":
            t = np.asarray(self.utility_table, dtype=float)
            if t.shape != (grid.n, grid.n_profiles, grid.n_values):
                raise DomainError(f"utility table shape {t.shape} does not match grid")
            return t
        b = grid.bids[grid.all_profiles()]
        p = win_probabilities(b)
        price = _prices(self.kind, b)
        u = p[:, :, None] * (grid.values[None, None, :] - price[:, :, None])
        return np.ascontiguousarray(u.transpose(1, 0, 2))

    def payments(self, grid: SupportGrid) -> np.ndarray:
        """Expected payment of each player, shape ``(n, |B|^n)``."""
        if self.kind == "custom_table":
            if self.payment_table is None:
                raise ValueError("custom kernel has no payment table")
            return np.asarray(self.payment_table, dtype=float)
        b = grid.bids[grid.all_profiles()]
        return (win_probabilities(b) * _prices(self.kind, b)).T.copy()

    def allocation(self, grid: SupportGrid) -> np.ndarray:
        """Win probability of each player, shape ``(n, |B|^n)``."""
        return win_probabilities(grid.bids[grid.all_profiles()]).T.copy()

    def __call__(self, grid: SupportGrid, i: int, b: Sequence[float], v: float) -> float:
        idx = grid.profile_indices(b)
        j = grid.value_index(v)
        if not 0 <= i < grid.n:
            raise DomainError(f"player {i} out of range")
        if self.kind == "custom_table":
            return float(self.utility_table[i, int(grid.encode(idx)), j])
        bv = np.array([grid.bids[k] for k in idx])
        p = win_probabilities(bv)[i]
        price = _prices(self.kind, bv[None, :])[0, i]
        return float(p * (grid.values[j] - price))


FIRST_PRICE = UtilityKernel("first_price")
SECOND_PRICE = UtilityKernel("second_price")


def first_price_utility(grid: SupportGrid, i: int, b: Sequence[float], v: float) -> float:
    """Bidder ``i``'s payoff ``(v - b_i) * P(win)`` in a first-price auction."""
    return FIRST_PRICE(grid, i, b, v)


def second_price_utility(grid: SupportGrid, i: int, b: Sequence[float], v: float) -> float:
    """Bidder ``i``'s payoff when the winner pays the highest opposing bid."""
    return SECOND_PRICE(grid, i, b, v)


@dataclass(frozen=True)
class MetricFn:
    """Outcome metric ``W(v, b)`` evaluated as a table over ``V x B^n``.

    Either ``fn(value, bid_values)`` is given and tabulated point by point, or
    ``table_fn(grid)`` builds the whole table at once.
    """

    fn: Optional[Callable[[float, tuple], float]] = None
    name: str = "metric"
    table_fn: Optional[Callable[[SupportGrid], np.ndarray]] = field(default=None, repr=False)

    def table(self, grid: SupportGrid) -> np.ndarray:
        if self.table_fn is not None:
            out = np.asarray(self.table_fn(grid), dtype=float)
        else:
            prof = grid.bids[grid.all_profiles()]
            out = np.empty((grid.n_values, grid.n_profiles))
            for a, v in enumerate(grid.values):
                for k, b in enumerate(prof):
                    out[a, k] = self.fn(float(v), tuple(b))
        if out.shape != (grid.n_values, grid.n_profiles) or not np.all(np.isfinite(out)):
            raise DomainError(f"metric {self.name} is not a finite table on the grid")
        return out

    def bound(self, grid: SupportGrid) -> float:
        return float(np.abs(self.table(grid)).max())


def revenue_metric(kernel: UtilityKernel) -> MetricFn:
    """Seller revenue ``sum_i payment_i(b)`` under ``kernel``'s rules."""
    def build(grid):
        pay = kernel.payments(grid).sum(axis=0)
        return np.broadcast_to(pay, (grid.n_values, grid.n_profiles)).copy()
    return MetricFn(name=f"revenue[{kernel.kind}]", table_fn=build)


def welfare_metric(kernel: UtilityKernel) -> MetricFn:
    """Common-value welfare ``v * sum_i x_i(b)``; equals ``v`` for standard auctions."""
    def build(grid):
        alloc = kernel.allocation(grid).sum(axis=0)
        return grid.values[:, None] * alloc[None, :]
    return MetricFn(name=f"welfare[{kernel.kind}]", table_fn=build)


def constant_metric(c: float) -> MetricFn:
    return MetricFn(
        name=f"constant[{c}]",
        table_fn=lambda grid: np.full((grid.n_values, grid.n_profiles), float(c)),
    )
