"""Ingestion and preprocessing of OCS-style auction tables.

Input CSV header: ``auction_id,bidder_id,bid`` plus optional ``acreage`` and
any numeric covariate columns.  ``bid`` is the total dollar bid.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .inference import BidSample
from .model import SupportGrid

log = logging.getLogger(__name__)

REQUIRED = ("auction_id", "bidder_id", "bid")


class IngestError(ValueError):
    """Schema or row-level problems, each reported with its line number."""


@dataclass
class RawAuctionTable:
    auction_id: list
    bidder_id: list
    bid: np.ndarray
    acreage: Optional[np.ndarray] = None
    covariates: dict = field(default_factory=dict)
    path: Optional[str] = None

    def __len__(self):
        return len(self.auction_id)

    def auctions(self) -> dict:
        """Row indices per auction, in order of first appearance."""
        groups: dict = {}
        for r, a in enumerate(self.auction_id):
            groups.setdefault(a, []).append(r)
        return groups


def ingest(path) -> RawAuctionTable:
    """Parse and validate an auction CSV; all bad rows are reported together."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in REQUIRED if c not in header]
        if missing:
            raise IngestError(f"{path}: missing columns {missing}")
        extra = [c for c in header if c not in REQUIRED and c != "acreage"]
        ids, bidders, bids, acres = [], [], [], []
        cov = {c: [] for c in extra}
        errors = []
        for line, row in enumerate(reader, start=2):
            try:
                b = float(row["bid"])
            except (TypeError, ValueError):
                errors.append(f"line {line}: bid {row['bid']!r} is not numeric")
                continue
            if not math.isfinite(b) or b < 0:
                errors.append(f"line {line}: bid {b} must be finite and nonnegative")
                continue
            if not row["auction_id"]:
                errors.append(f"line {line}: empty auction_id")
                continue
            if "acreage" in header:
                try:
                    a = float(row["acreage"])
                except (TypeError, ValueError):
                    errors.append(f"line {line}: acreage {row['acreage']!r} is not numeric")
                    continue
                if not a > 0:
                    errors.append(f"line {line}: acreage must be positive")
                    continue
                acres.append(a)
            for c in extra:
                try:
                    cov[c].append(float(row[c]))
                except (TypeError, ValueError):
                    cov[c].append(float("nan"))
            ids.append(row["auction_id"])
            bidders.append(row["bidder_id"])
            bids.append(b)
    if errors:
        raise IngestError(f"{path}: " + "; ".join(errors))
    return RawAuctionTable(ids, bidders, np.array(bids, dtype=float),
                           np.array(acres, dtype=float) if "acreage" in header else None,
                           {c: np.array(v) for c, v in cov.items()}, str(path))


@dataclass(frozen=True)
class PreprocessSpec:
    """Filters and scaling; bids are mapped onto ``{0, ..., ceil(H/2)}``."""

    bidders: int = 2
    per_acre: bool = True
    threshold: float = 20000.0
    H: int = 200
    seed: int = 0

    def __post_init__(self):
        if not self.threshold > 0:
            raise ValueError("threshold must be positive")
        if self.bidders < 1 or self.H < 1:
            raise ValueError("need at least one bidder and H >= 1")

    @property
    def cap(self) -> int:
        return int(math.ceil(self.H / 2))


def preprocess(table: RawAuctionTable, spec: PreprocessSpec = PreprocessSpec()):
    """Filter, normalize, rescale and round; returns ``(grid, sample, audit)``.

    Rounding is half-up to the nearest integer.  Bidder identities are
    shuffled independently in each auction with ``spec.seed``.
    """
    groups = table.auctions()
    if spec.per_acre and table.acreage is None:
        raise ValueError("per-acre normalization needs an acreage column")
    per = table.bid / table.acreage if spec.per_acre else table.bid.copy()
    kept, dropped_count, dropped_thr = [], [], []
    for a, rows in groups.items():
        if len(rows) != spec.bidders:
            dropped_count.append(a)
        elif np.any(per[rows] > spec.threshold):
            dropped_thr.append(a)
        else:
            kept.append(a)
    if not kept:
        raise ValueError("no auctions survive preprocessing")
    eligible = [r for a, rows in groups.items() if len(rows) == spec.bidders for r in rows]
    kept_bids = np.array([per[groups[a]] for a in kept])              # auctions x bidders
    top = float(kept_bids.max())
    scale = spec.cap / top if top > 0 else 1.0
    scaled = np.floor(kept_bids * scale + 0.5).astype(np.int64)
    rng = np.random.default_rng(spec.seed)
    profiles = np.array([row[rng.permutation(spec.bidders)] for row in scaled])
    grid = SupportGrid.integer(spec.H, spec.bidders)
    audit = {
        "source": table.path,
        "n_input_auctions": len(groups),
        "n_retained": len(kept),
        "n_dropped_bidder_count": len(dropped_count),
        "n_dropped_threshold": len(dropped_thr),
        "dropped_threshold_ids": dropped_thr,
        "dropped_bidder_count_ids": dropped_count,
        "bidders": spec.bidders,
        "per_acre": spec.per_acre,
        "threshold": spec.threshold,
        "H": spec.H,
        "bid_cap": spec.cap,
        "scale_factor": scale,
        "max_retained_bid": top,
        "eligible_bid_mean": float(np.mean(per[eligible])) if eligible else float("nan"),
        "eligible_bid_sd": float(np.std(per[eligible], ddof=1)) if len(eligible) > 1 else float("nan"),
        "rounding": "half-up to nearest integer",
        "seed": spec.seed,
    }
    log.info("retained %d of %d auctions", len(kept), len(groups))
    return grid, BidSample(profiles, spec.seed), audit


def synthetic_ocs_table(seed: int = 0, n_auctions: int = 3036, n_two: int = 584,
                        mean: float = 991.48, sd: float = 1825.43, n_outliers: int = 3):
    """A table shaped like the OCS data: ``n_two`` two-bidder auctions whose
    per-acre bids have exactly the given mean and sample sd, with many zeros
    and ``n_outliers`` bids above 20000 per acre.  Rows are returned as dicts.
    """
    rng = np.random.default_rng(seed)
    m = 2 * n_two
    zeros = rng.random(m) < 0.35
    out_idx = rng.choice(np.flatnonzero(~zeros), n_outliers, replace=False)
    outliers = 20000 + rng.uniform(1000, 15000, n_outliers)
    free = ~zeros
    free[out_idx] = False
    base = rng.lognormal(0.0, 1.0, free.sum())
    per = np.zeros(m)
    per[out_idx] = outliers

    def fit(p):
        y = base ** p
        rest = m * mean - outliers.sum()
        per[free] = y * rest / y.sum()
        return np.std(per, ddof=1)

    lo, hi = 0.05, 5.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        lo, hi = (mid, hi) if fit(mid) < sd else (lo, mid)
    fit(0.5 * (lo + hi))
    rows = []
    acres = rng.choice([2500.0, 5000.0, 5760.0], n_auctions)
    counts = rng.choice([1, 3, 4, 5, 6], n_auctions)
    two = np.sort(rng.choice(n_auctions, n_two, replace=False))
    counts[two] = 2
    k = 0
    for a in range(n_auctions):
        for j in range(counts[a]):
            if counts[a] == 2:
                b = per[k]
                k += 1
            else:
                b = float(rng.lognormal(6.0, 1.5))
            rows.append({"auction_id": f"A{a:05d}", "bidder_id": f"B{j}",
                         "bid": b * acres[a], "acreage": acres[a]})
    return rows
