import csv
from pathlib import Path

import numpy as np
import pytest

from bceid.io import write_csv
from bceid.ocs import IngestError, PreprocessSpec, ingest, preprocess, synthetic_ocs_table

FIX = Path(__file__).parent / "fixtures"


def test_ingest_small():
    table = ingest(FIX / "auctions_small.csv")
    assert len(table) == 3
    assert table.auctions() == {"A1": [0, 1], "A2": [2]}


def test_ingest_reports_every_bad_line():
    with pytest.raises(IngestError) as err:
        ingest(FIX / "auctions_bad.csv")
    msg = str(err.value)
    assert "line 3" in msg and "line 4" in msg


def test_ingest_missing_column(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("auction_id,bid\nA,1\n")
    with pytest.raises(IngestError, match="bidder_id"):
        ingest(p)


def test_pure_rescale_and_round(tmp_path):
    rows = [{"auction_id": a, "bidder_id": b, "bid": x, "acreage": 1.0}
            for a, b, x in [("A", 1, 10.0), ("A", 2, 4.0), ("B", 1, 7.4), ("B", 2, 2.5)]]
    p = write_csv(tmp_path / "t.csv", rows)
    grid, sample, audit = preprocess(ingest(p), PreprocessSpec(H=20, seed=0))
    # cap = 10, scale = 1: bids 10, 4, 7.4 -> 7, 2.5 -> 3 (half-up)
    got = sorted(tuple(sorted(grid.bids[r])) for r in sample.profiles)
    assert got == [(3.0, 7.0), (4.0, 10.0)]
    assert audit["scale_factor"] == 1.0 and audit["n_dropped_threshold"] == 0


def test_threshold_drop_is_logged(tmp_path):
    rows = [{"auction_id": "A", "bidder_id": 1, "bid": 30000.0, "acreage": 1.0},
            {"auction_id": "A", "bidder_id": 2, "bid": 10.0, "acreage": 1.0},
            {"auction_id": "B", "bidder_id": 1, "bid": 5.0, "acreage": 1.0},
            {"auction_id": "B", "bidder_id": 2, "bid": 8.0, "acreage": 1.0}]
    p = write_csv(tmp_path / "t.csv", rows)
    _, sample, audit = preprocess(ingest(p), PreprocessSpec(H=20))
    assert audit["dropped_threshold_ids"] == ["A"] and sample.N == 1


def test_no_survivors(tmp_path):
    rows = [{"auction_id": "A", "bidder_id": 1, "bid": 1.0, "acreage": 1.0}]
    p = write_csv(tmp_path / "t.csv", rows)
    with pytest.raises(ValueError):
        preprocess(ingest(p), PreprocessSpec())


@pytest.fixture(scope="module")
def ocs_fixture(tmp_path_factory):
    p = tmp_path_factory.mktemp("ocs") / "ocs.csv"
    write_csv(p, synthetic_ocs_table(0))
    return ingest(p)


def test_synthetic_fixture_counts(ocs_fixture):
    groups = ocs_fixture.auctions()
    assert len(groups) == 3036
    assert sum(len(r) == 2 for r in groups.values()) == 584


def test_synthetic_fixture_audit(ocs_fixture):
    grid, sample, audit = preprocess(ocs_fixture, PreprocessSpec(H=200, seed=1))
    assert audit["eligible_bid_mean"] == pytest.approx(991.48, abs=0.01)
    assert audit["eligible_bid_sd"] == pytest.approx(1825.43, abs=0.01)
    assert audit["n_input_auctions"] == (audit["n_retained"] + audit["n_dropped_bidder_count"]
                                         + audit["n_dropped_threshold"])
    assert sample.profiles.max() <= 100 and grid.n == 2
    assert np.max(grid.bids[sample.profiles]) == 100


def test_identity_shuffle_is_seeded(ocs_fixture):
    a = preprocess(ocs_fixture, PreprocessSpec(seed=5))[1].profiles
    b = preprocess(ocs_fixture, PreprocessSpec(seed=5))[1].profiles
    c = preprocess(ocs_fixture, PreprocessSpec(seed=6))[1].profiles
    assert np.array_equal(a, b)
    assert np.array_equal(np.sort(a, axis=1), np.sort(c, axis=1))


def test_written_fixture_has_schema(tmp_path):
    p = write_csv(tmp_path / "f.csv", synthetic_ocs_table(0)[:5])
    with open(p) as fh:
        assert next(csv.reader(fh)) == ["auction_id", "bidder_id", "bid", "acreage"]
