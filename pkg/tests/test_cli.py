import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from bceid.cli import main
from bceid.model import SupportGrid
from bceid.montecarlo import generate_bce, sample_bids
from bceid.parametric import Family, density

FIX = Path(__file__).parent / "fixtures"
COMMANDS = ["identify", "parametric-set", "counterfactual", "mc-run", "heatmap", "ocs-prep",
            "bbm-compare", "bootstrap", "subsample", "symmetry-test"]
TINY = ["--values", "0,1,2", "--bids", "0,1"]
AXES = ["--axis", "3:5:1", "--axis", "0.5:1.5:0.5"]


@pytest.fixture(scope="module")
def sample_csv(tmp_path_factory):
    grid = SupportGrid.integer(8, 2)
    pi = density(Family("normal", 8), [4.0, 1.0], grid.values)
    phi = generate_bce(pi, grid, selector="max_entropy_surrogate", seed=3).phi
    s = sample_bids(phi, 400, 9)
    path = tmp_path_factory.mktemp("data") / "sample.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["bid_1", "bid_2"])
        w.writerows(grid.bids[s.profiles].astype(int).tolist())
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    return code, capsys.readouterr()


def test_help_lists_commands():
    out = subprocess.run([sys.executable, "-m", "bceid.cli", "--help"], capture_output=True,
                         text=True, check=True).stdout
    for c in COMMANDS:
        assert c in out


def test_identify_tiny(capsys, tmp_path):
    code, io = run(capsys, "identify", *TINY, "--data", FIX / "tiny_phi.csv", "--out", tmp_path)
    assert code == 0 and io.out.strip() == "[1, 2]"
    row = next(csv.DictReader(open(tmp_path / "interval.csv")))
    assert float(row["lower"]) == pytest.approx(1) and float(row["feas_tol"]) == 1e-8
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["feas_tol"] == 1e-8 and manifest["arguments"]["tol"] == 0.0


def test_identify_membership_exit_codes(capsys, tmp_path):
    args = ["identify", *TINY, "--data", FIX / "tiny_phi.csv", "--out", tmp_path]
    assert run(capsys, *args, "--pi", "0,0,1")[0] == 0
    assert run(capsys, *args, "--pi", "1,0,0")[0] == 2


def test_symmetry_test_refutes(capsys, tmp_path):
    code, io = run(capsys, "symmetry-test", *TINY, "--data", FIX / "asymmetric_phi.csv",
                   "--out", tmp_path)
    assert code == 2 and "refuted" in io.out
    code, _ = run(capsys, "symmetry-test", *TINY, "--data", FIX / "tiny_phi.csv", "--out", tmp_path)
    assert code == 0


def test_counterfactual(capsys, tmp_path):
    code, io = run(capsys, "counterfactual", *TINY, "--data", FIX / "tiny_phi.csv",
                   "--alt", "second_price", "--out", tmp_path)
    assert code == 0 and io.out.strip() == "[0, 1]"
    code, io = run(capsys, "counterfactual", *TINY, "--data", FIX / "tiny_phi.csv",
                   "--metric", "const:3.3", "--out", tmp_path)
    assert io.out.strip() == "[3.3, 3.3]"


def test_errors_exit_one(capsys, tmp_path):
    code, io = run(capsys, "identify", *TINY, "--data", tmp_path / "missing.csv", "--out", tmp_path)
    assert code == 1 and "error" in io.err
    code, io = run(capsys, "identify", "--data", FIX / "tiny_phi.csv", "--out", tmp_path)
    assert code == 1
    code, _ = run(capsys, "ocs-prep", "--input", FIX / "auctions_bad.csv", "--out", tmp_path)
    assert code == 1


def test_lp_dump(capsys, tmp_path):
    dump = tmp_path / "lp" / "tiny.lp"
    run(capsys, "identify", *TINY, "--data", FIX / "tiny_phi.csv", "--out", tmp_path,
        "--lp-dump", dump)
    assert "Subject To" in dump.read_text()


def _snapshot(d: Path) -> dict:
    return {p.name: p.read_bytes() for p in sorted(d.iterdir())}


@pytest.mark.parametrize("cmd,extra", [
    ("heatmap", AXES),
    ("parametric-set", [*AXES, "--method", "hoeffding"]),
    ("subsample", [*AXES, "--n-sub", "12", "--seed", "4"]),
    ("bootstrap", ["--draws", "5", "--seed", "2"]),
    ("identify", ["--finite-sample"]),
])
def test_deterministic_outputs(capsys, tmp_path, sample_csv, cmd, extra):
    args = [cmd, "--grid-h", 8, "--data", sample_csv, "--out", tmp_path, *extra]
    assert run(capsys, *args)[0] == 0
    first = _snapshot(tmp_path)
    assert run(capsys, *args)[0] == 0
    assert _snapshot(tmp_path) == first
    assert "manifest.json" in first


def test_figures_flag(capsys, tmp_path, sample_csv):
    code, _ = run(capsys, "heatmap", "--grid-h", 8, "--data", sample_csv, *AXES, "--out",
                  tmp_path, "--figures")
    assert code == 0
    assert (tmp_path / "heatmap.png").read_bytes()[:4] == b"\x89PNG"


def test_heatmap_rejects_exact_distribution(capsys, tmp_path):
    code, _ = run(capsys, "heatmap", "--grid-h", 8, "--data", FIX / "tiny_phi.csv", *AXES,
                  "--out", tmp_path)
    # an exact distribution is not a sample
    assert code == 1


def test_bbm_compare(capsys, tmp_path):
    data = tmp_path / "single.csv"
    data.write_text("bid_1,bid_2,prob\n5,5,1\n")
    code, io = run(capsys, "bbm-compare", "--grid-h", 20, "--data", data, "--out", tmp_path)
    assert code == 0 and "[5, 7]" in io.out and "8.75" in io.out


def test_mc_run(capsys, tmp_path):
    code, io = run(capsys, "mc-run", "--config", FIX / "experiment_small.json", "--out", tmp_path)
    assert code == 0
    rows = list(csv.DictReader(open(tmp_path / "summary.csv")))
    assert len(rows) == 6
    assert {r["method"] for r in rows} == {"hoeffding", "bernstein", "subsampling"}


def test_ocs_prep_roundtrip(capsys, tmp_path):
    fixture = tmp_path / "ocs.csv"
    assert run(capsys, "ocs-prep", "--write-fixture", fixture, "--out", tmp_path)[0] == 0
    code, io = run(capsys, "ocs-prep", "--input", fixture, "--H", 200, "--out", tmp_path / "o")
    assert code == 0 and "991.48" in io.out and "1825.43" in io.out
    audit = json.loads((tmp_path / "o" / "audit.json").read_text())
    assert audit["n_input_auctions"] == 3036
    bids = np.loadtxt(tmp_path / "o" / "bids.csv", delimiter=",", skiprows=1)
    assert bids.shape == (audit["n_retained"], 2) and bids.max() == 100
