"""Command-line interface.

Bid data files are CSV with columns ``bid_1, ..., bid_n`` (bid values on the
grid).  An optional ``prob`` column makes the file an exact distribution;
otherwise every row is one observed auction.  Every command writes its CSV
results and a ``manifest.json`` into ``--out``.

Exit codes: 0 success, 2 empty identified set or refuted restriction,
1 error.
"""
from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .bounds import bbm_vs_sharp_report
from .inference import (BidSample, bayesian_bootstrap_sets, bernstein_set,
                        empirical_distribution, nonparam_moment_interval,
                        parametric_hoeffding_set, subsampling_confidence_set)
from .io import versions, write_csv, write_json
from .lp import FEAS_TOL, SolverError, write_lp_file
from .model import (FIRST_PRICE, SECOND_PRICE, DomainError, SupportGrid, UtilityKernel,
                    constant_metric, revenue_metric, welfare_metric)
from .montecarlo import ExperimentConfig, run_experiment
from .ocs import IngestError, PreprocessSpec, ingest, preprocess, synthetic_ocs_table
from .parametric import Family, ThetaGrid, mask_rows, minimax_over_grid, parametric_identified_set
from .sharp import (BidDistribution, IdentifiedSet, build_bce_cv, counterfactual_bounds,
                    ipv_symmetric_moment_bounds, ipv_symmetry_test, membership_cv,
                    moment_bounds_cv, moment_bounds_pv)

log = logging.getLogger("bceid")

EXIT_OK, EXIT_ERROR, EXIT_EMPTY = 0, 1, 2
KERNELS = {"first_price": FIRST_PRICE, "second_price": SECOND_PRICE}


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# input helpers


def _floats(text: str) -> list:
    return [float(x) for x in text.replace(";", ",").split(",") if x.strip()]


def make_grid(args) -> SupportGrid:
    if args.values or args.bids:
        if not (args.values and args.bids):
            raise CliError("--values and --bids must be given together")
        return SupportGrid(args.n, _floats(args.values), _floats(args.bids))
    if args.grid_h is None:
        raise CliError("give --grid-h or both --values and --bids")
    return SupportGrid.integer(args.grid_h, args.n)


def read_bids(path, grid: SupportGrid):
    """A :class:`BidDistribution` if the file has ``prob``, else a :class:`BidSample`."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = [f"bid_{i + 1}" for i in range(grid.n)]
        header = reader.fieldnames or []
        missing = [c for c in cols if c not in header]
        if missing:
            raise CliError(f"{path}: missing columns {missing}")
        bids, probs = [], []
        for line, row in enumerate(reader, start=2):
            try:
                bids.append([float(row[c]) for c in cols])
                if "prob" in header:
                    probs.append(float(row["prob"]))
            except ValueError as exc:
                raise CliError(f"{path} line {line}: {exc}") from None
    if not bids:
        raise CliError(f"{path}: no rows")
    if "prob" in header:
        masses: dict = {}
        for b, p in zip(bids, probs):
            key = tuple(b)
            masses[key] = masses.get(key, 0.0) + p
        total = sum(masses.values())
        return BidDistribution.from_bids(grid, {k: v / total for k, v in masses.items()})
    return BidSample.from_bid_values(grid, bids)


def as_distribution(data) -> BidDistribution:
    return empirical_distribution(data) if isinstance(data, BidSample) else data


def as_sample(data) -> BidSample:
    if not isinstance(data, BidSample):
        raise CliError("this command needs observed auctions (a file without a prob column)")
    return data


def parse_moment(text: str, grid: SupportGrid):
    """``mean``, ``second``, ``const:c`` or a comma list tabulated over the values."""
    if text in ("mean", "v"):
        return grid.values.copy()
    if text in ("second", "v2", "v^2"):
        return grid.values ** 2
    if text.startswith("const:"):
        return np.full(grid.n_values, float(text.split(":", 1)[1]))
    table = np.array(_floats(text))
    if table.size != grid.n_values:
        raise CliError(f"moment table needs {grid.n_values} entries")
    return table


def parse_metric(text: str, kernel: UtilityKernel):
    if text == "revenue":
        return revenue_metric(kernel)
    if text == "welfare":
        return welfare_metric(kernel)
    if text.startswith("const:"):
        return constant_metric(float(text.split(":", 1)[1]))
    raise CliError(f"unknown metric {text!r}")


def make_thetas(args, family: Family) -> ThetaGrid:
    if not args.axis:
        return family.default_grid()
    if len(args.axis) != family.dim:
        raise CliError(f"{family.kind} needs {family.dim} --axis options")
    axes = []
    for spec in args.axis:
        try:
            start, stop, step = (float(x) for x in spec.split(":"))
        except ValueError:
            raise CliError(f"--axis expects start:stop:step, got {spec!r}") from None
        axes.append(np.round(np.arange(start, stop + step / 2, step), 10))
    return ThetaGrid.product(family, *axes)


def heatmap_grid(sample: BidSample, grid: SupportGrid, family: Family, thetas: ThetaGrid,
                 u: UtilityKernel = FIRST_PRICE) -> np.ndarray:
    """Smallest tolerance admitting each grid point: ``max(Q_N(theta), 0)``."""
    phi = empirical_distribution(sample)
    q = minimax_over_grid(build_bce_cv(phi, grid, u), family, thetas, grid.values)
    return np.maximum(q, 0.0)


# ---------------------------------------------------------------------------
# output helpers


def _manifest(args, out: Path, extra: dict) -> None:
    params = {k: v for k, v in vars(args).items() if k != "func"}
    write_json(out / "manifest.json", {"command": args.command, "arguments": params,
                                       "feas_tol": FEAS_TOL, "versions": versions(), **extra})


def _interval_rows(name: str, res: IdentifiedSet, **extra) -> list:
    return [{"quantity": name, "lower": res.lower, "upper": res.upper, "empty": int(res.empty),
             "tolerance": res.tolerance, "feas_tol": res.feas_tol, **extra}]


def _fmt_interval(res: IdentifiedSet) -> str:
    return "empty" if res.empty else f"[{res.lower:.6g}, {res.upper:.6g}]"


def _dump_lp(args, system, objective=None) -> None:
    if args.lp_dump:
        lp = system.feasibility_lp(args.tol, objective, "minimize" if objective is not None
                                   else "feasibility")
        write_lp_file(lp, args.lp_dump, comment=f"bceid {args.command}")


# ---------------------------------------------------------------------------
# commands


def cmd_identify(args) -> int:
    grid = make_grid(args)
    data = read_bids(args.data, grid)
    phi = as_distribution(data)
    u = KERNELS[args.utility]
    out = Path(args.out)
    f = parse_moment(args.moment, grid)
    extra = {}
    if args.pi:
        pi = np.array(_floats(args.pi))
        mem = membership_cv(pi, phi, grid, u, max(args.tol, FEAS_TOL))
        print("member" if mem else "not a member")
        write_csv(out / "membership.csv", [{"member": int(bool(mem)), "tolerance": args.tol,
                                            "feas_tol": FEAS_TOL}])
        _dump_lp(args, mem.system)
        _manifest(args, out, {"member": bool(mem)})
        return EXIT_OK if mem else EXIT_EMPTY
    if args.finite_sample:
        if args.layout != "cv":
            raise CliError("--finite-sample intervals are available for the cv layout only")
        res = nonparam_moment_interval(as_sample(data), grid, f, args.delta, u)
        extra["schedule"] = res.diagnostics["schedule"]
    elif args.layout == "cv":
        res = moment_bounds_cv(f, phi, grid, u, args.tol)
        if args.lp_dump:
            system = build_bce_cv(phi, grid, u)
            _dump_lp(args, system, np.asarray(f @ system.recovery_matrix()).ravel())
    elif args.layout == "pv":
        res = moment_bounds_pv(f, phi, grid, 0, u, args.tol)
    else:
        res = ipv_symmetric_moment_bounds(f, phi, grid, u, args.tol)
        extra["refuted"] = res.empty
    print(_fmt_interval(res))
    write_csv(out / "interval.csv", _interval_rows(args.moment, res, layout=args.layout))
    _manifest(args, out, {"interval": [res.lower, res.upper], **extra})
    return EXIT_EMPTY if res.empty else EXIT_OK


def _family(args, grid) -> Family:
    return Family(args.family, grid.H)


def _write_set(args, out: Path, res: IdentifiedSet, family: Family, name: str,
               reference=None) -> None:
    write_csv(out / f"{name}.csv", mask_rows(res, family))
    if args.figures:
        from .plotting import plot_parameter_set
        plot_parameter_set(res, family, out / f"{name}.png", reference=reference)


def cmd_parametric_set(args) -> int:
    grid = make_grid(args)
    data = read_bids(args.data, grid)
    family = _family(args, grid)
    thetas = make_thetas(args, family)
    out = Path(args.out)
    method = args.method
    if method == "population" or not isinstance(data, BidSample):
        res = parametric_identified_set(as_distribution(data), grid, family, thetas, args.tol)
        method = "population"
    elif method == "hoeffding":
        res = parametric_hoeffding_set(data, grid, family, thetas, args.delta)
    else:
        res = bernstein_set(data, grid, family, thetas, args.delta)
    _write_set(args, out, res, family, "parameter_set")
    print(f"{int(res.mask.sum())} of {len(thetas)} grid points included (tolerance {res.tolerance:.6g})")
    _manifest(args, out, {"method": method, "tolerance": res.tolerance,
                          "included": int(res.mask.sum()), "n_theta": len(thetas)})
    return EXIT_EMPTY if res.empty else EXIT_OK


def cmd_counterfactual(args) -> int:
    grid = make_grid(args)
    phi = as_distribution(read_bids(args.data, grid))
    u, u_alt = KERNELS[args.utility], KERNELS[args.alt]
    W = parse_metric(args.metric, u_alt)
    res = counterfactual_bounds(phi, grid, W, u_alt, u, args.tol)
    print(_fmt_interval(res))
    out = Path(args.out)
    write_csv(out / "counterfactual.csv", _interval_rows(args.metric, res, current=args.utility,
                                                         alternative=args.alt))
    _manifest(args, out, {"interval": [res.lower, res.upper]})
    return EXIT_EMPTY if res.empty else EXIT_OK


def cmd_mc_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    report = run_experiment(cfg)
    paths = report.write(args.out, figures=args.figures)
    for row in report.summary:
        print(f"N={row['N']:>7} {row['method']:<12} size={row['size']:>4} "
              f"contains_population={row['contains_population']}")
    print(f"wrote {len(paths)} files to {args.out}")
    return EXIT_OK


def cmd_heatmap(args) -> int:
    grid = make_grid(args)
    sample = as_sample(read_bids(args.data, grid))
    family = _family(args, grid)
    thetas = make_thetas(args, family)
    values = heatmap_grid(sample, grid, family, thetas, KERNELS[args.utility])
    out = Path(args.out)
    rows = [{**{n: float(x) for n, x in zip(family.param_names, t)}, "min_tolerance": float(v)}
            for t, v in zip(thetas.points, values)]
    write_csv(out / "heatmap.csv", rows)
    if args.figures:
        from .plotting import plot_heatmap
        plot_heatmap(thetas.points, values, family, out / "heatmap.png")
    print(f"minimum tolerance {values.min():.6g} over {len(thetas)} grid points")
    _manifest(args, out, {"N": sample.N, "n_theta": len(thetas)})
    return EXIT_OK


def cmd_ocs_prep(args) -> int:
    out = Path(args.out)
    if args.write_fixture:
        write_csv(args.write_fixture, synthetic_ocs_table(args.seed))
        print(f"wrote synthetic fixture {args.write_fixture}")
        if not args.input:
            return EXIT_OK
    if not args.input:
        raise CliError("--input is required")
    table = ingest(args.input)
    spec = PreprocessSpec(args.bidders, not args.no_per_acre, args.threshold, args.H, args.seed)
    grid, sample, audit = preprocess(table, spec)
    rows = [{f"bid_{i + 1}": float(grid.bids[b]) for i, b in enumerate(p)}
            for p in sample.profiles]
    write_csv(out / "bids.csv", rows)
    write_json(out / "audit.json", audit)
    print(f"retained {audit['n_retained']} of {audit['n_input_auctions']} auctions; "
          f"per-acre mean {audit['eligible_bid_mean']:.2f}, sd {audit['eligible_bid_sd']:.2f}")
    _manifest(args, out, {"audit": {k: v for k, v in audit.items() if not k.endswith("_ids")}})
    return EXIT_OK


def cmd_bbm_compare(args) -> int:
    grid = make_grid(args)
    phi = as_distribution(read_bids(args.data, grid))
    rep = bbm_vs_sharp_report(phi, grid, KERNELS[args.utility])
    out = Path(args.out)
    write_csv(out / "bbm_compare.csv", [rep])
    print(f"sharp mean [{rep['sharp_lower']:.6g}, {rep['sharp_upper']:.6g}]; revenue "
          f"{rep['revenue']:.6g}; BBM general {rep['bbm_general']:.6g}")
    if np.isfinite(rep["two_point_mean"]):
        print(f"two-point BBM-feasible mean {rep['two_point_mean']:.6g}, "
              f"ratio to sharp upper {rep['ratio_two_point']:.6g}")
    _manifest(args, out, {"report": rep})
    return EXIT_OK


def cmd_bootstrap(args) -> int:
    grid = make_grid(args)
    sample = as_sample(read_bids(args.data, grid))
    out = Path(args.out)
    tol = args.tol if args.tol_given else None
    if args.family:
        family = _family(args, grid)
        thetas = make_thetas(args, family)
        sets = bayesian_bootstrap_sets(sample, grid, args.draws, args.seed, family=family,
                                       thetas=thetas, tol=tol, delta=args.delta)
        share = np.mean([s.mask for s in sets], axis=0)
        rows = [{**{n: float(x) for n, x in zip(family.param_names, t)},
                 "posterior_share": float(p)} for t, p in zip(thetas.points, share)]
        write_csv(out / "bootstrap_sets.csv", rows)
        print(f"{args.draws} draws; {int((share > 0).sum())} grid points appear in some draw")
    else:
        f = parse_moment(args.moment, grid)
        sets = bayesian_bootstrap_sets(sample, grid, args.draws, args.seed, moment=f,
                                       tol=tol, delta=args.delta)
        rows = [{"draw": d, "lower": s.lower, "upper": s.upper, "tolerance": s.tolerance}
                for d, s in enumerate(sets)]
        write_csv(out / "bootstrap_intervals.csv", rows)
        lo = np.array([s.lower for s in sets])
        hi = np.array([s.upper for s in sets])
        print(f"{args.draws} draws; median interval [{np.median(lo):.6g}, {np.median(hi):.6g}]")
    _manifest(args, out, {"draws": args.draws, "tolerance": sets[0].tolerance})
    return EXIT_OK


def cmd_subsample(args) -> int:
    grid = make_grid(args)
    sample = as_sample(read_bids(args.data, grid))
    family = _family(args, grid)
    thetas = make_thetas(args, family)
    s = max(1, int(round(args.sub_frac * sample.N)))
    res = subsampling_confidence_set(sample, grid, family, thetas, args.alpha, args.n_sub, s,
                                     args.refine_rounds, args.seed)
    stat = res.diagnostics["cutoff"]
    out = Path(args.out)
    _write_set(args, out, res, family, "confidence_set")
    write_csv(out / "subsample_stats.csv",
              [{"draw": m, "C": float(c)} for m, c in enumerate(stat.stats)])
    print(f"cutoff {stat.tau:.6g}; {int(res.mask.sum())} of {len(thetas)} grid points included")
    _manifest(args, out, {"tau": stat.tau, "k": stat.k, "s": stat.s, "alpha": args.alpha,
                          "N": sample.N, "rounds": stat.rounds})
    return EXIT_EMPTY if res.empty else EXIT_OK


def cmd_symmetry_test(args) -> int:
    grid = make_grid(args)
    phi = as_distribution(read_bids(args.data, grid))
    verdict = ipv_symmetry_test(phi, grid, KERNELS[args.utility], max(args.tol, FEAS_TOL))
    print(verdict)
    out = Path(args.out)
    write_csv(out / "symmetry.csv", [{"verdict": verdict, "tolerance": args.tol,
                                      "feas_tol": FEAS_TOL}])
    _manifest(args, out, {"verdict": verdict})
    return EXIT_EMPTY if verdict == "refuted" else EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--grid-h", type=int, help="integer grid V = B = {0..H}")
    common.add_argument("--values", help="comma-separated value grid")
    common.add_argument("--bids", help="comma-separated bid grid")
    common.add_argument("--n", type=int, default=2, help="number of bidders (default 2)")
    common.add_argument("--utility", choices=sorted(KERNELS), default="first_price")
    common.add_argument("--tol", type=float, default=None,
                        help="row tolerance (default 0; bootstrap defaults to Hoeffding)")
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--out", default="bceid_out", help="output directory")
    common.add_argument("--lp-dump", help="write the LP in CPLEX LP format to this path")
    common.add_argument("--figures", action="store_true", help="also render PNG figures")
    common.add_argument("-v", "--verbose", action="store_true")

    def family_options(default):
        fam = argparse.ArgumentParser(add_help=False)
        fam.add_argument("--family", default=default,
                         help="truncated_normal, truncated_poisson, binomial or "
                              "truncated_geometric")
        fam.add_argument("--axis", action="append",
                         help="start:stop:step per parameter (repeat); default paper grid")
        fam.add_argument("--delta", type=float, default=0.1)
        return fam

    fam = family_options("truncated_normal")

    p = argparse.ArgumentParser(prog="bceid", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=versions()["bceid"])
    sub = p.add_subparsers(dest="command", required=True, metavar="command")

    c = sub.add_parser("identify", parents=[common], help="membership or sharp moment bounds")
    c.add_argument("--data", required=True)
    c.add_argument("--layout", choices=["cv", "pv", "ipv"], default="cv")
    c.add_argument("--moment", default="mean", help="mean, second, const:c or a value table")
    c.add_argument("--pi", help="value distribution to test for membership (cv)")
    c.add_argument("--finite-sample", action="store_true",
                   help="Hoeffding-relaxed interval widened by eps (needs observed auctions)")
    c.add_argument("--delta", type=float, default=0.1)
    c.set_defaults(func=cmd_identify)

    c = sub.add_parser("parametric-set", parents=[common, fam], help="parametric identified set")
    c.add_argument("--data", required=True)
    c.add_argument("--method", choices=["population", "hoeffding", "bernstein"],
                   default="population")
    c.set_defaults(func=cmd_parametric_set)

    c = sub.add_parser("counterfactual", parents=[common], help="bounds under another auction")
    c.add_argument("--data", required=True)
    c.add_argument("--alt", choices=sorted(KERNELS), default="second_price")
    c.add_argument("--metric", default="revenue", help="revenue, welfare or const:c")
    c.set_defaults(func=cmd_counterfactual)

    c = sub.add_parser("mc-run", parents=[common], help="run a simulation experiment")
    c.add_argument("--config", required=True, help="JSON experiment config")
    c.set_defaults(func=cmd_mc_run)

    c = sub.add_parser("heatmap", parents=[common, fam], help="minimal tolerance per grid point")
    c.add_argument("--data", required=True)
    c.set_defaults(func=cmd_heatmap)

    c = sub.add_parser("ocs-prep", parents=[common], help="preprocess an OCS-style table")
    c.add_argument("--input")
    c.add_argument("--H", type=int, default=200)
    c.add_argument("--bidders", type=int, default=2)
    c.add_argument("--threshold", type=float, default=20000.0)
    c.add_argument("--no-per-acre", action="store_true")
    c.add_argument("--write-fixture", help="write the synthetic OCS-shaped table here")
    c.set_defaults(func=cmd_ocs_prep)

    c = sub.add_parser("bbm-compare", parents=[common], help="sharp bound versus BBM bounds")
    c.add_argument("--data", required=True)
    c.set_defaults(func=cmd_bbm_compare)

    c = sub.add_parser("bootstrap", parents=[common, family_options(None)],
                       help="Bayesian bootstrap sets (moment interval unless --family)")
    c.add_argument("--data", required=True)
    c.add_argument("--draws", type=int, default=100)
    c.add_argument("--moment", default="mean")
    c.set_defaults(func=cmd_bootstrap)

    c = sub.add_parser("subsample", parents=[common, fam], help="subsampling confidence set")
    c.add_argument("--data", required=True)
    c.add_argument("--alpha", type=float, default=0.05)
    c.add_argument("--n-sub", type=int, default=50, help="number of subsamples k")
    c.add_argument("--sub-frac", type=float, default=0.25, help="subsample size s / N")
    c.add_argument("--refine-rounds", type=int, default=2)
    c.set_defaults(func=cmd_subsample)

    c = sub.add_parser("symmetry-test", parents=[common], help="test symmetric IPV")
    c.add_argument("--data", required=True)
    c.set_defaults(func=cmd_symmetry_test)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    args.tol_given = args.tol is not None
    if args.tol is None:
        args.tol = 0.0
    try:
        return args.func(args)
    except (CliError, IngestError, DomainError, SolverError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
