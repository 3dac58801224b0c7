"""Command line interface: ``lgpdens {est1d,est2d,regress,simulate,eval,mcmc}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
import warnings
from importlib import resources

import numpy as np

from .datasets import NAMES, simulate_dataset
from .evaluation import bayesian_bootstrap, kl_divergence, mlpd
from .grid import DEFAULT_M, GridError, build_grid, default_bounds
from .hyper import map_optimize
from .laplace import ConvergenceError
from .mcmc import ChainConfig, run_chain
from .model import DensityModel
from .pipeline import EstimateOptions, fit_density
from .plotting import render_plot
from .sampling import density_summary

log = logging.getLogger("lgpdens")

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


class DataError(Exception):
    pass


class NumericalFailure(Exception):
    def __init__(self, stage, exc):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage


def schema() -> dict:
    return json.loads(resources.files("lgpdens").joinpath("result.schema.json").read_text())


def read_csv(path, columns: int) -> np.ndarray:
    try:
        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rows = []
    for i, line in enumerate(lines, 1):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != columns:
            raise DataError(f"{path}:{i}: expected {columns} column(s), got {len(parts)}")
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise DataError(f"{path}:{i}: non-numeric value") from exc
    if not rows:
        raise DataError(f"{path}: no observations")
    pts = np.array(rows)
    if not np.all(np.isfinite(pts)):
        raise DataError(f"{path}: non-finite values")
    return pts


def _floats(text, what):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what} must be comma-separated numbers") from None


def grid_arg(text):
    vals = _floats(text, "--grid")
    if any(v != int(v) or v < 2 for v in vals) or len(vals) not in (1, 2):
        raise argparse.ArgumentTypeError("--grid takes one or two integers >= 2")
    return tuple(int(v) for v in vals)


def bounds_arg(text):
    vals = _floats(text, "--bounds")
    if len(vals) not in (2, 4):
        raise argparse.ArgumentTypeError("--bounds takes lo,hi or lo,hi,lo2,hi2")
    pairs = [(vals[i], vals[i + 1]) for i in range(0, len(vals), 2)]
    for lo, hi in pairs:
        if not lo < hi:
            raise argparse.ArgumentTypeError(f"--bounds needs lo < hi, got {lo},{hi}")
    return pairs


def rank_arg(text):
    vals = _floats(text, "--rank")
    if len(vals) not in (1, 2) or vals[0] <= 0:
        raise argparse.ArgumentTypeError("--rank takes MAX[,CUTOFF] with MAX > 0")
    return vals[0], (vals[1] if len(vals) == 2 else 1e-6)


def _common(p, dims, regress=False):
    p.add_argument("input", help="headerless CSV, one observation per row")
    p.add_argument("--grid", type=grid_arg, default=None,
                   help=f"cells per dimension (default {','.join(map(str, DEFAULT_M[dims]))})")
    p.add_argument("--bounds", type=bounds_arg, default=None)
    p.add_argument("--auto-bounds", action="store_true",
                   help="choose bounds from the data (pad 0.1); widens --bounds to cover data")
    p.add_argument("--integration", choices=("map", "ccd"), default="map")
    p.add_argument("--no-is", action="store_true", help="disable importance correction")
    p.add_argument("--samples", type=int, default=8000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="result JSON path (default stdout)")
    p.add_argument("--plot", default=None, help="SVG output path")
    if dims == 1:
        p.add_argument("--rejection", action="store_true", help="tail rejection sampling")
        p.add_argument("--bounded", action="store_true", help="declare bounded support")
        p.add_argument("--fft", action="store_true", help="FFT/Toeplitz Newton path")
    elif not regress:
        p.add_argument("--rank", type=rank_arg, default=None, metavar="MAX[,CUTOFF]",
                       help="reduced-rank prior: MAX fraction (<=1) or count, eigenvalue cutoff")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lgpdens",
                                     description="Logistic Gaussian process density estimation")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _common(sub.add_parser("est1d", help="1D density estimate"), 1)
    _common(sub.add_parser("est2d", help="2D density estimate"), 2)
    _common(sub.add_parser("regress", help="density regression of t on x"), 2, regress=True)

    p = sub.add_parser("simulate", help="draw a simulated data set as CSV")
    p.add_argument("name", choices=NAMES)
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("eval", help="score a result against a simulated truth, or "
                                    "summarize a vector of values")
    p.add_argument("result", nargs="?", default=None, help="result JSON from est1d/est2d")
    p.add_argument("--truth", choices=NAMES, default=None)
    p.add_argument("--values", default=None, help="CSV column of values (e.g. MLPD differences)")
    p.add_argument("--draws", type=int, default=10000)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--plot", default=None, help="violin SVG path (with --values)")

    p = sub.add_parser("mcmc", help="MCMC reference estimate (1D)")
    p.add_argument("input")
    p.add_argument("--grid", type=grid_arg, default=(50,))
    p.add_argument("--bounds", type=bounds_arg, default=None)
    p.add_argument("--auto-bounds", action="store_true")
    p.add_argument("--meta-iters", type=int, default=5100)
    p.add_argument("--burn-in", type=int, default=100)
    p.add_argument("--latent-steps", type=int, default=100)
    p.add_argument("--chains", type=int, default=4)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--plot", default=None)
    return parser


def _grid_for(args, pts, dims):
    m = args.grid or DEFAULT_M[dims]
    if len(m) == 1 and dims == 2:
        m = (m[0], m[0])
    if len(m) != dims:
        raise argparse.ArgumentTypeError(f"--grid needs {dims} value(s)")
    if args.bounds is not None:
        if len(args.bounds) != dims:
            raise argparse.ArgumentTypeError(f"--bounds needs {dims} interval(s)")
        bounds = args.bounds
        if args.auto_bounds:
            auto = default_bounds(pts)
            bounds = [(min(a, c), max(b, d)) for (a, b), (c, d) in zip(bounds, auto)]
    else:
        try:
            bounds = default_bounds(pts)
        except GridError as exc:
            raise DataError(str(exc)) from exc
    grid = build_grid(bounds, m)
    lo = np.array([b[0] for b in grid.bounds])
    hi = np.array([b[1] for b in grid.bounds])
    bad = np.flatnonzero(np.any((pts < lo) | (pts > hi), axis=1))
    if bad.size:
        raise DataError(f"{bad.size} point(s) outside --bounds (rows {(bad + 1).tolist()[:10]}); "
                        "use --auto-bounds to widen")
    return grid


def _grid_json(grid):
    return {"bounds": [list(b) for b in grid.bounds], "m": list(grid.shape),
            "centers": [grid.axis_centers(k).tolist() for k in range(grid.dims)]}


def _density_json(summary, conditional=False):
    q = summary["quantiles"]
    return {"mean": np.asarray(summary["mean"]).tolist(), "q025": q[0].tolist(),
            "q975": q[1].tolist(), "conditional": conditional}


def _estimate(args, dims, regression=False):
    pts = read_csv(args.input, dims)
    grid = _grid_for(args, pts, dims)
    method = "dense"
    opts = {}
    if getattr(args, "fft", False):
        method = "fft"
    if getattr(args, "rank", None) is not None:
        method = "rr"
        opts = {"rank_max": args.rank[0], "rank_cutoff": args.rank[1]}
    options = EstimateOptions(method=method, integration=args.integration,
                              importance=not args.no_is,
                              rejection=getattr(args, "rejection", False),
                              bounded=getattr(args, "bounded", False),
                              samples=args.samples, seed=args.seed, **opts)
    try:
        est = fit_density(pts, grid, options, regression=regression)
    except (ConvergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        raise NumericalFailure("estimation", exc) from exc
    fit = est.map.fit
    hyper = {"map": fit.hyperparameters.to_dict(), "log_marginal": float(fit.log_marginal),
             "log_posterior": float(fit.log_posterior)}
    if est.ccd is not None:
        hyper["ccd_weights"] = est.ccd.weights.tolist()
    meta = {"command": args.command, "seed": args.seed, "options": options.to_dict(),
            "timings": est.timings, "warnings": est.warnings + est.posterior.warnings,
            "n": est.data.n, "ess": est.posterior.ess}
    meta["warnings"] = sorted(set(meta["warnings"]))
    result = {"grid": _grid_json(grid), "density": _density_json(est.summary, regression),
              "hyper": hyper, "meta": meta}
    kind = "density" if dims == 1 else "density2d-contour"
    return result, kind


def _mcmc(args):
    pts = read_csv(args.input, 1)
    grid = _grid_for(args, pts, 1)
    try:
        cfg = ChainConfig(latent_steps=args.latent_steps, meta_iters=args.meta_iters,
                          burn_in=args.burn_in, seed=args.seed)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    from .grid import bin_data
    t0 = time.perf_counter()
    model = DensityModel(grid, bin_data(grid, pts).counts)
    try:
        mres = map_optimize(model)
    except (ConvergenceError, np.linalg.LinAlgError) as exc:
        raise NumericalFailure("hyperparameter optimization", exc) from exc
    t1 = time.perf_counter()
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            res = run_chain(model, cfg, mres.fit, n_chains=args.chains)
        except (ConvergenceError, np.linalg.LinAlgError) as exc:
            raise NumericalFailure("mcmc", exc) from exc
    t2 = time.perf_counter()
    summary = density_summary(res.posterior())
    fit = mres.fit
    meta = {"command": "mcmc", "seed": args.seed,
            "options": {"meta_iters": cfg.meta_iters, "burn_in": cfg.burn_in,
                        "latent_steps": cfg.latent_steps, "chains": args.chains},
            "timings": {"map": t1 - t0, "mcmc": t2 - t1},
            "warnings": sorted({str(w.message) for w in caught}),
            "n": int(len(pts)), "ess": float(min(res.ess.values())),
            "diagnostics": {"psrf": res.psrf, "ess": res.ess,
                            "latent_accept": [c.latent_accept for c in res.chains],
                            "hyper_accept": [c.hyper_accept for c in res.chains]}}
    result = {"grid": _grid_json(grid), "density": _density_json(summary),
              "hyper": {"map": fit.hyperparameters.to_dict(),
                        "log_marginal": float(fit.log_marginal)}, "meta": meta}
    return result, "density"


def _simulate(args):
    ds = simulate_dataset(args.name, args.n, args.seed)
    text = "\n".join(",".join(repr(float(v)) for v in row) for row in ds.points) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _eval(args):
    out = {}
    if args.values is not None:
        vals = read_csv(args.values, 1)[:, 0]
        bb = bayesian_bootstrap(vals, args.draws, args.seed)
        out["values"] = {"mean": float(vals.mean()), "bootstrap_mean": float(bb.mean()),
                         "bootstrap_q025": float(np.quantile(bb, 0.025)),
                         "bootstrap_q975": float(np.quantile(bb, 0.975)),
                         "prob_positive": float(np.mean(bb > 0))}
        if args.plot:
            render_plot({"values": vals}, "violin", args.plot)
    if args.result is not None:
        if args.truth is None:
            raise argparse.ArgumentTypeError("--truth is required to score a result")
        try:
            with open(args.result, encoding="utf-8") as fh:
                res = json.load(fh)
            g = res["grid"]
            mean = np.asarray(res["density"]["mean"], dtype=float)
        except (OSError, ValueError, KeyError) as exc:
            raise DataError(f"cannot read result {args.result}: {exc}") from exc
        grid = build_grid(g["bounds"], g["m"])
        ds = simulate_dataset(args.truth, 2)
        truth = ds.density_on_grid(grid)
        w = grid.widths[1] if ds.regression else grid.cell_volume
        out["score"] = {"kl": kl_divergence(truth, mean, w), "mlpd": mlpd(mean, truth, w)}
    if not out:
        raise argparse.ArgumentTypeError("eval needs a result with --truth, or --values")
    return out


def _emit(obj, path):
    text = json.dumps(obj, indent=1, sort_keys=True) + "\n"
    if path:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command in ("est1d", "est2d", "regress"):
            dims = 1 if args.command == "est1d" else 2
            if args.samples < 2:
                raise argparse.ArgumentTypeError("--samples must be at least 2")
            result, kind = _estimate(args, dims, regression=args.command == "regress")
        elif args.command == "mcmc":
            result, kind = _mcmc(args)
        elif args.command == "simulate":
            _simulate(args)
            return 0
        else:
            _emit(_eval(args), args.out)
            return 0
        _emit(result, args.out)
        if args.plot:
            render_plot(result, kind, args.plot)
        return 0
    except (argparse.ArgumentTypeError, GridError) as exc:
        parser.print_usage(sys.stderr)
        print(f"lgpdens: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"lgpdens: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except NumericalFailure as exc:
        print(f"lgpdens: numerical failure in {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
