"""Command line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 data-generation error,
3 divergence.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import io
from .config import ConfigError, load_config
from .errors import DivergenceError, InsufficientNeighborsError, UnstableEquationError
from .model import reconstruct, reconstruction_mse
from .pipeline import (
    Dataset,
    ablate,
    forecast,
    heatmap_steps,
    make_dataset,
    make_operator,
    stencil_diagnostics,
)
from .stencil import derivative_indices, derivative_name
from .train import train

EXIT_OK, EXIT_USAGE, EXIT_GENERATE, EXIT_DIVERGED = 0, 1, 2, 3

log = logging.getLogger("scatterpde")


class CommandError(Exception):
    def __init__(self, message, code=EXIT_USAGE):
        super().__init__(message)
        self.code = code


def _num(v):
    # shortest round-trip decimal, also for numpy scalars
    return repr(float(v))


def _out_dir(cfg):
    path = Path(cfg.out_dir)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _train_paths(out):
    paths = sorted(out.glob("train_*.tpdn"))
    if not paths:
        raise CommandError(f"no training series found in {out}; run 'generate' first")
    return paths


def cmd_generate(cfg):
    try:
        coeffs = cfg.coefficients()
        data = make_dataset(cfg)
    except UnstableEquationError as err:
        raise CommandError(f"cannot generate data: {err}", EXIT_GENERATE) from err
    out = _out_dir(cfg)
    for i, series in enumerate(data.train):
        io.write_series(out / f"train_{i:03d}.tpdn", series)
    io.write_series(out / "test.tpdn", data.test)
    print(f"generated {len(data.train)} training series and 1 test series in {out}")
    print(f"n = {data.pointset.n} points ({cfg.sampling}), T = {cfg.T}, dt = {cfg.dt}")
    print(f"equation: {_equation_text(coeffs.as_array())}")
    return EXIT_OK


def _equation_text(values, Q=2):
    return "u_t = " + " ".join(
        f"{v:+.3f} {derivative_name(i)}" for i, v in zip(derivative_indices(Q), values)
    )


def _load_series(paths):
    series = [io.read_series(p) for p in paths]
    first = series[0].pointset
    for s in series[1:]:
        if s.pointset.n != first.n or not np.array_equal(s.pointset.points, first.points):
            raise CommandError("all series must share the same observation points")
    # share one PointSet so the operator is built once
    return [type(s)(first, s.dt, s.snapshots) for s in series]


def _train(cfg, series_paths):
    series = _load_series(series_paths)
    op = make_operator(series[0].pointset, cfg.K, cfg.Q)
    truth = cfg.coefficients() if cfg.has_truth() else None
    report = train(op, series, cfg.train_config(), truth=truth)
    return report, op, truth


def cmd_train(cfg, series_paths=None):
    out = _out_dir(cfg)
    paths = series_paths or _train_paths(out)
    report, op, truth = _train(cfg, paths)
    io.write_equation(out / "equation.txt", report.model)
    (out / "train_report.csv").write_text(report.to_csv())
    rec = reconstruct(report.model)
    print(f"trained on {len(paths)} series, {op.n} points, K = {op.K}, "
          f"{len(report.epochs)} epochs in {report.wall_time:.1f} s")
    if truth is not None:
        print(f"{'truth':<8} {_equation_text(truth.as_array(), cfg.Q)}")
        print(f"{'learned':<8} {rec}")
        print(f"reconstruction MSE {reconstruction_mse(rec, truth):.3e}, w0 = {rec.identity_weight:.6f}")
    else:
        print(f"learned  {rec}")
    if report.aborted:
        raise CommandError("training diverged twice and was aborted", EXIT_DIVERGED)
    return EXIT_OK


def cmd_forecast(cfg, equation_path=None, series_path=None, H=None):
    out = _out_dir(cfg)
    equation_path = equation_path or out / "equation.txt"
    series_path = series_path or out / "test.tpdn"
    H = cfg.horizon if H is None else H
    series = io.read_series(series_path)
    model = io.read_equation(equation_path, dt=None if _has_dt(equation_path) else series.dt)
    if series.T < H + 1:
        raise CommandError(f"test series has {series.T} snapshots, horizon {H} needs {H + 1}")
    op = make_operator(series.pointset, cfg.K, model.Q)
    steps = heatmap_steps(H)
    fc = forecast(model, op, series, H, keep_steps=steps)
    lines = ["step,mse"] + [f"{i + 1},{_num(v)}" for i, v in enumerate(fc.mse)]
    (out / "forecast.csv").write_text("\n".join(lines) + "\n")
    for s in steps:
        if s in fc.states:
            io.write_pgm(out / f"forecast_step{s:04d}.pgm", io.rasterize(series.pointset, fc.states[s]))
            io.write_pgm(out / f"truth_step{s:04d}.pgm", io.rasterize(series.pointset, series.snapshots[s]))
    if fc.diverged_at is not None:
        print(f"forecast diverged at step {fc.diverged_at}; CSV truncated after step {len(fc.mse)}")
        return EXIT_DIVERGED
    print(f"forecast MSE after {H} steps: {fc.final_mse:.3e}")
    return EXIT_OK


def _has_dt(path):
    return any(line.split()[:2] == ["#", "dt"] for line in Path(path).read_text().splitlines())


def cmd_evaluate(cfg):
    code = cmd_train(cfg)
    if code != EXIT_OK:
        return code
    return cmd_forecast(cfg)


def cmd_ablate(cfg, k_values):
    out = _out_dir(cfg)
    for k in k_values:
        if k < cfg.m:
            raise InsufficientNeighborsError(k, cfg.m)
    paths = _train_paths(out)
    series = _load_series(paths + [out / "test.tpdn"])
    rows = ablate(cfg, Dataset(series[:-1], series[-1]), k_values)
    lines = ["k,reconstruction_mse,forecast_mse,max_condition"]
    for r in rows:
        lines.append(",".join([str(r["k"])] + [_num(r[c]) for c in
                                                 ("reconstruction_mse", "forecast_mse", "max_condition")]))
        print(f"K = {r['k']:3d}  reconstruction {r['reconstruction_mse']:.3e}  "
              f"forecast {r['forecast_mse']:.3e}  max condition {r['max_condition']:.3e}")
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_stencil_check(cfg, pointset=None):
    out = _out_dir(cfg)
    ps = cfg.pointset() if pointset is None else pointset
    op = make_operator(ps, cfg.K, cfg.Q)
    diag = stencil_diagnostics(op)
    lines = ["point,x,y,condition,rank_deficient,max_monomial_error"]
    for i in range(op.n):
        lines.append(
            f"{i},{_num(ps.points[i, 0])},{_num(ps.points[i, 1])},{_num(diag['condition'][i])},"
            f"{int(diag['rank_deficient'][i])},{_num(diag['max_error'][i])}"
        )
    (out / "stencil_check.csv").write_text("\n".join(lines) + "\n")
    cond = diag["condition"]
    print(f"{op.n} stencils, K = {op.K}, Q = {op.Q}")
    print(f"condition number: min {cond.min():.3e} median {np.median(cond):.3e} max {cond.max():.3e}")
    print(f"rank-deficient stencils: {int(diag['rank_deficient'].sum())}")
    print(f"max monomial error: {diag['max_error'].max():.3e}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="scatterpde",
        description="Learn advection-diffusion equations from scattered observations.",
        epilog="SCATTERPDE_NUM_THREADS sets the worker count for neighbor queries "
               "(default 1, -1 for all cores).",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="key = value configuration file")
        p.add_argument("--out", help="output directory (overrides out_dir)")
        p.add_argument("--seed", type=int, help="training seed override")
        p.add_argument("--k", type=int, help="neighbor count override")
        p.add_argument("--steps", type=int, help="forecast horizon override")
        return p

    add("generate", "simulate training and test series")
    p = add("train", "fit an equation to training series")
    p.add_argument("series", nargs="*", help="series files (default: OUT/train_*.tpdn)")
    p = add("forecast", "roll a learned equation forward on the test series")
    p.add_argument("--equation", help="equation file (default: OUT/equation.txt)")
    p.add_argument("--series", help="series file (default: OUT/test.tpdn)")
    add("evaluate", "train, then forecast")
    p = add("ablate", "sweep the neighbor count")
    p.add_argument("--k-values", default="5,8,12,16,20,28,40,50",
                   help="comma-separated neighbor counts")
    add("stencil-check", "stencil condition numbers and monomial exactness")
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        cfg = cfg.override(out_dir=args.out, seed=args.seed, K=args.k, horizon=args.steps)
        if args.command == "generate":
            return cmd_generate(cfg)
        if args.command == "train":
            return cmd_train(cfg, args.series or None)
        if args.command == "forecast":
            return cmd_forecast(cfg, args.equation, args.series)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        if args.command == "ablate":
            try:
                k_values = [int(v) for v in args.k_values.split(",") if v.strip()]
            except ValueError:
                raise CommandError(f"bad --k-values {args.k_values!r}") from None
            return cmd_ablate(cfg, k_values)
        if args.command == "stencil-check":
            return cmd_stencil_check(cfg)
    except CommandError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.code
    except DivergenceError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DIVERGED
    except UnstableEquationError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_GENERATE
    except (ConfigError, InsufficientNeighborsError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
