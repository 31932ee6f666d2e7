"""Command-line front end.

Subcommands cover the full pipeline: simulate a Brown-Resnick panel,
fit GEV margins, transform to a standard scale, fit the dependence model
by truncated pairwise likelihood, summarize empirical extremal
coefficients, run the max-stability test (single window or the full
window-by-month validation sweep), compare candidate models by CLIC and
bootstrap CLIC, build bootstrap confidence intervals, and drive the
canned simulation experiments.

Exit codes: 0 on success, 2 on input problems (bad flags, unreadable or
malformed files, inconsistent shapes), 3 on numerical failures (fits or
resampling routines that give up). Unknown flags print usage and exit 2.
"""

from __future__ import annotations

import argparse
import csv
import sys

import numpy as np

from .dependence import (Anisotropy, ConstantRange, DependenceConfig,
                         read_config, write_config)
from .empdep import binned_pairs, binned_table_to_csv, pair_rows_to_csv
from .inference import (BlockPlan, TwoStepPipeline, basic_ci, block_bootstrap,
                        clic, clic_b, cis_to_csv, sandwich, selection_to_csv)
from .margins import MarginTable, fit_margins, transform_panel
from .mstest import max_stability_test, reports_to_csv, select_validation
from .pairlik import DependenceModel, fit_dependence
from .panel import (GridPanel, make_grid, read_panel_csv, synthetic_covariates,
                    write_panel_csv)
from .simulate import derived_rng, simulate_br_panel
from .experiments import ExperimentSpec, run_experiment

_FREE_CHOICES = ("rho", "beta", "alpha", "ratio", "angle")


def _free_tuple(text: str) -> tuple:
    names = tuple(s.strip() for s in text.split(",") if s.strip())
    bad = [n for n in names if n not in _FREE_CHOICES]
    if bad:
        raise ValueError(f"unknown free parameter(s) {bad}; "
                         f"choose from {_FREE_CHOICES}")
    if not names:
        raise ValueError("--free must name at least one parameter")
    return names


def _grid_for(args) -> tuple:
    if args.nx is not None or args.ny is not None:
        if args.nx is None or args.ny is None:
            raise ValueError("--nx and --ny must be given together")
        nx, ny = args.nx, args.ny
    else:
        side = int(round(args.D ** 0.5))
        if side * side != args.D:
            raise ValueError(f"--D {args.D} is not a perfect square; "
                             "use --nx/--ny for non-square grids")
        nx = ny = side
    if nx < 1 or ny < 1:
        raise ValueError("grid dimensions must be positive")
    return make_grid(nx, ny)


def _cmd_simulate(args) -> int:
    if args.config is not None:
        cfg = read_config(args.config)
    else:
        cfg = DependenceConfig(alpha=args.alpha,
                               range_model=ConstantRange(rho=args.rho),
                               aniso=Anisotropy(ratio=args.ratio,
                                                angle=args.angle))
    ids, lon, lat = _grid_for(args)
    coords = np.column_stack([lon, lat])
    t, year, month, enso = synthetic_covariates(
        args.T, seed=derived_rng(args.seed, 0))
    vals = simulate_br_panel(cfg, coords, enso=enso, month=month,
                             T=args.T, seed=derived_rng(args.seed, 1))
    scale = "frechet"
    if args.gev is not None:
        eta, tau, xi = args.gev
        if tau <= 0:
            raise ValueError("--gev scale must be positive")
        if abs(xi) < 1e-8:
            vals = eta + tau * np.log(vals)
        else:
            vals = eta + tau * (vals ** xi - 1.0) / xi
        scale = "data"
    panel = GridPanel(site_ids=ids, lon=lon, lat=lat, t=t, year=year,
                      month=month, enso=enso, values=vals, scale=scale)
    write_panel_csv(panel, args.out)
    print(f"wrote {panel.n_times} x {panel.n_sites} panel ({scale}) "
          f"to {args.out}")
    return 0


def _cmd_fit_margins(args) -> int:
    panel = read_panel_csv(args.panel)
    table = fit_margins(panel, min_len=args.min_len)
    table.to_csv(args.out)
    n_bad = int((~table.converged).sum())
    print(f"fitted {table.site_ids.size} margins to {args.out}"
          + (f" ({n_bad} not converged)" if n_bad else ""))
    return 0


def _cmd_transform(args) -> int:
    panel = read_panel_csv(args.panel)
    table = MarginTable.from_csv(args.margins)
    out = transform_panel(panel, table, target=args.target)
    write_panel_csv(out, args.out)
    print(f"wrote {args.target}-scale panel to {args.out}")
    return 0


def _model_from_args(args) -> DependenceModel:
    template = read_config(args.config) if args.config is not None else None
    if template is None:
        template = DependenceConfig(alpha=args.alpha,
                                    range_model=ConstantRange(rho=args.rho),
                                    aniso=Anisotropy(ratio=args.ratio,
                                                     angle=args.angle))
    if args.free is not None:
        free = _free_tuple(args.free)
    elif isinstance(template.range_model, ConstantRange):
        free = ("rho", "alpha")
    else:
        free = ("beta", "alpha", "ratio", "angle")
    return DependenceModel(template=template, free=free)


def _cmd_fit_dep(args) -> int:
    panel = read_panel_csv(args.panel)
    model = _model_from_args(args)
    if panel.scale == "data":
        pipe = TwoStepPipeline(model=model, c=args.c, margins="two_step",
                               restarts=args.restarts)
        fit = pipe.fit(panel)
    elif panel.scale == "frechet":
        fit = fit_dependence(panel, model, c=args.c, restarts=args.restarts)
    else:
        raise ValueError("fit-dep expects a data- or frechet-scale panel")
    fit.to_csv(args.out)
    if args.save_config is not None:
        write_config(fit.config, args.save_config)
    line = ", ".join(f"{n}={v:.4g}"
                     for n, v in zip(fit.names, fit.constrained_values()))
    print(f"loglik {fit.loglik:.4f} after {fit.n_evals} evaluations; {line}")
    if not fit.converged:
        print("warning: optimizer did not report convergence",
              file=sys.stderr)
    return 0


def _cmd_extcoef(args) -> int:
    panel = read_panel_csv(args.panel)
    if panel.scale == "data":
        panel = transform_panel(panel, fit_margins(panel,
                                                   min_len=args.min_len))
    edges = tuple(float(s) for s in args.bins.split(","))
    rows, table = binned_pairs(panel, bin_edges=edges,
                               min_count=args.min_count)
    pair_rows_to_csv(rows, args.out)
    if args.binned is not None:
        binned_table_to_csv(table, args.binned)
    print(f"wrote {len(rows)} pair rows to {args.out}")
    return 0


def _read_matrix_csv(path: str):
    """Wide numeric CSV: header row of column labels, float cells
    (empty or 'nan' marks missing). Returns (header, matrix)."""
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        rows = []
        for row in rd:
            if not row:
                continue
            if len(row) != len(header):
                raise ValueError(f"{path}: row {len(rows) + 2} has "
                                 f"{len(row)} cells, expected {len(header)}")
            rows.append([float(v) if v not in ("", "nan", "NaN") else
                         float("nan") for v in row])
    if not rows:
        raise ValueError(f"{path}: no data rows")
    return header, np.array(rows, dtype=float)


def _cmd_mstest(args) -> int:
    _, maxima = _read_matrix_csv(args.maxima)
    _, hf = _read_matrix_csv(args.highfreq)
    rep = max_stability_test(maxima, hf, B=args.B, p=args.p, seed=args.seed,
                             level=args.level, constraint=args.constraint,
                             window=args.window, month=args.month)
    reports_to_csv([rep], args.out)
    verdict = "rejected" if rep.rejected else "not rejected"
    print(f"A2 = {rep.stat_obs:.4f}, p = {rep.p_value:.4f} "
          f"(B_eff = {rep.B_effective}): max-stability {verdict} "
          f"at level {args.level}")
    for note in rep.notes:
        print(f"note: {note}", file=sys.stderr)
    return 0


def _read_windows_csv(path: str, site_ids: np.ndarray):
    """CSV with header window,site_id mapping sites into labeled windows."""
    groups: dict = {}
    order: list = []
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if header != ["window", "site_id"]:
            raise ValueError(f"{path}: expected header window,site_id, "
                             f"got {header}")
        for row in rd:
            if not row:
                continue
            label, sid = row[0], int(row[1])
            if label not in groups:
                groups[label] = []
                order.append(label)
            groups[label].append(sid)
    windows = []
    ids = list(int(s) for s in site_ids)
    for label in order:
        mask = np.isin(site_ids, groups[label])
        missing = [s for s in groups[label] if s not in ids]
        if missing:
            raise ValueError(f"{path}: window {label!r} names sites "
                             f"{missing} absent from the panel")
        windows.append((label, mask))
    return windows


def _cmd_select_validation(args) -> int:
    panel = read_panel_csv(args.maxima)
    hf_panel = read_panel_csv(args.highfreq)
    if not np.array_equal(hf_panel.site_ids, panel.site_ids):
        raise ValueError("maxima and highfreq panels must share site ids "
                         "in the same order")
    windows = _read_windows_csv(args.windows, panel.site_ids)
    months = tuple(int(s) for s in args.months.split(","))
    summary = select_validation(panel, hf_panel.values, hf_panel.month,
                                windows, months=months, B=args.B, p=args.p,
                                seed=args.seed, level=args.level,
                                constraint=args.constraint)
    reports_to_csv(summary.reports, args.out)
    print(f"{summary.n_rejections}/{len(summary.reports)} cells rejected "
          f"at level {args.level} ({len(summary.failures)} failed)")
    for f in summary.failures:
        print(f"failed window={f['window']} month={f['month']}: "
              f"{f['error']}", file=sys.stderr)
    return 0


def _plan_for(args, panel: GridPanel) -> BlockPlan:
    if args.plan == "iid":
        return BlockPlan.iid(panel.n_times)
    if args.plan == "whole-series":
        return BlockPlan.whole_series(panel.n_times)
    return BlockPlan.by_years(panel.year, block_years=args.block_years)


def _cmd_model_select(args) -> int:
    panel = read_panel_csv(args.panel)
    margins = "two_step" if panel.scale == "data" else "known"
    frees = args.free if args.free else [None] * len(args.model)
    if len(frees) == 1 and len(args.model) > 1:
        frees = frees * len(args.model)
    if len(frees) != len(args.model):
        raise ValueError("--free must be given once, or once per --model")
    rows = []
    for path, free_text in zip(args.model, frees):
        cfg = read_config(path)
        if free_text is not None:
            free = _free_tuple(free_text)
        elif isinstance(cfg.range_model, ConstantRange):
            free = ("rho", "alpha")
        else:
            free = ("beta", "alpha", "ratio", "angle")
        model = DependenceModel(template=cfg, free=free)
        pipe = TwoStepPipeline(model=model, c=args.c, margins=margins)
        fit = pipe.fit(panel)
        row = {"model_id": _model_id(path), "loglik": fit.loglik,
               "clic": clic(fit), "clic_b": float("nan"),
               "boot_bias": float("nan"), "B_effective": 0}
        if args.B > 0:
            run = block_bootstrap(panel, pipe, _plan_for(args, panel),
                                  B=args.B, seed=args.seed, base=fit)
            cb, bias = clic_b(run)
            row.update(clic_b=cb, boot_bias=bias,
                       B_effective=run.B_effective)
        rows.append(row)
        print(f"{row['model_id']}: loglik {fit.loglik:.4f}, "
              f"CLIC {row['clic']:.4f}"
              + (f", CLIC^b {row['clic_b']:.4f}" if args.B > 0 else ""))
    selection_to_csv(rows, args.out)
    key = "clic_b" if args.B > 0 else "clic"
    best = min(rows, key=lambda r: r[key])
    print(f"selected by {key}: {best['model_id']}")
    return 0


def _model_id(path: str) -> str:
    name = path.replace("\\", "/").rsplit("/", 1)[-1]
    return name.rsplit(".", 1)[0] if "." in name else name


_AUTO_TRANSFORM = {"rho": "log", "ratio": "log"}


def _cmd_ci(args) -> int:
    panel = read_panel_csv(args.panel)
    margins = "two_step" if panel.scale == "data" else "known"
    cfg = read_config(args.model)
    if args.free is not None:
        free = _free_tuple(args.free)
    elif isinstance(cfg.range_model, ConstantRange):
        free = ("rho", "alpha")
    else:
        free = ("beta", "alpha", "ratio", "angle")
    model = DependenceModel(template=cfg, free=free)
    pipe = TwoStepPipeline(model=model, c=args.c, margins=margins)
    fit = pipe.fit(panel)
    run = block_bootstrap(panel, pipe, _plan_for(args, panel), B=args.B,
                          seed=args.seed, base=fit)
    overrides = {}
    for spec in args.transform or []:
        if "=" not in spec:
            raise ValueError("--transform expects name=kind")
        name, kind = spec.split("=", 1)
        overrides[name.strip()] = kind.strip()
    estimates = fit.constrained_values()
    cis = []
    for j, name in enumerate(fit.names):
        kind = overrides.get(name,
                             _AUTO_TRANSFORM.get(name.split("[")[0],
                                                 "identity"))
        cis.append(basic_ci(estimates[j], run.values[:, j], param=name,
                            level=args.level, transform=kind,
                            min_replicates=min(50, max(2, run.B_effective))))
    cis_to_csv(cis, args.out)
    if args.sandwich:
        se = sandwich(fit).se()
        print("sandwich standard errors (unconstrained scale): "
              + ", ".join(f"{n}={s:.4g}" for n, s in zip(fit.names, se)))
    for c in cis:
        print(f"{c.param}: {c.estimate:.4g} [{c.lo:.4g}, {c.hi:.4g}] "
              f"({c.transform})")
    return 0


def _cmd_experiment(args) -> int:
    spec = ExperimentSpec(name=args.name, scale=args.scale, seed=args.seed,
                          D=args.D, T=args.T, replications=args.replications,
                          B=args.B, out_dir=args.out_dir)
    report = run_experiment(spec)
    for k, v in report.items():
        if isinstance(v, str):
            print(f"{k}: {v}")
    return 0


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="stmaxstab",
        description="Space-time max-stable models with covariate-driven "
                    "dependence range")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate",
                       help="simulate a Brown-Resnick panel on a grid")
    p.add_argument("--model", choices=["br"], default="br")
    p.add_argument("--config", help="dependence config file (overrides the "
                   "scalar flags)")
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--ratio", type=float, default=1.0)
    p.add_argument("--angle", type=float, default=0.0)
    p.add_argument("--D", type=int, default=25,
                   help="number of sites (perfect square)")
    p.add_argument("--nx", type=int, help="grid columns (with --ny)")
    p.add_argument("--ny", type=int, help="grid rows (with --nx)")
    p.add_argument("--T", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--gev", type=_gev_triple, default=None,
                   metavar="ETA,TAU,XI",
                   help="map the unit-Frechet draws through a GEV quantile "
                        "so the panel is on the data scale")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit-margins",
                       help="fit a GEV at every site of a data-scale panel")
    p.add_argument("--panel", required=True)
    p.add_argument("--min-len", type=int, default=15)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit_margins)

    p = sub.add_parser("transform",
                       help="transform a data panel to frechet/gumbel scale")
    p.add_argument("--panel", required=True)
    p.add_argument("--margins", required=True, help="margin table CSV")
    p.add_argument("--target", choices=["frechet", "gumbel"],
                   default="frechet")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_transform)

    p = sub.add_parser("fit-dep",
                       help="fit the dependence model by truncated pairwise "
                            "likelihood")
    p.add_argument("--panel", required=True,
                   help="data- or frechet-scale panel (data triggers the "
                        "two-step marginal fit)")
    p.add_argument("--model", choices=["constant", "spline"],
                   default="constant",
                   help="shortcut template when no --config is given")
    p.add_argument("--config", help="dependence config as the template/init")
    p.add_argument("--free",
                   help="comma-separated free parameters "
                        "(rho,beta,alpha,ratio,angle)")
    p.add_argument("--c", type=float, default=2.0,
                   help="pair truncation distance scale")
    p.add_argument("--rho", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--ratio", type=float, default=1.0)
    p.add_argument("--angle", type=float, default=0.0)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--save-config",
                   help="also write the fitted point as a config file")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_fit_dep)

    p = sub.add_parser("extcoef",
                       help="empirical pairwise extremal coefficients by "
                            "distance bin")
    p.add_argument("--panel", required=True)
    p.add_argument("--bins", default="0.5,1.5,2.5,3.5,4.5",
                   help="comma-separated distance bin edges")
    p.add_argument("--min-count", type=int, default=15)
    p.add_argument("--min-len", type=int, default=15)
    p.add_argument("--binned", help="also write per-bin quartile table")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_extcoef)

    p = sub.add_parser("mstest",
                       help="Monte Carlo max-stability test on one window")
    p.add_argument("--maxima", required=True,
                   help="wide CSV of block maxima (rows = blocks, columns = "
                        "sites)")
    p.add_argument("--highfreq", required=True,
                   help="wide CSV of the underlying high-frequency series")
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--p", type=float, default=0.9,
                   help="radial quantile cutoff for the spectral estimate")
    p.add_argument("--constraint", choices=["angular", "angular_over_radius"],
                   default="angular")
    p.add_argument("--level", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--window", default="", help="label copied to the report")
    p.add_argument("--month", type=int, default=0,
                   help="label copied to the report")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_mstest)

    p = sub.add_parser("select-validation",
                       help="max-stability test per (window, month) cell")
    p.add_argument("--maxima", required=True,
                   help="GridPanel CSV of block maxima")
    p.add_argument("--highfreq", required=True,
                   help="GridPanel CSV of the high-frequency series (same "
                        "sites)")
    p.add_argument("--windows", required=True,
                   help="CSV window,site_id grouping sites into windows")
    p.add_argument("--months", default="1,2,3,4,5,6,7,8,9,10,11,12")
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--p", type=float, default=0.9)
    p.add_argument("--constraint", choices=["angular", "angular_over_radius"],
                   default="angular")
    p.add_argument("--level", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_select_validation)

    p = sub.add_parser("model-select",
                       help="rank candidate models by CLIC / bootstrap CLIC")
    p.add_argument("--panel", required=True)
    p.add_argument("--model", action="append", required=True,
                   help="dependence config; repeat for each candidate")
    p.add_argument("--free", action="append",
                   help="free parameters per --model (repeat to match, or "
                        "give once for all)")
    p.add_argument("--c", type=float, default=2.0)
    p.add_argument("--B", type=int, default=0,
                   help="bootstrap replicates (0 disables CLIC^b)")
    p.add_argument("--plan", choices=["iid", "whole-series", "years"],
                   default="iid")
    p.add_argument("--block-years", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_model_select)

    p = sub.add_parser("ci",
                       help="basic bootstrap confidence intervals for a fit")
    p.add_argument("--panel", required=True)
    p.add_argument("--model", required=True, help="dependence config")
    p.add_argument("--free")
    p.add_argument("--c", type=float, default=2.0)
    p.add_argument("--B", type=int, default=200)
    p.add_argument("--plan", choices=["iid", "whole-series", "years"],
                   default="iid")
    p.add_argument("--block-years", type=int, default=2)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--transform", action="append",
                   metavar="NAME=KIND",
                   help="override the per-parameter transform "
                        "(identity|log|theta-logit); default log for "
                        "rho/ratio, identity otherwise")
    p.add_argument("--sandwich", action="store_true",
                   help="also print sandwich standard errors")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_ci)

    p = sub.add_parser("experiment", help="run a canned simulation study")
    p.add_argument("name", choices=["taper", "spline-recovery",
                                    "clic-compare", "mstest-power",
                                    "coverage"])
    p.add_argument("--scale", type=float, default=1.0,
                   help="multiplier on replications/B/T with floors")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--D", type=int, help="override the site count")
    p.add_argument("--T", type=int, help="override the series length")
    p.add_argument("--replications", type=int)
    p.add_argument("--B", type=int)
    p.add_argument("--out-dir", default=".")
    p.set_defaults(func=_cmd_experiment)
    return ap


def _gev_triple(text: str):
    parts = text.split(",")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected ETA,TAU,XI")
    return tuple(float(v) for v in parts)


def main(argv=None) -> int:
    ap = _build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, KeyError, OSError, csv.Error) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (RuntimeError, ArithmeticError, np.linalg.LinAlgError) as e:
        print(f"numerical failure: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
