"""Command line interface.

Subcommands:
  sketch   compress a numeric CSV matrix with a chosen scheme
  regress  full or sketched least squares on a CSV
  pool     pooled sketched regression summary
  size     sketch-size rule calculator
  mc       run a Monte Carlo study and write reports
  verify   run the bound suite and print pass/fail lines

Exit codes: 0 success, 2 configuration error, 3 data error, 4 every
requested fit or replication failed. ``verify`` exits 1 when a bound
check fails.
"""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

import numpy as np

from . import experiments as xp
from .pooling import (
    AllSketchesSingular,
    PartitionImpossible,
    pooled_contrast_se,
    pooled_fit,
    t1_statistic,
    t2_statistic,
)
from .regression import SingularSketch, VarianceMode, ols, sketched_ols
from .schemes import SchemeId, apply_sketch, build_sketch
from .sizing import (
    DomainError,
    countsketch_m,
    implied_moments,
    m1_rule,
    m2_rule,
    m3_rule,
    s_value,
    uniform_embedding_m,
)


def _add_data_flags(sub):
    sub.add_argument("input", help="CSV file with a header row")
    sub.add_argument("--target", help="target column (default: first column)")
    sub.add_argument(
        "--features",
        help="comma-separated feature columns (default: all non-target columns)",
    )
    sub.add_argument(
        "--intercept", action="store_true", help="prepend a ones column"
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rowsketch", description="sketching toolkit for tall regressions"
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("sketch", help="sketch a CSV matrix")
    p.add_argument("input", help="CSV file with a header row")
    p.add_argument("--scheme", required=True, help="rs1..rs4, rp1..rp4, cs, lev")
    p.add_argument("--m", type=int, required=True, help="sketch size")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=".", help="output directory")
    p.set_defaults(func=_cmd_sketch)

    p = subs.add_parser("regress", help="full or sketched least squares")
    _add_data_flags(p)
    p.add_argument("--scheme", help="sketch scheme; omit for the full-sample fit")
    p.add_argument("--m", type=int, help="sketch size (required with --scheme)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--variance", choices=[v.value for v in VarianceMode], default="homo"
    )
    p.set_defaults(func=_cmd_regress)

    p = subs.add_parser("pool", help="pool several uniform row sketches")
    _add_data_flags(p)
    p.add_argument("--m", type=int, required=True, help="rows per sketch")
    p.add_argument("--J", type=int, default=1, dest="j", help="number of sketches")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument(
        "--variance", choices=[v.value for v in VarianceMode], default="homo"
    )
    p.add_argument(
        "--contrast",
        help="comma-separated contrast weights (default: last coefficient)",
    )
    p.add_argument("--beta0", type=float, default=0.0, help="null value tested")
    p.set_defaults(func=_cmd_pool)

    p = subs.add_parser("size", help="sketch-size rules")
    p.add_argument(
        "--rule",
        required=True,
        choices=[
            "m1",
            "m1-thin",
            "m2",
            "m3",
            "embedding",
            "countsketch",
            "s-value",
            "implied-moments",
        ],
    )
    p.add_argument("--n", type=int, help="source rows")
    p.add_argument("--k", type=int, help="design columns")
    p.add_argument("--r", type=float, help="assumed moments (m1)")
    p.add_argument("--m1", type=int, help="preliminary sketch size (m2)")
    p.add_argument("--var-contrast", type=float, help="estimated contrast variance (m2)")
    p.add_argument("--effect", type=float, help="effect size to detect (m2)")
    p.add_argument("--tau2", type=float, help="hypothesized full-sample t (m3)")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--gamma", type=float, default=0.8, help="target power")
    p.add_argument("--epsilon", type=float, help="distortion target")
    p.add_argument("--delta", type=float, help="failure probability")
    p.add_argument("--coherence", type=float, help="max leverage score (embedding)")
    p.add_argument("--J", type=int, default=1, dest="j", help="sketch count (embedding)")
    p.add_argument("--m-over-k", type=float, help="budget ratio (implied-moments)")
    p.set_defaults(func=_cmd_size)

    p = subs.add_parser("mc", help="run a Monte Carlo study")
    p.add_argument(
        "--experiment",
        help="table1, table3, table4, bounds, or rare_dummy",
    )
    p.add_argument("--config", help="flat key=value file; overrides flags")
    p.add_argument("--paper-scale", action="store_true", help="1000 replications")
    p.add_argument("--reps", type=int, help="override replication count")
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--dgp", help="normal, exponential, pearson, rare_dummy")
    p.add_argument("--m", help="comma-separated sketch sizes")
    p.add_argument("--J", dest="j", help="comma-separated sketch counts")
    p.add_argument("--scheme", help="comma-separated scheme list")
    p.add_argument("--epsilon", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--gamma", type=float, help="single target power for the grids")
    p.add_argument("--effect", type=float)
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", default="reports", help="report directory")
    p.add_argument("--format", choices=["csv", "markdown", "both"], default="both")
    p.set_defaults(func=_cmd_mc)

    p = subs.add_parser("verify", help="run the bound suite")
    p.add_argument("--config", help="flat key=value file; overrides flags")
    p.add_argument("--reps", type=int)
    p.add_argument("--n", type=int)
    p.add_argument("--k", type=int)
    p.add_argument("--m", help="comma-separated sketch sizes")
    p.add_argument("--J", dest="j", help="comma-separated sketch counts")
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_cmd_verify)
    return parser


def _load_xy(args):
    features = None
    if args.features:
        features = [c.strip() for c in args.features.split(",") if c.strip()]
    header, _ = xp.load_matrix_csv(args.input)
    target = args.target if args.target else header[0]
    return xp.ingest_csv(
        args.input, target, feature_columns=features, intercept=args.intercept
    )


def _feature_names(args, k: int) -> List[str]:
    if args.features:
        names = [c.strip() for c in args.features.split(",") if c.strip()]
    else:
        header, _ = xp.load_matrix_csv(args.input)
        target = args.target if args.target else header[0]
        names = [c for c in header if c != target]
    if args.intercept:
        names = ["const"] + names
    return names


def _cmd_sketch(args) -> int:
    scheme = SchemeId.parse(args.scheme)
    header, matrix = xp.load_matrix_csv(args.input)
    op = build_sketch(scheme, matrix.shape[0], args.m, args.seed, source=matrix)
    sketched = apply_sketch(op, matrix)
    paths = _ensure_dir(args.out)
    out_path = f"{paths}/sketch.csv"
    xp.write_matrix_csv(out_path, header, sketched)
    print(f"wrote {out_path} ({sketched.shape[0]} x {sketched.shape[1]})")
    return 0


def _ensure_dir(path: str) -> str:
    import os

    os.makedirs(path, exist_ok=True)
    return path.rstrip("/") or "."


def _print_fit(fit, names: List[str]) -> None:
    width = max(len(s) for s in names)
    print(f"{'coefficient':<{width}}  {'estimate':>14}  {'std error':>14}")
    for name, b, se in zip(names, fit.beta, fit.std_errors):
        print(f"{name:<{width}}  {b:>14.8g}  {se:>14.8g}")
    print(f"rows used: {fit.m_used}   ssr: {fit.ssr:.8g}   sigma2: {fit.sigma2_hat:.8g}")


def _cmd_regress(args) -> int:
    y, x = _load_xy(args)
    names = _feature_names(args, x.shape[1])
    mode = VarianceMode(args.variance)
    if args.scheme is None:
        fit = ols(y, x, mode=mode)
    else:
        if args.m is None:
            raise xp.ConfigError("--m is required with --scheme")
        scheme = SchemeId.parse(args.scheme)
        op = build_sketch(scheme, len(y), args.m, args.seed, source=x)
        fit = sketched_ols(y, x, op, mode=mode)
    _print_fit(fit, names)
    return 0


def _cmd_pool(args) -> int:
    y, x = _load_xy(args)
    names = _feature_names(args, x.shape[1])
    if args.contrast:
        contrast = np.array([float(v) for v in args.contrast.split(",")])
        if contrast.size != x.shape[1]:
            raise xp.ConfigError(
                f"contrast has {contrast.size} weights for {x.shape[1]} columns"
            )
    else:
        contrast = np.zeros(x.shape[1])
        contrast[-1] = 1.0
    pf = pooled_fit(
        y, x, args.m, args.j, args.seed, contrast, args.beta0,
        variance=VarianceMode(args.variance),
    )
    width = max(len(s) for s in names)
    print(f"{'coefficient':<{width}}  {'pooled estimate':>16}  {'std error':>14}")
    for name, b, se in zip(names, pf.beta_bar, pf.se_beta_bar):
        print(f"{name:<{width}}  {b:>16.8g}  {se:>14.8g}")
    print(
        f"sketches: {pf.J} of size {pf.m}   failures: {pf.failures}   "
        f"contrast se: {pooled_contrast_se(pf):.8g}"
    )
    t1 = t1_statistic(pf)
    print(f"t1 (pooled-se statistic): {t1:.6g}")
    if pf.J > 1:
        print(f"t2 (spread statistic):    {t2_statistic(pf):.6g}")
    return 0


def _require(args, rule: str, **pairs):
    missing = [flag for flag, value in pairs.items() if value is None]
    if missing:
        flags = ", ".join("--" + f.replace("_", "-") for f in missing)
        raise xp.ConfigError(f"rule {rule} needs {flags}")


def _cmd_size(args) -> int:
    rule = args.rule
    if rule == "m1":
        _require(args, rule, n=args.n, k=args.k, r=args.r)
        res = m1_rule(args.n, args.k, args.r)
    elif rule == "m1-thin":
        _require(args, rule, n=args.n, k=args.k)
        res = m1_rule(args.n, args.k)
    elif rule == "m2":
        _require(
            args, rule, m1=args.m1, var_contrast=args.var_contrast, effect=args.effect
        )
        res = m2_rule(args.m1, args.var_contrast, args.effect, args.alpha, args.gamma, n=args.n)
    elif rule == "m3":
        _require(args, rule, n=args.n, tau2=args.tau2)
        res = m3_rule(args.n, args.tau2, args.alpha, args.gamma)
    elif rule == "embedding":
        _require(
            args, rule, n=args.n, k=args.k, coherence=args.coherence,
            epsilon=args.epsilon, delta=args.delta,
        )
        m = uniform_embedding_m(args.n, args.coherence, args.epsilon, args.delta, args.j, args.k)
        print(f"m = {m}")
        return 0
    elif rule == "countsketch":
        _require(args, rule, k=args.k, epsilon=args.epsilon, delta=args.delta)
        print(f"m = {countsketch_m(args.k, args.epsilon, args.delta)}")
        return 0
    elif rule == "s-value":
        print(f"S({args.alpha:g}, {args.gamma:g}) = {s_value(args.alpha, args.gamma):.6f}")
        return 0
    else:
        _require(args, rule, n=args.n, k=args.k, m_over_k=args.m_over_k)
        r = implied_moments(args.n, args.k, args.m_over_k)
        print(f"implied moments r = {r:.6f}")
        return 0
    feas = "feasible" if res.feasible else "infeasible (exceeds n)"
    print(f"m = {res.m}   (raw {res.m_real:.6g}, {feas})")
    return 0


_MC_FLAG_FIELDS = (
    ("reps", "replications"),
    ("n", "n"),
    ("k", "k"),
    ("dgp", "dgp"),
    ("m", "m_grid"),
    ("j", "j_grid"),
    ("scheme", "schemes"),
    ("epsilon", "epsilon"),
    ("alpha", "alpha"),
    ("effect", "effect"),
    ("seed", "master_seed"),
    ("workers", "workers"),
)


def _mc_config(args) -> xp.ExperimentConfig:
    base = None
    if args.experiment:
        base = xp.default_config(args.experiment, paper_scale=args.paper_scale)
    overrides = {}
    for flag, field in _MC_FLAG_FIELDS:
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    if getattr(args, "gamma", None) is not None:
        overrides["gamma_grid"] = (args.gamma,)
    if overrides:
        if base is None and not args.config:
            raise xp.ConfigError("mc needs --experiment or --config")
        if base is None:
            # flags are applied after the file resolves the experiment
            pass
        else:
            base = xp.config_from_mapping(overrides, base=base)
    if args.config:
        cfg = xp.config_from_file(args.config, base=base)
        if base is None and overrides:
            cfg = xp.config_from_mapping(overrides, base=cfg)
        return cfg
    if base is None:
        raise xp.ConfigError("mc needs --experiment or --config")
    return base


def _cmd_mc(args) -> int:
    cfg = _mc_config(args)
    rows = xp.run_experiment(cfg)
    paths = xp.emit_report(rows, args.out, fmt=args.format)
    print(f"{cfg.experiment}: {len(rows)} report rows from {cfg.replications} replications")
    for path in paths:
        print(f"wrote {path}")
    return 0


_VERIFY_CHECKS = (
    ("lemma3_ssr_rate", "residual inflation bound", 0.95),
    ("lemma3_beta_rate", "coefficient distance bound", 0.95),
    ("lemma4_rate", "inverse-Gram distortion bound", 1.0),
    ("theorem2_rate", "variance ratio containment", 0.95),
    ("theorem3_rate", "pooled variance bound", 0.95),
    ("hetero_rate", "sandwich variance bound", 0.95),
)


def _cmd_verify(args) -> int:
    base = xp.default_config("bounds")
    overrides = {}
    for flag, field in (
        ("reps", "replications"),
        ("n", "n"),
        ("k", "k"),
        ("m", "m_grid"),
        ("j", "j_grid"),
        ("seed", "master_seed"),
        ("workers", "workers"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field] = value
    if overrides:
        base = xp.config_from_mapping(overrides, base=base)
    if args.config:
        base = xp.config_from_file(args.config, base=base)
    rows = xp.run_experiment(base)
    by_metric = {r.metric: r for r in rows}
    failures = 0

    def report(ok: bool, label: str, detail: str) -> None:
        nonlocal failures
        if not ok:
            failures += 1
        print(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")

    for metric, label, floor in _VERIFY_CHECKS:
        row = by_metric[metric]
        report(
            row.value >= floor,
            label,
            f"rate {row.value:.4f} over {row.replications} draws (needs >= {floor:.2f})",
        )
    row = by_metric["amm_mean_dev_se"]
    report(
        row.value <= 4.0,
        "sampled product unbiasedness",
        f"max mean deviation {row.value:.3f} MC standard errors (needs <= 4)",
    )
    row = by_metric["amm_markov_rate[delta=0.1]"]
    ceiling = 0.1 + 4.0 * row.mc_stderr
    report(
        row.value <= ceiling,
        "sampled product tail bound",
        f"exceedance rate {row.value:.4f} (Markov ceiling 0.10 + 4 se = {ceiling:.4f})",
    )
    row = by_metric["amm_var_ratio"]
    report(
        abs(row.value - 1.0) <= 6.0 * row.mc_stderr,
        "sampled product variance formula",
        f"observed/expected {row.value:.4f} (needs 1 within 6 se)",
    )
    for label in ("identity", "random"):
        row = by_metric[f"centering_dev_se[psi={label}]"]
        report(
            row.value <= 4.0,
            f"countsketch centering ({label} weights)",
            f"max deviation {row.value:.3f} MC standard errors (needs <= 4)",
        )
    row = by_metric["centering_closed_form_dev"]
    report(
        row.value <= 1e-12,
        "countsketch centering closed form",
        f"max abs deviation {row.value:.3g} (needs <= 1e-12)",
    )
    print(f"{'all checks passed' if failures == 0 else f'{failures} check(s) failed'}")
    return 0 if failures == 0 else 1


def main(argv: Optional[List[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except xp.ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except DomainError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except xp.DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except xp.AllReplicationsFailed as exc:
        print(f"all replications failed: {exc}", file=sys.stderr)
        return 4
    except (AllSketchesSingular, SingularSketch, PartitionImpossible) as exc:
        print(f"all fits failed: {exc}", file=sys.stderr)
        return 4
    except ValueError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
