"""Command-line benchmark harness.

Subcommands: simulate, fit, preselect, coverage-study, iv-compare, regpath,
ccif, identifiability. Every command is a pure function of its flags and
input files (a seed is required wherever randomness is involved), numeric
CSV output carries 17 significant digits plus a trailing provenance comment,
and exit codes distinguish validation errors (2), numerical failures (3) and
I/O problems (4).
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .baselines import lasso_preselect
from .diagnostics import CcifQuery, ccif, check_identifiability, zstar
from .errors import NumericalError, ValidationError
from .estimator import fit_closed_form, fit_envs, fit_table, fit_to_dict
from .gram import gram_from_dict, gram_from_envs, gram_to_dict
from .regularized import active_set, compute_path, cross_validate, fit_regularized, lambda_grid
from .sem import (
    BUILTIN_NAMES,
    builtin_spec,
    read_datasets_csv,
    simulate_all,
    spec_from_dict,
    spec_hash,
    split_total,
    write_datasets_csv,
)
from .studies import StudyConfig, run_coverage_study, run_iv_compare, run_regpath_study

_FMT = "{:.17g}"


def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return _FMT.format(v)
    return str(v)


def _write_csv(path, rows: list[dict], provenance: dict | None = None) -> None:
    if not rows:
        raise ValidationError("nothing to write")
    cols = list(rows[0].keys())
    lines = [",".join(cols)]
    for row in rows:
        lines.append(",".join(_fmt_cell(row[c]) for c in cols))
    if provenance:
        lines.append("# " + " ".join(f"{k}={v}" for k, v in provenance.items()))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def _ensure_out(args) -> str:
    if not args.out:
        raise ValidationError("--out directory is required for this command")
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _load_config(args) -> None:
    """Fill unset (None) flag values from a JSON config file."""
    if not getattr(args, "config", None):
        return
    with open(args.config, "r", encoding="utf-8") as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ValidationError("--config must hold a JSON object")
    for key, value in data.items():
        attr = key.replace("-", "_")
        if hasattr(args, attr) and getattr(args, attr) is None:
            setattr(args, attr, value)


def _resolve_spec(args):
    if getattr(args, "spec_json", None):
        with open(args.spec_json, "r", encoding="utf-8") as fh:
            return spec_from_dict(json.load(fh))
    name = getattr(args, "model", None)
    if not name:
        raise ValidationError("give --model or --spec-json")
    kwargs = {}
    if name == "sem_C":
        if args.p is None or args.sigma is None:
            raise ValidationError("sem_C needs --p and --sigma")
        kwargs.update(p=int(args.p), sigma=float(args.sigma))
    if getattr(args, "loading_seed", None) is not None:
        kwargs["loading_seed"] = int(args.loading_seed)
    return builtin_spec(name, **kwargs)


def _require_seed(args) -> int:
    if args.seed is None:
        raise ValidationError("--seed is required (no wall-clock seeding)")
    return int(args.seed)


def _parse_ns(text) -> list[int]:
    try:
        return [int(tok) for tok in str(text).split(",") if tok.strip()]
    except ValueError as exc:
        raise ValidationError(f"bad sample-size list {text!r}") from exc


# ---------------------------------------------------------------------------
# subcommands


def cmd_simulate(args) -> int:
    _load_config(args)
    seed = _require_seed(args)
    spec = _resolve_spec(args)
    out = _ensure_out(args)
    n = int(args.n)
    ns = (
        split_total(n, len(spec.environments))
        if args.total
        else [n] * len(spec.environments)
    )
    envs = simulate_all(spec, ns, seed)
    prov = {"seed": seed, "spec_hash": spec_hash(spec)}
    write_datasets_csv(os.path.join(out, "data.csv"), envs, prov)
    for env in envs:
        write_datasets_csv(os.path.join(out, f"env_{env.env_label}.csv"), [env], prov)
    with open(os.path.join(out, "provenance.json"), "w", encoding="utf-8") as fh:
        json.dump(
            {
                "seed": seed,
                "spec_hash": spec_hash(spec),
                "n_per_env": ns,
                "environments": [env.env_label for env in envs],
            },
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")
    print(f"wrote {sum(e.n for e in envs)} rows across {len(envs)} environments to {out}")
    return 0


def _fit_from_gram(args) -> int:
    with open(args.from_gram, "r", encoding="utf-8") as fh:
        gram = gram_from_dict(json.load(fh))
    if args.regularized or args.cv:
        raise ValidationError("--from-gram supports the closed form only")
    fit = fit_closed_form(gram)
    print(fit_table(fit))
    print(json.dumps(fit_to_dict(fit)))
    return 0


def cmd_fit(args) -> int:
    _load_config(args)
    if args.from_gram:
        return _fit_from_gram(args)
    envs, _ = read_datasets_csv(args.data)
    if len(envs) < 2:
        raise ValidationError("the dataset must contain at least two environments")
    alpha = 0.05 if args.alpha is None else float(args.alpha)
    names = [f"X{k + 1}" for k in range(envs[0].p)]
    out_rows = None
    if args.cv:
        seed = _require_seed(args)
        path = cross_validate(
            envs,
            k=int(args.cv_folds),
            seed=seed,
            center=not args.no_center,
            scale=not args.no_scale,
            n_points=int(args.n_lambdas),
            ratio=float(args.lambda_ratio),
        )
        beta = path.beta_cv
        print(f"cross-validated lambda: {path.chosen_lambda:.6g}")
        print(f"active set: {[names[k] for k in active_set(beta)]}")
        for k in range(beta.size):
            print(f"{names[k]:>6} {beta[k]: .4f}")
        out_rows = _path_rows(path)
        payload = {
            "beta": [float(v) for v in beta],
            "method": "regularized",
            "lambda": float(path.chosen_lambda),
        }
    elif args.regularized or args.lam is not None:
        if args.lam is None:
            raise ValidationError("--regularized needs --lambda or --cv")
        gram, _ = gram_from_envs(
            envs, center=not args.no_center, scale=not args.no_scale
        )
        beta, status = fit_regularized(gram, float(args.lam))
        if status != "optimal":
            raise NumericalError(f"regularized fit is {status} at this lambda")
        print(f"lambda: {float(args.lam):.6g}")
        for k in range(beta.size):
            print(f"{names[k]:>6} {beta[k]: .4f}")
        payload = {
            "beta": [float(v) for v in beta],
            "method": "regularized",
            "lambda": float(args.lam),
        }
    else:
        try:
            fit = fit_envs(
                envs,
                alpha=alpha,
                scale=bool(args.scale),
                center=not args.no_center,
            )
        except NumericalError as exc:
            raise NumericalError(
                f"{exc} (hint: retry with --regularized)"
            ) from exc
        print(fit_table(fit, names))
        payload = fit_to_dict(fit)
    if args.out:
        out = _ensure_out(args)
        with open(os.path.join(out, "fit.json"), "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
        if out_rows:
            _write_csv(os.path.join(out, "path.csv"), out_rows)
    return 0


def cmd_preselect(args) -> int:
    _load_config(args)
    envs, _ = read_datasets_csv(args.data)
    seed = _require_seed(args)
    labels = (
        None
        if not args.source_labels
        else set(args.source_labels.split(","))
    )
    active = lasso_preselect(
        envs, k_folds=int(args.cv_folds), seed=seed, source_labels=labels
    )
    payload = {
        "indices": list(active.indices),
        "names": [f"X{k + 1}" for k in active.indices],
        "coefficients": [float(v) for v in active.coefficients],
        "lambda": active.lam,
    }
    print(json.dumps(payload, indent=2))
    if args.out:
        out = _ensure_out(args)
        with open(os.path.join(out, "active_set.json"), "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")
    return 0


def _study_config(args, spec=None) -> StudyConfig:
    seed = _require_seed(args)
    return StudyConfig(
        seed=seed,
        spec=spec,
        n_values=_parse_ns(args.n),
        n_is_total=bool(getattr(args, "total", False)),
        reps=int(args.reps),
        alpha=0.05 if getattr(args, "alpha", None) is None else float(args.alpha),
        target_index=int(getattr(args, "target", 0)),
        threads=int(args.threads or 1),
    )


def cmd_coverage_study(args) -> int:
    _load_config(args)
    spec = _resolve_spec(args)
    cfg = _study_config(args, spec)
    rows = run_coverage_study(cfg)
    out = _ensure_out(args)
    prov = {"seed": cfg.seed, "spec_hash": spec_hash(spec)}
    _write_csv(os.path.join(out, "coverage.csv"), rows, prov)
    for row in rows:
        print(
            f"n={row['n']}: coverage {row['coverage']:.3f} "
            f"(se {row['coverage_se']:.3f}), avg length {row['avg_length']:.3f}"
        )
    return 0


def cmd_iv_compare(args) -> int:
    _load_config(args)
    cfg = _study_config(args)
    models = tuple((args.models or "iv_strong,iv_weak").split(","))
    rows = run_iv_compare(cfg, models=models)
    out = _ensure_out(args)
    prov = {"seed": cfg.seed}
    _write_csv(os.path.join(out, "iv_compare.csv"), rows, prov)
    for row in rows:
        print(
            f"{row['model']} n={row['n']}: mse dantzig {row['mse_dantzig']:.4g}, "
            f"mse wald {row['mse_wald']:.4g} ({row['wald_degenerate']} degenerate)"
        )
    return 0


def _path_rows(path) -> list[dict]:
    rows = []
    p = path.betas.shape[1]
    for i, lam in enumerate(path.lambdas):
        row = {"lambda": float(lam)}
        row["cv_score"] = (
            float(path.cv_scores[i]) if path.cv_scores is not None else math.nan
        )
        for k in range(p):
            row[f"beta_{k + 1}"] = float(path.betas[i, k])
        row["status"] = path.statuses[i]
        row["chosen"] = int(path.chosen_index == i) if path.chosen_index is not None else 0
        rows.append(row)
    return rows


def _plot_data_rows(path) -> list[dict]:
    """Polyline vertices: one series per coefficient over log10(lambda)."""
    rows = []
    p = path.betas.shape[1]
    for k in range(p):
        for i, lam in enumerate(path.lambdas):
            if not np.isfinite(path.betas[i, k]):
                continue
            rows.append(
                {
                    "series": f"beta_{k + 1}",
                    "log10_lambda": float(np.log10(lam)),
                    "value": float(path.betas[i, k]),
                }
            )
    if path.chosen_lambda is not None:
        rows.append(
            {
                "series": "chosen_lambda",
                "log10_lambda": float(np.log10(path.chosen_lambda)),
                "value": 0.0,
            }
        )
    return rows


def cmd_regpath(args) -> int:
    _load_config(args)
    spec = _resolve_spec(args)
    seed = _require_seed(args)
    out = _ensure_out(args)
    ns = _parse_ns(args.n)
    if len(ns) != 1:
        raise ValidationError("regpath takes a single per-environment n")
    reps = int(args.reps)
    prov = {"seed": seed, "spec_hash": spec_hash(spec)}
    from .studies import regpath_replicate

    first = regpath_replicate(
        spec,
        ns[0],
        seed,
        0,
        n_lambdas=int(args.n_lambdas),
        ratio=float(args.lambda_ratio),
        k=int(args.cv_folds),
    )
    _write_csv(os.path.join(out, "path.csv"), _path_rows(first.path), prov)
    if args.plot_data:
        _write_csv(os.path.join(out, "plot_data.csv"), _plot_data_rows(first.path), prov)
    print(
        f"chosen lambda {first.path.chosen_lambda:.6g}, "
        f"sup-norm error {first.err_inf:.4f}, active set size {len(first.active)}"
    )
    if reps > 1:
        cfg = StudyConfig(
            seed=seed,
            spec=spec,
            n_values=ns,
            reps=reps,
            threads=int(args.threads or 1),
            n_lambdas=int(args.n_lambdas),
            lambda_ratio=float(args.lambda_ratio),
            cv_folds=int(args.cv_folds),
        )
        rows = run_regpath_study(cfg)
        _write_csv(os.path.join(out, "summary.csv"), rows, prov)
    return 0


def _parse_index_set(text: str, p: int) -> tuple[int, ...]:
    """Column tokens: X3-style names or 1-based integers."""
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if tok.upper().startswith("X"):
            idx = int(tok[1:]) - 1
        else:
            idx = int(tok) - 1
        if not 0 <= idx < p:
            raise ValidationError(f"index {tok!r} out of range for p={p}")
        out.append(idx)
    if not out:
        raise ValidationError("empty index set")
    return tuple(sorted(set(out)))


def cmd_ccif(args) -> int:
    with open(args.gram, "r", encoding="utf-8") as fh:
        gram = gram_from_dict(json.load(fh))
    z, g = gram.pair()
    q = np.inf if args.q in ("inf", "infinity") else float(args.q)
    s = _parse_index_set(args.set, gram.p)
    value = ccif(CcifQuery(S=s, q=q, G=g))
    print(_FMT.format(value))
    if args.beta0:
        beta0 = np.asarray([float(t) for t in args.beta0.split(",")])
        print(f"zstar={_FMT.format(zstar(gram, beta0))}")
    return 0


def cmd_identifiability(args) -> int:
    with open(args.spec_json, "r", encoding="utf-8") as fh:
        spec = spec_from_dict(json.load(fh))
    report = check_identifiability(spec)
    if report.verdict is None:
        print(f"verdict: unchecked ({report.reason})")
    elif report.verdict:
        print("verdict: identifiable")
    else:
        print(f"verdict: not identifiable (witness X{report.witness + 1})")
    print(f"reason: {report.reason}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="causaldantzig",
        description="Causal effect estimation from multi-environment data, "
        "with an SEM simulator and benchmark studies.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="master seed")
    common.add_argument("--out", default=None, help="output directory")
    common.add_argument("--threads", type=int, default=None, help="worker count")
    common.add_argument("--config", default=None, help="JSON file with defaults")

    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--model", choices=BUILTIN_NAMES, default=None)
    model.add_argument("--spec-json", default=None, help="model spec JSON file")
    model.add_argument("--p", type=int, default=None, help="sem_C: predictor count")
    model.add_argument("--sigma", type=float, default=None, help="sem_C: intervention sd")
    model.add_argument("--loading-seed", type=int, default=None)

    s = sub.add_parser("simulate", parents=[common, model], help="write dataset CSVs")
    s.add_argument("--n", type=int, required=True)
    s.add_argument(
        "--total",
        action="store_true",
        help="treat --n as a total split equally across environments",
    )
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("fit", parents=[common], help="fit a dataset CSV")
    s.add_argument("data", nargs="?", help="dataset CSV (env,X1..Xp,Y)")
    s.add_argument("--from-gram", default=None, help="fit from a gram-shift JSON")
    s.add_argument("--regularized", action="store_true")
    s.add_argument("--lambda", dest="lam", type=float, default=None)
    s.add_argument("--cv", action="store_true", help="choose lambda by cross-validation")
    s.add_argument("--cv-folds", type=int, default=10)
    s.add_argument("--n-lambdas", type=int, default=50)
    s.add_argument("--lambda-ratio", type=float, default=1e-3)
    s.add_argument("--alpha", type=float, default=None)
    s.add_argument("--scale", action="store_true", help="row-scale the gram statistics")
    s.add_argument("--no-scale", action="store_true", help="disable scaling in --cv/--regularized")
    s.add_argument(
        "--no-center",
        action="store_true",
        help="fit raw moments (mean-shift instruments need this with two environments)",
    )
    s.set_defaults(func=cmd_fit)

    s = sub.add_parser("preselect", parents=[common], help="Lasso screening")
    s.add_argument("data")
    s.add_argument("--cv-folds", type=int, default=10)
    s.add_argument(
        "--source-labels",
        default=None,
        help="comma list of environment labels to pool (default: all)",
    )
    s.set_defaults(func=cmd_preselect)

    s = sub.add_parser(
        "coverage-study", parents=[common, model], help="CI coverage and length"
    )
    s.add_argument("--n", required=True, help="comma list of per-environment sizes")
    s.add_argument(
        "--total",
        action="store_true",
        help="treat --n as totals split equally across environments",
    )
    s.add_argument("--reps", type=int, default=500)
    s.add_argument("--alpha", type=float, default=None)
    s.add_argument("--target", type=int, default=0, help="coefficient index (0-based)")
    s.set_defaults(func=cmd_coverage_study)

    s = sub.add_parser("iv-compare", parents=[common], help="MSE vs the Wald ratio")
    s.add_argument("--n", required=True, help="comma list of per-environment sizes")
    s.add_argument("--reps", type=int, default=500)
    s.add_argument("--models", default=None)
    s.set_defaults(func=cmd_iv_compare)

    s = sub.add_parser(
        "regpath", parents=[common, model], help="regularization path with CV"
    )
    s.add_argument("--n", required=True, help="per-environment sample size")
    s.add_argument("--reps", type=int, default=1)
    s.add_argument("--cv-folds", type=int, default=10)
    s.add_argument("--n-lambdas", type=int, default=50)
    s.add_argument("--lambda-ratio", type=float, default=1e-3)
    s.add_argument("--plot-data", action="store_true")
    s.set_defaults(func=cmd_regpath)

    s = sub.add_parser("ccif", help="cone invertibility factor of a gram JSON")
    s.add_argument("gram")
    s.add_argument("--set", required=True, help="comma list, e.g. X1,X3 or 1,3")
    s.add_argument("--q", default="inf", choices=("inf", "infinity", "1"))
    s.add_argument("--beta0", default=None, help="also print zstar at this vector")
    s.set_defaults(func=cmd_ccif)

    s = sub.add_parser("identifiability", help="verdict for a spec JSON")
    s.add_argument("spec_json")
    s.set_defaults(func=cmd_identifiability)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
