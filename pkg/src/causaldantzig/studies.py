"""Monte-Carlo study drivers behind the CLI benchmark commands.

Every replicate draws its data from a stream keyed by (master seed,
environment, replicate index), so results are independent of execution order
and of the worker count; aggregation always runs in replicate order.
"""

from __future__ import annotations

import functools
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baselines import wald_iv
from .errors import CausalDantzigError, NumericalError, ValidationError
from .estimator import fit_envs
from .regularized import RegPath, active_set, cross_validate
from .sem import SemSpec, builtin_spec, simulate_all, split_total, true_beta

_FORK_CTX = None


def _fork_context():
    global _FORK_CTX
    if _FORK_CTX is None:
        import multiprocessing

        _FORK_CTX = multiprocessing.get_context("fork")
    return _FORK_CTX


def run_replicates(fn, n_reps: int, threads: int = 1) -> list:
    """Evaluate fn(rep) for rep = 0..n_reps-1, results in replicate order."""
    if threads <= 1 or n_reps <= 1:
        return [fn(rep) for rep in range(n_reps)]
    workers = min(threads, n_reps, os.cpu_count() or 1)
    with ProcessPoolExecutor(max_workers=workers, mp_context=_fork_context()) as pool:
        return list(pool.map(fn, range(n_reps), chunksize=max(1, n_reps // (4 * workers))))


@dataclass
class StudyConfig:
    """Shared study configuration; a seed is mandatory (no wall-clock seeding)."""

    seed: int
    spec: SemSpec | None = None
    spec_name: str | None = None
    n_values: list[int] = field(default_factory=list)
    n_is_total: bool = False
    reps: int = 500
    alpha: float = 0.05
    target_index: int = 0
    threads: int = 1
    p: int | None = None
    sigma: float | None = None
    loading_seed: int | None = None
    n_lambdas: int = 50
    lambda_ratio: float = 1e-3
    cv_folds: int = 10

    def __post_init__(self):
        if self.seed is None:
            raise ValidationError("a master seed is required")
        if self.reps < 1:
            raise ValidationError("replicate count must be >= 1")

    def resolve_spec(self) -> SemSpec:
        if self.spec is not None:
            return self.spec
        if self.spec_name is None:
            raise ValidationError("no model given")
        kwargs = {}
        if self.spec_name == "sem_C":
            kwargs.update(p=self.p, sigma=self.sigma)
        if self.loading_seed is not None:
            kwargs["loading_seed"] = self.loading_seed
        return builtin_spec(self.spec_name, **kwargs)


# ---------------------------------------------------------------------------
# coverage


def coverage_replicate(
    spec: SemSpec, ns: list[int], seed: int, rep: int, alpha: float, target: int
) -> tuple[float, float]:
    """(covered 0/1, interval length) for one replicate; NaNs on failure."""
    beta0 = true_beta(spec)
    envs = simulate_all(spec, ns, seed, rep)
    try:
        fit = fit_envs(envs, alpha=alpha)
    except NumericalError:
        return math.nan, math.nan
    lo, hi = fit.ci[target]
    covered = 1.0 if lo <= beta0[target] <= hi else 0.0
    return covered, float(hi - lo)


def _coverage_worker(spec, ns, seed, alpha, target, rep):
    return coverage_replicate(spec, ns, seed, rep, alpha, target)


def run_coverage_study(cfg: StudyConfig) -> list[dict]:
    """Empirical CI coverage and average length per total sample size."""
    spec = cfg.resolve_spec()
    if not cfg.n_values:
        raise ValidationError("coverage study needs sample sizes")
    if not 0 <= cfg.target_index < spec.p:
        raise ValidationError("target coordinate out of range")
    from .diagnostics import check_identifiability

    report = check_identifiability(spec)
    if report.verdict is False:
        raise ValidationError(
            f"model is not identifiable ({report.reason}); coverage is undefined"
        )
    rows = []
    n_env = len(spec.environments)
    for n in cfg.n_values:
        ns = split_total(n, n_env) if cfg.n_is_total else [n] * n_env
        one = functools.partial(
            _coverage_worker, spec, ns, cfg.seed, cfg.alpha, cfg.target_index
        )
        results = np.array(run_replicates(one, cfg.reps, cfg.threads))
        covered = results[:, 0]
        lengths = results[:, 1]
        ok = ~np.isnan(covered)
        n_ok = int(ok.sum())
        cov = float(np.mean(covered[ok])) if n_ok else math.nan
        rows.append(
            {
                "n": n,
                "coverage": cov,
                "coverage_se": math.sqrt(cov * (1.0 - cov) / n_ok) if n_ok else math.nan,
                "avg_length": float(np.mean(lengths[ok])) if n_ok else math.nan,
                "length_se": float(np.std(lengths[ok], ddof=1) / math.sqrt(n_ok))
                if n_ok > 1
                else math.nan,
                "length_sd": float(np.std(lengths[ok], ddof=1)) if n_ok > 1 else math.nan,
                "reps": cfg.reps,
                "failed": int(cfg.reps - n_ok),
            }
        )
    return rows


# ---------------------------------------------------------------------------
# comparison with the Wald / instrumental-variable ratio


def iv_replicate(spec: SemSpec, n: int, seed: int, rep: int) -> tuple[float, float]:
    """(dantzig error^2, wald error^2); wald NaN when degenerate.

    Both estimators run on raw (uncentered) data: with two environments,
    global centering makes the environment means symmetric, so a pure
    mean-shift instrument would cancel exactly out of the Gram difference.
    The population comparison is defined through raw second moments.
    """
    beta0 = float(true_beta(spec)[0])
    envs = simulate_all(spec, n, seed, rep)
    fit = fit_envs(envs, center=False)
    err_d = (float(fit.beta[0]) - beta0) ** 2
    try:
        err_w = (wald_iv(envs[0], envs[1]) - beta0) ** 2
    except CausalDantzigError:
        err_w = math.nan
    return err_d, err_w


def _iv_worker(spec, n, seed, rep):
    return iv_replicate(spec, n, seed, rep)


def _trimmed_mean(values: np.ndarray, trim: float = 0.01) -> float:
    v = np.sort(values)
    drop = int(math.ceil(trim * v.size))
    return float(np.mean(v[: v.size - drop])) if v.size > drop else math.nan


def run_iv_compare(cfg: StudyConfig, models=("iv_strong", "iv_weak")) -> list[dict]:
    """Mean squared error of both estimators per model and per-env sample size."""
    if not cfg.n_values:
        raise ValidationError("IV comparison needs sample sizes")
    rows = []
    for model in models:
        spec = builtin_spec(model)
        for n in cfg.n_values:
            one = functools.partial(_iv_worker, spec, n, cfg.seed)
            results = np.array(run_replicates(one, cfg.reps, cfg.threads))
            err_d = results[:, 0]
            err_w = results[:, 1]
            degenerate = int(np.isnan(err_w).sum())
            err_w_ok = err_w[~np.isnan(err_w)]
            rows.append(
                {
                    "model": model,
                    "n": n,
                    "mse_dantzig": float(np.mean(err_d)),
                    "mse_wald": float(np.mean(err_w_ok)) if err_w_ok.size else math.nan,
                    "mse_dantzig_trimmed": _trimmed_mean(err_d),
                    "mse_wald_trimmed": _trimmed_mean(err_w_ok)
                    if err_w_ok.size
                    else math.nan,
                    "wald_degenerate": degenerate,
                    "reps": cfg.reps,
                }
            )
    return rows


# ---------------------------------------------------------------------------
# regularization paths with cross-validation


@dataclass(frozen=True, eq=False)
class RegPathResult:
    path: RegPath
    beta_cv: np.ndarray
    err_inf: float
    active: list[int]
    parent_in_active: bool


def regpath_replicate(
    spec: SemSpec,
    n_per_env: int,
    seed: int,
    rep: int,
    *,
    n_lambdas: int = 50,
    ratio: float = 1e-3,
    k: int = 10,
) -> RegPathResult:
    """Simulate, cross-validate the penalty, report the chosen estimate."""
    beta0 = true_beta(spec)
    envs = simulate_all(spec, n_per_env, seed, rep)
    path = cross_validate(
        envs,
        k=k,
        seed=seed ^ rep,
        n_points=n_lambdas,
        ratio=ratio,
    )
    beta_cv = path.beta_cv
    act = active_set(beta_cv)
    parent = int(np.argmax(np.abs(beta0)))
    return RegPathResult(
        path=path,
        beta_cv=beta_cv,
        err_inf=float(np.max(np.abs(beta_cv - beta0))),
        active=act,
        parent_in_active=parent in act,
    )


def _regpath_worker(spec, n, seed, n_lambdas, ratio, k, rep):
    r = regpath_replicate(
        spec, n, seed, rep, n_lambdas=n_lambdas, ratio=ratio, k=k
    )
    return (
        r.path.chosen_lambda,
        r.err_inf,
        1.0 if r.parent_in_active else 0.0,
        float(len(r.active)),
    )


def run_regpath_study(cfg: StudyConfig) -> list[dict]:
    """Per-replicate summary of the cross-validated fit on the chain model."""
    spec = cfg.resolve_spec()
    if not cfg.n_values:
        raise ValidationError("regularization-path study needs sample sizes")
    rows = []
    for n in cfg.n_values:
        one = functools.partial(
            _regpath_worker,
            spec,
            n,
            cfg.seed,
            cfg.n_lambdas,
            cfg.lambda_ratio,
            cfg.cv_folds,
        )
        results = np.array(run_replicates(one, cfg.reps, cfg.threads))
        for rep in range(cfg.reps):
            rows.append(
                {
                    "n": n,
                    "rep": rep,
                    "chosen_lambda": float(results[rep, 0]),
                    "err_inf": float(results[rep, 1]),
                    "parent_in_active": int(results[rep, 2]),
                    "active_size": int(results[rep, 3]),
                }
            )
    return rows
