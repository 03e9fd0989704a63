"""Comparator estimators and preprocessing.

The Wald ratio for a single predictor under a binary grouping, pooled least
squares (biased under confounding; kept as the reference the main estimators
are compared against), and Lasso preselection for a two-stage pipeline that
screens columns before refitting the causal estimator on the survivors.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import (
    DegenerateInstrumentError,
    DegenerateMomentError,
    NonconvergenceError,
    NumericalError,
    ValidationError,
)

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None
from .estimator import DantzigFit, fit_envs
from .gram import gram_from_envs
from .regularized import fit_regularized
from .rng import Stream, derive_key
from .sem import EnvDataset

POST_SELECTION_WARNING = "post-selection - p-values not valid"


@dataclass(frozen=True, eq=False)
class ActiveSet:
    """Selected column indices (zero-based, sorted) with their coefficients."""

    indices: tuple[int, ...]
    coefficients: np.ndarray
    lam: float

    def __post_init__(self):
        if list(self.indices) != sorted(set(self.indices)):
            raise ValidationError("indices must be sorted and unique")
        if len(self.indices) != np.asarray(self.coefficients).size:
            raise ValidationError("one coefficient per index required")


def wald_iv(env1: EnvDataset, env2: EnvDataset) -> float:
    """Ratio of mean differences (single predictor, binary grouping)."""
    if env1.p != 1 or env2.p != 1:
        raise ValidationError("the Wald ratio is defined for a single predictor")
    if env1.n < 1 or env2.n < 1:
        raise ValidationError("both environments need samples")
    denom = float(env1.X.mean() - env2.X.mean())
    if abs(denom) <= 1e-12:
        raise DegenerateInstrumentError(
            "mean shift between environments vanishes; Wald ratio undefined"
        )
    return float(env1.Y.mean() - env2.Y.mean()) / denom


def ols_pooled(envs: list[EnvDataset]) -> np.ndarray:
    """(X'X)^{-1} X'Y on the row-concatenated environments."""
    if not envs:
        raise ValidationError("no environments")
    x = np.vstack([env.X for env in envs])
    y = np.concatenate([env.Y for env in envs])
    if x.shape[0] == 0:
        raise ValidationError("no samples")
    xtx = x.T @ x
    cond = float(np.linalg.cond(xtx))
    if not np.isfinite(cond) or cond > 1e12:
        raise NumericalError(f"rank-deficient pooled design (cond {cond:.3e})")
    return np.linalg.solve(xtx, x.T @ y)


def _lasso_sweeps_impl(x, y, col_ss, beta, lam, tol, max_iter):
    # x is column-major; returns sweep count, or -1 on non-convergence
    n, p = x.shape
    r = np.empty(n)
    for t in range(n):
        acc = y[t]
        for j in range(p):
            acc -= x[t, j] * beta[j]
        r[t] = acc
    for sweep in range(max_iter):
        delta_max = 0.0
        for j in range(p):
            bj = beta[j]
            dot = 0.0
            for t in range(n):
                dot += x[t, j] * r[t]
            rho = bj * col_ss[j] + dot / n
            if rho > lam:
                new = (rho - lam) / col_ss[j]
            elif rho < -lam:
                new = (rho + lam) / col_ss[j]
            else:
                new = 0.0
            if new != bj:
                diff = new - bj
                for t in range(n):
                    r[t] -= x[t, j] * diff
                beta[j] = new
                if abs(diff) > delta_max:
                    delta_max = abs(diff)
        if delta_max < tol:
            return sweep + 1
    return -1


if _numba is not None:
    _lasso_sweeps = _numba.njit(cache=True, nogil=True)(_lasso_sweeps_impl)
else:  # pragma: no cover
    _lasso_sweeps = _lasso_sweeps_impl


def lasso_cd(
    X: np.ndarray,
    y: np.ndarray,
    lam: float,
    *,
    beta0: np.ndarray | None = None,
    tol: float = 1e-7,
    max_iter: int = 100000,
) -> np.ndarray:
    """Cyclic coordinate descent for (1/2n)||y - X b||^2 + lam ||b||_1.

    Converges when the largest coefficient change in a sweep drops below
    ``tol``; raises after ``max_iter`` sweeps.
    """
    X = np.asfortranarray(X, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64).reshape(-1)
    n, p = X.shape
    col_ss = (X**2).sum(axis=0) / n
    if np.any(col_ss == 0.0):
        raise DegenerateMomentError("constant (all-zero) column in Lasso design")
    beta = np.zeros(p) if beta0 is None else np.asarray(beta0, dtype=np.float64).copy()
    sweeps = _lasso_sweeps(X, y, col_ss, beta, float(lam), float(tol), int(max_iter))
    if sweeps < 0:
        raise NonconvergenceError(
            f"coordinate descent did not converge in {max_iter} sweeps"
        )
    return beta


def _lasso_cv_choose(
    X: np.ndarray, y: np.ndarray, lambdas: np.ndarray, k: int, seed: int
) -> tuple[float, np.ndarray]:
    """k-fold CV on squared prediction error; ties pick the larger penalty."""
    n = X.shape[0]
    if n < k:
        raise ValidationError(f"need at least k={k} samples for CV")
    perm = Stream(derive_key(seed, "lasso-cv")).permutation(n)
    folds = np.empty(n, dtype=np.int64)
    for pos, idx in enumerate(perm):
        folds[idx] = pos % k
    errors = np.zeros((k, lambdas.size))
    for i in range(k):
        mask = folds == i
        x_tr, y_tr = X[~mask], y[~mask]
        x_te, y_te = X[mask], y[mask]
        beta = None
        for j, lam in enumerate(lambdas):  # warm start down the path
            beta = lasso_cd(x_tr, y_tr, float(lam), beta0=beta)
            resid = y_te - x_te @ beta
            errors[i, j] = float(resid @ resid) / max(1, y_te.size)
    mean_err = errors.mean(axis=0)
    best = float(mean_err.min())
    for j in range(lambdas.size):
        if mean_err[j] <= best + 1e-10:
            return float(lambdas[j]), mean_err
    raise AssertionError("unreachable")


def lasso_preselect(
    envs: list[EnvDataset],
    lambdas=None,
    k_folds: int = 10,
    seed: int = 0,
    *,
    source_labels=None,
    n_lambdas: int = 100,
    ratio: float = 1e-3,
    threshold: float = 1e-7,
) -> ActiveSet:
    """Lasso screening on standardized pooled predictors.

    ``source_labels`` restricts the pool (pass the observational labels when
    an observational environment is available, else leave None to pool
    everything). Coefficients are reported on the original column scale; the
    active set keeps entries above ``threshold``.
    """
    pool = [
        env
        for env in envs
        if source_labels is None or env.env_label in source_labels
    ]
    if not pool or all(env.n == 0 for env in pool):
        raise ValidationError("no source data for preselection")
    x = np.vstack([env.X for env in pool])
    y = np.concatenate([env.Y for env in pool])
    xm = x.mean(axis=0)
    xs = x.std(axis=0)
    if np.any(xs == 0.0):
        raise DegenerateMomentError("constant column; cannot standardize")
    xz = (x - xm) / xs
    yc = y - y.mean()
    n = x.shape[0]
    if lambdas is None:
        lam_max = float(np.max(np.abs(xz.T @ yc))) / n
        if lam_max == 0.0:
            raise DegenerateMomentError("response is orthogonal to every column")
        lambdas = np.geomspace(lam_max, ratio * lam_max, n_lambdas)
    lambdas = np.asarray(lambdas, dtype=np.float64).reshape(-1)
    lam, _ = _lasso_cv_choose(xz, yc, lambdas, k_folds, seed)
    beta_std = lasso_cd(xz, yc, lam)
    idx = [int(j) for j in np.flatnonzero(np.abs(beta_std) > threshold)]
    coefficients = beta_std[idx] / xs[idx]
    return ActiveSet(indices=tuple(idx), coefficients=coefficients, lam=lam)


def two_stage_fit(
    envs: list[EnvDataset],
    active: ActiveSet | None = None,
    *,
    regularized_lam: float | None = None,
    alpha: float = 0.05,
    center: bool = True,
    **lasso_kwargs,
) -> tuple[DantzigFit, ActiveSet]:
    """Screen columns, refit the causal estimator on the survivors.

    Coefficients are embedded back at the original indices with zeros
    elsewhere; inference carries a post-selection warning because the
    screening step invalidates the nominal p-values.
    """
    if active is None:
        active = lasso_preselect(envs, **lasso_kwargs)
    if not active.indices:
        raise ValidationError("empty active set")
    p = envs[0].p
    idx = list(active.indices)
    restricted = [
        EnvDataset(env.env_label, env.X[:, idx], env.Y) for env in envs
    ]
    if regularized_lam is None:
        sub = fit_envs(restricted, center=center, alpha=alpha)
    else:
        gram, _ = gram_from_envs(restricted, center=center, scale=True)
        beta_r, status = fit_regularized(gram, regularized_lam)
        if status != "optimal":
            raise NumericalError(f"regularized refit status {status}")
        sub = DantzigFit(beta=beta_r, method="regularized", lam=regularized_lam)

    def embed(vec, fill):
        if vec is None:
            return None
        out = np.full(p, fill)
        out[idx] = vec
        return out

    beta = embed(sub.beta, 0.0)
    stderr = embed(sub.stderr, np.nan)
    pvalues = embed(sub.pvalues, np.nan)
    ci = None
    if sub.ci is not None:
        ci = np.full((p, 2), np.nan)
        ci[idx] = sub.ci
    fit = replace(
        sub,
        beta=beta,
        stderr=stderr,
        pvalues=pvalues,
        ci=ci,
        warning=POST_SELECTION_WARNING,
    )
    return fit, active
