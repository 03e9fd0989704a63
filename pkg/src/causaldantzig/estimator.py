"""Unregularized estimators on Gram-shift statistics.

Two environments admit the closed form beta = G^{-1} Z; any number of
environments can instead be fit by minimizing the worst-case sup-norm over
the per-environment pairs, which coincides with the closed form when there
are two environments and G is invertible. Asymptotic covariance, confidence
intervals and two-sided p-values follow the plug-in normal limit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import IllConditionedGramError, NumericalError, ValidationError
from .gram import GramShift, gram_from_envs
from .lp import solve_minmax_linf
from .normal import ndtr_sf, ndtri
from .sem import EnvDataset

COND_LIMIT = 1e12


@dataclass(frozen=True, eq=False)
class DantzigFit:
    """Coefficient estimate with optional asymptotic inference.

    ``cov`` is the plug-in covariance V1/n1 + V2/n2 of the estimate (not of a
    single environment); ``stderr`` its diagonal square root. ``pvalues`` and
    ``ci`` are filled by :func:`with_inference`.
    """

    beta: np.ndarray
    method: str  # "closed_form" | "minmax" | "regularized"
    lam: float | None = None
    cond_g: float | None = None
    tstar: float | None = None
    cov: np.ndarray | None = None
    stderr: np.ndarray | None = None
    pvalues: np.ndarray | None = None
    ci: np.ndarray | None = None
    alpha: float | None = None
    warning: str | None = None

    @property
    def p(self) -> int:
        return self.beta.size


def fit_closed_form(gram: GramShift) -> DantzigFit:
    """beta = G^{-1} Z for exactly two environments.

    Raises :class:`IllConditionedGramError` when G is singular or its
    condition number exceeds 1e12: the target is then not identifiable from
    these environments, and the caller should consult the identifiability
    diagnostics or switch to the regularized estimator.
    """
    z, g = gram.pair()
    cond = float(np.linalg.cond(g))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise IllConditionedGramError(
            f"Gram-shift matrix has condition number {cond:.3e} (limit 1e12); "
            "the causal target is not identifiable from these environments - "
            "check identifiability or use the regularized estimator",
            cond=cond,
        )
    beta = np.linalg.solve(g, z)
    return DantzigFit(beta=beta, method="closed_form", cond_g=cond)


def fit_minmax(gram: GramShift) -> DantzigFit:
    """Minimize the worst-case sup-norm over all environments' pairs."""
    pairs = gram.family()
    beta, tstar = solve_minmax_linf([z for z, _ in pairs], [g for _, g in pairs])
    cond = None
    if gram.n_env == 2:
        cond = float(np.linalg.cond(gram.gs[0]))
    return DantzigFit(beta=beta, method="minmax", tstar=tstar, cond_g=cond)


def estimate_covariance(
    fit: DantzigFit, env1: EnvDataset, env2: EnvDataset, gram: GramShift
) -> DantzigFit:
    """Fill the plug-in covariance from the per-sample influence vectors.

    For each environment the empirical covariance of

        G^{-1} x_i (y_i - x_i G^{-1} Z),   i = 1..n_e,

    consistently estimates that environment's asymptotic matrix; the
    estimate's covariance is their sample-size-weighted sum. The datasets
    must be the (centered) ones the Gram shift was computed from.
    """
    z, g = gram.pair()
    if (env1.env_label, env2.env_label) != gram.labels or (
        env1.n,
        env2.n,
    ) != gram.ns:
        raise ValidationError("datasets do not match the gram shift")
    if env1.n < 2 or env2.n < 2:
        raise ValidationError("covariance needs at least two samples per environment")
    cond = float(np.linalg.cond(g))
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise IllConditionedGramError("singular Gram-shift matrix", cond=cond)

    beta_lin = np.linalg.solve(g, z)

    def per_env(env: EnvDataset) -> np.ndarray:
        resid = env.Y - env.X @ beta_lin
        # one factorization of G serves all rows
        influence = np.linalg.solve(g, (env.X * resid[:, None]).T).T
        centered = influence - influence.mean(axis=0)
        return centered.T @ centered / (env.n - 1)

    v1 = per_env(env1)
    v2 = per_env(env2)
    cov = v1 / env1.n + v2 / env2.n
    stderr = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return replace(fit, cov=cov, stderr=stderr, cond_g=cond)


def confidence_intervals(
    fit: DantzigFit, alpha: float
) -> tuple[np.ndarray, np.ndarray]:
    """Two-sided intervals beta_k +- q * stderr_k and normal p-values.

    q is the standard normal 1 - alpha/2 quantile; the p-value is
    2 * (1 - Phi(|beta_k| / stderr_k)), computed through the survival
    function so extreme significance does not round to zero.
    """
    if fit.cov is None or fit.stderr is None:
        raise ValidationError("covariance not estimated; run estimate_covariance")
    if not 0.0 < alpha < 1.0:
        raise ValidationError("alpha must be in (0, 1)")
    var = np.diag(fit.cov)
    if np.any(var <= 0.0):
        raise NumericalError("nonpositive variance estimate")
    q = float(ndtri(1.0 - alpha / 2.0))
    half = q * fit.stderr
    ci = np.column_stack([fit.beta - half, fit.beta + half])
    pvalues = 2.0 * ndtr_sf(np.abs(fit.beta) / fit.stderr)
    return ci, pvalues


def with_inference(fit: DantzigFit, alpha: float = 0.05) -> DantzigFit:
    """Return a copy of the fit with intervals and p-values attached."""
    ci, pvalues = confidence_intervals(fit, alpha)
    return replace(fit, ci=ci, pvalues=pvalues, alpha=alpha)


def fit_envs(
    envs: list[EnvDataset],
    *,
    center: bool = True,
    scale: bool = False,
    alpha: float = 0.05,
    method: str = "auto",
) -> DantzigFit:
    """Center, build the Gram shift, fit, and (for two environments) infer.

    ``method`` "auto" picks the closed form for two environments and the
    min-max fit otherwise. Scaling defaults off here: for the two-environment
    closed form it provably cancels in the linear solve.
    """
    gram, used = gram_from_envs(envs, center=center, scale=scale)
    if method == "auto":
        method = "closed_form" if gram.n_env == 2 else "minmax"
    if method == "closed_form":
        fit = fit_closed_form(gram)
        fit = estimate_covariance(fit, used[0], used[1], gram)
        return with_inference(fit, alpha)
    if method == "minmax":
        return fit_minmax(gram)
    raise ValidationError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# presentation


_STAR_LEVELS = ((0.001, "***"), (0.01, "**"), (0.05, "*"), (0.1, "."))


def _stars(p: float) -> str:
    for cut, mark in _STAR_LEVELS:
        if p < cut:
            return mark
    return ""


def _fmt_p(p: float) -> str:
    if p < 2e-16:
        return "<2e-16"
    return f"{p:.3g}"


def fit_table(fit: DantzigFit, names: list[str] | None = None) -> str:
    """R-style text summary: Estimate / StdErr / p.value with stars."""
    p = fit.p
    names = names or [f"X{k + 1}" for k in range(p)]
    title = {
        "closed_form": "Unregularized causal Dantzig",
        "minmax": "Unregularized causal Dantzig (min-max over environments)",
        "regularized": "Regularized causal Dantzig",
    }.get(fit.method, fit.method)
    lines = [title, ""]
    if fit.method == "regularized" and fit.lam is not None:
        lines[0] += f" (lambda={fit.lam:.3g})"
    have_inference = fit.stderr is not None and fit.pvalues is not None
    name_w = max(len(n) for n in names)
    if have_inference:
        lines.append(f"{'':<{name_w}} Estimate StdErr p.value")
        for k in range(p):
            est = f"{fit.beta[k]:.3f}"
            se = f"{fit.stderr[k]:.3f}"
            pv = _fmt_p(float(fit.pvalues[k]))
            star = _stars(float(fit.pvalues[k]))
            lines.append(
                f"{names[k]:<{name_w}} {est:>8} {se:>6} {pv:>7} {star}".rstrip()
            )
        lines.append("---")
        lines.append(
            "Signif. codes:  0 '***' 0.001 '**' 0.01 '*' 0.05 '.' 0.1 ' ' 1"
        )
    else:
        lines.append(f"{'':<{name_w}} Estimate")
        for k in range(p):
            lines.append(f"{names[k]:<{name_w}} {fit.beta[k]:>8.3f}")
    if fit.warning:
        lines.append(f"Warning: {fit.warning}")
    return "\n".join(lines)


def fit_to_dict(fit: DantzigFit) -> dict:
    out = {
        "beta": [float(v) for v in fit.beta],
        "stderr": None if fit.stderr is None else [float(v) for v in fit.stderr],
        "pvalue": None if fit.pvalues is None else [float(v) for v in fit.pvalues],
        "ci": None if fit.ci is None else [[float(a), float(b)] for a, b in fit.ci],
        "method": fit.method,
        "cond_G": None if fit.cond_g is None else float(fit.cond_g),
    }
    if fit.lam is not None:
        out["lambda"] = float(fit.lam)
    if fit.tstar is not None:
        out["tstar"] = float(fit.tstar)
    if fit.alpha is not None:
        out["alpha"] = float(fit.alpha)
    if fit.warning:
        out["warning"] = fit.warning
    return out
