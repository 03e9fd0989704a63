"""L1-regularized estimator via an exact linear-program reduction.

For a penalty level lam the estimate is the minimum-l1-norm vector beta with
max_e ||Z_e - G_e beta||_inf <= lam. Splitting beta into nonnegative parts
gamma = (beta+, beta-) turns this into the LP

    minimize 1'gamma  subject to  [[-G, G], [G, -G]] gamma <= (lam - Z; lam + Z),
    gamma >= 0,

stacked over environments when there are more than two. Vertex solutions are
exactly sparse up to solver tolerance; the active set uses a 1e-7 cutoff.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LpSolverError, NumericalError, ValidationError
from .gram import (
    GramShift,
    apply_scaling,
    center_datasets,
    compute_multi_gram,
    env_second_moments,
)
from .lp import LpProblem, solve_lp
from .rng import Stream, derive_key
from .sem import EnvDataset

ACTIVE_SET_THRESHOLD = 1e-7


@dataclass(frozen=True, eq=False)
class RegPath:
    """Solutions along a strictly decreasing penalty grid.

    ``betas`` has one row per grid point (NaN where the constraint set was
    empty); ``cv_scores`` and ``chosen_lambda`` are filled by
    :func:`cross_validate`.
    """

    lambdas: np.ndarray
    betas: np.ndarray
    statuses: tuple[str, ...]
    cv_scores: np.ndarray | None = None
    chosen_lambda: float | None = None
    chosen_index: int | None = None

    def __post_init__(self):
        lam = np.asarray(self.lambdas, dtype=np.float64)
        if lam.ndim != 1 or lam.size == 0:
            raise ValidationError("lambda grid must be a nonempty vector")
        if lam.size > 1 and not np.all(np.diff(lam) < 0.0):
            raise ValidationError("lambda grid must be strictly decreasing")
        object.__setattr__(self, "lambdas", lam)

    @property
    def beta_cv(self) -> np.ndarray:
        if self.chosen_index is None:
            raise ValidationError("no cross-validated choice on this path")
        return self.betas[self.chosen_index]


def active_set(beta: np.ndarray, threshold: float = ACTIVE_SET_THRESHOLD) -> list[int]:
    """Indices with |beta_k| above the sparsity cutoff."""
    return [int(k) for k in np.flatnonzero(np.abs(beta) > threshold)]


def fit_regularized(
    gram: GramShift,
    lam: float,
    feas_tol: float = 1e-9,
    opt_tol: float = 1e-9,
) -> tuple[np.ndarray | None, str]:
    """Minimum-l1 feasible point at one penalty level.

    Returns (beta, "optimal") or (None, "infeasible"); an empty constraint
    set is a legitimate outcome for small lam when the per-environment
    statistics are inconsistent.
    """
    if lam < 0.0:
        raise ValidationError("lambda must be >= 0")
    p = gram.p
    pairs = [gram.pair()] if gram.n_env == 2 else gram.family()
    blocks_a = []
    blocks_b = []
    for z, g in pairs:
        blocks_a.append(np.hstack([-g, g]))
        blocks_b.append(lam - z)
        blocks_a.append(np.hstack([g, -g]))
        blocks_b.append(lam + z)
    problem = LpProblem(
        c=np.ones(2 * p),
        A_ub=np.vstack(blocks_a),
        b_ub=np.concatenate(blocks_b),
        nonneg=True,
    )
    res = solve_lp(problem, feas_tol=feas_tol, opt_tol=opt_tol)
    if res.status == "infeasible":
        return None, "infeasible"
    if res.status != "optimal":
        raise LpSolverError(f"regularized solve ended with status {res.status}")
    beta = res.x[:p] - res.x[p : 2 * p]
    return beta, "optimal"


def lambda_grid(
    gram: GramShift, n_points: int = 50, ratio: float = 1e-3
) -> np.ndarray:
    """Log-spaced grid from lam_max = max_e ||Z_e||_inf down to ratio * lam_max."""
    if n_points < 2:
        raise ValidationError("n_points must be >= 2")
    if not 0.0 < ratio < 1.0:
        raise ValidationError("ratio must be in (0, 1)")
    lam_max = max(float(np.max(np.abs(z))) for z, _ in gram.family())
    if lam_max == 0.0:
        raise ValidationError("all Z statistics are zero; no sensible grid")
    grid = np.geomspace(lam_max, ratio * lam_max, n_points)
    grid[0] = lam_max
    grid[-1] = ratio * lam_max
    return grid


def compute_path(gram: GramShift, lambdas) -> RegPath:
    """One fit per grid point, infeasible levels recorded rather than raised."""
    lambdas = np.asarray(lambdas, dtype=np.float64).reshape(-1)
    betas = np.full((lambdas.size, gram.p), np.nan)
    statuses = []
    for i, lam in enumerate(lambdas):
        beta, status = fit_regularized(gram, float(lam))
        statuses.append(status)
        if beta is not None:
            betas[i] = beta
    return RegPath(lambdas=lambdas, betas=betas, statuses=tuple(statuses))


def _fold_assignment(n: int, k: int, stream: Stream) -> np.ndarray:
    """Deterministic shuffle then round-robin fold ids 0..k-1."""
    perm = stream.permutation(n)
    folds = np.empty(n, dtype=np.int64)
    for pos, idx in enumerate(perm):
        folds[idx] = pos % k
    return folds


def _subset(env: EnvDataset, mask: np.ndarray) -> EnvDataset:
    return EnvDataset(env.env_label, env.X[mask], env.Y[mask])


def _sup_score(gram: GramShift, beta: np.ndarray) -> float:
    return max(
        float(np.max(np.abs(z - g @ beta))) for z, g in gram.family()
    )


def cross_validate(
    envs: list[EnvDataset],
    lambdas=None,
    k: int = 10,
    seed: int = 0,
    *,
    center: bool = True,
    scale: bool = True,
    n_points: int = 50,
    ratio: float = 1e-3,
) -> RegPath:
    """Pick the penalty by k-fold cross-validation, stratified by environment.

    Rows are centered once with the global mean, then each environment's
    indices are shuffled deterministically from the seed and dealt
    round-robin into k folds. For fold i the path is fit on the complement
    and scored by the sup-norm residual of the fold's own (unscaled) Gram
    statistics; scores average over folds and the largest penalty among ties
    (within 1e-10) wins. The reported coefficients are the full-data path;
    the cross-validated estimate is the full-data fit at the chosen penalty.
    """
    if k < 2:
        raise ValidationError("k must be >= 2")
    for env in envs:
        if env.n < k:
            raise ValidationError(
                f"environment {env.env_label!r} has {env.n} samples, fewer than k={k}"
            )
    if center:
        envs, _ = center_datasets(envs)
    full_gram = compute_multi_gram(envs)
    if scale:
        full_gram = apply_scaling(full_gram, env_second_moments(envs))
    if lambdas is None:
        lambdas = lambda_grid(full_gram, n_points=n_points, ratio=ratio)
    lambdas = np.asarray(lambdas, dtype=np.float64).reshape(-1)

    folds_per_env = [
        _fold_assignment(env.n, k, Stream(derive_key(seed, "cv-folds", env.env_label)))
        for env in envs
    ]

    scores = np.zeros((k, lambdas.size))
    for i in range(k):
        train_envs = []
        test_envs = []
        for env, folds in zip(envs, folds_per_env):
            mask = folds == i
            test_envs.append(_subset(env, mask))
            train_envs.append(_subset(env, ~mask))
        train_gram = compute_multi_gram(train_envs)
        if scale:
            train_gram = apply_scaling(train_gram, env_second_moments(train_envs))
        test_gram = compute_multi_gram(test_envs)
        for j, lam in enumerate(lambdas):
            beta, status = fit_regularized(train_gram, float(lam))
            scores[i, j] = (
                _sup_score(test_gram, beta) if status == "optimal" else np.inf
            )

    cv_scores = scores.mean(axis=0)
    path = compute_path(full_gram, lambdas)

    finite = np.isfinite(cv_scores)
    usable = finite & np.array([s == "optimal" for s in path.statuses])
    if not usable.any():
        raise NumericalError("cross-validation found no usable penalty level")
    best = float(np.min(cv_scores[usable]))
    chosen = None
    for j in range(lambdas.size):  # grid is decreasing: first hit = largest lam
        if usable[j] and cv_scores[j] <= best + 1e-10:
            chosen = j
            break
    return RegPath(
        lambdas=lambdas,
        betas=path.betas,
        statuses=path.statuses,
        cv_scores=cv_scores,
        chosen_lambda=float(lambdas[chosen]),
        chosen_index=int(chosen),
    )
