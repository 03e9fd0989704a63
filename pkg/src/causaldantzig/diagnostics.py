"""Identifiability and theory-facing diagnostics.

Covers the population Gram difference between two environments, the
identifiability verdict (every predictor must be intervened on somewhere,
given an observational environment and full-rank interventions on their
supports), the sup-norm residual z* at a candidate coefficient vector, the
cone invertibility factor of a Gram-difference matrix for q in {1, inf}, its
perturbation bound, and a residual-invariance check across environments.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .gram import GramShift
from .lp import LpProblem, LpSolverError, solve_lp
from .sem import EnvDataset, SemSpec, validate_spec

Q_ONE_MAX_P = 12


def population_gram(spec: SemSpec, env_e: str, env_f: str) -> np.ndarray:
    """Population Gram difference E[X'X]_e - E[X'X]_f restricted to predictors.

    Equals M (D_e - D_f) M' with M the predictor block of (Id - A)^{-1} and
    D_env = cov + mean_shift mean_shift' the intervention second moment; the
    base noise cancels in the difference.
    """
    validate_spec(spec)
    p = spec.p
    e = spec.environment(env_e)
    f = spec.environment(env_f)
    m = np.linalg.inv(np.eye(p + 1) - spec.A)[:p, :p]
    d_e = e.cov + np.outer(e.mean_shift, e.mean_shift)
    d_f = f.cov + np.outer(f.mean_shift, f.mean_shift)
    return m @ (d_e - d_f)[:p, :p] @ m.T


@dataclass(frozen=True)
class IdentifiabilityReport:
    """verdict True/False, or None when the hypotheses could not be checked."""

    verdict: bool | None
    witness: int | None
    reason: str
    observational_label: str | None = None

    def __bool__(self) -> bool:
        return self.verdict is True


def check_identifiability(spec: SemSpec) -> IdentifiabilityReport:
    """Decide population identifiability of the causal coefficients.

    Requires an observational environment (no intervention at all) and each
    intervention's second-moment matrix to be positive definite on its
    support; given those, the verdict is True iff every predictor coordinate
    is intervened on in some environment. The witness is the first
    unintervened coordinate (zero-based).
    """
    validate_spec(spec)
    p = spec.p
    observational = next(
        (env for env in spec.environments if env.is_observational), None
    )
    if observational is None:
        return IdentifiabilityReport(
            verdict=None,
            witness=None,
            reason="conditions-not-checked: no observational environment",
        )
    for env in spec.environments:
        support = env.support(p)
        if not support:
            continue
        gram = (env.cov + np.outer(env.mean_shift, env.mean_shift))[
            np.ix_(support, support)
        ]
        w = np.linalg.eigvalsh(gram)
        if w.min() <= 1e-10 * max(1.0, float(w.max())):
            return IdentifiabilityReport(
                verdict=None,
                witness=None,
                reason=(
                    f"conditions-not-checked: environment {env.label!r} is not "
                    "full rank on its support"
                ),
                observational_label=observational.label,
            )
    intervened = np.zeros(p, dtype=bool)
    for env in spec.environments:
        for k in env.support(p):
            intervened[k] = True
    if intervened.all():
        return IdentifiabilityReport(
            verdict=True,
            witness=None,
            reason="every predictor is intervened on in some environment",
            observational_label=observational.label,
        )
    witness = int(np.flatnonzero(~intervened)[0])
    return IdentifiabilityReport(
        verdict=False,
        witness=witness,
        reason=f"coordinate {witness} is never intervened on",
        observational_label=observational.label,
    )


def zstar(gram: GramShift, beta0: np.ndarray) -> float:
    """Worst sup-norm residual max_e ||Z_e - G_e beta0||_inf."""
    beta0 = np.asarray(beta0, dtype=np.float64).reshape(-1)
    if beta0.size != gram.p:
        raise ValidationError("beta0 has wrong length")
    return max(float(np.max(np.abs(z - g @ beta0))) for z, g in gram.family())


# ---------------------------------------------------------------------------
# cone invertibility factor


@dataclass(frozen=True, eq=False)
class CcifQuery:
    """Cone factor query: index set S, norm q in {1, inf}, matrix G."""

    S: tuple[int, ...]
    q: float
    G: np.ndarray

    def __post_init__(self):
        g = np.asarray(self.G, dtype=np.float64)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValidationError("G must be square")
        s = tuple(sorted(int(k) for k in self.S))
        if not s:
            raise ValidationError("S must be nonempty")
        if len(set(s)) != len(s):
            raise ValidationError("S has duplicate indices")
        if s[0] < 0 or s[-1] >= g.shape[0]:
            raise ValidationError("S index out of range")
        if self.q not in (1, 1.0, np.inf, math.inf):
            raise ValidationError("q must be 1 or inf")
        object.__setattr__(self, "S", s)
        object.__setattr__(self, "q", float(self.q))
        object.__setattr__(self, "G", g)


def _sup_rows(gu: np.ndarray, n_vars: int, t_col: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows encoding -t <= (Gu)_l <= t for a linear map u = U x."""
    p = gu.shape[0]
    a = np.zeros((2 * p, n_vars))
    a[:p, :] = gu
    a[p:, :] = -gu
    a[:p, t_col] = -1.0
    a[p:, t_col] = -1.0
    return a, np.zeros(2 * p)


def _min_t(a_ub, b_ub, a_eq, b_eq, n_vars) -> float:
    c = np.zeros(n_vars)
    c[-1] = 1.0
    res = solve_lp(
        LpProblem(c=c, A_ub=a_ub, b_ub=b_ub, nonneg=True, A_eq=a_eq, b_eq=b_eq)
    )
    if res.status != "optimal":
        raise LpSolverError(f"cone subproblem ended with status {res.status}")
    return float(res.objective)


def _ccif_inf(g: np.ndarray, s: tuple[int, ...]) -> float:
    """Exact infimum for q = inf.

    The objective is scale-free, so the infimum is attained with
    ||u||_inf = 1; enumerate which coordinate sits at +1 (the u -> -u
    symmetry covers -1) and the sign pattern of u on S. On each slice the
    coordinates in S are plain nonnegative magnitudes (no split, so the cone
    constraint is exact) and the complement is sign-split, where any slack in
    the split only tightens the cone.
    """
    p = g.shape[0]
    comp = [j for j in range(p) if j not in s]
    ns, nc = len(s), len(comp)
    n_vars = ns + 2 * nc + 1  # v_S, a_comp, b_comp, t
    t_col = n_vars - 1
    best = np.inf
    for sigma in itertools.product((1.0, -1.0), repeat=ns):
        u_map = np.zeros((p, n_vars))
        for idx, j in enumerate(s):
            u_map[j, idx] = sigma[idx]
        for idx, j in enumerate(comp):
            u_map[j, ns + idx] = 1.0
            u_map[j, ns + nc + idx] = -1.0
        gu = g @ u_map

        sup_a, sup_b = _sup_rows(gu, n_vars, t_col)
        box_a = np.zeros((ns + nc, n_vars))
        for idx in range(ns):
            box_a[idx, idx] = 1.0
        for idx in range(nc):
            box_a[ns + idx, ns + idx] = 1.0
            box_a[ns + idx, ns + nc + idx] = 1.0
        box_b = np.ones(ns + nc)
        cone = np.zeros((1, n_vars))
        cone[0, ns : ns + 2 * nc] = 1.0
        cone[0, :ns] = -1.0

        for i in range(p):
            if i in s:
                if sigma[s.index(i)] < 0.0:
                    continue
                a_eq = np.zeros((1, n_vars))
                a_eq[0, s.index(i)] = 1.0
                b_eq = np.ones(1)
            else:
                idx = comp.index(i)
                a_eq = np.zeros((2, n_vars))
                a_eq[0, ns + idx] = 1.0
                a_eq[1, ns + nc + idx] = 1.0
                b_eq = np.array([1.0, 0.0])
            val = _min_t(
                np.vstack([sup_a, box_a, cone]),
                np.concatenate([sup_b, box_b, [0.0]]),
                a_eq,
                b_eq,
                n_vars,
            )
            if val < best:
                best = val
    return best


def _ccif_one(g: np.ndarray, s: tuple[int, ...]) -> float:
    """Exact infimum for q = 1 by full orthant enumeration.

    On each orthant both the l1 norm and the cone constraint are linear in
    the coordinate magnitudes, so each slice is an exact LP; the u -> -u
    symmetry pins the first coordinate's sign. Cost grows as 2^(p-1), so p
    is capped.
    """
    p = g.shape[0]
    if p > Q_ONE_MAX_P:
        raise ValidationError(
            f"exact q=1 cone factor is limited to p <= {Q_ONE_MAX_P} (got {p})"
        )
    in_s = np.zeros(p)
    in_s[list(s)] = 1.0
    cone_row = 1.0 - 2.0 * in_s  # sum_{S^c} w - sum_S w
    n_vars = p + 1
    t_col = p
    best = np.inf
    for tau_rest in itertools.product((1.0, -1.0), repeat=p - 1):
        tau = np.array((1.0,) + tau_rest)
        gu = g * tau[None, :]
        sup_a, sup_b = _sup_rows(np.hstack([gu, np.zeros((p, 1))])[:, :n_vars], n_vars, t_col)
        cone = np.concatenate([cone_row, [0.0]])[None, :]
        a_eq = np.concatenate([np.ones(p), [0.0]])[None, :]
        val = _min_t(
            np.vstack([sup_a, cone]),
            np.concatenate([sup_b, [0.0]]),
            a_eq,
            np.ones(1),
            n_vars,
        )
        if val < best:
            best = val
    return len(s) * best


def ccif(query: CcifQuery) -> float:
    """Cone invertibility factor: the exact infimum of

        |S|^(1/q) ||G u||_inf / ||u||_q

    over the cone ||u_{S^c}||_1 <= ||u_S||_1 (with |S|^(1/inf) read as 1),
    computed by LP decomposition over compact slices of the cone.
    """
    if query.q == np.inf:
        val = _ccif_inf(query.G, query.S)
    else:
        val = _ccif_one(query.G, query.S)
    return max(val, 0.0)


def ccif_value(G: np.ndarray, S, q) -> float:
    """Convenience wrapper building the query in place."""
    return ccif(CcifQuery(S=tuple(S), q=q, G=G))


def ccif_perturbation_gap(S, G_hat: np.ndarray, G: np.ndarray, q) -> tuple[float, float]:
    """(|ccif(G_hat) - ccif(G)|, 2 |S| max_ij |G_hat - G|_ij).

    The first component never exceeds the second (deterministic perturbation
    bound); callers assert lhs <= rhs + tolerance.
    """
    lhs = abs(ccif_value(G_hat, S, q) - ccif_value(G, S, q))
    rhs = 2.0 * len(tuple(S)) * float(np.max(np.abs(np.asarray(G_hat) - np.asarray(G))))
    return lhs, rhs


# ---------------------------------------------------------------------------
# residual invariance


@dataclass(frozen=True, eq=False)
class ResidualInvarianceReport:
    labels: tuple[str, ...]
    means: np.ndarray
    variances: np.ndarray
    mean_discrepancy: float
    var_discrepancy: float

    @property
    def max_discrepancy(self) -> float:
        return max(self.mean_discrepancy, self.var_discrepancy)


def residual_invariance_test(
    envs: list[EnvDataset], beta: np.ndarray
) -> ResidualInvarianceReport:
    """First two moments of Y - X beta per environment, with the largest
    pairwise difference standardized by its Monte-Carlo standard error.

    At a coefficient vector solving the population problem the residual
    distribution is environment-invariant, so the standardized discrepancies
    behave like |N(0,1)| draws; values far above ~4 flag a violated
    invariance.
    """
    if len(envs) < 2:
        raise ValidationError("need at least two environments")
    beta = np.asarray(beta, dtype=np.float64).reshape(-1)
    means, variances, var_of_sq, ns = [], [], [], []
    for env in envs:
        if env.n < 2:
            raise ValidationError(
                f"environment {env.env_label!r} needs at least two samples"
            )
        r = env.Y - env.X @ beta
        means.append(float(r.mean()))
        variances.append(float(r.var(ddof=1)))
        var_of_sq.append(float((r**2).var(ddof=1)))
        ns.append(env.n)
    means = np.array(means)
    variances = np.array(variances)
    var_of_sq = np.array(var_of_sq)
    ns = np.array(ns, dtype=np.float64)

    mean_disc = 0.0
    var_disc = 0.0
    for e in range(len(envs)):
        for f in range(e + 1, len(envs)):
            se_mean = math.sqrt(variances[e] / ns[e] + variances[f] / ns[f])
            se_var = math.sqrt(var_of_sq[e] / ns[e] + var_of_sq[f] / ns[f])
            if se_mean > 0.0:
                mean_disc = max(mean_disc, abs(means[e] - means[f]) / se_mean)
            elif means[e] != means[f]:
                mean_disc = np.inf
            if se_var > 0.0:
                var_disc = max(var_disc, abs(variances[e] - variances[f]) / se_var)
            elif variances[e] != variances[f]:
                var_disc = np.inf
    return ResidualInvarianceReport(
        labels=tuple(env.env_label for env in envs),
        means=means,
        variances=variances,
        mean_discrepancy=float(mean_disc),
        var_discrepancy=float(var_disc),
    )
