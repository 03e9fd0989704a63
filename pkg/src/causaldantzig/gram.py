"""Gram-shift statistics: per-environment differences of second moments.

For two environments the single stored pair is

    Z = X1'Y1/n1 - X2'Y2/n2,      G = X1'X1/n1 - X2'X2/n2,

and the second environment's statistics are exactly the negations, so only
one pair is kept. For three or more environments each environment's pair
subtracts the average of the others' moments.

Each entry of X'X and X'Y is accumulated by sorting its per-sample products
and running Neumaier compensated summation over the sorted sequence.
Differences of Gram matrices cancel catastrophically when environments are
similar, so the compensation keeps an effective double-width carry; sorting
makes the result a function of the product multiset alone, so permuting rows
within an environment is bit-neutral.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import DegenerateMomentError, ValidationError
from .sem import EnvDataset

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None


def _neumaier_rows_impl(arr, out):
    # arr: (q, n) with each row sorted; out: (q,)
    q, n = arr.shape
    for i in range(q):
        total = 0.0
        comp = 0.0
        for t in range(n):
            x = arr[i, t]
            s = total + x
            if abs(total) >= abs(x):
                comp += (total - s) + x
            else:
                comp += (x - s) + total
            total = s
        out[i] = total + comp


if _numba is not None:
    _neumaier_rows = _numba.njit(cache=True, nogil=True)(_neumaier_rows_impl)
else:  # pragma: no cover
    _neumaier_rows = _neumaier_rows_impl


def _cross_moment(x: np.ndarray, w: np.ndarray) -> np.ndarray:
    """x.T @ w / n with order-canonical compensated accumulation."""
    n = x.shape[0]
    if n == 0:
        raise ValidationError("empty environment")
    p = x.shape[1]
    q = w.shape[1]
    out = np.empty((p, q))
    for i in range(p):
        prod = np.ascontiguousarray((w * x[:, i : i + 1]).T)
        prod.sort(axis=1)
        _neumaier_rows(prod, out[i])
    return out / n


@dataclass(frozen=True, eq=False)
class GramShift:
    """Per-environment Gram-difference statistics plus preprocessing metadata.

    ``zs``/``gs`` hold one (Z, G) pair when there are exactly two
    environments (the other environment's pair is the negation) and one pair
    per environment otherwise. ``scaling`` records applied per-row factors
    (p x n_env); ``center`` records the global mean that was subtracted.
    """

    p: int
    labels: tuple[str, ...]
    ns: tuple[int, ...]
    zs: tuple[np.ndarray, ...]
    gs: tuple[np.ndarray, ...]
    center: np.ndarray | None = None
    scaling: np.ndarray | None = None

    def __post_init__(self):
        if len(self.labels) < 2:
            raise ValidationError("a Gram shift needs at least two environments")
        if len(self.labels) != len(self.ns):
            raise ValidationError("labels and sample sizes disagree")
        expected = 1 if len(self.labels) == 2 else len(self.labels)
        if len(self.zs) != expected or len(self.gs) != expected:
            raise ValidationError("wrong number of stored (Z, G) pairs")
        for z, g in zip(self.zs, self.gs):
            if z.shape != (self.p,) or g.shape != (self.p, self.p):
                raise ValidationError("stored pair has wrong shape")
            if self.scaling is None and not np.allclose(g, g.T, atol=1e-12, rtol=0.0):
                raise ValidationError("G is not symmetric")

    @property
    def n_env(self) -> int:
        return len(self.labels)

    def family(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """All per-environment (Z, G) pairs, negations materialized."""
        if self.n_env == 2:
            return [(self.zs[0], self.gs[0]), (-self.zs[0], -self.gs[0])]
        return list(zip(self.zs, self.gs))

    def pair(self) -> tuple[np.ndarray, np.ndarray]:
        """The two-environment (Z, G) pair."""
        if self.n_env != 2:
            raise ValidationError(
                "pair() is only defined for two environments; use family()"
            )
        return self.zs[0], self.gs[0]


def center_datasets(envs: list[EnvDataset]) -> tuple[list[EnvDataset], np.ndarray]:
    """Subtract the unweighted average of per-environment means from all rows.

    X columns and Y are centered jointly with one global mean; environments
    without samples are left untouched and excluded from the mean.
    """
    if not envs:
        raise ValidationError("no environments")
    nonempty = [env for env in envs if env.n > 0]
    if not nonempty:
        raise ValidationError("all environments are empty")
    p = nonempty[0].p
    means = []
    for env in nonempty:
        if env.p != p:
            raise ValidationError("environments disagree on predictor count")
        means.append(
            np.concatenate([env.X.mean(axis=0), [env.Y.mean()]])
        )
    mean = np.mean(means, axis=0)
    centered = [
        EnvDataset(env.env_label, env.X - mean[:p], env.Y - mean[p])
        if env.n > 0
        else env
        for env in envs
    ]
    return centered, mean


def compute_gram_shift(env1: EnvDataset, env2: EnvDataset) -> GramShift:
    """Gram-shift statistics for exactly two environments."""
    if env1.n < 1 or env2.n < 1:
        raise ValidationError("both environments need at least one sample")
    if env1.p != env2.p:
        raise ValidationError("environments disagree on predictor count")
    z = _cross_moment(env1.X, env1.Y[:, None])[:, 0] - _cross_moment(
        env2.X, env2.Y[:, None]
    )[:, 0]
    g = _cross_moment(env1.X, env1.X) - _cross_moment(env2.X, env2.X)
    return GramShift(
        p=env1.p,
        labels=(env1.env_label, env2.env_label),
        ns=(env1.n, env2.n),
        zs=(z,),
        gs=(g,),
    )


def compute_multi_gram(envs: list[EnvDataset]) -> GramShift:
    """Gram-shift family for two or more environments.

    Each environment's pair subtracts the average of the other environments'
    per-sample moments; with two environments this reduces to the plain
    two-environment statistics.
    """
    if len(envs) < 2:
        raise ValidationError("need at least two environments")
    if len(envs) == 2:
        return compute_gram_shift(envs[0], envs[1])
    p = envs[0].p
    mzs, mgs = [], []
    for env in envs:
        if env.n < 1:
            raise ValidationError("empty environment")
        if env.p != p:
            raise ValidationError("environments disagree on predictor count")
        mzs.append(_cross_moment(env.X, env.Y[:, None])[:, 0])
        mgs.append(_cross_moment(env.X, env.X))
    k = len(envs)
    zs, gs = [], []
    for e in range(k):
        others_z = sum(mzs[f] for f in range(k) if f != e) / (k - 1)
        others_g = sum(mgs[f] for f in range(k) if f != e) / (k - 1)
        zs.append(mzs[e] - others_z)
        gs.append(mgs[e] - others_g)
    return GramShift(
        p=p,
        labels=tuple(env.env_label for env in envs),
        ns=tuple(env.n for env in envs),
        zs=tuple(zs),
        gs=tuple(gs),
    )


def env_second_moments(envs: list[EnvDataset]) -> np.ndarray:
    """Per-environment column means of X^2, shape (n_env, p)."""
    return np.array([np.mean(env.X**2, axis=0) for env in envs])


def scaling_factors(gram: GramShift, second_moments: np.ndarray) -> np.ndarray:
    """Row-scaling factors 1/sqrt(c_{k,e}), shape (p, n_env).

    c_{k,e} combines this environment's variance share with the averaged
    others: m_{k,e}/n_e + (1/(E-1)^2) * sum_{e' != e} m_{k,e'}/n_{e'}.
    """
    m = np.asarray(second_moments, dtype=np.float64)
    if m.shape != (gram.n_env, gram.p):
        raise ValidationError(
            f"second moments must be {(gram.n_env, gram.p)}, got {m.shape}"
        )
    if np.any(m <= 0.0):
        raise DegenerateMomentError(
            "nonpositive second moment (constant column?)"
        )
    k = gram.n_env
    ns = np.asarray(gram.ns, dtype=np.float64)
    c = np.empty((gram.p, k))
    for e in range(k):
        others = sum(m[f] / ns[f] for f in range(k) if f != e)
        c[:, e] = m[e] / ns[e] + others / (k - 1) ** 2
    return 1.0 / np.sqrt(c)


def apply_scaling(gram: GramShift, second_moments: np.ndarray) -> GramShift:
    """Scale row k of every Z and G by 1/sqrt(c_{k,e}); rejects re-scaling."""
    if gram.scaling is not None:
        raise ValidationError("gram shift is already scaled")
    f = scaling_factors(gram, second_moments)
    if gram.n_env == 2:
        # both environments share identical factors, so the stored single
        # pair (and its implicit negation) stays consistent
        zs = (gram.zs[0] * f[:, 0],)
        gs = (gram.gs[0] * f[:, 0][:, None],)
    else:
        zs = tuple(z * f[:, e] for e, z in enumerate(gram.zs))
        gs = tuple(g * f[:, e][:, None] for e, g in enumerate(gram.gs))
    return replace(gram, zs=zs, gs=gs, scaling=f)


def gram_from_envs(
    envs: list[EnvDataset], *, center: bool = True, scale: bool = False
) -> tuple[GramShift, list[EnvDataset]]:
    """Standard pipeline: optional global centering, Gram shift, optional scaling.

    Returns the statistics together with the (possibly centered) datasets the
    moments were computed from, which downstream covariance estimation needs.
    """
    mean = None
    if center:
        envs, mean = center_datasets(envs)
    gram = compute_multi_gram(envs)
    if mean is not None:
        gram = replace(gram, center=mean)
    if scale:
        gram = apply_scaling(gram, env_second_moments(envs))
    return gram, envs


# ---------------------------------------------------------------------------
# JSON form: {"p", "envs": [{"label", "n", "Z", "G"}], "scaling", "center"}


def gram_to_dict(gram: GramShift) -> dict:
    envs = []
    for (z, g), label, n in zip(gram.family(), gram.labels, gram.ns):
        envs.append(
            {
                "label": label,
                "n": int(n),
                "Z": [float(v) for v in z],
                "G": [float(v) for v in g.reshape(-1)],
            }
        )
    return {
        "p": gram.p,
        "envs": envs,
        "scaling": None
        if gram.scaling is None
        else [[float(v) for v in row] for row in gram.scaling],
        "center": None
        if gram.center is None
        else [float(v) for v in gram.center],
    }


def gram_from_dict(data: dict) -> GramShift:
    try:
        p = int(data["p"])
        entries = data["envs"]
        labels = tuple(str(e["label"]) for e in entries)
        ns = tuple(int(e["n"]) for e in entries)
        zs = [np.asarray(e["Z"], dtype=np.float64).reshape(p) for e in entries]
        gs = [np.asarray(e["G"], dtype=np.float64).reshape(p, p) for e in entries]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"malformed gram shift: {exc}") from exc
    scaling = data.get("scaling")
    center = data.get("center")
    scaling_arr = None if scaling is None else np.asarray(scaling, dtype=np.float64)
    center_arr = None if center is None else np.asarray(center, dtype=np.float64)
    if len(labels) == 2:
        if not (
            np.allclose(zs[1], -zs[0], atol=1e-9, rtol=1e-9)
            and np.allclose(gs[1], -gs[0], atol=1e-9, rtol=1e-9)
        ):
            raise ValidationError(
                "two-environment gram shift must satisfy Z2 = -Z1, G2 = -G1"
            )
        zs, gs = zs[:1], gs[:1]
    return GramShift(
        p=p,
        labels=labels,
        ns=ns,
        zs=tuple(zs),
        gs=tuple(gs),
        center=center_arr,
        scaling=scaling_arr,
    )
