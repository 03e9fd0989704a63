"""Self-contained dense linear-program solver.

Two-phase primal simplex on the slack-form tableau. The pivot rule is
Dantzig's (most negative reduced cost, lowest index on ties) with a permanent
switch to Bland's rule once the cumulative count of degenerate pivots exceeds
10 * (rows + columns), which guarantees termination. Ratio-test ties resolve
to the smallest basis index. Every choice is deterministic, so identical
inputs produce identical pivot sequences and bit-identical results.

Every optimal solve also extracts the dual vector from the final basis and
verifies dual feasibility and strong duality to 1e-7 before returning.

The hot loop is compiled with numba when available; the pure-Python fallback
executes the same statements in the same order, so results do not depend on
which path ran.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LpSolverError, ValidationError

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

_RATIO_TOL = 1e-11
_DEGEN_TOL = 1e-12


def _pivot_impl(T, prow, pcol):
    ncol = T.shape[1]
    piv = T[prow, pcol]
    for c in range(ncol):
        T[prow, c] /= piv
    T[prow, pcol] = 1.0
    # touching only the pivot row's nonzero columns is exact: subtracting
    # f * 0.0 would leave every other entry bit-identical anyway
    cols = np.empty(ncol, dtype=np.int64)
    ncols_nz = 0
    for c in range(ncol):
        if T[prow, c] != 0.0:
            cols[ncols_nz] = c
            ncols_nz += 1
    for r in range(T.shape[0]):
        if r == prow:
            continue
        f = T[r, pcol]
        if f != 0.0:
            for k in range(ncols_nz):
                c = cols[k]
                T[r, c] -= f * T[prow, c]
            T[r, pcol] = 0.0


def _simplex_impl(T, basis, n_enter, opt_tol, bland_limit, max_pivots, degen0):
    # returns (code, pivots, degenerate_count, last_enter, last_leave)
    # code: 0 optimal, 1 unbounded, 2 pivot budget exceeded
    m = basis.shape[0]
    rhs = T.shape[1] - 1
    pivots = 0
    degen = degen0
    bland = degen > bland_limit
    last_enter = -1
    last_leave = -1
    while True:
        ent = -1
        if bland:
            for j in range(n_enter):
                if T[m, j] < -opt_tol:
                    ent = j
                    break
        else:
            best = -opt_tol
            for j in range(n_enter):
                v = T[m, j]
                if v < best:
                    best = v
                    ent = j
        if ent == -1:
            return 0, pivots, degen, last_enter, last_leave
        if pivots >= max_pivots:
            return 2, pivots, degen, last_enter, last_leave
        leave = -1
        best_ratio = np.inf
        best_basis = np.int64(1) << np.int64(62)
        for i in range(m):
            a = T[i, ent]
            if a > _RATIO_TOL:
                ratio = T[i, rhs] / a
                if ratio < best_ratio or (
                    ratio == best_ratio and basis[i] < best_basis
                ):
                    best_ratio = ratio
                    best_basis = basis[i]
                    leave = i
        if leave == -1:
            return 1, pivots, degen, last_enter, last_leave
        if best_ratio < _DEGEN_TOL:
            degen += 1
            if degen > bland_limit:
                bland = True
        _pivot(T, leave, ent)
        basis[leave] = ent
        pivots += 1
        last_enter = ent
        last_leave = leave


if _numba is not None:
    _pivot = _numba.njit(cache=True, nogil=True)(_pivot_impl)
    _simplex = _numba.njit(cache=True, nogil=True)(_simplex_impl)
else:  # pragma: no cover
    _pivot = _pivot_impl
    _simplex = _simplex_impl


@dataclass(frozen=True, eq=False)
class LpProblem:
    """minimize c @ x  subject to  A_ub @ x <= b_ub, A_eq @ x == b_eq.

    With ``nonneg`` set, x >= 0; otherwise every variable is free and is
    internally split into a difference of nonnegative parts.
    """

    c: np.ndarray
    A_ub: np.ndarray
    b_ub: np.ndarray
    nonneg: bool = True
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=np.float64).reshape(-1)
        a = np.asarray(self.A_ub, dtype=np.float64)
        if a.size == 0:
            a = a.reshape(0, c.size)
        b = np.asarray(self.b_ub, dtype=np.float64).reshape(-1)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A_ub", a)
        object.__setattr__(self, "b_ub", b)
        if a.shape != (b.size, c.size):
            raise ValidationError(
                f"A_ub shape {a.shape} inconsistent with c ({c.size}) and b_ub ({b.size})"
            )
        if self.A_eq is not None:
            ae = np.asarray(self.A_eq, dtype=np.float64)
            be = np.asarray(self.b_eq, dtype=np.float64).reshape(-1)
            if ae.size == 0:
                ae = ae.reshape(0, c.size)
            object.__setattr__(self, "A_eq", ae)
            object.__setattr__(self, "b_eq", be)
            if ae.shape != (be.size, c.size):
                raise ValidationError("A_eq shape inconsistent with c and b_eq")
        elif self.b_eq is not None:
            raise ValidationError("b_eq given without A_eq")
        for arr in (c, a, b, self.A_eq, self.b_eq):
            if arr is not None and not np.all(np.isfinite(arr)):
                raise ValidationError("LP data must be finite")


@dataclass(frozen=True, eq=False)
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    x: np.ndarray | None
    objective: float | None
    dual_ub: np.ndarray | None = None
    dual_eq: np.ndarray | None = None
    pivots: int = 0
    debug_log: tuple[str, ...] | None = None


def _run_phase(T, basis, n_enter, opt_tol, bland_limit, max_pivots, debug, log, phase):
    pivots_total = 0
    degen = 0
    if not debug:
        code, piv, degen, _, _ = _simplex(
            T, basis, n_enter, opt_tol, bland_limit, max_pivots, degen
        )
        return code, piv
    # single-step for forensics
    while True:
        code, piv, degen, ent, lev = _simplex(
            T, basis, n_enter, opt_tol, bland_limit, 1, degen
        )
        pivots_total += piv
        if piv:
            log.append(
                f"phase={phase} pivot={pivots_total} enter={ent} leave_row={lev} "
                f"obj={-T[-1, -1]:.12g}"
            )
            if T.shape[0] <= 12 and T.shape[1] <= 14:
                log.append(np.array2string(T, precision=6, suppress_small=True))
        if code != 2 or piv == 0:
            return code, pivots_total
        if pivots_total >= max_pivots:
            return 2, pivots_total


def solve_lp(
    problem: LpProblem,
    feas_tol: float = 1e-9,
    opt_tol: float = 1e-9,
    debug: bool = False,
) -> LpResult:
    """Solve an LP to a vertex optimum with deterministic pivoting."""
    c_orig = problem.c
    d = c_orig.size
    if d == 0:
        raise ValidationError("LP has no variables")

    if problem.nonneg:
        c = c_orig.copy()
        a_ub = problem.A_ub
        a_eq = problem.A_eq
    else:
        c = np.concatenate([c_orig, -c_orig])
        a_ub = np.hstack([problem.A_ub, -problem.A_ub])
        a_eq = (
            None
            if problem.A_eq is None
            else np.hstack([problem.A_eq, -problem.A_eq])
        )
    d2 = c.size
    m_ub = problem.b_ub.size
    m_eq = 0 if problem.b_eq is None else problem.b_eq.size
    m = m_ub + m_eq

    log: list[str] = [] if debug else None

    if m == 0:
        if np.all(c >= -opt_tol):
            x = np.zeros(d)
            return LpResult("optimal", x, 0.0, np.zeros(0), np.zeros(0), 0,
                            tuple(log) if debug else None)
        return LpResult("unbounded", None, None)

    rows = a_ub if a_eq is None else np.vstack([a_ub, a_eq])
    b = (
        problem.b_ub.copy()
        if a_eq is None
        else np.concatenate([problem.b_ub, problem.b_eq])
    )

    ncols = d2 + m_ub
    a_full = np.zeros((m, ncols))
    a_full[:, :d2] = rows
    for i in range(m_ub):
        a_full[i, d2 + i] = 1.0

    sign = np.ones(m)
    for i in range(m):
        if b[i] < 0.0:
            a_full[i] *= -1.0
            b[i] = -b[i]
            sign[i] = -1.0

    # initial basis: slack where it survived the sign flip, artificial otherwise
    basis = np.empty(m, dtype=np.int64)
    art_rows = []
    for i in range(m):
        if i < m_ub and sign[i] > 0.0:
            basis[i] = d2 + i
        else:
            art_rows.append(i)
    n_art = len(art_rows)
    total = ncols + n_art
    for k, i in enumerate(art_rows):
        basis[i] = ncols + k

    T = np.zeros((m + 1, total + 1))
    T[:m, :ncols] = a_full
    for k, i in enumerate(art_rows):
        T[i, ncols + k] = 1.0
    T[:m, total] = b

    b_scale = max(1.0, float(np.max(b))) if m else 1.0
    bland_limit = 10 * (m + total)
    max_pivots = 50 * (m + total) ** 2

    if n_art:
        zrow = np.zeros(total + 1)
        zrow[ncols:total] = 1.0
        for i in art_rows:
            zrow -= T[i]
        T[m] = zrow
        code, piv1 = _run_phase(
            T, basis, ncols, opt_tol, bland_limit, max_pivots, debug, log, 1
        )
        if code == 2:
            raise LpSolverError(f"phase-1 pivot budget exceeded ({piv1} pivots)")
        if code == 1:  # impossible: phase-1 objective bounded below by 0
            raise LpSolverError("phase-1 reported unbounded")
        if -T[m, total] > feas_tol * b_scale:
            return LpResult("infeasible", None, None, pivots=piv1,
                            debug_log=tuple(log) if debug else None)
        # drive remaining artificials out of the basis
        drop_rows = []
        for r in range(m):
            if basis[r] >= ncols:
                pcol = -1
                for j in range(ncols):
                    if abs(T[r, j]) > 1e-9:
                        pcol = j
                        break
                if pcol >= 0:
                    _pivot(T, r, pcol)
                    basis[r] = pcol
                else:
                    drop_rows.append(r)
        if drop_rows:
            keep = np.array([r for r in range(m) if r not in set(drop_rows)])
            T = np.vstack([T[keep], T[m][None, :]])
            basis = basis[keep]
            a_full = a_full[keep]
            b = b[keep]
            sign_keep = np.ones(m, dtype=bool)
            sign_keep[drop_rows] = False
        else:
            sign_keep = np.ones(m, dtype=bool)
        m2 = basis.size
        T = np.hstack([T[:, :ncols], T[:, total:]])
    else:
        piv1 = 0
        m2 = m
        sign_keep = np.ones(m, dtype=bool)
        T = np.hstack([T[:, :ncols], T[:, total:]])

    c_std = np.zeros(ncols)
    c_std[:d2] = c
    zrow = np.concatenate([c_std, [0.0]])
    for r in range(m2):
        jb = basis[r]
        coef = zrow[jb]
        if coef != 0.0:
            zrow = zrow - coef * T[r]
    T[m2] = zrow

    code, piv2 = _run_phase(
        T, basis, ncols, opt_tol, bland_limit, max_pivots, debug, log, 2
    )
    pivots = piv1 + piv2
    if code == 2:
        raise LpSolverError(f"pivot budget exceeded ({pivots} pivots)")
    if code == 1:
        return LpResult("unbounded", None, None, pivots=pivots,
                        debug_log=tuple(log) if debug else None)

    x_std = np.zeros(ncols)
    for r in range(m2):
        x_std[basis[r]] = T[r, ncols]
    x_split = x_std[:d2]
    x = x_split if problem.nonneg else x_split[:d] - x_split[d:]
    objective = float(c_orig @ x)

    # dual certificate from the final basis, then verify both dual
    # feasibility and strong duality
    try:
        y = np.linalg.solve(a_full[:, basis].T, c_std[basis])
    except np.linalg.LinAlgError as exc:
        raise LpSolverError("singular final basis") from exc
    reduced = c_std - a_full.T @ y
    col_scale = np.maximum(1.0, np.abs(c_std) + np.abs(a_full).T @ np.abs(y))
    if np.any(reduced < -1e-7 * col_scale):
        raise LpSolverError("dual certificate failed feasibility check")
    gap = abs(float(b @ y) - objective)
    if gap > 1e-7 * max(1.0, abs(objective)):
        raise LpSolverError(f"duality gap {gap:.3e} exceeds tolerance")

    # map duals back to the original rows (flipped rows change sign;
    # redundant rows dropped in phase 1 get dual zero)
    y_orig = np.zeros(m)
    y_orig[sign_keep] = y * sign[sign_keep]
    dual_ub = y_orig[:m_ub]
    dual_eq = y_orig[m_ub:]

    # spec-level feasibility guarantee on the reported vertex
    resid = problem.A_ub @ x - problem.b_ub if m_ub else np.zeros(0)
    if m_ub and np.max(resid) > feas_tol * max(1.0, b_scale):
        raise LpSolverError("reported optimum violates feasibility tolerance")
    if problem.nonneg and x.size and np.min(x) < -feas_tol:
        raise LpSolverError("reported optimum violates nonnegativity")
    if problem.A_eq is not None:
        eq_resid = np.abs(problem.A_eq @ x - problem.b_eq)
        if eq_resid.size and np.max(eq_resid) > feas_tol * max(1.0, b_scale):
            raise LpSolverError("reported optimum violates equality tolerance")

    return LpResult(
        "optimal",
        x,
        objective,
        dual_ub,
        dual_eq,
        pivots,
        tuple(log) if debug else None,
    )


def solve_minmax_linf(
    zs, gs, feas_tol: float = 1e-9, opt_tol: float = 1e-9
) -> tuple[np.ndarray, float]:
    """Minimize over beta the worst-case sup-norm max_e ||Z_e - G_e beta||_inf.

    Cast as an LP in (beta+, beta-, t): minimize t subject to
    -t <= (Z_e - G_e beta)_j <= t for every environment e and coordinate j.
    """
    zs = [np.asarray(z, dtype=np.float64).reshape(-1) for z in zs]
    gs = [np.asarray(g, dtype=np.float64) for g in gs]
    if not zs or len(zs) != len(gs):
        raise ValidationError("need matching nonempty lists of Z and G")
    p = zs[0].size
    for z, g in zip(zs, gs):
        if z.size != p or g.shape != (p, p):
            raise ValidationError("Z/G dimensions disagree")

    blocks_a = []
    blocks_b = []
    ones = np.ones((p, 1))
    for z, g in zip(zs, gs):
        # Z - G beta <= t  and  G beta - Z <= t
        blocks_a.append(np.hstack([-g, g, -ones]))
        blocks_b.append(-z)
        blocks_a.append(np.hstack([g, -g, -ones]))
        blocks_b.append(z)
    a_ub = np.vstack(blocks_a)
    b_ub = np.concatenate(blocks_b)
    c = np.zeros(2 * p + 1)
    c[-1] = 1.0

    res = solve_lp(LpProblem(c=c, A_ub=a_ub, b_ub=b_ub, nonneg=True), feas_tol, opt_tol)
    if res.status != "optimal":
        raise LpSolverError(f"min-max solve ended with status {res.status}")
    beta = res.x[:p] - res.x[p : 2 * p]
    return beta, float(res.objective)
