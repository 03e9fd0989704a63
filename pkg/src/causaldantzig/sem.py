"""Linear structural equation models with per-environment additive noise shifts.

A model over ``p`` observed predictors plus a response (coordinate ``p``,
zero-based) is described by a structural coefficient matrix ``A`` with zero
diagonal, a base-noise covariance (off-diagonal entries encode hidden
confounding), and one additive intervention per environment: an extra,
independent Gaussian noise component with a given mean shift and covariance
that never acts on the response coordinate. Samples solve the linear system

    (Id - A) @ (X, Y) = eta0 + delta_env      row by row,

and optional independent measurement noise can be added to the observed
columns afterwards (errors-in-variables).
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    NotPsdError,
    ResponseInterventionError,
    SingularStructureError,
    SpecFormatError,
    ValidationError,
)
from .rng import Stream, derive_key

COND_LIMIT = 1e12

# master seed dedicated to factor-model confounder loadings in the builtin
# benchmark models; overridable wherever builtins are constructed
DEFAULT_LOADING_SEED = 20240801


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class InterventionSpec:
    """Additive noise shift for one environment.

    ``mean_shift`` and ``cov`` describe the extra Gaussian component added to
    the base noise; both must vanish on the response coordinate.
    """

    label: str
    mean_shift: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mean_shift", _freeze(self.mean_shift))
        object.__setattr__(self, "cov", _freeze(self.cov))

    @property
    def is_observational(self) -> bool:
        return not self.mean_shift.any() and not self.cov.any()

    def support(self, p: int) -> list[int]:
        """Zero-based predictor coordinates this intervention acts on."""
        return [
            k
            for k in range(p)
            if self.mean_shift[k] != 0.0 or self.cov[k, k] > 0.0
        ]


@dataclass(frozen=True, eq=False)
class SemSpec:
    """Full generative description of a multi-environment linear SEM."""

    p: int
    A: np.ndarray
    noise_cov: np.ndarray
    environments: tuple[InterventionSpec, ...]
    meas_noise_var: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "A", _freeze(self.A))
        object.__setattr__(self, "noise_cov", _freeze(self.noise_cov))
        object.__setattr__(self, "environments", tuple(self.environments))
        if self.meas_noise_var is not None:
            object.__setattr__(self, "meas_noise_var", _freeze(self.meas_noise_var))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(env.label for env in self.environments)

    def environment(self, label: str) -> InterventionSpec:
        for env in self.environments:
            if env.label == label:
                return env
        raise ValidationError(f"unknown environment label {label!r}")

    def env_index(self, label: str) -> int:
        for i, env in enumerate(self.environments):
            if env.label == label:
                return i
        raise ValidationError(f"unknown environment label {label!r}")

    def meas_var_for(self, label: str) -> np.ndarray | None:
        """Measurement-noise variances for one environment, or None."""
        if self.meas_noise_var is None:
            return None
        v = self.meas_noise_var
        if v.ndim == 1:
            return v
        return v[self.env_index(label)]


@dataclass(frozen=True, eq=False)
class EnvDataset:
    """Realized samples for one environment."""

    env_label: str
    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        X = np.asarray(self.X, dtype=np.float64)
        if X.ndim != 2:
            raise ValidationError("X must be a 2-d array")
        Y = np.asarray(self.Y, dtype=np.float64).reshape(-1)
        if X.shape[0] != Y.shape[0]:
            raise ValidationError(
                f"row mismatch: X has {X.shape[0]} rows, Y has {Y.shape[0]}"
            )
        object.__setattr__(self, "X", _freeze(X))
        object.__setattr__(self, "Y", _freeze(Y))

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]


def _check_psd(mat: np.ndarray, what: str) -> None:
    if mat.shape[0] != mat.shape[1]:
        raise ValidationError(f"{what} must be square, got {mat.shape}")
    if not np.allclose(mat, mat.T, atol=1e-10, rtol=0.0):
        raise NotPsdError(f"{what} is not symmetric")
    w = np.linalg.eigvalsh(0.5 * (mat + mat.T))
    scale = max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    if w.size and w.min() < -1e-10 * scale:
        raise NotPsdError(f"{what} has negative eigenvalue {w.min():.3e}")


def validate_spec(spec: SemSpec, cond_limit: float = COND_LIMIT) -> SemSpec:
    """Check every model invariant; returns the spec unchanged if all hold."""
    p = spec.p
    d = p + 1
    if p < 1:
        raise ValidationError("need at least one predictor")
    if spec.A.shape != (d, d):
        raise ValidationError(f"A must be {(d, d)}, got {spec.A.shape}")
    if np.any(np.diag(spec.A) != 0.0):
        raise ValidationError("diagonal of A must be exactly zero")

    eye_minus_a = np.eye(d) - spec.A
    if abs(np.linalg.det(eye_minus_a)) == 0.0:
        raise SingularStructureError("Id - A is singular", cond=np.inf)
    cond = float(np.linalg.cond(eye_minus_a))
    if not np.isfinite(cond) or cond > cond_limit:
        raise SingularStructureError(
            f"Id - A condition number {cond:.3e} exceeds limit {cond_limit:.1e}",
            cond=cond,
        )

    if spec.noise_cov.shape != (d, d):
        raise ValidationError(
            f"noise_cov must be {(d, d)}, got {spec.noise_cov.shape}"
        )
    _check_psd(spec.noise_cov, "noise_cov")

    if not spec.environments:
        raise ValidationError("at least one environment is required")
    seen = set()
    for env in spec.environments:
        if env.label in seen:
            raise ValidationError(f"duplicate environment label {env.label!r}")
        seen.add(env.label)
        if env.mean_shift.shape != (d,):
            raise ValidationError(
                f"environment {env.label!r}: mean_shift must have length {d}"
            )
        if env.cov.shape != (d, d):
            raise ValidationError(
                f"environment {env.label!r}: cov must be {(d, d)}"
            )
        if env.mean_shift[p] != 0.0:
            raise ResponseInterventionError(
                f"environment {env.label!r} shifts the response mean"
            )
        if env.cov[p, :].any() or env.cov[:, p].any():
            raise ResponseInterventionError(
                f"environment {env.label!r} intervenes on the response noise"
            )
        _check_psd(env.cov, f"environment {env.label!r} cov")

    v = spec.meas_noise_var
    if v is not None:
        if v.ndim == 1:
            if v.shape != (d,):
                raise ValidationError(f"meas_noise_var must have length {d}")
            rows = v[None, :]
        elif v.ndim == 2:
            if v.shape != (len(spec.environments), d):
                raise ValidationError(
                    "per-environment meas_noise_var must be "
                    f"{(len(spec.environments), d)}, got {v.shape}"
                )
            rows = v
            # only the response column may differ between environments
            if rows.shape[0] > 1 and not np.all(rows[:, :p] == rows[0, :p]):
                raise ValidationError(
                    "measurement-noise variances of predictors must be "
                    "identical across environments"
                )
        else:
            raise ValidationError("meas_noise_var must be 1-d or 2-d")
        if np.any(rows < 0.0):
            raise ValidationError("measurement-noise variances must be >= 0")
    return spec


def true_beta(spec: SemSpec) -> np.ndarray:
    """Direct causal coefficients of the predictors on the response."""
    return np.array(spec.A[spec.p, : spec.p])


def _psd_sqrt(mat: np.ndarray, what: str = "covariance") -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition.

    Eigenvalues below -1e-10 (relative) are rejected; small negatives from
    rounding are clamped to zero so degenerate covariances are allowed.
    """
    w, u = np.linalg.eigh(0.5 * (mat + mat.T))
    scale = max(1.0, float(np.max(np.abs(w))) if w.size else 1.0)
    if w.size and w.min() < -1e-10 * scale:
        raise NotPsdError(f"{what} has negative eigenvalue {w.min():.3e}")
    w = np.clip(w, 0.0, None)
    return (u * np.sqrt(w)) @ u.T


def simulate(
    spec: SemSpec,
    env_label: str,
    n: int,
    seed: int,
    replicate: int = 0,
) -> EnvDataset:
    """Draw ``n`` i.i.d. samples from one environment.

    The stream is keyed by (seed, env_label, replicate), so replicates and
    environments can be generated in any order, in parallel, with
    bit-identical results.
    """
    validate_spec(spec)
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
        raise ValidationError("n must be an integer")
    if n < 0:
        raise ValidationError("n must be >= 0")
    env = spec.environment(env_label)
    d = spec.p + 1

    stream = Stream(derive_key(seed, str(env_label), int(replicate)))
    z_eta = stream.substream("eta").normals((n, d))
    z_delta = stream.substream("delta").normals((n, d))

    eta = z_eta @ _psd_sqrt(spec.noise_cov, "noise_cov")
    delta = env.mean_shift[None, :] + z_delta @ _psd_sqrt(env.cov, "intervention cov")

    eye_minus_a = np.eye(d) - spec.A
    xy = np.linalg.solve(eye_minus_a, (eta + delta).T).T

    meas = spec.meas_var_for(env_label)
    if meas is not None:
        z_meas = stream.substream("zeta").normals((n, d))
        xy = xy + z_meas * np.sqrt(meas)[None, :]

    return EnvDataset(env_label=str(env_label), X=xy[:, : spec.p], Y=xy[:, spec.p])


def simulate_all(
    spec: SemSpec, n_per_env, seed: int, replicate: int = 0
) -> list[EnvDataset]:
    """Simulate every environment; ``n_per_env`` is an int or one int per env."""
    if isinstance(n_per_env, (int, np.integer)):
        ns = [int(n_per_env)] * len(spec.environments)
    else:
        ns = [int(v) for v in n_per_env]
        if len(ns) != len(spec.environments):
            raise ValidationError("one sample count per environment required")
    return [
        simulate(spec, env.label, ns[i], seed, replicate)
        for i, env in enumerate(spec.environments)
    ]


def split_total(n_total: int, n_env: int) -> list[int]:
    """Equal split of a total sample count across environments.

    A remainder goes to the leading environments, one extra sample each.
    """
    base = n_total // n_env
    rem = n_total - base * n_env
    return [base + (1 if i < rem else 0) for i in range(n_env)]


# ---------------------------------------------------------------------------
# population moments


def population_second_moment(spec: SemSpec, env_label: str) -> np.ndarray:
    """E[(X, Y)(X, Y)^T] in one environment, in closed form."""
    validate_spec(spec)
    env = spec.environment(env_label)
    d = spec.p + 1
    sigma_eta = (
        spec.noise_cov + env.cov + np.outer(env.mean_shift, env.mean_shift)
    )
    m = np.linalg.inv(np.eye(d) - spec.A)
    second = m @ sigma_eta @ m.T
    meas = spec.meas_var_for(env_label)
    if meas is not None:
        second = second + np.diag(meas)
    return second


def population_innerprod(spec: SemSpec, env_label: str) -> np.ndarray:
    """E[X_k (Y - X beta0)] per predictor, in closed form.

    With measurement noise the observed-variable version includes the usual
    attenuation correction -Var(zeta_k) * beta0_k.
    """
    validate_spec(spec)
    env = spec.environment(env_label)
    d = spec.p + 1
    sigma_eta = (
        spec.noise_cov + env.cov + np.outer(env.mean_shift, env.mean_shift)
    )
    m = np.linalg.inv(np.eye(d) - spec.A)
    # Y - X beta0 equals the response noise coordinate, so the inner product
    # is row k of M Sigma_eta at the response column
    w = (m @ sigma_eta)[: spec.p, spec.p]
    meas = spec.meas_var_for(env_label)
    if meas is not None:
        w = w - meas[: spec.p] * true_beta(spec)
    return w


# ---------------------------------------------------------------------------
# builtin benchmark models


def _chain_matrix(entries: dict[tuple[int, int], float], d: int) -> np.ndarray:
    a = np.zeros((d, d))
    for (i, j), v in entries.items():
        a[i, j] = v
    return a


def _factor_noise_cov(
    n_vars: int, n_factors: int, base_var: float, loading_seed: int
) -> np.ndarray:
    """Factor-model noise covariance L @ L.T + base_var * Id.

    The loading matrix is drawn once from a dedicated stream; the hidden
    factors act as shared confounders of every observed variable.
    """
    loadings = Stream(derive_key(loading_seed, "factor-loadings")).normals(
        (n_vars, n_factors)
    )
    return loadings @ loadings.T + base_var * np.eye(n_vars)


def builtin_spec(
    name: str,
    *,
    p: int | None = None,
    sigma: float | None = None,
    loading_seed: int = DEFAULT_LOADING_SEED,
    kappa: float = 8.0,
) -> SemSpec:
    """Construct one of the bundled benchmark models.

    Names: ``sem_example`` (3 predictors, hidden confounder, noise variance
    1 vs 4 across two environments), ``sem_A`` / ``sem_B`` (factor-model
    confounding, noise variance 1 vs 1 + kappa), ``sem_C`` (chain of length p with
    i.i.d. interventions of standard deviation ``sigma`` in the second
    environment; requires ``p`` and ``sigma``), ``iv_strong`` / ``iv_weak``
    (single predictor with a binary instrument acting through a mean shift or
    through the noise scale).
    """
    if name == "sem_example":
        # coordinates (X1, X2, X3, Y); environment noise variance 1 vs 4
        a = _chain_matrix({(0, 1): 1.0, (0, 3): 1.0, (2, 0): 1.0, (3, 1): 1.0}, 4)
        noise_cov = np.array(
            [
                [1.0, 0.0, 0.0, 0.0],
                [0.0, 2.0, 1.0, 1.0],
                [0.0, 1.0, 2.0, 1.0],
                [0.0, 1.0, 1.0, 2.0],
            ]
        )
        var_diff = 4.0 - 1.0
        envs = (
            InterventionSpec("1", np.zeros(4), np.zeros((4, 4))),
            InterventionSpec(
                "2", np.zeros(4), np.diag([var_diff, var_diff, var_diff, 0.0])
            ),
        )
        return validate_spec(SemSpec(p=3, A=a, noise_cov=noise_cov, environments=envs))

    if name in ("sem_A", "sem_B"):
        if name == "sem_A":
            # coordinates (X1, X2, Y)
            a = _chain_matrix({(0, 1): -1.0, (0, 2): 1.0, (2, 1): 1.0}, 3)
            d = 3
        else:
            # coordinates (X1, X2, X3, X4, Y)
            a = _chain_matrix(
                {
                    (0, 1): -1.0,
                    (0, 4): 1.0,
                    (1, 2): 1.0,
                    (3, 0): 1.0,
                    (3, 4): -1.0,
                    (4, 1): 1.0,
                    (4, 2): -1.0,
                },
                5,
            )
            d = 5
        # per-coordinate noise variance is 1 in the first environment and
        # 1 + kappa in the second; kappa is the extra variance injected by
        # the intervention (never on the response)
        noise_cov = _factor_noise_cov(d, 5, 1.0, loading_seed)
        shift_cov = kappa * np.eye(d)
        shift_cov[d - 1, d - 1] = 0.0
        envs = (
            InterventionSpec("1", np.zeros(d), np.zeros((d, d))),
            InterventionSpec("2", np.zeros(d), shift_cov),
        )
        return validate_spec(
            SemSpec(p=d - 1, A=a, noise_cov=noise_cov, environments=envs)
        )

    if name == "sem_C":
        if p is None or sigma is None:
            raise ValidationError("sem_C requires p and sigma")
        if p < 3:
            raise ValidationError("sem_C requires p >= 3")
        d = p + 1
        entries = {(1, 0): 1.0, (p, 1): 1.0, (2, p): 1.0}
        for k in range(3, p):
            entries[(k, k - 1)] = 1.0
        a = _chain_matrix(entries, d)
        shift_cov = float(sigma) ** 2 * np.eye(d)
        shift_cov[p, p] = 0.0
        envs = (
            InterventionSpec("0", np.zeros(d), np.zeros((d, d))),
            InterventionSpec("1", np.zeros(d), shift_cov),
        )
        return validate_spec(
            SemSpec(p=p, A=a, noise_cov=np.eye(d), environments=envs)
        )

    if name in ("iv_strong", "iv_weak"):
        # coordinates (X, Y); base noise: eta_x = H + eps1, eta_y = H + eps2
        # (unit response-noise scale; this is the variant whose Wald error
        # decays as 1/n at the published rate)
        a = np.array([[0.0, 0.0], [2.0, 0.0]])
        noise_cov = np.array([[2.0, 1.0], [1.0, 2.0]])
        if name == "iv_strong":
            shift = InterventionSpec("1", np.array([2.0, 0.0]), np.zeros((2, 2)))
        else:
            # X gains 2 * (0.25 + eps3): mean 0.5, variance 4
            shift = InterventionSpec(
                "1", np.array([0.5, 0.0]), np.diag([4.0, 0.0])
            )
        envs = (InterventionSpec("0", np.zeros(2), np.zeros((2, 2))), shift)
        return validate_spec(SemSpec(p=1, A=a, noise_cov=noise_cov, environments=envs))

    raise ValidationError(f"unknown builtin model {name!r}")


BUILTIN_NAMES = ("sem_example", "sem_A", "sem_B", "sem_C", "iv_strong", "iv_weak")


# ---------------------------------------------------------------------------
# serialization


def spec_to_dict(spec: SemSpec) -> dict:
    out = {
        "p": spec.p,
        "A": [float(v) for v in spec.A.reshape(-1)],
        "noise_cov": [float(v) for v in spec.noise_cov.reshape(-1)],
        "environments": [
            {
                "label": env.label,
                "mean_shift": [float(v) for v in env.mean_shift],
                "cov": [float(v) for v in env.cov.reshape(-1)],
            }
            for env in spec.environments
        ],
    }
    if spec.meas_noise_var is not None:
        v = spec.meas_noise_var
        out["meas_noise_var"] = (
            [float(x) for x in v]
            if v.ndim == 1
            else [[float(x) for x in row] for row in v]
        )
    return out


def spec_from_dict(data: dict) -> SemSpec:
    """Parse a spec mapping; unknown keys are rejected."""
    if not isinstance(data, dict):
        raise SpecFormatError("spec must be a JSON object")
    allowed = {"p", "A", "noise_cov", "environments", "meas_noise_var"}
    unknown = set(data) - allowed
    if unknown:
        raise SpecFormatError(f"unknown keys in spec: {sorted(unknown)}")
    for key in ("p", "A", "noise_cov", "environments"):
        if key not in data:
            raise SpecFormatError(f"spec is missing key {key!r}")
    try:
        p = int(data["p"])
        d = p + 1
        a = np.asarray(data["A"], dtype=np.float64).reshape(d, d)
        noise_cov = np.asarray(data["noise_cov"], dtype=np.float64).reshape(d, d)
        envs = []
        for entry in data["environments"]:
            extra = set(entry) - {"label", "mean_shift", "cov"}
            if extra:
                raise SpecFormatError(
                    f"unknown keys in environment: {sorted(extra)}"
                )
            envs.append(
                InterventionSpec(
                    label=str(entry["label"]),
                    mean_shift=np.asarray(entry["mean_shift"], dtype=np.float64),
                    cov=np.asarray(entry["cov"], dtype=np.float64).reshape(d, d),
                )
            )
        meas = data.get("meas_noise_var")
        meas_arr = None if meas is None else np.asarray(meas, dtype=np.float64)
    except SpecFormatError:
        raise
    except (TypeError, ValueError, KeyError) as exc:
        raise SpecFormatError(f"malformed spec: {exc}") from exc
    return validate_spec(
        SemSpec(p=p, A=a, noise_cov=noise_cov, environments=tuple(envs),
                meas_noise_var=meas_arr)
    )


def spec_hash(spec: SemSpec) -> str:
    """Short content hash used in provenance records."""
    payload = json.dumps(spec_to_dict(spec), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# dataset CSV format: header env,X1,...,Xp,Y; 17 significant digits;
# trailing '#'-comment lines carry provenance and round-trip through the reader


def _fmt(v: float) -> str:
    return f"{float(v):.17g}"


def datasets_to_csv(envs: list[EnvDataset], provenance: dict | None = None) -> str:
    if not envs:
        raise ValidationError("no environments to write")
    p = envs[0].p
    for env in envs:
        if env.p != p:
            raise ValidationError("environments disagree on predictor count")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["env"] + [f"X{k + 1}" for k in range(p)] + ["Y"])
    for env in envs:
        for i in range(env.n):
            writer.writerow(
                [env.env_label] + [_fmt(v) for v in env.X[i]] + [_fmt(env.Y[i])]
            )
    if provenance:
        pairs = " ".join(f"{k}={provenance[k]}" for k in provenance)
        buf.write(f"# {pairs}\n")
    return buf.getvalue()


def write_datasets_csv(path, envs: list[EnvDataset], provenance: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(datasets_to_csv(envs, provenance))


def datasets_from_csv(text: str) -> tuple[list[EnvDataset], dict]:
    provenance: dict[str, str] = {}
    rows = []
    header = None
    for line in text.splitlines():
        if not line.strip():
            continue
        if line.startswith("#"):
            for token in line[1:].split():
                if "=" in token:
                    k, v = token.split("=", 1)
                    provenance[k] = v
            continue
        if header is None:
            header = line.split(",")
            continue
        rows.append(line.split(","))
    if header is None:
        raise ValidationError("empty dataset file")
    if header[0] != "env" or header[-1] != "Y":
        raise ValidationError("dataset header must be env,X1,...,Xp,Y")
    p = len(header) - 2
    by_env: dict[str, list[list[float]]] = {}
    order: list[str] = []
    for row in rows:
        if len(row) != p + 2:
            raise ValidationError(f"malformed dataset row: {row!r}")
        label = row[0]
        if label not in by_env:
            by_env[label] = []
            order.append(label)
        by_env[label].append([float(v) for v in row[1:]])
    envs = []
    for label in order:
        block = np.asarray(by_env[label], dtype=np.float64).reshape(-1, p + 1)
        envs.append(EnvDataset(env_label=label, X=block[:, :p], Y=block[:, p]))
    return envs, provenance


def read_datasets_csv(path) -> tuple[list[EnvDataset], dict]:
    with open(path, "r", encoding="utf-8") as fh:
        return datasets_from_csv(fh.read())
