"""Model validation, simulation oracles, builtins, serialization."""

import json

import numpy as np
import pytest

from causaldantzig import (
    EnvDataset,
    InterventionSpec,
    NotPsdError,
    ResponseInterventionError,
    SemSpec,
    SingularStructureError,
    ValidationError,
    builtin_spec,
    population_innerprod,
    population_second_moment,
    simulate,
    simulate_all,
    spec_from_dict,
    spec_to_dict,
    split_total,
    true_beta,
    validate_spec,
)
from causaldantzig.sem import datasets_from_csv, datasets_to_csv


def _plain_spec(p=2, envs=None):
    d = p + 1
    if envs is None:
        envs = (
            InterventionSpec("0", np.zeros(d), np.zeros((d, d))),
            InterventionSpec("1", np.zeros(d), np.diag([1.0] * p + [0.0])),
        )
    return SemSpec(p=p, A=np.zeros((d, d)), noise_cov=np.eye(d), environments=envs)


class TestValidation:
    def test_identity_case_is_valid(self):
        spec = _plain_spec()
        assert validate_spec(spec) is spec

    def test_singular_structure_rejected(self):
        # p=1: A with A12 = A21 = 1 makes Id - A singular
        a = np.array([[0.0, 1.0], [1.0, 0.0]])
        spec = SemSpec(
            p=1,
            A=a,
            noise_cov=np.eye(2),
            environments=(InterventionSpec("0", np.zeros(2), np.zeros((2, 2))),),
        )
        with pytest.raises(SingularStructureError):
            validate_spec(spec)

    def test_nonzero_diagonal_rejected(self):
        a = np.diag([0.5, 0.0])
        spec = SemSpec(
            p=1,
            A=a,
            noise_cov=np.eye(2),
            environments=(InterventionSpec("0", np.zeros(2), np.zeros((2, 2))),),
        )
        with pytest.raises(ValidationError):
            validate_spec(spec)

    def test_non_psd_noise_rejected(self):
        bad = np.array([[1.0, 2.0], [2.0, 1.0]])
        spec = SemSpec(
            p=1,
            A=np.zeros((2, 2)),
            noise_cov=bad,
            environments=(InterventionSpec("0", np.zeros(2), np.zeros((2, 2))),),
        )
        with pytest.raises(NotPsdError):
            validate_spec(spec)

    def test_intervention_on_response_rejected(self):
        envs = (InterventionSpec("0", np.array([0.0, 0.0, 1.0]), np.zeros((3, 3))),)
        spec = SemSpec(p=2, A=np.zeros((3, 3)), noise_cov=np.eye(3), environments=envs)
        with pytest.raises(ResponseInterventionError):
            validate_spec(spec)

    def test_response_noise_intervention_rejected(self):
        cov = np.zeros((3, 3))
        cov[2, 2] = 1.0
        envs = (InterventionSpec("0", np.zeros(3), cov),)
        spec = SemSpec(p=2, A=np.zeros((3, 3)), noise_cov=np.eye(3), environments=envs)
        with pytest.raises(ResponseInterventionError):
            validate_spec(spec)

    def test_meas_noise_predictor_columns_must_agree(self):
        spec = _plain_spec()
        bad = np.array([[1.0, 1.0, 0.0], [2.0, 1.0, 0.5]])
        with pytest.raises(ValidationError):
            validate_spec(
                SemSpec(
                    p=2,
                    A=spec.A,
                    noise_cov=spec.noise_cov,
                    environments=spec.environments,
                    meas_noise_var=bad,
                )
            )
        ok = np.array([[1.0, 1.0, 0.0], [1.0, 1.0, 0.5]])
        validate_spec(
            SemSpec(
                p=2,
                A=spec.A,
                noise_cov=spec.noise_cov,
                environments=spec.environments,
                meas_noise_var=ok,
            )
        )


class TestTrueBeta:
    def test_worked_example(self):
        assert np.array_equal(true_beta(builtin_spec("sem_example")), [0.0, 1.0, 0.0])

    def test_zero_matrix(self):
        assert np.array_equal(true_beta(_plain_spec(p=3)), np.zeros(3))

    def test_benchmark_chain_models(self):
        assert np.array_equal(true_beta(builtin_spec("sem_A")), [0.0, 1.0])
        assert np.array_equal(true_beta(builtin_spec("sem_B")), [0.0, 1.0, -1.0, 0.0])
        b = true_beta(builtin_spec("sem_C", p=5, sigma=2.5))
        assert np.array_equal(b, [0.0, 1.0, 0.0, 0.0, 0.0])

    def test_iv_models(self):
        assert np.array_equal(true_beta(builtin_spec("iv_strong")), [2.0])
        assert np.array_equal(true_beta(builtin_spec("iv_weak")), [2.0])


class TestSimulate:
    def test_empty_dataset(self):
        env = simulate(_plain_spec(), "0", 0, seed=1)
        assert env.n == 0 and env.X.shape == (0, 2)

    def test_degenerate_noise_gives_exact_rows(self):
        d = 3
        envs = (InterventionSpec("m", np.array([1.0, 2.0, 0.0]), np.zeros((d, d))),)
        a = np.zeros((d, d))
        a[2, 0] = 1.0  # Y depends on X1
        spec = SemSpec(p=2, A=a, noise_cov=np.zeros((d, d)), environments=envs)
        env = simulate(spec, "m", 5, seed=3)
        expected = np.linalg.solve(np.eye(d) - a, np.array([1.0, 2.0, 0.0]))
        assert np.allclose(env.X, np.tile(expected[:2], (5, 1)), atol=1e-14)
        assert np.allclose(env.Y, expected[2], atol=1e-14)

    def test_determinism_bit_identical(self):
        spec = builtin_spec("sem_example")
        a = simulate(spec, "2", 100, seed=42, replicate=3)
        b = simulate(spec, "2", 100, seed=42, replicate=3)
        assert np.array_equal(a.X, b.X) and np.array_equal(a.Y, b.Y)
        c = simulate(spec, "2", 100, seed=42, replicate=4)
        assert not np.array_equal(a.X, c.X)

    def test_sample_prefix_property(self):
        # the first rows of a larger draw equal the smaller draw (coupling)
        spec = builtin_spec("sem_C", p=4, sigma=2.0)
        small = simulate(spec, "1", 20, seed=9)
        big = simulate(spec, "1", 50, seed=9)
        assert np.array_equal(big.X[:20], small.X)

    def test_second_moments_match_population_oracle(self):
        spec = builtin_spec("sem_example")
        env = simulate(spec, "2", 100000, seed=20240801)
        xy = np.column_stack([env.X, env.Y])
        empirical = xy.T @ xy / env.n
        oracle = population_second_moment(spec, "2")
        rel = np.abs(empirical - oracle) / np.maximum(np.abs(oracle), 1e-12)
        assert np.max(rel) < 0.05

    def test_negative_n_rejected(self):
        with pytest.raises(ValidationError):
            simulate(_plain_spec(), "0", -1, seed=1)

    def test_measurement_noise_added(self):
        spec = _plain_spec()
        noisy = SemSpec(
            p=2,
            A=spec.A,
            noise_cov=spec.noise_cov,
            environments=spec.environments,
            meas_noise_var=np.array([4.0, 4.0, 0.0]),
        )
        env = simulate(noisy, "0", 50000, seed=5)
        # X variance = structural 1 + measurement 4
        assert np.allclose(env.X.var(axis=0), 5.0, rtol=0.05)


class TestInnerProductInvariance:
    @pytest.mark.parametrize(
        "name,kwargs",
        [
            ("sem_example", {}),
            ("sem_A", {}),
            ("sem_B", {}),
            ("sem_C", {"p": 6, "sigma": 2.5}),
            ("iv_strong", {}),
            ("iv_weak", {}),
        ],
    )
    def test_population_innerprod_constant_across_envs(self, name, kwargs):
        spec = builtin_spec(name, **kwargs)
        vals = [population_innerprod(spec, env.label) for env in spec.environments]
        for v in vals[1:]:
            assert np.allclose(v, vals[0], atol=1e-10)

    def test_holds_with_measurement_noise(self):
        base = builtin_spec("sem_example")
        spec = SemSpec(
            p=3,
            A=base.A,
            noise_cov=base.noise_cov,
            environments=base.environments,
            meas_noise_var=np.array([1.0, 1.0, 1.0, 0.5]),
        )
        v1 = population_innerprod(spec, "1")
        v2 = population_innerprod(spec, "2")
        assert np.allclose(v1, v2, atol=1e-10)

    def test_breaks_for_wrong_coefficients(self):
        # the invariance identity is specific to the causal vector
        spec = builtin_spec("sem_example")
        s1 = population_second_moment(spec, "1")
        s2 = population_second_moment(spec, "2")
        wrong = np.array([1.0, 0.0, 0.0])
        lhs = s1[:3, 3] - s1[:3, :3] @ wrong
        rhs = s2[:3, 3] - s2[:3, :3] @ wrong
        assert not np.allclose(lhs, rhs, atol=1e-6)


class TestBuiltins:
    def test_sem_example_intervention_variances(self):
        # env-2 extra noise variance is 3 = 4 - 1 on every predictor-side
        # coordinate; the worked example's printed Gram statistics pin this
        spec = builtin_spec("sem_example")
        env2 = spec.environment("2")
        assert np.allclose(np.diag(env2.cov), [3.0, 3.0, 3.0, 0.0])
        assert spec.environment("1").is_observational

    def test_sem_c_interventions_only_in_second_env(self):
        spec = builtin_spec("sem_C", p=5, sigma=2.5)
        assert spec.environment("0").is_observational
        env1 = spec.environment("1")
        assert np.allclose(np.diag(env1.cov), [6.25] * 5 + [0.0])
        assert env1.support(5) == [0, 1, 2, 3, 4]

    def test_iv_strong_structure(self):
        spec = builtin_spec("iv_strong")
        assert np.array_equal(true_beta(spec), [2.0])
        assert np.array_equal(spec.environment("1").mean_shift, [2.0, 0.0])

    def test_sem_a_loading_seed_changes_confounding(self):
        a = builtin_spec("sem_A", loading_seed=1)
        b = builtin_spec("sem_A", loading_seed=2)
        assert not np.allclose(a.noise_cov, b.noise_cov)
        c = builtin_spec("sem_A", loading_seed=1)
        assert np.array_equal(a.noise_cov, c.noise_cov)

    def test_unknown_name(self):
        with pytest.raises(ValidationError):
            builtin_spec("sem_Z")


class TestSplitTotal:
    def test_even(self):
        assert split_total(1000, 2) == [500, 500]

    def test_remainder_goes_to_leading_envs(self):
        assert split_total(10, 3) == [4, 3, 3]


class TestSerialization:
    def test_spec_roundtrip(self):
        spec = builtin_spec("sem_example")
        again = spec_from_dict(json.loads(json.dumps(spec_to_dict(spec))))
        assert np.array_equal(again.A, spec.A)
        assert np.array_equal(again.noise_cov, spec.noise_cov)
        assert again.labels == spec.labels

    def test_unknown_key_rejected(self):
        data = spec_to_dict(builtin_spec("sem_A"))
        data["extra"] = 1
        with pytest.raises(ValidationError):
            spec_from_dict(data)

    def test_unknown_env_key_rejected(self):
        data = spec_to_dict(builtin_spec("sem_A"))
        data["environments"][0]["scale"] = 2
        with pytest.raises(ValidationError):
            spec_from_dict(data)

    def test_csv_roundtrip_17_digits(self):
        spec = builtin_spec("sem_example")
        envs = simulate_all(spec, 25, seed=77)
        text = datasets_to_csv(envs, {"seed": 77, "spec_hash": "abc"})
        back, prov = datasets_from_csv(text)
        assert prov == {"seed": "77", "spec_hash": "abc"}
        for orig, parsed in zip(envs, back):
            assert parsed.env_label == orig.env_label
            assert np.array_equal(parsed.X, orig.X)
            assert np.array_equal(parsed.Y, orig.Y)

    def test_csv_header_shape(self):
        envs = [EnvDataset("e", np.zeros((0, 2)), np.zeros(0))]
        text = datasets_to_csv(envs)
        assert text.splitlines()[0] == "env,X1,X2,Y"
