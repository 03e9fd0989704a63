"""Normal CDF/quantile approximations checked against the stdlib oracle."""

import math

import numpy as np
import pytest

from causaldantzig.normal import erf, erfc, ndtr, ndtr_sf, ndtri


def test_erf_matches_stdlib_to_1e9():
    xs = np.concatenate([np.linspace(-6, 6, 2401), np.array([0.0, 1e-12, -1e-12])])
    ours = erf(xs)
    ref = np.array([math.erf(x) for x in xs])
    assert np.max(np.abs(ours - ref) / np.maximum(np.abs(ref), 1e-30)) < 1e-9


def test_erfc_matches_stdlib_including_tail():
    xs = np.linspace(-6, 25, 3001)
    ours = erfc(xs)
    ref = np.array([math.erfc(x) for x in xs])
    ok = ref > 1e-290
    assert np.max(np.abs(ours[ok] - ref[ok]) / ref[ok]) < 1e-9


def test_ndtr_symmetry_and_known_values():
    assert ndtr(0.0) == pytest.approx(0.5, abs=1e-15)
    assert ndtr(1.959963984540054) == pytest.approx(0.975, abs=1e-12)
    xs = np.linspace(-5, 5, 101)
    assert np.allclose(ndtr(xs) + ndtr(-xs), 1.0, atol=1e-14)


def test_survival_function_keeps_tail_precision():
    # two-sided p-value at z = 9.4 must be far below 2e-16, not rounded to 0
    p = 2.0 * ndtr_sf(9.4)
    assert 0.0 < p < 2e-16
    assert ndtr_sf(40.0) == 0.0 or ndtr_sf(40.0) < 1e-300


def test_ndtri_known_quantiles():
    assert float(ndtri(0.5)) == 0.0
    assert float(ndtri(0.975)) == pytest.approx(1.959963984540054, abs=1e-12)
    assert float(ndtri(0.995)) == pytest.approx(2.575829303548901, abs=1e-12)
    assert float(ndtri(0.025)) == pytest.approx(-1.959963984540054, abs=1e-12)


def test_ndtri_roundtrip():
    grid = np.linspace(1e-10, 1 - 1e-10, 20001)
    assert np.max(np.abs(ndtr(ndtri(grid)) - grid)) < 1e-12


def test_ndtri_edge_cases():
    assert float(ndtri(0.0)) == -np.inf
    assert float(ndtri(1.0)) == np.inf
    assert math.isnan(float(ndtri(-0.1)))
    assert math.isnan(float(ndtri(1.1)))
