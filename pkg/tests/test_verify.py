import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smoothlin.conjugacy import ContinuousConjugacy, DiscreteConjugacy, StableUnstableSplitting
from smoothlin.evolution import EvolutionFamily, LinearSystem
from smoothlin.verify import (VerificationReport, check_equivariance, check_expansion,
                              check_inverse, check_solution_mapping, fit_holder, sample_ball,
                              sample_sphere)


def quad(X):
    return X + 4.0 * X ** 2


def weierstrass(p, base=1e3, terms=60):
    """Sum of 2^(-pk) cos(2^k base x); Hoelder of order p at every scale."""
    k = np.arange(terms)
    return lambda X: (2.0 ** (-p * k) * np.cos(np.outer(X[:, 0], 2.0 ** k) * base)).sum(
        axis=1, keepdims=True) * base ** -p


def test_sampling_radii():
    rng = np.random.default_rng(0)
    S = sample_sphere(rng, 100, 3, 0.2)
    assert np.allclose(np.linalg.norm(S, axis=1), 0.2)
    B = sample_ball(rng, 100, 3, 0.2)
    assert np.all(np.linalg.norm(B, axis=1) <= 0.2)


def test_holder_slope_lipschitz_map():
    fit = fit_holder(quad, 1, 1e-2, 0.9, pairs=400)
    assert abs(fit.slope - 1.0) < 0.01 and fit.passed
    assert fit.decades >= 3.0 and fit.target == pytest.approx(0.85)


def test_holder_slope_rough_function_fails_target():
    fit = fit_holder(weierstrass(0.5), 1, 1e-2, 0.9, pairs=400)
    assert fit.slope < 0.6 and not fit.passed


def test_holder_needs_enough_pairs():
    with pytest.raises(ValueError):
        fit_holder(lambda X: np.zeros_like(X), 1, 1e-2, 0.9, pairs=400)


def test_expansion_quadratic_rho_half():
    rep = check_expansion(quad, 1, 0.5, n_dirs=4)
    r = np.array(rep.ratios)
    # r_j = 4 (2^-j)^(1 - rho)
    assert np.allclose(r, 4.0 * np.array(rep.radii) ** 0.5, rtol=1e-9)
    assert np.allclose(r[2:] / r[:-2], 0.5)
    assert rep.passed


def test_expansion_rho_near_one_is_nearly_constant():
    rep = check_expansion(quad, 1, 0.99, n_dirs=4)
    r = np.array(rep.ratios)
    assert np.all(r[1:] / r[:-1] > 0.99) and rep.passed


def test_expansion_detects_linear_deviation():
    rep = check_expansion(lambda X: 1.01 * X, 1, 0.1, n_dirs=4)
    assert not rep.passed


def test_expansion_refuses_tiny_radii():
    with pytest.raises(ValueError):
        check_expansion(quad, 1, 0.5, levels=range(4, 45))


@pytest.fixture(scope="module")
def identity_cc():
    fam = EvolutionFamily(LinearSystem.constant(np.diag([-1.0, 1.0])), step=1e-2)
    split = StableUnstableSplitting(np.diag([1.0, 0.0]), 2, 1)
    return ContinuousConjugacy(fam, DiscreteConjugacy(fam.discretize((0, 60)), split))


def test_checks_on_identity(identity_cc):
    X0 = sample_ball(np.random.default_rng(1), 10, 2, 1e-2)
    for which in ("H", "G"):
        res = check_solution_mapping(identity_cc, X0, 0.0, 5.0, which=which)
        assert res["pass"] and res["residual"] < 1e-10 and res["skipped"] == 0
    inv = check_inverse(identity_cc, [0.0, 1.5], 50, 1e-2, 1e-4)
    assert inv["pass"] and inv["samples"] == 100
    eq = check_equivariance(identity_cc, sample_sphere(np.random.default_rng(2), 3, 2, 1e-2))
    assert eq["pass"] and [r["t"] for r in eq["times"]] == [0.25, 0.5, 1.0]


def test_report_completeness_and_text():
    rep = VerificationReport(seed=4, guaranteed=False)
    for key in ("A1", "A2", "A3", "A4"):
        rep.add(key, {"pass": True, "residual": 0.0})
    assert not rep.complete and not rep.passed
    rep.add("A5", {"pass": True, "residual": 1e-9})
    assert rep.passed
    with pytest.raises(ValueError):
        rep.add("A5", {"pass": True})
    text = rep.to_text()
    assert text.startswith("*** outside guaranteed regime")
    assert "overall: PASS (seed 4)" in text
    assert rep.to_json()["regime"] == "outside guaranteed regime"


@settings(max_examples=20, deadline=None)
@given(st.floats(0.3, 0.7))
def test_property_holder_recovers_exponent(p):
    fit = fit_holder(weierstrass(p), 1, 1e-2, 0.9, pairs=300)
    assert abs(fit.slope - p) < 0.08
