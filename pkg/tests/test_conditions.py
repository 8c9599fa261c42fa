import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smoothlin.conditions import (LyapunovPerronParams, alpha_upper_bound, audit_nonlinearity,
                                  autonomous_alpha_bound, check_spectral_bound, default_K,
                                  lp_params, max_admissible_eta_tilde, smallness_budget)
from smoothlin.errors import ConfigError, NonHyperbolicError
from smoothlin.evolution import CutoffNonlinearity, FlowBounds, NonlinearTerm, bump, bump_derivative
from smoothlin.spectrum import SpectrumEstimate

E = math.e


def spec(*intervals):
    return SpectrumEstimate.from_intervals(list(intervals))


def test_spectral_bound_autonomous_always_passes():
    for s in (spec((1 / E, 1 / E), (E, E)), spec((E ** -3, E ** -3), (1 / E, 1 / E), (E ** 2, E ** 2))):
        rep = check_spectral_bound(s)
        assert rep.passed and rep.violating == []


def test_spectral_bound_fails_at_first_index():
    rep = check_spectral_bound(spec((0.1, 0.9), (2.0, 3.0)))
    assert not rep.passed and rep.violating == [1]
    assert rep.margins[0]["margin"] < 0 < rep.margins[1]["margin"]


def test_spectral_bound_thin_intervals_pass():
    rep = check_spectral_bound(spec((0.40, 0.45), (2.0, 2.2)))
    assert rep.passed
    assert np.isclose(rep.margins[0]["margin"], math.log(1 / 0.45) - math.log(1.125))
    assert np.isclose(rep.margins[1]["margin"], math.log(2.0) - math.log(1.1))


def test_spectral_bound_refuses_non_hyperbolic():
    s = SpectrumEstimate([(0.5, 1.2)], 0, 1, False, 1e-3)
    with pytest.raises(NonHyperbolicError):
        check_spectral_bound(s)


def test_spectral_bound_under_log_shift():
    base = [(0.40, 0.45), (2.0, 2.2)]
    ref = check_spectral_bound(spec(*base)).margins
    for c in (0.6, 0.9, 1.5, 2.0):
        rows = check_spectral_bound(spec(*[(a * c, b * c) for a, b in base])).margins
        assert np.allclose([r["log_ratio"] for r in rows], [r["log_ratio"] for r in ref])
        assert np.isclose(rows[0]["margin"], ref[0]["margin"] - math.log(c))
        assert np.isclose(rows[1]["margin"], ref[1]["margin"] + math.log(c))


def test_alpha_saddle_is_two():
    ab = alpha_upper_bound(spec((1 / E, 1 / E), (E, E)))
    assert np.isclose(ab.alpha_max, 2.0)
    assert np.isclose(ab.chosen, 0.95)


def test_alpha_thin_intervals_hand_value():
    ab = alpha_upper_bound(spec((0.40, 0.45), (2.0, 2.2)))
    gap = math.log(2.0) - math.log(0.45)
    assert np.isclose(ab.branches["unstable"], gap / math.log(2.2))
    assert np.isclose(ab.branches["stable"], gap / math.log(2.5))
    assert ab.branch == "stable"
    assert np.isclose(ab.alpha_max, 1.628, atol=5e-4)


def test_alpha_vanishes_as_gap_closes():
    vals = [alpha_upper_bound(spec((0.40, b), (1.001, 2.2))).alpha_max
            for b in (0.45, 0.7, 0.9, 0.99, 0.999)]
    assert all(a > b for a, b in zip(vals, vals[1:]))
    assert vals[-1] < 0.01


def test_alpha_autonomous_eigenvalues():
    assert autonomous_alpha_bound([-1.0, 1.0]).alpha_max == 2.0
    assert autonomous_alpha_bound([-3.0, -1.0, 2.0]).alpha_max == 1.0
    with pytest.raises(NonHyperbolicError):
        autonomous_alpha_bound([0.0, 1.0])


def test_alpha_discrete_agrees_with_autonomous():
    disc = alpha_upper_bound(spec((math.exp(-1.0),) * 2, (math.exp(1.0),) * 2))
    assert np.isclose(disc.alpha_max, autonomous_alpha_bound([-1.0, 1.0]).alpha_max)


def test_alpha_one_sided_needs_override():
    s = spec((0.5, 0.5))
    with pytest.raises(NonHyperbolicError):
        alpha_upper_bound(s)
    ab = alpha_upper_bound(s, override=0.9)
    assert ab.chosen == 0.9 and ab.overridden and math.isinf(ab.alpha_max)


def test_alpha_override_must_stay_below_max():
    with pytest.raises(ConfigError):
        alpha_upper_bound(spec((1 / E, 1 / E), (E, E)), override=2.0)
    with pytest.raises(ValueError):
        alpha_upper_bound(spec((1 / E, 1 / E), (E, E)), rho=1.0)


def test_audit_zero_nonlinearity():
    a = audit_nonlinearity(NonlinearTerm.zero(2), np.linspace(-5, 5, 11), 1.0, n_samples=200)
    assert a.eta == 0.0 and a.B == 0.0 and a.all_pass


def test_audit_weighted_cutoff_quadratic():
    eta0, eps = 0.1, 0.02
    nl = CutoffNonlinearity(lambda X: eta0 * X ** 2, lambda X: (2 * eta0 * X)[:, :, None], 1, 1.0,
                            weight=lambda t: math.exp(-3 * eps * abs(t)), eps=eps)
    a = audit_nonlinearity(nl, np.linspace(-10, 10, 21), 2.0, n_samples=20000, seed=3)
    u = np.linspace(0.0, 2.0, 200001)
    exact = eta0 * np.max(np.abs(2 * u * bump(u) + u ** 2 * bump_derivative(u)))
    assert abs(a.eta - exact) <= 0.1 * exact
    assert a.passed["F1"] and a.passed["F2"]


def test_audit_reports_f1_violation():
    nl = NonlinearTerm(lambda t, x: np.full_like(x, 1e-3), 1,
                       jac=lambda t, x: np.zeros((x.shape[0], 1, 1)))
    a = audit_nonlinearity(nl, np.linspace(0, 3, 4), 1.0, n_samples=40)
    assert not a.passed["F1"]
    assert np.isclose(a.worst["F1"]["value"], 1e-3)


def test_audit_deterministic_for_seed():
    nl = CutoffNonlinearity(lambda X: X ** 2, lambda X: (2 * X)[:, :, None], 1, 0.5)
    a = audit_nonlinearity(nl, [0.0, 1.0], 1.0, n_samples=100, seed=9)
    b = audit_nonlinearity(nl, [0.0, 1.0], 1.0, n_samples=100, seed=9)
    assert a.to_json() == b.to_json()


def test_lp_params_ordering_and_third_threshold():
    s = spec((1 / E, 1 / E), (E, E))
    lp = lp_params(s, 0.95)
    assert 1 / E < lp.lam_s_plus < lp.gamma_s < 1 < lp.gamma_u < lp.lam_u_minus < E
    assert lp.lam_u_plus > E
    assert lp.gamma_s / lp.gamma_u * lp.lam_u_plus ** 0.95 < 1
    with pytest.raises(ValueError):
        LyapunovPerronParams(0.5, 0.4, 1.5, 2.0)


def test_default_K_formula():
    lp = LyapunovPerronParams(0.5, 0.8, 1.25, 2.0)
    want = 4 * max(1, 1 / (1 - 0.5 / 0.8), 1 / (1 - 1.25 / 2.0))
    assert np.isclose(default_K(lp), want)


def test_budget_zero_eta_passes():
    s = spec((1 / E, 1 / E), (E, E))
    lp = lp_params(s, 0.95)
    b = smallness_budget(FlowBounds(1.0, 1.0, 0.0, 0.0, 0.0), 1.0, 0.95, lp, delta_cap=0.5)
    assert b.eta_tilde == 0.0 and b.B_tilde == 0.0
    assert b.satisfied and b.delta == 0.5 and b.rho == 0.125


def test_budget_radii():
    s = spec((1 / E, 1 / E), (E, E))
    lp = lp_params(s, 0.95)
    b = smallness_budget(FlowBounds(1.2, 1.0, 0.05, 1e-4, 1e-3), 1.5, 0.95, lp)
    assert np.isclose(b.U_radius(3), math.exp(-0.05 * 3) * b.rho / 1.5)
    assert np.isclose(b.V_radius(-2.0), math.exp(-0.2) * b.rho_tilde)
    assert np.isclose(b.rho_tilde, b.rho * math.exp(-0.1) / (b.a * 1.5))


def test_max_admissible_eta_tends_to_zero():
    s = spec((1 / E, 1 / E), (E, E))
    grid = np.linspace(0.2, 1.999, 10)
    eta = [max_admissible_eta_tilde(s, a, 1.0) for a in grid]
    assert all(x > y for x, y in zip(eta, eta[1:]))
    assert eta[-1] < 1e-2
    assert math.isinf(max_admissible_eta_tilde(spec((0.5, 0.5)), 0.9, 1.0))


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-8, 1e-2), st.floats(0.01, 1.0))
def test_property_budget_monotone_in_eta(eta, shrink):
    s = spec((1 / E, 1 / E), (E, E))
    lp = lp_params(s, 0.95)
    big = smallness_budget(FlowBounds(1.1, 1.0, 0.0, eta, 1e-2), 1.2, 0.95, lp)
    small = smallness_budget(FlowBounds(1.1, 1.0, 0.0, eta * shrink, 1e-2), 1.2, 0.95, lp)
    assert small.eta_tilde <= big.eta_tilde
    if big.satisfied:
        assert small.satisfied


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 0.9), st.floats(1.1, 5.0), st.floats(1.0, 3.0))
def test_property_alpha_monotone_in_gap(b_k, a_next, widen):
    s1 = spec((0.02, b_k), (a_next, a_next * 1.1))
    # enlarging the gap with the outer edges fixed never lowers alpha_max
    s2 = spec((0.02, b_k), (a_next * widen, max(a_next * widen, a_next * 1.1)))
    assert alpha_upper_bound(s2).alpha_max >= alpha_upper_bound(s1).alpha_max - 1e-12
