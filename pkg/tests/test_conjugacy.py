import math

import numpy as np
import pytest

from smoothlin import catalog
from smoothlin.conjugacy import (ContinuousConjugacy, DiscreteConjugacy, StableUnstableSplitting,
                                 nonlinear_orbit, seq_norms, solve_foliation)
from smoothlin.errors import DomainError, TailError
from smoothlin.evolution import EvolutionFamily, LinearSystem, MapSystem, bump
from smoothlin.verify import sample_ball


def quad_map(lam=0.5, c=1.0, r0=0.1):
    def f(n, X):
        return c * bump(np.abs(X[:, :1]) / r0) * X ** 2
    return MapSystem(np.array([[lam]]), f=f)


def saddle_map(c=0.2, r0=0.5):
    def f(n, X):
        r = np.linalg.norm(X, axis=1, keepdims=True)
        return c * bump(r / r0) * np.column_stack([X[:, 1] ** 2, X[:, 0] ** 2])
    return MapSystem(np.diag([0.5, 2.0]), f=f)


SADDLE_SPLIT = StableUnstableSplitting(np.diag([1.0, 0.0]), 2, 1)


def test_orbit_linear_and_zero():
    sysm = MapSystem(np.array([[0.5]]))
    orb = nonlinear_orbit(sysm, 3, np.array([0.2]), 4, 5)
    m = np.arange(orb.start, orb.start + len(orb))
    assert np.allclose(orb.X[:, 0], 0.2 * 0.5 ** (m - 3.0))
    orb0 = nonlinear_orbit(quad_map(), 0, np.array([0.0]), 5, 5)
    assert np.all(orb0.X == 0.0)


def test_orbit_backward_solve_reproduces_forward_map():
    sysm = quad_map()
    orb = nonlinear_orbit(sysm, 0, np.array([[0.05], [-0.08]]), 10, 3)
    for j in range(len(orb) - 1):
        m = orb.start + j
        assert np.allclose(sysm.step(m, orb.X[j]), orb.X[j + 1], atol=1e-13)
    assert not orb.truncated


def test_h_identity_when_linear():
    h = DiscreteConjugacy(MapSystem(np.diag([0.5, 2.0])), SADDLE_SPLIT)
    X = np.array([[0.1, -0.2], [0.0, 0.3]])
    assert np.array_equal(h.solve_h(0, X), X)
    assert np.array_equal(h.solve_h_inverse(4, X), X)


def test_h_fixes_origin():
    h = DiscreteConjugacy(quad_map(), StableUnstableSplitting.trivial(1))
    assert np.allclose(h.solve_h(0, np.zeros(1)), 0.0, atol=1e-15)


def test_h_quadratic_coefficient_series_oracle():
    h = DiscreteConjugacy(quad_map(), StableUnstableSplitting.trivial(1))
    for r in (1e-2, 1e-3, 1e-4):
        hp, hm = h.solve_h(0, np.array([[r], [-r]]))[:, 0]
        coef = (hp + hm) / (2 * r * r)
        assert abs(coef - 4.0) <= 0.05 * 4.0


def test_h_inverse_quadratic_coefficient():
    h = DiscreteConjugacy(quad_map(), StableUnstableSplitting.trivial(1))
    r = 1e-3
    gp, gm = h.solve_h_inverse(0, np.array([[r], [-r]]))[:, 0]
    assert abs((gp + gm) / (2 * r * r) + 4.0) <= 0.05 * 4.0


def test_h_conjugacy_residual_scalar():
    h = DiscreteConjugacy(quad_map(), StableUnstableSplitting.trivial(1))
    X = sample_ball(np.random.default_rng(0), 1000, 1, 0.05)
    for n in (0, 3):
        assert np.max(h.residual(n, X)) <= 1e-6


def test_h_inverse_roundtrip():
    h = DiscreteConjugacy(quad_map(), StableUnstableSplitting.trivial(1))
    X = sample_ball(np.random.default_rng(1), 1000, 1, 0.05)
    back = h.solve_h_inverse(0, h.solve_h(0, X))
    assert np.max(np.abs(back - X)) <= 10 * h.tol_fp


def test_h_bounded_mode_saddle():
    h = DiscreteConjugacy(saddle_map(), SADDLE_SPLIT, n_tail=60)
    assert h.mode == "bounded"
    X = sample_ball(np.random.default_rng(2), 200, 2, 0.05)
    assert np.max(h.residual(0, X)) <= 1e-6
    back = h.solve_h_inverse(0, h.solve_h(0, X))
    assert np.max(np.abs(back - X)) <= 1e-10


def test_tail_convergence():
    split = StableUnstableSplitting.trivial(1)
    x = np.array([[0.04], [-0.03]])
    short = DiscreteConjugacy(quad_map(), split, n_tail=20)
    long = DiscreteConjugacy(quad_map(), split, n_tail=40)
    a = short.solve_h(0, x)
    bound = short.last_tail
    assert np.max(np.abs(long.solve_h(0, x) - a)) <= max(bound, 1e-15)


def test_tail_error_when_window_too_short():
    h = DiscreteConjugacy(saddle_map(), SADDLE_SPLIT, n_tail=2, tol_conj=1e-14)
    with pytest.raises(TailError):
        h.solve_h(0, np.array([0.05, 0.05]))


def test_foliation_linear_is_first_term():
    sysm = MapSystem(np.diag([0.5, 2.0]))
    rng = np.random.default_rng(3)
    x = 0.01 * rng.standard_normal((3, 2))
    xi = np.zeros((3, 2))
    xi[:, 0] = 0.02
    sol = solve_foliation(sysm, SADDLE_SPLIT, x, xi, 0, 5, 0.8)
    lin0 = np.column_stack([xi[:, 0] - x[:, 0], np.zeros(3)])
    for n in range(6):
        want = np.zeros_like(lin0)
        want[n:] = (lin0 * 0.5 ** n)[:3 - n] if n < 3 else 0.0
        assert np.allclose(sol.q[n], want, atol=1e-15)


def test_foliation_zero_fixed_point():
    sysm = saddle_map(c=0.05)
    x = np.zeros((3, 2))
    x[0] = [0.01, 0.02]
    xi = x @ SADDLE_SPLIT.pi_s(0).T
    sol = solve_foliation(sysm, SADDLE_SPLIT, x, xi, 0, 6, 0.8)
    assert sol.converged and np.all(sol.q == 0.0)


def test_foliation_batch_matches_single():
    sysm = saddle_map(c=0.05)
    rng = np.random.default_rng(4)
    xs = 0.02 * rng.standard_normal((5, 3, 2))
    xi = np.zeros((5, 3, 2))
    xi[:, 0, 0] = 0.01
    batch = solve_foliation(sysm, SADDLE_SPLIT, xs, xi, 0, 6, 0.8).q0
    for k in range(5):
        single = solve_foliation(sysm, SADDLE_SPLIT, xs[k], xi[k], 0, 6, 0.8).q0
        assert np.allclose(batch[k], single, atol=1e-15)
    assert seq_norms(batch, 0, SADDLE_SPLIT).shape == (5,)


def test_foliation_domain_check():
    sysm = saddle_map(c=0.05)
    x = np.full((2, 2), 0.5)
    with pytest.raises(DomainError):
        solve_foliation(sysm, SADDLE_SPLIT, x, np.zeros((2, 2)), 0, 4, 0.8, delta=0.1)


def linear_saddle_cc(**kw):
    fam = EvolutionFamily(LinearSystem.constant(np.diag([-1.0, 1.0])), step=1e-2)
    h = DiscreteConjugacy(fam.discretize((0, 60)), SADDLE_SPLIT)
    return ContinuousConjugacy(fam, h, **kw)


def test_continuous_identity_when_linear():
    cc = linear_saddle_cc()
    X = sample_ball(np.random.default_rng(5), 20, 2, 0.1)
    for t in (0.0, 0.4, 2.7):
        assert np.allclose(cc.H(t, X), X, atol=1e-12)
        assert np.allclose(cc.G(t, X), X, atol=1e-12)
    assert np.allclose(cc.averaged_H(X), X, atol=1e-12)
    assert np.allclose(cc.H(1.3, np.zeros(2)), 0.0)


def test_continuous_domain_error_and_override():
    cc = linear_saddle_cc(V_radius=lambda t: 0.01)
    with pytest.raises(DomainError):
        cc.H(0.5, np.array([0.1, 0.0]))
    cc.override = True
    assert np.allclose(cc.H(0.5, np.array([0.1, 0.0])), [0.1, 0.0])


def test_averaged_h_refuses_nonautonomous():
    fam = EvolutionFamily(LinearSystem(lambda t: [[-1.0 + 0.1 * math.sin(t)]], 1), step=1e-2)
    h = DiscreteConjugacy(fam.discretize((0, 60)), StableUnstableSplitting.trivial(1))
    with pytest.raises(ValueError):
        ContinuousConjugacy(fam, h).averaged_H(np.array([0.01]))


@pytest.fixture(scope="module")
def quadratic_cc():
    entry = catalog.build("scalar_quadratic")
    fam = EvolutionFamily(entry.system, entry.nonlinearity, step=1e-2)
    h = DiscreteConjugacy(fam.discretize((0, 60)), StableUnstableSplitting.trivial(1))
    return ContinuousConjugacy(fam, h)


def test_continuous_inverse_identities(quadratic_cc):
    cc = quadratic_cc
    X = sample_ball(np.random.default_rng(6), 100, 1, 1e-2)
    for t in (0.0, 1.5):
        assert np.max(np.abs(cc.H(t, cc.G(t, X)) - X)) <= 1e-9
        assert np.max(np.abs(cc.G(t, cc.H(t, X)) - X)) <= 1e-9


def test_many_evaluators_match_single(quadratic_cc):
    cc = quadratic_cc
    rng = np.random.default_rng(7)
    times = [0.2, 0.7, 1.4]
    Xs = [sample_ball(rng, 4, 1, 1e-2) for _ in times]
    for got, t, X in zip(cc.H_many(times, Xs), times, Xs):
        assert np.allclose(got, cc.H(t, X), atol=1e-15)
    for got, t, X in zip(cc.G_many(times, Xs), times, Xs):
        assert np.allclose(got, cc.G(t, X), atol=1e-14)


def test_averaged_equivariance_half(quadratic_cc):
    cc = quadratic_cc
    x = np.array([[1e-2], [-1e-2]])
    lhs = cc.averaged_H(x) @ cc.family.transition(0.0, 0.5).T
    rhs = cc.averaged_H(cc.family.flow(0.0, 0.5, x))
    assert np.max(np.abs(lhs - rhs)) <= 1e-4
    assert np.allclose(cc.averaged_H(np.zeros(1)), 0.0)
