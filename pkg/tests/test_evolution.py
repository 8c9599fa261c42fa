import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from smoothlin.errors import EscapeError, NumericalFailure
from smoothlin.evolution import (CutoffNonlinearity, EvolutionFamily, FlowBounds, LinearSystem,
                                 MapSystem, NonlinearTerm, bump, bump_derivative)


def logistic_family(step=1e-3):
    lin = LinearSystem.constant([[-1.0]])
    nl = NonlinearTerm(lambda t, x: x ** 2, 1, jac=lambda t, x: (2 * x)[:, :, None])
    return EvolutionFamily(lin, nl, step=step)


def test_transition_scalar_sine_closed_form():
    fam = EvolutionFamily(LinearSystem(lambda t: [[math.sin(t)]], 1), step=1e-3)
    assert np.isclose(fam.transition(0.0, math.pi)[0, 0], math.e ** 2, rtol=1e-10)


def test_transition_identity_and_constant_exponential():
    fam = EvolutionFamily(LinearSystem.constant(np.diag([-1.0, 1.0])), step=1e-2)
    assert np.allclose(fam.transition(0.3, 0.3), np.eye(2))
    assert np.allclose(fam.transition(0.0, 1.0), np.diag([math.exp(-1), math.e]), rtol=1e-9)
    assert np.allclose(fam.transition(1.0, 0.0), np.diag([math.e, math.exp(-1)]), rtol=1e-9)


def test_cocycle_identity_on_grid_triples():
    fam = EvolutionFamily(LinearSystem(lambda t: [[-1.0, math.sin(t)], [0.2, 0.5]], 2),
                          step=1e-3)
    for s, r, t in [(0.0, 0.7, 2.0), (-1.0, 0.5, 1.25), (2.0, 0.0, -1.5)]:
        T = fam.transition(s, t)
        err = np.linalg.norm(T - fam.transition(r, t) @ fam.transition(s, r))
        assert err <= 10 * fam.tol * (1 + np.linalg.norm(T)) + 1e-12


def test_flow_matches_transition_when_linear():
    A = np.array([[-1.0, 2.0], [0.0, 0.5]])
    fam = EvolutionFamily(LinearSystem.constant(A), step=1e-3)
    X = np.array([[0.3, -0.2], [1.0, 1.0]])
    assert np.allclose(fam.flow(0.0, 1.3, X), X @ fam.transition(0.0, 1.3).T, atol=1e-12)
    assert np.array_equal(fam.flow(0.4, 0.4, X), X)


def test_flow_logistic_against_fine_reference():
    fam = logistic_family(step=1e-3)
    ref = logistic_family(step=1e-3 / 16)
    x = fam.flow(0.0, 1.0, np.array([0.1]))
    # closed form of x' = -x + x^2
    exact = 1.0 / (1.0 + (1.0 / 0.1 - 1.0) * math.e)
    assert abs(x[0] - ref.flow(0.0, 1.0, np.array([0.1]))[0]) / abs(x[0]) < 1e-8
    assert np.isclose(x[0], exact, rtol=1e-10)


def test_flow_group_property():
    fam = logistic_family(step=1e-2)
    x = np.array([[0.2], [-0.1]])
    a = fam.flow(0.0, 2.0, x)
    b = fam.flow(0.8, 2.0, fam.flow(0.0, 0.8, x))
    assert np.allclose(a, b, atol=1e-10)


def test_variational_flow_matches_finite_differences():
    fam = logistic_family(step=1e-3)
    J = fam.variational_flow(0.0, 1.0, np.array([0.1]))
    h = 1e-5
    fd = (fam.flow(0.0, 1.0, np.array([0.1 + h])) - fam.flow(0.0, 1.0, np.array([0.1 - h]))) / (2 * h)
    assert abs(J[0, 0] - fd[0]) / abs(fd[0]) < 1e-4
    assert np.allclose(fam.variational_flow(0.5, 0.5, np.array([0.1])), np.eye(1))


def test_variational_flow_linear_equals_transition():
    fam = EvolutionFamily(LinearSystem.constant([[-1.0, 1.0], [0.0, -1.0]]), step=1e-2)
    assert np.allclose(fam.variational_flow(0.0, 1.5, np.array([0.3, 0.1])),
                       fam.transition(0.0, 1.5), atol=1e-12)


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_escape_is_reported_with_partial_result():
    lin = LinearSystem.constant([[1.0]])
    nl = NonlinearTerm(lambda t, x: x ** 2, 1)
    fam = EvolutionFamily(lin, nl, step=1e-2, escape_radius=10.0)
    with pytest.raises(EscapeError) as info:
        fam.flow(0.0, 3.0, np.array([[0.01], [2.0]]))
    assert list(info.value.mask) == [False, True]


def test_horizon_is_enforced():
    fam = EvolutionFamily(LinearSystem.constant([[1.0]], horizon=(0.0, 5.0)), step=1e-2)
    with pytest.raises(NumericalFailure):
        fam.transition(0.0, 6.0)


def test_discretize_autonomous_linear():
    fam = EvolutionFamily(LinearSystem.constant(np.diag([-1.0, 1.0])), step=1e-2)
    disc = fam.discretize((0, 10))
    for n in (0, 3, 9):
        assert np.allclose(disc.A(n), np.diag([math.exp(-1), math.e]), rtol=1e-9)
        assert np.allclose(disc.f(n, np.array([[0.2, 0.1]])), 0.0)


def test_discretize_zero_solution_and_consistency():
    lin = LinearSystem.constant([[-1.0]])
    nl = CutoffNonlinearity(lambda X: X ** 2, lambda X: (2 * X)[:, :, None], 1, 0.5)
    fam = EvolutionFamily(lin, nl, step=1e-2)
    disc = fam.discretize((0, 10))
    assert np.all(np.abs(disc.f(2, np.zeros((1, 1)))) <= 10 * fam.tol)
    X = np.array([[0.05], [-0.3]])
    assert np.allclose(disc.f(2, X) + X @ disc.A(2).T, fam.flow(2, 3, X), atol=1e-15)


def test_discretized_derivative_below_flow_bound():
    lin = LinearSystem.constant([[-1.0]])
    eta0 = 0.01
    nl = CutoffNonlinearity(lambda X: eta0 / 4 * X ** 2,
                            lambda X: (eta0 / 2 * X)[:, :, None], 1, 1.0)
    fam = EvolutionFamily(lin, nl, step=1e-2)
    X = np.linspace(-1.9, 1.9, 41)[:, None]
    Dfn = fam.variational_flow(0.0, 1.0, X)[:, 0, 0] - fam.transition(0.0, 1.0)[0, 0]
    sup_df = float(np.max(np.abs(nl.jac(0.0, X))))
    bounds = FlowBounds(1.0, 1.0, 0.0, max(sup_df, 1e-12), 1.0)
    assert np.max(np.abs(Dfn)) <= bounds.eta_tilde


def test_flow_bounds_hand_arithmetic():
    b = FlowBounds(M=1.0, lambda_bar=1.0, eps=0.0, eta=0.01, B=0.0)
    assert np.isclose(b.M_tilde, math.exp(1 + math.e))
    assert np.isclose(b.M_tilde, 41.19, atol=0.01)
    assert np.isclose(b.eta_tilde, math.exp(1 + math.e) * 0.01 * math.e ** 2)
    assert np.isclose(b.eta_tilde, 3.044, atol=1e-3)
    assert b.B_tilde == 0.0
    assert FlowBounds(1.0, 1.0, 0.0, 0.0, 0.0).eta_tilde == 0.0


def test_bump_profile():
    u = np.array([0.0, 0.5, 1.0, 1.5, 2.0, 3.0])
    b = bump(u)
    assert np.allclose(b[:3], 1.0) and np.allclose(b[4:], 0.0)
    assert 0.0 < b[3] < 1.0
    assert np.all(bump_derivative(u) <= 0)
    h = 1e-6
    fd = (bump(np.array([1.5 + h])) - bump(np.array([1.5 - h]))) / (2 * h)
    assert np.isclose(bump_derivative(np.array([1.5]))[0], fd[0], rtol=1e-5)


def test_map_system_inverse_step():
    sysm = MapSystem(np.array([[0.5]]), f=lambda n, X: X ** 2)
    X = np.array([[0.1], [-0.05]])
    Y = sysm.step(0, X)
    assert np.allclose(sysm.inverse_step(0, Y), X, atol=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.3, 0.3), st.floats(0.0, 2.0), st.floats(0.0, 2.0))
def test_property_flow_group_random(x0, r, t):
    fam = logistic_family(step=1e-2)
    x = np.array([x0])
    a = fam.flow(0.0, t, x)
    b = fam.flow(r, t, fam.flow(0.0, r, x))
    assert np.allclose(a, b, atol=1e-9)
