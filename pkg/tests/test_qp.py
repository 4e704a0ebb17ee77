import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import minimize

from conftest import random_b, random_spd
from vecsojourn.errors import AllNonpositive, NotSPD
from vecsojourn.qp import brute_force_pi, kkt_residuals, min_ratio_dual, solve_pi


def test_identity_both_active():
    sol = solve_pi(np.eye(2), [1, 1])
    assert sol.index_I == (0, 1)
    np.testing.assert_allclose(sol.b_tilde, [1, 1])
    np.testing.assert_allclose(sol.aleph, [1, 1])
    assert sol.tau == pytest.approx(2.0)
    assert sol.savage


def test_rho_half():
    sol = solve_pi([[1, 0.5], [0.5, 1]], [1, 1])
    assert sol.index_I == (0, 1)
    np.testing.assert_allclose(sol.aleph, [2 / 3, 2 / 3])
    assert sol.tau == pytest.approx(4 / 3)


def test_strong_correlation_drops_second_index():
    S = [[1, 0.9], [0.9, 1]]
    sol = solve_pi(S, [1, 0.5])
    assert sol.index_I == (0,)
    assert sol.index_J == (1,)
    np.testing.assert_allclose(sol.b_tilde, [1, 0.9])
    np.testing.assert_allclose(sol.aleph, [1, 0])
    assert sol.tau == pytest.approx(1.0)
    assert not sol.savage
    bf = brute_force_pi(S, [1, 0.5])
    assert bf.index_I == sol.index_I


def test_identity_three_with_negative_entry():
    sol = brute_force_pi(np.eye(3), [1, -1, 2])
    assert sol.index_I == (0, 2)
    assert sol.tau == pytest.approx(5.0)
    np.testing.assert_allclose(sol.b_tilde, [1, 0, 2])


@pytest.mark.parametrize("S,b,expected", [
    (np.eye(2), [1, 1], 0.5),
    ([[1, 0.5], [0.5, 1]], [1, 1], 0.75),
    ([[1, 0.9], [0.9, 1]], [1, 0.5], 1.0),
])
def test_min_ratio_examples(S, b, expected):
    assert min_ratio_dual(S, b) == pytest.approx(expected, rel=1e-12)


def test_min_ratio_against_direct_minimisation():
    # convex dual form: min z^T Sigma z over z >= 0 with z^T b = 1
    gen = np.random.default_rng(3)
    for _ in range(30):
        d = int(gen.integers(2, 6))
        S = random_spd(gen, d)
        b = random_b(gen, d)
        j = int(np.argmax(b))
        z0 = np.zeros(d)
        z0[j] = 1 / b[j]
        res = minimize(lambda z: z @ S @ z, z0, jac=lambda z: 2 * S @ z, method="SLSQP",
                       bounds=[(0, None)] * d, constraints=[{"type": "eq", "fun": lambda z: z @ b - 1}],
                       options={"ftol": 1e-13, "maxiter": 1000})
        assert min_ratio_dual(S, b) == pytest.approx(res.fun, rel=1e-6)


def test_qp_value_matches_constrained_minimum():
    # x^T Sigma^{-1} x at the projection b_tilde equals tau, and no feasible point beats it
    gen = np.random.default_rng(5)
    S = random_spd(gen, 3)
    b = random_b(gen, 3)
    sol = solve_pi(S, b)
    prec = np.linalg.inv(S)
    assert sol.b_tilde @ prec @ sol.b_tilde == pytest.approx(sol.tau, rel=1e-10)
    for _ in range(2000):
        x = b + np.abs(gen.standard_normal(3)) * gen.uniform(0, 3)
        assert x @ prec @ x >= sol.tau * (1 - 1e-12)


def test_errors():
    with pytest.raises(NotSPD):
        solve_pi([[1, 2], [2, 1]], [1, 1])
    with pytest.raises(NotSPD):
        solve_pi([[1, 0.1], [0.2, 1]], [1, 1])
    with pytest.raises(AllNonpositive):
        solve_pi(np.eye(2), [-1, 0])


def test_methods_agree():
    gen = np.random.default_rng(11)
    for _ in range(200):
        d = int(gen.integers(2, 8))
        S = random_spd(gen, d)
        b = random_b(gen, d)
        a = solve_pi(S, b, method="enumerate")
        c = solve_pi(S, b, method="active_set")
        assert a.index_I == c.index_I
        assert a.tau == pytest.approx(c.tau, rel=1e-9)


@st.composite
def instances(draw):
    d = draw(st.integers(2, 6))
    seed = draw(st.integers(0, 2**32 - 1))
    gen = np.random.default_rng(seed)
    return random_spd(gen, d), random_b(gen, d)


@given(instances())
def test_invariants(inst):
    S, b = inst
    sol = solve_pi(S, b)
    d = b.size
    I, J = list(sol.index_I), list(sol.index_J)
    assert I and sorted(I + J) == list(range(d))
    assert np.all(sol.aleph[I] > 0)
    assert np.all(sol.aleph[J] == 0)
    np.testing.assert_array_equal(sol.b_tilde[I], b[I])
    assert np.all(sol.b_tilde[J] >= b[J] - 1e-10 * max(1, np.abs(b).max()))
    if J:
        bt = S[np.ix_(J, I)] @ np.linalg.solve(S[np.ix_(I, I)], b[I])
        np.testing.assert_allclose(sol.b_tilde[J], bt, rtol=1e-9, atol=1e-12)
    assert sol.tau == pytest.approx(b[I] @ np.linalg.solve(S[np.ix_(I, I)], b[I]), rel=1e-10)
    assert sol.tau == pytest.approx(sol.aleph @ sol.b_tilde, rel=1e-10)
    res = kkt_residuals(S, b, sol)
    assert res["complementarity"] <= 1e-10


@given(instances(), st.floats(0.01, 100))
def test_scaling_homogeneity(inst, c):
    S, b = inst
    a = solve_pi(S, b)
    s = solve_pi(S, c * b)
    assert s.index_I == a.index_I
    assert s.tau == pytest.approx(c * c * a.tau, rel=1e-9)


def test_brute_force_checks_every_subset():
    # the returned set is the unique feasible one among all 2^d - 1 candidates
    gen = np.random.default_rng(17)
    S = random_spd(gen, 4)
    b = random_b(gen, 4)
    sol = brute_force_pi(S, b)
    feasible = []
    for r in range(1, 5):
        for I in itertools.combinations(range(4), r):
            I = list(I)
            a = np.linalg.solve(S[np.ix_(I, I)], b[I])
            J = [j for j in range(4) if j not in I]
            bt = S[np.ix_(J, I)] @ a
            if np.all(a > 0) and np.all(bt >= b[J] - 1e-10):
                feasible.append(tuple(I))
    assert sol.index_I in feasible
