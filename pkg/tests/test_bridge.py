from fractions import Fraction

import numpy as np
import pytest

from fracbismut.bridge import (MODES, alpha_functions, build_bridge, gramian, kalman_rank,
                               matrix_exp, nilpotency_index)
from fracbismut.errors import ConfigError, DegeneracyError
from fracbismut.grid import TimeGrid
from fracbismut.model import DegenerateModel, LinearDrift, Sigma, kinetic_model, nilpotent_model

A_NIL = np.array([[0.0, 1.0], [0.0, 0.0]])
B_NIL = np.array([[0.0], [1.0]])


def test_nilpotency_and_rank():
    assert nilpotency_index(np.zeros((1, 1))) == 1
    assert nilpotency_index(A_NIL) == 2
    assert nilpotency_index(np.eye(2)) is None
    assert kalman_rank(np.zeros((1, 1)), np.ones((1, 1))) == 0
    assert kalman_rank(A_NIL, B_NIL) == 1
    assert kalman_rank(np.zeros((2, 2)), B_NIL) is None


def test_matrix_exp_nilpotent_series():
    E = matrix_exp(A_NIL, np.array([0.0, 0.5, 2.0]))
    np.testing.assert_allclose(E[2], [[1.0, 2.0], [0.0, 1.0]])
    np.testing.assert_allclose(matrix_exp(np.array([[0.3]]), 2.0), [[np.exp(0.6)]])


def _moment_solution(n0):
    # exact rational solution of sum c_i = 1, sum c_i/(i+k+1) = 0 (k < n0)
    m = n0 + 1
    M = [[Fraction(1)] * m] + [[Fraction(1, i + k + 1) for i in range(1, m + 1)] for k in range(n0)]
    b = [Fraction(1)] + [Fraction(0)] * n0
    for c in range(m):
        p = next(r for r in range(c, m) if M[r][c] != 0)
        M[c], M[p], b[c], b[p] = M[p], M[c], b[p], b[c]
        for r in range(m):
            if r != c and M[r][c] != 0:
                f = M[r][c] / M[c][c]
                M[r] = [x - f * y for x, y in zip(M[r], M[c])]
                b[r] -= f * b[c]
    return [float(b[i] / M[i][i]) for i in range(m)]


@pytest.mark.parametrize("n0,A,B", [(1, np.zeros((1, 1)), np.ones((1, 1))), (2, A_NIL, B_NIL)])
def test_alpha_coefficients(n0, A, B):
    g = TimeGrid(1.0, 64)
    af = alpha_functions(g, n0, A, B)
    np.testing.assert_allclose(af.coeffs, _moment_solution(n0), rtol=1e-10)
    assert af.system_used == "moment"
    assert af.a1(0.0) == pytest.approx(1.0) and af.a1(1.0) == pytest.approx(0.0)
    assert af.validation_residual < 1e-10


def test_alpha_kinetic_coefficients_frozen():
    af = alpha_functions(TimeGrid(1.0, 8), 1, np.zeros((1, 1)), np.ones((1, 1)))
    np.testing.assert_allclose(af.coeffs, [-2.0, 3.0], atol=1e-12)


def test_alpha_rejects_non_nilpotent():
    with pytest.raises(ConfigError):
        alpha_functions(TimeGrid(1.0, 8), 1, A_NIL, B_NIL)


def test_gramian_closed_forms():
    # a2 = s(1-s): kinetic U = 1/6, nilpotent U = [[B(2,4), B(2,3)], [B(2,3), 1/6]]
    g = TimeGrid(1.0, 2048)
    a2 = g.nodes * (1 - g.nodes)
    assert gramian(np.zeros((1, 1)), np.ones((1, 1)), a2, g).U[0, 0] == pytest.approx(1 / 6, abs=1e-6)
    U = gramian(A_NIL, B_NIL, a2, g).U
    np.testing.assert_allclose(U, [[1 / 20, 1 / 12], [1 / 12, 1 / 6]], atol=1e-6)


def test_gramian_singular():
    g = TimeGrid(1.0, 32)
    with pytest.raises(DegeneracyError):
        gramian(np.zeros((2, 2)), B_NIL, g.nodes * (1 - g.nodes), g)


@pytest.mark.parametrize("mode", MODES)
@pytest.mark.parametrize("model", [kinetic_model(), nilpotent_model()], ids=["kinetic", "nilpotent"])
def test_bridge_endpoints(mode, model):
    g = TimeGrid(1.0, 256)
    D = model.d1 + model.d2
    v = np.linspace(1.0, -0.5, D)
    br = build_bridge(model, v, g, mode)
    np.testing.assert_array_equal(br.gt[0], v[model.d1:])
    np.testing.assert_array_equal(br.gt[-1], 0.0)
    np.testing.assert_array_equal(br.g[0], v[:model.d1])
    assert br.certificate["g_T_residual"] <= 10 * g.dt * np.linalg.norm(v)
    assert br.certificate["gramian_eig_min"] > 0


def test_bridge_residual_shrinks_in_polynomial_mode():
    m = nilpotent_model()
    v = [1.0, 0.5, -1.0]
    r = [build_bridge(m, v, TimeGrid(1.0, n), "polynomial").certificate["g_T_residual"]
         for n in (256, 512)]
    assert r[1] <= 0.5 * r[0]


def test_bridge_gt_prime_matches_difference():
    g = TimeGrid(1.0, 1024)
    br = build_bridge(nilpotent_model(), [0.3, -0.2, 1.0], g)
    fd = np.gradient(br.gt[:, 0], g.dt, edge_order=2)
    np.testing.assert_allclose(br.gt_prime[1:-1, 0], fd[1:-1], atol=1e-4)


def test_bridge_is_linear_in_v():
    g = TimeGrid(1.0, 128)
    m = nilpotent_model()
    a = build_bridge(m, [1.0, 0.0, 0.0], g)
    b = build_bridge(m, [0.0, 2.0, 1.0], g)
    c = build_bridge(m, [1.0, 2.0, 1.0], g)
    np.testing.assert_allclose(c.gt, a.gt + b.gt, atol=1e-10)
    np.testing.assert_allclose(c.g, a.g + b.g, atol=1e-10)


def test_bridge_rejects_uncontrollable():
    m = DegenerateModel(np.zeros((2, 2)), B_NIL, LinearDrift(2, 1), Sigma(1, 1))
    with pytest.raises(DegeneracyError):
        build_bridge(m, [1.0, 0.0, 0.0], TimeGrid(1.0, 32))


def test_bridge_bad_direction():
    with pytest.raises(ConfigError):
        build_bridge(kinetic_model(), [1.0], TimeGrid(1.0, 32))
