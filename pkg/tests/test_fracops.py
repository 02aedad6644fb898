import numpy as np
import pytest
from scipy import special

from fracbismut.checks import (brownian_reduction_error, derivative_inverse_error,
                               isometry_errors, power_law_error, roundtrip_error, semigroup_error)
from fracbismut.errors import ConfigError, KernelValidationError
from fracbismut.fracops import (FractionalKernelSet, c_H, check_hurst, kernel_value,
                                rl_integral_left, rl_integral_right, weyl_derivative_left,
                                weyl_derivative_right, zahle_integral)
from fracbismut.gradient import weight_J_terms
from fracbismut.grid import TimeGrid

# c_H from the Beta-function closed form (mpmath, 20 digits)
C_H = {0.6: 0.10760051841318071863, 0.75: 0.26741115875799758103, 0.9: 0.32448825925734100591}
# K(t, s) = c_H s^{-a} int_s^t (u - s)^{a-1} u^a du by QUADPACK algebraic-weight quadrature
K_REF = {
    (0.6, 1.0, 0.3): 1.053813611074376, (0.6, 0.5, 0.1): 1.003460418452978,
    (0.75, 1.0, 0.3): 1.0617937845916283, (0.75, 0.5, 0.1): 0.9592897803328527,
    (0.9, 1.0, 0.3): 0.8470199654190674, (0.9, 0.5, 0.1): 0.7376656569153582,
}
# K^{-1} of h' = 1 is Gamma(1-a) t^{-a} / (Gamma(1-2a) c_H Gamma(a)), a = 1/4 (mpmath)
INV_CONST_075 = 0.71309642335466021607


@pytest.mark.parametrize("H", [0.6, 0.75, 0.9])
def test_c_H(H):
    assert c_H(H) == pytest.approx(C_H[H], rel=1e-12)


@pytest.mark.parametrize("key", sorted(K_REF))
def test_kernel_closed_form_matches_direct_integral(key):
    H, t, s = key
    assert kernel_value(t, s, H) == pytest.approx(K_REF[key], rel=1e-10)


def test_kernel_vanishes_above_diagonal():
    assert kernel_value(0.3, 0.5, 0.75) == 0.0


@pytest.mark.parametrize("H", [0.5, 0.4, 1.0, 1.2])
def test_hurst_range(H):
    with pytest.raises(ConfigError):
        check_hurst(H)


def test_hurst_half_in_diagnostic_mode():
    assert check_hurst(0.5, diagnostic=True) == 0.5


def test_power_law_is_exact():
    g = TimeGrid(1.0, 256)
    for alpha in (0.2, 0.5, 0.9):
        assert power_law_error(g, alpha) < 1e-12


def test_rl_integral_of_linear_function_is_exact():
    g = TimeGrid(1.0, 128)
    x = g.nodes
    for alpha in (0.3, 0.7):
        ref = x ** (1 + alpha) / special.gamma(2 + alpha)
        np.testing.assert_allclose(rl_integral_left(x, alpha, g), ref, atol=1e-13)


def test_weyl_derivative_of_linear_function():
    # D^a x = x^{1-a} / Gamma(2-a)
    g = TimeGrid(1.0, 1024)
    x = g.nodes
    for alpha in (0.2, 0.4):
        d = weyl_derivative_left(x, alpha, g)
        m = x >= 0.05
        np.testing.assert_allclose(d[m], x[m] ** (1 - alpha) / special.gamma(2 - alpha), rtol=2e-3)


def test_derivative_inverts_integral():
    g = TimeGrid(1.0, 1024)
    assert derivative_inverse_error(g, 0.4) < 1e-3


def test_small_alpha_derivative_is_near_identity():
    # the exact D^0.01 x deviates from x by ~2.8% at x = 0.1, so compare absolutely
    g = TimeGrid(1.0, 1024)
    x = g.nodes
    d = weyl_derivative_left(x, 0.01, g)
    m = x >= 0.1
    assert np.max(np.abs(d[m] - x[m])) <= 0.02 * np.max(np.abs(x))


@pytest.mark.parametrize("a,b", [(0.2, 0.3), (0.3, 0.5), (0.5, 0.2), (0.3, 0.3)])
def test_semigroup_for_functions_vanishing_at_zero(a, b):
    assert semigroup_error(TimeGrid(1.0, 1024), a, b) < 1e-6


def test_semigroup_with_jump_at_zero_converges():
    f = lambda x: np.ones_like(x)
    e = [semigroup_error(TimeGrid(1.0, n), 0.3, 0.7, f) for n in (256, 512, 1024)]
    assert e[2] < e[1] < e[0]
    assert e[2] < 1e-3


def test_right_operators_mirror_left():
    g = TimeGrid(1.0, 256)
    x = g.nodes
    f = np.cos(2 * x)
    np.testing.assert_allclose(rl_integral_right(f, 0.4, g),
                               rl_integral_left(f[::-1], 0.4, g)[::-1], atol=1e-14)
    np.testing.assert_allclose(weyl_derivative_right(f, 0.4, g),
                               weyl_derivative_left(f[::-1], 0.4, g)[::-1], atol=1e-12)


def test_zahle_pairing_matches_riemann_stieltjes():
    # int_0^1 sin(x) d(x^2) = 2 (sin 1 - cos 1)
    g = TimeGrid(1.0, 1024)
    x = g.nodes
    val = zahle_integral(np.sin(x), x ** 2, 0.3, g)
    assert val == pytest.approx(2 * (np.sin(1) - np.cos(1)), rel=1e-3)


@pytest.mark.parametrize("H", [0.6, 0.75, 0.9])
def test_roundtrip(kernels, H):
    e1 = roundtrip_error(kernels(1.0, 512, H))
    e2 = roundtrip_error(kernels(1.0, 1024, H))
    assert e2 < 1e-2
    assert e2 / e1 < 0.75


def test_inverse_of_constant_matches_closed_form(kernels):
    k = kernels(1.0, 1024, 0.75)
    x = k.grid.nodes
    u = k.apply_KH_inverse(np.ones_like(x))
    m = x >= 0.05
    np.testing.assert_allclose(u[m], INV_CONST_075 * x[m] ** -0.25, rtol=5e-3)


def test_inverse_of_constant_equals_J_split(kernels):
    # with eta = c and theta = 1 only J1 + J2 survive and reproduce K^{-1} c
    k = kernels(1.0, 256, 0.75)
    g = k.grid
    c = 1.7
    eta = np.full((1, g.n + 1, 1), c)
    theta = np.ones((g.n + 1, 1, 1))
    wb = weight_J_terms(eta, theta, g, 0.75)
    u = k.apply_KH_inverse(np.full(g.n + 1, c))
    np.testing.assert_allclose(wb.u[0, 1:, 0], u[1:], rtol=1e-8)
    assert np.max(np.abs(wb.J[2:])) < 1e-12


@pytest.mark.parametrize("H", [0.6, 0.75, 0.9])
def test_covariance_probes_and_isometry(kernels, H):
    k = kernels(1.0, 1024, H)
    assert max(k.probe_errors.values()) < 1e-2
    assert max(isometry_errors(k).values()) < 2e-2


def test_kernel_validation_fails_loudly_when_too_coarse():
    with pytest.raises(KernelValidationError):
        FractionalKernelSet(TimeGrid(1.0, 8), 0.9, tol=1e-4)


def test_brownian_reduction_is_exact():
    assert brownian_reduction_error(TimeGrid(1.0, 128)) < 1e-13


def test_KH_star_of_zero_is_zero(kernels):
    k = kernels(1.0, 256, 0.75)
    assert np.all(k.apply_KH_star(np.zeros(257)) == 0.0)
