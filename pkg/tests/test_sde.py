import numpy as np
import pytest

from fracbismut.bridge import build_bridge
from fracbismut.errors import ConfigError, DivergenceError
from fracbismut.fbm import sample_fbm_batch, sample_noise_pair
from fracbismut.grid import SeedSpec, TimeGrid
from fracbismut.model import DegenerateModel, LinearDrift, Sigma, kinetic_model, nilpotent_model
from fracbismut.sde import (coupled_batch, coupling_residual, euler_batch, euler_solve,
                            solve_coupled, variational_batch)


def _noise(kernels, H, n, N, d=1, seed=0):
    k = kernels(1.0, n, H)
    _, BH = sample_fbm_batch(k, d, SeedSpec(seed), range(N))
    return k, np.diff(BH, axis=-2)


def test_zero_noise_matches_euler_recursion():
    g = TimeGrid(1.0, 64)
    Z = euler_batch(kinetic_model(), [0.0, 1.0], np.zeros((64, 1)), g)
    np.testing.assert_allclose(Z[:, 1], (1 - g.dt) ** np.arange(65))


def test_mean_of_linear_model(kernels):
    # E Y_T = (1 - dt)^n y0 exactly for the Euler scheme
    k, dB = _noise(kernels, 0.75, 128, 4000)
    Z = euler_batch(kinetic_model(), [0.0, 1.0], dB, k.grid)
    y = Z[:, -1, 1]
    assert abs(y.mean() - (1 - k.grid.dt) ** 128) < 4 * y.std(ddof=1) / np.sqrt(y.size)


def test_weak_bias_halves():
    # bias of (1 - dt)^n against e^{-1} halves with dt
    b = [abs((1 - 1 / n) ** n - np.exp(-1)) for n in (128, 256, 512)]
    assert 0.375 < b[1] / b[0] < 0.625 and 0.375 < b[2] / b[1] < 0.625


def test_determinism(kernels):
    k = kernels(1.0, 64, 0.75)
    m = kinetic_model("sin_perturbed")
    a = euler_solve(m, [0.1, 0.2], sample_noise_pair(k, 1, SeedSpec(4), 9), k.grid)
    b = euler_solve(m, [0.1, 0.2], sample_noise_pair(k, 1, SeedSpec(4), 9), k.grid)
    np.testing.assert_array_equal(a.Z.values, b.Z.values)


def test_divergence_guard():
    m = DegenerateModel(np.zeros((1, 1)), np.ones((1, 1)), LinearDrift(1, 1, Gy=[[1e4]]),
                        Sigma(1, 1))
    with pytest.raises(DivergenceError) as e:
        euler_batch(m, [0.0, 1.0], np.zeros((64, 1)), TimeGrid(1.0, 64))
    assert e.value.step is not None and e.value.step < 64


def test_shape_checks():
    with pytest.raises(ConfigError):
        euler_batch(kinetic_model(), [0.0, 1.0, 2.0], np.zeros((8, 1)), TimeGrid(1.0, 8))
    with pytest.raises(ConfigError):
        euler_batch(kinetic_model(), [0.0, 1.0], np.zeros((7, 1)), TimeGrid(1.0, 8))


@pytest.mark.parametrize("model", [kinetic_model("sin_perturbed"), nilpotent_model()],
                         ids=["kinetic_sin", "nilpotent"])
def test_coupling_identity(kernels, model):
    k = kernels(1.0, 256, 0.75)
    g = k.grid
    D = model.d1 + model.d2
    zt = np.linspace(1.0, -1.0, D)
    br = build_bridge(model, zt, g)
    _, dB = _noise(kernels, 0.75, 256, 50, model.d, seed=1)
    Z = euler_batch(model, np.zeros(D), dB, g)
    eps = 0.05
    Ze = coupled_batch(model, Z, zt, eps, br, dB, g)
    res = coupling_residual(Z, Ze, eps, br, model.d1)
    assert res.max() <= 5 * g.dt * eps * (1 + np.linalg.norm(zt))
    # the Y difference is exact, the X difference carries the Euler error
    np.testing.assert_allclose(Ze[..., model.d1:] - Z[..., model.d1:], np.broadcast_to(eps * br.gt, Z[..., model.d1:].shape),
                               atol=1e-13)
    np.testing.assert_allclose(Ze[:, -1], Z[:, -1], atol=5 * g.dt * eps)


def test_solve_coupled_checks_direction(kernels):
    k = kernels(1.0, 64, 0.75)
    br = build_bridge(kinetic_model(), [1.0, 0.0], k.grid)
    noise = sample_noise_pair(k, 1, SeedSpec(0), 0)
    with pytest.raises(ConfigError):
        solve_coupled(kinetic_model(), [0, 0], [0.0, 1.0], 0.1, br, noise, k.grid)
    orig, coup = solve_coupled(kinetic_model(), [0, 0], [1.0, 0.0], 0.1, br, noise, k.grid)
    assert coup.z0[0] == pytest.approx(0.1)


def test_variational_linear_in_v(kernels):
    k, dB = _noise(kernels, 0.75, 128, 20, seed=2)
    m = kinetic_model("tanh_saturated")
    Z = euler_batch(m, [0.3, -0.1], dB, k.grid)
    a = variational_batch(m, Z, [1.0, 0.0], k.grid)
    b = variational_batch(m, Z, [0.0, 1.0], k.grid)
    c = variational_batch(m, Z, [2.0, -3.0], k.grid)
    np.testing.assert_allclose(c, 2 * a - 3 * b, atol=1e-10)


def test_variational_matches_finite_difference(kernels):
    k, dB = _noise(kernels, 0.75, 128, 10, seed=3)
    m = kinetic_model("sin_perturbed")
    z, v, e = np.array([0.2, 0.1]), np.array([0.6, 0.8]), 1e-6
    J = variational_batch(m, euler_batch(m, z, dB, k.grid), v, k.grid)
    fd = (euler_batch(m, z + e * v, dB, k.grid) - euler_batch(m, z - e * v, dB, k.grid)) / (2 * e)
    np.testing.assert_allclose(J, fd, atol=1e-7)
