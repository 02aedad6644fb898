import numpy as np
import pytest

from fracbismut.errors import ConfigError
from fracbismut.gradient import make_test_function
from fracbismut.grid import TimeGrid
from fracbismut.harnack import (HarnackConstants, check_harnack, check_log_harnack,
                                gradient_entropy_check, log_harnack_bound, phi_bound)
from fracbismut.model import kinetic_model

# hand evaluation at C=1, T=2, H=0.75, delta=rho=1, gamma=0.9, lambda=0.7, k0=1
CONST = dict(C=1.0, T=2.0, H=0.75, delta=1.0, gamma=0.9, rho=1.0, lam=0.7, k0=1, d1=1)
FROZEN = dict(a=24.05473736915437, a_tilde=47.704537915165794, b=3.4399028314727667,
              b_tilde=3.3869812494501086)


@pytest.fixture
def const():
    return HarnackConstants(**CONST)


def test_constants_frozen(const):
    for k, v in FROZEN.items():
        assert getattr(const, k) == pytest.approx(v, rel=1e-14)


def test_constants_positive_and_from_model():
    c = HarnackConstants.from_model(kinetic_model("sin_perturbed"), 1.0, 1.0, 0.75)
    assert c.k0 == 0 and c.lam == pytest.approx(0.7)
    assert min(c.a, c.a_tilde, c.b, c.b_tilde) > 0
    with pytest.raises(ConfigError):
        HarnackConstants(**{**CONST, "C": 0.0})


def test_phi_bound_properties(const):
    z = np.array([0.3, -0.2])
    assert phi_bound(z, z, 2.0, const) == 0.0
    d = np.array([0.01, 0.02])
    small, double = phi_bound(z, z + d, 2.0, const), phi_bound(z, z + 2 * d, 2.0, const)
    # quadratic regime while the boost saturates at 2
    assert double == pytest.approx(4 * small, rel=1e-12)
    vals = [phi_bound(z, z + d, p, const) for p in (2.0, 10.0, 100.0)]
    assert vals[0] > vals[1] > vals[2] > 0
    assert log_harnack_bound(z, z + d, 2.0, const) == pytest.approx(small / 2)


def test_phi_bound_refuses_gamma_one_and_small_p(const):
    with pytest.raises(ConfigError):
        phi_bound([0, 0], [1, 0], 2.0, HarnackConstants(**{**CONST, "gamma": 1.0}))
    with pytest.raises(ConfigError):
        phi_bound([0, 0], [1, 0], 1.0, const)


@pytest.fixture(scope="module")
def setup():
    return kinetic_model("sin_perturbed"), TimeGrid(1.0, 64)


def test_harnack_zero_shift_is_jensen_floor(setup):
    m, g = setup
    f = make_test_function("one_plus_tanh", 2)
    r = check_harnack(m, [0.0, 0.0], [0.0, 0.0], f, 2.0, g, 0.75, N=4000, seed=0)
    # p log E f - log E f^p <= 0 by Jensen, up to sampling noise
    assert r.phi_min < 4 * r.phi_min_stderr
    assert not r.inconclusive


def test_harnack_adverse_shift_grows(setup):
    m, g = setup
    f = make_test_function("one_plus_tanh", 2)
    phis = [check_harnack(m, [0.0, 0.0], [-r, 0.0], f, 2.0, g, 0.75, N=4000, seed=1).phi_min
            for r in (0.1, 0.4)]
    assert phis[1] > phis[0]


def test_harnack_with_constants_dominates(setup):
    m, g = setup
    f = make_test_function("one_plus_tanh", 2)
    c = HarnackConstants(**{**CONST, "T": 1.0, "d1": 1})
    r = check_harnack(m, [0.0, 0.0], [-0.2, 0.0], f, 2.0, g, 0.75, N=2000, seed=2, constants=c)
    assert r.dominated and r.phi_analytic > r.phi_min
    assert r.to_dict()["kind"] == "harnack"


def test_log_harnack_constant_function(setup):
    m, g = setup
    f = make_test_function("constant", 2, value=2.0)
    r = check_log_harnack(m, [0.0, 0.0], [0.5, 0.0], f, g, 0.75, N=500, seed=0)
    assert r.extras["gap"] == 0.0 and r.phi_min == pytest.approx(0.0, abs=1e-14)


def test_log_harnack_gap_vanishes(setup):
    m, g = setup
    f = make_test_function("one_plus_tanh", 2)
    r = check_log_harnack(m, [0.0, 0.0], [0.0, 0.0], f, g, 0.75, N=4000, seed=3)
    assert abs(r.extras["gap"]) < 4 * r.extras["gap_stderr"]
    assert r.extras["jensen_offset"] <= 0


def test_positivity_required(setup):
    m, g = setup
    with pytest.raises(ConfigError):
        check_harnack(m, [0, 0], [0, 0], make_test_function("tanh", 2), 2.0, g, 0.75, N=10)
    with pytest.raises(ConfigError):
        check_log_harnack(m, [0, 0], [0, 0], make_test_function("constant", 2, value=0.0), g,
                          0.75, N=10)


def test_gradient_entropy(setup):
    m, g = setup
    f = make_test_function("one_plus_tanh", 2)
    out = gradient_entropy_check(m, [0.0, 0.0], [1.0, 0.0], f, [0.5, 1.0, 2.0, 4.0], g, 0.75,
                                 N=3000, seed=4)
    rows = out["per_theta"]
    assert out["entropy"] >= 0
    qv = [r["qv_bracket"] for r in rows]
    assert max(qv) / min(qv) < 4
    for r in rows:
        # Young and quadratic-variation bounds dominate the measured left side
        assert r["lhs"] <= r["young_bound"] + 1e-12
    with pytest.raises(ConfigError):
        gradient_entropy_check(m, [0, 0], [1, 0], f, [0.0], g, 0.75, N=10)


def test_gradient_entropy_zero_direction(setup):
    m, g = setup
    f = make_test_function("one_plus_tanh", 2)
    out = gradient_entropy_check(m, [0.0, 0.0], [0.0, 0.0], f, [1.0], g, 0.75, N=500, seed=0)
    assert out["per_theta"][0]["lhs"] <= 0
